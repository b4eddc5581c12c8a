from __future__ import annotations

from datetime import datetime

from sqlalchemy.orm import DeclarativeBase, Mapped, mapped_column, relationship
from sqlalchemy import (
    String, Integer, Float, Text,
    DateTime, ForeignKey, func, Index
)

class Base(DeclarativeBase):
    pass

class EstimationRun(Base):
    """
    One CLI invocation (estimate or fragility). Level traces hang off the run,
    one row per level per replication.
    """
    __tablename__ = "estimation_run"
    __table_args__ = (Index("ix_estimation_run_hash", "config_hash"),)

    id: Mapped[int] = mapped_column(Integer, primary_key=True)
    command: Mapped[str] = mapped_column(String(30), nullable=False)  # estimate|fragility
    method: Mapped[str] = mapped_column(String(10), nullable=False)  # ss|sis|ais|is1|is2|dmc
    problem: Mapped[str] = mapped_column(String(200), nullable=False)
    seed: Mapped[int] = mapped_column(Integer, nullable=False)
    config_hash: Mapped[str] = mapped_column(String(64), nullable=False)
    reps: Mapped[int] = mapped_column(Integer, nullable=False, default=1)

    calls: Mapped[int] = mapped_column(Integer, nullable=False, default=0)
    wall_time_s: Mapped[float | None] = mapped_column(Float, nullable=True)
    estimate: Mapped[float | None] = mapped_column(Float, nullable=True)
    cov: Mapped[float | None] = mapped_column(Float, nullable=True)
    status: Mapped[str] = mapped_column(String(30), nullable=False, default="ok")  # ok|config_error|numerical_error
    error: Mapped[str | None] = mapped_column(Text, nullable=True)
    config_json: Mapped[str] = mapped_column(Text, nullable=False)
    created_at: Mapped[datetime] = mapped_column(DateTime(timezone=True), server_default=func.now(), nullable=False)

    levels: Mapped[list["LevelTrace"]] = relationship(back_populates="run", cascade="all, delete-orphan")

class LevelTrace(Base):
    __tablename__ = "level_trace"
    __table_args__ = (Index("ix_level_trace_run_rep", "run_id", "replication"),)

    id: Mapped[int] = mapped_column(Integer, primary_key=True)
    run_id: Mapped[int] = mapped_column(ForeignKey("estimation_run.id", ondelete="CASCADE"), nullable=False)
    replication: Mapped[int] = mapped_column(Integer, nullable=False, default=0)
    level: Mapped[int] = mapped_column(Integer, nullable=False)

    threshold: Mapped[float | None] = mapped_column(Float, nullable=True)
    smoothing: Mapped[float | None] = mapped_column(Float, nullable=True)
    pdf_scale: Mapped[float | None] = mapped_column(Float, nullable=True)
    lsf_scale: Mapped[float | None] = mapped_column(Float, nullable=True)
    probability: Mapped[float] = mapped_column(Float, nullable=False)
    ratio: Mapped[float] = mapped_column(Float, nullable=False)
    calls: Mapped[int] = mapped_column(Integer, nullable=False, default=0)

    run: Mapped["EstimationRun"] = relationship(back_populates="levels")
