from contextlib import contextmanager
from typing import Iterator

from sqlalchemy import create_engine
from sqlalchemy.orm import Session, sessionmaker

from app.logger import get_logger
from app.models import Base
from app.settings import DATABASE_URL

log = get_logger(__name__)

engine = create_engine(
    DATABASE_URL,
    pool_pre_ping=True,
)

SessionLocal = sessionmaker(bind=engine, autoflush=False, autocommit=False)


def init_db() -> None:
    # create ledger tables if not exist
    Base.metadata.create_all(bind=engine)
    log.debug("run ledger initialized", extra={"database_url": engine.url.render_as_string(hide_password=True)})


@contextmanager
def ledger_session() -> Iterator[Session]:
    """Session on the run ledger; tables are created on first use."""
    init_db()
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()
