# app/worker.py
from __future__ import annotations

import asyncio
import json
from typing import Any, Callable, Sequence, TypeVar

from sqlalchemy.orm import Session

from app.logger import get_logger
from app.models import EstimationRun, LevelTrace

log = get_logger(__name__)

T = TypeVar("T")


async def _gather(funcs: Sequence[Callable[[], T]], jobs: int) -> list[T]:
    sem = asyncio.Semaphore(jobs)

    async def run_one(index: int, func: Callable[[], T]) -> T:
        async with sem:
            try:
                return await asyncio.to_thread(func)
            except Exception as e:
                log.warning(
                    "work item failed",
                    extra={"item": index, "error": str(e), "error_type": type(e).__name__},
                )
                raise

    return list(await asyncio.gather(*(run_one(i, f) for i, f in enumerate(funcs))))


def gather_in_threads(funcs: Sequence[Callable[[], T]], jobs: int = 1) -> list[T]:
    """
    Run independent work items on up to `jobs` threads; results come back in
    submission order so reductions over them are deterministic. With one job
    (or one item) the items run inline.
    """
    if jobs <= 1 or len(funcs) <= 1:
        return [f() for f in funcs]
    return asyncio.run(_gather(funcs, jobs))


def persist_run(
    db: Session,
    document: dict[str, Any],
    wall_time_s: float | None,
    status: str = "ok",
    error: str | None = None,
) -> int:
    """
    Insert the run row and its level traces.
    Returns the new run id.
    """
    run = EstimationRun(
        command=document["command"],
        method=document["method"],
        problem=document["problem"],
        seed=int(document["seed"]),
        config_hash=document["config_hash"],
        reps=int(document.get("reps", 1)),
        calls=int(document.get("calls", 0)),
        wall_time_s=wall_time_s,
        estimate=document.get("estimate"),
        cov=document.get("cov"),
        status=status,
        error=error,
        config_json=json.dumps(document.get("config", {}), sort_keys=True),
    )
    for rep, replication in enumerate(document.get("replications", [])):
        for lv in replication.get("levels", []):
            run.levels.append(
                LevelTrace(
                    replication=rep,
                    level=int(lv["level"]),
                    threshold=lv.get("threshold"),
                    smoothing=lv.get("smoothing"),
                    pdf_scale=lv.get("pdf_scale"),
                    lsf_scale=lv.get("lsf_scale"),
                    probability=float(lv["probability"]),
                    ratio=float(lv["ratio"]),
                    calls=int(lv.get("calls", 0)),
                )
            )
    db.add(run)
    db.commit()
    log.info("run recorded", extra={"run_id": run.id, "levels": len(run.levels), "status": status})
    return int(run.id)
