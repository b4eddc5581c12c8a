"""
Benchmark suites run by `bench`.

table1   - parabolic limit state, d in {5, 7, 9}, annealed IS and subset
           simulation against published reference values.
analytic - linear halfspace, beta in {2, 3, 4}, every estimator against Phi(-beta).
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

from app.config import RunConfig
from app.coremath import RandomStream
from app.errors import ConfigurationError
from app.logger import get_logger
from app.oracle import linear_halfspace
from app.problems import parse_problem
from app.ris import EstimateStats, replicate_and_cov
from app.strategies import run_method

log = get_logger(__name__)


@dataclass(frozen=True)
class Table1Case:
    dimension: int
    reference: float
    tolerance: float
    # method -> (mean calls, estimate, CoV) as published
    published: dict[str, tuple[float, float, float]]


TABLE1_CASES = (
    Table1Case(5, 3.02e-3, 0.10, {"ais": (2800, 3.00e-3, 0.1438), "ss": (2800, 3.05e-3, 0.2301)}),
    Table1Case(7, 3.46e-4, 0.12, {"ais": (2800, 3.48e-4, 0.1715), "ss": (3700, 3.45e-4, 0.2848)}),
    Table1Case(9, 4.20e-5, 0.15, {"ais": (2800, 4.20e-5, 0.1740), "ss": (4600, 4.21e-5, 0.3488)}),
)
TABLE1_METHODS = ("ais", "ss")
TABLE1_REPS = 100

ANALYTIC_BETAS = (2.0, 3.0, 4.0)
ANALYTIC_CASES = (("ss", 2), ("sis", 2), ("ais", 2), ("is2", 1000))
ANALYTIC_REPS = 50

# within this factor of the published CoV and call count
SPREAD_FACTOR = 2.0
STANDARD_ERRORS = 3.0

CSV_FIELDS = (
    "suite", "case", "method", "reference", "estimate", "rel_error", "tolerance",
    "cov", "cov_reference", "mean_calls", "calls_reference", "passed",
)


@dataclass
class BenchRow:
    suite: str
    case: str
    method: str
    reference: float
    estimate: float
    rel_error: float
    tolerance: float
    cov: float
    cov_reference: float | None
    mean_calls: float
    calls_reference: float | None
    passed: bool


def _replicate(config: RunConfig, reps: int, jobs: int) -> EstimateStats:
    def runner(rng: RandomStream):
        return run_method(parse_problem(config.problem), config, rng)

    return replicate_and_cov(runner, reps, config.seed, jobs)


def table1(reps: int = TABLE1_REPS, seed: int = 7, jobs: int = 1) -> list[BenchRow]:
    rows = []
    for case in TABLE1_CASES:
        for method in TABLE1_METHODS:
            config = RunConfig(problem=f"parabolic:d={case.dimension}", method=method, seed=seed, reps=reps)
            stats = _replicate(config, reps, jobs)
            calls_ref, _, cov_ref = case.published[method]
            rel = abs(stats.mean - case.reference) / case.reference
            passed = (
                rel <= case.tolerance
                and cov_ref / SPREAD_FACTOR <= stats.cov <= cov_ref * SPREAD_FACTOR
                and calls_ref / SPREAD_FACTOR <= stats.mean_calls <= calls_ref * SPREAD_FACTOR
            )
            rows.append(BenchRow("table1", f"parabolic d={case.dimension}", method, case.reference, stats.mean,
                                 rel, case.tolerance, stats.cov, cov_ref, stats.mean_calls, calls_ref, passed))
            log.info("bench row", extra=asdict(rows[-1]))
    return rows


def analytic(reps: int = ANALYTIC_REPS, seed: int = 7, jobs: int = 1) -> list[BenchRow]:
    rows = []
    for beta in ANALYTIC_BETAS:
        reference = linear_halfspace(beta)
        for method, n in ANALYTIC_CASES:
            config = RunConfig(problem=f"linear:beta={beta:g},n={n}", method=method, seed=seed, reps=reps)
            stats = _replicate(config, reps, jobs)
            standard_error = stats.cov * stats.mean / math.sqrt(reps) if math.isfinite(stats.cov) else math.inf
            tolerance = STANDARD_ERRORS * standard_error / reference
            rel = abs(stats.mean - reference) / reference
            rows.append(BenchRow("analytic", f"linear beta={beta:g} n={n}", method, reference, stats.mean,
                                 rel, tolerance, stats.cov, None, stats.mean_calls, None, rel <= tolerance))
            log.info("bench row", extra=asdict(rows[-1]))
    return rows


SUITES = {"table1": table1, "analytic": analytic}


def run_suite(name: str, reps: int | None = None, seed: int = 7, jobs: int = 1) -> list[BenchRow]:
    try:
        suite = SUITES[name]
    except KeyError:
        raise ConfigurationError(f"unknown suite {name!r}; known: {sorted(SUITES)}") from None
    return suite(seed=seed, jobs=jobs) if reps is None else suite(reps=reps, seed=seed, jobs=jobs)


def write_rows(rows: Iterable[BenchRow], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        for row in rows:
            d = asdict(row)
            d["passed"] = "pass" if row.passed else "fail"
            w.writerow({k: ("" if v is None else v) for k, v in d.items()})
    return path
