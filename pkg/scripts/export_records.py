#!/usr/bin/env python3
"""
Write the bundled synthetic ground motion records to disk.

Usage (from repo root):
  python scripts/export_records.py --out records --pga 0.05
  RECORDS_DIR=records python -m app estimate --problem seismic2d --method ss

Files are record_1.txt / record_2.txt: two columns, time [s] and
acceleration [m/s^2], the format app.dynamics.load_record reads.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

# Run from repo root so app is importable
_repo_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, _repo_root)

from app.dynamics import DEFAULT_DT, G, _SYNTHETIC_SEEDS, synthetic_record  # noqa: E402
from app.logger import configure_root_logging, get_logger  # noqa: E402

log = get_logger("export_records")


def export(out_dir: Path, pga_g: float, dt: float = DEFAULT_DT) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, seed in enumerate(_SYNTHETIC_SEEDS, start=1):
        accel = synthetic_record(seed, pga_g * G, dt)
        t = np.arange(len(accel)) * dt
        path = out_dir / f"record_{k}.txt"
        np.savetxt(path, np.column_stack([t, accel]), fmt="%.10g", header="t_s accel_m_s2")
        paths.append(path)
        log.info("record written", extra={"path": str(path), "steps": len(accel), "pga_g": pga_g})
    return paths


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    parser.add_argument("--out", default="records")
    parser.add_argument("--pga", type=float, default=0.05, help="peak ground acceleration in g")
    args = parser.parse_args()
    configure_root_logging()
    for p in export(Path(args.out), args.pga):
        print(p)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
