"""
Run configuration schema.

A run is described by one JSON document validated into RunConfig. Unknown keys
are rejected so typos in a config file fail loudly instead of silently using a
default. CLI flags are applied on top of the parsed document (see app.cli).
"""
from __future__ import annotations

import hashlib
import json
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.settings import DEFAULT_JOBS, DEFAULT_SEED

Method = Literal["ss", "sis", "ais", "is1", "is2", "dmc"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class KernelConfig(_Strict):
    step_size: float = Field(0.5, gt=0)
    leapfrog_steps: int = Field(10, ge=1)
    target_accept: float = Field(0.7, gt=0, lt=1)
    burn_in: int = Field(10, ge=0)
    pilot_chains: int = Field(20, ge=1)
    # floor on the HMC trajectory length step_size * leapfrog_steps
    min_trajectory: float = Field(1.5, ge=0)


class SubsetConfig(_Strict):
    n_samples: int = Field(1000, ge=100)
    p: float = Field(0.1, gt=0, lt=1)
    max_levels: int = Field(50, ge=1)
    # most-relaxed threshold; None means the p-quantile of the first crude-MC batch
    initial_threshold: float | None = None


class SequentialConfig(_Strict):
    n_samples: int = Field(1000, ge=100)
    delta_target: float = Field(1.5, gt=0)
    max_levels: int = Field(50, ge=1)
    # None means start from the unsmoothed prior (S == 1)
    initial_smoothing: float | None = Field(None, ge=0)


class AnnealedConfig(_Strict):
    n_samples: int = Field(1000, ge=100)
    delta_target: float = Field(1.5, gt=0)
    max_levels: int = Field(50, ge=1)
    # None means double from 1 until the relaxed failure fraction reaches min_fraction
    initial_scale: float | None = Field(None, ge=1)
    pilot_samples: int = Field(100, ge=10)
    min_fraction: float = Field(0.05, gt=0, lt=1)
    scale_cap: float = Field(64.0, gt=1)


class CoupledConfig(_Strict):
    n_samples: int = Field(100, ge=100)
    p: float = Field(0.1, gt=0, lt=1)
    delta_target: float = Field(1.5, gt=0)
    grid_eps: int = Field(6, ge=1)
    grid_xi: int = Field(8, ge=1)
    max_levels: int = Field(50, ge=1)


class SphericalConfig(_Strict):
    n_samples: int = Field(500, ge=100)
    p: float = Field(0.1, gt=0, lt=1)
    rho: float = Field(0.25, gt=0, lt=1)
    grid_eps: int = Field(6, ge=1)
    grid_xi: int = Field(8, ge=1)
    max_retries: int = Field(3, ge=0)
    fallback_factor: float = Field(0.8, gt=0, lt=1)
    max_levels: int = Field(50, ge=1)


class Ranges(_Strict):
    """Relaxation box: threshold offset eps in [0, eps_max], input scale xi in [1, xi_max]."""

    eps_max: float = Field(0.0, ge=0)
    xi_max: float = Field(1.0, ge=1)


class RunConfig(_Strict):
    problem: str = "parabolic:d=5"
    method: Method = "ss"
    seed: int = Field(DEFAULT_SEED, ge=0)
    reps: int = Field(1, ge=1)
    jobs: int = Field(DEFAULT_JOBS, ge=1)
    dmc_samples: int = Field(1_000_000, ge=1)
    kernel: KernelConfig = Field(default_factory=KernelConfig)
    subset: SubsetConfig = Field(default_factory=SubsetConfig)
    sequential: SequentialConfig = Field(default_factory=SequentialConfig)
    annealed: AnnealedConfig = Field(default_factory=AnnealedConfig)
    coupled: CoupledConfig = Field(default_factory=CoupledConfig)
    spherical: SphericalConfig = Field(default_factory=SphericalConfig)
    # None lets the surface strategies pick xi_max by doubling and use eps_max = 0
    ranges: Ranges | None = None
    dense: int = Field(50, ge=1)
    thresholds: list[float] = Field(default_factory=list)

    @model_validator(mode="before")
    @classmethod
    def _unwrap_manifest(cls, data: Any) -> Any:
        # a run manifest carries the resolved config under "config"
        if isinstance(data, dict) and "config" in data and "config_hash" in data:
            return data["config"]
        return data


def config_hash(config: RunConfig) -> str:
    """SHA-256 of the canonical JSON of the resolved config (thread count excluded)."""
    doc = config.model_dump(mode="json", exclude={"jobs"})
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
