# fishergrad/stats.py
"""
Two-sample Kolmogorov-Smirnov testing with Benjamini-Hochberg correction, and
the sensitivity sweep comparing differentiable hard counts to the exact sampler.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from fishergrad.errors import ConfigError, DomainError
from fishergrad.hypergeom import UrnSpec
from fishergrad.reparam import STREAM_SWEEP, make_rng, sample_batch

# below this λ the Kolmogorov tail is 1 to double precision and the series is ill-conditioned
_LAMBDA_FLOOR = 0.2
_SERIES_TOL = 1e-12
_SERIES_MAX_TERMS = 100

ARM_DIFFERENTIABLE = "differentiable"
ARM_EXACT = "exact"


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    sample_sizes: tuple[int, int]


def kolmogorov_sf(lam: float) -> float:
    """P(K > λ) = 2 Σ_{k>=1} (-1)^{k-1} exp(-2 k² λ²), clamped to [0, 1]."""
    if lam < _LAMBDA_FLOOR:
        return 1.0
    total = 0.0
    for k in range(1, _SERIES_MAX_TERMS + 1):
        term = math.exp(-2.0 * k * k * lam * lam)
        total += term if k % 2 else -term
        if term < _SERIES_TOL:
            break
    return min(1.0, max(0.0, 2.0 * total))


def ks_two_sample(a: Sequence[float], b: Sequence[float]) -> KsResult:
    """
    Two-sided two-sample KS test. D is evaluated on right-continuous empirical
    CDFs at every pooled point, which keeps it well defined with ties.
    """
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    n1, n2 = a.size, b.size
    if n1 == 0 or n2 == 0:
        raise DomainError("KS test needs two non-empty samples")
    pooled = np.unique(np.concatenate([a, b]))
    cdf_a = np.searchsorted(a, pooled, side="right") / n1
    cdf_b = np.searchsorted(b, pooled, side="right") / n2
    d = float(np.max(np.abs(cdf_a - cdf_b)))
    lam = d * math.sqrt(n1 * n2 / (n1 + n2))
    return KsResult(statistic=d, p_value=kolmogorov_sf(lam), sample_sizes=(n1, n2))


def benjamini_hochberg(p: Sequence[float]) -> list[float]:
    """Step-up BH adjusted p-values, returned in input order."""
    arr = np.asarray(p, dtype=float).ravel()
    if arr.size == 0:
        return []
    if np.any(np.isnan(arr)) or np.any(arr < 0) or np.any(arr > 1):
        raise DomainError(f"p-values must lie in [0, 1], got {list(arr)}")
    m = arr.size
    order = np.argsort(arr, kind="stable")
    ranks = np.arange(1, m + 1)
    scaled = arr[order] * m / ranks
    # running minimum from the largest rank down
    adjusted_sorted = np.minimum(np.minimum.accumulate(scaled[::-1])[::-1], 1.0)
    out = np.empty(m)
    out[order] = adjusted_sorted
    return out.tolist()


def histograms(samples: np.ndarray, class_counts: Sequence[int]) -> list[np.ndarray]:
    """Per-class frequency of each count value 0..m_i."""
    samples = np.asarray(samples, dtype=np.int64)
    return [np.bincount(samples[:, i], minlength=m + 1) for i, m in enumerate(class_counts)]


# ----------------------------
# Sensitivity sweep
# ----------------------------
SWEEP_PARAMS = ("omega2", "n", "m2")

DEFAULT_GRIDS = {
    "omega2": tuple(float(w) for w in range(1, 11)),
    "n": (20, 60, 100, 140, 180, 220, 260, 300),
    "m2": (50, 100, 150, 200, 250, 300, 350, 400),
}


@dataclass(frozen=True)
class SweepConfig:
    """Vary exactly one of ω_2, n, m_2 (1-based class 2) around a fixed base urn."""

    param: str
    values: tuple[float, ...]
    class_counts: tuple[int, ...] = (200, 200, 200)
    draws: int = 180
    weights: tuple[float, ...] = (1.0, 1.0, 1.0)
    samples: int = 20000
    seed: int = 0
    tau: float = 1.0

    def __post_init__(self) -> None:
        if self.param not in SWEEP_PARAMS:
            raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMS}, got {self.param!r}")
        if not self.values:
            raise ConfigError("sweep grid is empty")
        if len(self.class_counts) < 2 or len(self.class_counts) != len(self.weights):
            raise ConfigError("class counts and weights must have the same length >= 2")
        if self.samples < 1:
            raise ConfigError(f"samples per arm must be >= 1, got {self.samples}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if not self.tau > 0:
            raise ConfigError(f"temperature must be positive, got {self.tau}")
        for v in self.values:
            try:
                self.urn_at(v)
            except DomainError as e:
                raise ConfigError(f"invalid grid value {self.param}={v}: {e}") from e

    @classmethod
    def standard(cls, param: str, **overrides) -> "SweepConfig":
        """Standard grids: ω-sweep at n=180, n-sweep at ω=(1,5,1), m_2-sweep at n=200, ω=(1,5,1)."""
        if param not in SWEEP_PARAMS:
            raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMS}, got {param!r}")
        base: dict = {"param": param, "values": DEFAULT_GRIDS[param]}
        if param in ("n", "m2"):
            base["weights"] = (1.0, 5.0, 1.0)
        if param == "m2":
            base["draws"] = 200
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**base)

    def urn_at(self, value: float) -> UrnSpec:
        m = list(self.class_counts)
        n = self.draws
        w = list(self.weights)
        if self.param == "omega2":
            w[1] = float(value)
        elif self.param == "n":
            if float(value) != int(value):
                raise DomainError(f"n must be an integer, got {value}")
            n = int(value)
        else:
            if float(value) != int(value):
                raise DomainError(f"m2 must be an integer, got {value}")
            m[1] = int(value)
        return UrnSpec.from_weights(m, n, w)

    def as_dict(self) -> dict:
        return {
            "param": self.param,
            "values": list(self.values),
            "class_counts": list(self.class_counts),
            "draws": self.draws,
            "weights": list(self.weights),
            "samples": self.samples,
            "seed": self.seed,
            "tau": self.tau,
        }


@dataclass(frozen=True)
class SweepRow:
    sweep_param: str
    sweep_value: float
    cls: int
    statistic: float
    p_raw: float
    p_adjusted: float
    n_samples: int
    seed: int


@dataclass(frozen=True)
class HistogramRow:
    sweep_param: str
    sweep_value: float
    arm: str
    cls: int
    count_value: int
    frequency: int


@dataclass
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)
    histograms: list[HistogramRow] = field(default_factory=list)

    def passes(self, threshold: float) -> int:
        return sum(r.p_adjusted > threshold for r in self.rows)


def _run_point(config: SweepConfig, index: int, value: float) -> tuple[list[SweepRow], list[HistogramRow]]:
    urn = config.urn_at(value)
    diff = sample_batch(
        urn, config.samples, make_rng(config.seed, STREAM_SWEEP, index, 0), mode="differentiable", tau=config.tau
    ).hard
    exact = sample_batch(urn, config.samples, make_rng(config.seed, STREAM_SWEEP, index, 1), mode="exact").hard

    results = [ks_two_sample(diff[:, i], exact[:, i]) for i in range(urn.num_classes)]
    # one BH family per joint distribution: its c class-wise tests
    adjusted = benjamini_hochberg([r.p_value for r in results])
    rows = [
        SweepRow(config.param, value, i + 1, r.statistic, r.p_value, q, config.samples, config.seed)
        for i, (r, q) in enumerate(zip(results, adjusted))
    ]
    hists: list[HistogramRow] = []
    for arm, samples in ((ARM_DIFFERENTIABLE, diff), (ARM_EXACT, exact)):
        for i, h in enumerate(histograms(samples, urn.class_counts)):
            hists.extend(
                HistogramRow(config.param, value, arm, i + 1, k, int(f)) for k, f in enumerate(h)
            )
    logging.info(
        "[Stats] %s=%s: D=%s p_adj=%s",
        config.param, value,
        ", ".join(f"{r.statistic:.4f}" for r in results),
        ", ".join(f"{q:.3f}" for q in adjusted),
    )
    return rows, hists


def ks_sensitivity_sweep(config: SweepConfig, workers: Optional[int] = None) -> SweepResult:
    """
    For every grid point: `samples` differentiable hard draws and `samples`
    exact draws, one KS test per class marginal, BH across the classes.
    Each (grid index, arm) has its own random stream, so results do not
    depend on `workers`.
    """
    points = list(enumerate(config.values))
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(lambda iv: _run_point(config, *iv), points))
    else:
        outputs = [_run_point(config, i, v) for i, v in points]
    result = SweepResult()
    for rows, hists in outputs:
        result.rows.extend(rows)
        result.histograms.extend(hists)
    return result
