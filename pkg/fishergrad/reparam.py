# fishergrad/reparam.py
"""
Differentiable sampling from the multivariate Fisher noncentral hypergeometric
distribution via the conditional chain.

For i = 1..c-1 the urn is split into class i against the merged remaining
classes, the two-class log-weight table α_i is built for the remaining draws,
perturbed with Gumbel noise, relaxed with a tempered softmax and resolved to a
hard count by argmax (straight-through). The last class takes the remainder.

Gradients are carried forward-mode: every quantity that depends on log ω keeps
a tangent row of length c, so one pass yields the c x c Jacobian of the soft
counts. Forward values use hard counts, tangents use soft counts.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from fishergrad.errors import DomainError
from fishergrad.hypergeom import (
    DrawVector,
    LogPmfTable,
    MergedPair,
    UrnSpec,
    feasible_counts,
    fisher_psi,
    fisher_uni_log_pmf_table,
    merge_right,
)
from fishergrad.numerics import digamma, log_softmax, softmax_tempered

UNIFORM_EPS = 1e-12

# stream indices under a root seed
STREAM_SAMPLE = 0
STREAM_DATASET = 1
STREAM_TRAIN = 2
STREAM_VALIDATION = 3
STREAM_EVALUATION = 4
STREAM_SWEEP = 5


# ----------------------------
# Random streams
# ----------------------------
def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """
    Philox (counter-based) generator for `seed` and a stable stream index.
    The same (seed, stream) gives bit-identical draws on every platform.
    """
    if seed < 0 or any(s < 0 for s in stream):
        raise DomainError(f"seed and stream indices must be non-negative, got {seed}, {stream}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(stream))))


def sample_gumbel(rng: np.random.Generator, size: int) -> np.ndarray:
    """Standard Gumbel draws g = -ln(-ln u), u clamped to (ε, 1-ε)."""
    if size < 1:
        raise DomainError(f"need at least one Gumbel draw, got {size}")
    u = np.clip(rng.random(size), UNIFORM_EPS, 1.0 - UNIFORM_EPS)
    return -np.log(-np.log(u))


@dataclass(frozen=True, eq=False)
class NoiseBundle:
    """One Gumbel vector of length m_i + 1 per class."""

    components: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        comps = tuple(np.asarray(g, dtype=float) for g in self.components)
        if not all(np.all(np.isfinite(g)) for g in comps):
            raise DomainError("Gumbel noise must be finite")
        object.__setattr__(self, "components", comps)

    @classmethod
    def draw(cls, urn: UrnSpec, rng: np.random.Generator) -> "NoiseBundle":
        return cls(tuple(sample_gumbel(rng, m + 1) for m in urn.class_counts))

    def check(self, urn: UrnSpec) -> None:
        if len(self.components) != urn.num_classes or any(
            len(g) != m + 1 for g, m in zip(self.components, urn.class_counts)
        ):
            raise DomainError("noise bundle does not match the urn's class counts")


# ----------------------------
# Result types
# ----------------------------
@dataclass(frozen=True, eq=False)
class RelaxedDraw:
    hard_counts: DrawVector
    soft_counts: np.ndarray
    soft_onehots: tuple[np.ndarray, ...]
    perturbed_logits: tuple[np.ndarray, ...]
    log_weights_table: tuple[LogPmfTable, ...]
    noise: NoiseBundle
    tau: float


@dataclass(frozen=True, eq=False)
class SoftCountJacobian:
    """J[i][j] = ∂ soft_count_i / ∂ log ω_j at fixed noise."""

    matrix: np.ndarray

    def vjp(self, cotangent: Sequence[float]) -> np.ndarray:
        return np.asarray(cotangent, dtype=float) @ self.matrix


class BatchDraws(NamedTuple):
    hard: np.ndarray
    soft: Optional[np.ndarray]


# ----------------------------
# Merge + single step
# ----------------------------
def merge_classes(urn: UrnSpec, i: int, remaining_n: int) -> MergedPair:
    """(m_L, m_R, log ω_L, log ω_R) for class i against the merged classes after it."""
    c = urn.num_classes
    if not 0 <= i < c - 1:
        raise DomainError(f"merge index must lie in [0, {c - 2}], got {i}")
    capacity = sum(urn.class_counts[i:])
    if not 0 <= remaining_n <= capacity:
        raise DomainError(f"{remaining_n} remaining draws exceed the {capacity} marbles left")
    return merge_right(urn, i)


@functools.lru_cache(maxsize=4096)
def _step_table(urn: UrnSpec, i: int, remaining_n: int) -> LogPmfTable:
    pair = merge_right(urn, i)
    return fisher_uni_log_pmf_table(pair.m_left, pair.m_right, pair.log_w_left, pair.log_w_right, remaining_n)


def perturb(table: LogPmfTable, g: np.ndarray) -> np.ndarray:
    """r̂ = α + g on feasible counts; infeasible stay at -inf."""
    g = np.asarray(g, dtype=float)
    if g.shape != table.logits.shape:
        raise DomainError(f"noise length {g.shape} does not match table length {table.logits.shape}")
    return np.where(table.feasible_mask, table.logits + g, -np.inf)


def relax_and_select(table: LogPmfTable, g: np.ndarray, tau: float) -> tuple[np.ndarray, int]:
    """Tempered softmax of the perturbed logits and the Gumbel-max (always feasible) index."""
    if not np.any(table.feasible_mask):
        raise DomainError("no feasible count to select")
    r = perturb(table, g)
    return softmax_tempered(r, tau), int(np.argmax(r))


# ----------------------------
# The chain pass
# ----------------------------
def _chain_pass(
    urn: UrnSpec,
    tau: float,
    noise: NoiseBundle,
    reference: Optional[RelaxedDraw] = None,
    tangents: bool = True,
):
    """
    Walk the conditional chain once.

    Without a reference this is the sampler: hard counts by argmax, the
    remaining-draws counter takes hard values. With a reference the hard path
    (feasibility masks and argmax choices) is frozen to the reference's, and the
    counter is the straight-through surrogate n_hard - Σ (s_j - s_j^ref), which is
    what the tangents differentiate.
    """
    if not tau > 0:
        raise DomainError(f"temperature must be positive, got {tau!r}")
    noise.check(urn)
    c = urn.num_classes
    m = urn.class_counts
    lw = np.asarray(urn.log_weights)
    log_m = np.log(np.asarray(m, dtype=float))
    eye = np.eye(c)

    n_hard = urn.draws
    n_val = float(urn.draws)
    n_dot = np.zeros(c)

    hard: list[int] = []
    soft = np.zeros(c)
    jac = np.zeros((c, c)) if tangents else None
    onehots: list[np.ndarray] = []
    perturbed: list[np.ndarray] = []
    tables: list[LogPmfTable] = []

    for i in range(c - 1):
        pair = merge_right(urn, i)
        k = np.arange(pair.m_left + 1, dtype=float)
        if reference is None:
            table = _step_table(urn, i, n_hard)
        else:
            mask = feasible_counts(pair.m_left, pair.m_right, n_hard)
            kf = k[mask]
            logits = np.full(pair.m_left + 1, -np.inf)
            logits[mask] = (
                kf * pair.log_w_left
                + (n_val - kf) * pair.log_w_right
                + fisher_psi(kf, n_val, float(pair.m_left), float(pair.m_right))
            )
            table = LogPmfTable(logits, mask)

        p, idx = relax_and_select(table, noise.components[i], tau)
        if reference is not None:
            idx = reference.hard_counts.counts[i]
        s = float(p @ k)

        if tangents:
            mask = table.feasible_mask
            kf = k[mask]
            right = lw[i + 1:] + log_m[i + 1:]
            d_right = np.zeros(c)
            d_right[i + 1:] = np.exp(log_softmax(right))
            d_psi_dn = -np.asarray(digamma(n_val - kf + 1.0)) + np.asarray(digamma(pair.m_right - n_val + kf + 1.0))
            d_alpha = np.zeros((pair.m_left + 1, c))
            d_alpha[mask] = (
                np.outer(kf, eye[i])
                + np.outer(n_val - kf, d_right)
                + np.outer(pair.log_w_right + d_psi_dn, n_dot)
            )
            ds = ((p * (k - s)) @ d_alpha) / tau
            jac[i] = ds
            n_dot = n_dot - ds

        anchor = s if reference is None else float(reference.soft_counts[i])
        hard.append(idx)
        soft[i] = s
        onehots.append(p)
        perturbed.append(perturb(table, noise.components[i]))
        tables.append(table)
        n_hard -= idx
        n_val = n_val - idx - (s - anchor)

    # last class: forced remainder, degenerate one-hot
    last = c - 1
    table = LogPmfTable.degenerate(m[last] + 1, n_hard)
    onehot = np.zeros(m[last] + 1)
    onehot[n_hard] = 1.0
    hard.append(n_hard)
    soft[last] = n_val
    onehots.append(onehot)
    perturbed.append(perturb(table, noise.components[last]))
    tables.append(table)
    if tangents:
        jac[last] = n_dot

    draw = RelaxedDraw(
        hard_counts=DrawVector(tuple(hard)),
        soft_counts=soft,
        soft_onehots=tuple(onehots),
        perturbed_logits=tuple(perturbed),
        log_weights_table=tuple(tables),
        noise=noise,
        tau=float(tau),
    )
    return draw, jac


def _resolve_noise(urn: UrnSpec, rng: Optional[np.random.Generator], noise: Optional[NoiseBundle]) -> NoiseBundle:
    if (rng is None) == (noise is None):
        raise DomainError("pass exactly one of rng or noise")
    return noise if noise is not None else NoiseBundle.draw(urn, rng)


def sample_differentiable(
    urn: UrnSpec,
    tau: float,
    rng: Optional[np.random.Generator] = None,
    noise: Optional[NoiseBundle] = None,
) -> RelaxedDraw:
    draw, _ = _chain_pass(urn, tau, _resolve_noise(urn, rng, noise), tangents=False)
    return draw


def sample_with_jacobian(urn: UrnSpec, tau: float, noise: NoiseBundle) -> tuple[RelaxedDraw, SoftCountJacobian]:
    draw, jac = _chain_pass(urn, tau, noise, tangents=True)
    return draw, SoftCountJacobian(jac)


def soft_count_jacobian(urn: UrnSpec, tau: float, noise: NoiseBundle) -> SoftCountJacobian:
    return sample_with_jacobian(urn, tau, noise)[1]


def soft_counts_frozen(urn: UrnSpec, tau: float, noise: NoiseBundle, reference: RelaxedDraw) -> np.ndarray:
    """
    Soft counts of the straight-through surrogate with the reference's hard
    path held fixed. Equal to reference.soft_counts at the reference's urn;
    its derivative in log ω is soft_count_jacobian.
    """
    if len(reference.hard_counts) != urn.num_classes:
        raise DomainError("reference draw does not match the urn")
    draw, _ = _chain_pass(urn, tau, noise, reference=reference, tangents=False)
    return draw.soft_counts


# ----------------------------
# Exact reference sampler
# ----------------------------
@functools.lru_cache(maxsize=4096)
def _step_cdf(urn: UrnSpec, i: int, remaining_n: int) -> tuple[np.ndarray, int]:
    table = _step_table(urn, i, remaining_n)
    cdf = np.cumsum(np.exp(log_softmax(table.logits)))
    cdf.setflags(write=False)
    last_feasible = int(np.flatnonzero(table.feasible_mask)[-1])
    return cdf, last_feasible


def sample_exact(urn: UrnSpec, rng: np.random.Generator) -> DrawVector:
    """Inverse-CDF sampling through the same conditional chain (no relaxation)."""
    counts: list[int] = []
    remaining = urn.draws
    for i in range(urn.num_classes - 1):
        cdf, last_feasible = _step_cdf(urn, i, remaining)
        u = rng.random() * cdf[-1]
        idx = min(int(np.searchsorted(cdf, u, side="right")), last_feasible)
        counts.append(idx)
        remaining -= idx
    counts.append(remaining)
    return DrawVector(tuple(counts))


def sample_batch(
    urn: UrnSpec,
    count: int,
    rng: np.random.Generator,
    mode: str = "exact",
    tau: float = 1.0,
) -> BatchDraws:
    """`count` independent draws from one stream, as arrays of shape (count, c)."""
    if count < 0:
        raise DomainError(f"sample count must be non-negative, got {count}")
    c = urn.num_classes
    hard = np.zeros((count, c), dtype=np.int64)
    if mode == "exact":
        for d in range(count):
            hard[d] = sample_exact(urn, rng).counts
        return BatchDraws(hard, None)
    if mode == "differentiable":
        soft = np.zeros((count, c))
        for d in range(count):
            draw = sample_differentiable(urn, tau, rng=rng)
            hard[d] = draw.hard_counts.counts
            soft[d] = draw.soft_counts
        return BatchDraws(hard, soft)
    raise DomainError(f"unknown sampling mode {mode!r}")


def clear_caches() -> None:
    _step_table.cache_clear()
    _step_cdf.cache_clear()
    logging.debug("[Reparam] step caches cleared")
