# fishergrad/hypergeom.py
"""
Exact PMFs for the central and Fisher's noncentral hypergeometric distributions.

Responsibilities:
- UrnSpec / DrawVector / LogPmfTable value types.
- Support enumeration (lexicographic, guarded) for brute-force oracles.
- The two-class conditional table (unnormalized log-weights, masked -inf where infeasible).
- The exact joint PMF and the conditional-chain PMF the samplers realize.
"""

from __future__ import annotations

import functools
import logging
import math
import threading
from dataclasses import dataclass, field, replace
from typing import Iterator, NamedTuple, Optional, Sequence

import numpy as np

from fishergrad.errors import CapacityError, DomainError
from fishergrad.numerics import log_binomial, log_gamma, log_softmax, log_sum_exp

SUPPORT_LIMIT = 10**7


# ----------------------------
# Value types
# ----------------------------
@dataclass(frozen=True)
class UrnSpec:
    """c classes with m_i marbles each, n draws, log importance weights log ω."""

    class_counts: tuple[int, ...]
    draws: int
    log_weights: tuple[float, ...]

    def __post_init__(self) -> None:
        if not all(float(x).is_integer() for x in (*self.class_counts, self.draws)):
            raise DomainError(f"class counts and draws must be integers, got {tuple(self.class_counts)}, {self.draws}")
        m = tuple(int(x) for x in self.class_counts)
        lw = tuple(float(x) for x in self.log_weights)
        object.__setattr__(self, "class_counts", m)
        object.__setattr__(self, "log_weights", lw)
        object.__setattr__(self, "draws", int(self.draws))
        if len(m) < 2:
            raise DomainError(f"an urn needs at least 2 classes, got {len(m)}")
        if len(lw) != len(m):
            raise DomainError(f"{len(lw)} log weights for {len(m)} classes")
        if any(x < 1 for x in m):
            raise DomainError(f"class counts must be >= 1, got {m}")
        if not all(math.isfinite(x) for x in lw):
            raise DomainError(f"log weights must be finite, got {lw}")
        if not 0 <= self.draws <= sum(m):
            raise DomainError(f"draws must lie in [0, {sum(m)}], got {self.draws}")

    @classmethod
    def from_weights(cls, class_counts: Sequence[int], draws: int, weights: Sequence[float]) -> "UrnSpec":
        if any(not w > 0 for w in weights):
            raise DomainError(f"weights must be positive, got {tuple(weights)}")
        return cls(tuple(class_counts), draws, tuple(math.log(w) for w in weights))

    @classmethod
    def central(cls, class_counts: Sequence[int], draws: int) -> "UrnSpec":
        return cls(tuple(class_counts), draws, (0.0,) * len(class_counts))

    @property
    def num_classes(self) -> int:
        return len(self.class_counts)

    @property
    def total(self) -> int:
        return sum(self.class_counts)

    @property
    def weights(self) -> tuple[float, ...]:
        return tuple(math.exp(x) for x in self.log_weights)

    def with_log_weights(self, log_weights: Sequence[float]) -> "UrnSpec":
        return replace(self, log_weights=tuple(log_weights))

    def shifted(self, const: float) -> "UrnSpec":
        return self.with_log_weights([x + const for x in self.log_weights])


@dataclass(frozen=True)
class DrawVector:
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "counts", tuple(int(x) for x in self.counts))

    def __len__(self) -> int:
        return len(self.counts)

    def __iter__(self) -> Iterator[int]:
        return iter(self.counts)

    def in_support(self, urn: UrnSpec) -> bool:
        if len(self.counts) != urn.num_classes:
            return False
        return sum(self.counts) == urn.draws and all(
            0 <= x <= m for x, m in zip(self.counts, urn.class_counts)
        )

    def as_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.int64)


@dataclass(eq=False)
class LogPmfTable:
    """
    Unnormalized log-weights α over candidate counts {0..m_L} of one
    conditional step. Index == count; infeasible entries hold -inf.
    """

    logits: np.ndarray
    feasible_mask: np.ndarray
    _log_normalizer: Optional[float] = field(default=None, init=False, repr=False, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.logits = np.asarray(self.logits, dtype=float)
        self.feasible_mask = np.asarray(self.feasible_mask, dtype=bool)
        if self.logits.shape != self.feasible_mask.shape:
            raise DomainError("logits and feasibility mask differ in shape")
        if not np.any(self.feasible_mask):
            raise DomainError("a conditional table needs at least one feasible count")

    def __len__(self) -> int:
        return len(self.logits)

    @property
    def log_normalizer(self) -> float:
        if self._log_normalizer is None:
            with self._lock:
                if self._log_normalizer is None:
                    self._log_normalizer = log_sum_exp(self.logits[self.feasible_mask])
        return self._log_normalizer

    def normalized(self) -> np.ndarray:
        """Normalized log-probabilities (-inf at infeasible counts)."""
        return self.logits - self.log_normalizer

    def probabilities(self) -> np.ndarray:
        return np.exp(self.normalized())

    @classmethod
    def degenerate(cls, size: int, index: int) -> "LogPmfTable":
        """Table with a single feasible count (the forced remainder of the last class)."""
        mask = np.zeros(size, dtype=bool)
        mask[index] = True
        return cls(np.where(mask, 0.0, -np.inf), mask)


# ----------------------------
# Support enumeration
# ----------------------------
def support_size_bound(urn: UrnSpec) -> int:
    return math.prod(m + 1 for m in urn.class_counts)


def _check_capacity(urn: UrnSpec, limit: int) -> None:
    bound = support_size_bound(urn)
    if bound > limit:
        raise CapacityError(f"support guard exceeded: prod(m_i + 1) = {bound} > {limit}")


def enumerate_support(urn: UrnSpec, limit: int = SUPPORT_LIMIT) -> list[DrawVector]:
    """Every feasible draw vector exactly once, in lexicographic order."""
    return [DrawVector(row) for row in _support_array(urn, limit).tolist()]


@functools.lru_cache(maxsize=64)
def _support_cached(class_counts: tuple[int, ...], draws: int) -> np.ndarray:
    c = len(class_counts)
    # suffix capacity: the most the classes after i can still absorb
    tail = [0] * (c + 1)
    for i in range(c - 1, -1, -1):
        tail[i] = tail[i + 1] + class_counts[i]

    rows: list[list[int]] = []
    prefix: list[int] = []

    def rec(i: int, left: int) -> None:
        if i == c - 1:
            rows.append(prefix + [left])
            return
        lo = max(0, left - tail[i + 1])
        hi = min(class_counts[i], left)
        for x in range(lo, hi + 1):
            prefix.append(x)
            rec(i + 1, left - x)
            prefix.pop()

    rec(0, draws)
    out = np.asarray(rows, dtype=np.int64).reshape(len(rows), c)
    out.setflags(write=False)
    return out


def _support_array(urn: UrnSpec, limit: int = SUPPORT_LIMIT) -> np.ndarray:
    _check_capacity(urn, limit)
    return _support_cached(urn.class_counts, urn.draws)


# ----------------------------
# Central distributions (reference)
# ----------------------------
def central_uni_log_pmf(N: int, m: int, n: int, x: int) -> float:
    """ln[C(m,x) C(N-m,n-x) / C(N,n)]; -inf when x is infeasible."""
    if N < 1 or not 0 <= m <= N or not 0 <= n <= N:
        raise DomainError(f"invalid central urn N={N}, m={m}, n={n}")
    if x < 0 or x > m or x > n or n - x > N - m:
        return -math.inf
    return log_binomial(m, x) + log_binomial(N - m, n - x) - log_binomial(N, n)


def central_multi_log_pmf(urn: UrnSpec, x: DrawVector) -> float:
    if not x.in_support(urn):
        return -math.inf
    lb = np.asarray(log_binomial(np.asarray(urn.class_counts), x.as_array()))
    return math.fsum(lb) - log_binomial(urn.total, urn.draws)


# ----------------------------
# Two-class conditional table
# ----------------------------
def fisher_psi(k: np.ndarray, n: float, m_left: float, m_right: float) -> np.ndarray:
    """ω-independent log-Gamma term of the two-class log-PMF (n may be non-integer)."""
    return -(log_gamma(k + 1.0) + log_gamma(n - k + 1.0)) - (
        log_gamma(m_left - k + 1.0) + log_gamma(m_right - n + k + 1.0)
    )


def feasible_counts(m_left: int, m_right: int, n: int) -> np.ndarray:
    k = np.arange(m_left + 1)
    return (k <= n) & (n - k <= m_right)


def fisher_uni_log_pmf_table(
    m_left: int, m_right: int, log_w_left: float, log_w_right: float, n: int
) -> LogPmfTable:
    """α[x] = x log ω_L + (n - x) log ω_R + ψ_F(x) on feasible x, -inf elsewhere."""
    if m_left < 1 or m_right < 1 or n < 0:
        raise DomainError(f"invalid two-class urn m_L={m_left}, m_R={m_right}, n={n}")
    if n > m_left + m_right:
        raise DomainError(f"cannot draw n={n} from {m_left + m_right} marbles")
    mask = feasible_counts(m_left, m_right, n)
    k = np.arange(m_left + 1, dtype=float)[mask]
    logits = np.full(m_left + 1, -np.inf)
    logits[mask] = k * log_w_left + (n - k) * log_w_right + fisher_psi(k, float(n), float(m_left), float(m_right))
    return LogPmfTable(logits, mask)


class MergedPair(NamedTuple):
    m_left: int
    m_right: int
    log_w_left: float
    log_w_right: float


def merge_right(urn: UrnSpec, i: int) -> MergedPair:
    """Class i against the merged classes after it; ω_R is the m-weighted mean."""
    m = urn.class_counts
    lw = urn.log_weights
    m_right = sum(m[i + 1:])
    log_w_right = log_sum_exp([lw[j] + math.log(m[j]) for j in range(i + 1, len(m))]) - math.log(m_right)
    return MergedPair(m[i], m_right, lw[i], log_w_right)


# ----------------------------
# Joint PMFs
# ----------------------------
def _joint_unnormalized(urn: UrnSpec, support: np.ndarray) -> np.ndarray:
    m = np.asarray(urn.class_counts)
    lw = np.asarray(urn.log_weights)
    lb = np.asarray(log_binomial(np.broadcast_to(m, support.shape), support))
    return support @ lw + lb.sum(axis=1)


@functools.lru_cache(maxsize=256)
def _joint_log_normalizer(urn: UrnSpec) -> float:
    support = _support_array(urn)
    return log_sum_exp(_joint_unnormalized(urn, support))


def joint_log_pmf_vector(urn: UrnSpec, limit: int = SUPPORT_LIMIT) -> tuple[np.ndarray, np.ndarray]:
    """(support, ln p) for the exact joint noncentral PMF, support in lexicographic order."""
    support = _support_array(urn, limit)
    un = _joint_unnormalized(urn, support)
    return support, log_softmax(un)


def fisher_multi_log_pmf(urn: UrnSpec, x: DrawVector) -> float:
    """Exact normalized ln p(x; ω); normalizer by enumeration (cached per urn)."""
    if len(x) != urn.num_classes:
        raise DomainError(f"draw has {len(x)} classes, urn has {urn.num_classes}")
    _check_capacity(urn, SUPPORT_LIMIT)
    if not x.in_support(urn):
        return -math.inf
    un = float(_joint_unnormalized(urn, x.as_array()[None, :])[0])
    return un - _joint_log_normalizer(urn)


def _chain_log_pmf_row(urn: UrnSpec, counts: Sequence[int]) -> float:
    remaining = urn.draws
    total = 0.0
    for i in range(urn.num_classes - 1):
        pair = merge_right(urn, i)
        table = fisher_uni_log_pmf_table(pair.m_left, pair.m_right, pair.log_w_left, pair.log_w_right, remaining)
        total += float(table.normalized()[counts[i]])
        remaining -= counts[i]
    return total


def conditional_chain_log_pmf(urn: UrnSpec, x: DrawVector) -> float:
    """Σ_i ln p(x_i | x_1..x_{i-1}) under the left-one / merged-rest split; the sampler's law."""
    if len(x) != urn.num_classes:
        raise DomainError(f"draw has {len(x)} classes, urn has {urn.num_classes}")
    if not x.in_support(urn):
        return -math.inf
    return _chain_log_pmf_row(urn, x.counts)


def chain_log_pmf_vector(urn: UrnSpec, limit: int = SUPPORT_LIMIT) -> tuple[np.ndarray, np.ndarray]:
    support = _support_array(urn, limit)
    logp = np.array([_chain_log_pmf_row(urn, row) for row in support.tolist()], dtype=float)
    return support, logp


def total_variation(log_p: np.ndarray, log_q: np.ndarray) -> float:
    """TV distance between two index-aligned log-PMF vectors."""
    log_p = np.asarray(log_p, dtype=float)
    log_q = np.asarray(log_q, dtype=float)
    if log_p.shape != log_q.shape:
        raise DomainError("PMF vectors are not aligned")
    return 0.5 * math.fsum(np.abs(np.exp(log_p) - np.exp(log_q)))


def merge_bias(urn: UrnSpec) -> float:
    _, joint = joint_log_pmf_vector(urn)
    _, chain = chain_log_pmf_vector(urn)
    tv = total_variation(joint, chain)
    logging.debug("[Hypergeom] merge bias TV=%.3g for m=%s log ω=%s", tv, urn.class_counts, urn.log_weights)
    return tv
