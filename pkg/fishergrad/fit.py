# fishergrad/fit.py
"""
Recovering unknown class importance from observed draw vectors.

The generative model is the differentiable sampler itself: each step draws
fresh Gumbel noise, samples a relaxed draw at the annealed temperature,
scores it against an observed vector with squared error on the soft counts,
and moves log ω down the reparameterized gradient (plain SGD).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from fishergrad.errors import ConfigError, DomainError
from fishergrad.hypergeom import DrawVector, UrnSpec, conditional_chain_log_pmf
from fishergrad.reparam import (
    STREAM_DATASET,
    STREAM_EVALUATION,
    STREAM_TRAIN,
    STREAM_VALIDATION,
    NoiseBundle,
    RelaxedDraw,
    SoftCountJacobian,
    make_rng,
    sample_batch,
    sample_differentiable,
    sample_exact,
    sample_with_jacobian,
)


@dataclass(frozen=True)
class FitConfig:
    """
    SGD settings. With normalize_by_draws the update follows the gradient of
    mse / n. The effective step still grows with n; at 0.1 the
    200,200,200 / n=180 urn oscillates instead of settling.
    """

    learning_rate: float = 0.01
    epochs: int = 10
    batch_size: int = 32
    tau_init: float = 1.0
    tau_final: float = 0.1
    anneal_steps: int = 250
    seed: int = 0
    init_log_weights: Optional[tuple[float, ...]] = None
    normalize_by_draws: bool = True

    def __post_init__(self) -> None:
        if not self.learning_rate >= 0 or not math.isfinite(self.learning_rate):
            raise ConfigError(f"learning rate must be a finite value >= 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if not (self.tau_init >= self.tau_final > 0):
            raise ConfigError(f"need tau_init >= tau_final > 0, got {self.tau_init}, {self.tau_final}")
        if self.anneal_steps < 1:
            raise ConfigError(f"anneal steps must be >= 1, got {self.anneal_steps}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if self.init_log_weights is not None:
            object.__setattr__(self, "init_log_weights", tuple(float(x) for x in self.init_log_weights))
            if not all(math.isfinite(x) for x in self.init_log_weights):
                raise ConfigError("initial log weights must be finite")

    @property
    def anneal_rate(self) -> float:
        return (math.log(self.tau_init) - math.log(self.tau_final)) / self.anneal_steps

    def as_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "tau_init": self.tau_init,
            "tau_final": self.tau_final,
            "anneal_steps": self.anneal_steps,
            "seed": self.seed,
            "init_log_weights": list(self.init_log_weights) if self.init_log_weights is not None else None,
            "normalize_by_draws": self.normalize_by_draws,
        }


@dataclass
class FitTrace:
    """
    Index 0 of the per-step series is the initial state (before any update);
    step t >= 1 holds the loss of its minibatch, the τ it sampled at and log ω
    after its update. val_loss[e] is measured after epoch e (e = 0: at init).
    """

    steps: list[int] = field(default_factory=list)
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    tau: list[float] = field(default_factory=list)
    log_weights: list[tuple[float, ...]] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)

    @property
    def final_log_weights(self) -> tuple[float, ...]:
        return self.log_weights[-1]

    @property
    def final_val_loss(self) -> float:
        return self.val_loss[-1]

    def rows(self) -> list[list]:
        """(step, epoch, train_loss, val_loss, τ, log ω_1..c); val_loss only on epoch-closing rows."""
        closing = {0: 0}
        for idx, (s, e) in enumerate(zip(self.steps, self.epochs)):
            closing[e] = idx
        val_at = {idx: self.val_loss[e] for e, idx in closing.items() if e < len(self.val_loss)}
        out = []
        for idx, (s, e, tl, t, lw) in enumerate(zip(self.steps, self.epochs, self.train_loss, self.tau, self.log_weights)):
            out.append([s, e, tl, val_at.get(idx, math.nan), t, *lw])
        return out


# ----------------------------
# Loss + schedule
# ----------------------------
def mse_loss(observed: DrawVector, sampled: RelaxedDraw) -> float:
    """Σ_i (observed_i - soft_count_i)²."""
    obs = np.asarray(observed.counts, dtype=float)
    if obs.shape != sampled.soft_counts.shape:
        raise DomainError(f"observed has {obs.size} classes, sample has {sampled.soft_counts.size}")
    return float(np.sum((obs - sampled.soft_counts) ** 2))


def mse_loss_grad(observed: DrawVector, sampled: RelaxedDraw, jacobian: SoftCountJacobian) -> np.ndarray:
    """d mse / d log ω: the vector-Jacobian product of 2(soft - observed)."""
    obs = np.asarray(observed.counts, dtype=float)
    return jacobian.vjp(2.0 * (sampled.soft_counts - obs))


def hard_mse(observed: DrawVector, counts: Sequence[int]) -> float:
    diff = np.asarray(observed.counts, dtype=float) - np.asarray(counts, dtype=float)
    return float(np.sum(diff**2))


def anneal_temperature(t: int, cfg: FitConfig) -> float:
    """τ_t = τ_init exp(-r t), r = (ln τ_init - ln τ_final) / anneal_steps, floored at τ_final."""
    if t < 0:
        raise DomainError(f"step index must be >= 0, got {t}")
    if t >= cfg.anneal_steps:
        return cfg.tau_final
    return max(cfg.tau_final, cfg.tau_init * math.exp(-cfg.anneal_rate * t))


# ----------------------------
# Data
# ----------------------------
def generate_dataset(urn_gt: UrnSpec, count: int, rng: np.random.Generator) -> list[DrawVector]:
    if count < 1:
        raise DomainError(f"dataset size must be >= 1, got {count}")
    return [sample_exact(urn_gt, rng) for _ in range(count)]


def split_dataset(dataset: Sequence[DrawVector], train: int, val: int) -> tuple[list[DrawVector], list[DrawVector]]:
    if train < 1 or val < 0 or train + val > len(dataset):
        raise DomainError(f"cannot split {len(dataset)} vectors into {train} + {val}")
    return list(dataset[:train]), list(dataset[train:train + val])


def _check_dataset(dataset: Sequence[DrawVector], class_counts: Sequence[int]) -> int:
    if not dataset:
        raise DomainError("dataset is empty")
    draws = sum(dataset[0].counts)
    for x in dataset:
        if len(x) != len(class_counts):
            raise DomainError(f"vector {x.counts} does not have {len(class_counts)} classes")
        if sum(x.counts) != draws:
            raise DomainError(f"vectors disagree on the number of draws ({sum(x.counts)} vs {draws})")
        if any(not 0 <= xi <= m for xi, m in zip(x.counts, class_counts)):
            raise DomainError(f"vector {x.counts} exceeds class counts {tuple(class_counts)}")
    return draws


def validation_loss(urn: UrnSpec, data: Sequence[DrawVector], rng: np.random.Generator, tau: float = 1.0) -> float:
    """Mean squared error of hard counts, one fresh model draw per datum."""
    losses = [
        hard_mse(x, sample_differentiable(urn, tau, rng=rng).hard_counts.counts) for x in data
    ]
    return float(np.mean(losses))


def expected_counts(urn: UrnSpec, draws: int, seed: int) -> np.ndarray:
    """Monte Carlo per-class mean hard counts of the model."""
    hard = sample_batch(urn, draws, make_rng(seed, STREAM_EVALUATION)).hard
    return hard.mean(axis=0)


def reference_val_loss(urn_gt: UrnSpec, validation: Sequence[DrawVector], seed: int) -> float:
    """Validation loss of the generative model evaluated at the true weights."""
    return validation_loss(urn_gt, validation, make_rng(seed, STREAM_EVALUATION, 1))


def exact_nll(urn: UrnSpec, dataset: Sequence[DrawVector]) -> float:
    """Mean negative log-likelihood under the chain PMF (oracle for tests)."""
    return -float(np.mean([conditional_chain_log_pmf(urn, x) for x in dataset]))


def dataset_from_seed(urn_gt: UrnSpec, count: int, seed: int, index: int = 0) -> list[DrawVector]:
    return generate_dataset(urn_gt, count, make_rng(seed, STREAM_DATASET, index))


# ----------------------------
# SGD loop
# ----------------------------
def fit_omega(
    dataset: Sequence[DrawVector],
    cfg: FitConfig,
    class_counts: Sequence[int],
    validation: Optional[Sequence[DrawVector]] = None,
) -> FitTrace:
    """
    SGD on log ω. One Monte Carlo sample per datum per step; the minibatch
    gradient is the mean of the per-datum gradients, reduced in batch order.
    """
    class_counts = tuple(int(m) for m in class_counts)
    draws = _check_dataset(dataset, class_counts)
    validation = list(validation) if validation else list(dataset)
    if _check_dataset(validation, class_counts) != draws:
        raise DomainError("validation vectors use a different number of draws")

    c = len(class_counts)
    log_w = np.zeros(c) if cfg.init_log_weights is None else np.asarray(cfg.init_log_weights, dtype=float)
    if log_w.shape != (c,):
        raise ConfigError(f"{log_w.size} initial log weights for {c} classes")
    scale = 1.0 / draws if (cfg.normalize_by_draws and draws > 0) else 1.0

    train_rng = make_rng(cfg.seed, STREAM_TRAIN)
    val_rng = make_rng(cfg.seed, STREAM_VALIDATION)

    def urn_of(lw: np.ndarray) -> UrnSpec:
        return UrnSpec(class_counts, draws, tuple(lw))

    trace = FitTrace()
    trace.steps.append(0)
    trace.epochs.append(0)
    trace.train_loss.append(math.nan)
    trace.tau.append(anneal_temperature(0, cfg))
    trace.log_weights.append(tuple(log_w))
    trace.val_loss.append(validation_loss(urn_of(log_w), validation, val_rng, trace.tau[0]))

    t = 0
    n_train = len(dataset)
    for epoch in range(1, cfg.epochs + 1):
        order = train_rng.permutation(n_train)
        for start in range(0, n_train, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            tau = anneal_temperature(t, cfg)
            urn = urn_of(log_w)
            grad = np.zeros(c)
            loss = 0.0
            for j in batch:
                x = dataset[int(j)]
                draw, jac = sample_with_jacobian(urn, tau, NoiseBundle.draw(urn, train_rng))
                loss += mse_loss(x, draw)
                grad += mse_loss_grad(x, draw, jac)
            grad /= len(batch)
            loss /= len(batch)
            log_w = log_w - cfg.learning_rate * scale * grad
            if not np.all(np.isfinite(log_w)):
                raise DomainError(f"log weights diverged at step {t + 1}: {log_w}")
            t += 1
            trace.steps.append(t)
            trace.epochs.append(epoch)
            trace.train_loss.append(loss)
            trace.tau.append(tau)
            trace.log_weights.append(tuple(log_w))
        val = validation_loss(urn_of(log_w), validation, val_rng, anneal_temperature(t, cfg))
        trace.val_loss.append(val)
        logging.info(
            "[Fit] epoch %d/%d: train=%.3f val=%.3f tau=%.4f log ω=%s",
            epoch, cfg.epochs, trace.train_loss[-1], val, trace.tau[-1],
            np.array2string(log_w, precision=4),
        )
    return trace
