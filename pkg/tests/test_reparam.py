# tests/test_reparam.py
import math

import numpy as np
import pytest

from fishergrad.errors import DomainError
from fishergrad.hypergeom import LogPmfTable, UrnSpec, fisher_uni_log_pmf_table
from fishergrad.reparam import (
    NoiseBundle,
    make_rng,
    merge_classes,
    relax_and_select,
    sample_batch,
    sample_differentiable,
    sample_exact,
    sample_gumbel,
    sample_with_jacobian,
    soft_count_jacobian,
    soft_counts_frozen,
)
from tests.conftest import random_urn

TWO_BY_TWO = np.array([1 / 13, 8 / 13, 4 / 13])


# ----------------------------
# Random streams + noise
# ----------------------------
def test_make_rng_is_reproducible_per_stream():
    a = make_rng(7, 2).random(8)
    b = make_rng(7, 2).random(8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, make_rng(7, 3).random(8))
    assert not np.array_equal(a, make_rng(8, 2).random(8))
    with pytest.raises(DomainError):
        make_rng(-1)


def test_gumbel_moments():
    g = sample_gumbel(make_rng(0), 10**6)
    assert np.all(np.isfinite(g))
    assert g.mean() == pytest.approx(np.euler_gamma, abs=0.01)
    assert g.var() == pytest.approx(math.pi**2 / 6, abs=0.02)


def test_gumbel_needs_positive_length():
    with pytest.raises(DomainError):
        sample_gumbel(make_rng(0), 0)


def test_noise_bundle_shape(small_urn):
    noise = NoiseBundle.draw(small_urn, make_rng(1))
    assert [len(g) for g in noise.components] == [4, 6, 5]
    with pytest.raises(DomainError):
        noise.check(UrnSpec.central((3, 5), 2))
    with pytest.raises(DomainError):
        NoiseBundle((np.array([0.0, math.inf]),))


# ----------------------------
# Merge + single step
# ----------------------------
def test_merge_classes(small_weighted_urn):
    pair = merge_classes(small_weighted_urn, 0, 5)
    assert (pair.m_left, pair.m_right) == (3, 9)
    assert math.exp(pair.log_w_right) == pytest.approx(26 / 9)
    uniform = merge_classes(UrnSpec.central((3, 5, 4), 5), 1, 2)
    assert uniform.log_w_left == pytest.approx(0.0) and uniform.log_w_right == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(DomainError):
        merge_classes(small_weighted_urn, 2, 1)
    with pytest.raises(DomainError):
        merge_classes(small_weighted_urn, 1, 10)


def test_relax_and_select_forced_outcome(rng):
    table = LogPmfTable.degenerate(4, 2)
    soft, idx = relax_and_select(table, rng.gumbel(size=4), 0.7)
    assert idx == 2
    assert soft.tolist() == [0.0, 0.0, 1.0, 0.0]


def test_relax_and_select_index_ignores_tau(rng):
    table = fisher_uni_log_pmf_table(10, 7, 0.4, -0.1, 9)
    for _ in range(200):
        g = rng.gumbel(size=11)
        assert relax_and_select(table, g, 10.0)[1] == relax_and_select(table, g, 0.01)[1]


def test_gumbel_max_frequencies_match_table():
    table = fisher_uni_log_pmf_table(2, 2, math.log(2.0), 0.0, 2)
    gen = make_rng(3)
    draws = 10**5
    hits = np.zeros(3)
    for _ in range(draws):
        hits[relax_and_select(table, sample_gumbel(gen, 3), 1.0)[1]] += 1
    assert 0.5 * np.abs(hits / draws - TWO_BY_TWO).sum() < 0.01


def test_relax_and_select_length_mismatch():
    table = fisher_uni_log_pmf_table(2, 2, 0.0, 0.0, 2)
    with pytest.raises(DomainError):
        relax_and_select(table, np.zeros(4), 1.0)


# ----------------------------
# Differentiable sampler
# ----------------------------
def test_sampler_edge_draw_counts(rng):
    empty = sample_differentiable(UrnSpec.from_weights((3, 4, 2), 0, (1, 2, 3)), 1.0, rng=rng)
    assert empty.hard_counts.counts == (0, 0, 0)
    full = sample_differentiable(UrnSpec.from_weights((3, 4, 2), 9, (1, 2, 3)), 1.0, rng=rng)
    assert full.hard_counts.counts == (3, 4, 2)


def test_relaxed_draw_invariants(rng):
    for _ in range(200):
        urn = random_urn(rng, max_m=12)
        tau = float(rng.choice([0.05, 0.5, 1.0, 5.0]))
        draw = sample_differentiable(urn, tau, rng=rng)
        x = draw.hard_counts
        assert x.in_support(urn)
        for i, onehot in enumerate(draw.soft_onehots):
            assert len(onehot) == urn.class_counts[i] + 1
            assert abs(onehot.sum() - 1.0) <= 1e-10
            assert int(np.argmax(onehot)) == x.counts[i]
            assert draw.soft_counts[i] == pytest.approx(float(np.arange(len(onehot)) @ onehot), abs=1e-9)
        assert len(draw.perturbed_logits) == len(draw.log_weights_table) == urn.num_classes


def test_sampler_needs_exactly_one_noise_source(small_urn, rng):
    with pytest.raises(DomainError):
        sample_differentiable(small_urn, 1.0)
    with pytest.raises(DomainError):
        sample_differentiable(small_urn, 1.0, rng=rng, noise=NoiseBundle.draw(small_urn, rng))
    with pytest.raises(DomainError):
        sample_differentiable(small_urn, 0.0, rng=rng)


def test_central_reference_urn_means():
    urn = UrnSpec.central((200, 200, 200), 180)
    hard = sample_batch(urn, 20000, make_rng(11), mode="differentiable").hard
    np.testing.assert_allclose(hard.mean(axis=0), [60, 60, 60], atol=1.5)


def test_soft_counts_approach_hard_counts(reference_urn):
    gen = make_rng(5)
    for tau, share in ((0.01, 0.90), (1e-4, 0.99)):
        close = 0
        for _ in range(2000):
            draw = sample_differentiable(reference_urn, tau, rng=gen)
            close += np.max(np.abs(draw.soft_counts - np.asarray(draw.hard_counts.counts))) < 0.05
        assert close / 2000 >= share, tau


def test_scale_shift_keeps_hard_counts(reference_urn, rng):
    shifted = reference_urn.shifted(3.0)
    for _ in range(100):
        noise = NoiseBundle.draw(reference_urn, rng)
        a = sample_differentiable(reference_urn, 1.0, noise=noise)
        b = sample_differentiable(shifted, 1.0, noise=noise)
        assert a.hard_counts == b.hard_counts
        np.testing.assert_allclose(a.soft_counts, b.soft_counts, atol=1e-8)


# ----------------------------
# Exact sampler + batches
# ----------------------------
def test_exact_sampler_frequencies(two_class_urn):
    hard = sample_batch(two_class_urn, 10**5, make_rng(9), mode="exact").hard
    freq = np.bincount(hard[:, 0], minlength=3) / len(hard)
    assert 0.5 * np.abs(freq - TWO_BY_TWO).sum() < 0.01
    assert np.all(hard.sum(axis=1) == 2)


def test_exact_sampler_zero_draws(rng):
    assert sample_exact(UrnSpec.central((4, 4, 4), 0), rng).counts == (0, 0, 0)


def test_sample_batch_shapes_and_modes(small_weighted_urn):
    exact = sample_batch(small_weighted_urn, 50, make_rng(1), mode="exact")
    assert exact.hard.shape == (50, 3) and exact.soft is None
    diff = sample_batch(small_weighted_urn, 50, make_rng(1), mode="differentiable", tau=0.5)
    assert diff.hard.shape == diff.soft.shape == (50, 3)
    assert sample_batch(small_weighted_urn, 0, make_rng(1)).hard.shape == (0, 3)
    with pytest.raises(DomainError):
        sample_batch(small_weighted_urn, 5, make_rng(1), mode="wallenius")
    with pytest.raises(DomainError):
        sample_batch(small_weighted_urn, -1, make_rng(1))


# ----------------------------
# Jacobian
# ----------------------------
def _finite_difference(urn, tau, noise, reference, h=1e-5):
    lw = np.asarray(urn.log_weights)
    cols = []
    for j in range(urn.num_classes):
        step = np.zeros_like(lw)
        step[j] = h
        up = soft_counts_frozen(urn.with_log_weights(lw + step), tau, noise, reference)
        down = soft_counts_frozen(urn.with_log_weights(lw - step), tau, noise, reference)
        cols.append((up - down) / (2 * h))
    return np.stack(cols, axis=1)


def test_frozen_surrogate_reproduces_reference(small_weighted_urn, rng):
    noise = NoiseBundle.draw(small_weighted_urn, rng)
    draw = sample_differentiable(small_weighted_urn, 0.8, noise=noise)
    np.testing.assert_allclose(soft_counts_frozen(small_weighted_urn, 0.8, noise, draw), draw.soft_counts, atol=1e-12)


def test_jacobian_matches_finite_differences():
    gen = make_rng(2024)
    for _ in range(10):
        m = tuple(int(x) for x in gen.integers(1, 51, size=3))
        n = int(gen.integers(1, sum(m)))
        urn = UrnSpec.from_weights(m, n, tuple(gen.uniform(0.2, 5.0, size=3)))
        noise = NoiseBundle.draw(urn, gen)
        draw, jac = sample_with_jacobian(urn, 1.0, noise)
        fd = _finite_difference(urn, 1.0, noise, draw)
        J = jac.matrix
        assert np.all(np.isfinite(J))
        # relative 1e-4 on entries that matter; an absolute floor absorbs rounding in the differences
        assert np.all(np.abs(fd - J) <= 1e-4 * np.abs(J) + 1e-7), (urn, J, fd)
        np.testing.assert_allclose(J[-1], -J[:-1].sum(axis=0), atol=1e-10)


def test_jacobian_cross_class_entries_are_nonzero(small_weighted_urn, rng):
    J = soft_count_jacobian(small_weighted_urn, 1.0, NoiseBundle.draw(small_weighted_urn, rng)).matrix
    assert np.any(np.abs(J[0, 1:]) > 1e-6)


def test_jacobian_vanishes_at_high_temperature(rng):
    urn = UrnSpec.central((2, 2, 2), 2)
    for _ in range(50):
        J = soft_count_jacobian(urn, 1e3, NoiseBundle.draw(urn, rng)).matrix
        assert np.max(np.abs(J)) < 1e-3


def test_jacobian_respects_urn_symmetry():
    urn = UrnSpec.central((6, 6, 6), 7)
    gen = make_rng(77)
    for _ in range(200):
        J = soft_count_jacobian(urn, 1.0, NoiseBundle.draw(urn, gen)).matrix
        # adding a constant to every log ω leaves soft counts unchanged
        np.testing.assert_allclose(J.sum(axis=1), 0.0, atol=1e-9)
        # classes 2 and 3 are interchangeable from the point of view of class 1
        assert J[0, 1] == pytest.approx(J[0, 2], abs=1e-12)
        assert J[0, 0] >= -1e-12

    pair = UrnSpec.central((6, 6), 6)
    for _ in range(200):
        J = soft_count_jacobian(pair, 1.0, NoiseBundle.draw(pair, gen)).matrix
        assert J[0, 0] == pytest.approx(J[1, 1], abs=1e-9)
        assert J[0, 1] == pytest.approx(J[1, 0], abs=1e-12)


def test_jacobian_vjp(small_weighted_urn, rng):
    jac = soft_count_jacobian(small_weighted_urn, 1.0, NoiseBundle.draw(small_weighted_urn, rng))
    v = np.array([1.0, -2.0, 0.5])
    np.testing.assert_allclose(jac.vjp(v), v @ jac.matrix)
