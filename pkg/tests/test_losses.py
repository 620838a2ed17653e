"""Loss family: frozen hand values, definitions, and gradient checks."""

import math

import numpy as np
import pytest

from curation_forge.errors import InfiniteLossError
from curation_forge.losses import (
    HUBER_DELTA_DEFAULT,
    ScoreDistribution,
    cross_entropy,
    cross_entropy_grad,
    emd,
    emd_grad,
    huber_distribution,
    huber_distribution_grad,
    mae,
    mae_grad,
    mos_of_distribution,
    mse,
    mse_grad,
)
from oracles import central_diff, cross_entropy_oracle, emd_oracle


def random_distribution(rng, n=5, floor=0.05):
    p = rng.uniform(floor, 1.0, n)
    return p / p.sum()


class TestScalarLosses:
    def test_zero_at_match(self):
        assert mae(3.0, 3.0) == 0.0
        assert mse(3.0, 3.0) == 0.0

    def test_hand_values(self):
        assert mae(3.0, 5.0) == 2.0
        assert mse(3.0, 5.0) == 4.0

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            q, qh = rng.uniform(-10, 10, 2)
            if abs(q - qh) < 1e-3:  # mae kink
                qh += 0.01
            for f, g in ((mae, mae_grad), (mse, mse_grad)):
                x = np.array([qh])
                num = central_diff(lambda v: f(q, v[0]), x, 0)
                assert g(q, qh) == pytest.approx(num, rel=1e-6, abs=1e-8)


class TestMosOfDistribution:
    def test_one_hot(self):
        assert mos_of_distribution([0, 0, 1, 0, 0]) == 3.0

    def test_uniform(self):
        assert mos_of_distribution([0.2] * 5) == 3.0

    def test_symmetric_counts(self):
        assert mos_of_distribution([2, 0, 0, 0, 2]) == 3.0

    def test_scaling_invariance(self):
        rng = np.random.default_rng(5)
        for _ in range(500):
            p = rng.uniform(0.01, 1.0, 5)
            lam = 2.0 ** rng.integers(-20, 21)
            assert mos_of_distribution(p * lam) == mos_of_distribution(p)

    def test_zero_mass_rejected(self):
        with pytest.raises(ValueError):
            mos_of_distribution([0.0] * 5)
        with pytest.raises(ValueError):
            ScoreDistribution(np.zeros(5))

    def test_score_distribution_view(self):
        d = ScoreDistribution(np.array([2.0, 0.0, 0.0, 0.0, 2.0]))
        assert d.normalized().sum() == pytest.approx(1.0)
        assert mos_of_distribution(d) == 3.0


class TestCrossEntropy:
    def test_one_hot_match_is_zero(self):
        p = np.array([0.0, 1.0, 0.0, 0.0, 0.0])
        assert cross_entropy(p, p) == 0.0

    def test_hand_value(self):
        p = np.array([1.0, 0, 0, 0, 0])
        ph = np.array([0.5, 0.125, 0.125, 0.125, 0.125])
        assert cross_entropy(p, ph) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_matches_definition_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(300):
            p = random_distribution(rng)
            ph = random_distribution(rng)
            assert cross_entropy(p, ph) == pytest.approx(cross_entropy_oracle(p, ph), abs=1e-12)

    def test_zero_support_raises(self):
        p = np.array([1.0, 0, 0, 0, 0])
        ph = np.array([0.0, 0.25, 0.25, 0.25, 0.25])
        with pytest.raises(InfiniteLossError):
            cross_entropy(p, ph)
        with pytest.raises(InfiniteLossError):
            cross_entropy_grad(p, ph)

    def test_gibbs_lower_bound(self):
        # CE(p, q) >= CE(p, p) = entropy of p
        rng = np.random.default_rng(8)
        for _ in range(200):
            p = random_distribution(rng)
            q = random_distribution(rng)
            assert cross_entropy(p, q) >= cross_entropy(p, p) - 1e-12

    def test_gradient(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            p = random_distribution(rng)
            ph = random_distribution(rng)
            grad = cross_entropy_grad(p, ph)
            for i in range(5):
                num = central_diff(lambda v: -(p[p > 0] * np.log(v[p > 0])).sum(), ph, i)
                assert grad[i] == pytest.approx(num, rel=1e-5, abs=1e-9)


class TestHuber:
    def test_zero_at_match(self):
        p = np.array([0.2, 0.2, 0.2, 0.2, 0.2])
        assert huber_distribution(p, p) == 0.0

    def test_linear_branch_hand_value(self):
        # single coordinate error of 1: delta * (1 - delta/2) with delta = 1/9
        p = np.array([1.0, 0.0])
        ph = np.array([0.0, 0.0])
        assert huber_distribution(p, ph) == pytest.approx(17.0 / 162.0, abs=1e-15)

    def test_branch_continuity_and_slope(self):
        delta = HUBER_DELTA_DEFAULT
        quad = 0.5 * delta**2
        lin = delta * (delta - 0.5 * delta)
        assert quad == pytest.approx(lin, abs=1e-12)
        for eps in (1e-9, -1e-9):
            x = delta + eps
            inside = 0.5 * x * x
            outside = delta * (abs(x) - 0.5 * delta)
            assert inside == pytest.approx(outside, abs=1e-12)

    def test_delta_must_be_positive(self):
        p = np.zeros(5)
        with pytest.raises(ValueError):
            huber_distribution(p, p, delta=0.0)

    def test_gradient(self):
        rng = np.random.default_rng(10)
        for _ in range(200):
            p = random_distribution(rng)
            ph = random_distribution(rng)
            if np.any(np.isclose(np.abs(p - ph), HUBER_DELTA_DEFAULT, atol=1e-4)):
                continue  # avoid the branch switch inside the FD stencil
            grad = huber_distribution_grad(p, ph)
            for i in range(5):
                num = central_diff(lambda v: huber_distribution(p, v), ph, i)
                assert grad[i] == pytest.approx(num, rel=1e-5, abs=1e-9)


class TestEmd:
    def test_zero_at_match(self):
        p = np.array([0.1, 0.2, 0.3, 0.2, 0.2])
        assert emd(p, p) == 0.0

    def test_adjacent_one_hot(self):
        p = np.array([1.0, 0, 0, 0, 0])
        ph = np.array([0.0, 1.0, 0, 0, 0])
        assert emd(p, ph) == pytest.approx(math.sqrt(1.0 / 5.0), abs=1e-12)

    def test_matches_definition_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            p = random_distribution(rng)
            ph = random_distribution(rng)
            assert emd(p, ph) == pytest.approx(emd_oracle(p, ph), abs=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            p = random_distribution(rng)
            ph = random_distribution(rng)
            assert emd(p, ph) == pytest.approx(emd(ph, p), abs=1e-15)

    def test_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            emd(np.array([1.0, 1.0, 0, 0, 0]), np.array([0.2] * 5))

    def test_ordinal_structure_on_one_hot_pairs(self):
        # moving the predicted mass further from the truth bin never helps
        for truth in range(5):
            p = np.zeros(5)
            p[truth] = 1.0
            losses_by_distance = {}
            for pred in range(5):
                ph = np.zeros(5)
                ph[pred] = 1.0
                losses_by_distance.setdefault(abs(pred - truth), []).append(emd(p, ph))
            dists = sorted(losses_by_distance)
            maxima = [max(losses_by_distance[d]) for d in dists]
            minima = [min(losses_by_distance[d]) for d in dists]
            for nearer, farther in zip(maxima, minima[1:]):
                assert farther >= nearer

    def test_gradient(self):
        rng = np.random.default_rng(13)
        ok = 0
        for _ in range(200):
            p = random_distribution(rng)
            ph = random_distribution(rng)
            grad = emd_grad(p, ph)
            for i in range(5):
                # finite differences on the raw formula (no renormalization)
                def raw(v):
                    d = np.cumsum(p) - np.cumsum(v)
                    return math.sqrt((d * d).sum() / len(p))

                num = central_diff(raw, ph, i)
                assert grad[i] == pytest.approx(num, rel=1e-5, abs=1e-9)
            ok += 1
        assert ok == 200


class TestNonnegativity:
    def test_all_losses_nonnegative(self):
        rng = np.random.default_rng(14)
        for _ in range(200):
            p = random_distribution(rng)
            ph = random_distribution(rng)
            assert cross_entropy(p, ph) >= 0.0
            assert huber_distribution(p, ph) >= 0.0
            assert emd(p, ph) >= 0.0
            q, qh = rng.uniform(-5, 5, 2)
            assert mae(q, qh) >= 0.0
            assert mse(q, qh) >= 0.0
