import math

import numpy as np
import pytest

from pseudopool.losses import (
    ClassPrior,
    LossSpec,
    aux_loss,
    cross_entropy,
    la_loss,
    overall_loss,
    xent_rows,
)


def brute_force_adjusted_xent(logits, y, probs):
    """Unstabilized direct evaluation of the adjusted softmax cross-entropy."""
    adjusted = np.asarray(logits, dtype=np.float64) + np.log(probs)
    weights = np.exp(adjusted)
    return -math.log(weights[y] / weights.sum())


class TestClassPrior:
    def test_rejects_zero_entry(self):
        with pytest.raises(ValueError):
            ClassPrior(np.array([1.0, 0.0]))

    def test_rejects_non_simplex(self):
        with pytest.raises(ValueError):
            ClassPrior(np.array([0.6, 0.6]))

    def test_from_counts(self):
        prior = ClassPrior.from_counts(np.array([3, 1]))
        assert np.allclose(prior.probabilities, [0.75, 0.25])


class TestLaLoss:
    def test_uniform_everything(self):
        prior = ClassPrior(np.array([0.5, 0.5]))
        assert la_loss(np.zeros(2), 0, prior) == pytest.approx(math.log(2), abs=1e-12)

    def test_equal_logits_recover_prior(self):
        # with flat logits the adjusted softmax equals the prior itself
        prior = ClassPrior(np.array([0.9, 0.1]))
        assert la_loss(np.zeros(2), 1, prior) == pytest.approx(-math.log(0.1), abs=1e-9)

    def test_uniform_prior_reduces_to_plain_ce(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            c = int(rng.integers(2, 8))
            logits = rng.normal(scale=3.0, size=c)
            y = int(rng.integers(c))
            prior = ClassPrior.uniform(c)
            assert abs(la_loss(logits, y, prior) - cross_entropy(logits, y)) < 1e-9

    def test_matches_brute_force_on_small_logits(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            c = int(rng.integers(2, 6))
            logits = rng.normal(size=c)
            probs = rng.dirichlet(np.ones(c)) + 0.01
            probs /= probs.sum()
            y = int(rng.integers(c))
            prior = ClassPrior(probs)
            expected = brute_force_adjusted_xent(logits, y, probs)
            assert la_loss(logits, y, prior) == pytest.approx(expected, abs=1e-12)

    def test_positive_unless_saturated(self):
        prior = ClassPrior.uniform(3)
        assert la_loss(np.array([1.0, -2.0, 0.3]), 0, prior) > 0

    def test_stable_at_extreme_logits(self):
        prior = ClassPrior.uniform(3)
        for logits in ([1000.0, -1000.0, 0.0], [-1000.0, -1000.0, -1000.0]):
            value = la_loss(np.array(logits), 0, prior)
            assert np.isfinite(value)

    def test_prediction_shift_property(self):
        # the prior flips the adjusted argmax exactly when the log-prior gap
        # exceeds the logit margin
        logits = np.array([1.0, 0.0])
        small_gap = ClassPrior(np.array([0.4, 0.6]))  # ln(0.6/0.4)=0.405 < 1
        big_gap = ClassPrior(np.array([0.1, 0.9]))  # ln(0.9/0.1)=2.197 > 1
        assert np.argmax(logits + small_gap.log) == np.argmax(logits) == 0
        assert np.argmax(logits + big_gap.log) == 1

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            la_loss(np.zeros(3), 0, ClassPrior.uniform(2))


class TestAuxLoss:
    def test_flat_logits(self):
        assert aux_loss(np.zeros(4), 2) == pytest.approx(math.log(4), abs=1e-12)

    def test_saturated_correct(self):
        logits = np.zeros(4)
        logits[1] = 30.0
        assert aux_loss(logits, 1) < 1e-9

    def test_matches_independent_softmax_ce(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            logits = rng.normal(size=3)
            y = int(rng.integers(3))
            probs = np.exp(logits) / np.exp(logits).sum()
            assert aux_loss(logits, y) == pytest.approx(-math.log(probs[y]), abs=1e-12)


class TestOverallLoss:
    def test_primary_only(self):
        prior = ClassPrior.uniform(2)
        total, routing = overall_loss([(LossSpec("la_primary", prior), 0.7)])
        assert total == pytest.approx(0.7)
        assert routing == ["primary"]

    def test_additivity_with_aux(self):
        prior = ClassPrior.uniform(2)
        total, routing = overall_loss(
            [(LossSpec("la_primary", prior), 0.7), (LossSpec("aux_consistency"), 0.5)]
        )
        assert total == pytest.approx(1.2)
        assert routing == ["primary", "auxiliary"]

    def test_aux_with_zero_omega_rejected(self):
        with pytest.raises(ValueError):
            LossSpec("aux_consistency", omega=0)

    def test_primary_with_omega_one_rejected(self):
        with pytest.raises(ValueError):
            LossSpec("la_primary", ClassPrior.uniform(2), omega=1)

    def test_la_kinds_require_prior(self):
        with pytest.raises(ValueError):
            LossSpec("la_auxiliary")

    def test_auxiliary_la_routes_to_auxiliary(self):
        spec = LossSpec("la_auxiliary", ClassPrior.uniform(3))
        assert spec.omega == 1
        assert spec.branch == "auxiliary"


class TestXentRows:
    def test_matches_scalar_ops(self):
        rng = np.random.default_rng(3)
        logits = rng.normal(size=(5, 4))
        labels = rng.integers(4, size=5)
        prior = ClassPrior.uniform(4)
        rows = xent_rows(logits, labels, prior.log)
        for i in range(5):
            assert rows[i] == pytest.approx(la_loss(logits[i], labels[i], prior), abs=1e-12)
