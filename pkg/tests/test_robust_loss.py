import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustbank.robust_loss import (
    bce_logit_grad,
    bce_per_sample,
    cvar_active_weights,
    cvar_kink_minimum,
    cvar_lambda_search,
    cvar_value,
)

loss_vectors = st.lists(
    st.floats(min_value=0.0, max_value=50.0, allow_nan=False), min_size=1, max_size=64
).map(np.array)


class TestBce:
    def test_zero_logit_positive_label(self):
        assert bce_per_sample(np.array([0.0]), np.array([1.0]))[0] == pytest.approx(
            np.log(2.0), abs=1e-12
        )

    def test_logit_two_negative_label(self):
        # ln(1 + e^2)
        assert bce_per_sample(np.array([2.0]), np.array([0.0]))[0] == pytest.approx(
            2.1269280110429727, abs=1e-12
        )

    def test_large_logit_no_overflow(self):
        val = bce_per_sample(np.array([100.0]), np.array([1.0]))[0]
        assert np.isfinite(val)
        assert 0 < val < 1e-40

    def test_extreme_logits_finite(self):
        z = np.array([-100.0, 100.0, -500.0, 500.0])
        y = np.array([0.0, 1.0, 1.0, 0.0])
        assert np.isfinite(bce_per_sample(z, y)).all()

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            bce_per_sample(np.zeros(3), np.zeros(2))

    def test_grad_at_zero(self):
        assert bce_logit_grad(np.array([0.0]), np.array([1.0]))[0] == -0.5
        assert bce_logit_grad(np.array([0.0]), np.array([0.0]))[0] == 0.5

    def test_grad_matches_finite_differences(self, rng):
        z = rng.normal(size=20) * 3
        y = rng.integers(0, 2, size=20).astype(float)
        h = 1e-6
        fd = (bce_per_sample(z + h, y) - bce_per_sample(z - h, y)) / (2 * h)
        assert np.abs(bce_logit_grad(z, y) - fd).max() < 1e-8

    def test_grad_in_open_interval(self, rng):
        z = rng.normal(size=100) * 10
        y = rng.integers(0, 2, size=100).astype(float)
        g = bce_logit_grad(z, y)
        assert (g > -1).all() and (g < 1).all()


class TestCvarSearch:
    def test_top_half_mean(self):
        sol = cvar_lambda_search(np.array([1.0, 2.0, 3.0, 4.0]), 0.5)
        assert sol.value == pytest.approx(3.5, abs=1e-9)
        assert 2.0 - 1e-6 <= sol.lam <= 3.0 + 1e-6

    def test_constant_losses(self):
        sol = cvar_lambda_search(np.full(7, 0.7), 0.3)
        assert sol.lam == 0.7
        assert sol.value == 0.7
        assert sol.active_count == 0

    def test_alpha_one_is_mean(self):
        sol = cvar_lambda_search(np.array([1.0, 2.0, 3.0]), 1.0)
        assert sol.value == pytest.approx(2.0, abs=1e-12)

    def test_fractional_alpha_n(self):
        sol = cvar_lambda_search(np.array([1.0, 2.0, 3.0]), 0.5)
        assert sol.lam == pytest.approx(2.0, abs=1e-7)
        assert sol.value == pytest.approx(8.0 / 3.0, abs=1e-9)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            cvar_lambda_search(np.array([]), 0.5)

    def test_alpha_out_of_range(self):
        for alpha in (0.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                cvar_lambda_search(np.array([1.0]), alpha)

    def test_single_sample(self):
        sol = cvar_lambda_search(np.array([0.42]), 0.1)
        assert sol.value == pytest.approx(0.42)
        assert sol.active_count == 0

    @settings(max_examples=200, deadline=None)
    @given(losses=loss_vectors, alpha=st.sampled_from([0.1, 0.3, 0.5, 0.7, 0.9, 1.0]))
    def test_matches_kink_enumeration(self, losses, alpha):
        sol = cvar_lambda_search(losses, alpha)
        _, oracle = cvar_kink_minimum(losses, alpha)
        assert abs(sol.value - oracle) <= 1e-5 * max(1.0, oracle)

    @settings(max_examples=100, deadline=None)
    @given(losses=loss_vectors)
    def test_value_at_least_mean(self, losses):
        for alpha in (0.2, 0.5, 1.0):
            sol = cvar_lambda_search(losses, alpha)
            assert sol.value >= losses.mean() - 1e-9

    @settings(max_examples=100, deadline=None)
    @given(losses=loss_vectors)
    def test_monotone_nonincreasing_in_alpha(self, losses):
        grid = [0.1, 0.2, 0.4, 0.6, 0.8, 1.0]
        values = [cvar_lambda_search(losses, a).value for a in grid]
        for lo, hi in zip(values[1:], values[:-1]):
            assert lo <= hi + 1e-9

    @settings(max_examples=100, deadline=None)
    @given(losses=loss_vectors, alpha=st.sampled_from([0.1, 0.5, 0.9, 1.0]))
    def test_lambda_in_bracket_and_active_bound(self, losses, alpha):
        sol = cvar_lambda_search(losses, alpha)
        assert losses.min() <= sol.lam <= losses.max()
        assert sol.active_count <= np.ceil(alpha * losses.size)


class TestCvarValue:
    def test_hand_evaluation(self):
        assert cvar_value(np.array([1.0, 2.0, 3.0, 4.0]), 0.5, 2.0) == pytest.approx(3.5)

    def test_lambda_above_max(self):
        losses = np.array([1.0, 2.0])
        assert cvar_value(losses, 0.5, 5.0) == 5.0

    def test_lambda_zero_alpha_one(self):
        losses = np.array([1.0, 2.0, 3.0])
        assert cvar_value(losses, 1.0, 0.0) == pytest.approx(2.0)


class TestActiveWeights:
    def test_half_active(self):
        w = cvar_active_weights(np.array([1.0, 2.0, 3.0, 4.0]), 2.5, 0.5)
        assert np.array_equal(w, [0.0, 0.0, 0.5, 0.5])
        assert w.sum() == pytest.approx(1.0)

    def test_lambda_at_max_all_zero(self):
        losses = np.array([1.0, 2.0, 3.0])
        assert cvar_active_weights(losses, 3.0, 0.5).sum() == 0.0

    def test_alpha_one_below_min_uniform(self):
        losses = np.array([1.0, 2.0, 3.0])
        w = cvar_active_weights(losses, 0.5, 1.0)
        assert np.allclose(w, 1.0 / 3.0)

    @settings(max_examples=100, deadline=None)
    @given(losses=loss_vectors, alpha=st.sampled_from([0.1, 0.5, 1.0]))
    def test_weight_mass_bound(self, losses, alpha):
        sol = cvar_lambda_search(losses, alpha)
        w = cvar_active_weights(losses, sol.lam, alpha)
        n = losses.size
        assert w.sum() <= 1.0 + 1.0 / (alpha * n) + 1e-12

    def test_subgradient_sign_structure(self):
        losses = np.array([1.0, 2.0, 3.0, 4.0])
        alpha = 0.5
        n = losses.size

        def subgrad(lam):
            return 1.0 - np.count_nonzero(losses > lam) / (alpha * n)

        sol = cvar_lambda_search(losses, alpha)
        assert subgrad(sol.lam - 0.5) <= 0
        assert subgrad(sol.lam + 0.5) >= 0
