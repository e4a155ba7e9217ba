import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdet.adam import AdamState, adam_step
from tdet.losses import (
    LossConfig,
    RpnBatch,
    classification_loss,
    regression_loss,
    smooth_l1,
    smooth_l1_grad,
    softmax_cross_entropy,
    total_loss,
)


class TestClassificationLoss:
    def test_perfect_prediction_near_zero(self):
        p = np.array([1.0, 0.0, 1.0])
        p_star = np.array([1.0, 0.0, 1.0])
        assert classification_loss(p, p_star) < 1e-6

    def test_uniform_prediction_is_ln2(self):
        p = np.full(8, 0.5)
        p_star = np.array([1, 0, 1, 0, 1, 0, 1, 0], dtype=float)
        assert classification_loss(p, p_star) == pytest.approx(np.log(2), abs=1e-9)

    def test_matches_scalar_oracle(self):
        rs = np.random.RandomState(0)
        p = rs.uniform(0.05, 0.95, 20)
        p_star = rs.randint(0, 2, 20).astype(float)
        expect = 0.0
        for pi, si in zip(p, p_star):
            expect += -np.log(si * pi + (1 - si) * (1 - pi))
        expect /= 20
        assert classification_loss(p, p_star) == pytest.approx(expect, abs=1e-6)

    def test_nonnegative(self):
        rs = np.random.RandomState(1)
        for _ in range(20):
            p = rs.uniform(0, 1, 10)
            p_star = rs.randint(0, 2, 10).astype(float)
            assert classification_loss(p, p_star) >= 0.0

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            classification_loss(np.ones(3) * 0.5, np.ones(4))


class TestSmoothL1:
    def test_zero_at_zero(self):
        assert smooth_l1(0.0) == 0.0

    def test_continuous_at_knee(self):
        knee = 1.0 / 9.0
        inside = 0.5 * (3.0 * knee) ** 2
        outside = knee - 0.5 / 9.0
        assert inside == pytest.approx(1.0 / 18.0, abs=1e-12)
        assert outside == pytest.approx(1.0 / 18.0, abs=1e-12)
        assert smooth_l1(knee - 1e-9) == pytest.approx(1.0 / 18.0, abs=1e-8)
        assert smooth_l1(knee + 1e-9) == pytest.approx(1.0 / 18.0, abs=1e-8)

    def test_unit_value(self):
        assert smooth_l1(1.0) == pytest.approx(1.0 - 1.0 / 18.0, abs=1e-9)

    @given(st.floats(-5, 5, allow_nan=False))
    @settings(max_examples=60, deadline=None)
    def test_even_and_nonnegative(self, x):
        v = smooth_l1(x)
        assert v >= 0.0
        assert v == pytest.approx(smooth_l1(-x), abs=1e-12)
        if abs(x) > 1e-100:  # below this, squaring underflows to zero
            assert v > 0.0

    def test_grad_continuous_at_knee(self):
        knee = 1.0 / 9.0
        # slope from both branch formulas at the knee
        inside_slope = 9.0 * knee
        outside_slope = 1.0
        assert inside_slope == pytest.approx(outside_slope, abs=1e-12)
        assert smooth_l1_grad(knee - 1e-9) == pytest.approx(1.0, abs=1e-7)
        assert smooth_l1_grad(knee + 1e-9) == pytest.approx(1.0, abs=1e-7)


class TestRegressionLoss:
    def test_zero_when_matched(self):
        t = np.ones((4, 4))
        assert regression_loss(t, t, np.ones(4)) == 0.0

    def test_gated_by_negative_labels(self):
        rs = np.random.RandomState(2)
        t = rs.randn(6, 4)
        t_star = rs.randn(6, 4)
        assert regression_loss(t, t_star, np.zeros(6)) == 0.0

    def test_single_positive_analytic(self):
        t = np.array([[1.0, 0.0, 0.0, 0.0]])
        t_star = np.zeros((1, 4))
        v = regression_loss(t, t_star, np.ones(1), config=LossConfig(alpha=1.0, sigma=3.0))
        assert v == pytest.approx(1.0 - 1.0 / 18.0, abs=1e-9)

    def test_invariant_to_unmatched_predictions(self):
        rs = np.random.RandomState(3)
        t_star = rs.randn(5, 4)
        p_star = np.array([1.0, 0, 0, 1.0, 0])
        t1 = rs.randn(5, 4)
        t2 = t1.copy()
        t2[p_star == 0] = rs.randn(3, 4) * 100
        assert regression_loss(t1, t_star, p_star) == pytest.approx(
            regression_loss(t2, t_star, p_star)
        )


class TestTotalLoss:
    def test_perfect_batch(self):
        batch = RpnBatch(
            p=np.array([1.0, 0.0, 1.0, 0.0]),
            p_star=np.array([1.0, 0.0, 1.0, 0.0]),
            t=np.zeros((2, 4)),
            t_star=np.zeros((2, 4)),
            p_star_reg=np.ones(2),
        )
        loss, gp, gt = total_loss(batch)
        assert loss < 1e-6
        np.testing.assert_allclose(gp, 0.0, atol=1e-6)
        np.testing.assert_allclose(gt, 0.0, atol=1e-6)

    def test_composes_terms(self):
        rs = np.random.RandomState(4)
        p = rs.uniform(0.1, 0.9, 10)
        p_star = rs.randint(0, 2, 10).astype(float)
        t = rs.randn(5, 4)
        t_star = rs.randn(5, 4)
        p_star_reg = np.array([1.0, 1, 0, 1, 0])
        batch = RpnBatch(p, p_star, t, t_star, p_star_reg)
        loss, _, _ = total_loss(batch)
        expect = classification_loss(p, p_star) + regression_loss(t, t_star, p_star_reg)
        assert loss == pytest.approx(expect, abs=1e-9)


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss, grad = softmax_cross_entropy(np.zeros((3, 4)), np.array([0, 1, 2]))
        assert loss == pytest.approx(np.log(4), abs=1e-9)
        assert grad.shape == (3, 4)

    def test_gradient_matches_fd(self):
        rs = np.random.RandomState(5)
        logits = rs.randn(4, 5)
        labels = rs.randint(0, 5, 4)
        _, grad = softmax_cross_entropy(logits, labels)
        eps = 1e-5
        for i in range(4):
            for j in range(5):
                lp = logits.copy()
                lp[i, j] += eps
                lm = logits.copy()
                lm[i, j] -= eps
                fd = (softmax_cross_entropy(lp, labels)[0] - softmax_cross_entropy(lm, labels)[0]) / (
                    2 * eps
                )
                assert grad[i, j] == pytest.approx(fd, abs=1e-6)


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        params = {"w": np.array([1.0, -2.0], dtype=np.float32)}
        state = AdamState()
        adam_step(params, {"w": np.zeros(2, dtype=np.float32)}, state)
        np.testing.assert_array_equal(params["w"], [1.0, -2.0])
        assert state.step == 1

    def test_first_step_is_signed_lr(self):
        g = np.array([0.3, -0.7, 2.0], dtype=np.float32)
        params = {"w": np.zeros(3, dtype=np.float32)}
        state = AdamState(lr=1e-4)
        adam_step(params, {"w": g}, state)
        np.testing.assert_allclose(params["w"], -1e-4 * np.sign(g), rtol=1e-4)

    def test_quadratic_descent_matches_reference_recurrence(self):
        # f(w) = w^2 from w0 = 1: w must decrease strictly toward 0, and the
        # trajectory must match an independently coded Adam recurrence.
        lr, b1, b2, eps = 1e-4, 0.9, 0.999, 1e-8
        w_ref, m, v = 1.0, 0.0, 0.0
        params = {"w": np.array([1.0], dtype=np.float64)}
        state = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps)
        seen = [1.0]
        for t in range(1, 11):
            g = 2.0 * w_ref
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            w_ref -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
            adam_step(params, {"w": 2.0 * params["w"]}, state)
            assert params["w"][0] == pytest.approx(w_ref, rel=1e-9)
            assert params["w"][0] < seen[-1]
            seen.append(params["w"][0])
        assert seen[-1] < 1.0

    def test_zero_lr_is_identity(self):
        params = {"w": np.array([3.0], dtype=np.float32)}
        state = AdamState(lr=0.0)
        adam_step(params, {"w": np.array([5.0], dtype=np.float32)}, state)
        assert params["w"][0] == 3.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            adam_step(
                {"w": np.zeros(2, dtype=np.float32)},
                {"w": np.zeros(3, dtype=np.float32)},
                AdamState(),
            )


class TestRpnBatchValidation:
    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ValueError):
            RpnBatch(np.ones(3) * 0.5, np.ones(2), np.zeros((1, 4)), np.zeros((1, 4)))

    def test_reg_gate_required_when_counts_differ(self):
        with pytest.raises(ValueError):
            RpnBatch(np.ones(3) * 0.5, np.ones(3), np.zeros((2, 4)), np.zeros((2, 4)))
