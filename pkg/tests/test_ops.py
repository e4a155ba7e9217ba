import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdet import ops

from reference_impls import naive_bilinear, naive_conv2d, naive_deform_conv2d


def rand(shape, seed, lo=-1.0, hi=1.0):
    rs = np.random.RandomState(seed)
    return rs.uniform(lo, hi, size=shape).astype(np.float32)


class TestConv2d:
    def test_scaling_kernel_doubles(self):
        x = rand((2, 3, 5, 5), 0)
        w = np.zeros((3, 3, 1, 1), dtype=np.float32)
        for c in range(3):
            w[c, c, 0, 0] = 2.0
        y = ops.conv2d(x, w)
        np.testing.assert_allclose(y, 2.0 * x, rtol=0, atol=0)

    def test_identity_kernel(self):
        x = rand((1, 2, 6, 6), 1)
        w = np.zeros((2, 2, 3, 3), dtype=np.float32)
        w[0, 0, 1, 1] = 1.0
        w[1, 1, 1, 1] = 1.0
        y = ops.conv2d(x, w, stride=1, pad=1)
        np.testing.assert_allclose(y, x, atol=1e-7)

    def test_matches_naive_oracle(self):
        x = rand((2, 3, 8, 8), 2)
        w = rand((4, 3, 3, 3), 3)
        b = rand((4,), 4)
        for stride, pad in [(1, 0), (1, 1), (2, 1)]:
            y = ops.conv2d(x, w, b, stride=stride, pad=pad)
            ref = naive_conv2d(x, w, b, stride, pad)
            assert np.abs(y - ref).max() < 1e-5

    def test_translation_equivariance(self):
        x = rand((1, 2, 10, 10), 5)
        w = rand((3, 2, 3, 3), 6)
        shifted = np.zeros_like(x)
        shifted[:, :, 2:, 1:] = x[:, :, :-2, :-1]
        y = ops.conv2d(x, w, pad=1)
        ys = ops.conv2d(shifted, w, pad=1)
        np.testing.assert_allclose(ys[:, :, 3:-1, 2:-1], y[:, :, 1:-3, 1:-2], atol=1e-6)

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ops.ShapeError):
            ops.conv2d(rand((1, 3, 4, 4), 0), rand((2, 4, 3, 3), 1))

    def test_even_kernel_rejected(self):
        with pytest.raises(ops.ShapeError):
            ops.conv2d(rand((1, 2, 4, 4), 0), rand((2, 2, 2, 2), 1))

    def test_bad_stride_rejected(self):
        with pytest.raises(ops.ShapeError):
            ops.conv2d(rand((1, 2, 4, 4), 0), rand((2, 2, 3, 3), 1), stride=0)


class TestBilinearSample:
    def test_lattice_points_exact(self):
        plane = rand((4, 5), 7)
        for y in range(4):
            for x in range(5):
                assert ops.bilinear_sample(plane, x, y) == pytest.approx(
                    float(plane[y, x]), abs=1e-7
                )

    def test_analytic_mean(self):
        plane = np.array([[0.0, 1.0], [2.0, 3.0]], dtype=np.float32)
        assert ops.bilinear_sample(plane, 0.5, 0.5) == pytest.approx(1.5)

    def test_zero_exterior(self):
        plane = rand((3, 3), 8)
        assert ops.bilinear_sample(plane, -5.0, -5.0) == 0.0
        assert ops.bilinear_sample(plane, 10.0, 1.0) == 0.0

    def test_matches_oracle_at_random_points(self):
        plane = rand((6, 7), 9)
        rs = np.random.RandomState(10)
        for _ in range(50):
            x = rs.uniform(-2, 9)
            y = rs.uniform(-2, 8)
            assert ops.bilinear_sample(plane, x, y) == pytest.approx(
                naive_bilinear(plane, x, y), abs=1e-6
            )


class TestDeformConv2d:
    def test_zero_offsets_degenerate_to_conv(self):
        x = rand((2, 3, 7, 7), 11)
        w = rand((4, 3, 3, 3), 12)
        b = rand((4,), 13)
        off = np.zeros((2, 18, 7, 7), dtype=np.float32)
        y_def = ops.deform_conv2d(x, off, w, b, stride=1, pad=1)
        y_reg = ops.conv2d(x, w, b, stride=1, pad=1)
        assert np.abs(y_def - y_reg).max() < 1e-6

    def test_integer_offset_is_lattice_shift(self):
        x = rand((1, 2, 6, 6), 14)
        w = rand((2, 2, 3, 3), 15)
        off = np.zeros((1, 18, 6, 6), dtype=np.float32)
        off[:, 0::2] = 1.0  # dx = +1, dy = 0
        y_def = ops.deform_conv2d(x, off, w, stride=1, pad=1)
        shifted = np.zeros_like(x)
        shifted[:, :, :, :-1] = x[:, :, :, 1:]
        y_shift = ops.conv2d(shifted, w, stride=1, pad=1)
        # Interior only: at the left border the shifted copy's zero fill
        # differs from the deformable read of real pixels.
        np.testing.assert_allclose(y_def[:, :, :, 1:], y_shift[:, :, :, 1:], atol=1e-6)

    def test_random_fractional_offsets_match_oracle(self):
        x = rand((1, 2, 6, 6), 16)
        w = rand((3, 2, 3, 3), 17)
        b = rand((3,), 18)
        off = rand((1, 18, 6, 6), 19, lo=-2.0, hi=2.0)
        y = ops.deform_conv2d(x, off, w, b, stride=1, pad=1)
        ref = naive_deform_conv2d(x, off, w, b, 1, 1)
        assert np.abs(y - ref).max() < 1e-5

    def test_strided_matches_oracle(self):
        x = rand((2, 2, 8, 8), 20)
        w = rand((2, 2, 3, 3), 21)
        off = rand((2, 18, 4, 4), 22, lo=-1.5, hi=1.5)
        y = ops.deform_conv2d(x, off, w, stride=2, pad=1)
        ref = naive_deform_conv2d(x, off, w, None, 2, 1)
        assert np.abs(y - ref).max() < 1e-5

    def test_alignment_under_constant_integer_warp(self):
        # An input warped by a known integer displacement, convolved with
        # offsets equal to that displacement, reproduces the regular
        # convolution of the unwarped input.
        x = rand((1, 3, 12, 12), 23)
        w = rand((4, 3, 3, 3), 24)
        dx, dy = 2, 1
        warped = np.zeros_like(x)
        warped[:, :, dy:, dx:] = x[:, :, :-dy, :-dx]
        off = np.zeros((1, 18, 12, 12), dtype=np.float32)
        off[:, 0::2] = dx
        off[:, 1::2] = dy
        y_def = ops.deform_conv2d(warped, off, w, stride=1, pad=1)
        y_reg = ops.conv2d(x, w, stride=1, pad=1)
        m = max(dx, dy) + 1  # taps near the far border read past the warped copy
        assert np.abs(y_def[:, :, :-m, :-m] - y_reg[:, :, :-m, :-m]).max() < 1e-5

    def test_offset_shape_rejected(self):
        x = rand((1, 2, 6, 6), 25)
        w = rand((2, 2, 3, 3), 26)
        with pytest.raises(ops.ShapeError):
            ops.deform_conv2d(x, np.zeros((1, 17, 6, 6), np.float32), w, pad=1)
        with pytest.raises(ops.ShapeError):
            ops.deform_conv2d(x, np.zeros((1, 18, 5, 6), np.float32), w, pad=1)


class TestDeformBackward:
    def test_zero_upstream_gives_zero_grads(self):
        x = rand((1, 2, 6, 6), 27)
        w = rand((2, 2, 3, 3), 28)
        off = rand((1, 18, 6, 6), 29, lo=-1, hi=1)
        gy = np.zeros((1, 2, 6, 6), dtype=np.float32)
        gx, goff, gw, gb = ops.deform_conv2d_backward(x, off, w, gy, stride=1, pad=1)
        assert not gx.any() and not goff.any() and not gw.any() and not gb.any()

    def test_zero_offsets_match_conv_backward(self):
        x = rand((1, 3, 6, 6), 30)
        w = rand((2, 3, 3, 3), 31)
        off = np.zeros((1, 18, 6, 6), dtype=np.float32)
        gy = rand((1, 2, 6, 6), 32)
        gx_d, _, gw_d, gb_d = ops.deform_conv2d_backward(x, off, w, gy, stride=1, pad=1)
        gx_c, gw_c, gb_c = ops.conv2d_backward(x, w, gy, stride=1, pad=1)
        np.testing.assert_allclose(gx_d, gx_c, atol=1e-6)
        np.testing.assert_allclose(gw_d, gw_c, atol=1e-6)
        np.testing.assert_allclose(gb_d, gb_c, atol=1e-6)

    def test_upstream_shape_rejected(self):
        x = rand((1, 2, 6, 6), 33)
        w = rand((2, 2, 3, 3), 34)
        off = np.zeros((1, 18, 6, 6), dtype=np.float32)
        with pytest.raises(ops.ShapeError):
            ops.deform_conv2d_backward(x, off, w, np.zeros((1, 2, 5, 6), np.float32), pad=1)


class TestActivations:
    def test_relu_all_negative(self):
        x = -np.abs(rand((1, 2, 3, 3), 35)) - 0.1
        assert not ops.relu(x).any()

    def test_softmax_uniform_channels(self):
        for c in (2, 5):
            x = np.full((1, c, 3, 3), 0.7, dtype=np.float32)
            y = ops.softmax_channels(x)
            np.testing.assert_allclose(y, 1.0 / c, atol=1e-6)

    @given(st.integers(0, 2**31 - 1), st.integers(1, 6))
    @settings(max_examples=25, deadline=None)
    def test_softmax_normalized_and_bounded(self, seed, c):
        x = rand((1, c, 4, 4), seed, lo=-5, hi=5)
        y = ops.softmax_channels(x)
        assert ((y > 0) & (y < 1.0 + 1e-6)).all()
        np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-6)

    def test_relu_backward_masks(self):
        x = np.array([[[[-1.0, 2.0], [0.0, 3.0]]]], dtype=np.float32)
        g = np.ones_like(x)
        np.testing.assert_array_equal(
            ops.relu_backward(x, g), np.array([[[[0.0, 1.0], [0.0, 1.0]]]], dtype=np.float32)
        )


class TestFiniteness:
    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=15, deadline=None)
    def test_outputs_finite(self, seed):
        x = rand((1, 2, 6, 6), seed, lo=-3, hi=3)
        w = rand((2, 2, 3, 3), seed + 1, lo=-3, hi=3)
        off = rand((1, 18, 6, 6), seed + 2, lo=-4, hi=4)
        assert np.isfinite(ops.conv2d(x, w, pad=1)).all()
        assert np.isfinite(ops.deform_conv2d(x, off, w, pad=1)).all()
