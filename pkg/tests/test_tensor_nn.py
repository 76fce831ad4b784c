import numpy as np
import pytest

from gric.errors import ConfigError
from gric.tensor_nn import (
    MASK_EXCLUSIVE,
    MASK_INCLUSIVE,
    ConvSpec,
    apply_mask,
    causal_mask,
    conv2d,
    conv_at,
    deconv2d,
    leaky_relu,
    masked_conv2d,
    masked_window,
    padded_window,
    unfold,
)


def _spec(k, cin, cout, stride=1, pad=None, mask="none", name=""):
    if pad is None:
        pad = k // 2
    return ConvSpec(k, cin, cout, stride, pad, mask, name)


class TestConv2d:
    def test_identity_1x1(self):
        x = np.arange(12, dtype=np.float32).reshape(3, 2, 2)
        w = np.eye(3, dtype=np.float32).reshape(3, 3, 1, 1)
        b = np.zeros(3, np.float32)
        out = conv2d(x, w, b, _spec(1, 3, 3, pad=0))
        assert np.array_equal(out, x)

    def test_delta_kernel(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 5, 5)).astype(np.float32)
        w = np.zeros((2, 2, 3, 3), np.float32)
        for c in range(2):
            w[c, c, 1, 1] = 1.0
        out = conv2d(x, w, np.zeros(2, np.float32), _spec(3, 2, 2))
        assert np.array_equal(out, x)

    def test_hand_evaluated_scale_and_bias(self):
        x = np.array([[[1.0, 2.0], [3.0, 4.0]]], dtype=np.float32)
        w = np.full((1, 1, 1, 1), 2.0, np.float32)
        b = np.full(1, 0.5, np.float32)
        out = conv2d(x, w, b, _spec(1, 1, 1, pad=0))
        assert np.array_equal(out, np.array([[[2.5, 4.5], [6.5, 8.5]]], np.float32))

    def test_strided_output_size(self):
        x = np.zeros((1, 11, 7), np.float32)
        out = conv2d(x, np.zeros((4, 1, 5, 5), np.float32), np.zeros(4, np.float32),
                     _spec(5, 1, 4, stride=2, pad=2))
        assert out.shape == (4, (11 + 4 - 5) // 2 + 1, (7 + 4 - 5) // 2 + 1)

    def test_linearity(self):
        rng = np.random.default_rng(1)
        spec = _spec(3, 2, 3)
        w = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
        b = np.zeros(3, np.float32)
        x = rng.normal(size=(2, 6, 6)).astype(np.float32)
        y = rng.normal(size=(2, 6, 6)).astype(np.float32)
        lhs = conv2d(2.0 * x + 3.0 * y, w, b, spec)
        rhs = 2.0 * conv2d(x, w, b, spec) + 3.0 * conv2d(y, w, b, spec)
        assert np.allclose(lhs, rhs, rtol=1e-5, atol=1e-5)

    def test_shape_mismatch_names_layer(self):
        x = np.zeros((2, 4, 4), np.float32)
        w = np.zeros((3, 2, 3, 3), np.float32)
        with pytest.raises(ConfigError, match="enc_test"):
            conv2d(x, w, np.zeros(3, np.float32), _spec(3, 4, 3, name="enc_test"))


class TestDeconv2d:
    def test_identity_k1_s1(self):
        x = np.arange(8, dtype=np.float32).reshape(2, 2, 2)
        w = np.eye(2, dtype=np.float32).reshape(2, 2, 1, 1)
        out = deconv2d(x, w, np.zeros(2, np.float32), _spec(1, 2, 2, pad=0))
        assert np.array_equal(out, x)

    def test_single_pixel_k2_s2_all_ones(self):
        x = np.ones((1, 1, 1), np.float32)
        w = np.ones((1, 1, 2, 2), np.float32)
        out = deconv2d(x, w, np.zeros(1, np.float32), _spec(2, 1, 1, stride=2, pad=0))
        assert np.array_equal(out, np.ones((1, 2, 2), np.float32))

    @pytest.mark.parametrize("h", range(1, 9))
    @pytest.mark.parametrize("w", range(1, 9))
    def test_exact_doubling_contract(self, h, w):
        x = np.random.default_rng(h * 10 + w).normal(size=(1, h, w)).astype(np.float32)
        wt = np.random.default_rng(0).normal(size=(1, 2, 5, 5)).astype(np.float32)
        out = deconv2d(x, wt, np.zeros(2, np.float32), _spec(5, 1, 2, stride=2, pad=0))
        assert out.shape == (2, 2 * h, 2 * w)

    def test_compose_with_stride2_conv_shapes(self):
        # four stride-2 deconvs recover x16 downsampling
        x = np.zeros((1, 3, 2), np.float32)
        wt = np.ones((1, 1, 5, 5), np.float32)
        for _ in range(4):
            x = deconv2d(x, wt, np.zeros(1, np.float32), _spec(5, 1, 1, stride=2, pad=0))
        assert x.shape == (1, 48, 32)

    def test_impossible_geometry_rejected(self):
        x = np.zeros((1, 2, 2), np.float32)
        w = np.zeros((1, 1, 4, 4), np.float32)
        with pytest.raises(ConfigError):
            deconv2d(x, w, np.zeros(1, np.float32), _spec(4, 1, 1, stride=1, pad=0))


class TestMaskedConv2d:
    def test_exclusive_all_ones_interior_count(self):
        x = np.ones((1, 5, 5), np.float32)
        w = np.ones((1, 1, 3, 3), np.float32)
        out = masked_conv2d(x, w, np.zeros(1, np.float32), _spec(3, 1, 1, mask=MASK_EXCLUSIVE))
        assert out[0, 2, 2] == 4.0  # three above + one left

    def test_exclusive_origin_is_bias_only(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(3, 4, 4)).astype(np.float32)
        w = rng.normal(size=(2, 3, 5, 5)).astype(np.float32)
        b = np.array([0.25, -1.5], np.float32)
        out = masked_conv2d(x, w, b, _spec(5, 3, 2, mask=MASK_EXCLUSIVE))
        assert np.array_equal(out[:, 0, 0], b)

    def test_inclusive_center_delta_is_identity(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 4, 4)).astype(np.float32)
        w = np.zeros((2, 2, 3, 3), np.float32)
        for c in range(2):
            w[c, c, 1, 1] = 1.0
        out = masked_conv2d(x, w, np.zeros(2, np.float32), _spec(3, 2, 2, mask=MASK_INCLUSIVE))
        assert np.array_equal(out, x)

    def test_mask_kind_none_rejected(self):
        x = np.zeros((1, 3, 3), np.float32)
        w = np.zeros((1, 1, 3, 3), np.float32)
        with pytest.raises(ConfigError):
            masked_conv2d(x, w, np.zeros(1, np.float32), _spec(3, 1, 1))

    def test_causal_independence_of_later_positions(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(2, 6, 6)).astype(np.float32)
        w = rng.normal(size=(2, 2, 5, 5)).astype(np.float32)
        b = rng.normal(size=2).astype(np.float32)
        spec = _spec(5, 2, 2, mask=MASK_EXCLUSIVE)
        base = masked_conv2d(x, w, b, spec)
        h, wd = 6, 6
        for i in (0, 7, 17, 35):
            iy, ix = divmod(i, wd)
            pert = x.copy()
            flat = pert.reshape(2, -1)
            flat[:, i:] = rng.normal(size=(2, h * wd - i)).astype(np.float32)
            out = masked_conv2d(pert, w, b, spec)
            assert np.array_equal(out[:, iy, ix], base[:, iy, ix])

    def test_matches_per_position_window_eval(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(3, 5, 5)).astype(np.float32)
        w = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
        b = rng.normal(size=4).astype(np.float32)
        full = masked_conv2d(x, w, b, _spec(3, 3, 4, mask=MASK_EXCLUSIVE))
        wm = apply_mask(w, MASK_EXCLUSIVE)
        for i in range(25):
            iy, ix = divmod(i, 5)
            win = masked_window(x, iy, ix, 3, MASK_EXCLUSIVE)
            assert np.allclose(conv_at(win, wm, b), full[:, iy, ix], rtol=1e-6, atol=1e-6)


class TestLeakyRelu:
    def test_positive_passthrough(self):
        assert leaky_relu(np.float32(3.0), 0.01) == np.float32(3.0)

    def test_negative_scaling(self):
        out = leaky_relu(np.array([-2.0], np.float32), 0.01)
        assert np.allclose(out, [-0.02])

    def test_zero_fixed_point(self):
        assert leaky_relu(np.zeros(1, np.float32), 0.3)[0] == 0.0

    def test_slope_domain(self):
        with pytest.raises(ConfigError):
            leaky_relu(np.zeros(1, np.float32), 1.5)

    def test_preserves_float32(self):
        assert leaky_relu(np.zeros(3, np.float32), 0.01).dtype == np.float32


class TestUnfold:
    def test_k1_identity(self):
        x = np.array([[[1.0, 2.0], [3.0, 4.0]]], np.float32)
        rows = unfold(x, 1)
        assert np.array_equal(rows, np.array([[1.0], [2.0], [3.0], [4.0]], np.float32))

    def test_k3_zero_padded_row(self):
        x = np.array([[[1.0, 2.0], [3.0, 4.0]]], np.float32)
        rows = unfold(x, 3)
        assert np.array_equal(rows[0], np.array([0, 0, 0, 0, 1, 2, 0, 3, 4], np.float32))

    def test_zero_input(self):
        rows = unfold(np.zeros((2, 3, 3), np.float32), 3)
        assert not rows.any()

    def test_row_dot_reproduces_conv(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(3, 6, 6)).astype(np.float32)
        w = rng.normal(size=(2, 3, 3, 3)).astype(np.float32)
        b = rng.normal(size=2).astype(np.float32)
        out = conv2d(x, w, b, _spec(3, 3, 2))
        rows = unfold(x, 3)
        wmat = np.ascontiguousarray(w.transpose(0, 2, 3, 1)).reshape(2, -1)
        recon = (rows @ wmat.T + b).T.reshape(2, 6, 6)
        assert np.allclose(recon, out, atol=1e-6)

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            unfold(np.zeros((1, 2, 2), np.float32), 2)


class TestWindows:
    def test_padded_window_corner(self):
        x = np.arange(9, dtype=np.float32).reshape(1, 3, 3)
        win = padded_window(x, 0, 0, 3)
        expect = np.array([[[0, 0, 0], [0, 0, 1], [0, 3, 4]]], np.float32)
        assert np.array_equal(win, expect)

    def test_causal_mask_counts(self):
        assert causal_mask(3, MASK_EXCLUSIVE).sum() == 4
        assert causal_mask(3, MASK_INCLUSIVE).sum() == 5
        assert causal_mask(5, MASK_EXCLUSIVE).sum() == 12

    def test_masked_window_zeroes_are_exact(self):
        x = np.full((1, 3, 3), -7.0, np.float32)
        win = masked_window(x, 1, 1, 3, MASK_EXCLUSIVE)
        flat = win.reshape(-1)
        assert np.array_equal(flat[4:], np.zeros(5, np.float32))
        # exact +0.0, never -0.0, so both codec sides hold identical buffers
        assert not np.signbit(flat[4:]).any()
