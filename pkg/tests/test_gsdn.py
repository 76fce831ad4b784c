import numpy as np
import pytest

from gric.errors import ConfigError
from gric.gsdn import GsdnParams, gsdn_forward, gsdn_input_gradient, igsdn_forward


def scalar_params(beta, gamma, nu, tau):
    return GsdnParams(
        beta=np.array([beta], np.float64),
        gamma=np.array([[gamma]], np.float64),
        nu=np.array([nu], np.float64),
        tau=np.array([[tau]], np.float64),
    )


def random_params(rng, n, dtype=np.float64):
    return GsdnParams(
        beta=rng.uniform(0.3, 2.0, n).astype(dtype),
        gamma=rng.uniform(0.0, 0.5, (n, n)).astype(dtype),
        nu=rng.uniform(-0.5, 0.5, n).astype(dtype),
        tau=rng.uniform(-0.3, 0.3, (n, n)).astype(dtype),
    )


def as_grid(v):
    return np.asarray(v, np.float64).reshape(-1, 1, 1)


class TestForward:
    def test_unit_denominator(self):
        out = gsdn_forward(as_grid(2.0), scalar_params(1.0, 0.0, 0.0, 0.0))
        assert out.item() == pytest.approx(2.0)

    def test_divisive_hand_value(self):
        out = gsdn_forward(as_grid(2.0), scalar_params(1.0, 1.0, 0.0, 0.0))
        assert out.item() == pytest.approx(2.0 / np.sqrt(5.0), abs=1e-9)

    def test_subtractive_hand_value(self):
        out = gsdn_forward(as_grid(2.0), scalar_params(1.0, 0.0, 0.5, 0.25))
        assert out.item() == pytest.approx(1.0, abs=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(ConfigError):
            gsdn_forward(np.zeros((2, 1, 1)), scalar_params(1, 0, 0, 0))

    def test_denominator_never_degenerate(self):
        rng = np.random.default_rng(0)
        p = random_params(rng, 4)
        p.beta[:] = 1e-6
        u = rng.normal(0, 100, (4, 8, 8))
        out = gsdn_forward(u, p)
        assert np.all(np.isfinite(out))

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(1)
        n = 5
        p = random_params(rng, n)
        u = rng.normal(size=(n, 3, 3))
        perm = rng.permutation(n)
        pp = GsdnParams(p.beta[perm], p.gamma[np.ix_(perm, perm)],
                        p.nu[perm], p.tau[np.ix_(perm, perm)])
        assert np.allclose(gsdn_forward(u, p)[perm], gsdn_forward(u[perm], pp), atol=1e-12)


class TestInverse:
    def test_additive_hand_value(self):
        out = igsdn_forward(as_grid(1.0), scalar_params(1.0, 0.0, 0.5, 0.0))
        assert out.item() == pytest.approx(1.5, abs=1e-12)

    def test_zero_input(self):
        p = scalar_params(2.0, 0.3, 0.0, 0.7)
        assert igsdn_forward(as_grid(0.0), p).item() == 0.0

    def test_affine_inversion_exact(self):
        rng = np.random.default_rng(2)
        n = 6
        beta = rng.uniform(0.2, 3.0, n)
        nu = rng.uniform(-1, 1, n)
        p = GsdnParams(beta, np.zeros((n, n)), nu, np.zeros((n, n)))
        u = rng.normal(0, 2, (n, 4, 4))
        round_trip = igsdn_forward(gsdn_forward(u, p), p)
        assert np.max(np.abs(round_trip - u)) < 1e-6


class TestGradient:
    def test_affine_case_passthrough(self):
        p = scalar_params(1.0, 0.0, 0.0, 0.0)
        g = np.full((1, 2, 2), 1.7)
        grad = gsdn_input_gradient(np.zeros((1, 2, 2)), p, g)
        assert np.allclose(grad, g, atol=1e-12)

    def test_zero_upstream_zero_gradient(self):
        rng = np.random.default_rng(3)
        p = random_params(rng, 3)
        grad = gsdn_input_gradient(rng.normal(size=(3, 2, 2)), p, np.zeros((3, 2, 2)))
        assert not grad.any()

    @pytest.mark.parametrize("n", [1, 2, 4, 8])
    def test_matches_finite_differences(self, n):
        rng = np.random.default_rng(10 + n)
        for _ in range(25):
            p = random_params(rng, n)
            u = rng.normal(0, 1.5, (n, 2, 2))
            g = rng.normal(size=(n, 2, 2))
            grad = gsdn_input_gradient(u, p, g)
            h = 1e-3
            fd = np.zeros_like(u)
            for idx in np.ndindex(u.shape):
                up, dn = u.copy(), u.copy()
                up[idx] += h
                dn[idx] -= h
                fd[idx] = np.sum(g * (gsdn_forward(up, p) - gsdn_forward(dn, p))) / (2 * h)
            denom = np.maximum(np.abs(fd), 1e-3)
            assert np.max(np.abs(grad - fd) / denom) < 1e-4


class TestParams:
    def test_param_count(self):
        rng = np.random.default_rng(4)
        p = random_params(rng, 7)
        assert p.param_count() == 2 * (7 + 49)

    def test_negative_beta_rejected(self):
        p = scalar_params(-1.0, 0.0, 0.0, 0.0)
        with pytest.raises(ConfigError, match="beta"):
            p.validate()

    def test_small_beta_clamped(self):
        p = scalar_params(1e-9, 0.0, 0.0, 0.0).validate()
        assert p.beta[0] == pytest.approx(1e-6)

    def test_negative_gamma_clamped(self):
        p = scalar_params(1.0, -0.5, 0.0, 0.0).validate()
        assert p.gamma[0, 0] == 0.0
