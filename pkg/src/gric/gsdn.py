"""Generalized subtractive-and-divisive normalization and its inverse.

Forward:  w_i = (u_i - (nu_i + sum_j tau_ij u_j)) / (beta_i + sum_j gamma_ij u_j^2)^(1/2)
Inverse:  u_i = w_i * (beta_i + sum_j gamma_ij w_j^2)^(1/2) + (nu_i + sum_j tau_ij w_j)

The sums include the self term j = i.  Parameters are shared across the
spatial dimensions; the inverse direction carries its own independent
parameter set and is treated as a transform in its own right, not as an
exact functional inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

BETA_MIN = 1e-6


@dataclass
class GsdnParams:
    beta: np.ndarray   # (N,), > 0
    gamma: np.ndarray  # (N, N), >= 0
    nu: np.ndarray     # (N,)
    tau: np.ndarray    # (N, N), unconstrained

    @property
    def channels(self) -> int:
        return self.beta.shape[0]

    def param_count(self) -> int:
        n = self.channels
        return 2 * (n + n * n)

    def validate(self, name: str = "gsdn") -> "GsdnParams":
        """Reject corrupt parameters, clamp borderline ones (load-time check).

        Negative beta is corruption and is rejected; beta below the positive
        floor is clamped up, negative gamma entries are clamped to zero.
        """
        n = self.channels
        if self.gamma.shape != (n, n) or self.nu.shape != (n,) or self.tau.shape != (n, n):
            raise ConfigError(f"{name}: inconsistent parameter shapes for N={n}")
        for arr, label in ((self.beta, "beta"), (self.gamma, "gamma"),
                           (self.nu, "nu"), (self.tau, "tau")):
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name}: non-finite {label}")
        if np.any(self.beta < 0):
            raise ConfigError(f"{name}: negative beta")
        self.beta = np.maximum(self.beta, self.beta.dtype.type(BETA_MIN))
        self.gamma = np.maximum(self.gamma, self.gamma.dtype.type(0))
        return self


def _check_channels(x: np.ndarray, p: GsdnParams) -> None:
    if x.ndim != 3 or x.shape[0] != p.channels:
        raise ConfigError(f"gsdn: input shape {x.shape} incompatible with N={p.channels}")


def gsdn_forward(u: np.ndarray, p: GsdnParams) -> np.ndarray:
    _check_channels(u, p)
    num = u - (p.nu[:, None, None] + np.tensordot(p.tau, u, axes=([1], [0])))
    den = np.sqrt(p.beta[:, None, None] + np.tensordot(p.gamma, u * u, axes=([1], [0])))
    return num / den


def igsdn_forward(w: np.ndarray, p_hat: GsdnParams) -> np.ndarray:
    _check_channels(w, p_hat)
    scale = np.sqrt(p_hat.beta[:, None, None] + np.tensordot(p_hat.gamma, w * w, axes=([1], [0])))
    shift = p_hat.nu[:, None, None] + np.tensordot(p_hat.tau, w, axes=([1], [0]))
    return w * scale + shift


def gsdn_input_gradient(u: np.ndarray, p: GsdnParams, upstream: np.ndarray) -> np.ndarray:
    """Analytic dL/du for L = <upstream, gsdn_forward(u)>.

    With d_i = (beta_i + sum_j gamma_ij u_j^2)^(1/2) and w the forward output:
      dL/du_l = g_l/d_l - sum_i g_i tau_il / d_i - u_l * sum_i g_i w_i gamma_il / d_i^2
    """
    _check_channels(u, p)
    if upstream.shape != u.shape:
        raise ConfigError("gsdn: upstream shape must match input")
    den = np.sqrt(p.beta[:, None, None] + np.tensordot(p.gamma, u * u, axes=([1], [0])))
    num = u - (p.nu[:, None, None] + np.tensordot(p.tau, u, axes=([1], [0])))
    w = num / den
    g_over_d = upstream / den
    direct = g_over_d - np.tensordot(p.tau, g_over_d, axes=([0], [0]))
    pooled = np.tensordot(p.gamma, upstream * w / (den * den), axes=([0], [0]))
    return direct - u * pooled
