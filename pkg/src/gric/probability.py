"""Probability-mass evaluation and rate accounting.

Each quantized latent is modeled as a Gaussian convolved with a unit uniform,
so its mass at integer k is Phi((k + .5 - mu)/sigma) - Phi((k - .5 - mu)/sigma).
Phi is evaluated with scipy's ndtr (double-precision erf, abs error well under
1e-9).  For coding, (mu, sigma) are discretized onto shared grids so encoder
and decoder derive identical integer frequency tables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import ConfigError

SIGMA_MIN = 0.11
SIGMA_MAX = 256.0
SCALE_LEVELS = 64
TOTAL_FREQ = 1 << 16
MU_STEP = 1.0 / 65536.0
MIN_PROB = 2.0 ** -16
RAW_ESCAPE_BITS = 16


def default_scale_table() -> np.ndarray:
    """64 log-spaced sigma levels from 0.11 to 256, endpoints exact."""
    levels = np.exp(np.linspace(np.log(SIGMA_MIN), np.log(SIGMA_MAX), SCALE_LEVELS))
    levels[0] = SIGMA_MIN
    levels[-1] = SIGMA_MAX
    return levels.astype(np.float32)


def validate_scale_table(levels: np.ndarray) -> np.ndarray:
    if levels.ndim != 1 or levels.shape[0] < 2:
        raise ConfigError("scale table must be a vector of at least two levels")
    if np.any(np.diff(levels.astype(np.float64)) <= 0) or levels[0] <= 0:
        raise ConfigError("scale table must be strictly increasing and positive")
    return levels


def gaussian_uniform_pmf(k, mu, sigma):
    """Mass of the Gaussian-convolved-with-unit-uniform model at integer k.

    Accepts scalars or broadcastable arrays; computes in float64.
    """
    sigma_arr = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma_arr <= 0):
        raise ConfigError("gaussian_uniform_pmf requires sigma > 0")
    k_arr = np.asarray(k, dtype=np.float64)
    mu_arr = np.asarray(mu, dtype=np.float64)
    out = ndtr((k_arr + 0.5 - mu_arr) / sigma_arr) - ndtr((k_arr - 0.5 - mu_arr) / sigma_arr)
    if np.isscalar(k) and np.isscalar(mu) and np.isscalar(sigma):
        return float(out)
    return out


def snap_sigma(sigma: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Clamp to the table range, then snap to the nearest level (ties go lower)."""
    levels = table.astype(np.float64)
    s = np.clip(np.asarray(sigma, dtype=np.float64), levels[0], levels[-1])
    mids = (levels[:-1] + levels[1:]) / 2.0
    idx = np.searchsorted(mids, s, side="left")
    return table[idx]


def quantize_mu(mu: np.ndarray) -> np.ndarray:
    """Round to the nearest multiple of 2^-16 (ties to even), in float32."""
    m = np.asarray(mu, dtype=np.float32)
    return (np.round(m * np.float32(65536.0)) / np.float32(65536.0)).astype(np.float32)


def quantize_gaussian_params(mu, sigma, table):
    return quantize_mu(mu), snap_sigma(sigma, table)


@dataclass
class QuantizedPmf:
    """Integer frequency table over [-L, L] plus a trailing escape bucket.

    freqs has 2L+2 entries (symbols -L..L, then escape) summing to exactly
    2^16; cum is the 2L+3 cumulative table starting at 0.
    """

    support: int
    freqs: np.ndarray
    cum: np.ndarray

    @classmethod
    def from_freqs(cls, support: int, freqs) -> "QuantizedPmf":
        f = np.asarray(freqs, dtype=np.int64)
        if f.shape != (2 * support + 2,):
            raise ConfigError(f"pmf over [-{support}, {support}] needs {2 * support + 2} buckets")
        if f.sum() != TOTAL_FREQ:
            raise ConfigError(f"pmf frequencies sum to {f.sum()}, expected {TOTAL_FREQ}")
        cum = np.zeros(f.shape[0] + 1, dtype=np.int64)
        np.cumsum(f, out=cum[1:])
        return cls(support, f, cum)

    @property
    def escape_index(self) -> int:
        return 2 * self.support + 1

    def symbol_index(self, symbol: int) -> int:
        """Bucket index for a symbol; the escape bucket if out of support."""
        if -self.support <= symbol <= self.support:
            return symbol + self.support
        return self.escape_index


def _steal_counts(freqs_row: np.ndarray, amount: int) -> None:
    """Remove `amount` counts, proportionally to bucket size, keeping all >= 1."""
    total = int(freqs_row.sum())
    take = np.minimum((amount * freqs_row) // total, freqs_row - 1)
    freqs_row -= take
    rest = amount - int(take.sum())
    if rest:
        order = np.argsort(-freqs_row, kind="stable")
        k = 0
        while rest > 0:
            j = order[k % len(order)]
            if freqs_row[j] > 1:
                freqs_row[j] -= 1
                rest -= 1
            k += 1


def _largest_remainder_rows(probs: np.ndarray) -> np.ndarray:
    """Per-row integer frequencies summing to 2^16, every bucket >= 1.

    Plain largest-remainder rounding of p * 2^16 (fractional ties break
    toward the lower bucket index), then zero buckets are raised to 1 with
    the lift stolen proportionally from the large buckets.  Re-derivation on
    the decode side is integer-identical; buckets that never starve are
    distorted by at most one count.
    """
    n = probs.shape[1]
    if n >= TOTAL_FREQ:
        raise ConfigError(f"support too wide for 16-bit frequencies ({n} buckets)")
    t = probs * float(TOTAL_FREQ)
    base = np.floor(t)
    rem = t - base
    freqs = base.astype(np.int64)
    short = TOTAL_FREQ - freqs.sum(axis=1)
    order = np.argsort(-rem, axis=1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.broadcast_to(np.arange(n), order.shape).copy(), axis=1)
    freqs += rank < short[:, None]
    for r in np.flatnonzero((freqs == 0).any(axis=1)):
        zeros = freqs[r] == 0
        freqs[r, zeros] = 1
        _steal_counts(freqs[r], int(zeros.sum()))
    return freqs


def build_quantized_pmf_batch(mu_q: np.ndarray, sigma_q: np.ndarray, support: int):
    """Frequency/cumulative tables for C channels at once: (C, 2L+2), (C, 2L+3)."""
    if support < 1:
        raise ConfigError("pmf support must be >= 1")
    mu = np.asarray(mu_q, dtype=np.float64).reshape(-1, 1)
    sigma = np.asarray(sigma_q, dtype=np.float64).reshape(-1, 1)
    bounds = np.arange(-support, support + 2, dtype=np.float64) - 0.5
    cdf = ndtr((bounds[None, :] - mu) / sigma)
    probs = np.empty((mu.shape[0], 2 * support + 2), dtype=np.float64)
    probs[:, :-1] = np.diff(cdf, axis=1)
    probs[:, -1] = cdf[:, 0] + (1.0 - cdf[:, -1])  # analytic tail mass -> escape
    freqs = _largest_remainder_rows(probs)
    cum = np.zeros((freqs.shape[0], freqs.shape[1] + 1), dtype=np.int64)
    np.cumsum(freqs, axis=1, out=cum[:, 1:])
    return freqs, cum


def build_quantized_pmf(mu_q: float, sigma_q: float, support: int) -> QuantizedPmf:
    freqs, cum = build_quantized_pmf_batch(
        np.asarray([mu_q]), np.asarray([sigma_q]), support
    )
    return QuantizedPmf(support, freqs[0], cum[0])


def pmf_batch_rows(support: int, freqs: np.ndarray, cum: np.ndarray) -> list[QuantizedPmf]:
    return [QuantizedPmf(support, freqs[c], cum[c]) for c in range(freqs.shape[0])]


def rate_bits(pmf, symbol: int | None = None) -> float:
    """Ideal code length in bits.

    For a QuantizedPmf: -log2(freq/2^16) of the symbol's bucket, plus 16 raw
    bits when the symbol falls in the escape bucket.  For a bare probability:
    -log2(p).
    """
    if isinstance(pmf, QuantizedPmf):
        if symbol is None:
            raise ConfigError("rate_bits over a QuantizedPmf needs a symbol")
        idx = pmf.symbol_index(symbol)
        f = int(pmf.freqs[idx])
        if f <= 0:
            raise ConfigError(f"symbol {symbol} has zero frequency")
        bits = 16.0 - np.log2(f)
        if idx == pmf.escape_index:
            bits += RAW_ESCAPE_BITS
        return float(bits)
    p = float(pmf)
    if p <= 0.0:
        raise ConfigError("rate_bits requires positive probability")
    return float(-np.log2(p))


def confidence(symbols: np.ndarray, mu1: np.ndarray, sigma1: np.ndarray) -> float:
    """Geometric mean across channels of the per-channel model mass.

    The per-channel mass is floored at 2^-16 before the log, so the result
    always lies in (0, 1].
    """
    p = gaussian_uniform_pmf(
        np.asarray(symbols, dtype=np.float64), mu1, np.asarray(sigma1, dtype=np.float64)
    )
    p = np.maximum(p, MIN_PROB)
    return float(np.exp(np.mean(np.log(p))))


@dataclass
class FactorizedCdf:
    """Per-channel integer cumulative tables for the hyper-latent model."""

    support: int
    cum: np.ndarray  # (channels, 2*support + 3), monotone, last column = 2^16

    def __post_init__(self):
        expected = 2 * self.support + 3
        if self.cum.ndim != 2 or self.cum.shape[1] != expected:
            raise ConfigError(f"factorized cdf needs {expected} columns, got {self.cum.shape}")
        c = self.cum.astype(np.int64)
        if np.any(c[:, 0] != 0) or np.any(c[:, -1] != TOTAL_FREQ):
            raise ConfigError("factorized cdf must start at 0 and end at 2^16")
        if np.any(np.diff(c, axis=1) < 0):
            raise ConfigError("factorized cdf must be monotone non-decreasing")

    @property
    def channels(self) -> int:
        return self.cum.shape[0]

    def pmf(self, channel: int) -> QuantizedPmf:
        if not 0 <= channel < self.channels:
            raise ConfigError(f"no factorized table for channel {channel}")
        cum = self.cum[channel].astype(np.int64)
        return QuantizedPmf(self.support, np.diff(cum), cum)

    def prob(self, k: int, channel: int) -> float:
        pmf = self.pmf(channel)
        return float(pmf.freqs[pmf.symbol_index(k)]) / TOTAL_FREQ


def uniform_factorized_cdf(channels: int, support: int) -> FactorizedCdf:
    """Near-uniform tables (largest-remainder split of 2^16 over all buckets)."""
    n = 2 * support + 2
    base, extra = divmod(TOTAL_FREQ, n)
    freqs = np.full(n, base, dtype=np.int64)
    freqs[:extra] += 1
    cum = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(freqs, out=cum[1:])
    return FactorizedCdf(support, np.tile(cum, (channels, 1)))


def total_rate(latent_bits: float, hyper_bits: float) -> float:
    if latent_bits < 0 or hyper_bits < 0:
        raise ConfigError("rates must be non-negative")
    return latent_bits + hyper_bits


def bits_per_pixel(latent_bits: float, hyper_bits: float, true_h: int, true_w: int) -> float:
    return total_rate(latent_bits, hyper_bits) / (true_h * true_w)
