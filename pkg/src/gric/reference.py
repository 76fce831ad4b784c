"""Global reference search over decoded latents.

Latents are unfolded into k x k patches with the center tap and all
raster-later taps zeroed, so every patch row depends only on raster-prior
positions.  Cosine similarity against all earlier rows picks the best match;
the matched window (center kept this time) feeds the reference feature
extractor, gated by similarity * confidence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .tensor_nn import MASK_EXCLUSIVE, MASK_INCLUSIVE, masked_window, unfold

_unfold = unfold


@dataclass
class ReferenceMatch:
    target: int
    source: int | None
    similarity: float
    confidence: float = 0.0


def patch_row(latents: np.ndarray, iy: int, ix: int, k: int) -> np.ndarray:
    """One masked patch row in unfold layout (window raster, then channel)."""
    win = masked_window(latents, iy, ix, k, MASK_EXCLUSIVE)
    return np.ascontiguousarray(win.transpose(1, 2, 0)).reshape(-1)


def masked_patches(latents: np.ndarray, k: int) -> np.ndarray:
    """(H*W, k*k*C) masked patch matrix in raster row order."""
    if k % 2 != 1:
        raise ConfigError(f"patch kernel {k} must be odd")
    c, h, w = latents.shape
    rows = _unfold(latents, k)
    center = (k * k) // 2
    keep = np.zeros(k * k, dtype=bool)
    keep[:center] = True
    keep_cols = np.repeat(keep, c)
    return np.where(keep_cols[None, :], rows, latents.dtype.type(0))


class PatchIndex:
    """Incremental patch store; encoder and decoder drive it identically.

    Rows must be appended in raster order (set_row(i) before query(i)); a
    query at i scores the stored rows j < i.
    """

    def __init__(self, positions: int, dim: int, dtype=np.float32):
        self.rows = np.zeros((positions, dim), dtype=dtype)
        self.norms = np.zeros(positions, dtype=dtype)
        self._filled = 0

    def set_row(self, i: int, row: np.ndarray) -> None:
        if i != self._filled:
            raise ConfigError(f"patch rows must arrive in raster order (got {i}, expected {self._filled})")
        self.rows[i] = row
        self.norms[i] = np.sqrt(row @ row)
        self._filled = i + 1

    def query(self, i: int) -> np.ndarray:
        """Cosine scores of row i against rows j < i; zero-norm pairs score 0."""
        if i >= self._filled:
            raise ConfigError(f"row {i} not set before query")
        row = self.rows[i]
        norm_i = self.norms[i]
        dots = self.rows[:i] @ row
        denom = self.norms[:i] * norm_i
        safe = np.where(denom > 0, denom, denom.dtype.type(1))
        return np.where(denom > 0, dots / safe, denom.dtype.type(0))


def similarity_row(patches: np.ndarray, i: int) -> np.ndarray:
    """Functional one-shot form of PatchIndex.query over a full patch matrix."""
    idx = PatchIndex(i + 1, patches.shape[1], dtype=patches.dtype)
    for j in range(i + 1):
        idx.set_row(j, patches[j])
    return idx.query(i)


def best_match(scores: np.ndarray, target: int) -> ReferenceMatch:
    """Argmax over raw scores, first index on ties; none if empty or all <= 0."""
    if target == 0 or scores.size == 0:
        return ReferenceMatch(target, None, 0.0)
    j = int(np.argmax(scores))
    s = float(scores[j])
    if s <= 0.0:
        return ReferenceMatch(target, None, 0.0)
    return ReferenceMatch(target, j, s)


def gather_relevant(latents: np.ndarray, source: int | None, k: int) -> np.ndarray:
    """(C, k, k) window at the matched position, center kept, later taps zeroed."""
    c, h, w = latents.shape
    if source is None:
        return np.zeros((c, k, k), dtype=latents.dtype)
    sy, sx = divmod(source, w)
    return masked_window(latents, sy, sx, k, MASK_INCLUSIVE)


def gate(features: np.ndarray, similarity: float, conf: float) -> np.ndarray:
    """Scale all channels by the scalar max(S, 0) * U."""
    s = max(float(similarity), 0.0)
    u = float(conf)
    return features * features.dtype.type(s * u)
