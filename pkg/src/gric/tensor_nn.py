"""Minimal deterministic tensor/NN primitives.

Tensors are plain numpy arrays shaped (channels, height, width), float32 in
the codec path.  Convolutions accumulate in a single fixed order (kernel
raster position, then input channel) so that repeated evaluation of the same
layer on the same platform is bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

MASK_NONE = "none"
MASK_EXCLUSIVE = "causal_exclusive"
MASK_INCLUSIVE = "causal_inclusive"


@dataclass(frozen=True)
class ConvSpec:
    """Static description of one convolution layer.

    `mask_kind` selects the causal mask over the k x k window in raster
    order: `causal_exclusive` zeroes the center tap and everything after it,
    `causal_inclusive` keeps the center and zeroes everything after it.
    """

    kernel: int
    in_channels: int
    out_channels: int
    stride: int = 1
    padding: int = 0
    mask_kind: str = MASK_NONE
    name: str = ""

    def _label(self) -> str:
        return self.name or "conv"


def causal_mask(kernel: int, mask_kind: str) -> np.ndarray:
    """Binary (k, k) mask, raster-ordered causality over the window."""
    if mask_kind not in (MASK_EXCLUSIVE, MASK_INCLUSIVE):
        raise ConfigError(f"unknown mask kind {mask_kind!r}")
    mask = np.ones(kernel * kernel, dtype=np.float32)
    center = (kernel * kernel) // 2
    cut = center if mask_kind == MASK_EXCLUSIVE else center + 1
    mask[cut:] = 0.0
    return mask.reshape(kernel, kernel)


def apply_mask(weight: np.ndarray, mask_kind: str) -> np.ndarray:
    """Return a copy of (O, I, k, k) weights with masked taps set to zero."""
    k = weight.shape[-1]
    mask = causal_mask(k, mask_kind)
    out = np.where(mask[None, None] > 0, weight, weight.dtype.type(0))
    return np.ascontiguousarray(out)


def _check_conv_shapes(x, weight, bias, spec: ConvSpec, transposed: bool) -> None:
    if x.ndim != 3:
        raise ConfigError(f"{spec._label()}: expected (C, H, W) input, got shape {x.shape}")
    cin_axis = 0
    wc_in = weight.shape[0] if transposed else weight.shape[1]
    wc_out = weight.shape[1] if transposed else weight.shape[0]
    if x.shape[cin_axis] != spec.in_channels or wc_in != spec.in_channels:
        raise ConfigError(
            f"{spec._label()}: input channels {x.shape[cin_axis]} / weight {wc_in} "
            f"!= spec {spec.in_channels}"
        )
    if wc_out != spec.out_channels:
        raise ConfigError(f"{spec._label()}: weight out channels {wc_out} != spec {spec.out_channels}")
    if weight.shape[2] != spec.kernel or weight.shape[3] != spec.kernel:
        raise ConfigError(f"{spec._label()}: weight kernel {weight.shape[2:]} != spec {spec.kernel}")
    if bias.shape != (spec.out_channels,):
        raise ConfigError(f"{spec._label()}: bias shape {bias.shape} != ({spec.out_channels},)")


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Cross-correlation of (C, H, W) input with (O, I, k, k) weights.

    Output spatial size is floor((H + 2*pad - k) / stride) + 1.  The im2col
    column layout is (kernel raster, then input channel), which fixes the
    accumulation order.
    """
    _check_conv_shapes(x, weight, bias, spec, transposed=False)
    k, s, p = spec.kernel, spec.stride, spec.padding
    c, h, w = x.shape
    if h + 2 * p < k or w + 2 * p < k:
        raise ConfigError(f"{spec._label()}: input {h}x{w} too small for kernel {k} pad {p}")
    xp = np.pad(x, ((0, 0), (p, p), (p, p))) if p else x
    oh = (h + 2 * p - k) // s + 1
    ow = (w + 2 * p - k) // s + 1
    cols = np.empty((k, k, c, oh, ow), dtype=x.dtype)
    for ky in range(k):
        for kx in range(k):
            cols[ky, kx] = xp[:, ky : ky + s * oh : s, kx : kx + s * ow : s]
    mat = cols.reshape(k * k * c, oh * ow)
    wmat = np.ascontiguousarray(weight.transpose(0, 2, 3, 1)).reshape(spec.out_channels, k * k * c)
    out = wmat @ mat + bias[:, None]
    return out.reshape(spec.out_channels, oh, ow)


def deconv_geometry(kernel: int, stride: int) -> tuple[int, int]:
    """Crop/extra-pad pair (p, op) such that output is exactly stride * input."""
    d = kernel - stride
    if d >= 0:
        p = (d + 1) // 2
        op = 2 * p - d
        if op >= stride and op != 0:
            raise ConfigError(
                f"deconv kernel {kernel} stride {stride} cannot meet the exact-size contract"
            )
    else:
        p, op = 0, -d
    return p, op


def deconv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Transposed convolution with (I, O, k, k) weights; output is exactly (s*H, s*W)."""
    _check_conv_shapes(x, weight, bias, spec, transposed=True)
    k, s = spec.kernel, spec.stride
    c, h, w = x.shape
    p, op = deconv_geometry(k, s)
    fh, fw = (h - 1) * s + k, (w - 1) * s + k
    # (O, k, k, H, W) contributions, scattered onto the strided output lattice
    tmp = np.tensordot(weight, x, axes=([0], [0]))
    full = np.zeros((spec.out_channels, fh, fw), dtype=x.dtype)
    for ky in range(k):
        for kx in range(k):
            full[:, ky : ky + s * (h - 1) + 1 : s, kx : kx + s * (w - 1) + 1 : s] += tmp[:, ky, kx]
    th, tw = s * h, s * w
    if p + th > fh or p + tw > fw:
        full = np.pad(full, ((0, 0), (0, p + th - fh), (0, p + tw - fw)))
    out = full[:, p : p + th, p : p + tw]
    return out + bias[:, None, None]


def masked_conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """conv2d with the causal mask burned into the weights first."""
    if spec.mask_kind == MASK_NONE:
        raise ConfigError(f"{spec._label()}: masked_conv2d requires a causal mask kind")
    if spec.stride != 1 or spec.padding != spec.kernel // 2:
        raise ConfigError(f"{spec._label()}: masked convolution must be stride 1 with same-padding")
    return conv2d(x, apply_mask(weight, spec.mask_kind), bias, spec)


def leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    if not 0.0 < slope < 1.0:
        raise ConfigError(f"leaky_relu slope {slope} outside (0, 1)")
    return np.where(x >= 0, x, x * x.dtype.type(slope))


def unfold(x: np.ndarray, k: int) -> np.ndarray:
    """(H*W, k*k*C) matrix of zero-padded k x k neighborhoods.

    Row i is the window centered at raster position i, flattened window
    raster position first, channel last: column index (ky*k + kx)*C + c.
    """
    if k % 2 != 1:
        raise ConfigError(f"unfold kernel {k} must be odd")
    c, h, w = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    rows = np.empty((k, k, c, h, w), dtype=x.dtype)
    for ky in range(k):
        for kx in range(k):
            rows[ky, kx] = xp[:, ky : ky + h, kx : kx + w]
    return np.ascontiguousarray(rows.reshape(k * k * c, h * w).T)


def padded_window(x: np.ndarray, iy: int, ix: int, k: int) -> np.ndarray:
    """(C, k, k) window centered at (iy, ix), zero outside the grid."""
    c, h, w = x.shape
    p = k // 2
    win = np.zeros((c, k, k), dtype=x.dtype)
    y0, y1 = max(iy - p, 0), min(iy + p + 1, h)
    x0, x1 = max(ix - p, 0), min(ix + p + 1, w)
    win[:, y0 - iy + p : y1 - iy + p, x0 - ix + p : x1 - ix + p] = x[:, y0:y1, x0:x1]
    return win


def masked_window(x: np.ndarray, iy: int, ix: int, k: int, mask_kind: str) -> np.ndarray:
    """padded_window with causally-masked slots forced to exact +0.0.

    Zeroing the window (not just the weights) guarantees the encoder, which
    holds future latents in its grid, and the decoder, which holds zeros
    there, feed bit-identical buffers into every downstream op.
    """
    win = padded_window(x, iy, ix, k)
    mask = causal_mask(k, mask_kind)
    return np.where(mask[None] > 0, win, x.dtype.type(0))


def conv_at(window: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Single-position convolution: (O, C, k, k) weights dotted with a (C, k, k) window."""
    return np.tensordot(weight, window, axes=([1, 2, 3], [0, 1, 2])) + bias
