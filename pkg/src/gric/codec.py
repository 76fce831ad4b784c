"""End-to-end pipeline: transforms, progressive entropy model, encode/decode.

Determinism contract: the encoder and decoder drive the exact same
raster-order scanner code path.  The scanner's latent grid starts empty on
both sides and is committed position by position, every causal read goes
through explicitly zeroed windows, so both sides execute identical float
operations on identical buffers and derive identical coder frequency tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .coder import RangeDecoder, RangeEncoder
from .container import MAX_SIDE, BitstreamContainer
from .errors import ConfigError, InputError, WeightsError
from .gsdn import gsdn_forward, igsdn_forward
from .probability import (
    QuantizedPmf,
    bits_per_pixel,
    build_quantized_pmf_batch,
    confidence,
    quantize_gaussian_params,
)
from .reference import PatchIndex, ReferenceMatch, best_match, gate, gather_relevant, patch_row
from .tensor_nn import (
    MASK_EXCLUSIVE,
    MASK_INCLUSIVE,
    apply_mask,
    conv2d,
    conv_at,
    deconv2d,
    leaky_relu,
    masked_window,
)
from .weights import ENTROPY_MODES, ModelWeights

DOWNSAMPLE = 16


def _check_mode(mode: str) -> None:
    if mode not in ENTROPY_MODES:
        raise ConfigError(f"unknown entropy mode {mode!r}; expected one of {ENTROPY_MODES}")


def pad_image(image: np.ndarray) -> tuple[np.ndarray, tuple[int, int]]:
    """Replication-pad right/bottom to the next multiple of 16; returns true dims."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise InputError(f"expected an RGB (3, H, W) image, got shape {image.shape}")
    _, h, w = image.shape
    if h < 1 or w < 1 or h > MAX_SIDE or w > MAX_SIDE:
        raise InputError(f"image sides must be in [1, {MAX_SIDE}], got {h}x{w}")
    ph = -(-h // DOWNSAMPLE) * DOWNSAMPLE
    pw = -(-w // DOWNSAMPLE) * DOWNSAMPLE
    padded = np.pad(image, ((0, 0), (0, ph - h), (0, pw - w)), mode="edge")
    return padded.astype(np.float32), (h, w)


def analyze(image: np.ndarray, w: ModelWeights) -> np.ndarray:
    """Analysis transform: (3, H, W) in [0, 1] -> latents (M, H/16, W/16)."""
    if image.shape[1] % DOWNSAMPLE or image.shape[2] % DOWNSAMPLE:
        raise ConfigError("analyze expects sides padded to multiples of 16")
    x = image.astype(np.float32)
    for i in range(3):
        x = conv2d(x, *w.conv_params(f"enc{i}"))
        x = gsdn_forward(x, w.gsdn[f"gsdn_enc{i}"])
    return conv2d(x, *w.conv_params("enc3"))

def synthesize(yhat: np.ndarray, w: ModelWeights) -> np.ndarray:
    """Synthesis transform: latents -> RGB at padded dims, clamped to [0, 1]."""
    x = yhat.astype(np.float32)
    for i in range(3):
        x = deconv2d(x, *w.conv_params(f"dec{i}"))
        x = igsdn_forward(x, w.gsdn[f"gsdn_dec{i}"])
    x = deconv2d(x, *w.conv_params("dec3"))
    return np.clip(x, 0.0, 1.0)


def hyper_analyze(yhat_real: np.ndarray, w: ModelWeights) -> np.ndarray:
    slope = w.dims.slope
    x = conv2d(yhat_real, *w.conv_params("henc0"))
    x = leaky_relu(x, slope)
    x = conv2d(x, *w.conv_params("henc1"))
    x = leaky_relu(x, slope)
    return conv2d(x, *w.conv_params("henc2"))


def hyper_synthesize(zhat: np.ndarray, w: ModelWeights, lat_hw: tuple[int, int]) -> np.ndarray:
    """Hyper decoder output, top-left cropped to the latent grid size."""
    slope = w.dims.slope
    x = deconv2d(zhat, *w.conv_params("hdec0"))
    x = leaky_relu(x, slope)
    x = deconv2d(x, *w.conv_params("hdec1"))
    x = leaky_relu(x, slope)
    x = deconv2d(x, *w.conv_params("hdec2"))
    h, wd = lat_hw
    if x.shape[1] < h or x.shape[2] < wd:
        raise ConfigError(f"hyper features {x.shape} smaller than latent grid {lat_hw}")
    return np.ascontiguousarray(x[:, :h, :wd])


def hyper_latent_hw(lat_hw: tuple[int, int]) -> tuple[int, int]:
    """Spatial dims of the hyper-latents for a given latent grid."""
    def down(n: int) -> int:
        return (n - 1) // 2 + 1
    h, w = lat_hw
    return down(down(h)), down(down(w))


_QCLIP = 32767  # escape payload is 16-bit two's complement


def quantize(y: np.ndarray) -> np.ndarray:
    """Round half away from zero to int32 (clamped to the escape-codable range)."""
    q = np.sign(y) * np.floor(np.abs(y) + 0.5)
    return np.clip(q, -_QCLIP - 1, _QCLIP).astype(np.int32)


@dataclass
class PositionParams:
    """Everything the entropy model derived at one raster position."""

    position: int
    match: ReferenceMatch | None
    mu1: np.ndarray
    sigma1: np.ndarray
    mu2: np.ndarray | None
    sigma2: np.ndarray | None
    mu3: np.ndarray | None
    sigma3: np.ndarray | None
    mu_q: np.ndarray
    sigma_q: np.ndarray


class _Scanner:
    """Raster-order progressive entropy model, shared by encode and decode."""

    def __init__(self, w: ModelWeights, mode: str, lat_hw: tuple[int, int], psi):
        _check_mode(mode)
        d = w.dims
        self.mode = mode
        self.m = d.latent_channels
        self.h, self.w = lat_hw
        self.n = self.h * self.w
        self.grid = np.zeros((self.m, self.h, self.w), dtype=np.float32)
        self.mu1 = np.zeros((self.m, self.n), dtype=np.float32)
        self.sigma1 = np.zeros((self.m, self.n), dtype=np.float32)
        ctx_w, ctx_b, ctx_spec = w.conv_params("ctx")
        self.ctx_w = apply_mask(ctx_w, MASK_EXCLUSIVE)
        self.ctx_b = ctx_b
        self.ctx_k = ctx_spec.kernel
        ref_w, ref_b, ref_spec = w.conv_params("refm")
        self.ref_w = apply_mask(ref_w, MASK_INCLUSIVE)
        self.ref_b = ref_b
        self.k_patch = d.patch_k
        self.slope = d.slope
        self.pn = {}
        for pn in ("pn1", "pn2", "pn3"):
            layers = []
            for li in range(3):
                wt, b, _ = w.conv_params(f"{pn}_{li}")
                layers.append((np.ascontiguousarray(wt.reshape(wt.shape[0], wt.shape[1])), b))
            self.pn[pn] = layers
        self.patches = PatchIndex(self.n, self.k_patch * self.k_patch * self.m)
        self.psi = psi
        if mode == "full" and psi is None:
            raise ConfigError("full mode requires hyper features")
        self.scale_table = w.scale_table
        self.support = d.latent_support

    def _pn_eval(self, name: str, x: np.ndarray):
        layers = self.pn[name]
        for li, (wt, b) in enumerate(layers):
            x = wt @ x + b
            if li < len(layers) - 1:
                x = leaky_relu(x, self.slope)
        mu = x[: self.m]
        sigma = np.clip(np.logaddexp(0, x[self.m :]), 0.11, 256.0)
        return mu, sigma

    def step(self, i: int) -> PositionParams:
        iy, ix = divmod(i, self.w)
        win = masked_window(self.grid, iy, ix, self.ctx_k, MASK_EXCLUSIVE)
        mu1, s1 = self._pn_eval("pn1", conv_at(win, self.ctx_w, self.ctx_b))
        self.mu1[:, i] = mu1
        self.sigma1[:, i] = s1
        match = None
        mu2 = s2 = mu3 = s3 = None
        if self.mode != "context_only":
            self.patches.set_row(i, patch_row(self.grid, iy, ix, self.k_patch))
            match = best_match(self.patches.query(i), i)
            if match.source is not None:
                j = match.source
                jy, jx = divmod(j, self.w)
                match.confidence = confidence(
                    self.grid[:, jy, jx], self.mu1[:, j], self.sigma1[:, j]
                )
                window = gather_relevant(self.grid, j, self.k_patch)
                gated = gate(conv_at(window, self.ref_w, self.ref_b),
                             match.similarity, match.confidence)
            else:
                gated = np.zeros(self.m, dtype=np.float32)
            mu2, s2 = self._pn_eval("pn2", np.concatenate([gated, mu1, s1]))
        if self.mode == "full":
            mu3, s3 = self._pn_eval("pn3", np.concatenate([self.psi[:, iy, ix], mu2, s2]))
        if self.mode == "context_only":
            mu_c, sigma_c = mu1, s1
        elif self.mode == "context_reference":
            mu_c, sigma_c = mu2, s2
        else:
            mu_c, sigma_c = mu3, s3
        mu_q, sigma_q = quantize_gaussian_params(mu_c, sigma_c, self.scale_table)
        return PositionParams(i, match, mu1, s1, mu2, s2, mu3, s3, mu_q, sigma_q)

    def commit(self, i: int, values: np.ndarray) -> None:
        iy, ix = divmod(i, self.w)
        self.grid[:, iy, ix] = values.astype(np.float32)


def _symbol_bits(freqs: np.ndarray, symbols: np.ndarray, support: int) -> np.ndarray:
    """Per-channel ideal code length under quantized tables (escape adds 16)."""
    esc = 2 * support + 1
    idx = np.where((symbols >= -support) & (symbols <= support), symbols + support, esc)
    f = freqs[np.arange(len(symbols)), idx]
    return 16.0 - np.log2(f) + np.where(idx == esc, 16.0, 0.0)


@dataclass
class EncodeTrace:
    yhat: np.ndarray
    zhat: np.ndarray | None
    psi: np.ndarray | None
    positions: list[PositionParams] = field(default_factory=list)


def _encode_latents(w, mode, yhat, psi):
    sc = _Scanner(w, mode, yhat.shape[1:], psi)
    enc = RangeEncoder()
    support = sc.support
    positions = []
    for i in range(sc.n):
        pp = sc.step(i)
        freqs, cum = build_quantized_pmf_batch(pp.mu_q, pp.sigma_q, support)
        iy, ix = divmod(i, sc.w)
        vals = yhat[:, iy, ix]
        for c in range(sc.m):
            enc.encode_symbol(QuantizedPmf(support, freqs[c], cum[c]), int(vals[c]))
        sc.commit(i, vals)
        positions.append(pp)
    return enc.flush(), positions


def _decode_latents(w, mode, lat_hw, payload, psi):
    sc = _Scanner(w, mode, lat_hw, psi)
    dec = RangeDecoder(payload)
    support = sc.support
    yhat = np.zeros((sc.m, sc.h, sc.w), dtype=np.int32)
    positions = []
    for i in range(sc.n):
        pp = sc.step(i)
        freqs, cum = build_quantized_pmf_batch(pp.mu_q, pp.sigma_q, support)
        vals = np.empty(sc.m, dtype=np.int32)
        for c in range(sc.m):
            vals[c] = dec.decode_symbol(QuantizedPmf(support, freqs[c], cum[c]))
        iy, ix = divmod(i, sc.w)
        yhat[:, iy, ix] = vals
        sc.commit(i, vals)
        positions.append(pp)
    return yhat, positions


def _hyper_pmfs(w: ModelWeights) -> list[QuantizedPmf]:
    return [w.factorized.pmf(c) for c in range(w.dims.hyper_channels)]


def _encode_hyper(w: ModelWeights, zhat: np.ndarray) -> bytes:
    pmfs = _hyper_pmfs(w)
    enc = RangeEncoder()
    _, zh, zw = zhat.shape
    for pos in range(zh * zw):
        zy, zx = divmod(pos, zw)
        for c in range(zhat.shape[0]):
            enc.encode_symbol(pmfs[c], int(zhat[c, zy, zx]))
    return enc.flush()


def _decode_hyper(w: ModelWeights, payload: bytes, z_hw: tuple[int, int]) -> np.ndarray:
    pmfs = _hyper_pmfs(w)
    dec = RangeDecoder(payload)
    zh, zw = z_hw
    zhat = np.zeros((w.dims.hyper_channels, zh, zw), dtype=np.int32)
    for pos in range(zh * zw):
        zy, zx = divmod(pos, zw)
        for c in range(zhat.shape[0]):
            zhat[c, zy, zx] = dec.decode_symbol(pmfs[c])
    return zhat


def _hyper_bits(w: ModelWeights, zhat: np.ndarray) -> float:
    pmfs = _hyper_pmfs(w)
    total = 0.0
    for c in range(zhat.shape[0]):
        flat = zhat[c].reshape(-1)
        table = np.broadcast_to(pmfs[c].freqs, (flat.size, pmfs[c].freqs.size))
        total += float(np.sum(_symbol_bits(table, flat, w.dims.hyper_support)))
    return total


def encode_image(image: np.ndarray, w: ModelWeights, mode: str = "full", trace: bool = False):
    """Compress a float RGB image in [0, 1] into a bitstream container."""
    _check_mode(mode)
    padded, (th, tw) = pad_image(image)
    y = analyze(padded, w)
    yhat = quantize(y)
    zhat = None
    psi = None
    hyper_payload = b""
    if mode == "full":
        z = hyper_analyze(yhat.astype(np.float32), w)
        zhat = quantize(z)
        hyper_payload = _encode_hyper(w, zhat)
        psi = hyper_synthesize(zhat.astype(np.float32), w, yhat.shape[1:])
    latent_payload, positions = _encode_latents(w, mode, yhat, psi)
    container = BitstreamContainer(
        mode, th, tw, padded.shape[1], padded.shape[2], w.content_hash,
        hyper_payload, latent_payload,
    )
    if trace:
        return container, EncodeTrace(yhat, zhat, psi, positions)
    return container


def decode_image(container: BitstreamContainer, w: ModelWeights, trace: bool = False):
    """Decompress a container back to a float RGB image in [0, 1]."""
    if container.weights_hash != w.content_hash:
        raise WeightsError("container was produced with different weights (hash mismatch)")
    lat_hw = (container.padded_h // DOWNSAMPLE, container.padded_w // DOWNSAMPLE)
    zhat = None
    psi = None
    if container.mode == "full":
        zhat = _decode_hyper(w, container.hyper_payload, hyper_latent_hw(lat_hw))
        psi = hyper_synthesize(zhat.astype(np.float32), w, lat_hw)
    yhat, positions = _decode_latents(w, container.mode, lat_hw, container.latent_payload, psi)
    x = synthesize(yhat.astype(np.float32), w)
    image = np.ascontiguousarray(x[:, : container.true_h, : container.true_w])
    if trace:
        return image, EncodeTrace(yhat, zhat, psi, positions)
    return image


@dataclass
class RateReport:
    latent_bits: float
    hyper_bits: float
    bpp: float
    bit_map: np.ndarray                      # coding-stage bits per latent position
    stage_maps: dict[str, np.ndarray]        # per-stage bits maps ("stage1"..)
    matches: list[ReferenceMatch | None]
    positions: list[PositionParams]


def estimate_rate(image: np.ndarray, w: ModelWeights, mode: str = "full",
                  per_stage: bool = False) -> RateReport:
    """Ideal rate under the quantized entropy model, without running the coder."""
    _check_mode(mode)
    padded, (th, tw) = pad_image(image)
    y = analyze(padded, w)
    yhat = quantize(y)
    psi = None
    hyper_bits = 0.0
    if mode == "full":
        z = hyper_analyze(yhat.astype(np.float32), w)
        zhat = quantize(z)
        hyper_bits = _hyper_bits(w, zhat)
        psi = hyper_synthesize(zhat.astype(np.float32), w, yhat.shape[1:])
    sc = _Scanner(w, mode, yhat.shape[1:], psi)
    support = sc.support
    bit_map = np.zeros((sc.h, sc.w), dtype=np.float64)
    stage_index = {"context_only": 1, "context_reference": 2, "full": 3}[mode]
    stage_maps = {f"stage{s}": np.zeros((sc.h, sc.w), dtype=np.float64)
                  for s in range(1, stage_index + 1)} if per_stage else {}
    matches: list[ReferenceMatch | None] = []
    positions: list[PositionParams] = []
    latent_bits = 0.0
    for i in range(sc.n):
        pp = sc.step(i)
        iy, ix = divmod(i, sc.w)
        vals = yhat[:, iy, ix]
        freqs, _ = build_quantized_pmf_batch(pp.mu_q, pp.sigma_q, support)
        bits = float(np.sum(_symbol_bits(freqs, vals, support)))
        bit_map[iy, ix] = bits
        latent_bits += bits
        if per_stage:
            stage_params = {1: (pp.mu1, pp.sigma1), 2: (pp.mu2, pp.sigma2),
                            3: (pp.mu3, pp.sigma3)}
            for s in range(1, stage_index + 1):
                mu_s, sig_s = stage_params[s]
                mq, sq = quantize_gaussian_params(mu_s, sig_s, sc.scale_table)
                fs, _ = build_quantized_pmf_batch(mq, sq, support)
                stage_maps[f"stage{s}"][iy, ix] = float(np.sum(_symbol_bits(fs, vals, support)))
        matches.append(pp.match)
        sc.commit(i, vals)
        positions.append(pp)
    return RateReport(
        latent_bits=latent_bits,
        hyper_bits=hyper_bits,
        bpp=bits_per_pixel(latent_bits, hyper_bits, th, tw),
        bit_map=bit_map,
        stage_maps=stage_maps,
        matches=matches,
        positions=positions,
    )


def psnr_from_mse(mse_unit: float) -> float:
    """PSNR in dB from an MSE on the [0, 1] scale: 10 log10(255^2 / d255)."""
    d255 = mse_unit * 255.0 ** 2
    if d255 == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / d255)


def rd_loss(image: np.ndarray, w: ModelWeights, lam: float, mode: str = "full") -> dict:
    """Rate-distortion point: actual bpp, MSE in [0,1] scale, PSNR, and R + lambda*D."""
    if lam < 0:
        raise ConfigError("lambda must be non-negative")
    container = encode_image(image, w, mode)
    recon = decode_image(container, w)
    mse = float(np.mean((image.astype(np.float64) - recon.astype(np.float64)) ** 2))
    bpp = container.payload_bits / (container.true_h * container.true_w)
    return {"bpp": bpp, "mse": mse, "psnr": psnr_from_mse(mse), "loss": bpp + lam * mse}
