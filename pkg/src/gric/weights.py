"""Model weights: layer table, seeded generation, and the GRWT binary format.

The layer widths follow the generalized architecture table: the analysis
transform is three k5 stride-2 convolutions at the intermediate width with a
normalization after each, then a final k5 stride-2 to the latent width; the
synthesis transform mirrors it.  Each parameter network stacks three 1x1
convolutions (two hidden layers at 3M, final output 2M) and only the first
layer's input width differs between the three networks.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, WeightsError
from .gsdn import GsdnParams
from .probability import (
    FactorizedCdf,
    default_scale_table,
    uniform_factorized_cdf,
    validate_scale_table,
)
from .tensor_nn import MASK_EXCLUSIVE, MASK_INCLUSIVE, MASK_NONE, ConvSpec

MAGIC = b"GRWT"
VERSION = 1
WEIGHT_SCALE = 0.05

ENTROPY_MODES = ("context_only", "context_reference", "full")


@dataclass(frozen=True)
class Dims:
    latent_channels: int = 384
    hyper_channels: int = 192
    hyper_out_channels: int = 768
    patch_k: int = 3
    latent_support: int = 255
    hyper_support: int = 63
    slope: float = 0.01

    def __post_init__(self):
        if self.latent_channels < 1 or self.hyper_channels < 1:
            raise ConfigError("channel counts must be positive")
        if self.patch_k % 2 != 1:
            raise ConfigError("patch kernel must be odd")

    @property
    def pn_hidden(self) -> int:
        return 3 * self.latent_channels


def desk_dims(latent_channels: int) -> Dims:
    """Scaled-down dims keeping the full-size channel ratios (N = M/2, 2M out)."""
    m = latent_channels
    return Dims(
        latent_channels=m,
        hyper_channels=max(m // 2, 1),
        hyper_out_channels=2 * m,
    )


@dataclass(frozen=True)
class LayerDef:
    name: str
    kind: str  # "conv" | "deconv"
    spec: ConvSpec

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        s = self.spec
        if self.kind == "deconv":
            return (s.in_channels, s.out_channels, s.kernel, s.kernel)
        return (s.out_channels, s.in_channels, s.kernel, s.kernel)


def _conv(name, k, cin, cout, stride, mask=MASK_NONE) -> LayerDef:
    pad = k // 2
    return LayerDef(name, "conv", ConvSpec(k, cin, cout, stride, pad, mask, name))


def _deconv(name, k, cin, cout, stride) -> LayerDef:
    return LayerDef(name, "deconv", ConvSpec(k, cin, cout, stride, 0, MASK_NONE, name))


def layer_table(d: Dims) -> list[LayerDef]:
    m, n, hout, hid = d.latent_channels, d.hyper_channels, d.hyper_out_channels, d.pn_hidden
    layers = [
        _conv("enc0", 5, 3, n, 2),
        _conv("enc1", 5, n, n, 2),
        _conv("enc2", 5, n, n, 2),
        _conv("enc3", 5, n, m, 2),
        _deconv("dec0", 5, m, n, 2),
        _deconv("dec1", 5, n, n, 2),
        _deconv("dec2", 5, n, n, 2),
        _deconv("dec3", 5, n, 3, 2),
        _conv("henc0", 3, m, n, 1),
        _conv("henc1", 5, n, n, 2),
        _conv("henc2", 5, n, n, 2),
        _deconv("hdec0", 5, n, n, 2),
        _deconv("hdec1", 5, n, n, 2),
        _deconv("hdec2", 3, n, hout, 1),
        _conv("ctx", 5, m, m, 1, MASK_EXCLUSIVE),
        _conv("refm", d.patch_k, m, m, 1, MASK_INCLUSIVE),
    ]
    pn_inputs = {"pn1": m, "pn2": m + 2 * m, "pn3": hout + 2 * m}
    for pn, cin in pn_inputs.items():
        layers.append(_conv(f"{pn}_0", 1, cin, hid, 1))
        layers.append(_conv(f"{pn}_1", 1, hid, hid, 1))
        layers.append(_conv(f"{pn}_2", 1, hid, 2 * m, 1))
    return layers


GSDN_NAMES = tuple(f"gsdn_enc{i}" for i in range(3)) + tuple(f"gsdn_dec{i}" for i in range(3))


def _gsdn_width(d: Dims) -> int:
    return d.hyper_channels  # normalizations sit on the intermediate width


@dataclass
class ModelWeights:
    dims: Dims
    tensors: dict[str, np.ndarray]
    gsdn: dict[str, GsdnParams] = field(default_factory=dict)
    scale_table: np.ndarray | None = None
    factorized: FactorizedCdf | None = None
    content_hash: bytes = b""

    def __post_init__(self):
        self._layers = {ld.name: ld for ld in layer_table(self.dims)}
        self._validate()
        if not self.content_hash:
            self.content_hash = hashlib.sha256(_serialize_body(self)).digest()

    def _validate(self):
        for ld in self._layers.values():
            w = self.tensors.get(ld.name + ".w")
            b = self.tensors.get(ld.name + ".b")
            if w is None or b is None:
                raise ConfigError(f"missing tensors for layer {ld.name}")
            if w.shape != ld.weight_shape:
                raise ConfigError(
                    f"layer {ld.name}: weight shape {w.shape} != expected {ld.weight_shape}"
                )
            if b.shape != (ld.spec.out_channels,):
                raise ConfigError(f"layer {ld.name}: bias shape {b.shape}")
        n = _gsdn_width(self.dims)
        for gname in GSDN_NAMES:
            if gname not in self.gsdn:
                raise ConfigError(f"missing normalization parameters {gname}")
            p = self.gsdn[gname].validate(gname)
            if p.channels != n:
                raise ConfigError(f"{gname}: expected {n} channels, got {p.channels}")
        if self.scale_table is None:
            raise ConfigError("missing scale table")
        validate_scale_table(self.scale_table)
        if self.factorized is None:
            raise ConfigError("missing factorized hyper tables")
        if self.factorized.channels != self.dims.hyper_channels:
            raise ConfigError("factorized tables do not match hyper channel count")
        if self.factorized.support != self.dims.hyper_support:
            raise ConfigError("factorized tables do not match hyper support")

    def layer(self, name: str) -> LayerDef:
        return self._layers[name]

    def conv_params(self, name: str) -> tuple[np.ndarray, np.ndarray, ConvSpec]:
        return self.tensors[name + ".w"], self.tensors[name + ".b"], self._layers[name].spec


# ---------------------------------------------------------------------------
# Seeded generation (SplitMix64: a counter-based 64-bit generator, so the
# stream is reproducible from (seed, position) alone).

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _splitmix64(seed: int, start: int, count: int) -> np.ndarray:
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    z = idx * _GOLDEN + np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)


class _SeededStream:
    def __init__(self, seed: int):
        self.seed = seed
        self.pos = 0

    def uniform(self, shape, lo: float, hi: float) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        u = _splitmix64(self.seed, self.pos, count)
        self.pos += count
        return (lo + (hi - lo) * u).astype(np.float32).reshape(shape)


def generate_weights(latent_channels: int = 384, seed: int = 0) -> ModelWeights:
    """Seeded random weights: uniform [-0.05, 0.05] tensors, benign GSDN
    parameters (beta 1, small positive gamma, zero shifts), uniform hyper
    tables, and the default sigma scale table."""
    d = Dims() if latent_channels == 384 else desk_dims(latent_channels)
    stream = _SeededStream(seed)
    tensors: dict[str, np.ndarray] = {}
    for ld in layer_table(d):
        tensors[ld.name + ".w"] = stream.uniform(ld.weight_shape, -WEIGHT_SCALE, WEIGHT_SCALE)
        tensors[ld.name + ".b"] = stream.uniform((ld.spec.out_channels,), -WEIGHT_SCALE, WEIGHT_SCALE)
    n = _gsdn_width(d)
    gsdn = {
        gname: GsdnParams(
            beta=np.ones(n, dtype=np.float32),
            gamma=np.full((n, n), 0.001, dtype=np.float32),
            nu=np.zeros(n, dtype=np.float32),
            tau=np.zeros((n, n), dtype=np.float32),
        )
        for gname in GSDN_NAMES
    }
    return ModelWeights(
        dims=d,
        tensors=tensors,
        gsdn=gsdn,
        scale_table=default_scale_table(),
        factorized=uniform_factorized_cdf(d.hyper_channels, d.hyper_support),
    )


# ---------------------------------------------------------------------------
# GRWT binary format: little-endian header, tensor directory, raw payload,
# trailing SHA-256 over everything before it.

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<u4")}
_CODE_FOR_KIND = {np.dtype("<f4"): 0, np.dtype("<u4"): 1}


def _all_tensors(w: ModelWeights) -> list[tuple[str, np.ndarray]]:
    items: list[tuple[str, np.ndarray]] = []
    for ld in layer_table(w.dims):
        items.append((ld.name + ".w", w.tensors[ld.name + ".w"].astype("<f4")))
        items.append((ld.name + ".b", w.tensors[ld.name + ".b"].astype("<f4")))
    for gname in GSDN_NAMES:
        p = w.gsdn[gname]
        for part in ("beta", "gamma", "nu", "tau"):
            items.append((f"{gname}.{part}", getattr(p, part).astype("<f4")))
    items.append(("scale_table", w.scale_table.astype("<f4")))
    items.append(("factorized_cdf", w.factorized.cum.astype("<u4")))
    return items


def _serialize_body(w: ModelWeights) -> bytes:
    d = w.dims
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(
        struct.pack(
            "<7If",
            VERSION,
            d.latent_channels,
            d.hyper_channels,
            d.hyper_out_channels,
            d.patch_k,
            d.latent_support,
            d.hyper_support,
            d.slope,
        )
    )
    items = _all_tensors(w)
    buf.write(struct.pack("<I", len(items)))
    for name, arr in items:
        enc = name.encode()
        buf.write(struct.pack("<HBB", len(enc), _CODE_FOR_KIND[arr.dtype], arr.ndim))
        buf.write(enc)
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    for _, arr in items:
        buf.write(arr.tobytes())
    return buf.getvalue()


def save_weights(w: ModelWeights, path: str) -> None:
    body = _serialize_body(w)
    digest = hashlib.sha256(body).digest()
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(digest)


def load_weights(path: str) -> ModelWeights:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise WeightsError(f"cannot read weights file {path}: {exc}") from exc
    if len(blob) < 44 or blob[:4] != MAGIC:
        raise WeightsError(f"{path}: not a GRWT weights file")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise WeightsError(f"{path}: content hash mismatch")
    off = 4
    version, m, hyper, hout, patch_k, sup, hsup = struct.unpack_from("<7I", body, off)
    off += 28
    (slope,) = struct.unpack_from("<f", body, off)
    off += 4
    if version != VERSION:
        raise WeightsError(f"{path}: unsupported weights version {version}")
    dims = Dims(m, hyper, hout, patch_k, sup, hsup, float(np.float32(slope)))
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    directory = []
    for _ in range(count):
        name_len, dtype_code, ndim = struct.unpack_from("<HBB", body, off)
        off += 4
        name = body[off : off + name_len].decode()
        off += name_len
        shape = struct.unpack_from(f"<{ndim}I", body, off)
        off += 4 * ndim
        if dtype_code not in _DTYPE_CODES:
            raise WeightsError(f"{path}: unknown tensor dtype code {dtype_code}")
        directory.append((name, _DTYPE_CODES[dtype_code], shape))
    raw: dict[str, np.ndarray] = {}
    for name, dtype, shape in directory:
        nbytes = int(np.prod(shape)) * dtype.itemsize if shape else dtype.itemsize
        if off + nbytes > len(body):
            raise WeightsError(f"{path}: truncated tensor payload at {name}")
        raw[name] = np.frombuffer(body, dtype=dtype, count=int(np.prod(shape)), offset=off).reshape(shape).copy()
        off += nbytes
    try:
        tensors = {}
        for ld in layer_table(dims):
            tensors[ld.name + ".w"] = raw[ld.name + ".w"]
            tensors[ld.name + ".b"] = raw[ld.name + ".b"]
        gsdn = {
            gname: GsdnParams(
                beta=raw[f"{gname}.beta"],
                gamma=raw[f"{gname}.gamma"],
                nu=raw[f"{gname}.nu"],
                tau=raw[f"{gname}.tau"],
            )
            for gname in GSDN_NAMES
        }
        factorized = FactorizedCdf(dims.hyper_support, raw["factorized_cdf"].astype(np.int64))
        w = ModelWeights(
            dims=dims,
            tensors=tensors,
            gsdn=gsdn,
            scale_table=raw["scale_table"],
            factorized=factorized,
            content_hash=digest,
        )
    except KeyError as exc:
        raise WeightsError(f"{path}: missing tensor {exc}") from exc
    except ConfigError as exc:
        raise WeightsError(f"{path}: {exc}") from exc
    return w
