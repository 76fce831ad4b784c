"""GRIC bitstream container: header + two entropy-coded payloads + CRC32.

All multi-byte integers are little-endian.  The checksum covers every byte
before it, so any single corrupted byte is caught before decoding starts.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

from .errors import StreamError
from .weights import ENTROPY_MODES

MAGIC = b"GRIC"
VERSION = 1
MAX_SIDE = 1 << 16


@dataclass
class BitstreamContainer:
    mode: str
    true_h: int
    true_w: int
    padded_h: int
    padded_w: int
    weights_hash: bytes
    hyper_payload: bytes
    latent_payload: bytes

    def __post_init__(self):
        if self.mode not in ENTROPY_MODES:
            raise StreamError(f"unknown entropy mode {self.mode!r}")
        if len(self.weights_hash) != 32:
            raise StreamError("weights hash must be 32 bytes")

    @property
    def payload_bits(self) -> int:
        return 8 * (len(self.hyper_payload) + len(self.latent_payload))


def write_container(c: BitstreamContainer) -> bytes:
    head = MAGIC + struct.pack(
        "<HB4I",
        VERSION,
        ENTROPY_MODES.index(c.mode),
        c.true_w,
        c.true_h,
        c.padded_w,
        c.padded_h,
    )
    body = (
        head
        + c.weights_hash
        + struct.pack("<I", len(c.hyper_payload))
        + c.hyper_payload
        + struct.pack("<I", len(c.latent_payload))
        + c.latent_payload
    )
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_container(c: BitstreamContainer, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(write_container(c))


def read_container(blob: bytes) -> BitstreamContainer:
    if len(blob) < 4 + 3 + 16 + 32 + 8 + 4 or blob[:4] != MAGIC:
        raise StreamError("not a GRIC container")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise StreamError("container checksum mismatch")
    version, mode_tag, tw, th, pw, ph = struct.unpack_from("<HB4I", body, 4)
    if version != VERSION:
        raise StreamError(f"unsupported container version {version}")
    if mode_tag >= len(ENTROPY_MODES):
        raise StreamError(f"unknown entropy mode tag {mode_tag}")
    off = 4 + struct.calcsize("<HB4I")
    weights_hash = body[off : off + 32]
    off += 32
    (hyper_len,) = struct.unpack_from("<I", body, off)
    off += 4
    hyper = body[off : off + hyper_len]
    off += hyper_len
    if off + 4 > len(body):
        raise StreamError("container truncated in hyper payload")
    (latent_len,) = struct.unpack_from("<I", body, off)
    off += 4
    latent = body[off : off + latent_len]
    off += latent_len
    if len(hyper) != hyper_len or len(latent) != latent_len or off != len(body):
        raise StreamError("container payload lengths inconsistent")
    return BitstreamContainer(
        ENTROPY_MODES[mode_tag], th, tw, ph, pw, weights_hash, hyper, latent
    )


def load_container(path: str) -> BitstreamContainer:
    try:
        with open(path, "rb") as fh:
            return read_container(fh.read())
    except OSError as exc:
        raise StreamError(f"cannot read container {path}: {exc}") from exc
