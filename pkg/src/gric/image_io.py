"""Image file I/O: binary PPM (P6) is built in, PNG rides on Pillow if present."""

from __future__ import annotations

import numpy as np

from .errors import InputError

try:
    from PIL import Image as _PILImage
except ImportError:  # PNG support is optional
    _PILImage = None


def _read_ppm_token(data: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(data):
        if data[pos : pos + 1].isspace():
            pos += 1
        elif data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
        else:
            break
    start = pos
    while pos < len(data) and not data[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise InputError("malformed PPM header")
    return data[start:pos], pos


def read_ppm(path: str) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read image {path}: {exc}") from exc
    magic, pos = _read_ppm_token(data, 0)
    if magic != b"P6":
        raise InputError(f"{path}: only binary PPM (P6) is supported, got {magic!r}")
    fields = []
    for _ in range(3):
        tok, pos = _read_ppm_token(data, pos)
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise InputError(f"{path}: only 8-bit PPM supported (maxval {maxval})")
    pos += 1  # single whitespace after maxval
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height * 3, offset=pos)
    if pixels.size != width * height * 3:
        raise InputError(f"{path}: truncated pixel data")
    return pixels.reshape(height, width, 3).transpose(2, 0, 1).copy()


def write_ppm(path: str, image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[0] != 3 or image.dtype != np.uint8:
        raise InputError("write_ppm expects a (3, H, W) uint8 array")
    _, h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(image.transpose(1, 2, 0).tobytes())


def read_image(path: str) -> np.ndarray:
    """8-bit RGB image as a (3, H, W) uint8 array."""
    if path.lower().endswith((".ppm", ".pnm")):
        return read_ppm(path)
    if _PILImage is None:
        raise InputError(f"{path}: non-PPM input needs the optional Pillow dependency")
    try:
        with _PILImage.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except OSError as exc:
        raise InputError(f"cannot read image {path}: {exc}") from exc
    return arr.transpose(2, 0, 1).copy()


def write_image(path: str, image: np.ndarray) -> None:
    if path.lower().endswith((".ppm", ".pnm")):
        write_ppm(path, image)
        return
    if _PILImage is None:
        raise InputError(f"{path}: non-PPM output needs the optional Pillow dependency")
    _PILImage.fromarray(image.transpose(1, 2, 0)).save(path)


def write_pgm(path: str, gray: np.ndarray) -> None:
    """Binary PGM (P5) writer for 2-D uint8 maps."""
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise InputError("write_pgm expects a 2-D uint8 array")
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(gray.tobytes())


def to_unit_float(image_u8: np.ndarray) -> np.ndarray:
    return image_u8.astype(np.float32) / np.float32(255.0)


def to_uint8(image_float: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(image_float * 255.0), 0, 255).astype(np.uint8)
