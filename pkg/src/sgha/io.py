"""Binary PPM (P6, maxval 255) images and atomic file writes."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ImageFormatError


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write via a temp file in the same directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def quantize(x) -> np.ndarray:
    """[0,1] floats -> uint8 with round-half-up."""
    x = np.asarray(x, dtype=np.float64)
    return np.clip(np.floor(x * 255.0 + 0.5), 0, 255).astype(np.uint8)


def dequantize(q) -> np.ndarray:
    return np.asarray(q, dtype=np.float64) / 255.0


def encode_ppm(q: np.ndarray) -> bytes:
    q = np.asarray(q)
    if q.dtype != np.uint8 or q.ndim != 3 or q.shape[2] != 3:
        raise ImageFormatError(f"PPM export needs an H x W x 3 uint8 array, got {q.dtype} {q.shape}")
    h, w, _ = q.shape
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(q).tobytes()


def _header_tokens(data: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    tokens = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i:i + 1].isspace():
            i += 1
        if i < n and data[i:i + 1] == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not data[i:i + 1].isspace() and data[i:i + 1] != b"#":
            i += 1
        if start == i:
            raise ImageFormatError("truncated PPM header")
        tokens.append(data[start:i])
    # exactly one whitespace byte separates maxval from the raster
    if i >= n or not data[i:i + 1].isspace():
        raise ImageFormatError("truncated PPM header")
    return tokens, i + 1


def decode_ppm(data: bytes) -> np.ndarray:
    """Return the raw H x W x 3 uint8 raster."""
    if data[:2] != b"P6":
        raise ImageFormatError(f"not a binary PPM (magic {data[:2]!r})")
    tokens, offset = _header_tokens(data[2:], 3)
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ImageFormatError(f"non-numeric PPM header field: {tokens}") from exc
    if maxval != 255:
        raise ImageFormatError(f"only maxval 255 is supported, got {maxval}")
    if w <= 0 or h <= 0:
        raise ImageFormatError(f"bad PPM extents {w}x{h}")
    raster = data[2 + offset:]
    if len(raster) < w * h * 3:
        raise ImageFormatError(f"PPM raster truncated: {len(raster)} of {w * h * 3} bytes")
    return np.frombuffer(raster[: w * h * 3], dtype=np.uint8).reshape(h, w, 3).copy()


def read_ppm(path) -> np.ndarray:
    """Read a P6 file as floats in [0, 1] (value v maps to v/255)."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc
    try:
        return dequantize(decode_ppm(data))
    except ImageFormatError as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc


def write_ppm(path, x) -> None:
    """Quantize a [0,1] float image (or write a uint8 one as-is)."""
    x = np.asarray(x)
    q = x if x.dtype == np.uint8 else quantize(x)
    atomic_write_bytes(Path(path), encode_ppm(q))
