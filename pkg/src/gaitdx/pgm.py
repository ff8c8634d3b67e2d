"""Binary PGM (P5, maxval 255) reading and writing."""

from __future__ import annotations

import numpy as np


def write_pgm(path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise ValueError("PGM pixels must be 2-D")
    if pixels.size and (pixels.min() < 0 or pixels.max() > 255):
        raise ValueError("PGM pixels must lie in [0, 255]")
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.astype(np.uint8).tobytes())


def _tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1  # exactly one whitespace byte precedes the raster


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    (magic, w, h, maxval), offset = _tokens(data, 4)
    if magic != b"P5":
        raise ValueError(f"not a binary PGM: magic {magic!r}")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    raster = data[offset : offset + w * h]
    if len(raster) != w * h:
        raise ValueError(f"PGM raster truncated: {len(raster)} of {w * h} bytes")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy()
