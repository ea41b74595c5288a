"""Binary netpbm helpers (PGM P5 / PPM P6) used for map and debug dumps."""
from __future__ import annotations

import numpy as np

from .errors import ParseError


def encode_pgm(img: np.ndarray, maxval: int = 255) -> bytes:
    """Encode a 2D array as binary PGM. maxval > 255 selects 16-bit big-endian."""
    if img.ndim != 2:
        raise ValueError("PGM wants a 2D array")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
    if maxval > 255:
        body = img.astype(">u2").tobytes()
    else:
        body = img.astype(np.uint8).tobytes()
    return header + body


def encode_ppm(img: np.ndarray) -> bytes:
    """Encode an (H, W, 3) uint8 array as binary PPM."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("PPM wants an (H, W, 3) array")
    header = f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    return header + img.astype(np.uint8).tobytes()


def _read_header_token(data: bytes, pos: int) -> tuple[bytes, int]:
    # skip whitespace and '#' comment lines between header tokens
    n = len(data)
    while pos < n:
        ch = data[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            while pos < n and data[pos:pos + 1] != b"\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ParseError("truncated netpbm header")
    return data[start:pos], pos


def decode_pgm(data: bytes) -> np.ndarray:
    """Decode binary PGM bytes to a 2D array (uint8, or uint16 when maxval > 255)."""
    magic, pos = _read_header_token(data, 0)
    if magic != b"P5":
        raise ParseError(f"not a binary PGM (magic {magic!r})")
    fields = []
    for _ in range(3):
        tok, pos = _read_header_token(data, pos)
        try:
            fields.append(int(tok))
        except ValueError as exc:
            raise ParseError(f"bad PGM header token {tok!r}") from exc
    width, height, maxval = fields
    if width <= 0 or height <= 0 or not (0 < maxval < 65536):
        raise ParseError("bad PGM dimensions")
    pos += 1  # single whitespace byte after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = width * height
    body = data[pos:pos + count * dtype.itemsize]
    if len(body) != count * dtype.itemsize:
        raise ParseError("truncated PGM pixel data")
    img = np.frombuffer(body, dtype=dtype).reshape(height, width)
    return img.astype(np.uint16) if maxval > 255 else img.copy()
