"""Binary PGM (P5) / PPM (P6) reading and writing, maxval 255 only."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    """File is not a binary 8-bit PGM/PPM we can read."""


_CHANNELS = {b"P5": 1, b"P6": 3}


def _header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments.

    Returns the tokens and the offset of the single whitespace byte that
    ends the header.
    """
    tokens, pos, n = [], 0, len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated header")
        tokens.append(buf[start:pos])
    return tokens, pos


def read_pnm(path) -> np.ndarray:
    """Load a P5/P6 file as float64 ``[C,H,W]`` with values ``/255``."""
    buf = Path(path).read_bytes()
    magic = buf[:2]
    if magic not in _CHANNELS:
        raise ImageFormatError(f"{path}: not a binary PGM/PPM (magic {magic!r})")
    tokens, pos = _header_tokens(buf[2:], 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise ImageFormatError(f"{path}: non-numeric header field") from None
    if maxval != 255:
        raise ImageFormatError(f"{path}: maxval {maxval} unsupported (need 255)")
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"{path}: empty image {width}x{height}")
    start = 2 + pos + 1
    if 2 + pos >= len(buf) or not buf[2 + pos:start].isspace():
        raise ImageFormatError(f"{path}: missing whitespace after header")
    c = _CHANNELS[magic]
    need = width * height * c
    body = buf[start:start + need]
    if len(body) != need:
        raise ImageFormatError(f"{path}: pixel data truncated ({len(body)} of {need} bytes)")
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(height, width, c)
    return pixels.transpose(2, 0, 1).astype(np.float64) / 255.0


def _to_bytes(x: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(x, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_pnm(path, image) -> None:
    """Write ``[1,H,W]`` (or ``[H,W]``) as P5, ``[3,H,W]`` as P6."""
    a = np.asarray(image, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3 or a.shape[0] not in (1, 3):
        raise ImageFormatError(f"cannot write image of shape {list(a.shape)}")
    c, h, w = a.shape
    magic = b"P5" if c == 1 else b"P6"
    header = magic + f"\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + _to_bytes(a).transpose(1, 2, 0).tobytes())


def write_pgm(path, image) -> None:
    a = np.asarray(image)
    if a.ndim == 3 and a.shape[0] != 1:
        raise ImageFormatError(f"PGM needs one channel, got {a.shape[0]}")
    write_pnm(path, a)


def write_ppm(path, image) -> None:
    a = np.asarray(image)
    if a.ndim != 3 or a.shape[0] != 3:
        raise ImageFormatError(f"PPM needs [3,H,W], got {list(a.shape)}")
    write_pnm(path, a)
