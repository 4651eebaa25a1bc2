"""Portable float map (PFM) reading and writing.

Layout written by :func:`write_pfm`::

    "PF\\n"   (3 channels) or "Pf\\n" (1 channel)
    "<width> <height>\\n"
    "-1.0\\n"            negative scale = little-endian
    float32 samples, scanlines bottom-to-top, pixels left-to-right,
    channels interleaved (RGB)

The reader also accepts big-endian files (positive scale) and any amount of
whitespace between header tokens.
"""

from __future__ import annotations

import os

import numpy as np

from ..errors import CorruptImage


def write_pfm(path, image):
    """Write a ``(H, W)`` or ``(H, W, 3)`` array as little-endian float32 PFM.

    Non-finite samples are rejected with :class:`CorruptImage`.
    """
    data = np.asarray(image)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[..., 0]
    if data.ndim == 2:
        tag = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        tag = b"PF"
    else:
        raise CorruptImage(f"PFM holds (H, W) or (H, W, 3) images, got shape {data.shape}")
    data = data.astype("<f4")
    if not np.all(np.isfinite(data)):
        raise CorruptImage(f"refusing to write non-finite samples to {os.fspath(path)}")
    h, w = data.shape[:2]
    header = tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n"
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(data[::-1]).tobytes())


def _tokens(buf, count):
    """First ``count`` whitespace-separated header tokens and the data offset."""
    out = []
    pos = 0
    n = len(buf)
    while len(out) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise CorruptImage("truncated PFM header", offset=pos)
        out.append(buf[start:pos])
    # exactly one whitespace byte separates the scale from the raster
    if pos >= n:
        raise CorruptImage("truncated PFM header", offset=pos)
    return out, pos + 1


def read_pfm_header(path):
    """``(height, width, channels, little_endian, data_offset)`` of a PFM file."""
    with open(path, "rb") as fh:
        head = fh.read(256)
    return _parse_header(head)


def _parse_header(buf):
    (tag, w, h, scale), offset = _tokens(buf, 4)
    if tag == b"PF":
        channels = 3
    elif tag == b"Pf":
        channels = 1
    else:
        raise CorruptImage(f"not a PFM file (magic {tag!r})", offset=0)
    try:
        width, height, scale = int(w), int(h), float(scale)
    except ValueError as exc:
        raise CorruptImage(f"malformed PFM header: {exc}") from None
    if width <= 0 or height <= 0 or scale == 0:
        raise CorruptImage("malformed PFM header: bad dimensions or scale")
    return height, width, channels, scale < 0, offset


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into a float32 array, top row first."""
    with open(path, "rb") as fh:
        buf = fh.read()
    height, width, channels, little, offset = _parse_header(buf)
    count = height * width * channels
    expected = offset + 4 * count
    if len(buf) < expected:
        raise CorruptImage(
            f"{os.fspath(path)}: raster truncated at byte {len(buf)}, expected {expected}",
            offset=len(buf),
        )
    if len(buf) > expected:
        raise CorruptImage(f"{os.fspath(path)}: {len(buf) - expected} trailing bytes after raster", offset=expected)
    data = np.frombuffer(buf, dtype="<f4" if little else ">f4", count=count, offset=offset)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return data.reshape(shape)[::-1].astype(np.float32)
