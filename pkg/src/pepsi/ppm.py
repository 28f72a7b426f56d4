"""Binary PPM (P6) images and PGM (P5) masks, maxval 255.

Color values map linearly between bytes 0..255 and [-1, 1]; mask byte 255
is hole (1). Round trips are exact at 8-bit quantization.
"""

from __future__ import annotations

import numpy as np


class ImageFormatError(ValueError):
    """Malformed header, truncated payload, or unsupported maxval."""


def _read_header(data, magic):
    if data[:2] != magic:
        raise ImageFormatError(f"expected {magic!r} header, got {data[:2]!r}")
    fields = []
    pos = 2
    while len(fields) < 3:
        # skip whitespace and '#' comment lines between header tokens
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated header")
        fields.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError:
        raise ImageFormatError("non-numeric header field") from None
    if maxval != 255:
        raise ImageFormatError(f"unsupported maxval {maxval}")
    if w < 1 or h < 1:
        raise ImageFormatError("non-positive image dims")
    return w, h, pos


def read_ppm(path):
    """Load a P6 file as a (3, H, W) float32 image in [-1, 1]."""
    data = open(path, "rb").read()
    w, h, pos = _read_header(data, b"P6")
    need = w * h * 3
    payload = np.frombuffer(data, dtype=np.uint8, count=-1, offset=pos)
    if payload.size < need:
        raise ImageFormatError(f"payload holds {payload.size} bytes, need {need}")
    img = payload[:need].reshape(h, w, 3).transpose(2, 0, 1)
    return (img.astype(np.float32) / 255.0) * 2.0 - 1.0


def write_ppm(path, image):
    """Write a (3, H, W) image in [-1, 1] as P6."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ImageFormatError(f"expected (3,H,W) image, got {image.shape}")
    bytes_ = np.rint((np.clip(image, -1.0, 1.0) + 1.0) / 2.0 * 255.0).astype(np.uint8)
    h, w = image.shape[1:]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(bytes_.transpose(1, 2, 0).tobytes())


def read_pgm(path):
    """Load a P5 mask as a (H, W) uint8 binary array (>=128 is hole)."""
    data = open(path, "rb").read()
    w, h, pos = _read_header(data, b"P5")
    need = w * h
    payload = np.frombuffer(data, dtype=np.uint8, count=-1, offset=pos)
    if payload.size < need:
        raise ImageFormatError(f"payload holds {payload.size} bytes, need {need}")
    return (payload[:need].reshape(h, w) >= 128).astype(np.uint8)


def write_pgm(path, mask):
    """Write a binary (H, W) mask as P5, hole = 255."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ImageFormatError(f"expected (H,W) mask, got {mask.shape}")
    h, w = mask.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(((mask > 0).astype(np.uint8) * 255).tobytes())
