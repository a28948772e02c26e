"""Binary PGM (P5, maxval 255) read/write for heatmaps and masks."""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def write_pgm(path, image: np.ndarray) -> None:
    """Write a 2-D uint8 array as binary PGM, row-major."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValidationError(f"PGM image must be 2-D, got shape {img.shape}")
    if img.dtype != np.uint8:
        raise ValidationError(f"PGM image must be uint8, got {img.dtype}")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM (maxval 255) into a 2-D uint8 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ValidationError(f"not a binary PGM file: {path}")
    # header = magic, width, height, maxval as whitespace-separated tokens
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise ValidationError(f"unsupported PGM maxval {maxval}, expected 255")
    payload = data[pos : pos + w * h]
    if len(payload) != w * h:
        raise ValidationError(f"truncated PGM payload in {path}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w)


def heatmap_to_u8(values: np.ndarray) -> np.ndarray:
    """Scale [0, 1] values by 255 with round-half-even, clipped to [0, 255]."""
    return np.clip(np.rint(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)


def mask_to_u8(bits: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(bits, dtype=bool), 255, 0).astype(np.uint8)


def u8_to_unit(image: np.ndarray) -> np.ndarray:
    return np.asarray(image, dtype=np.float64) / 255.0


def u8_to_bool(image: np.ndarray) -> np.ndarray:
    return np.asarray(image) > 127
