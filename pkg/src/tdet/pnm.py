"""Binary pixmap I/O: P5 (grayscale) and P6 (RGB), 8-bit, maxval 255.

Images are numpy uint8 arrays shaped (H, W) or (H, W, 3). The writer
emits a fixed header layout so identical pixels produce identical bytes.
"""

from __future__ import annotations

import numpy as np


class PnmError(ValueError):
    """Raised for files that are not valid 8-bit P5/P6 pixmaps."""


def _read_tokens(data: bytes, count: int):
    """Header tokens, skipping whitespace and # comments; returns tokens and offset."""
    tokens = []
    i = 0
    while len(tokens) < count:
        if i >= len(data):
            raise PnmError("truncated header")
        c = data[i : i + 1]
        if c == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace() and data[j : j + 1] != b"#":
                j += 1
            tokens.append(data[i:j])
            i = j
    return tokens, i + 1  # single whitespace byte after maxval


def read_pnm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, offset = _read_tokens(data, 4)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise PnmError(f"unsupported magic {magic!r}; only binary P5/P6")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise PnmError(f"bad header fields: {exc}") from None
    if maxval != 255:
        raise PnmError(f"only maxval 255 supported, got {maxval}")
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    pixels = data[offset : offset + need]
    if len(pixels) != need:
        raise PnmError(f"expected {need} pixel bytes, found {len(pixels)}")
    arr = np.frombuffer(pixels, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(height, width).copy()
    return arr.reshape(height, width, 3).copy()


def write_pnm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise PnmError(f"expected uint8 pixels, got {image.dtype}")
    if image.ndim == 2:
        magic, (h, w) = b"P5", image.shape
    elif image.ndim == 3 and image.shape[2] == 3:
        magic, (h, w) = b"P6", image.shape[:2]
    else:
        raise PnmError(f"expected (H, W) or (H, W, 3), got {image.shape}")
    with open(path, "wb") as fh:
        fh.write(magic + b"\n" + f"{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def to_float(image: np.ndarray) -> np.ndarray:
    """uint8 -> float32 in [0, 1]."""
    return np.asarray(image, dtype=np.float32) / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and re-quantize to 8-bit."""
    return np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
