"""Binary PGM (P5) heatmaps for small matrices."""

from pathlib import Path

import numpy as np

from .errors import ParameterError

CELL = 32


def heatmap_pixels(matrix, cell: int = CELL) -> np.ndarray:
    """Map [min, max] linearly onto [0, 255] and upscale each cell.

    A constant matrix becomes uniform mid-gray (128).
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise ParameterError(f"heatmap needs a non-empty 2-D matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ParameterError("heatmap entries must be finite")
    lo, hi = m.min(), m.max()
    if hi == lo:
        gray = np.full(m.shape, 128, dtype=np.uint8)
    else:
        gray = np.rint((m - lo) / (hi - lo) * 255.0).astype(np.uint8)
    return np.kron(gray, np.ones((cell, cell), dtype=np.uint8))


def encode_pgm(pixels: np.ndarray) -> bytes:
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.astype(np.uint8).tobytes()


def emit_heatmap(matrix, path) -> None:
    Path(path).write_bytes(encode_pgm(heatmap_pixels(matrix)))


def read_pgm(path) -> np.ndarray:
    """Inverse of :func:`emit_heatmap` for the exact header it writes."""
    raw = Path(path).read_bytes()
    magic, dims, maxval, body = raw.split(b"\n", 3)
    if magic != b"P5" or maxval != b"255":
        raise ParameterError(f"{path}: not an 8-bit P5 graymap")
    w, h = (int(x) for x in dims.split())
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w)
