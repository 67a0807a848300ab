"""Image plumbing: frame IO, patch cropping, Gaussian labels, windowing, entropy.

Frames are float arrays in [0, 1], shaped (H, W) for grayscale or (H, W, 3) for
color.  Boxes use pixel-center coordinates: pixel i sits at coordinate i, a box
of width w centered at cx spans [cx - w/2, cx + w/2].
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image

# Intensity weights for grayscale conversion.
LUMA = np.array([0.299, 0.587, 0.114])

IMAGE_EXTENSIONS = {".png", ".ppm", ".pgm", ".pbm", ".bmp"}


@dataclass
class BBox:
    """Axis-aligned box, center + size, in pixels."""

    cx: float
    cy: float
    w: float
    h: float

    def to_tlwh(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.w, self.h)

    @classmethod
    def from_tlwh(cls, x: float, y: float, w: float, h: float) -> "BBox":
        return cls(x + w / 2.0, y + h / 2.0, w, h)

    def validate(self) -> "BBox":
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"degenerate box: w={self.w}, h={self.h}")
        return self


def load_frame(path: str | Path) -> np.ndarray:
    """Load an 8-bit image file as floats in [0, 1]; (H, W, 3) or (H, W)."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if ("A" in im.mode or len(im.mode) > 1) else "L")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return arr


def save_frame(path: str | Path, frame: np.ndarray) -> None:
    arr = np.clip(np.asarray(frame), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB" if data.ndim == 3 else "L").save(path)


_NUM_RE = re.compile(r"(\d+)")


def _frame_sort_key(p: Path):
    # Zero-padded numeric sort: order by the integer value of the last digit
    # run in the stem, then by full name to break ties.
    runs = _NUM_RE.findall(p.stem)
    return (int(runs[-1]) if runs else -1, p.name)


def list_frames(directory: str | Path) -> list[Path]:
    """Image files of a sequence directory in zero-padded numeric order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ValueError(f"not a sequence directory: {directory}")
    files = [p for p in directory.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS]
    if not files:
        raise ValueError(f"no image files in {directory}")
    return sorted(files, key=_frame_sort_key)


def to_gray(frame: np.ndarray) -> np.ndarray:
    if frame.ndim == 2:
        return frame
    return frame @ LUMA


def crop_patch(
    frame: np.ndarray, box: BBox, context: float, out_size: int
) -> np.ndarray:
    """Crop a square region of side max(w, h) * (1 + context) around the box
    center and bilinearly resize it to out_size x out_size.

    Out-of-frame samples replicate the nearest edge pixel.  Returns (S, S) or
    (S, S, C) matching the frame's channel count.
    """
    box.validate()
    if context < 0:
        raise ValueError(f"context must be >= 0, got {context}")
    side = max(box.w, box.h) * (1.0 + context)
    return crop_square(frame, box.cx, box.cy, side, out_size)


def crop_square(
    frame: np.ndarray, cx: float, cy: float, side: float, out_size: int
) -> np.ndarray:
    """Bilinear resample of the square [c - side/2, c + side/2] to out_size cells."""
    if side <= 0 or out_size < 1:
        raise ValueError(f"bad crop geometry: side={side}, out_size={out_size}")
    h, w = frame.shape[:2]
    scale = side / out_size
    # Sample at output cell centers; clamp indices to replicate the border.
    xs = (cx - side / 2.0) + (np.arange(out_size) + 0.5) * scale
    ys = (cy - side / 2.0) + (np.arange(out_size) + 0.5) * scale
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    if frame.ndim == 3:
        fx = fx[None, :, None]
        fy = fy[:, None, None]
    else:
        fx = fx[None, :]
        fy = fy[:, None]
    a = frame[y0c[:, None], x0c[None, :]]
    b = frame[y0c[:, None], x1c[None, :]]
    c = frame[y1c[:, None], x0c[None, :]]
    d = frame[y1c[:, None], x1c[None, :]]
    top = a + (b - a) * fx
    bot = c + (d - c) * fx
    return top + (bot - top) * fy


def gaussian_label(h: int, w: int, peak_row: int, peak_col: int, sigma: float) -> np.ndarray:
    """Gaussian plane with value exp(-d^2 / (2 sigma^2)) at circular (wrap-around)
    displacement d from the peak cell; exactly 1 at the peak."""
    if not (0 <= peak_row < h and 0 <= peak_col < w):
        raise ValueError(f"peak ({peak_row}, {peak_col}) outside {h}x{w}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    dr = _circular_displacement(h, peak_row)
    dc = _circular_displacement(w, peak_col)
    d2 = dr[:, None] ** 2 + dc[None, :] ** 2
    return np.exp(-d2 / (2.0 * sigma * sigma))


def _circular_displacement(n: int, peak: int) -> np.ndarray:
    d = (np.arange(n) - peak) % n
    return np.where(d <= n // 2, d, d - n).astype(np.float64)


def canonical_label(h: int, w: int, sigma: float) -> np.ndarray:
    """Label for a target at its reference position: peak at cell (0, 0) so a
    response argmax reads directly as a wrap-around displacement."""
    return gaussian_label(h, w, 0, 0, sigma)


def label_sigma(out_size: int, context: float) -> float:
    """Label bandwidth rule: one tenth of the target extent in response cells."""
    return 0.1 * out_size / (1.0 + context)


@lru_cache(maxsize=32)
def hann_window(h: int, w: int) -> np.ndarray:
    """Separable raised-cosine taper: zero at borders, 1 at the center of
    odd-sized planes."""
    win = np.outer(np.hanning(h), np.hanning(w))
    win.setflags(write=False)
    return win


def apply_window(patch: np.ndarray) -> np.ndarray:
    """Multiply a patch or feature stack by the matching Hann window per channel."""
    win = hann_window(patch.shape[0], patch.shape[1])
    if patch.ndim == 3:
        return patch * win[:, :, None]
    return patch * win


def entropy(patch: np.ndarray) -> float:
    """Shannon entropy (bits) of the 256-bin intensity histogram."""
    gray = to_gray(np.asarray(patch))
    bins = np.clip(np.round(gray * 255.0).astype(np.int64), 0, 255)
    counts = np.bincount(bins.ravel(), minlength=256)
    p = counts[counts > 0] / bins.size
    return float(-(p * np.log2(p)).sum()) + 0.0
