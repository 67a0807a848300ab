"""Online forward-only tracking: initialize from a first-frame box, localize
per frame via the correlation response over a three-level scale pyramid, and
blend a freshly solved filter into the model by moving average.

Responses are read with the wrap-around convention: the zero-displacement cell
is (0, 0) and argmax coordinates past half the plane size wrap negative.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as _fft

from . import dcf
from ._fastpath import FastExtractor, crop_bilinear
from .imgproc import BBox, canonical_label, hann_window, label_sigma, load_frame
from .network import NetParams


@dataclass
class TrackerConfig:
    alpha: float = 0.01  # filter moving-average rate
    scale_base: float = 1.015
    scale_steps: tuple[int, ...] = (-1, 0, 1)
    lam: float = 1e-4
    context: float = 2.0
    out_size: int = 125
    sigma: float | None = None  # None -> label_sigma(out_size, context)
    use_window: bool = True
    dtype: type = np.float32

    @property
    def label_sigma(self) -> float:
        return self.sigma if self.sigma is not None else label_sigma(
            self.out_size, self.context
        )


@dataclass
class TrackerState:
    cfg: TrackerConfig
    extractor: FastExtractor = field(repr=False)
    filt_conj: np.ndarray = field(repr=False)  # conj half-spectrum (S, S//2+1, C)
    label_half_conj: np.ndarray = field(repr=False)
    bbox: BBox = None

    @property
    def filt(self) -> np.ndarray:
        """Per-channel half-spectrum filter (inspection/test convenience)."""
        return np.conj(self.filt_conj)


def _prepare_frame(frame: np.ndarray, dtype) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.ndim == 2:
        frame = np.repeat(frame[:, :, None], 3, axis=2)
    return np.ascontiguousarray(frame, dtype=dtype)


def init(frame: np.ndarray, bbox: BBox, params: NetParams, cfg: TrackerConfig | None = None) -> TrackerState:
    """Solve the initial template filter from the given box."""
    cfg = cfg or TrackerConfig()
    bbox.validate()
    h, w = frame.shape[:2]
    if not (0 <= bbox.cx < w and 0 <= bbox.cy < h):
        raise ValueError(f"box center ({bbox.cx}, {bbox.cy}) outside {h}x{w} frame")
    size = cfg.out_size
    window = hann_window(size, size) if cfg.use_window else None
    extractor = FastExtractor(params, size, window, cfg.dtype)
    label = canonical_label(size, size, cfg.label_sigma)
    cplx = np.complex64 if np.dtype(cfg.dtype) == np.float32 else np.complex128
    label_half_conj = dcf.label_spectrum_half_conj(label, cplx)
    state = TrackerState(cfg, extractor, None, label_half_conj, BBox(bbox.cx, bbox.cy, bbox.w, bbox.h))
    state.filt_conj = _solve_at(state, _prepare_frame(frame, cfg.dtype))
    return state


def _crop_side(bbox: BBox, cfg: TrackerConfig) -> float:
    return max(bbox.w, bbox.h) * (1.0 + cfg.context)


def _solve_at(state: TrackerState, frame: np.ndarray) -> np.ndarray:
    cfg = state.cfg
    patch = crop_bilinear(
        frame, state.bbox.cx, state.bbox.cy, _crop_side(state.bbox, cfg), cfg.out_size
    )
    feat = state.extractor.extract(patch)
    return dcf.solve_filter_half_conj(feat, state.label_half_conj, cfg.lam)


def _wrap(cell: int, size: int) -> int:
    return cell if cell <= size // 2 else cell - size


def step(state: TrackerState, frame: np.ndarray) -> BBox:
    """Localize over the scale pyramid, move the box, re-solve at the new
    location, and blend the filter."""
    cfg = state.cfg
    frame = _prepare_frame(frame, cfg.dtype)
    fh, fw = frame.shape[:2]
    size = cfg.out_size
    base_side = _crop_side(state.bbox, cfg)

    sides = [base_side * cfg.scale_base**s for s in cfg.scale_steps]
    patches = [
        crop_bilinear(frame, state.bbox.cx, state.bbox.cy, side, size)
        for side in sides
    ]
    feats = state.extractor.extract_batch(patches)
    spectra = _fft.rfft2(feats, axes=(1, 2))
    rhats = np.einsum("shwc,hwc->shw", spectra, state.filt_conj)
    resps = _fft.irfft2(rhats, s=(size, size), axes=(1, 2))
    best = None  # (value, scale, peak_r, peak_c, side)
    for idx, s in enumerate(cfg.scale_steps):
        pr, pc = dcf.peak_cell(resps[idx])
        val = float(resps[idx][pr, pc])
        if best is None or val > best[0]:
            best = (val, cfg.scale_base**s, pr, pc, sides[idx])

    _, scale, pr, pc, side = best
    px_per_cell = side / size
    state.bbox.cx += _wrap(pc, size) * px_per_cell
    state.bbox.cy += _wrap(pr, size) * px_per_cell
    state.bbox.w *= scale
    state.bbox.h *= scale
    # Keep the center inside the frame even when the target leaves it.
    state.bbox.cx = min(max(state.bbox.cx, 0.0), fw - 1.0)
    state.bbox.cy = min(max(state.bbox.cy, 0.0), fh - 1.0)

    # Moving-average model update, done in place on the conjugated filter.
    fresh = _solve_at(state, frame)
    state.filt_conj *= 1.0 - cfg.alpha
    fresh *= cfg.alpha
    state.filt_conj += fresh
    return BBox(state.bbox.cx, state.bbox.cy, state.bbox.w, state.bbox.h)


def run_sequence(
    frames, init_bbox: BBox, params: NetParams, cfg: TrackerConfig | None = None
) -> list[BBox]:
    """Track a whole sequence; returns one box per frame, the first being the
    given initialization.  `frames` may hold arrays or image paths."""
    boxes = []
    state = None
    for item in frames:
        frame = load_frame(item) if isinstance(item, (str, Path)) else item
        if state is None:
            state = init(frame, init_bbox, params, cfg)
            boxes.append(BBox(init_bbox.cx, init_bbox.cy, init_bbox.w, init_bbox.h))
        else:
            boxes.append(step(state, frame))
    if state is None:
        raise ValueError("empty sequence")
    return boxes
