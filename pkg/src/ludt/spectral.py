"""2-D discrete Fourier transforms and the complex algebra used by the filter layer.

Convention: the forward transform is unnormalized (bin (0,0) is the plain sum
of the inputs); the inverse carries the 1/(H*W) factor.  All public operations
work on single planes; stack helpers operating on (H, W, C) arrays are private
and skip validation.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.fft as _fft


class SymmetryError(ValueError):
    """Inverse-transform input is not conjugate-symmetric within tolerance."""


# Relative tolerance for the conjugate-symmetry validation in idft2().
SYMMETRY_RTOL = 1e-6


@lru_cache(maxsize=64)
def _mirror_index(h: int, w: int):
    """Index arrays mapping bin (i, j) -> (-i mod h, -j mod w)."""
    ii = (-np.arange(h)) % h
    jj = (-np.arange(w)) % w
    return ii[:, None], jj[None, :]


def _conj_mirror(x: np.ndarray) -> np.ndarray:
    ii, jj = _mirror_index(x.shape[0], x.shape[1])
    return np.conj(x[ii, jj])


def dft2(x: np.ndarray) -> np.ndarray:
    """Forward unnormalized 2-D DFT of a real plane, returned as a full complex plane."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ValueError(f"dft2 expects a 2-D plane, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("dft2 input contains non-finite values")
    return _dft2_unchecked(x)


def _dft2_unchecked(x: np.ndarray) -> np.ndarray:
    # Real input: compute the left half-spectrum and complete the rest by
    # conjugate symmetry; much faster than a full complex transform.
    h, w = x.shape
    half = _fft.rfft2(x)
    full = np.empty((h, w), dtype=half.dtype)
    wh = half.shape[1]
    full[:, :wh] = half
    if wh < w:
        ii, jj = _mirror_index(h, w)
        full[:, wh:] = np.conj(full[ii, jj[:, wh:]])
    return full


def _dft2_stack(x: np.ndarray) -> np.ndarray:
    """Per-channel forward DFT of a real (H, W, C) stack."""
    h, w = x.shape[:2]
    half = _fft.rfft2(x, axes=(0, 1))
    full = np.empty(x.shape[:2] + x.shape[2:], dtype=half.dtype)
    wh = half.shape[1]
    full[:, :wh] = half
    if wh < w:
        ii, jj = _mirror_index(h, w)
        full[:, wh:] = np.conj(full[ii[:, 0]][:, jj[0, wh:]])
    return full


def idft2(x: np.ndarray) -> np.ndarray:
    """Inverse 2-D DFT of a conjugate-symmetric plane; carries the 1/(H*W) factor.

    Raises SymmetryError when the input is not (numerically) the transform of a
    real plane, since the result would silently drop an imaginary part.
    """
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError(f"idft2 expects a 2-D plane, got shape {x.shape}")
    scale = np.abs(x).max()
    err = np.abs(x - _conj_mirror(x)).max()
    if err > SYMMETRY_RTOL * max(scale, 1e-300):
        raise SymmetryError(
            f"input is not conjugate-symmetric: max deviation {err:.3e} "
            f"vs scale {scale:.3e}"
        )
    return _irfft2_real(x)


def _irfft2_real(x: np.ndarray) -> np.ndarray:
    h, w = x.shape
    return _fft.irfft2(np.ascontiguousarray(x[:, : w // 2 + 1]), s=(h, w))


def _irfft2_real_stack(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[:2]
    return _fft.irfft2(np.ascontiguousarray(x[:, : w // 2 + 1]), s=(h, w), axes=(0, 1))


def hadamard(a: np.ndarray, b: np.ndarray, conj_a: bool = False) -> np.ndarray:
    """Elementwise complex product, optionally conjugating the first factor."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"hadamard operands differ in shape: {a.shape} vs {b.shape}")
    return (np.conj(a) if conj_a else a) * b


def grad_through_dft(upstream: np.ndarray) -> np.ndarray:
    """Pull a loss gradient back through dft2.

    `upstream` packs d(loss)/d(Re F) + i * d(loss)/d(Im F) for F = dft2(x) with x
    real.  Because the bins of a real plane's transform come in conjugate pairs,
    the pullback is the real part of the inverse transform of the pair-folded
    upstream, scaled by H*W.
    """
    upstream = np.asarray(upstream)
    h, w = upstream.shape
    folded = 0.5 * (upstream + _conj_mirror(upstream))
    return (h * w) * _irfft2_real(folded)


def _grad_through_dft_stack(upstream: np.ndarray) -> np.ndarray:
    h, w = upstream.shape[:2]
    ii, jj = _mirror_index(h, w)
    mirrored = np.conj(upstream[ii[:, 0]][:, jj[0]])
    return (h * w) * _irfft2_real_stack(0.5 * (upstream + mirrored))


def _grad_through_idft_stack(upstream_real: np.ndarray) -> np.ndarray:
    """Pull a gradient back through the real inverse transform (stacked)."""
    h, w = upstream_real.shape[:2]
    return _dft2_stack(upstream_real) / (h * w)
