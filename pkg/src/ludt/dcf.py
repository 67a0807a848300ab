"""Correlation-filter layer: closed-form ridge solve in the Fourier domain,
response computation, pseudo-labels, moving-average update, and the exact
gradients of the solve->respond composition.

Feature stacks are (H, W, C); filters are per-channel complex planes of the
same shape.  The multi-channel solve shares one denominator summed over
channels, which is the exact joint ridge solution because the per-bin data
matrix is rank one.  A cosine window, when given, is folded into the layer so
gradients flow through it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as _fft

from .imgproc import gaussian_label
from .spectral import (
    _dft2_stack,
    _dft2_unchecked,
    _grad_through_dft_stack,
    _irfft2_real,
)


def _as_stack(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 2:
        return x[:, :, None]
    if x.ndim != 3:
        raise ValueError(f"expected (H, W) or (H, W, C) features, got {x.shape}")
    return x


def _windowed(feat: np.ndarray, window: np.ndarray | None) -> np.ndarray:
    if window is None:
        return feat
    if window.shape != feat.shape[:2]:
        raise ValueError(
            f"window {window.shape} does not match feature dims {feat.shape[:2]}"
        )
    return feat * window[:, :, None]


@dataclass
class DCFCache:
    """Intermediates of one solve->respond pair, owned by the caller."""

    tmpl_spectra: np.ndarray  # F(x_c), (H, W, C)
    search_spectra: np.ndarray  # F(z_c), (H, W, C)
    label_spectrum: np.ndarray  # F(y), (H, W)
    denom: np.ndarray  # real, (H, W)
    filt: np.ndarray  # (H, W, C)
    window: np.ndarray | None


def solve_filter(
    feat: np.ndarray,
    label: np.ndarray,
    lam: float,
    window: np.ndarray | None = None,
    cache: DCFCache | None = None,
) -> np.ndarray:
    """Closed-form per-channel filter W_c = F(x_c) . F(y)* / (sum_c' |F(x_c')|^2 + lam)."""
    if lam <= 0:
        raise ValueError(f"regularization must be positive, got {lam}")
    feat = _as_stack(feat)
    if label.shape != feat.shape[:2]:
        raise ValueError(
            f"label {label.shape} does not match feature dims {feat.shape[:2]}"
        )
    xw = _windowed(feat, window)
    spectra = _dft2_stack(xw)
    yhat = _dft2_unchecked(np.asarray(label, dtype=xw.dtype))
    denom = (spectra.real**2 + spectra.imag**2).sum(axis=2) + lam
    filt = spectra * (np.conj(yhat) / denom)[:, :, None]
    if cache is not None:
        cache.tmpl_spectra = spectra
        cache.label_spectrum = yhat
        cache.denom = denom
        cache.filt = filt
        cache.window = window
    return filt


def respond(
    filt: np.ndarray,
    feat: np.ndarray,
    window: np.ndarray | None = None,
    cache: DCFCache | None = None,
) -> np.ndarray:
    """Response R = F^-1( sum_c W_c* . F(z_c) )."""
    feat = _as_stack(feat)
    if filt.shape != feat.shape:
        raise ValueError(
            f"filter {filt.shape} does not match features {feat.shape}"
        )
    zw = _windowed(feat, window)
    spectra = _dft2_stack(zw)
    rhat = np.einsum("hwc,hwc->hw", np.conj(filt), spectra)
    if cache is not None:
        cache.search_spectra = spectra
    return _irfft2_real(rhat)


def new_cache() -> DCFCache:
    return DCFCache(None, None, None, None, None, None)  # type: ignore[arg-type]


def solve_and_respond(
    tmpl_feat: np.ndarray,
    label: np.ndarray,
    search_feat: np.ndarray,
    lam: float,
    window: np.ndarray | None = None,
    with_cache: bool = False,
):
    """Convenience pairing used by the trainer; cache enables dcf_backward."""
    cache = new_cache() if with_cache else None
    filt = solve_filter(tmpl_feat, label, lam, window, cache)
    r = respond(filt, search_feat, window, cache)
    return (r, cache) if with_cache else r


def dcf_backward(upstream: np.ndarray, cache: DCFCache):
    """Gradients of the composed solve->respond map w.r.t. both feature inputs.

    The label is a constant.  The template branch routes through the filter
    quotient (numerator and shared denominator); the search branch is the
    single product term.  Returns (d_template_feat, d_search_feat), both
    (H, W, C) real.
    """
    X = cache.tmpl_spectra
    Z = cache.search_spectra
    if X is None or Z is None:
        raise ValueError("cache does not hold a completed solve->respond pair")
    if upstream.shape != X.shape[:2]:
        raise ValueError(
            f"upstream {upstream.shape} does not match response dims {X.shape[:2]}"
        )
    h, w = upstream.shape
    yhat = cache.label_spectrum
    denom = cache.denom
    filt = cache.filt

    # Through the real inverse transform.
    d_rhat = _dft2_unchecked(np.asarray(upstream, dtype=np.float64)) / (h * w)

    # Search branch: rhat = sum_c W_c* Z_c.
    d_z = d_rhat[:, :, None] * filt
    d_search = _grad_through_dft_stack(d_z)

    # Template branch.
    d_filt = np.conj(d_rhat)[:, :, None] * Z
    d_num = d_filt / denom[:, :, None]
    d_denom = -(d_filt * np.conj(filt)).real.sum(axis=2) / denom
    d_x = d_num * yhat[:, :, None] + 2.0 * d_denom[:, :, None] * X
    d_tmpl = _grad_through_dft_stack(d_x)

    if cache.window is not None:
        d_tmpl = d_tmpl * cache.window[:, :, None]
        d_search = d_search * cache.window[:, :, None]
    return d_tmpl, d_search


def pseudo_label(response: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian label centered at the response argmax.

    Ties break to the smallest row, then smallest column.  The result is a
    constant with respect to differentiation.
    """
    if not np.isfinite(response).all():
        raise ValueError("response contains non-finite values")
    r, c = np.unravel_index(int(np.argmax(response)), response.shape)
    return gaussian_label(response.shape[0], response.shape[1], int(r), int(c), sigma)


def peak_cell(response: np.ndarray) -> tuple[int, int]:
    r, c = np.unravel_index(int(np.argmax(response)), response.shape)
    return int(r), int(c)


def update_filter(prev: np.ndarray, fresh: np.ndarray, alpha: float) -> np.ndarray:
    """Moving average W_t = (1 - alpha) W_{t-1} + alpha W."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if prev.shape != fresh.shape:
        raise ValueError(f"filter shapes differ: {prev.shape} vs {fresh.shape}")
    return (1.0 - alpha) * prev + alpha * fresh


# ---------------------------------------------------------------------------
# Half-spectrum inference path (no gradients): identical math on the left
# half-plane of the spectra, used by the online tracker for speed.
# ---------------------------------------------------------------------------


def label_spectrum_half_conj(label: np.ndarray, dtype=np.complex128) -> np.ndarray:
    """Precomputed conj(F(y)) on the half-spectrum grid."""
    return np.conj(_fft.rfft2(label)).astype(dtype)


def _denom_half(spectra: np.ndarray, lam) -> np.ndarray:
    # sum of |X_c|^2 across channels via the interleaved real view (fused
    # multiply-reduce, no strided .real/.imag temporaries)
    v = spectra.view(spectra.real.dtype)
    return np.einsum("hwc,hwc->hw", v, v) + lam


def solve_filter_half(
    feat: np.ndarray, label_half_conj: np.ndarray, lam: float
) -> np.ndarray:
    """Half-spectrum solve; `feat` must already be windowed; (H, W//2+1, C) out."""
    spectra = _fft.rfft2(feat, axes=(0, 1))
    denom = _denom_half(spectra, spectra.real.dtype.type(lam))
    return spectra * (label_half_conj / denom)[:, :, None]


def solve_filter_half_conj(
    feat: np.ndarray, label_half_conj: np.ndarray, lam: float
) -> np.ndarray:
    """Conjugate of the half-spectrum solve (the form respond_conj consumes)."""
    spectra = _fft.rfft2(feat, axes=(0, 1))
    denom = _denom_half(spectra, spectra.real.dtype.type(lam))
    q = spectra * (label_half_conj / denom)[:, :, None]
    return np.conjugate(q, out=q)


def respond_half(filt_half: np.ndarray, feat: np.ndarray) -> np.ndarray:
    """Half-spectrum response; `feat` must already be windowed; (H, W) out."""
    return respond_half_conj(np.conj(filt_half), feat)


def respond_half_conj(filt_half_conj: np.ndarray, feat: np.ndarray) -> np.ndarray:
    """Response from a pre-conjugated half-spectrum filter."""
    h, w = feat.shape[:2]
    spectra = _fft.rfft2(feat, axes=(0, 1))
    rhat = np.einsum("hwc,hwc->hw", filt_half_conj, spectra)
    return _fft.irfft2(rhat, s=(h, w))


def expand_half_filter(filt_half: np.ndarray, w: int) -> np.ndarray:
    """Full-plane filter from its half-spectrum form (test/inspection helper)."""
    h = filt_half.shape[0]
    wh = filt_half.shape[1]
    full = np.empty((h, w) + filt_half.shape[2:], dtype=np.complex128)
    full[:, :wh] = filt_half
    ii = (-np.arange(h)) % h
    jj = (-np.arange(w)) % w
    full[:, wh:] = np.conj(full[ii][:, jj[wh:]])
    return full
