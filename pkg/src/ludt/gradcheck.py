"""Central finite-difference verification of every hand-derived gradient:
the spectral pullback, the feature extractor, the filter layer, and the full
multi-frame training loss.  Used by the `gradcheck` CLI command and the test
suite."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import dcf, network, spectral, training
from .imgproc import canonical_label, hann_window


@dataclass
class SuiteResult:
    name: str
    max_rel_err: float
    tolerance: float
    checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (
            f"{self.name}: max_rel_err={self.max_rel_err:.3e} "
            f"tol={self.tolerance:.0e} coords={self.checked} {tag}"
        )


def fd_gradient(loss: Callable[[np.ndarray], float], x: np.ndarray, idx, eps: float) -> float:
    """Central difference of `loss` along one coordinate of x (x is restored)."""
    orig = x[idx]
    x[idx] = orig + eps
    hi = loss(x)
    x[idx] = orig - eps
    lo = loss(x)
    x[idx] = orig
    return (hi - lo) / (2.0 * eps)


def rel_err(a: float, b: float, floor: float = 1e-7) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_coords(
    loss: Callable[[np.ndarray], float],
    x: np.ndarray,
    analytic: np.ndarray,
    coords,
    eps: float,
) -> tuple[float, int]:
    worst = 0.0
    for idx in coords:
        fd = fd_gradient(loss, x, idx, eps)
        worst = max(worst, rel_err(analytic[idx], fd))
    return worst, len(coords)


def _sample_coords(rng: np.random.Generator, shape, count: int):
    total = int(np.prod(shape))
    count = min(count, total)
    flat = rng.choice(total, size=count, replace=False)
    return [np.unravel_index(int(f), shape) for f in flat]


def spectral_suite(seed: int = 0, tolerance: float = 1e-5) -> SuiteResult:
    """L = ||F(x)||^2 / 2; analytic gradient via the transform pullback."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((6, 7))

    def loss(arr):
        f = spectral.dft2(arr)
        return 0.5 * float((f.real**2 + f.imag**2).sum())

    analytic = spectral.grad_through_dft(spectral.dft2(x))
    coords = [(i, j) for i in range(6) for j in range(7)]
    worst, n = check_coords(loss, x, analytic, coords, eps=1e-4)
    return SuiteResult("spectral", worst, tolerance, n)


def network_suite(seed: int = 0, tolerance: float = 1e-4) -> SuiteResult:
    """Miniature feature extractor against finite differences, every weight
    plus sampled input pixels."""
    rng = np.random.default_rng(seed)
    params = network.init_params(seed + 1, cin=3, c1=2, c2=2)
    x = rng.standard_normal((9, 9, 3))
    g = rng.standard_normal((9, 9, 2))

    def loss_from(params_, x_):
        out, _ = network.forward(x_, params_)
        return float((out * g).sum())

    out, cache = network.forward(x, params)
    dx, grads = network.backward(g, cache)

    worst = 0.0
    checked = 0
    for (_, p), (_, a) in zip(params.items(), grads.items()):
        coords = [np.unravel_index(i, p.shape) for i in range(p.size)]
        w, n = check_coords(lambda _: loss_from(params, x), p, a, coords, eps=1e-5)
        worst = max(worst, w)
        checked += n
    coords = _sample_coords(rng, x.shape, 60)
    w, n = check_coords(lambda _: loss_from(params, x), x, dx, coords, eps=1e-5)
    worst = max(worst, w)
    checked += n
    return SuiteResult("network", worst, tolerance, checked)


def dcf_suite(seed: int = 0, tolerance: float = 1e-4) -> SuiteResult:
    """Solve->respond layer on a 6x6 two-channel instance; both branches."""
    rng = np.random.default_rng(seed)
    h = w = 6
    tmpl = rng.standard_normal((h, w, 2))
    search = rng.standard_normal((h, w, 2))
    label = canonical_label(h, w, 1.0)
    target = rng.standard_normal((h, w))
    win = hann_window(h, w)

    def loss(_=None):
        r = dcf.solve_and_respond(tmpl, label, search, 1e-2, win)
        return float(((r - target) ** 2).sum())

    r, cache = dcf.solve_and_respond(tmpl, label, search, 1e-2, win, with_cache=True)
    d_tmpl, d_search = dcf.dcf_backward(2.0 * (r - target), cache)

    worst = 0.0
    checked = 0
    for arr, analytic in ((tmpl, d_tmpl), (search, d_search)):
        coords = _sample_coords(rng, arr.shape, 110)
        wst, n = check_coords(loss, arr, analytic, coords, eps=1e-5)
        worst = max(worst, wst)
        checked += n
    return SuiteResult("dcf", worst, tolerance, checked)


def _pipeline_grads_with_inputs(batch, params, cfg, frozen_labels, frozen_norm):
    """Trainer gradient plus per-patch input gradients (the trainer discards
    the latter).  Mirrors training.batch_loss_and_grads one-to-one."""
    n = len(batch)
    grads = network.GradParams.zeros_like(params)
    dpatches = [[np.zeros_like(p) for p in s.patches] for s in batch]
    size = batch[0].template.shape[0]
    y0 = canonical_label(size, size, cfg.label_sigma)
    for i, sample in enumerate(batch):
        coeff = frozen_norm[i] / n
        if coeff == 0.0:
            continue
        run = training.run_sample(
            sample, params, cfg, with_grads=True, frozen_labels=frozen_labels[i]
        )
        upstream_t = None
        for k, (r_back, cache) in enumerate(zip(run.hop_responses, run.hop_caches)):
            d_resp = (2.0 * coeff) * (r_back - y0)
            d_tmpl, d_search = dcf.dcf_backward(d_resp, cache)
            dp, g = network.backward(d_tmpl, run.feat_caches[k + 1])
            grads.add_scaled(g, 1.0)
            dpatches[i][k + 1] += dp
            upstream_t = d_search if upstream_t is None else upstream_t + d_search
        dp, g = network.backward(upstream_t, run.feat_caches[0])
        grads.add_scaled(g, 1.0)
        dpatches[i][0] += dp
    return grads, dpatches


def pipeline_suite(seed: int = 0, tolerance: float = 1e-3, min_coords: int = 500) -> SuiteResult:
    """Full training pipeline: features -> filter layer -> multi-frame
    consistency loss with two samples of two search patches each.

    Pseudo-labels and batch weights are held at the values the analytic
    gradient treats as constants.  Checks every network weight plus sampled
    patch pixels.
    """
    rng = np.random.default_rng(seed)
    params = network.init_params(seed + 1, cin=3, c1=2, c2=2)
    cfg = training.TrainConfig(
        epochs=1, batch_size=2, traj_m=2, patch_size=17, sigma=1.7, seed=seed
    )
    batch = []
    for i in range(2):
        tmpl = rng.random((17, 17, 3))
        searches = [
            np.clip(np.roll(tmpl, (rng.integers(-3, 4), rng.integers(-3, 4)), (0, 1))
                    + 0.05 * rng.standard_normal((17, 17, 3)), 0.0, 1.0)
            for _ in range(2)
        ]
        batch.append(training.TrajectorySample(tmpl, searches, f"fd_{i}"))

    _, trainer_grads, diag = training.batch_loss_and_grads(batch, params, cfg)
    frozen_labels = [
        training.run_sample(s, params, cfg, with_grads=False).labels[1:] for s in batch
    ]
    frozen_norm = diag["weights"].norm
    grads, dpatches = _pipeline_grads_with_inputs(
        batch, params, cfg, frozen_labels, frozen_norm
    )
    for (_, a), (_, b) in zip(grads.items(), trainer_grads.items()):
        if not np.allclose(a, b, rtol=1e-12, atol=1e-12):
            raise AssertionError("gradcheck mirror diverged from the trainer")

    def loss(_=None):
        return training.batch_loss_given(batch, params, cfg, frozen_labels, frozen_norm)

    worst = 0.0
    checked = 0
    # Every network weight.
    for (_, p), (_, a) in zip(params.items(), grads.items()):
        coords = [np.unravel_index(i, p.shape) for i in range(p.size)]
        wst, n = check_coords(loss, p, a, coords, eps=1e-5)
        worst = max(worst, wst)
        checked += n
    # Sampled pixels of every patch.
    for i, sample in enumerate(batch):
        for j, patch in enumerate(sample.patches):
            coords = _sample_coords(rng, patch.shape, 75)
            wst, n = check_coords(loss, patch, dpatches[i][j], coords, eps=1e-5)
            worst = max(worst, wst)
            checked += n
    if checked < min_coords:
        raise AssertionError(f"pipeline suite too small: {checked} < {min_coords}")
    return SuiteResult("pipeline", worst, tolerance, checked)


def run_all(seed: int = 0) -> list[SuiteResult]:
    return [
        spectral_suite(seed),
        network_suite(seed),
        dcf_suite(seed),
        pipeline_suite(seed),
    ]
