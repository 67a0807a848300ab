"""Label-free trainer: track a template forward through a short trajectory,
verify each hop by tracking straight back to the template, and train the
feature extractor on the reconstruction error of the backward responses.

Pseudo-labels from the forward pass are constants (no gradient flows through
their construction), and the per-sample weights are detached scalars: the top
10% loss samples per batch are dropped and the rest are reweighted by motion
energy.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import dcf, network
from .imgproc import canonical_label, hann_window, label_sigma
from .network import GradParams, NetParams, OptimState


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    traj_m: int = 3  # search patches per sample; trajectory length is traj_m + 1
    lam: float = 1e-4
    patch_size: int = 125
    context: float = 2.0
    sigma: float | None = None  # None -> label_sigma(patch_size, context)
    lr_start: float = 1e-2
    lr_end: float = 1e-5
    momentum: float = 0.9
    weight_decay: float = 0.005
    drop_frac: float = 0.1
    seed: int = 0
    use_window: bool = True
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.traj_m < 1:
            raise ValueError("epochs, batch_size and traj_m must be >= 1")
        if not 0.0 <= self.drop_frac < 1.0:
            raise ValueError(f"drop_frac must be in [0, 1), got {self.drop_frac}")

    @property
    def label_sigma(self) -> float:
        return self.sigma if self.sigma is not None else label_sigma(
            self.patch_size, self.context
        )


@dataclass
class TrajectorySample:
    """One training trajectory: a template patch and M later search patches."""

    template: np.ndarray
    searches: list[np.ndarray]
    video_id: str = ""
    frame_indices: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.searches) < 1:
            raise ValueError("a trajectory needs at least one search patch")
        for s in self.searches:
            if s.shape != self.template.shape:
                raise ValueError("all patches in a trajectory must share dims")

    @property
    def patches(self) -> list[np.ndarray]:
        return [self.template] + list(self.searches)


SampleLike = TrajectorySample | Callable[[], TrajectorySample]


@dataclass
class BatchWeights:
    drop: np.ndarray  # binary, exactly floor(drop_frac * N) zeros
    motion: np.ndarray  # non-negative motion energies
    norm: np.ndarray  # normalized weights, sums to 1 over survivors


@dataclass
class SampleRun:
    """Everything the trainer derives from one trajectory."""

    labels: list[np.ndarray]  # Y_0 (template label), Y_1..Y_M (pseudo)
    chain_responses: list[np.ndarray]  # forward responses on S_1..S_M
    hop_responses: list[np.ndarray]  # backward responses on the template
    hop_caches: list[dcf.DCFCache]
    feat_caches: list[network.ForwardCache]  # for T, S_1..S_M
    losses: np.ndarray  # per-hop consistency losses, length M
    motion: float


def _window_for(cfg: TrainConfig, size: int):
    return hann_window(size, size) if cfg.use_window else None


def forward_chain(sample: TrajectorySample, params: NetParams, cfg: TrainConfig):
    """Forward tracking along the trajectory.

    Returns (pseudo labels Y_1..Y_M, responses on S_1..S_M).  Labels are
    produced by re-centering a Gaussian on each response argmax; nothing here
    participates in differentiation.
    """
    run = run_sample(sample, params, cfg, with_grads=False)
    return run.labels[1:], run.chain_responses


def run_sample(
    sample: TrajectorySample,
    params: NetParams,
    cfg: TrainConfig,
    with_grads: bool = True,
    frozen_labels: Sequence[np.ndarray] | None = None,
) -> SampleRun:
    """Forward chain plus single-hop backward verification for one sample.

    `frozen_labels` replaces the pseudo-label construction (used by the
    finite-difference harness, which must hold labels fixed); it also skips
    the forward-chain responses, which carry no gradient.
    """
    patches = sample.patches
    size = patches[0].shape[0]
    win = _window_for(cfg, size)
    sigma = cfg.label_sigma
    y0 = canonical_label(size, size, sigma)

    pairs = [network.forward(network.as_net_input(p), params) for p in patches]
    feats = [f for f, _ in pairs]
    caches = [c for _, c in pairs]

    m = len(sample.searches)
    labels: list[np.ndarray] = [y0]
    chain_responses: list[np.ndarray] = []
    hop_responses: list[np.ndarray] = []
    hop_caches: list[dcf.DCFCache] = []
    losses = np.empty(m)
    motion = 0.0

    prev_filter = None
    for k in range(1, m + 1):
        if frozen_labels is None:
            if prev_filter is None:
                prev_filter = dcf.solve_filter(feats[k - 1], labels[k - 1], cfg.lam, win)
            r_k = dcf.respond(prev_filter, feats[k], win)
            chain_responses.append(r_k)
            motion += float(((r_k - labels[k - 1]) ** 2).sum())
            labels.append(dcf.pseudo_label(r_k, sigma))
        else:
            labels.append(np.asarray(frozen_labels[k - 1]))
        # Backward hop: template filter from S_k with its (pseudo) label,
        # evaluated on the original template patch.
        cache = dcf.new_cache() if with_grads else None
        filt = dcf.solve_filter(feats[k], labels[k], cfg.lam, win, cache)
        r_back = dcf.respond(filt, feats[0], win, cache)
        hop_responses.append(r_back)
        if with_grads:
            hop_caches.append(cache)
        losses[k - 1] = float(((r_back - y0) ** 2).sum())
        prev_filter = filt  # S_k's filter drives the next forward step

    return SampleRun(
        labels, chain_responses, hop_responses, hop_caches, caches, losses, motion
    )


def cycle_losses(sample: TrajectorySample, params: NetParams, cfg: TrainConfig):
    """Per-hop consistency losses L_k = ||R_(S_k -> T) - Y_T||^2."""
    return run_sample(sample, params, cfg, with_grads=False).losses


def motion_weight(
    chain_responses: Sequence[np.ndarray], labels: Sequence[np.ndarray]
) -> float:
    """Motion energy: sum over forward steps of ||R_{S_k} - Y_{S_{k-1}}||^2,
    with the template's label as Y_{S_0}."""
    if len(labels) < len(chain_responses):
        raise ValueError("need the preceding label for every response")
    return float(
        sum(((r - y) ** 2).sum() for r, y in zip(chain_responses, labels))
    )


def batch_weights(
    losses: np.ndarray, motions: np.ndarray, cfg: TrainConfig
) -> BatchWeights:
    """Drop the floor(drop_frac * N) highest-loss samples (ties drop the higher
    index) and normalize motion weights over the survivors."""
    losses = np.asarray(losses, dtype=np.float64)
    motions = np.asarray(motions, dtype=np.float64)
    n = losses.shape[0]
    if motions.shape[0] != n:
        raise ValueError("losses and motions must have equal length")
    n_drop = int(np.floor(cfg.drop_frac * n))
    drop = np.ones(n)
    if n_drop > 0:
        order = np.argsort(losses, kind="stable")  # ties keep index order
        drop[order[n - n_drop :]] = 0.0
    kept = drop * motions
    total = kept.sum()
    if total > 0:
        norm = kept / total
    else:
        # Degenerate batch (all motions zero): uniform over survivors.
        survivors = drop.sum()
        norm = drop / survivors if survivors > 0 else drop
    return BatchWeights(drop=drop, motion=motions, norm=norm)


def batch_loss_and_grads(
    batch: Sequence[TrajectorySample], params: NetParams, cfg: TrainConfig
):
    """Weighted batch loss and its exact gradient w.r.t. the network weights.

    Gradients flow through the backward-hop responses only; pseudo-labels and
    the sample weights are constants.  Returns (loss, grads, diagnostics).
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    # Pass 1 (no caches): losses, motion energies and pseudo-labels.
    light = [run_sample(s, params, cfg, with_grads=False) for s in batch]
    totals = np.array([r.losses.sum() for r in light])
    if not np.isfinite(totals).all():
        bad = [batch[i].video_id or str(i) for i in np.flatnonzero(~np.isfinite(totals))]
        raise FloatingPointError(f"non-finite loss for samples {bad}; batch aborted")
    motions = np.array([r.motion for r in light])
    weights = batch_weights(totals, motions, cfg)

    n = len(batch)
    loss = float((weights.norm * totals).sum() / n)
    grads = GradParams.zeros_like(params)
    size = batch[0].template.shape[0]
    y0 = canonical_label(size, size, cfg.label_sigma)
    # Pass 2: recompute surviving samples with caches (labels frozen from pass
    # 1, so the forward chain is skipped) and backpropagate one sample at a
    # time to bound memory.
    for i, sample in enumerate(batch):
        coeff = weights.norm[i] / n
        if coeff == 0.0:
            continue
        run = run_sample(
            sample, params, cfg, with_grads=True, frozen_labels=light[i].labels[1:]
        )
        upstream_t = None
        for k, (r_back, cache) in enumerate(zip(run.hop_responses, run.hop_caches)):
            d_resp = (2.0 * coeff) * (r_back - y0)
            d_tmpl, d_search = dcf.dcf_backward(d_resp, cache)
            # hop k's filter is solved on S_{k+1}; the search patch is T
            _, g = network.backward(d_tmpl, run.feat_caches[k + 1])
            grads.add_scaled(g, 1.0)
            upstream_t = d_search if upstream_t is None else upstream_t + d_search
        _, g = network.backward(upstream_t, run.feat_caches[0])
        grads.add_scaled(g, 1.0)
    diagnostics = {"weights": weights, "per_sample_loss": totals}
    return loss, grads, diagnostics


def batch_loss_given(
    batch: Sequence[TrajectorySample],
    params: NetParams,
    cfg: TrainConfig,
    frozen_labels: Sequence[Sequence[np.ndarray]],
    frozen_norm: np.ndarray,
) -> float:
    """Batch loss with labels and weights held fixed (finite-difference oracle
    support; mirrors the quantities the analytic gradient treats as constant)."""
    n = len(batch)
    loss = 0.0
    for sample, labels, w in zip(batch, frozen_labels, frozen_norm):
        run = run_sample(sample, params, cfg, with_grads=False, frozen_labels=labels)
        loss += w * run.losses.sum()
    return loss / n


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    lr: float


@dataclass
class TrainResult:
    params: NetParams
    history: list[EpochRecord] = field(default_factory=list)


def train(
    dataset: Sequence[SampleLike],
    cfg: TrainConfig,
    log_path: str | Path | None = None,
    checkpoint_prefix: str | Path | None = None,
    progress: Callable[[str], None] | None = None,
) -> TrainResult:
    """Run the full epoch loop: seeded shuffling, per-batch SGD step with the
    decaying learning rate, one log line per epoch."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    params = network.init_params(seeds[0])
    shuffle_rng = np.random.default_rng(seeds[1])
    opt = OptimState.for_params(params)
    result = TrainResult(params)
    log_lines: list[str] = []

    for epoch in range(cfg.epochs):
        lr = network.lr_schedule(epoch, cfg.epochs, cfg.lr_start, cfg.lr_end)
        order = shuffle_rng.permutation(len(dataset))
        batch_losses = []
        t0 = time.perf_counter()
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = [_materialize(dataset[i]) for i in idx]
            loss, grads, _ = batch_loss_and_grads(batch, params, cfg)
            network.sgd_step(params, grads, opt, lr, cfg.momentum, cfg.weight_decay)
            batch_losses.append(loss)
        mean_loss = float(np.mean(batch_losses))
        result.history.append(EpochRecord(epoch, mean_loss, lr))
        log_lines.append(f"{epoch},{mean_loss:.8e},{lr:.8e}")
        if progress is not None:
            dt = time.perf_counter() - t0
            progress(f"epoch {epoch}: loss {mean_loss:.4e} lr {lr:.2e} ({dt:.1f}s)")
        if (
            checkpoint_prefix is not None
            and cfg.checkpoint_every > 0
            and (epoch + 1) % cfg.checkpoint_every == 0
        ):
            network.save_model(f"{checkpoint_prefix}.ep{epoch + 1:03d}", params)
        if log_path is not None:
            Path(log_path).write_text("\n".join(log_lines) + "\n")
    return result


def _materialize(item: SampleLike) -> TrajectorySample:
    return item() if callable(item) else item
