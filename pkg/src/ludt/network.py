"""Shallow two-conv feature extractor with hand-derived reverse-mode gradients,
an SGD-with-momentum optimizer, and the binary model-file format.

Layout is channels-last: patches (H, W, Cin), feature maps (H, W, Cout).
Kernels are stored (kh, kw, Cin, Cout).  Convolutions are stride 1 with
zero-padding 1, so spatial dims are preserved.  The pipeline is
conv1 -> ReLU -> conv2 -> cross-channel response normalization.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

# Cross-channel normalization constants (window, offset, scale, exponent).
LRN_N = 5
LRN_K = 2.0
LRN_ALPHA = 1e-4
LRN_BETA = 0.75

MODEL_MAGIC = b"LUDT1\n"

PARAM_ORDER = ("conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias")


@dataclass
class NetParams:
    """Feature-extractor weights; float64 in memory, float32 on disk."""

    conv1_w: np.ndarray  # (3, 3, cin, c1)
    conv1_b: np.ndarray  # (c1,)
    conv2_w: np.ndarray  # (3, 3, c1, c2)
    conv2_b: np.ndarray  # (c2,)

    def items(self):
        return (
            ("conv1.weight", self.conv1_w),
            ("conv1.bias", self.conv1_b),
            ("conv2.weight", self.conv2_w),
            ("conv2.bias", self.conv2_b),
        )

    def copy(self) -> "NetParams":
        return NetParams(*(a.copy() for _, a in self.items()))

    def astype(self, dtype) -> "NetParams":
        return NetParams(*(a.astype(dtype) for _, a in self.items()))

    @property
    def in_channels(self) -> int:
        return self.conv1_w.shape[2]

    @property
    def out_channels(self) -> int:
        return self.conv2_w.shape[3]


def init_params(seed, cin: int = 3, c1: int = 32, c2: int = 32) -> NetParams:
    """Seeded random weights: zero-mean Gaussians with std sqrt(2 / fan_in),
    zero biases.  `seed` may be an int or a numpy SeedSequence."""
    rng = np.random.default_rng(seed)

    def kernel(ci, co):
        fan_in = 3 * 3 * ci
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(3, 3, ci, co))

    return NetParams(kernel(cin, c1), np.zeros(c1), kernel(c1, c2), np.zeros(c2))


@dataclass
class GradParams:
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray

    def items(self):
        return (
            ("conv1.weight", self.conv1_w),
            ("conv1.bias", self.conv1_b),
            ("conv2.weight", self.conv2_w),
            ("conv2.bias", self.conv2_b),
        )

    @classmethod
    def zeros_like(cls, params: NetParams) -> "GradParams":
        return cls(*(np.zeros_like(a) for _, a in params.items()))

    def add_scaled(self, other: "GradParams", scale: float) -> None:
        for (_, mine), (_, theirs) in zip(self.items(), other.items()):
            mine += scale * theirs

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for _, a in self.items())


def _im2col(xp: np.ndarray, h: int, w: int) -> np.ndarray:
    """(H+2, W+2, Ci) padded input -> (H*W, 9*Ci) patch matrix."""
    ci = xp.shape[2]
    cols = np.empty((h, w, 9, ci), dtype=xp.dtype)
    t = 0
    for u in range(3):
        for v in range(3):
            cols[:, :, t, :] = xp[u : u + h, v : v + w, :]
            t += 1
    return cols.reshape(h * w, 9 * ci)


def _conv3x3(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray):
    h, w, ci = x.shape
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    cols = _im2col(xp, h, w)
    km = kernel.reshape(9 * ci, -1)
    y = cols @ km + bias
    return y.reshape(h, w, -1), cols


def _conv3x3_backward(dy: np.ndarray, cols: np.ndarray, kernel: np.ndarray):
    h, w, co = dy.shape
    ci = kernel.shape[2]
    dym = dy.reshape(h * w, co)
    dk = (cols.T @ dym).reshape(kernel.shape)
    db = dym.sum(axis=0)
    dcols = (dym @ kernel.reshape(9 * ci, co).T).reshape(h, w, 9, ci)
    dxp = np.zeros((h + 2, w + 2, ci), dtype=dy.dtype)
    t = 0
    for u in range(3):
        for v in range(3):
            dxp[u : u + h, v : v + w, :] += dcols[:, :, t, :]
            t += 1
    return dxp[1 : 1 + h, 1 : 1 + w, :], dk, db


def _lrn_denominator(x: np.ndarray) -> np.ndarray:
    """k + alpha * sum of squares over a sliding window of LRN_N channels."""
    sq = x * x
    s = sq.copy()
    half = LRN_N // 2
    for off in range(1, half + 1):
        s[:, :, off:] += sq[:, :, :-off]
        s[:, :, :-off] += sq[:, :, off:]
    return LRN_K + LRN_ALPHA * s


def lrn(x: np.ndarray) -> np.ndarray:
    """Cross-channel response normalization y_c = x_c / denom_c^beta."""
    d = _lrn_denominator(x)
    return x * d ** (-LRN_BETA)


def _lrn_backward(dy: np.ndarray, x: np.ndarray, d: np.ndarray) -> np.ndarray:
    # y_c = x_c * d_c^-b  with  d_c = k + a * sum_{|j-c|<=2} x_j^2
    # dx_i = dy_i d_i^-b - 2ab x_i * sum_{c: |c-i|<=2} dy_c x_c d_c^-(b+1)
    dpow = d ** (-LRN_BETA)
    g = dy * x * dpow / d
    s = g.copy()
    half = LRN_N // 2
    for off in range(1, half + 1):
        s[:, :, off:] += g[:, :, :-off]
        s[:, :, :-off] += g[:, :, off:]
    return dy * dpow - 2.0 * LRN_ALPHA * LRN_BETA * x * s


@dataclass
class ForwardCache:
    cols1: np.ndarray
    pre1: np.ndarray
    a1: np.ndarray
    cols2: np.ndarray
    pre2: np.ndarray
    denom: np.ndarray
    params: NetParams = field(repr=False)


def forward(patch: np.ndarray, params: NetParams):
    """Feature extraction: conv1 -> ReLU -> conv2 -> LRN.

    Returns (features (H, W, Cout), cache for backward()).
    """
    x = np.asarray(patch, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != params.in_channels:
        raise ValueError(
            f"expected (H, W, {params.in_channels}) patch, got {x.shape}"
        )
    pre1, cols1 = _conv3x3(x, params.conv1_w, params.conv1_b)
    a1 = np.maximum(pre1, 0.0)
    pre2, cols2 = _conv3x3(a1, params.conv2_w, params.conv2_b)
    d = _lrn_denominator(pre2)
    out = pre2 * d ** (-LRN_BETA)
    return out, ForwardCache(cols1, pre1, a1, cols2, pre2, d, params)


def backward(dout: np.ndarray, cache: ForwardCache):
    """Exact gradients of forward(); returns (dpatch, GradParams)."""
    if dout.shape != cache.pre2.shape:
        raise ValueError(
            f"upstream shape {dout.shape} does not match cache {cache.pre2.shape}"
        )
    dpre2 = _lrn_backward(dout, cache.pre2, cache.denom)
    da1, dk2, db2 = _conv3x3_backward(dpre2, cache.cols2, cache.params.conv2_w)
    dpre1 = da1 * (cache.pre1 > 0)
    dx, dk1, db1 = _conv3x3_backward(dpre1, cache.cols1, cache.params.conv1_w)
    return dx, GradParams(dk1, db1, dk2, db2)


def as_net_input(patch: np.ndarray) -> np.ndarray:
    """Replicate grayscale patches to three channels."""
    if patch.ndim == 2:
        return np.repeat(patch[:, :, None], 3, axis=2)
    if patch.shape[2] == 1:
        return np.repeat(patch, 3, axis=2)
    return patch


@dataclass
class OptimState:
    """Per-tensor momentum buffers and step count."""

    velocity: GradParams
    steps: int = 0

    @classmethod
    def for_params(cls, params: NetParams) -> "OptimState":
        return cls(GradParams.zeros_like(params))


def sgd_step(
    params: NetParams,
    grads: GradParams,
    state: OptimState,
    lr: float,
    momentum: float = 0.9,
    weight_decay: float = 0.005,
) -> None:
    """In-place update: v <- m*v + g + wd*theta; theta <- theta - lr*v."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if not grads.all_finite():
        bad = [n for n, a in grads.items() if not np.isfinite(a).all()]
        raise FloatingPointError(f"non-finite gradients in {bad}; step aborted")
    for (_, p), (_, g), (_, v) in zip(
        params.items(), grads.items(), state.velocity.items()
    ):
        v *= momentum
        v += g + weight_decay * p
        p -= lr * v
    state.steps += 1


def lr_schedule(epoch: int, total: int, lr_start: float = 1e-2, lr_end: float = 1e-5) -> float:
    """Exponential decay from lr_start at epoch 0 to lr_end at the last epoch."""
    if total <= 1:
        return lr_start
    return lr_start * (lr_end / lr_start) ** (epoch / (total - 1))


def save_model(path, params: NetParams) -> None:
    """Write the binary model file: magic, tensor header, little-endian
    float32 data in header order."""
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    arrays = dict(params.items())
    for name in PARAM_ORDER:
        shape = " ".join(str(s) for s in arrays[name].shape)
        buf.write(f"{name} {shape}\n".encode("ascii"))
    buf.write(b"data\n")
    for name in PARAM_ORDER:
        buf.write(np.ascontiguousarray(arrays[name], dtype="<f4").tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_model(path) -> NetParams:
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(MODEL_MAGIC):
        raise ValueError(f"not a model file (bad magic): {path}")
    header_end = blob.index(b"data\n", len(MODEL_MAGIC))
    lines = blob[len(MODEL_MAGIC) : header_end].decode("ascii").splitlines()
    offset = header_end + len(b"data\n")
    arrays = {}
    for line in lines:
        name, *dims = line.split()
        shape = tuple(int(d) for d in dims)
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        arrays[name] = data.reshape(shape).astype(np.float64)
    missing = [n for n in PARAM_ORDER if n not in arrays]
    if missing:
        raise ValueError(f"model file missing tensors: {missing}")
    return NetParams(
        arrays["conv1.weight"],
        arrays["conv1.bias"],
        arrays["conv2.weight"],
        arrays["conv2.bias"],
    )
