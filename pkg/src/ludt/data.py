"""Training-data manufacture: frame corpora on disk, entropy-based region
selection, a lightweight single-channel tracker for curation, trajectory
sampling, and a synthetic-video generator with exact ground truth.

Corpus layout: <root>/<video_id>/frame_000000.png ...  Synthetic videos also
carry groundtruth.txt (one `x,y,w,h` line per frame, top-left convention) and
an attributes.txt tag line.  Curated output: <out>/<video_id>/track.txt whose
first line is `meta,<entropy>` followed by `frame,cx,cy,w,h` rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import dcf
from .imgproc import (
    BBox,
    crop_patch,
    crop_square,
    entropy,
    hann_window,
    label_sigma,
    canonical_label,
    list_frames,
    load_frame,
    save_frame,
    to_gray,
)
from .training import TrajectorySample

MIN_SAMPLING_FRAMES = 10  # trajectory windows span this many consecutive frames


@dataclass
class VideoSource:
    video_id: str
    frame_paths: list[Path]
    height: int
    width: int

    def __len__(self) -> int:
        return len(self.frame_paths)

    def frame(self, index: int) -> np.ndarray:
        return _cached_frame(str(self.frame_paths[index]))


@lru_cache(maxsize=1024)
def _cached_frame(path: str) -> np.ndarray:
    return load_frame(path)


def scan_corpus(root: str | Path, min_frames: int = MIN_SAMPLING_FRAMES) -> list[VideoSource]:
    """Discover videos under <root>/<video_id>/; videos shorter than
    min_frames are skipped."""
    root = Path(root)
    if not root.is_dir():
        raise ValueError(f"corpus root is not a directory: {root}")
    videos = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        try:
            paths = list_frames(sub)
        except ValueError:
            continue
        if len(paths) < min_frames:
            continue
        first = load_frame(paths[0])
        videos.append(VideoSource(sub.name, paths, first.shape[0], first.shape[1]))
    if not videos:
        raise ValueError(f"no usable videos (>= {min_frames} frames) under {root}")
    return videos


# ---------------------------------------------------------------------------
# Region-of-interest selection
# ---------------------------------------------------------------------------


def roi_grid(height: int, width: int, grid: int = 5) -> list[BBox]:
    """Overlapping candidate boxes tiling the central region: square side is a
    third of the short frame side, and the grid's union spans the central 60%
    of each axis."""
    side = int(min(height, width) // 3)
    if side < 1:
        raise ValueError(f"frame {height}x{width} too small for a candidate grid")
    boxes = []
    cys = _grid_centers(height, side, grid)
    cxs = _grid_centers(width, side, grid)
    for cy in cys:
        for cx in cxs:
            boxes.append(BBox(cx, cy, side, side))
    return boxes


def _grid_centers(dim: int, side: float, grid: int) -> np.ndarray:
    lo = 0.2 * dim + side / 2.0
    hi = 0.8 * dim - side / 2.0
    if hi < lo:
        lo = hi = dim / 2.0
    return np.linspace(lo, hi, grid)


def select_roi(first_frame: np.ndarray, grid: int = 5) -> tuple[BBox, float]:
    """Pick the candidate box with the highest intensity-histogram entropy;
    ties go to the first box in row-major grid order."""
    h, w = first_frame.shape[:2]
    best_box, best_h = None, -1.0
    for box in roi_grid(h, w, grid):
        x0, y0, bw, bh = box.to_tlwh()
        r0, c0 = int(round(y0)), int(round(x0))
        patch = first_frame[r0 : r0 + int(bh), c0 : c0 + int(bw)]
        score = entropy(patch)
        if score > best_h:
            best_box, best_h = box, score
    return best_box, best_h


# ---------------------------------------------------------------------------
# Curation tracking (single-channel correlation filter at fixed scale)
# ---------------------------------------------------------------------------


@dataclass
class CuratedTrack:
    video_id: str
    boxes: list[BBox]  # one per frame
    seed_entropy: float
    clamped: bool = False  # any frame needed clamping back into the frame


CURATION_ALPHA = 0.075
CURATION_CONTEXT = 1.0
CURATION_OUT = 51


def kcf_lite_track(video: VideoSource, seed: BBox, lam: float = 1e-4) -> CuratedTrack:
    """Follow the seed region frame-to-frame with a grayscale, Hann-windowed
    linear correlation filter at fixed scale, blending filters with a moving
    average.  Boxes are clamped inside the frame."""
    out = CURATION_OUT
    side = max(seed.w, seed.h) * (1.0 + CURATION_CONTEXT)
    sigma = label_sigma(out, CURATION_CONTEXT)
    win = hann_window(out, out)
    label = canonical_label(out, out, sigma)
    yhalf = dcf.label_spectrum_half_conj(label)
    px_per_cell = side / out

    def features(frame: np.ndarray, cx: float, cy: float) -> np.ndarray:
        gray = to_gray(frame)
        patch = crop_square(gray, cx, cy, side, out)
        return (patch * win)[:, :, None]

    cx, cy = seed.cx, seed.cy
    first = video.frame(0)
    filt = dcf.solve_filter_half(features(first, cx, cy), yhalf, lam)
    boxes = [BBox(cx, cy, seed.w, seed.h)]
    clamped = False
    h, w = first.shape[:2]
    for t in range(1, len(video)):
        frame = video.frame(t)
        resp = dcf.respond_half(filt, features(frame, cx, cy))
        pr, pc = dcf.peak_cell(resp)
        dr = pr if pr <= out // 2 else pr - out
        dc = pc if pc <= out // 2 else pc - out
        cx += dc * px_per_cell
        cy += dr * px_per_cell
        ncx = min(max(cx, 0.0), w - 1.0)
        ncy = min(max(cy, 0.0), h - 1.0)
        if ncx != cx or ncy != cy:
            clamped = True
            cx, cy = ncx, ncy
        fresh = dcf.solve_filter_half(features(frame, cx, cy), yhalf, lam)
        filt = dcf.update_filter(filt, fresh, CURATION_ALPHA)
        boxes.append(BBox(cx, cy, seed.w, seed.h))
    return CuratedTrack(video.video_id, boxes, 0.0, clamped)


def curate_video(
    video: VideoSource, grid: int = 5, entropy_floor: float = 1.0
) -> CuratedTrack | None:
    """Select the highest-entropy region of the first frame and track it; None
    when the region is too textureless to be useful."""
    seed, score = select_roi(video.frame(0), grid)
    if score < entropy_floor:
        return None
    track = kcf_lite_track(video, seed)
    track.seed_entropy = score
    return track


def save_track(path: str | Path, track: CuratedTrack) -> None:
    lines = [f"meta,{track.seed_entropy:.6f}"]
    for i, b in enumerate(track.boxes):
        lines.append(f"{i},{b.cx:.3f},{b.cy:.3f},{b.w:.3f},{b.h:.3f}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_track(path: str | Path) -> CuratedTrack:
    lines = Path(path).read_text().strip().splitlines()
    if not lines or not lines[0].startswith("meta,"):
        raise ValueError(f"malformed track file (missing meta line): {path}")
    seed_entropy = float(lines[0].split(",")[1])
    boxes = []
    for line in lines[1:]:
        _, cx, cy, w, h = line.split(",")
        boxes.append(BBox(float(cx), float(cy), float(w), float(h)))
    return CuratedTrack(Path(path).parent.name, boxes, seed_entropy)


def prepare_corpus(
    videos_root: str | Path,
    out_root: str | Path,
    grid: int = 5,
    entropy_floor: float = 1.0,
    jobs: int = 1,
    progress=None,
) -> list[str]:
    """Curate every usable video under videos_root into out_root; returns the
    curated video ids (deterministic order)."""
    videos = scan_corpus(videos_root)
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "corpus.json").write_text(
        json.dumps({"videos_root": str(Path(videos_root).resolve())}) + "\n"
    )
    if jobs > 1:
        import multiprocessing as mp

        with mp.Pool(jobs) as pool:
            tracks = pool.starmap(
                curate_video, [(v, grid, entropy_floor) for v in videos]
            )
    else:
        tracks = [curate_video(v, grid, entropy_floor) for v in videos]
    kept = []
    for video, track in zip(videos, tracks):
        if track is None:
            if progress:
                progress(f"{video.video_id}: below entropy floor, skipped")
            continue
        vd = out_root / video.video_id
        vd.mkdir(exist_ok=True)
        save_track(vd / "track.txt", track)
        kept.append(video.video_id)
        if progress:
            progress(f"{video.video_id}: entropy {track.seed_entropy:.2f}, "
                     f"{len(track.boxes)} frames")
    if not kept:
        raise ValueError("no videos survived curation")
    return kept


# ---------------------------------------------------------------------------
# Trajectory sampling
# ---------------------------------------------------------------------------


@dataclass
class SamplingConfig:
    traj_m: int = 3  # search patches per sample (trajectory length - 1)
    patch_size: int = 125
    context: float = 2.0
    windows_per_video: int | None = None  # None -> frames // 10
    seed: int = 0


@dataclass
class TrajectoryPlan:
    """Lazy trajectory: frames and boxes are looked up when materialized."""

    video: VideoSource
    frame_indices: tuple[int, ...]
    boxes: list[BBox]
    patch_size: int
    context: float

    def __call__(self) -> TrajectorySample:
        patches = [
            crop_patch(self.video.frame(i), b, self.context, self.patch_size)
            for i, b in zip(self.frame_indices, self.boxes)
        ]
        return TrajectorySample(
            patches[0], patches[1:], self.video.video_id, self.frame_indices
        )


def sample_trajectories(
    video: VideoSource, track: CuratedTrack, cfg: SamplingConfig, rng: np.random.Generator
) -> list[TrajectoryPlan]:
    """Draw trajectories from 10-frame windows: a random window start, then
    traj_m + 1 distinct frames sorted by time; the earliest is the template."""
    n = min(len(video), len(track.boxes))
    if n < MIN_SAMPLING_FRAMES:
        return []
    count = cfg.windows_per_video or max(1, n // MIN_SAMPLING_FRAMES)
    plans = []
    need = cfg.traj_m + 1
    if need > MIN_SAMPLING_FRAMES:
        raise ValueError(f"trajectory of {need} patches exceeds the 10-frame window")
    for _ in range(count):
        start = int(rng.integers(0, n - MIN_SAMPLING_FRAMES + 1))
        offsets = np.sort(rng.choice(MIN_SAMPLING_FRAMES, size=need, replace=False))
        frames = tuple(int(start + o) for o in offsets)
        plans.append(
            TrajectoryPlan(
                video,
                frames,
                [track.boxes[i] for i in frames],
                cfg.patch_size,
                cfg.context,
            )
        )
    return plans


def build_training_set(
    curated_root: str | Path,
    cfg: SamplingConfig,
    videos_root: str | Path | None = None,
) -> list[TrajectoryPlan]:
    """Trajectory plans for every curated video under curated_root."""
    curated_root = Path(curated_root)
    if videos_root is None:
        meta = curated_root / "corpus.json"
        if not meta.is_file():
            raise ValueError(
                f"{curated_root} has no corpus.json; pass the frame root explicitly"
            )
        videos_root = json.loads(meta.read_text())["videos_root"]
    videos = {v.video_id: v for v in scan_corpus(videos_root)}
    rng = np.random.default_rng(cfg.seed)
    plans: list[TrajectoryPlan] = []
    track_files = sorted(curated_root.glob("*/track.txt"))
    if not track_files:
        raise ValueError(f"no curated tracks under {curated_root}")
    for tf in track_files:
        vid = tf.parent.name
        if vid not in videos:
            raise ValueError(f"curated video {vid} missing from {videos_root}")
        plans.extend(sample_trajectories(videos[vid], load_track(tf), cfg, rng))
    if not plans:
        raise ValueError("sampling produced no trajectories")
    return plans


# ---------------------------------------------------------------------------
# Synthetic videos with exact ground truth
# ---------------------------------------------------------------------------


@dataclass
class SceneSpec:
    videos: int = 8
    frames: int = 20
    size: int = 64
    target_size: tuple[int, int] = (18, 24)  # sampled per video, inclusive
    velocity_range: tuple[float, float] = (1.0, 3.0)  # per-axis magnitude
    texture_seed: int | None = None
    occlusion: bool = False
    background: str = "clutter"  # "clutter" | "flat"
    brightness_drift: float = 0.0
    zoom: float = 1.0  # per-frame size growth factor
    velocity_segment: int = 8  # frames between velocity redraws

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        spec = cls()
        for key, value in d.items():
            if not hasattr(spec, key):
                raise ValueError(f"unknown synthetic spec key: {key}")
            if key in ("target_size", "velocity_range"):
                value = tuple(value)
            setattr(spec, key, value)
        return spec


@dataclass
class SyntheticVideo:
    video_id: str
    frames: list[np.ndarray]  # (H, W, 3) floats in [0, 1]
    gt: list[BBox]
    tags: list[str] = field(default_factory=list)


def _texture(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    tex = rng.random((h, w, 3))
    # One box-blur pass keeps local structure while removing salt noise.
    k = np.ones((3, 3)) / 9.0
    for c in range(3):
        padded = np.pad(tex[:, :, c], 1, mode="edge")
        acc = np.zeros((h, w))
        for u in range(3):
            for v in range(3):
                acc += k[u, v] * padded[u : u + h, v : v + w]
        tex[:, :, c] = acc
    lo, hi = tex.min(), tex.max()
    return (tex - lo) / (hi - lo + 1e-12)


def _background(rng: np.random.Generator, size: int, kind: str) -> np.ndarray:
    if kind == "flat":
        return np.full((size, size, 3), rng.uniform(0.35, 0.65))
    coarse = rng.random((8, 8, 3)) * 0.5 + 0.25
    box = BBox((7.0) / 2.0, (7.0) / 2.0, 8.0, 8.0)
    return np.clip(crop_patch(coarse, box, 0.0, size), 0.0, 1.0)


def render_sequence(
    size: int,
    n_frames: int,
    target_hw: tuple[int, int],
    start_center: tuple[float, float],
    velocity: tuple[float, float],
    rng: np.random.Generator,
    background: str = "flat",
    occluded_frames: range | None = None,
    brightness_drift: float = 0.0,
    zoom: float = 1.0,
    velocity_segment: int = 10**9,
    velocity_range: tuple[float, float] | None = None,
) -> SyntheticVideo:
    """Deterministic renderer: a textured rectangle translating with
    piecewise-constant velocity (reflecting at the borders), optional occluder
    bar, brightness drift and zoom.  Ground-truth centers advance by exactly
    the active velocity each frame."""
    th, tw = target_hw
    bg = _background(rng, size, background)
    tex = _texture(rng, 48, 48)
    occ_shade = rng.uniform(0.2, 0.8)
    cy, cx = float(start_center[1]), float(start_center[0])
    vy, vx = float(velocity[1]), float(velocity[0])
    h, w = float(th), float(tw)
    frames, gt = [], []
    for t in range(n_frames):
        frame = bg.copy()
        ih, iw = max(1, int(round(h))), max(1, int(round(w)))
        sprite = crop_patch(tex, BBox(23.5, 23.5, 48.0, 48.0), 0.0, max(ih, iw))
        sprite = sprite[:ih, :iw]
        r0 = int(round(cy - h / 2.0))
        c0 = int(round(cx - w / 2.0))
        rr0, cc0 = max(r0, 0), max(c0, 0)
        rr1, cc1 = min(r0 + ih, size), min(c0 + iw, size)
        if rr1 > rr0 and cc1 > cc0:
            frame[rr0:rr1, cc0:cc1] = sprite[rr0 - r0 : rr1 - r0, cc0 - c0 : cc1 - c0]
        if occluded_frames is not None and t in occluded_frames:
            frame[:, max(c0, 0) : min(c0 + iw, size)] = occ_shade
        if brightness_drift:
            gain = 1.0 + brightness_drift * (2.0 * t / max(n_frames - 1, 1) - 1.0)
            frame = np.clip(frame * gain, 0.0, 1.0)
        frames.append(frame)
        gt.append(BBox(cx, cy, w, h))
        # Advance; reflect at borders so the target stays inside.
        if velocity_segment and t > 0 and t % velocity_segment == 0 and velocity_range:
            vmin, vmax = velocity_range
            vx = rng.uniform(vmin, vmax) * rng.choice((-1.0, 1.0))
            vy = rng.uniform(vmin, vmax) * rng.choice((-1.0, 1.0))
        cx, cy = cx + vx, cy + vy
        h, w = h * zoom, w * zoom
        margin_y, margin_x = h / 2.0 + 1.0, w / 2.0 + 1.0
        if cx < margin_x or cx > size - margin_x:
            vx = -vx
            cx = min(max(cx, margin_x), size - margin_x)
        if cy < margin_y or cy > size - margin_y:
            vy = -vy
            cy = min(max(cy, margin_y), size - margin_y)
    tags = [background]
    if occluded_frames is not None:
        tags.append("occlusion")
    if brightness_drift:
        tags.append("brightness")
    if zoom != 1.0:
        tags.append("zoom")
    return SyntheticVideo("", frames, gt, tags)


def gen_synthetic(spec: SceneSpec, seed: int) -> list[SyntheticVideo]:
    """Render `spec.videos` sequences; fully determined by (spec, seed)."""
    root_seq = np.random.SeedSequence(
        seed if spec.texture_seed is None else (seed, spec.texture_seed)
    )
    videos = []
    for i, child in enumerate(root_seq.spawn(spec.videos)):
        rng = np.random.default_rng(child)
        th = int(rng.integers(spec.target_size[0], spec.target_size[1] + 1))
        tw = int(rng.integers(spec.target_size[0], spec.target_size[1] + 1))
        vmin, vmax = spec.velocity_range
        vx = rng.uniform(vmin, vmax) * rng.choice((-1.0, 1.0))
        vy = rng.uniform(vmin, vmax) * rng.choice((-1.0, 1.0))
        margin = max(th, tw) / 2.0 + 2.0
        cx = rng.uniform(margin, spec.size - margin)
        cy = rng.uniform(margin, spec.size - margin)
        occ = None
        if spec.occlusion and i % 2 == 1:
            mid = spec.frames // 2
            occ = range(mid, min(mid + max(2, spec.frames // 6), spec.frames))
        video = render_sequence(
            spec.size,
            spec.frames,
            (th, tw),
            (cx, cy),
            (vx, vy),
            rng,
            background=spec.background,
            occluded_frames=occ,
            brightness_drift=spec.brightness_drift,
            zoom=spec.zoom,
            velocity_segment=spec.velocity_segment,
            velocity_range=spec.velocity_range,
        )
        video.video_id = f"video_{i:03d}"
        videos.append(video)
    return videos


def write_synthetic(videos: list[SyntheticVideo], out_root: str | Path) -> None:
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    for video in videos:
        vd = out_root / video.video_id
        vd.mkdir(exist_ok=True)
        for t, frame in enumerate(video.frames):
            save_frame(vd / f"frame_{t:06d}.png", frame)
        lines = []
        for b in video.gt:
            x, y, w, h = b.to_tlwh()
            lines.append(f"{x:.3f},{y:.3f},{w:.3f},{h:.3f}")
        (vd / "groundtruth.txt").write_text("\n".join(lines) + "\n")
        (vd / "attributes.txt").write_text(",".join(video.tags) + "\n")
