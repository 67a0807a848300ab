"""Command-line pipeline: synthesize data, curate regions, train without
labels, track, evaluate, and verify gradients.

Every subcommand exits nonzero with a one-line diagnostic on malformed input;
`--seed` fully determines stochastic behavior.  Flags override values from an
optional JSON config file, which overrides built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # single-line diagnostic, exit 2
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(2)


def _build_parser() -> _Parser:
    p = _Parser(
        prog="ludt",
        description="Unsupervised correlation-filter tracking toolkit",
        epilog="Formats: results/ground-truth files hold one 'x,y,w,h' line "
        "per frame (top-left corner, pixels); sequences are directories of "
        "numerically sorted image frames; model files are binary with magic "
        "LUDT1.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", parents=[], help="render a synthetic corpus with ground truth")
    g.add_argument("--out", required=True, help="output corpus directory")
    g.add_argument("--videos", type=int, default=None, help="number of sequences")
    g.add_argument("--frames", type=int, default=None, help="frames per sequence")
    g.add_argument("--size", type=int, default=None, help="square frame side in pixels")
    g.add_argument("--target-size", type=int, nargs=2, default=None, metavar=("MIN", "MAX"))
    g.add_argument("--velocity", type=float, nargs=2, default=None, metavar=("MIN", "MAX"))
    g.add_argument("--occlusion", action="store_true", default=None,
                   help="hide the target behind a bar in half the sequences")
    g.add_argument("--background", choices=("clutter", "flat"), default=None)
    g.add_argument("--brightness-drift", type=float, default=None)
    g.add_argument("--config", default=None, help="JSON scene spec (flags win)")
    g.add_argument("--seed", type=int, default=0)

    c = sub.add_parser("prepare", help="entropy-based region selection + curation tracking")
    c.add_argument("--videos", required=True, help="corpus root: <root>/<video>/<frames>")
    c.add_argument("--out", required=True, help="curated-track output directory")
    c.add_argument("--grid", type=int, default=5, help="candidate grid side (grid x grid)")
    c.add_argument("--entropy-floor", type=float, default=1.0,
                   help="discard videos whose best region scores below this many bits")
    c.add_argument("--jobs", type=int, default=1, help="parallel curation workers")
    c.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="unsupervised training on curated tracks")
    t.add_argument("--data", required=True, help="curated directory from `prepare`")
    t.add_argument("--out", required=True, help="model file to write")
    t.add_argument("--frames-root", default=None,
                   help="corpus root override (default: recorded in corpus.json)")
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--batch", type=int, default=None)
    t.add_argument("--traj", type=int, default=None,
                   help="trajectory length in patches, template included (default 4)")
    t.add_argument("--patch-size", type=int, default=None)
    t.add_argument("--windows-per-video", type=int, default=None)
    t.add_argument("--checkpoint-every", type=int, default=None)
    t.add_argument("--log", default=None, help="loss log path (default: <out>.log)")
    t.add_argument("--config", default=None, help="JSON training config (flags win)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--quiet", action="store_true")

    k = sub.add_parser("track", help="run the tracker over a sequence directory")
    k.add_argument("--model", required=True)
    k.add_argument("--sequence", required=True, help="directory of frames")
    k.add_argument("--init", required=True, metavar="x,y,w,h",
                   help="first-frame box, top-left convention")
    k.add_argument("--out", required=True, help="results file to write")
    k.add_argument("--patch-size", type=int, default=125)
    k.add_argument("--dump-frames", default=None, help="directory for annotated frames")

    e = sub.add_parser("eval", help="one-pass evaluation of a results file")
    e.add_argument("--results", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--curve-csv", default=None, help="write the success curve as CSV")

    d = sub.add_parser("gradcheck", help="finite-difference verification of all gradients")
    d.add_argument("--seed", type=int, default=0)
    return p


def _merged(args, config_keys: dict[str, object]) -> dict:
    """defaults <- JSON config file <- explicit flags."""
    merged = dict(config_keys)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise ValueError(f"config file not found: {path}")
        loaded = json.loads(path.read_text())
        unknown = set(loaded) - set(merged)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        merged.update(loaded)
    for key in merged:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    return merged


def _cmd_gen_synth(args) -> int:
    from .data import SceneSpec, gen_synthetic, write_synthetic

    spec_dict = _merged(
        args,
        {
            "videos": 8,
            "frames": 20,
            "size": 64,
            "target_size": (18, 24),
            "velocity_range": (1.0, 3.0),
            "texture_seed": None,
            "occlusion": False,
            "background": "clutter",
            "brightness_drift": 0.0,
        },
    )
    if args.target_size is not None:
        spec_dict["target_size"] = tuple(args.target_size)
    if args.velocity is not None:
        spec_dict["velocity_range"] = tuple(args.velocity)
    spec = SceneSpec.from_dict(spec_dict)
    videos = gen_synthetic(spec, args.seed)
    write_synthetic(videos, args.out)
    print(f"wrote {len(videos)} sequences of {spec.frames} frames to {args.out}")
    return 0


def _cmd_prepare(args) -> int:
    from .data import prepare_corpus

    if args.grid < 1:
        raise ValueError(f"grid must be >= 1, got {args.grid}")
    kept = prepare_corpus(
        args.videos,
        args.out,
        grid=args.grid,
        entropy_floor=args.entropy_floor,
        jobs=args.jobs,
        progress=print,
    )
    print(f"curated {len(kept)} videos into {args.out}")
    return 0


def _cmd_train(args) -> int:
    from .data import SamplingConfig, build_training_set
    from .training import TrainConfig, train

    merged = _merged(
        args,
        {
            "epochs": 50,
            "batch": 32,
            "traj": 4,
            "patch_size": 125,
            "windows_per_video": None,
            "checkpoint_every": 0,
        },
    )
    traj = int(merged["traj"])
    if traj < 2:
        raise ValueError(f"--traj counts the template too; need >= 2, got {traj}")
    sampling = SamplingConfig(
        traj_m=traj - 1,
        patch_size=int(merged["patch_size"]),
        windows_per_video=merged["windows_per_video"],
        seed=args.seed,
    )
    plans = build_training_set(args.data, sampling, args.frames_root)
    cfg = TrainConfig(
        epochs=int(merged["epochs"]),
        batch_size=int(merged["batch"]),
        traj_m=traj - 1,
        patch_size=int(merged["patch_size"]),
        seed=args.seed,
        checkpoint_every=int(merged["checkpoint_every"] or 0),
    )
    log_path = args.log or f"{args.out}.log"
    progress = None if args.quiet else print
    if progress:
        progress(f"training on {len(plans)} trajectories")
    t0 = time.perf_counter()
    result = train(
        plans,
        cfg,
        log_path=log_path,
        checkpoint_prefix=args.out if cfg.checkpoint_every else None,
        progress=progress,
    )
    from .network import save_model

    save_model(args.out, result.params)
    print(
        f"model -> {args.out}  log -> {log_path}  "
        f"({time.perf_counter() - t0:.1f}s, final loss "
        f"{result.history[-1].mean_loss:.4e})"
    )
    return 0


def _parse_init(text: str):
    from .imgproc import BBox

    parts = text.split(",")
    if len(parts) != 4:
        raise ValueError(f"--init expects x,y,w,h, got {text!r}")
    x, y, w, h = (float(v) for v in parts)
    return BBox.from_tlwh(x, y, w, h).validate()


def _cmd_track(args) -> int:
    from .imgproc import list_frames, load_frame, save_frame
    from .metrics import save_boxes
    from .network import load_model
    from .tracker import TrackerConfig, init, step

    params = load_model(args.model)
    frames = list_frames(args.sequence)
    box = _parse_init(args.init)
    cfg = TrackerConfig(out_size=args.patch_size)
    dump_dir = Path(args.dump_frames) if args.dump_frames else None
    if dump_dir:
        dump_dir.mkdir(parents=True, exist_ok=True)

    boxes = []
    state = None
    t0 = time.perf_counter()
    for i, path in enumerate(frames):
        frame = load_frame(path)
        if state is None:
            state = init(frame, box, params, cfg)
            boxes.append(box)
        else:
            boxes.append(step(state, frame))
        if dump_dir:
            save_frame(dump_dir / f"frame_{i:06d}.png", _annotate(frame, boxes[-1]))
    save_boxes(args.out, boxes)
    fps = (len(frames) - 1) / max(time.perf_counter() - t0, 1e-9)
    print(f"tracked {len(frames)} frames -> {args.out} ({fps:.1f} FPS)")
    return 0


def _annotate(frame: np.ndarray, box) -> np.ndarray:
    out = frame.copy() if frame.ndim == 3 else np.repeat(frame[:, :, None], 3, 2)
    h, w = out.shape[:2]
    x0, y0, bw, bh = box.to_tlwh()
    r0, r1 = int(round(y0)), int(round(y0 + bh))
    c0, c1 = int(round(x0)), int(round(x0 + bw))
    r0c, r1c = np.clip([r0, r1], 0, h - 1)
    c0c, c1c = np.clip([c0, c1], 0, w - 1)
    color = np.array([0.1, 1.0, 0.1])
    out[r0c, c0c : c1c + 1] = color
    out[r1c, c0c : c1c + 1] = color
    out[r0c : r1c + 1, c0c] = color
    out[r0c : r1c + 1, c1c] = color
    return out


def _cmd_eval(args) -> int:
    from .metrics import load_boxes, ope_curves, success_curve, summary_line, SUCCESS_THRESHOLDS

    preds = load_boxes(args.results)
    gts = load_boxes(args.gt)
    precision, auc = ope_curves(preds, gts)
    print(summary_line(precision, auc))
    if args.curve_csv:
        curve = success_curve(preds, gts)
        lines = ["threshold,success"] + [
            f"{t:.2f},{s:.6f}" for t, s in zip(SUCCESS_THRESHOLDS, curve)
        ]
        Path(args.curve_csv).write_text("\n".join(lines) + "\n")
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradcheck import run_all

    results = run_all(args.seed)
    ok = True
    for res in results:
        print(res.line())
        ok &= res.passed
    print("all gradient suites passed" if ok else "gradient check FAILED")
    return 0 if ok else 1


_COMMANDS = {
    "gen-synth": _cmd_gen_synth,
    "prepare": _cmd_prepare,
    "train": _cmd_train,
    "track": _cmd_track,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError, FloatingPointError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
