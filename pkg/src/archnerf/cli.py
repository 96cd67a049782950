"""Command-line entry point: generate, priors, train, render, eval, compare.

Machine-readable outputs (``report.json``, ``priors_report.json``) contain
only quantities that are a deterministic function of the inputs and seeds;
wall-clock timings go to ``timing.json`` and the text reports.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import CameraIntrinsics, RigConfig
from .dataset import dataset_hash, read_dataset, write_priors
from .errors import ArchNerfError, ConfigInvalid
from .field import load_checkpoint
from .geometry import Pose
from .losses import BoundLConfig, FilterConfig, LossWeights
from .metrics import EvalReport, evaluate_views
from .priors import CalibrationInput, compute_dataset_priors
from .render import DEFAULT_NEAR, DEFAULT_SAMPLES, render_image
from .scene import ARCHITECTURAL, PRESETS, SceneDescription, build_scene, generate_dataset
from .trainer import CHECKPOINT_NAME, MODES, TrainConfig, train

REPORT_JSON = "report.json"
REPORT_TXT = "report.txt"
TIMING_JSON = "timing.json"


def _dump(obj, path: Path):
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _parse_grid(text: str):
    try:
        nx, ny = (int(x) for x in text.lower().split("x"))
    except ValueError as exc:
        raise ConfigInvalid(f"stations must look like 2x2, got {text!r}") from exc
    return nx, ny


def _parse_resolution(text: str):
    parts = [int(x) for x in str(text).lower().split("x")]
    if len(parts) == 1:
        parts *= 3
    if len(parts) != 3:
        raise ConfigInvalid(f"resolution must be N or NxNxN, got {text!r}")
    return tuple(parts)


def _room_bounds(manifest):
    scene = manifest.extra.get("scene")
    if not scene:
        raise ConfigInvalid("dataset manifest has no scene description; cannot size the field")
    return SceneDescription.from_dict(scene).bounds()


def _far(bounds) -> float:
    return float(np.linalg.norm(np.subtract(bounds[1], bounds[0])))


# ---------------------------------------------------------------- generate

def cmd_generate(args) -> int:
    scene = build_scene(args.preset, args.seed)
    rig = RigConfig(stations=_parse_grid(args.stations), spacing=args.spacing, seed=args.seed,
                    width=args.width, height=args.height)
    views = generate_dataset(scene, rig, args.out, depth_scale=args.depth_scale)
    n_eval = sum(v.split == "eval" for v in views)
    print(f"wrote {len(views)} views ({n_eval} eval) of {scene.name} to {args.out}")
    return 0


# ------------------------------------------------------------------ priors

def _calibration(manifest, views, mode: str) -> CalibrationInput:
    room_height = manifest.room_height
    if mode == "calibrated":
        return CalibrationInput("calibrated", room_height)
    rig = manifest.extra.get("rig", {})
    cam_h = float(rig.get("camera_height", 0.0))
    seen, positions = set(), []
    for v in views:
        key = tuple(np.round(v.pose.translation, 12))
        if key not in seen:
            seen.add(key)
            positions.append(v.pose.translation)
    return CalibrationInput("uncalibrated", room_height, cam_h, tuple(positions))


def cmd_priors(args) -> int:
    manifest, views = read_dataset(args.data)
    calib = _calibration(manifest, views, args.calibration)
    t0 = time.perf_counter()
    priors, info = compute_dataset_priors(views, calib)
    elapsed = time.perf_counter() - t0
    write_priors(args.data, {i: p.depth for i, p in enumerate(priors)})

    rows, sq, n_cov, n_arch = [], 0.0, 0, 0
    for i, (v, p) in enumerate(zip(views, priors)):
        arch = np.isin(v.seg, ARCHITECTURAL)
        m = p.mask
        err = p.depth[m] - v.depth[m]
        rows.append({"view": i, "coverage": float(m.sum() / max(1, arch.sum())),
                     "rmse": float(np.sqrt(np.mean(err ** 2))) if m.any() else None})
        sq += float(np.sum(err ** 2))
        n_cov += int(m.sum())
        n_arch += int(arch.sum())
    report = {
        "dataset": manifest.scene_name,
        "calibration": calib.mode,
        "coverage": n_cov / max(1, n_arch),
        "rmse": float(np.sqrt(sq / n_cov)) if n_cov else None,
        "views": rows,
        "walls": [{"normal": w.plane.normal.tolist(), "offset": w.plane.offset, "accepted": w.accepted,
                   "method": w.method, "residual": w.residual} for w in info["walls"]],
        "note": "rmse is measured against the dataset's 1 mm quantized depth maps",
    }
    _dump(report, Path(args.data) / "priors_report.json")
    _dump({"priors_seconds": elapsed}, Path(args.data) / "priors_timing.json")
    print(f"priors: coverage {report['coverage']:.4f}, rmse vs stored depth "
          f"{report['rmse'] if report['rmse'] is not None else float('nan'):.6f} m, {elapsed:.1f} s")
    return 0


# ------------------------------------------------------------------- train

def _train_config(args) -> TrainConfig:
    base = {}
    if args.config:
        base = json.loads(Path(args.config).read_text(encoding="utf-8"))
    overrides = {
        "mode": args.mode, "iterations": args.iterations, "rays_per_batch": args.rays,
        "seed": args.seed, "samples": args.samples, "lr": args.lr,
        "resolution": _parse_resolution(args.resolution) if args.resolution else None,
        "patches_per_batch": args.patches, "checkpoint_every": args.checkpoint_every,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    if args.boundl_sigma is not None:
        base["boundl"] = {"gaussian_sigma": args.boundl_sigma}
    weights = dict(base.get("weights") or {})
    for name in ("color", "depth", "reg"):
        val = getattr(args, f"lambda_{name}")
        if val is not None:
            weights[name] = val
    if weights:
        mode = base.get("mode", "rgb_only")
        from .trainer import default_weights
        full = default_weights(mode).__dict__ | weights
        base["weights"] = full
    return TrainConfig.from_dict(base)


def _train_run(data_dir, config: TrainConfig, out_dir) -> dict:
    manifest, views = read_dataset(data_dir)
    bounds = _room_bounds(manifest)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _dump(config.to_dict(), out / "config.json")
    t0 = time.perf_counter()
    result = train(views, bounds, config, out_dir=out)
    elapsed = time.perf_counter() - t0
    _dump({"train_seconds": elapsed}, out / TIMING_JSON)
    return {"checkpoint": str(out / CHECKPOINT_NAME), "seconds": elapsed, "log": result.log}


def cmd_train(args) -> int:
    config = _train_config(args)
    info = _train_run(args.data, config, args.out)
    last = info["log"].records[-1]
    print(f"trained {config.mode} for {config.iterations} iterations in {info['seconds']:.1f} s; "
          f"final total loss {last['total']:.6g}; checkpoint {info['checkpoint']}")
    return 0


# ------------------------------------------------------------------ render

def _colormap(depth: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Depth to an 8-bit blue-to-yellow ramp; purely for looking at."""
    x = np.clip((depth - lo) / max(hi - lo, 1e-9), 0.0, 1.0)
    r = np.clip(1.5 * x - 0.25, 0, 1)
    g = np.clip(np.sin(np.pi * x * 0.9), 0, 1)
    b = np.clip(1.0 - 1.6 * x, 0, 1)
    return np.round(np.stack([r, g, b], axis=-1) * 255).astype(np.uint8)


def _pose_list(path):
    entries = json.loads(Path(path).read_text(encoding="utf-8"))
    out = []
    for e in entries:
        out.append((CameraIntrinsics.from_dict(e["intrinsics"]), Pose.from_matrix(e["camera_to_world"])))
    return out


def cmd_render(args) -> int:
    field, _, meta = load_checkpoint(args.checkpoint)
    manifest, views = read_dataset(args.data)
    bounds = _room_bounds(manifest)
    far = _far(bounds)
    samples = meta.get("config", {}).get("samples", DEFAULT_SAMPLES)
    if args.poses:
        cams = _pose_list(args.poses)
    else:
        chosen = [v for v in views if args.split == "all" or v.split == args.split]
        cams = [(v.intrinsics, v.pose) for v in chosen]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, (intr, pose) in enumerate(cams):
        rgb, depth, _ = render_image(field, intr, pose, DEFAULT_NEAR, far, samples)
        Image.fromarray(np.round(np.clip(rgb, 0, 1) * 255).astype(np.uint8)).save(out / f"rgb_{i:05d}.png")
        Image.fromarray(_colormap(depth, 0.0, far / 2)).save(out / f"depth_{i:05d}.png")
    print(f"rendered {len(cams)} views to {out}")
    return 0


# -------------------------------------------------------------------- eval

def _evaluate(checkpoint, data_dir, split: str = "eval") -> EvalReport:
    field, _, meta = load_checkpoint(checkpoint)
    manifest, views = read_dataset(data_dir)
    far = _far(_room_bounds(manifest))
    idx = [i for i, v in enumerate(views) if split == "all" or v.split == split]
    config = meta.get("config", {})
    report = evaluate_views(field, [views[i] for i in idx], far, DEFAULT_NEAR,
                            config.get("samples", DEFAULT_SAMPLES), idx, config)
    return report


def _report_table(rows: list[dict]) -> str:
    head = f"{'mode':<24}{'PSNR':>10}{'SSIM':>10}{'LPIPS':>8}{'depth RMSE (m)':>17}"
    lines = [head, "-" * len(head)]
    for r in rows:
        d = "n/a" if r["depth_rmse"] is None else f"{r['depth_rmse']:.4f}"
        lines.append(f"{r['mode']:<24}{r['psnr']:>10.3f}{r['ssim']:>10.4f}{'n/a':>8}{d:>17}")
    return "\n".join(lines)


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    report = _evaluate(args.checkpoint, args.data, args.split)
    elapsed = time.perf_counter() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict()
    payload["dataset_hash"] = dataset_hash(args.data)
    payload["checkpoint"] = Path(args.checkpoint).name
    _dump(payload, out / REPORT_JSON)
    mode = report.config.get("mode", "?")
    table = _report_table([{"mode": mode, "psnr": report.mean_psnr, "ssim": report.mean_ssim,
                            "depth_rmse": report.mean_depth_rmse}])
    per_view = "\n".join(f"view {v.view:4d}  PSNR {v.psnr:8.3f}  SSIM {v.ssim:.4f}  depth RMSE "
                         + ("n/a" if v.depth_rmse is None else f"{v.depth_rmse:.4f}") for v in report.views)
    (out / REPORT_TXT).write_text(f"{table}\n\n{per_view}\n\nruntime {elapsed:.1f} s\n", encoding="utf-8")
    _dump({"eval_seconds": elapsed}, out / TIMING_JSON)
    print(table)
    return 0


# ----------------------------------------------------------------- compare

def cmd_compare(args) -> int:
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for m in modes:
        if m not in MODES:
            raise ConfigInvalid(f"unknown mode {m!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, timing = [], {}
    for m in modes:
        run = out / m
        ckpt = run / CHECKPOINT_NAME
        if not ckpt.is_file() or args.retrain:
            args.mode = m
            info = _train_run(args.data, _train_config(args), run)
            timing[f"{m}_train_seconds"] = info["seconds"]
        t0 = time.perf_counter()
        rep = _evaluate(ckpt, args.data, "eval")
        timing[f"{m}_eval_seconds"] = time.perf_counter() - t0
        _dump(rep.to_dict(), run / REPORT_JSON)
        rows.append({"mode": m, "psnr": rep.mean_psnr, "ssim": rep.mean_ssim, "lpips": "n/a",
                     "depth_rmse": rep.mean_depth_rmse})
    report = {"dataset_hash": dataset_hash(args.data), "rows": rows,
              "columns": ["psnr", "ssim", "lpips", "depth_rmse"]}
    _dump(report, out / REPORT_JSON)
    table = _report_table(rows)
    (out / REPORT_TXT).write_text(table + "\n", encoding="utf-8")
    _dump(timing, out / TIMING_JSON)
    print(table)
    return 0


# ------------------------------------------------------------------ parser

def _add_train_flags(p):
    p.add_argument("--iterations", type=int)
    p.add_argument("--rays", type=int, help="rays per batch")
    p.add_argument("--patches", type=int, help="patches per batch (patch modes)")
    p.add_argument("--resolution", help="field resolution N or NxNxN")
    p.add_argument("--samples", type=int, help="samples per ray")
    p.add_argument("--lr", type=float)
    p.add_argument("--boundl-sigma", type=float, help="Gaussian width of the boundary loss (m)")
    p.add_argument("--lambda-color", type=float)
    p.add_argument("--lambda-depth", type=float)
    p.add_argument("--lambda-reg", type=float)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--config", help="JSON file with training settings; flags override it")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="archnerf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="render a synthetic room dataset")
    p.add_argument("--preset", choices=PRESETS, default="bedroom_like")
    p.add_argument("--stations", default="2x2")
    p.add_argument("--spacing", type=float, default=1.5)
    p.add_argument("--width", type=int, default=160)
    p.add_argument("--height", type=int, default=288)
    p.add_argument("--depth-scale", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("priors", help="compute architectural depth priors for a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--calibration", choices=("calibrated", "uncalibrated"), default="calibrated")
    p.set_defaults(func=cmd_priors)

    p = sub.add_parser("train", help="optimize a voxel field")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=sorted(MODES))
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render RGB and depth images from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "eval", "all"), default="eval")
    p.add_argument("--poses", help="JSON list of {intrinsics, camera_to_world}; default: dataset views")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="score a checkpoint on held-out views")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "eval", "all"), default="eval")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="train and score several modes on one dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--modes", default="rgb_only,depth_mse,depth_boundl")
    p.add_argument("--out", required=True)
    p.add_argument("--retrain", action="store_true", help="ignore existing checkpoints")
    _add_train_flags(p)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ArchNerfError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
