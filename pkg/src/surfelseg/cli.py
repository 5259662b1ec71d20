"""Command-line entry point: ``fsgs {render,bench,eval,gen,serve}``.

Panoptic PNGs store ``class * 1000 + instance`` as 16-bit ids with 65535 for void.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import imageio
from .bench import BenchConfig, check_monotone, run_bench
from .culling import MODES as CULLING_MODES
from .evaluation import evaluate_panoptic
from .raster import CHANNELS, DEFAULT_TOP_K, FrameBundle, RenderConfig, render
from .scene import Camera, FormatError, ValidationError, load_scene, save_scene, save_trajectory
from .segmentation import ALPHA_VOID, VOID
from .synthgen import PRESETS, generate_scene

FRAME_FILES = {
    "rgb": "rgb.png",
    "depth": "depth.pfm",
    "semantic": "semantic.png",
    "instance": "instance.png",
    "panoptic": "panoptic.png",
}


class CLIError(Exception):
    pass


def frame_dir(out: Path, index: int) -> Path:
    return out / f"frame_{index:04d}"


def load_cameras(path) -> list[Camera]:
    """A trajectory (JSON list) or a single camera object."""
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise CLIError(f"camera file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise CLIError(f"camera file is not JSON: {exc}") from exc
    records = data if isinstance(data, list) else [data]
    cams = [Camera.from_dict(r) for r in records]
    for c in cams:
        c.check()
    if not cams:
        raise CLIError("camera file holds no cameras")
    return cams


def parse_channels(text: str) -> tuple[str, ...]:
    chans = tuple(c.strip() for c in text.split(",") if c.strip())
    bad = [c for c in chans if c not in CHANNELS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown channels {bad}; choose from {','.join(CHANNELS)}")
    if not chans:
        raise argparse.ArgumentTypeError("no channels")
    return chans


def positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def semantic_map(bundle: FrameBundle) -> np.ndarray:
    if bundle.panoptic_class is not None:
        return bundle.panoptic_class
    cls = np.argmax(bundle.semantic_logits, axis=-1).astype(np.int32)
    return np.where(bundle.alpha > ALPHA_VOID, cls, VOID)


def instance_map(bundle: FrameBundle) -> np.ndarray:
    if bundle.instance_dist.shape[-1] == 0:
        return np.zeros(bundle.alpha.shape, dtype=np.int32)
    ids = np.argmax(bundle.instance_dist, axis=-1).astype(np.int32) + 1
    return np.where(bundle.alpha > ALPHA_VOID, ids, 0)


def write_frame(directory: Path, bundle: FrameBundle, channels, stats: dict) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    chans = set(channels)

    def target(name):
        p = directory / FRAME_FILES[name]
        written.append(p)
        return p

    if "rgb" in chans:
        imageio.save_rgb(target("rgb"), bundle.rgb)
    if "depth" in chans:
        imageio.write_pfm(target("depth"), bundle.depth)
    if "semantic" in chans:
        imageio.save_label_png(target("semantic"), semantic_map(bundle))
    if "instance" in chans:
        imageio.save_label_png(target("instance"), instance_map(bundle), void_value=-2)
    if "panoptic" in chans:
        imageio.save_panoptic_png(target("panoptic"), bundle.panoptic_class, bundle.panoptic_instance)
    p = directory / "stats.json"
    p.write_text(json.dumps(stats, indent=2) + "\n")
    written.append(p)
    return written


def cmd_render(args) -> int:
    scene = load_scene(args.scene)
    cameras = load_cameras(args.camera)
    config = RenderConfig(mode=args.mode, top_k=args.topk, channels=args.channels, tile_size=args.tile)
    out = Path(args.out)
    for i, cam in enumerate(cameras):
        bundle = render(scene, cam, config, threads=args.threads)
        s = bundle.stats
        stats = {"mode": config.mode, "top_k": config.top_k, "time_ms": s.wall_time_ms, "fps": s.fps,
                 "rn_total": s.rn_total, "rn_per_tile": s.rn_per_tile,
                 "feature_mads": s.feature_mads, "pq": None}
        write_frame(frame_dir(out, i), bundle, config.channels, stats)
    print(f"rendered {len(cameras)} frame(s) to {out}")
    return 0


def _bench_inputs(args):
    if args.preset:
        synth = generate_scene(args.preset, args.surfels, args.instances, args.seed)
        return synth.scene, synth.cameras, [synth.ground_truth(c) for c in synth.cameras]
    if not (args.scene and args.camera):
        raise CLIError("bench needs --scene and --camera, or --preset")
    scene = load_scene(args.scene)
    cameras = load_cameras(args.camera)
    gt = None
    if args.gt:
        gt = []
        for i in range(len(cameras)):
            p = frame_dir(Path(args.gt), i) / FRAME_FILES["panoptic"]
            if not p.exists():
                raise CLIError(f"missing ground truth {p}")
            gt.append(imageio.load_panoptic_png(p))
    return scene, cameras, gt


def cmd_bench(args) -> int:
    scene, cameras, gt = _bench_inputs(args)
    cfg = BenchConfig(warmup=args.warmup, repeats=args.repeats, top_k=args.topk, threads=args.threads)
    rows = run_bench(scene, cameras, cfg, gt)
    report = {"rows": rows, "rn_monotone": check_monotone(rows), "n_surfels": scene.n_surfels,
              "n_cameras": len(cameras), "warmup": cfg.warmup, "repeats": cfg.repeats}
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def _panoptic_files(root: Path) -> dict[str, Path]:
    return {str(p.relative_to(root)): p for p in sorted(root.rglob(FRAME_FILES["panoptic"]))}


def cmd_eval(args) -> int:
    pred_root, gt_root = Path(args.pred), Path(args.gt)
    for root in (pred_root, gt_root):
        if not root.is_dir():
            raise CLIError(f"not a directory: {root}")
    preds = _panoptic_files(pred_root)
    gts = _panoptic_files(gt_root)
    if not preds:
        raise CLIError(f"no {FRAME_FILES['panoptic']} files under {pred_root}")
    missing = sorted(set(preds) - set(gts))
    if missing:
        raise CLIError(f"no ground truth for {missing[0]}")
    keys = ("pq", "sq", "rq", "miou", "macc", "mcov", "mwcov")
    reports = []
    for rel, p in preds.items():
        pc, pi = imageio.load_panoptic_png(p)
        gc, gi = imageio.load_panoptic_png(gts[rel])
        if pc.shape != gc.shape:
            raise CLIError(f"shape mismatch for {rel}: {pc.shape} vs {gc.shape}")
        reports.append(evaluate_panoptic(pc, pi, gc, gi))
    result = {k: float(np.mean([getattr(r, k) for r in reports])) for k in keys}
    result["per_class"] = {}
    classes = sorted({c for r in reports for c in r.per_class})
    for c in classes:
        vals = [r.per_class[c] for r in reports if c in r.per_class]
        result["per_class"][str(c)] = {m: float(np.mean([v[m] for v in vals])) for m in ("pq", "sq", "rq")}
    result["frames"] = len(reports)
    text = json.dumps(result, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_gen(args) -> int:
    synth = generate_scene(args.preset, args.surfels, args.instances, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_scene(synth.scene, out / "scene.fsgs")
    save_trajectory(synth.cameras, out / "cameras.json")
    for i, cam in enumerate(synth.cameras):
        cls, inst = synth.ground_truth(cam)
        d = frame_dir(out / "gt", i)
        d.mkdir(parents=True, exist_ok=True)
        imageio.save_label_png(d / FRAME_FILES["semantic"], cls)
        imageio.save_label_png(d / FRAME_FILES["instance"], inst, void_value=-2)
        imageio.save_panoptic_png(d / FRAME_FILES["panoptic"], cls, inst)
    meta = {"preset": args.preset, "surfels": synth.scene.n_surfels, "instances": synth.scene.n_queries,
            "seed": args.seed, "cameras": len(synth.cameras)}
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(f"wrote {synth.scene.n_surfels} surfels and {len(synth.cameras)} camera(s) to {out}")
    return 0


def cmd_serve(args) -> int:
    from .service import serve_loop

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")
    scene = load_scene(args.scene)
    serve_loop(scene, args.port, host=args.host, mode=args.mode, top_k=args.topk, threads=args.threads)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fsgs", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render a trajectory to image files")
    p.add_argument("--scene", required=True)
    p.add_argument("--camera", required=True, help="camera JSON object or list of them")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=CULLING_MODES, default="accutile")
    p.add_argument("--topk", type=positive_int, default=None,
                   help=f"Top-K feature accumulation (the ablation uses {DEFAULT_TOP_K})")
    p.add_argument("--channels", type=parse_channels, default=CHANNELS)
    p.add_argument("--tile", type=positive_int, default=16)
    p.add_argument("--threads", type=positive_int, default=None)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("bench", help="four-mode culling / Top-K benchmark")
    p.add_argument("--scene")
    p.add_argument("--camera")
    p.add_argument("--gt", help="directory of frame_XXXX/panoptic.png ground truth")
    p.add_argument("--preset", choices=PRESETS, help="benchmark a generated scene instead")
    p.add_argument("--surfels", type=positive_int, default=3000)
    p.add_argument("--instances", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--repeats", type=positive_int, default=20)
    p.add_argument("--topk", type=positive_int, default=DEFAULT_TOP_K)
    p.add_argument("--threads", type=positive_int, default=None)
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("eval", help="panoptic metrics of predicted against GT label maps")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen", help="generate a synthetic scene with GT label maps")
    p.add_argument("--preset", choices=PRESETS, required=True)
    p.add_argument("--surfels", type=positive_int, default=3000)
    p.add_argument("--instances", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("serve", help="pose-in/frames-out NDJSON render service")
    p.add_argument("--scene", required=True)
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--mode", choices=CULLING_MODES, default="accutile")
    p.add_argument("--topk", type=positive_int, default=None)
    p.add_argument("--threads", type=positive_int, default=None)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CLIError, FormatError, ValidationError, FileNotFoundError, ValueError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
