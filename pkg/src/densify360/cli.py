"""Command-line interface: run the pipeline, evaluate outputs, build scenes.

Exit codes: 0 success, 2 configuration error, 3 dataset/I-O error,
1 unexpected internal failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from .config import load_config
from .dataset import load_dataset
from .errors import ConfigError, DatasetError, DensifyError
from .geometry import EquirectCamera, GeometryError
from .metrics import accuracy, completeness
from .outputs import (
    read_depth_png,
    read_ply,
    write_depth_png,
    write_json,
    write_ply,
    write_run_artifacts,
)
from .pipeline import run_offline

log = logging.getLogger("densify360")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_DATA = 3


def _parse_resolution(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"(\d+)x(\d+)", text.strip())
    if not m:
        raise ConfigError(f"--resolution must look like WIDTHxHEIGHT, got {text!r}")
    return int(m.group(1)), int(m.group(2))


def _cmd_run(args: argparse.Namespace) -> int:
    overrides: dict = {}
    if args.seed is not None:
        overrides["patchmatch.seed"] = args.seed
    if args.no_warp:
        overrides["patchmatch.warp"] = False
    if args.save_depth:
        overrides["output.save_depth"] = True
    if args.resolution:
        overrides["processing.resolution"] = _parse_resolution(args.resolution)
    config = load_config(args.config, overrides)

    dataset = load_dataset(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    log.info("processing %d keyframes from %s", len(dataset), args.dataset)
    result = run_offline(dataset, config)
    log.info(
        "accepted %d/%d keyframes, %d depth jobs, %d fused points",
        result.report["keyframes_accepted"],
        result.report["keyframes_total"],
        result.report["depth_jobs"],
        result.report["fused_points"],
    )

    write_ply(out / "cloud.ply", result.cloud)
    write_json(out / "metrics.json", result.report)
    write_run_artifacts(
        out, config.to_dict(), config.patchmatch.seed, dataset.manifest_hash
    )
    if config.output.save_depth:
        depth_dir = out / "depth"
        depth_dir.mkdir(exist_ok=True)
        for kf_id in sorted(result.depths):
            write_depth_png(depth_dir / f"kf{kf_id:04d}.png", result.depths[kf_id].pano)
    log.info(
        "mean completeness %.3f, outputs in %s",
        result.report["completeness"]["mean"],
        out,
    )
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset)
    out = Path(args.out_dir)
    ply_path = out / "cloud.ply"
    if not ply_path.exists():
        raise DatasetError(f"{ply_path} not found; run `densify run` first")
    points, _colors = read_ply(ply_path)

    poses = [dataset.load_keyframe(i).pose for i in range(len(dataset))]
    report: dict = {"completeness": completeness(points, poses)}

    depth_dir = out / "depth"
    if dataset.synthetic and depth_dir.is_dir():
        from .synth import render_scene, scene_from_dict

        scene = scene_from_dict(dataset.synthetic)
        entry_by_id = {int(e["id"]): i for i, e in enumerate(dataset.entries)}
        per_frame = {}
        for png in sorted(depth_dir.glob("kf*.png")):
            kf_id = int(png.stem[2:])
            if kf_id not in entry_by_id:
                continue
            pred = read_depth_png(png)
            pose = poses[entry_by_id[kf_id]]
            _, gt = render_scene(scene, pred.camera, pose)
            per_frame[kf_id] = accuracy(pred, gt)
        defined = [m for m in per_frame.values() if m["defined"]]
        report["accuracy"] = {
            "per_keyframe": {str(k): v for k, v in sorted(per_frame.items())},
            "mean_abs_rel": (
                float(np.mean([m["mean_abs_rel"] for m in defined]))
                if defined
                else None
            ),
            "inlier_2pc": (
                float(np.mean([m["inlier_2pc"] for m in defined])) if defined else None
            ),
        }
    elif dataset.synthetic:
        log.info("no depth/ directory in %s; skipping accuracy", out)
    else:
        log.info("dataset has no synthetic ground truth; skipping accuracy")

    write_json(out / "eval.json", report)
    log.info("mean completeness %.3f", report["completeness"]["mean"])
    if "accuracy" in report and report["accuracy"]["mean_abs_rel"] is not None:
        log.info(
            "mean abs rel depth error %.4f, 2%% inlier fraction %.3f",
            report["accuracy"]["mean_abs_rel"],
            report["accuracy"]["inlier_2pc"],
        )
    print(json.dumps({"completeness": report["completeness"]["mean"]}))
    return EXIT_OK


def _cmd_synth(args: argparse.Namespace) -> int:
    from .synth import default_scene, make_dataset

    scene = default_scene(args.scene, keyframes=args.keyframes, checker=args.checker)
    width, height = (
        _parse_resolution(args.resolution) if args.resolution else (512, 256)
    )
    out = make_dataset(
        scene,
        keyframes=args.keyframes,
        sparse_density=args.sparse,
        out_dir=args.out,
        camera=EquirectCamera(width, height),
        seed=args.seed,
    )
    log.info("wrote %d-keyframe %s dataset to %s", args.keyframes, args.scene, out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="densify",
        description="Dense depth panoramas and fused point clouds from posed "
        "equirectangular keyframes.",
    )
    parser.add_argument("--quiet", action="store_true", help="warnings and errors only")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="densify a dataset into depth maps and a cloud")
    run.add_argument("dataset", help="dataset directory containing dataset.json")
    run.add_argument("--config", help="TOML or JSON config file")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int, help="override patchmatch.seed")
    run.add_argument("--no-warp", action="store_true", help="disable plane-map warping")
    run.add_argument("--save-depth", action="store_true", help="write 16-bit depth PNGs")
    run.add_argument("--resolution", help="processing resolution, e.g. 512x256")
    run.set_defaults(func=_cmd_run)

    ev = sub.add_parser("eval", help="evaluate a finished run against its dataset")
    ev.add_argument("dataset", help="dataset directory")
    ev.add_argument("out_dir", help="output directory of a previous run")
    ev.set_defaults(func=_cmd_eval)

    synth = sub.add_parser("synth", help="generate a synthetic dataset")
    synth.add_argument("scene", choices=("box", "corridor", "sphere"))
    synth.add_argument("--keyframes", type=int, default=12)
    synth.add_argument("--out", required=True)
    synth.add_argument("--sparse", type=int, default=200, help="sparse points per keyframe")
    synth.add_argument("--seed", type=int, default=11)
    synth.add_argument("--resolution", help="render resolution, default 512x256")
    synth.add_argument("--checker", action="store_true", help="checker texture")
    synth.set_defaults(func=_cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.INFO
    if args.quiet:
        level = logging.WARNING
    if args.verbose:
        level = logging.DEBUG
    logging.basicConfig(
        stream=sys.stderr, level=level, format="%(levelname)s: %(message)s"
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (DatasetError, GeometryError, DensifyError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except Exception:  # pragma: no cover - internal failure path
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
