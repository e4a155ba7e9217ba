"""Command-line entry point.

Subcommands: gen-toy, synth, train, detect, eval, gradcheck. Every
command is deterministic given (config, seed) and validates its inputs
before writing anything. Exit codes: 0 success, 2 input error,
3 training divergence, 4 gradient-check failure.

``TDET_THREADS`` caps the worker count for per-image parallel stages
(currently synthesis); results are merged in submission order so the
degree of parallelism never changes the output bytes.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path


from . import gradcheck
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, load_config
from .data import DataError, load_manifest, read_detections_csv, write_manifest, write_provenance
from .detect import run_detection
from .metrics import evaluate, report_csv_lines, report_table
from .pnm import PnmError, read_pnm
from .toydata import generate_toy_dataset
from .train import TrainingDivergence, run_training
from .turbulence import degrade

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DIVERGED = 3
EXIT_GRADCHECK = 4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _worker_count() -> int:
    raw = os.environ.get("TDET_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise CliError(f"TDET_THREADS must be an integer, got {raw!r}")


def _load_run_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = load_config(args.config, cfg)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _require_out(args) -> Path:
    if not args.out:
        raise CliError("--out is required for this command")
    return Path(args.out)


def cmd_gen_toy(args) -> int:
    cfg = _load_run_config(args)
    out = _require_out(args)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory: {exc}")
    prov = {"command": "gen-toy", "seed": cfg.seed, "config_sha256": cfg.config_hash()}
    for split, count in (("train", cfg.gen_train_images), ("test", cfg.gen_test_images)):
        generate_toy_dataset(
            out / split, count, seed=cfg.seed, split=split,
            image_size=cfg.gen_image_size, min_size=cfg.gen_min_size,
            max_size=cfg.gen_max_size, max_objects=cfg.gen_max_objects,
            provenance={**prov, "split": split, "images": count},
        )
        print(f"gen-toy: wrote {count} images to {out / split}")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _load_run_config(args)
    out = _require_out(args)
    manifest = load_manifest(Path(args.data))
    missing = [n for n in manifest.image_names if not manifest.image_path(n).is_file()]
    if missing:
        raise CliError("missing image files: " + ", ".join(missing))
    degrade_cfg = cfg.degrade_config()

    def one(index_name):
        index, name = index_name
        img = manifest.load_image(name)
        return name, *degrade(img, manifest.boxes_for(name), degrade_cfg, image_index=index)

    jobs = list(enumerate(manifest.image_names))
    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(j) for j in jobs]

    images = {name: img for name, img, _ in results}
    rows = [(name, ann) for name, _, anns in results for ann in anns]
    write_manifest(
        out, images, rows, manifest.class_names,
        provenance={
            "command": "synth", "seed": cfg.seed, "config_sha256": cfg.config_hash(),
            "source": str(manifest.root),
        },
    )
    print(f"synth: degraded {len(images)} images into {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    if args.steps is not None:
        cfg.train_steps = args.steps
    if args.deformable is not None:
        cfg.model_deformable = args.deformable == "on"
    if args.fpn is not None:
        cfg.model_fpn = args.fpn == "on"
    out = _require_out(args)
    manifest = load_manifest(Path(args.data))
    rows = run_training(cfg, manifest, out)
    last = rows[-1]
    print(f"train: {len(rows)} steps, final total loss {last[1]:.4f}; checkpoint in {out}")
    return EXIT_OK


def _collect_images(data_dir: Path):
    """Accept either a manifest directory or a bare directory of pixmaps."""
    images_dir = data_dir / "images" if (data_dir / "images").is_dir() else data_dir
    names = sorted(p.name for p in images_dir.iterdir() if p.suffix in (".ppm", ".pgm"))
    return [(name, read_pnm(images_dir / name)) for name in names]


def cmd_detect(args) -> int:
    cfg = _load_run_config(args)
    out = _require_out(args)
    checkpoint = Path(args.checkpoint)
    if not checkpoint.is_file():
        raise CliError(f"checkpoint not found: {checkpoint}")
    data_dir = Path(args.data)
    if not data_dir.is_dir():
        raise CliError(f"image directory not found: {data_dir}")
    images = _collect_images(data_dir)
    rows = run_detection(checkpoint, images, cfg, out, overlay=args.overlay)
    print(f"detect: {len(rows)} detections over {len(images)} images -> {out / 'detections.csv'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    out = _require_out(args)
    manifest = load_manifest(Path(args.data))
    detections = read_detections_csv(Path(args.dets))
    try:
        report = evaluate(
            detections, manifest.annotations,
            iou_thresh=cfg.eval_iou_thresh, score_thresh=cfg.eval_score_thresh,
        )
    except ValueError as exc:
        raise CliError(str(exc))
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval_report.csv").write_text(
        "\n".join(report_csv_lines(report, manifest.class_names)) + "\n", encoding="ascii"
    )
    table = report_table(report, manifest.class_names)
    (out / "eval_report.txt").write_text(table + "\n", encoding="ascii")
    write_provenance(
        out, {"command": "eval", "seed": cfg.seed, "config_sha256": cfg.config_hash(),
              "detections": str(args.dets)},
    )
    print(table)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _load_run_config(args)
    eps = args.eps
    worst = 0.0
    print(f"gradcheck: eps={eps:g}, tolerance={gradcheck.TOLERANCE:g}")
    for op in gradcheck.CHECKED_OPS:
        err = gradcheck.finite_diff_check(op, seed=cfg.seed, eps=eps)
        worst = max(worst, err)
        status = "ok" if err < gradcheck.TOLERANCE else "FAIL"
        print(f"  {op:20s} max relative error {err:.3e}  {status}")
    if worst >= gradcheck.TOLERANCE:
        print("gradcheck: FAILED")
        return EXIT_GRADCHECK
    print("gradcheck: all operators within tolerance")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tdet",
        description="Toy object detection under simulated atmospheric turbulence.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--seed", type=lambda s: int(s, 0), default=None, help="64-bit run seed")
    common.add_argument("--out", help="output directory")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-toy", parents=[common], help="render the procedural toy dataset")
    p.set_defaults(func=cmd_gen_toy)

    p = sub.add_parser("synth", parents=[common], help="apply turbulence degradation to a dataset")
    p.add_argument("--data", required=True, help="input manifest directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train the toy detector")
    p.add_argument("--data", required=True, help="training manifest directory")
    p.add_argument("--steps", type=int, default=None, help="override train.steps")
    p.add_argument("--deformable", choices=("on", "off"), default=None)
    p.add_argument("--fpn", choices=("on", "off"), default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", parents=[common], help="run inference and write detections CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="manifest directory or directory of pixmaps")
    p.add_argument("--overlay", action="store_true", help="write overlay images")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", parents=[common], help="score detections against a manifest")
    p.add_argument("--dets", required=True, help="detections CSV")
    p.add_argument("--data", required=True, help="ground-truth manifest directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--eps", type=float, default=gradcheck.DEFAULT_EPS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, DataError, PnmError, CheckpointError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except TrainingDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
