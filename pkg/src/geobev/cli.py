"""``geobev`` command-line entry point.

Exit codes: 0 ok, 1 verification failure, 2 configuration error, 3 I/O error,
4 file-format error (including checkpoint version mismatch).
"""

import argparse
import os
import re
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import ablation, gradcheck, pipeline
from .camera import BevGridSpec, default_rig, read_rig
from .config import load_config
from .exceptions import ConfigError, FormatError, GenerationError, InvalidValueError, ShapeError
from .geo_mask import build_geo_mask, write_pgm
from .model import Geometry
from .synthetic import export_dataset, generate_scene
from .tensor import save_tensor

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_IO, EXIT_FORMAT = 0, 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def parse_grid(text):
    """``"100x100@0.5"`` -> 100 m by 100 m at 0.5 m cells."""
    m = re.fullmatch(r"\s*([0-9.]+)\s*x\s*([0-9.]+)\s*@\s*([0-9.]+)\s*", text)
    if not m:
        raise ConfigError(f"--grid: expected EXTENT_XxEXTENT_Y@RESOLUTION, got {text!r}")
    return BevGridSpec(*(float(v) for v in m.groups()))


def _out_dir(path):
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc.strerror}", EXIT_IO) from None
    if not os.access(out, os.W_OK):
        raise CliError(f"output directory {out} is not writable", EXIT_IO)
    return out


def cmd_gen_scenes(args):
    cfg = load_config(args.config)
    out = _out_dir(args.out)
    if args.count < 0:
        raise ConfigError("--count: must be >= 0")
    scene_cfg = cfg.scene_config()
    scenes = [generate_scene(args.seed + i, scene_cfg) for i in range(args.count)]
    window = 1 if cfg.temporal_module == "static" else cfg.temporal_field
    ids = export_dataset(scenes, out, cfg.grid(), window)
    print(f"{len(ids)} samples from {len(scenes)} scenes written to {out}")
    return EXIT_OK


def cmd_gradcheck(args):
    cfg = load_config(args.config)
    results = gradcheck.run_gradcheck(seed=cfg.seed)
    print(f"{'component':<14}{'worst rel err':>15}{'seconds':>10}  status")
    for name, err, secs, ok in results:
        print(f"{name:<14}{err:>15.3e}{secs:>10.2f}  {'PASS' if ok else 'FAIL'}")
    failed = [r[0] for r in results if not r[3]]
    if failed:
        print(f"gradient check FAILED for: {', '.join(failed)} "
              f"(tolerance {gradcheck.TOLERANCE:g})", file=sys.stderr)
        return EXIT_VERIFY
    print(f"all components within {gradcheck.TOLERANCE:g}")
    return EXIT_OK


def cmd_train(args):
    cfg = load_config(args.config)
    out = _out_dir(args.out)
    est = pipeline.train(cfg, args.data, out)
    last = est.history_[-1] if est.history_ else None
    if last is not None:
        print(f"epochs {last['epoch']}  steps {last['step']}  final loss {last['loss']:.4f}")
    print(f"checkpoint written to {out / pipeline.CHECKPOINT_NAME}")
    return EXIT_OK


def cmd_eval(args):
    cfg = load_config(args.config) if args.config else None
    report = pipeline.evaluate(args.checkpoint, args.data, cfg)
    print(pipeline.format_report(report))
    csv_path = Path(args.out) if args.out else Path(args.checkpoint).with_name("eval.csv")
    try:
        pipeline.write_report_csv(csv_path, report)
    except OSError as exc:
        raise CliError(f"cannot write {csv_path}: {exc.strerror}", EXIT_IO) from None
    print(f"metrics written to {csv_path}")
    return EXIT_OK


def cmd_mask(args):
    cfg = load_config(args.config)
    grid = parse_grid(args.grid)
    if args.rig:
        rig = read_rig(args.rig)
    else:
        rig = default_rig(cfg.num_cameras, (cfg.image_height, cfg.image_width), cfg.fov_deg,
                          cfg.camera_height)
    clouds = Geometry.frustums(rig, cfg.depth_values(), (cfg.image_height, cfg.image_width),
                               cfg.feature_stride)
    mask = build_geo_mask(clouds, grid, cfg.epsilon, _allow_closed=True)
    out = _out_dir(args.out)
    write_pgm(out / "mask.pgm", mask)
    save_tensor(out / "mask.gtns", mask.weights)
    valid = mask.valid.mean()
    print(f"mask {grid.shape[0]}x{grid.shape[1]}: {100 * valid:.1f}% of cells visible "
          f"-> {out / 'mask.pgm'}, {out / 'mask.gtns'}")
    return EXIT_OK


def cmd_ablate(args):
    cfg = load_config(args.config)
    out = _out_dir(args.out)
    print(f"{'module':<12}{'T':>3}{'iou':>9}{'pq':>9}{'train_s':>10}")

    def log(r):
        print(f"{r['module']:<12}{r['T']:>3}{r['iou']:>9.2f}{r['pq']:>9.2f}"
              f"{r['train_seconds']:>10.1f}", flush=True)

    rows = ablation.run_ablation(cfg, args.data, log=log)
    ablation.write_ablation_csv(out / "ablation.csv", rows)
    for name, ok, detail in ablation.trend_checks(rows):
        print(f"{'holds' if ok else 'does not hold'}: {name}: {detail}")
    print(f"results written to {out / 'ablation.csv'}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="geobev", description="Temporal BEV segmentation toolkit.",
                formatter_class=fmt)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-scenes", help="generate and export synthetic scenes",
                       formatter_class=fmt)
    g.add_argument("--seed", type=int, default=0, help="seed of the first scene")
    g.add_argument("--count", type=int, default=1, help="number of scenes")
    g.add_argument("--out", required=True, help="dataset directory")
    g.add_argument("--config", default=None, help="config file (defaults if omitted)")
    g.set_defaults(func=cmd_gen_scenes)

    g = sub.add_parser("gradcheck", help="finite-difference check of every backward pass",
                       formatter_class=fmt)
    g.add_argument("--config", default=None, help="config file (its seed is used)")
    g.set_defaults(func=cmd_gradcheck)

    g = sub.add_parser("train", help="train on a dataset directory", formatter_class=fmt)
    g.add_argument("--config", default=None, help="config file (defaults if omitted)")
    g.add_argument("--data", required=True, help="dataset directory")
    g.add_argument("--out", required=True, help="run directory")
    g.set_defaults(func=cmd_train)

    g = sub.add_parser("eval", help="score a checkpoint on a dataset", formatter_class=fmt)
    g.add_argument("--checkpoint", required=True, help="model.gcgr file")
    g.add_argument("--data", required=True, help="dataset directory")
    g.add_argument("--config", default=None,
                   help="config file (defaults to config.txt beside the checkpoint)")
    g.add_argument("--out", default=None, help="CSV path (defaults to eval.csv beside the checkpoint)")
    g.set_defaults(func=cmd_eval)

    g = sub.add_parser("mask", help="write the visibility mask of a rig", formatter_class=fmt)
    g.add_argument("--rig", default=None, help="rig file (default rig from config if omitted)")
    g.add_argument("--grid", default="100x100@0.5", help="EXTENT_XxEXTENT_Y@RESOLUTION in metres")
    g.add_argument("--out", required=True, help="output directory for mask.pgm and mask.gtns")
    g.add_argument("--config", default=None, help="config file for depths, image size, epsilon")
    g.set_defaults(func=cmd_mask)

    g = sub.add_parser("ablate", help="temporal module x temporal field grid", formatter_class=fmt)
    g.add_argument("--config", default=None, help="config file (defaults if omitted)")
    g.add_argument("--data", required=True, help="dataset directory")
    g.add_argument("--out", required=True, help="output directory for ablation.csv")
    g.set_defaults(func=cmd_ablate)
    return p


def _thread_limit():
    raw = os.environ.get("GEOBEV_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise ConfigError(f"GEOBEV_THREADS: expected a positive integer, got {raw!r}")
    return n


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with threadpool_limits(limits=_thread_limit()):
            return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except pipeline.CheckpointVersionError as exc:
        print(f"checkpoint version error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (ConfigError, GenerationError, ShapeError, InvalidValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        name = f" {exc.filename}" if getattr(exc, "filename", None) else ""
        print(f"I/O error:{name} {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
