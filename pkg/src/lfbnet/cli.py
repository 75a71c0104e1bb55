"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable, malformed or
mis-sized inputs), 3 numeric-invariant violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import backbone, gradcheck, metrics, pipeline, spectral, synth
from .imageio import ImageFormatError, read_rgb, read_thermal, to_u8, write_png
from .pipeline import Config, ConfigError
from .selftest import FAULTS, run_selftest
from .tensor_core import ParamStore

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_USAGE", "EXIT_DATA", "EXIT_NUMERIC"]

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; 2 is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


CONFIG_FLAGS = {
    "patch_size": int,
    "stride": int,
    "cutoff_rho": float,
    "k_s": int,
    "clamp_px": float,
    "eps": float,
    "scales": int,
    "embed_dim": int,
}


def _add_config_flags(p):
    p.add_argument("--config", type=Path, help="flat key=value config file")
    g = p.add_argument_group("config overrides (take precedence over --config)")
    for key, typ in CONFIG_FLAGS.items():
        g.add_argument(f"--{key.replace('_', '-')}", dest=key, type=typ, default=None)


def _add_pair_flags(p):
    p.add_argument("--rgb", type=Path, required=True, help="8-bit RGB PNG")
    p.add_argument("--thermal", type=Path, required=True, help="8- or 16-bit single-channel PNG/PGM")
    p.add_argument("--out", type=Path, required=True, help="output directory (created if missing)")


def _threads(n: int) -> int:
    if n < 0:
        raise UsageError("--threads must be >= 0")
    return n or (os.cpu_count() or 1)


def _shift(text: str):
    try:
        dx, dy = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected dx,dy, got {text!r}") from None
    return dx, dy


def _size(text: str):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}") from None
    return w, h


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lfbnet", description="Local-frequency RGB-thermal feature fusion.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("fuse", help="run the full fusion pass and export features")
    _add_pair_flags(p)
    p.add_argument("--weights", type=Path, help="weight manifest (default: seeded untrained weights)")
    p.add_argument("--features-in", type=Path, help="precomputed backbone pyramids, bypassing the built-in backbone")
    p.add_argument("--threads", type=int, default=1, help="worker threads, 0 = one per CPU (default 1)")
    _add_config_flags(p)

    p = sub.add_parser("guidance", help="write the six guidance channels of one scale as PNGs")
    _add_pair_flags(p)
    p.add_argument("--scale", type=int, default=0, help="pyramid level (default 0)")
    _add_config_flags(p)

    p = sub.add_parser("bench", help="generate a synthetic pair with known shift and boxes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shift", type=_shift, default=(2.0, 0.0), help="dx,dy in pixels (default 2,0)")
    p.add_argument("--gain", type=float, default=1.0, help="thermal intensity gain (default 1)")
    p.add_argument("--noise", type=float, default=0.0, help="thermal noise sigma (default 0)")
    p.add_argument("--size", type=_size, default=(640, 512), help="WIDTHxHEIGHT (default 640x512)")
    p.add_argument("--texture", choices=synth.TEXTURES, default="perlin-like")
    p.add_argument("--targets", type=int, default=4, help="number of targets (default 4)")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", help="AP at IoU 0.50:0.95 for a detection file")
    p.add_argument("--dets", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of analytic gradients")
    p.add_argument("--op", choices=gradcheck.SUPPORTED_OPS + ("all",), default="all")
    p.add_argument("--points", type=int, default=20, help="random points per op (default 20)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-3)

    p = sub.add_parser("selftest", help="run the embedded invariant suite")
    p.add_argument("--inject-fault", choices=tuple(FAULTS), help=argparse.SUPPRESS)
    return parser


def _config(args) -> Config:
    overrides = {k: getattr(args, k) for k in CONFIG_FLAGS}
    return pipeline.load_config(args.config, overrides)


def _read_pair(args):
    return read_rgb(args.rgb), read_thermal(args.thermal)


def cmd_fuse(args) -> int:
    config = _config(args)
    threads = _threads(args.threads)
    rgb, thermal = _read_pair(args)
    params = ParamStore.load(args.weights) if args.weights else pipeline.init_params(config)
    features = pipeline.load_feature_pyramids(args.features_in) if args.features_in else None
    result = pipeline.run(rgb, thermal, params, config, threads=threads, features=features)
    manifest = pipeline.export(result, args.out, config)
    t = result.timing_ms
    print(f"fused {result.input_shape[1]}x{result.input_shape[0]} over {result.n_scales} scales -> {manifest}")
    print(f"  backbone {t['backbone']:.0f} ms, total {t['total']:.0f} ms")
    for s in range(result.n_scales):
        stages = ", ".join(f"{k.split('.', 1)[1]} {v:.0f}" for k, v in t.items() if k.startswith(f"scale{s}."))
        print(f"  scale {s}: {stages} ms")
    return EXIT_OK


def cmd_guidance(args) -> int:
    config = _config(args)
    if not 0 <= args.scale < config.scales:
        raise UsageError(f"--scale must be in [0, {config.scales - 1}]")
    rgb, thermal = _read_pair(args)
    g = pipeline.guidance_map(rgb, thermal, config, args.scale)
    args.out.mkdir(parents=True, exist_ok=True)
    paths = pipeline.write_guidance_pngs(g, args.out)
    summary = {"scale": args.scale, "shape": list(g.shape[:2]), "channels": pipeline.guidance_summary(g)}
    (args.out / "summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    (args.out / "config.txt").write_text(config.to_text(), encoding="utf-8")
    print(json.dumps({"pngs": [p.name for p in paths], **summary}, indent=2))
    return EXIT_OK


def cmd_bench(args) -> int:
    w, h = args.size
    cfg = synth.SynthConfig(
        seed=args.seed,
        size=(h, w),
        shift=args.shift,
        intensity_gain=args.gain,
        noise_sigma=args.noise,
        texture=args.texture,
        n_targets=args.targets,
    )
    pair = synth.generate_pair(cfg)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    write_png(out / "rgb.png", to_u8(pair.rgb))
    clipped = float(np.mean((pair.thermal < 0) | (pair.thermal > 1)))
    write_png(out / "thermal.png", np.round(np.clip(pair.thermal, 0, 1) * 65535).astype(np.uint16))
    gt = [{"image_id": "bench", "bbox": b.as_list()} for b in pair.boxes]
    (out / "gt.json").write_text(json.dumps(gt, indent=2), encoding="utf-8")
    lag = int(np.ceil(max(abs(cfg.shift[0]), abs(cfg.shift[1])))) + 2
    est = synth.estimate_shift(backbone.luma(pair.rgb), pair.thermal, max_lag=min(lag, min(h, w) // 4))
    report = {
        "config": {
            "seed": cfg.seed,
            "size": [w, h],
            "shift": list(cfg.shift),
            "intensity_gain": cfg.intensity_gain,
            "noise_sigma": cfg.noise_sigma,
            "texture": cfg.texture,
            "n_targets": cfg.n_targets,
            "target_size_range": list(cfg.target_size_range),
        },
        "true_shift": list(pair.true_shift),
        "estimated_integer_shift": list(est),
        "thermal_clipped_fraction": clipped,
        "n_boxes": len(pair.boxes),
        "files": ["rgb.png", "thermal.png", "gt.json"],
    }
    (out / "report.json").write_text(json.dumps(report, indent=2), encoding="utf-8")
    (out / "config.txt").write_text("".join(f"{k}={v}\n" for k, v in report["config"].items()), encoding="utf-8")
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_eval(args) -> int:
    dets = metrics.load_detections(args.dets)
    gts = metrics.load_ground_truth(args.gt)
    print(json.dumps(metrics.ap_range(dets, gts).to_dict(), indent=2))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.points < 1:
        raise UsageError("--points must be >= 1")
    ops = gradcheck.SUPPORTED_OPS if args.op == "all" else (args.op,)
    reports = [
        gradcheck.check_gradient(op, eps=args.eps, seed=args.seed + i).to_dict() for op in ops for i in range(args.points)
    ]
    failed = sorted({r["op"] for r in reports if not r["passed"]})
    print(json.dumps({"passed": not failed, "failed_ops": failed, "reports": reports}, indent=2))
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_selftest(args) -> int:
    report = run_selftest(inject=args.inject_fault)
    print(json.dumps(report.to_dict(), indent=2))
    if not report.passed:
        print(f"selftest failed: {', '.join(report.failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


COMMANDS = {
    "fuse": cmd_fuse,
    "guidance": cmd_guidance,
    "bench": cmd_bench,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"lfbnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, spectral.SpectralResidueError) as exc:
        print(f"lfbnet: numeric invariant violated: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError, ImageFormatError, ConfigError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"lfbnet: error: {msg}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
