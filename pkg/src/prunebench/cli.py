"""Command-line entry point: ``prunebench <subcommand> ...``.

Exit codes: 0 success, 2 usage, 3 I/O, 4 validation, 5 numeric failure.
Errors are reported as one line on stderr: ``error code=<n> kind=<kind> msg=<text>``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__

EXIT_USAGE, EXIT_IO, EXIT_VALIDATION, EXIT_NUMERIC = 2, 3, 4, 5


class UsageError(Exception):
    pass


def _size(text: str) -> tuple[int, int]:
    """``"640x400"`` (width x height) -> (height, width)."""
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("image size must be positive")
    return h, w


def _shape(text: str) -> tuple[int, int, int, int]:
    try:
        dims = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N,C,H,W, got {text!r}") from None
    if len(dims) != 4 or min(dims) < 1:
        raise argparse.ArgumentTypeError("shape needs four positive integers N,C,H,W")
    return dims


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="prunebench", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"prunebench {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="build a randomly initialised ENet-style mini model")
    b.add_argument("--classes", type=int, default=20, help="number of output classes K")
    b.add_argument("--width", type=float, default=1.0, help="channel width multiplier")
    b.add_argument("--seed", type=int, default=0, help="weight initialisation seed")
    b.add_argument("--out", required=True, help="output model file (.pbm)")

    i = sub.add_parser("infer", help="run a model and its argmax head on a tensor dump")
    i.add_argument("--model", required=True)
    i.add_argument("--input", required=True, help="input tensor dump (N,C,H,W)")
    i.add_argument("--out", required=True, help="label map output as tensor dump (N,1,H,W)")
    i.add_argument("--workers", type=_positive_int, default=None, help="argmax worker threads")

    pr = sub.add_parser("prune", help="LASSO channel pruning of residual blocks")
    pr.add_argument("--model", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--shallow-factor", default="1.1", help="channel factor for shallow blocks")
    pr.add_argument("--deep-factor", default="1.25", help="channel factor for deep blocks")
    pr.add_argument("--decoder-factor", default=None, help="channel factor for decoder blocks (default: deep)")
    pr.add_argument("--exclude", default=None, help="comma-separated blocks to skip (default: last block)")
    pr.add_argument("--samples", type=int, default=0, help="samples per calibration image (0 = automatic)")
    pr.add_argument("--calib-images", type=_positive_int, default=16, help="number of synthetic calibration images")
    pr.add_argument("--calib-size", type=_size, default=(64, 64), help="calibration image size WxH")
    pr.add_argument("--calib", default=None, help="calibration tensor dump (overrides synthetic images)")
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--report", default=None, help="per-layer report CSV")

    f = sub.add_parser("flops", help="FLOP / parameter / FP32 size report")
    f.add_argument("--model", required=True)
    f.add_argument("--input", type=_size, default=(400, 640), help="input size WxH")
    f.add_argument("--mac", type=int, choices=(1, 2), default=1, help="FLOPs per multiply-accumulate")
    f.add_argument("--no-head", action="store_true", help="exclude the argmax head")
    f.add_argument("--csv", default=None, help="also write the report as CSV")

    ba = sub.add_parser("bench-argmax", help="serial vs parallel argmax timing")
    ba.add_argument("--shape", type=_shape, default=(1, 20, 400, 640), help="N,C,H,W")
    ba.add_argument("--reps", type=int, default=5, help="repetitions (first is warm-up)")
    ba.add_argument("--workers", type=_positive_int, default=None)
    ba.add_argument("--impl", default="serial,parallel", help="comma-separated implementations")
    ba.add_argument("--seed", type=int, default=0)
    ba.add_argument("--csv", default=None)

    e = sub.add_parser("eval", help="per-class IoU, mean IoU and global accuracy")
    e.add_argument("--truth", required=True, help="directory of ground-truth label dumps")
    e.add_argument("--pred", required=True, help="directory of predicted label dumps (same file names)")
    e.add_argument("--classes", type=int, required=True)
    e.add_argument("--ignore", type=int, default=255)
    e.add_argument("--csv", default=None)

    bv = sub.add_parser("bev-stitch", help="stitch four camera label maps into a top view")
    bv.add_argument("--calib", required=True, help="camera rig calibration file")
    bv.add_argument("--labels", required=True, help="comma-separated label dumps, one per camera section")
    bv.add_argument("--grid", default="20x20m@0.05", help="EXTENT_XxEXTENT_Ym@CELL")
    bv.add_argument("--out", required=True, help="top-view label dump")
    bv.add_argument("--image", default=None, help="optional colour-mapped PPM preview")
    return p


def _header(args) -> str:
    config = {k: v for k, v in sorted(vars(args).items())}
    digest = hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()[:16]
    seed = getattr(args, "seed", None)
    seed_text = "none" if seed is None else f"{seed}"
    return f"# prunebench {__version__} command={args.command} seed={seed_text} config={digest}"


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return p


def _writable(path: str) -> Path:
    p = Path(path)
    if not p.parent.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {p.parent}")
    return p


def cmd_build(args, out):
    from .nn import build_enet_mini, save_model

    dest = _writable(args.out)
    g = build_enet_mini(args.classes, args.width, seed=args.seed)
    save_model(g, dest)
    print(f"wrote {dest} ({g.param_count()} parameters, {len(g.blocks())} residual blocks)", file=out)


def cmd_infer(args, out):
    from . import tensor
    from .argmax import argmax_parallel
    from .nn import forward, load_model

    g = load_model(_existing(args.model))
    x = tensor.load(_existing(args.input))
    dest = _writable(args.out)
    labels = argmax_parallel(forward(g, x), args.workers)
    tensor.save(labels[:, None].astype(np.float32), dest)
    counts = np.bincount(labels.ravel(), minlength=g.class_count)
    print("class,pixels", file=out)
    for k, n in enumerate(counts):
        print(f"{k},{n}", file=out)


def cmd_prune(args, out):
    from . import tensor
    from .nn import count_cost, load_model, save_model
    from .prune import PruningSpec, prune_model
    from .synthetic import calibration_images

    g = load_model(_existing(args.model))
    dest = _writable(args.out)
    report_path = _writable(args.report) if args.report else None
    calib_seq, prune_seq = np.random.SeedSequence(args.seed).spawn(2)
    if args.calib:
        calib = tensor.load(_existing(args.calib))
    else:
        h, w = args.calib_size
        calib = calibration_images(args.calib_images, h, w, calib_seq, g.in_channels)
    spec = PruningSpec(args.shallow_factor, args.deep_factor, args.decoder_factor,
                       None if args.exclude is None else [s for s in args.exclude.split(",") if s],
                       args.samples or None, int(prune_seq.generate_state(1)[0]))
    pruned, report = prune_model(g, spec, calib)
    save_model(pruned, dest)
    if report_path:
        report_path.write_text(report.to_csv())
    before, after = count_cost(g, 400, 640), count_cost(pruned, 400, 640)
    print(report.to_table(), file=out)
    print(f"flops_ratio,{after.flops / before.flops:.6f}", file=out)
    print(f"params_ratio,{after.params / before.params:.6f}", file=out)


def cmd_flops(args, out):
    from .nn import count_cost, load_model

    g = load_model(_existing(args.model))
    h, w = args.input
    rep = count_cost(g, h, w, args.mac, include_head=not args.no_head)
    print(rep.to_table(), file=out)
    if args.csv:
        _writable(args.csv).write_text(rep.to_csv())


def cmd_bench(args, out):
    from .argmax import bench_argmax, bench_csv, format_bench

    impls = [s for s in args.impl.split(",") if s]
    records = bench_argmax(args.shape, impls, args.reps, args.workers, args.seed)
    print(format_bench(records), file=out)
    if args.csv:
        _writable(args.csv).write_text(bench_csv(records))


def cmd_eval(args, out):
    from . import tensor
    from .metrics import ConfusionMatrix, format_table, metrics_csv

    truth_dir, pred_dir = Path(args.truth), Path(args.pred)
    for d in (truth_dir, pred_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"no such directory: {d}")
    names = sorted(p.name for p in truth_dir.iterdir() if p.is_file())
    if not names:
        raise ValueError(f"no label files in {truth_dir}")
    cm = ConfusionMatrix(args.classes, args.ignore)
    for name in names:
        truth = tensor.load(truth_dir / name)
        pred = tensor.load(_existing(str(pred_dir / name)))
        cm.accumulate(np.rint(truth).astype(np.int64), np.rint(pred).astype(np.int64))
    print(format_table(cm), file=out)
    if args.csv:
        _writable(args.csv).write_text(metrics_csv(cm))


def cmd_bev(args, out):
    from . import tensor
    from .bev import colorize, load_rig, parse_grid, stitch_topview

    cams = load_rig(_existing(args.calib))
    paths = [s for s in args.labels.split(",") if s]
    if len(paths) != len(cams):
        raise ValueError(f"{len(cams)} cameras in calibration but {len(paths)} label files")
    labels = [np.rint(tensor.load(_existing(p))[0, 0]).astype(np.uint32) for p in paths]
    grid = parse_grid(args.grid)
    top = stitch_topview(cams, labels, grid)
    tensor.save(top[:, None].astype(np.float32), _writable(args.out))
    if args.image:
        rgb = colorize(top)
        h, w = rgb.shape[:2]
        _writable(args.image).write_bytes(f"P6 {w} {h} 255\n".encode() + rgb.tobytes())
    seen = top != 255
    print(f"cells,{top.size}", file=out)
    print(f"visible,{int(seen.sum())}", file=out)


COMMANDS = {"build": cmd_build, "infer": cmd_infer, "prune": cmd_prune, "flops": cmd_flops,
            "bench-argmax": cmd_bench, "eval": cmd_eval, "bev-stitch": cmd_bev}


def _fail(code: int, kind: str, exc: BaseException) -> int:
    msg = " ".join(str(exc).split()) or type(exc).__name__
    print(f"error code={code} kind={kind} msg={msg}", file=sys.stderr)
    return code


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    print(_header(args), file=out)
    try:
        COMMANDS[args.command](args, out)
    except (OSError, EOFError) as exc:
        return _fail(EXIT_IO, "io", exc)
    except (FloatingPointError, np.linalg.LinAlgError, ArithmeticError) as exc:
        return _fail(EXIT_NUMERIC, "numeric", exc)
    except (ValueError, KeyError, AssertionError) as exc:
        return _fail(EXIT_VALIDATION, "validation", exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
