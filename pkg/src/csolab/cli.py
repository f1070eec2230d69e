"""``csolab`` command line: generate, train, evaluate, grid, probe, gradcheck, rf.

Exit codes
----------
0  success
1  unexpected internal error
2  usage error (unknown subcommand or flag, missing argument)
3  invalid configuration value
4  malformed input data (IDX, checkpoint, dataset, shape problems)
5  regime / geometry mismatch (probe against the wrong model, position off-image)
6  training diverged
7  I/O error
8  a check ran but failed (gradcheck)

Failures print exactly one line on stderr::

    csolab: error: kind=<ExceptionName> exit=<code> msg=<JSON string>
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import errors
from .config import RESOLVED_NAME, RunConfigFile, resolve
from .experiment import (TABLE_HEADER, class_names, evaluate_checkpoint, make_provider,
                         run_grid, train_run)
from .nn.gradcheck import GradCheckReport, check_ops
from .nn.receptive import format_table
from .probe import TruthOracle, dummy_scene, render_heatmap, run_probe
from .scene import generate_scenes, export_dataset
from .unet import (PROFILES, REFERENCE_BOTTLENECK_RF, REFERENCE_OUTPUT_RF, UNetArch,
                   checkpoint_metadata, load_checkpoint, receptive_field_report, unet_grad_check)

log = logging.getLogger("csolab")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_CONFIG = 0, 1, 2, 3
EXIT_DATA, EXIT_MISMATCH, EXIT_DIVERGED, EXIT_IO, EXIT_CHECK = 4, 5, 6, 7, 8

_EXIT_CODES = [
    (errors.UsageError, EXIT_USAGE),
    (errors.ConfigError, EXIT_CONFIG),
    (errors.DivergedLoss, EXIT_DIVERGED),
    ((errors.RegimeMismatch, errors.OutOfBounds), EXIT_MISMATCH),
    ((errors.BadMagic, errors.Truncated, errors.CorruptHeader, errors.ArchMismatch,
      errors.EmptyPool, errors.ShapeMismatch), EXIT_DATA),
    (OSError, EXIT_IO),
]


class CheckFailed(errors.CsoError):
    pass


class _Parser(argparse.ArgumentParser):
    """Raise instead of exiting so :func:`main` owns the exit status."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise errors.UsageError(message)


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _common(p):
    p.add_argument("--config", help="JSON run configuration file")
    p.add_argument("--profile", choices=sorted(PROFILES), help="desk (width 16) or paper (width 64)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("-v", "--verbose", action="store_true")


def _scene_flags(p):
    p.add_argument("--regime", choices=["easy", "hard", "strict"])
    p.add_argument("--sprites", choices=["auto", "synthetic", "idx"], dest="sprite_source",
                   help="sprite source (auto: IDX files if found, else synthetic)")
    p.add_argument("--data-dir", help="directory with Fashion-MNIST IDX files "
                                      "(default $CSOLAB_DATA_DIR)")


def _train_flags(p):
    p.add_argument("--d", type=int, help="train+validation pool size D")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float, dest="learning_rate")
    p.add_argument("--base-width", type=int)
    p.add_argument("--test-size", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="csolab", description="Structured-object segmentation experiments.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("generate", help="render a dataset of scenes to PNG + manifest")
    _common(p)
    _scene_flags(p)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--split", choices=["train", "test"], default="train")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train one model and evaluate it on the test set")
    _common(p)
    _scene_flags(p)
    _train_flags(p)
    p.add_argument("--init-seed", type=int, default=0)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--stop-below", type=float, help="stop once the epoch train loss drops below this")
    p.add_argument("--out", required=True)

    p = sub.add_parser("grid", help="train the init-seed x split-seed grid and summarise it")
    _common(p)
    _scene_flags(p)
    _train_flags(p)
    p.add_argument("--init-seeds", type=_ints)
    p.add_argument("--split-seeds", type=_ints)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="score a checkpoint on the regime's test set")
    _common(p)
    _scene_flags(p)
    p.add_argument("--test-size", type=int)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("probe", help="sliding-reference heatmaps of shirt precision/recall")
    _common(p)
    _scene_flags(p)
    p.add_argument("--checkpoint", help="trained model (omit with --oracle)")
    p.add_argument("--oracle", action="store_true", help="use a ground-truth oracle instead of a model")
    p.add_argument("--reference", choices=["shirt", "pants", "bag"])
    p.add_argument("--measure", choices=["precision", "recall", "both"])
    p.add_argument("--images-per-position", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and the U-Net")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--size", type=int, default=16, help="U-Net input size")
    p.add_argument("--max-coords", type=int, default=4, help="coordinates sampled per U-Net tensor")
    p.add_argument("--no-unet", action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("rf", help="receptive-field table of the U-Net")
    p.add_argument("--arch", choices=["default", *sorted(PROFILES)], default="default")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


# -- helpers -------------------------------------------------------------------

def _load_config(args) -> RunConfigFile:
    cfg = RunConfigFile.load(args.config) if getattr(args, "config", None) else RunConfigFile()
    cfg.override("top", "profile", getattr(args, "profile", None))
    cfg.override("top", "seed", getattr(args, "seed", None))
    cfg.override("scene", "regime", getattr(args, "regime", None))
    for key in ("sprite_source", "data_dir", "d", "epochs", "batch_size", "learning_rate", "test_size"):
        cfg.override("experiment", key, getattr(args, key, None))
    cfg.override("arch", "base_width", getattr(args, "base_width", None))
    for flag, key in (("reference", "reference_class"), ("measure", "measure"),
                      ("images_per_position", "images_per_position"), ("stride", "stride")):
        cfg.override("probe", key, getattr(args, flag, None))
    return cfg


def _experiment_for(cfg: RunConfigFile):
    """Resolve; the master seed doubles as the data seed unless the file sets one."""
    if "data_seed" not in cfg.experiment:
        cfg.experiment["data_seed"] = cfg.seed
    return resolve(cfg)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands -----------------------------------------------------------------

def cmd_generate(args) -> int:
    res = resolve(_load_config(args))
    out = _out(args)
    res.write(out)
    sprites = make_provider(res.experiment, args.split)
    if args.count < 0:
        raise errors.ConfigError("--count must be >= 0")
    scenes = generate_scenes(res.scene, args.count, res.seed, sprites)
    export_dataset(scenes, out, res.scene, res.seed, sprites)
    print(f"wrote {args.count} {res.scene.regime} scenes to {out}")
    return EXIT_OK


def _echo_into_run(out: Path, record) -> None:
    if record.checkpoint:
        shutil.copyfile(out / RESOLVED_NAME, Path(record.checkpoint).parent / RESOLVED_NAME)


def cmd_train(args) -> int:
    res = _experiment_for(_load_config(args))
    out = _out(args)
    res.write(out)
    rec = train_run(res.experiment, args.init_seed, args.split_seed, out, stop_below=args.stop_below)
    _echo_into_run(out, rec)
    rep = rec.report
    print(f"run {Path(rec.checkpoint).parent.name}: epochs={len(rec.train_loss)} "
          f"train_loss={rec.train_loss[-1]:.5f} shirt_precision={rep.precision():.4f} "
          f"shirt_recall={rep.recall():.4f} converged={rep.converged}")
    return EXIT_OK


def cmd_grid(args) -> int:
    res = _experiment_for(_load_config(args))
    out = _out(args)
    res.write(out)
    records, summary = run_grid(res.experiment, out, args.init_seeds, args.split_seeds)
    for rec in records:
        if rec.checkpoint:
            _echo_into_run(out, rec)
    print(TABLE_HEADER)
    print(summary.format())
    return EXIT_OK


def _regime_from_checkpoint(args, cfg: RunConfigFile) -> dict:
    meta = checkpoint_metadata(args.checkpoint)
    regime = (meta.get("extra") or {}).get("regime")
    if getattr(args, "regime", None) is None and regime and "regime" not in cfg.scene:
        cfg.scene["regime"] = regime
    return meta


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    _regime_from_checkpoint(args, cfg)
    res = _experiment_for(cfg)
    out = _out(args)
    res.write(out)
    report, _ = evaluate_checkpoint(args.checkpoint, res.experiment)
    with open(out / "metrics.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=1)
    names = class_names(res.scene)
    for row in report.rows():
        print(f"{names[row['class_index']]:<11} precision={row['precision']:.4f} recall={row['recall']:.4f}")
    return EXIT_OK


def cmd_probe(args) -> int:
    if not args.oracle and not args.checkpoint:
        raise errors.UsageError("probe needs --checkpoint or --oracle")
    cfg = _load_config(args)
    meta = _regime_from_checkpoint(args, cfg) if args.checkpoint else {}
    res = _experiment_for(cfg)
    out = _out(args)
    res.write(out)
    sprites = make_provider(res.experiment, "test")
    if args.oracle:
        model, model_regime = TruthOracle(), None
    else:
        model = load_checkpoint(args.checkpoint)
        model_regime = (meta.get("extra") or {}).get("regime")
    heatmaps = run_probe(model, res.probe, sprites, model_regime=model_regime)
    background = dummy_scene(res.scene, res.probe.reference_class, sprites, res.seed)
    for hm in heatmaps.values():
        png, csv_path = render_heatmap(hm, background, out)
        r, c = hm.argmax_cell()
        print(f"{hm.measure}: mean={hm.grid.mean():.4f} max={hm.grid.max():.4f} at "
              f"(x={hm.xs[c]:g}, y={hm.ys[r]:g}) -> {csv_path.name}, {png.name}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    ops = GradCheckReport(tolerance=args.tolerance)
    for seed in range(args.seeds):
        ops.merge(check_ops(seed, args.tolerance, np.float64))
    print(f"ops, {args.seeds} seeds, float64")
    print(ops.format())
    ok = ops.passed
    if not args.no_unet:
        net = GradCheckReport(tolerance=args.tolerance)
        for seed in range(args.seeds):
            net.merge(unet_grad_check(seed, size=args.size, tolerance=args.tolerance,
                                      max_coords=args.max_coords))
        print(f"\nU-Net {args.size}x{args.size}, {args.seeds} seeds, float64, "
              f"{args.max_coords} coords per tensor")
        print(net.format())
        print(f"U-Net max relative error {net.max_rel_error:.3e}")
        ok = ok and net.passed
    if not ok:
        raise CheckFailed(f"gradient check exceeded tolerance {args.tolerance:g}")
    print(f"all gradients within {args.tolerance:g}")
    return EXIT_OK


def cmd_rf(args) -> int:
    width = 16 if args.arch == "default" else PROFILES[args.arch]
    rep = receptive_field_report(UNetArch(base_width=width, out_channels=4))
    print(format_table(rep["layers"], rep["results"]))
    print(f"bottleneck_rf={rep['bottleneck_rf']} output_rf={rep['output_rf']} "
          f"reference_bottleneck_rf={REFERENCE_BOTTLENECK_RF} reference_output_rf={REFERENCE_OUTPUT_RF}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "grid": cmd_grid, "evaluate": cmd_evaluate,
            "probe": cmd_probe, "gradcheck": cmd_gradcheck, "rf": cmd_rf}


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, CheckFailed):
        return EXIT_CHECK
    for types, code in _EXIT_CODES:
        if isinstance(exc, types):
            return code
    return EXIT_INTERNAL


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise errors.UsageError("missing command")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        return COMMANDS[args.command](args)
    except Exception as exc:     # one line, whatever went wrong
        code = _exit_code(exc)
        if code == EXIT_INTERNAL:
            log.debug("internal error", exc_info=True)
        print(f"csolab: error: kind={type(exc).__name__} exit={code} msg={json.dumps(str(exc))}",
              file=sys.stderr)
        return code


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
