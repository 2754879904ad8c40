"""Command line entry point.

Subcommands: train, nll, sample, density-grid, verify.  Options can come
from a key=value config file (--config); explicit flags win.  Exit codes:
0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import difflib
import math
import sys

import numpy as np

from . import data, model as model_mod, sampler, train, verify
from .errors import NitsError


class _Parser(argparse.ArgumentParser):
    """argparse with a typo hint on unrecognized options."""

    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        if "unrecognized arguments:" in message:
            bad = [tok for tok in message.split(":", 1)[1].split()
                   if tok.startswith("--")]
            known = getattr(self, "all_options", None) or list(
                self._option_string_actions)
            for tok in bad:
                close = difflib.get_close_matches(tok, known, n=1)
                if close:
                    message += f" (did you mean {close[0]}?)"
        super().error(message)


def _add_common(sub):
    sub.add_argument("--config", metavar="FILE",
                     help="key=value defaults; explicit flags override")
    sub.add_argument("--threads", type=int, default=1,
                     help="BLAS thread cap (default 1, for reproducibility)")


def make_parser():
    parser = _Parser(prog="nits",
                     description="autoregressive monotone-network density "
                                 "estimation")
    subs = parser.add_subparsers(dest="command", required=True,
                                 parser_class=_Parser)
    sub_map = {}

    p = sub_map["train"] = subs.add_parser(
        "train", help="fit a model and write a checkpoint")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", metavar="CSV", help="numeric csv of rows")
    src.add_argument("--synthetic", choices=data.SYNTHETIC_NAMES,
                     help="named built-in dataset")
    p.add_argument("--n", type=int, default=10_000,
                   help="rows to draw when --synthetic is used")
    p.add_argument("--has-header", action="store_true",
                   help="skip the first csv line")
    p.add_argument("--data-seed", type=int, default=0,
                   help="seed for synthetic draws and split shuffling")
    p.add_argument("--out", required=True, metavar="CKPT",
                   help="checkpoint file to write")
    p.add_argument("--report", metavar="FILE",
                   help="training report path (default: <out>.report.txt)")
    p.add_argument("--pnn-hidden", default="16,16", metavar="W1,W2,...",
                   help="hidden widths of each scalar network")
    p.add_argument("--hidden-dim", type=int, default=128)
    p.add_argument("--blocks", type=int, default=4,
                   help="residual blocks in the weight model")
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--masking", choices=("autoregressive", "independent"),
                   default="autoregressive")
    p.add_argument("--standardize", action="store_true",
                   help="shift/scale columns to mean 0 sd 1 before fitting")
    p.add_argument("--dequantize-cols", metavar="I,J,...",
                   help="columns on an integer grid to jitter")
    p.add_argument("--dequantize-step", type=float, default=1.0)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--max-epochs", type=int, default=200)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0,
                   help="model init and training seed")
    p.add_argument("--quiet", action="store_true",
                   help="suppress per-epoch progress lines")
    _add_common(p)

    p = sub_map["nll"] = subs.add_parser(
        "nll", help="score a csv under a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, metavar="CSV")
    p.add_argument("--has-header", action="store_true")
    _add_common(p)

    p = sub_map["sample"] = subs.add_parser(
        "sample", help="draw rows from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, metavar="CSV",
                   help="output csv (no header, full precision)")
    _add_common(p)

    p = sub_map["density-grid"] = subs.add_parser(
        "density-grid", help="tabulate log density on a regular grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--points", type=int, default=256,
                   help="grid points per axis")
    p.add_argument("--out", required=True, metavar="CSV")
    _add_common(p)

    p = sub_map["verify"] = subs.add_parser(
        "verify", help="run the built-in acceptance checks")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--quick", action="store_true", default=True,
                      help="skip the training-based checks (default)")
    mode.add_argument("--full", action="store_true",
                      help="run everything, including four trainings")
    _add_common(p)

    options = set(parser._option_string_actions)
    for sub in sub_map.values():
        options.update(sub._option_string_actions)
    parser.all_options = sorted(options)
    return parser, sub_map


def _apply_config(argv, parser, sub_map):
    """Fold a --config file into the subparser defaults; flags still win."""
    command = next((a for a in argv if not a.startswith("-")), None)
    if command not in sub_map or "--config" not in argv:
        return argv
    i = argv.index("--config")
    if i + 1 >= len(argv):
        parser.error("--config needs a file argument")
    path = argv[i + 1]
    sub = sub_map[command]
    defaults = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    parser.error(f"{path}:{lineno}: expected key=value")
                key, value = (s.strip() for s in line.split("=", 1))
                opt = "--" + key.replace("_", "-")
                action = sub._option_string_actions.get(opt)
                if action is None:
                    close = difflib.get_close_matches(
                        opt, list(sub._option_string_actions), n=1)
                    hint = f" (did you mean {close[0][2:]}?)" if close else ""
                    parser.error(f"{path}:{lineno}: unknown option "
                                 f"{key!r}{hint}")
                if isinstance(action, (argparse._StoreTrueAction,
                                       argparse._StoreFalseAction)):
                    if value.lower() not in ("true", "false"):
                        parser.error(f"{path}:{lineno}: {key} must be "
                                     f"true or false")
                    defaults[action.dest] = value.lower() == "true"
                else:
                    defaults[action.dest] = (action.type(value)
                                             if action.type else value)
    except OSError as exc:
        parser.error(f"cannot read config {path}: {exc}")
    sub.set_defaults(**defaults)
    return [a for j, a in enumerate(argv) if j not in (i, i + 1)]


def _limit_threads(n):
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(limits=n)
    except ImportError:
        pass


def _load_rows(path, has_header):
    ds = data.load_csv(path, has_header=has_header, ratios=(1.0, 0.0, 0.0))
    return ds


def _affine_from_model(model):
    if model.affine_shift is None:
        return None
    return data.AffineRecord(shift=model.affine_shift,
                             scale=model.affine_scale)


def _cmd_train(args):
    if args.synthetic:
        ds = data.make_synthetic(args.synthetic, args.n, seed=args.data_seed)
    else:
        ds = data.load_csv(args.data, has_header=args.has_header,
                           seed=args.data_seed, ratios=(1.0, 0.0, 0.0))
    if args.dequantize_cols:
        cols = [int(c) for c in args.dequantize_cols.split(",")]
        ds = data.dequantize(ds, cols, step=args.dequantize_step,
                             seed=args.data_seed)
    record = None
    if args.standardize:
        ds, record = data.standardize(ds)

    hidden = tuple(int(w) for w in args.pnn_hidden.split(","))
    model = model_mod.build_model(
        ds.bounds, pnn_hidden=hidden, hidden_dim=args.hidden_dim,
        residual_blocks=args.blocks, dropout=args.dropout,
        masking=args.masking, seed=args.seed)
    if record is not None:
        model.affine_shift = record.shift
        model.affine_scale = record.scale

    cfg = train.TrainConfig(batch_size=args.batch_size, learning_rate=args.lr,
                            patience=args.patience, max_epochs=args.max_epochs,
                            val_fraction=args.val_fraction, seed=args.seed)
    progress = None
    if not args.quiet:
        def progress(epoch, tr, va):
            print(f"epoch {epoch} train_nll {tr:.4f} val_nll {va:.4f}",
                  flush=True)
    best, report = train.fit(model, ds, cfg, progress=progress)

    model_mod.save_checkpoint(best, args.out)
    report_path = args.report or (args.out + ".report.txt")
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(report.to_lines()) + "\n")

    print(f"best_epoch {report.best_epoch} "
          f"best_val_nll {report.best_val_nll:.4f} "
          f"epochs_run {report.epochs_run} "
          f"wall_clock {report.wall_clock:.1f}s")
    if report.aborted_nonfinite:
        print("warning: training aborted after repeated non-finite batches",
              file=sys.stderr)
    if len(ds.test_idx):
        res = train.evaluate_nll(best, ds.test)
        print(f"test_nll {res.nats:.4f} bits_per_dim {res.bits_per_dim:.4f} "
              f"excluded {res.n_excluded}")
    print(f"checkpoint {args.out}")
    print(f"report {report_path}")
    return 0


def _cmd_nll(args):
    model = model_mod.load_checkpoint(args.checkpoint)
    ds = _load_rows(args.data, args.has_header)
    x = ds.x
    record = _affine_from_model(model)
    if record is not None:
        x = record.apply(x)
    res = train.evaluate_nll(model, x)
    nats = res.nats
    if record is not None:
        nats += record.log_scale_sum
    bits = nats / (math.log(2.0) * model.data_dim)
    print(f"n_evaluated {res.n_evaluated}")
    print(f"n_excluded {res.n_excluded}")
    print(f"nll_nats {nats:.4f}")
    print(f"bits_per_dim {bits:.4f}")
    return 0


def _cmd_sample(args):
    model = model_mod.load_checkpoint(args.checkpoint)
    rng = np.random.default_rng(args.seed)
    x = sampler.sample_ancestral(model, args.n, rng)
    record = _affine_from_model(model)
    if record is not None:
        x = record.invert(x)
    data.write_csv(args.out, x)
    print(f"wrote {args.n} rows to {args.out}")
    return 0


def _cmd_density_grid(args):
    model = model_mod.load_checkpoint(args.checkpoint)
    d = model.data_dim
    if d > 2:
        raise NitsError(f"density-grid supports 1 or 2 coordinates, "
                        f"model has {d}")
    record = _affine_from_model(model)
    axes = [np.linspace(b.lo, b.hi, args.points) for b in model.bounds]
    if d == 1:
        rows = axes[0][:, None]
        header = ["x", "logpdf"]
    else:
        gx, gy = np.meshgrid(axes[0], axes[1], indexing="ij")
        rows = np.stack([gx.ravel(), gy.ravel()], axis=1)
        header = ["x", "y", "logpdf"]
    logpdf = model_mod.log_likelihood_batch(model, rows)
    coords = rows
    if record is not None:
        logpdf = logpdf - record.log_scale_sum
        coords = record.invert(rows)
    data.write_csv(args.out, np.column_stack([coords, logpdf]),
                   header=header)
    print(f"wrote {rows.shape[0]} grid points to {args.out}")
    return 0


def _cmd_verify(args):
    results = verify.run_all(quick=not args.full,
                             on_result=lambda r: print(r.line(), flush=True))
    n_fail = sum(not r.passed for r in results)
    mode = "full" if args.full else "quick"
    print(f"{mode} verification: {len(results) - n_fail}/{len(results)} "
          f"criteria passed")
    return 0 if n_fail == 0 else 1


_COMMANDS = {
    "train": _cmd_train,
    "nll": _cmd_nll,
    "sample": _cmd_sample,
    "density-grid": _cmd_density_grid,
    "verify": _cmd_verify,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, sub_map = make_parser()
    argv = _apply_config(argv, parser, sub_map)
    args = parser.parse_args(argv)
    _limit_threads(args.threads)
    try:
        return _COMMANDS[args.command](args)
    except (NitsError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
