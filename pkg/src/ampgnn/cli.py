"""``ampgnn`` command line: training, SER sweeps, robustness runs, op counts, oracle checks.

Results go to stdout (or ``--out``) as comma-separated text with a header
row.  Exit status: 0 on success, 2 for bad arguments or unreadable inputs,
3 when a detector or the trainer hits a numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from .amp import NumericalError, amp_detect_batch, posterior_pmf
from .baselines import oracle_marginals_batch
from .bench import (DETECTORS, BenchSpec, count_ops, format_csv, growth_exponents, run_robustness_csi,
                    run_robustness_users, run_ser_sweep)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .detector import AmpGnnConfig, forward_batch
from .system import draw_batch, make_constellation, parse_modulation
from .train import TrainConfig, train

log = logging.getLogger("ampgnn")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


# ------------------------------------------------------------ value parsing

def parse_mimo(text: str):
    try:
        m, n = (int(p) for p in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected MxN, got {text!r}") from None
    if m < 1 or n < 1:
        raise argparse.ArgumentTypeError("M and N must be positive")
    return m, n


def parse_snr(text: str):
    """``a:b:step`` (inclusive of ``b``) or a comma-separated list."""
    try:
        if ":" in text:
            a, b, step = (float(p) for p in text.split(":"))
            if step <= 0 or b < a:
                raise ValueError
            count = int(np.floor((b - a) / step + 1e-9)) + 1
            return tuple(round(a + i * step, 10) for i in range(count))
        return tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad SNR grid {text!r}; use a:b:step or a,b,c") from None


def parse_int_list(text: str):
    try:
        return tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def parse_detectors(text: str):
    names = tuple(p.strip().lower() for p in text.split(",") if p.strip())
    bad = [n for n in names if n not in DETECTORS]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"unknown detector(s) {bad}; choose from {','.join(DETECTORS)}")
    return names


def read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; keys use flag names without dashes."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


# ----------------------------------------------------------------- parser

def _common(p: argparse.ArgumentParser, mimo=(16, 16)):
    p.add_argument("--config", help="key = value file; flags given on the command line win")
    p.add_argument("--mimo", type=parse_mimo, default=mimo, metavar="MxN")
    p.add_argument("--mod", default="qpsk", choices=("qpsk", "16qam", "64qam"))
    p.add_argument("--layers", type=int, default=10, metavar="T", help="unfolded AMP layers")
    p.add_argument("--gnn-rounds", type=int, default=2, metavar="L", help="MPNN rounds per layer")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", metavar="PATH")
    p.add_argument("--out", metavar="CSV", help="write results here instead of stdout")
    p.add_argument("--plot", metavar="PNG", help="also render a figure (needs matplotlib)")
    p.add_argument("-v", "--verbose", action="store_true")


def _sweep_flags(p: argparse.ArgumentParser, detectors="mmse,amp,oamp"):
    p.add_argument("--snr", type=parse_snr, default=parse_snr("8:14:2"), metavar="a:b:step")
    p.add_argument("--detectors", type=parse_detectors, default=parse_detectors(detectors))
    p.add_argument("--trials", type=int, default=1000, help="minimum transmissions per point")
    p.add_argument("--max-trials", type=int, default=100000)
    p.add_argument("--min-errors", type=int, default=100)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ampgnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    # name -> subparser, for applying config-file defaults
    parser.subcommands = sub.choices

    p = sub.add_parser("train", help="train the MPNN and write a checkpoint")
    _common(p)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--samples", type=int, default=20000, help="fresh samples per epoch")
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--train-snr", type=float, default=20.0)
    p.add_argument("--train-users", type=parse_int_list, default=(),
                   help="user counts to mix, e.g. 8,16 (default: N from --mimo)")
    p.add_argument("--val-samples", type=int, default=2000)
    p.add_argument("--resume", metavar="PATH", help="continue from a snapshot written by --snapshot")
    p.add_argument("--snapshot", metavar="PATH", help="rewrite full training state here after each epoch")

    p = sub.add_parser("sweep", help="SER versus SNR")
    _common(p)
    _sweep_flags(p)

    p = sub.add_parser("robust-users", help="evaluate a checkpoint at an unseen user count")
    _common(p)
    _sweep_flags(p, "ampgnn,amp")
    p.add_argument("--test-users", type=int, required=False, help="N at test time")

    p = sub.add_parser("robust-csi", help="detectors see a noisy channel estimate")
    _common(p)
    _sweep_flags(p, "ampgnn,amp")
    p.add_argument("--csi-error-var", type=float, default=1e-3,
                   help="estimation error variance relative to the channel entry variance")

    p = sub.add_parser("complexity", help="real multiplications per detected vector")
    _common(p)

    p = sub.add_parser("oracle-check", help="compare soft outputs with exact marginals on small systems")
    _common(p, mimo=(4, 4))
    p.add_argument("--snr", type=parse_snr, default=parse_snr("4:12:4"), metavar="a:b:step")
    p.add_argument("--trials", type=int, default=200)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = parser.subcommands[args.command]
        known = {a.dest: a for a in sub._actions}
        given = read_config(args.config)
        defaults = {}
        for key, value in given.items():
            action = known.get(key)
            if action is None or key in ("config", "help"):
                raise UsageError(f"{args.config}: unknown key {key!r}")
            try:
                if action.nargs == 0:
                    defaults[key] = value.lower() in ("1", "true", "yes", "on")
                else:
                    defaults[key] = action.type(value) if action.type else value
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"{args.config}: {key}: {exc}") from None
            if action.choices and defaults[key] not in action.choices:
                raise UsageError(f"{args.config}: {key} must be one of {list(action.choices)}")
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


# --------------------------------------------------------------- commands

def _emit(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _bench_spec(args, **extra) -> BenchSpec:
    M, N = args.mimo
    ckpt = None
    if "ampgnn" in args.detectors:
        if not args.checkpoint:
            raise UsageError("the ampgnn detector needs --checkpoint")
        ckpt = _load(args.checkpoint)
        if ckpt.params.n_out != make_constellation(parse_modulation(args.mod)).size:
            raise UsageError(f"checkpoint {args.checkpoint} was trained for a different modulation")
    return BenchSpec(detectors=args.detectors, M=M, N=N, Q=parse_modulation(args.mod), snrs=args.snr,
                     min_trials=args.trials, max_trials=max(args.max_trials, args.trials),
                     min_errors=args.min_errors, seed=args.seed, checkpoint=ckpt, T=args.layers,
                     L=args.gnn_rounds, **extra)


def _load(path):
    try:
        return load_checkpoint(path)
    except OSError as exc:
        raise UsageError(f"cannot read checkpoint {path}: {exc.strerror}") from None


def _finish_rows(rows, args, title):
    _emit(format_csv(rows), args.out)
    if args.plot:
        from .plotting import plot_ser

        plot_ser(rows, args.plot, title=title)


def cmd_train(args):
    M, N = args.mimo
    cfg = TrainConfig(M=M, N=N, Q=parse_modulation(args.mod), T=args.layers, L=args.gnn_rounds,
                      epochs=args.epochs, samples_per_epoch=args.samples, batch_size=args.batch,
                      learning_rate=args.lr, train_snr_db=args.train_snr, val_samples=args.val_samples,
                      seed=args.seed, train_users=args.train_users)
    if not args.checkpoint:
        raise UsageError("train needs --checkpoint PATH for the output")
    resume = _load(args.resume) if args.resume else None
    result = train(cfg, resume=resume, snapshot_path=args.snapshot)
    save_checkpoint(result.checkpoint, args.checkpoint)
    buf = io.StringIO()
    fields = ("epoch", "train_loss", "val_loss", "val_ser", "seconds")
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    writer.writerows(result.history)
    _emit(buf.getvalue(), args.out)
    if args.plot:
        from .plotting import plot_history

        plot_history(result.history, args.plot)


def cmd_sweep(args):
    spec = _bench_spec(args)
    _finish_rows(run_ser_sweep(spec), args, f"{spec.M}x{spec.N} {args.mod}")


def cmd_robust_users(args):
    if "ampgnn" not in args.detectors:
        raise UsageError("robust-users evaluates a checkpoint; include ampgnn in --detectors")
    spec = _bench_spec(args, test_N=args.test_users)
    rows = run_robustness_users(spec)
    _finish_rows(rows, args, f"{spec.M}x{rows[0]['N']} {args.mod}, unseen user count")


def cmd_robust_csi(args):
    spec = _bench_spec(args, channel_error_var=args.csi_error_var)
    _finish_rows(run_robustness_csi(spec), args, f"{spec.M}x{spec.N} {args.mod}, CSI error {args.csi_error_var:g}")


def cmd_complexity(args):
    M, N = args.mimo
    Q = parse_modulation(args.mod)
    rep = count_ops(M, N, Q, args.layers, args.gnn_rounds)
    growth = growth_exponents(M, N, Q, args.layers, args.gnn_rounds)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("part", "term", "count", "growth", "log2_ratio_when_N_doubles"))
    for row in rep.rows():
        g = growth.get(f"{row['part']}:{row['term']}")
        writer.writerow((row["part"], row["term"], row["count"], row["growth"], "" if g is None else f"{g:.3f}"))
    for name, total in (("amp", rep.amp_total), ("ampgnn", rep.ampgnn_total), ("lmmse+gnn", rep.lmmse_gnn_total)):
        writer.writerow(("total", name, total, "", ""))
    _emit(buf.getvalue(), args.out)
    if args.plot:
        from .plotting import plot_complexity

        plot_complexity(M, Q, args.layers, args.gnn_rounds, args.plot)


def cmd_oracle_check(args):
    """Total-variation distance between detector marginals and the exact posterior."""
    M, N = args.mimo
    const = make_constellation(parse_modulation(args.mod))
    det = None
    if args.checkpoint:
        ckpt = _load(args.checkpoint)
        det = AmpGnnConfig(const, ckpt.params, args.layers, args.gnn_rounds)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("detector", "M", "N", "Q", "snr_db", "trials", "mean_tv", "max_tv", "map_agreement", "seed"))
    for p, snr in enumerate(args.snr):
        rng = np.random.default_rng([args.seed, p])
        batch, _ = draw_batch(args.trials, M, N, const, snr, rng)
        exact, map_labels, _ = oracle_marginals_batch(batch.H, batch.y, batch.sigma2, const)
        _, _, states = amp_detect_batch(batch.H, batch.y, batch.sigma2, const, args.layers, trajectory=True)
        soft = {"amp": posterior_pmf(states[-1].r, states[-1].Sigma, const)}
        if det is not None:
            soft["ampgnn"] = forward_batch(batch.H, batch.y, batch.sigma2, det).pmf
        for name, pmf in soft.items():
            tv = 0.5 * np.abs(pmf - exact).sum(axis=-1)
            agree = np.mean(pmf.argmax(axis=-1) == map_labels)
            writer.writerow((name, M, N, const.order, f"{snr:g}", args.trials, f"{tv.mean():.6e}",
                             f"{tv.max():.6e}", f"{agree:.6f}", args.seed))
    _emit(buf.getvalue(), args.out)


COMMANDS = {
    "train": cmd_train,
    "sweep": cmd_sweep,
    "robust-users": cmd_robust_users,
    "robust-csi": cmd_robust_csi,
    "complexity": cmd_complexity,
    "oracle-check": cmd_oracle_check,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"ampgnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"ampgnn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, CheckpointError, ValueError) as exc:
        print(f"ampgnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ImportError as exc:
        print(f"ampgnn: error: {exc}; install the 'plot' extra for --plot", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
