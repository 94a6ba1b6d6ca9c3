"""Command-line entry points: train, eval, oracle, plotdata, validate-config.

Every run writes CSV artifacts plus rendered PNG figures into the output
directory (--out, else $COOPSIM_OUTDIR/<command>, else ./coopsim_out/<command>).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .channel import AllocationError
from .config import ExperimentConfig, load_config
from .oracle import OracleGuardError
from .rlcore import OutputWidthError, ShapeError
from .world import ConfigError

EXIT_CODES = {
    ConfigError: 2,
    ShapeError: 3,
    OutputWidthError: 4,
    OracleGuardError: 4,
    AllocationError: 5,
}


def _out_dir(args, command: str) -> str:
    if args.out:
        return args.out
    base = os.environ.get("COOPSIM_OUTDIR", "coopsim_out")
    return os.path.join(base, command)


def _load(args) -> ExperimentConfig:
    if args.config:
        return load_config(args.config)
    cfg = ExperimentConfig()
    cfg.validate()
    return cfg


def cmd_train(args) -> int:
    from .harness import export_plotdata, run_training
    from .plotting import plot_learning_curve
    cfg = _load(args)
    out = _out_dir(args, "train")
    run_training(cfg, out)
    metrics = os.path.join(out, "metrics.csv")
    plotdata = os.path.join(out, "plotdata.csv")
    window = max(min(args.window, cfg.episodes), 1)
    export_plotdata(metrics, plotdata, window=window)
    png = plot_learning_curve(plotdata, os.path.join(out, "learning_curve.png"))
    print(f"training complete: {out}")
    print(f"figure: {png}")
    return 0


def _eval_common(args, mode: str) -> int:
    from .harness import run_eval
    from .plotting import plot_ccdf
    cfg = _load(args)
    out = _out_dir(args, mode if mode != "trained" else "eval")
    summary = run_eval(cfg, out, mode, checkpoint_dir=args.checkpoints,
                       slots=args.slots, seed=args.seed,
                       envelope=args.envelope)
    series = {mode: os.path.join(out, "ccdf.csv")}
    if args.envelope:
        series["oracle envelope"] = os.path.join(out, "ccdf_oracle.csv")
    png = plot_ccdf(series, os.path.join(out, "ccdf.png"))
    print(f"mean reward ({mode}): {summary['mean_reward']:.6g} "
          f"over {summary['reward_samples']} samples")
    if "mean_oracle_reward" in summary:
        print(f"mean oracle envelope: {summary['mean_oracle_reward']:.6g}")
    print(f"figure: {png}")
    return 0


def cmd_eval(args) -> int:
    return _eval_common(args, args.mode)


def cmd_oracle(args) -> int:
    args.envelope = False
    args.checkpoints = None
    return _eval_common(args, "oracle")


def cmd_plotdata(args) -> int:
    from .harness import export_plotdata
    from .plotting import plot_learning_curve
    out_csv = args.out or os.path.splitext(args.metrics)[0] + "_plotdata.csv"
    export_plotdata(args.metrics, out_csv, window=args.window)
    png = plot_learning_curve(out_csv, os.path.splitext(out_csv)[0] + ".png")
    print(f"plot data: {out_csv}")
    print(f"figure: {png}")
    return 0


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(f"config ok: {args.config} "
          f"(n={cfg.n_vehicles}, K={cfg.n_rb}, L={cfg.levels})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coopsim",
                                description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="train RSU + vehicle agents")
    tr.add_argument("--config", help="flat JSON experiment config")
    tr.add_argument("--out")
    tr.add_argument("--window", type=int, default=1000,
                    help="smoothing window (episodes) for the report curve")
    tr.set_defaults(fn=cmd_train)

    ev = sub.add_parser("eval", help="roll a policy on a fresh 20000-slot trace")
    ev.add_argument("--config")
    ev.add_argument("--mode", choices=["trained", "random", "oracle"],
                    default="trained")
    ev.add_argument("--checkpoints", help="directory with *.ckpt files")
    ev.add_argument("--slots", type=int, default=20_000)
    ev.add_argument("--seed", type=int, default=1)
    ev.add_argument("--envelope", action="store_true",
                    help="also record the per-slot oracle upper envelope")
    ev.add_argument("--out")
    ev.set_defaults(fn=cmd_eval)

    orc = sub.add_parser("oracle", help="oracle rollout (fading must be off)")
    orc.add_argument("--config")
    orc.add_argument("--slots", type=int, default=20_000)
    orc.add_argument("--seed", type=int, default=1)
    orc.add_argument("--out")
    orc.set_defaults(fn=cmd_oracle)

    pd = sub.add_parser("plotdata", help="smooth a metrics.csv into curve data")
    pd.add_argument("--metrics", required=True)
    pd.add_argument("--window", type=int, default=1000)
    pd.add_argument("--out")
    pd.set_defaults(fn=cmd_plotdata)

    vc = sub.add_parser("validate-config", help="check a config file")
    vc.add_argument("--config", required=True)
    vc.set_defaults(fn=cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        for klass, code in EXIT_CODES.items():
            if isinstance(exc, klass):
                return code
        return 1


if __name__ == "__main__":
    sys.exit(main())
