"""Command-line entry point.

Subcommands: run, figure, sweep, oracle-check, optimal-tau1.  Output goes
under --out, else $QFEEDBACK_OUTPUT_ROOT, else ./qfeedback_runs.  Errors
print a machine-readable JSON report on stderr and exit nonzero.
"""

import argparse
import json
import sys
from pathlib import Path

from . import config as config_mod
from . import oracle, runner, scenarios


def _add_common(p, trajectories=False):
    p.add_argument("--out", default=None, help="output root directory")
    p.add_argument("--seed", type=int, default=None,
                   help="override the configured seed")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for sweeps and trajectory blocks")
    if trajectories:
        p.add_argument("--trajectories", type=int, default=None,
                       help="override the trajectory count")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="qfeedback",
        description="Deterministic feedback-control simulations of small "
                    "open quantum systems, with stochastic cross-checks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one configured scenario")
    p_run.add_argument("config", help="TOML configuration file")
    _add_common(p_run, trajectories=True)

    p_fig = sub.add_parser("figure", help="emit one figure's data table")
    p_fig.add_argument("id", help=f"one of {', '.join(runner.FIGURE_IDS)}")
    _add_common(p_fig)

    p_sweep = sub.add_parser("sweep", help="one-parameter scenario sweep")
    p_sweep.add_argument("config", help="TOML configuration with [sweep]")
    _add_common(p_sweep)

    p_orc = sub.add_parser("oracle-check",
                           help="stochastic-trajectory validation run")
    p_orc.add_argument("scenario",
                       help=f"one of {', '.join(runner.ORACLE_SCENARIOS)}")
    _add_common(p_orc, trajectories=True)
    p_orc.add_argument("--jsonl", action="store_true",
                       help="also dump a 100-trajectory JSON-lines sample")

    p_opt = sub.add_parser("optimal-tau1",
                           help="closed-form optimal drive-window length")
    p_opt.add_argument("--p", type=float, required=True,
                       help="damping-to-drive ratio gamma/lambda, in [0, 4)")
    p_opt.add_argument("--lam", type=float, default=1.0,
                       help="drive amplitude (default 1)")
    return parser


def _load_config(path, seed, trajectories):
    cfg = config_mod.load(path)
    if seed is not None or trajectories is not None:
        raw = config_mod.override(cfg.raw, seed=seed,
                                  trajectories=trajectories)
        cfg = config_mod.resolve(raw)
    return cfg


def _cmd_run(args):
    cfg = _load_config(args.config, args.seed, args.trajectories)
    artifacts = runner.run_config(cfg, out=args.out)
    print(json.dumps({"status": "ok",
                      "artifacts": {k: str(v) for k, v in
                                    artifacts.items()}}))
    return 0


def _cmd_figure(args):
    seed = 0 if args.seed is None else args.seed
    artifacts = runner.figure_table(args.id, out=args.out, seed=seed)
    print(json.dumps({"status": "ok",
                      "artifacts": {k: str(v) for k, v in
                                    artifacts.items()}}))
    return 0


def _cmd_sweep(args):
    cfg = _load_config(args.config, args.seed, None)
    artifacts = runner.sweep_config(cfg, out=args.out, threads=args.threads)
    print(json.dumps({"status": "ok",
                      "artifacts": {k: str(v) for k, v in
                                    artifacts.items()}}))
    return 0


def _cmd_oracle(args):
    seed = 0 if args.seed is None else args.seed
    n = 20000 if args.trajectories is None else args.trajectories
    report = runner.oracle_check(args.scenario, n_traj=n, seed=seed,
                                 threads=args.threads, out=args.out)
    if args.jsonl:
        paths = report.get("paths", {})
        if "report" in paths:
            path = Path(paths["report"]).parent
        else:
            path = runner.output_root(args.out)
            path.mkdir(parents=True, exist_ok=True)
        sample = runner.oracle_sample_trajectories(args.scenario, 100, seed)
        dump = path / f"oracle-{args.scenario}-sample.jsonl"
        oracle.write_jsonl(sample, dump)
        report["sample_jsonl"] = str(dump)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0 if report["passed"] else 4


def _cmd_optimal_tau1(args):
    value = scenarios.optimal_drive_time(args.p, args.lam)
    print(json.dumps({"p": args.p, "lam": args.lam, "tau1_opt": value}))
    return 0


_HANDLERS = {
    "run": _cmd_run,
    "figure": _cmd_figure,
    "sweep": _cmd_sweep,
    "oracle-check": _cmd_oracle,
    "optimal-tau1": _cmd_optimal_tau1,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (config_mod.ConfigError, FileNotFoundError, ValueError) as exc:
        json.dump({"status": "error", "type": type(exc).__name__,
                   "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    except Exception as exc:  # pragma: no cover
        json.dump({"status": "error", "type": type(exc).__name__,
                   "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
