"""``samglm`` command-line entry point.

Exit codes: 0 success, 1 invalid input or configuration, 2 sampling or
runtime failure.
"""
from __future__ import annotations

import argparse
import sys

from . import workflow
from .config import EvaluateSection, load_run_config, load_simulation_config
from .errors import SamGlmError, SingularKernelError

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
RUNTIME_ERRORS = (RuntimeError, ArithmeticError, SingularKernelError)


def _simulate(args):
    sim = load_simulation_config(args.config)
    data = workflow.simulate(sim, args.out)
    print(f"wrote {data.n_cells} cells ({sim.model}) to {args.out}")


def _rate(r):
    return "n/a" if r is None else f"{r:.3f}"


def _fit(args):
    cfg = load_run_config(args.config)
    report = workflow.fit(cfg, args.data, args.out, resume=args.resume, stop_after=args.stop_after)
    for c in report["chains"]:
        acc = ", ".join(f"{k} accept={_rate(v['acceptance_rate'])} div={v['divergences']}"
                        for k, v in c["hmc"].items())
        state = "complete" if c["complete"] else f"stopped at {c['iterations_done']}"
        print(f"chain {c['chain']}: {state}, {c['retained']} samples; {acc}")


def _predict(args):
    mean, _ = workflow.predict(args.trace, args.data, args.out)
    print(f"predicted {mean.size} cells, total intensity {mean.sum():.6g}")


def _evaluate(args):
    ev = EvaluateSection()
    if args.config:
        ev = load_run_config(args.config).evaluate
    metrics = args.metrics.split(",") if args.metrics else ev.metrics
    n_flagged = [int(v) for v in args.n_flagged.split(",")] if args.n_flagged else ev.n_flagged
    summary = workflow.evaluate(args.trace, args.train, args.test, args.out, metrics,
                                n_flagged, args.seed)
    for name, m in summary["metrics"].items():
        print(f"{name}: mean={m['mean']:.6g} sd={m['sd']:.6g} (n={m['n_samples']})")


def _diagnose(args):
    for d in workflow.diagnose(args.trace, args.out, args.max_lag):
        acf1 = d["loglik_autocorrelation"][1] if len(d["loglik_autocorrelation"]) > 1 else None
        ess = d["ess"].get("loglik")
        print(f"chain {d['chain']}: {d['n_samples']} samples, loglik ESS="
              f"{'degenerate' if ess is None else f'{ess:.1f}'}, lag-1 acf="
              f"{'n/a' if acf1 is None else f'{acf1:.3f}'}")
        if d["degenerate"]:
            print(f"  warning: constant trace for {', '.join(d['degenerate'])}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="samglm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw a synthetic dataset")
    s.add_argument("config", help="TOML file with a [simulate] section")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=_simulate)

    s = sub.add_parser("fit", help="run MCMC chains")
    s.add_argument("config", help="run configuration (TOML)")
    s.add_argument("--data", required=True, help="dataset directory")
    s.add_argument("--out", help="output directory (default: run.output_dir)")
    s.add_argument("--resume", action="store_true", help="continue from saved checkpoints")
    s.add_argument("--stop-after", type=int, help="stop after this many iterations")
    s.set_defaults(func=_fit)

    s = sub.add_parser("predict", help="posterior-mean intensity per cell")
    s.add_argument("trace", nargs="+")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_predict)

    s = sub.add_parser("evaluate", help="held-out metrics, hotspots and CovEffect")
    s.add_argument("trace", nargs="+")
    s.add_argument("--train", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="run configuration with an [evaluate] section")
    s.add_argument("--metrics", help="comma-separated subset of loglik,rmse,hotspots,cov_effect")
    s.add_argument("--n-flagged", help="comma-separated hotspot sizes")
    s.add_argument("--seed", type=int, default=0, help="seed for RMSE replicates")
    s.set_defaults(func=_evaluate)

    s = sub.add_parser("diagnose", help="trace diagnostics")
    s.add_argument("trace", nargs="+")
    s.add_argument("--out", required=True)
    s.add_argument("--max-lag", type=int, default=20)
    s.set_defaults(func=_diagnose)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (SamGlmError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
