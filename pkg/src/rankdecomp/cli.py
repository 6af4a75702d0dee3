"""``rankdecomp`` command line.

Exit status: 0 success, 1 acceptance failure or round-trip mismatch,
2 bad config, bad input files or I/O failure.
"""

from __future__ import annotations

import argparse
import sys
import tempfile
from pathlib import Path

import numpy as np

from .harness import ConfigError, ExperimentConfig, run
from .localtime import (
    PreconditionError,
    crossing_local_time,
    indicator_local_time,
    occupation_local_time,
    tanaka_local_time,
)
from .persistence import ParseError, read_ensemble, write_ensemble, write_local_time, write_ranked
from .rank import EpsilonPolicy, occupancy, rank_ensemble
from .simulate import SeedPolicy, SpecError, simulate


def _policy(text):
    try:
        return EpsilonPolicy.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    overrides = {}
    if getattr(args, "n_steps", None) is not None:
        overrides["n_steps"] = args.n_steps
        overrides["sweep"] = None
    if getattr(args, "levels", None):
        overrides["sweep"] = tuple(args.levels)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.policy is not None:
        overrides["policy"] = args.policy
    if args.out is not None:
        overrides["out"] = args.out
    if getattr(args, "save_paths", False):
        overrides["save_paths"] = True
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    if not overrides:
        return cfg
    d = {**cfg.__dict__, **overrides}
    return ExperimentConfig(**d)


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    from .grid_paths import TimeGrid

    grid = TimeGrid(cfg.T, cfg.n_steps)
    e = simulate(cfg.spec_for(grid), grid, cfg.n_paths, SeedPolicy(cfg.seed), replications=[args.replication])
    stem = Path(cfg.out) / "ensemble"
    write_ensemble(e.replication(0), stem)
    print(stem)
    return 0


def cmd_rank(args) -> int:
    e = read_ensemble(args.ensemble)
    ranked = rank_ensemble(e)
    occ = occupancy(e, args.policy or EpsilonPolicy())
    stem = Path(args.out or ".") / "ranked"
    write_ranked(ranked, occ, stem)
    print(stem)
    return 0


def cmd_localtime(args) -> int:
    e = read_ensemble(args.ensemble)
    policy = args.policy or EpsilonPolicy()
    out = Path(args.out or ".")
    for label, path in zip(e.labels, e.paths):
        if args.estimator == "tanaka":
            lt = tanaka_local_time(path, policy)
        elif args.estimator == "indicator":
            lt = indicator_local_time(path, policy)
        elif args.estimator == "occupation":
            lt = occupation_local_time(path, args.eps or float(np.sqrt(e.grid.dt)))
        else:
            lt = crossing_local_time(path, args.h)
        target = write_local_time(lt, out / f"localtime_{label}.csv", label)
        print(f"{target}\tL_T={float(lt.L[-1])!r}\tscriptL_T={float(lt.scriptL[-1])!r}")
    return 0


def _report_run(outcome) -> int:
    for r in outcome.rows:
        print(f"{r['identity']:<18} dt={r['dt']:.3e} mean_sup={r['mean_sup_residual']:.4e} "
              f"se={r['std_err']:.2e} rel={r['rel_residual']:.4e}")
    for ident, slope in outcome.rates.items():
        print(f"rate {ident:<18} {slope:.3f}")
    for ident, checks in outcome.acceptance.items():
        for name, ok in checks.items():
            print(f"{'PASS' if ok else 'FAIL'} {ident} {name}")
    print(outcome.out / "summary.csv")
    return outcome.exit_code


def cmd_verify(args) -> int:
    cfg = _load_config(args)
    return _report_run(run(cfg, args.workers, from_paths=args.from_paths))


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    if not cfg.sweep or len(cfg.sweep) < 3:
        raise ConfigError("sweep needs at least 3 n_steps levels (config 'sweep' or --levels)")
    return _report_run(run(cfg, args.workers))


def cmd_roundtrip(args) -> int:
    e = read_ensemble(args.ensemble)
    with tempfile.TemporaryDirectory() as tmp:
        stem = Path(tmp) / "copy"
        write_ensemble(e, stem)
        back = read_ensemble(stem)
    same = (
        np.array_equal(e.values, back.values)
        and np.array_equal(e.jumps, back.jumps)
        and list(e.labels) == list(back.labels)
        and e.meta == back.meta
        and e.grid == back.grid
    )
    print("identical" if same else "MISMATCH")
    return 0 if same else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rankdecomp", description="Grid checks for rank and local-time identities.")
    sub = p.add_subparsers(dest="command", required=True)

    def config_flags(sp, n_steps=True):
        sp.add_argument("--config", required=True, help="JSON experiment config")
        if n_steps:
            sp.add_argument("--n-steps", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--policy", type=_policy, help="exact | band:<c>")
        sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("simulate", help="simulate one ensemble and write it")
    config_flags(sp)
    sp.add_argument("--replication", type=int, default=0)
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("rank", help="rank a saved ensemble; writes ranked paths and occupancy")
    sp.add_argument("--ensemble", required=True, help="ensemble stem (without .csv)")
    sp.add_argument("--policy", type=_policy)
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_rank)

    sp = sub.add_parser("localtime", help="local time at 0 of every path of a saved ensemble")
    sp.add_argument("--ensemble", required=True)
    sp.add_argument("--estimator", choices=("tanaka", "indicator", "occupation", "crossing"), default="tanaka")
    sp.add_argument("--policy", type=_policy)
    sp.add_argument("--eps", type=float, help="occupation window (default sqrt(dt))")
    sp.add_argument("--h", type=float, help="lattice step for the crossing estimator")
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_localtime)

    sp = sub.add_parser("verify", help="Monte Carlo identity checks at n_steps, or at every sweep level in the config")
    config_flags(sp)
    sp.add_argument("--save-paths", action="store_true")
    sp.add_argument("--workers", type=int)
    sp.add_argument("--from-paths", help="recompute from ensembles saved with --save-paths")
    sp.set_defaults(fn=cmd_verify)

    sp = sub.add_parser("sweep", help="identity checks over a dt refinement")
    config_flags(sp, n_steps=False)
    sp.add_argument("--levels", type=int, nargs="+", help="n_steps values, strictly increasing")
    sp.add_argument("--save-paths", action="store_true")
    sp.add_argument("--workers", type=int)
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("roundtrip-check", help="write and re-read a saved ensemble; compare bitwise")
    sp.add_argument("--ensemble", required=True)
    sp.set_defaults(fn=cmd_roundtrip)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ParseError, PreconditionError, SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
