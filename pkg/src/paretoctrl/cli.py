"""Command-line front end: list builtin systems, run the controller
synthesis pipelines, evaluate stored policies, and check sum-of-squares
membership of a polynomial.

Exit codes: 0 success, 2 infeasible, 3 configuration error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import importlib
import json
import os
import sys as _sys

import numpy as np

from . import bench, datadriven, mosos, simkit, sosprog
from .bench import ConfigError

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_CONFIG = 3
EXIT_NUMERICAL = 4

SOLVER_ENV = "PARETOCTRL_SOLVER"


def solver_from_env() -> sosprog.ConicSolver | None:
    """Instantiate an external solver backend from ``PARETOCTRL_SOLVER``.

    The value has the form ``package.module:ClassName``; the class must be a
    ConicSolver with a no-argument constructor.  Returns None (use the
    default backend) when the variable is unset.
    """
    spec = os.environ.get(SOLVER_ENV)
    if not spec:
        return None
    try:
        mod_name, _, cls_name = spec.partition(":")
        if not cls_name:
            raise ValueError("expected 'module:ClassName'")
        mod = importlib.import_module(mod_name)
        cls = getattr(mod, cls_name)
        solver = cls()
    except Exception as exc:
        raise ConfigError(f"cannot load solver from {SOLVER_ENV}={spec!r}: {exc}")
    if not isinstance(solver, sosprog.ConicSolver):
        raise ConfigError(f"{spec!r} is not a ConicSolver backend")
    return solver


def _load_config(path_or_name: str) -> bench.SystemConfig:
    """A config argument is either a builtin system name or a JSON file."""
    if os.path.exists(path_or_name):
        with open(path_or_name) as fh:
            return bench.SystemConfig.from_json(fh.read())
    try:
        return bench.builtin_by_name(path_or_name)
    except ConfigError:
        raise ConfigError(
            f"{path_or_name!r} is neither a builtin system name nor a config file"
        )


def _cmd_systems(args) -> int:
    if args.action != "list":
        raise ConfigError(f"unknown systems action {args.action!r}")
    for config in bench.builtin_systems():
        print(f"{config.name}: n={config.n}, m={config.m}, d={config.d}, "
              f"rounds={config.rounds}")
    print("pendulum-cart-reduced: n=2, m=1 (two-state slice, used by --reduced)")
    return EXIT_OK


def _cmd_run(args) -> int:
    config = _load_config(args.config)
    if args.reduced:
        if not config.name.startswith("pendulum-cart"):
            raise ConfigError("--reduced only applies to the pendulum-cart system")
        config = bench.reduced_pendulum_config()
    algo = {"model": "model", "data": "data"}[args.algo]
    report = bench.run(config, algo, args.out, solver=solver_from_env())
    print(f"{config.name} [{algo}]: {len(report.pareto.records)} Pareto points "
          f"in {report.elapsed:.1f}s -> {args.out}")
    for rec in report.pareto.records:
        print(f"  round {rec.round_index}: J1={rec.J1:.6g} J2={rec.J2:.6g} "
              f"({len(rec.iterations)} iterations)")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    config = _load_config(args.config)
    with open(args.policy) as fh:
        policy = bench.policy_from_json(fh.read())
    pulse = tuple(args.pulse) if args.pulse else None
    result = bench.evaluate(
        policy, config, args.out, pulse=pulse, solver=solver_from_env()
    )
    if result["diverged"]:
        print("trajectory diverged")
        return EXIT_NUMERICAL
    print(f"J1={result['J1']:.6g} J2={result['J2']:.6g} "
          f"final |x|={result['final_norm']:.3g}")
    print(f"trajectory: {result['trajectory']}")
    return EXIT_OK


def _cmd_check_sos(args) -> int:
    with open(args.poly) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"polynomial file is not valid JSON: {exc}")
    try:
        n = int(data["n"])
        poly = bench.poly_from_records(data["poly"], n)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid polynomial file: {exc}")
    sol = sosprog.check_sos(poly, solver=solver_from_env())
    if sol.status == "optimal":
        print("sum of squares: yes")
        return EXIT_OK
    if sol.status == "infeasible":
        print("sum of squares: no")
        return EXIT_INFEASIBLE
    print(f"solver failed: {sol.status} {sol.info.get('error', '')}")
    return EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="paretoctrl",
        description="Pareto-efficient polynomial controller synthesis",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("systems", help="inspect builtin benchmark systems")
    sp.add_argument("action", choices=["list"])
    sp.set_defaults(fn=_cmd_systems)

    rp = sub.add_parser("run", help="run a synthesis pipeline")
    rp.add_argument("--config", required=True,
                    help="builtin system name or config JSON file")
    rp.add_argument("--algo", required=True, choices=["model", "data"],
                    help="model-based or data-driven pipeline")
    rp.add_argument("--out", required=True, help="output directory")
    rp.add_argument("--reduced", action="store_true",
                    help="substitute the two-state pendulum slice")
    rp.set_defaults(fn=_cmd_run)

    ep = sub.add_parser("evaluate", help="simulate a stored policy")
    ep.add_argument("--policy", required=True, help="policy JSON dump")
    ep.add_argument("--config", required=True,
                    help="builtin system name or config JSON file")
    ep.add_argument("--pulse", nargs=2, type=float, metavar=("MAG", "DUR"),
                    help="rectangular input pulse magnitude and duration")
    ep.add_argument("--out", default=".", help="output directory")
    ep.set_defaults(fn=_cmd_evaluate)

    cp = sub.add_parser("check-sos", help="test a polynomial for SOS membership")
    cp.add_argument("--poly", required=True,
                    help='JSON file {"n": ..., "poly": [{"exponents": [...], "coeff": ...}]}')
    cp.set_defaults(fn=_cmd_check_sos)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG
    except (mosos.SdpInfeasibleError, mosos.SeedingError,
            mosos.EmptyParetoSetError) as exc:
        print(f"infeasible: {exc}", file=_sys.stderr)
        return EXIT_INFEASIBLE
    except (mosos.NumericalFailureError, mosos.MaxItersExceededError,
            datadriven.DataDrivenError, simkit.SimulationError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=_sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())
