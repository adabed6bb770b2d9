"""Command line entry point.

    pointer-collapse figure2 --config run.json --out results --workers 4

Exit status: 0 when every check passes, 1 when a check fails, 2 on usage
or configuration errors.
"""
from __future__ import annotations

import argparse
import sys

from . import experiments, verify
from .config import load_config
from .errors import CollapseError, ConfigurationError
from .output import emit, load_manifest

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _u64(s: str) -> int:
    try:
        v = int(s, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {s!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(s: str) -> int:
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {s!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (strict schema, see README)")
    common.add_argument("--manifest", help="rerun from a JSON result file instead of --config")
    common.add_argument("--seed", type=_u64)
    common.add_argument("--paths", type=_positive)
    common.add_argument("--out", help="output directory")
    common.add_argument("--integrator", choices=("linear", "nonlinear"))
    common.add_argument("--foliation", choices=("time", "random"))
    common.add_argument("--workers", type=_positive, default=1)
    common.add_argument("--quiet", action="store_true", help="only print the final status line")

    p = argparse.ArgumentParser(prog="pointer-collapse", description="Relativistic pointer-field collapse simulations.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("figure2", parents=[common], help="mean Var-integral decay with an example path")
    sub.add_parser("born", parents=[common], help="outcome frequencies and estimator comparison")
    v = sub.add_parser("verify", parents=[common], help="run the invariant suites")
    v.add_argument("--noise-variance-scale", type=float, default=1.0,
                   help="scale the noise variance (negative control: 2 must fail the Q-martingale check)")
    v.add_argument("--mutation", choices=("drift", "diffusion", "measure"),
                   help="drop one dynamics term to confirm the suite notices")
    v.add_argument("--skip-oracle", action="store_true")
    sub.add_parser("beable", parents=[common], help="noise-field region integrals after collapse")
    sub.add_parser("oracle", parents=[common], help="truncated-Fock operator and energy reports")
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        if args.manifest and args.config:
            raise ConfigurationError("give either --config or --manifest, not both")
        if args.manifest:
            command, cfg = load_manifest(args.manifest)
            if command != args.command:
                raise ConfigurationError(f"manifest was written by {command!r}, not {args.command!r}")
        else:
            cfg = load_config(args.config)
        if not cfg.experiment.branches and args.command != "oracle":
            raise ConfigurationError("config has no experiment.branches block")
        cfg = cfg.with_overrides(seed=args.seed, paths=args.paths, integrator=args.integrator,
                                 foliation=args.foliation, out=args.out)
        if args.command == "figure2":
            res = experiments.figure2(cfg, args.workers)
        elif args.command == "born":
            res = experiments.born(cfg, args.workers)
        elif args.command == "beable":
            res = experiments.beable(cfg, args.workers)
        elif args.command == "oracle":
            res = verify.oracle(cfg)
        else:
            res = verify.verify(cfg, args.workers, args.noise_variance_scale, args.mutation,
                                include_oracle=not args.skip_oracle)
        files = emit(res)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CollapseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    if not args.quiet:
        for f in files:
            print(f"wrote {f}")
        for c in res.checks:
            print(c.line())
    n_fail = sum(not c.passed for c in res.checks)
    print(f"{res.command}: {'PASS' if n_fail == 0 else 'FAIL'} ({len(res.checks) - n_fail}/{len(res.checks)} checks, "
          f"{res.runtime:.1f} s)")
    return EXIT_OK if n_fail == 0 else EXIT_FAIL


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
