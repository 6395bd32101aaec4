"""Command line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 an acceptance
check inside the experiment failed, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import warnings

from . import __version__
from .analytic import MedianUnreachableError, QuadratureError, SilentLinkError
from .harness import (DEFAULT_D12, DEFAULT_DEP_LAMBDAS, DEFAULT_LAMBDAS, DEFAULT_SWEEP_LAMBDAS,
                      DEFAULT_TAUS, Experiment, ExperimentSpec, Sweep, run)
from .scenario import (ConfigError, PowerAllocation, default_config_path, load_config,
                       parse_power)

EXIT_OK, EXIT_USAGE, EXIT_CHECK, EXIT_NUMERIC = 0, 1, 2, 3

COMMANDS = {
    "validate-fh": Experiment.VALIDATE_FH,
    "beta-sweep": Experiment.BETA_SWEEP,
    "depcontrol-sweep": Experiment.DEPCONTROL_SWEEP,
    "eval": Experiment.SINGLE_EVAL,
}
DEFAULT_TRIALS = {
    Experiment.VALIDATE_FH: 100_000,
    Experiment.BETA_SWEEP: 20_000,
    Experiment.DEPCONTROL_SWEEP: 20_000,
    Experiment.SINGLE_EVAL: 20_000,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which collides with the check-failure code
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(values) -> tuple[float, ...]:
    out = []
    for v in values or ():
        for part in str(v).split(","):
            if part.strip():
                try:
                    out.append(float(part))
                except ValueError:
                    raise UsageError(f"not a number: {part!r}") from None
    return tuple(out)


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario TOML (default: bundled two-link highway scenario)")
    common.add_argument("--seed", type=_u64, default=0)
    common.add_argument("--trials", type=int, help="Monte Carlo trials per point")
    common.add_argument("--mode", choices=("sir", "sinr"), default="sir")
    common.add_argument("--output", help="CSV output path")
    common.add_argument("--json", help="optional JSON mirror of the output")
    common.add_argument("--workers", type=int, default=1, help="threads for sweep points")
    common.add_argument("--lambda", dest="lambdas", nargs="+", metavar="L",
                        help="interferer densities per metre (space or comma separated)")

    parser = _Parser(prog="v2vdep", description="V2V delay dependence experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("validate-fh", parents=[common],
                   help="analytic F and H against Monte Carlo on a delay grid")
    p = sub.add_parser("beta-sweep", parents=[common], help="beta and reliability versus d12")
    p.add_argument("--d12", nargs="+", metavar="D", help="d12 values in metres")
    p = sub.add_parser("depcontrol-sweep", parents=[common],
                       help="optimised versus random powers over densities")
    p.add_argument("--tau", nargs="+", metavar="MS", help="delay targets in milliseconds")
    p.add_argument("--baseline-draws", type=int, default=100)
    p.add_argument("--eta", type=float, default=1e-3, help="ellipsoid stopping width")
    p = sub.add_parser("eval", parents=[common], help="one allocation, analytic and empirical")
    p.add_argument("--powers", nargs="+", metavar="P",
                   help="transmit powers, e.g. '27 dBm' '0.2 W' (default: config or full power)")
    return parser


def spec_from_args(args) -> ExperimentSpec:
    experiment = COMMANDS[args.command]
    config = load_config(args.config or default_config_path())
    lambdas = _floats(args.lambdas)
    kw = {}
    if experiment is Experiment.VALIDATE_FH:
        kw["sweep"] = Sweep("density", lambdas or DEFAULT_LAMBDAS)
    elif experiment is Experiment.BETA_SWEEP:
        kw["sweep"] = Sweep("d12", _floats(args.d12) or DEFAULT_D12)
        kw["lambdas"] = lambdas or DEFAULT_SWEEP_LAMBDAS
    elif experiment is Experiment.DEPCONTROL_SWEEP:
        kw["sweep"] = Sweep("density", lambdas or DEFAULT_DEP_LAMBDAS)
        taus = _floats(args.tau)
        kw["taus"] = tuple(t * 1e-3 for t in taus) if taus else DEFAULT_TAUS
        kw["baseline_draws"] = args.baseline_draws
        kw["eta"] = args.eta
    else:
        if len(lambdas) > 1:
            raise UsageError("eval takes a single --lambda")
        if lambdas:
            config = config.with_density(lambdas[0])
        if args.powers:
            powers = [parse_power(p, "--powers") for p in args.powers]
            if len(powers) == 1:
                powers = powers * config.M
            try:
                kw["allocation"] = PowerAllocation(tuple(powers), config.p_max_watts)
            except ValueError as exc:
                raise UsageError(str(exc)) from None
    try:
        return ExperimentSpec(experiment=experiment, scenario=config,
                              trials=args.trials or DEFAULT_TRIALS[experiment],
                              seed=args.seed, mode=args.mode, output_path=args.output,
                              workers=args.workers, **kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        spec = spec_from_args(args)
    except ConfigError as exc:
        print(f"v2vdep: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, OSError) as exc:
        print(f"v2vdep: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            table = run(spec)
    except (QuadratureError, MedianUnreachableError, SilentLinkError, FloatingPointError) as exc:
        print(f"v2vdep: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    if args.json:
        table.write_json(args.json)
    for key, value in table.summary.items():
        print(f"{key}: {value}")
    for c in table.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name} {c.detail}".rstrip())
    if spec.output_path:
        print(f"wrote {spec.output_path}")
    elif not args.json:
        # no file requested: the table goes to stdout
        table.write_csv(sys.stdout)
    return EXIT_OK if table.passed else EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
