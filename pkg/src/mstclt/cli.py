"""Command-line entry point: ``mstclt {clt,arm-decay,var-scaling,stein-bound} --config PATH``."""
from __future__ import annotations

import argparse
import json
import sys

from .errors import DegenerateFunctionalError, InvalidParameterError, InvariantViolation
from .lab import COMMAND_KINDS, load_config, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_DEGENERATE, EXIT_INVARIANT = 0, 1, 2, 3

LONG_SCHEMA = ("CSV columns: n,statistic,value,stderr,ci_lo,ci_hi,replicates "
               "(10 significant digits, one row per size and statistic).")
SCHEMAS = {
    "clt": LONG_SCHEMA + " Statistics: mean, variance, kolmogorov, wasserstein (bootstrap stderr and "
                         "percentile CI for the distances).",
    "arm-decay": "CSV columns: n,param,replicates,successes,phat,ci_lo,ci_hi (10 decimals, Wilson 95% CI). "
                 "The JSON summary adds the fitted decay exponent per param.",
    "var-scaling": LONG_SCHEMA + " Statistics: variance, normalized_variance (divided by |V_n|).",
    "stein-bound": LONG_SCHEMA + " Statistics: t_mean, t_var, sigma2_hat, third_moment, bound_value, "
                                 "kolmogorov, wasserstein.",
}


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH", help="JSON experiment config")
    common.add_argument("--seed", type=_u64, default=None, help="master seed, overrides the config")
    common.add_argument("--out", default=None, metavar="DIR", help="output directory (default: config 'out' or .)")
    common.add_argument("--threads", type=_positive, default=1, help="worker threads; never changes results")
    common.add_argument("--allow-large", action="store_true", help="lift the desk-scale size limits")
    parser = argparse.ArgumentParser(prog="mstclt", description="Monte Carlo experiments for random MST weights.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, schema in SCHEMAS.items():
        sub.add_parser(name, parents=[common], help=f"run a {'/'.join(COMMAND_KINDS[name])} experiment",
                       description=schema)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed, allow_large=args.allow_large)
        if cfg.kind not in COMMAND_KINDS[args.command]:
            raise InvalidParameterError(f"config kind {cfg.kind!r} does not match command {args.command!r}")
        result = run_experiment(cfg, threads=args.threads)
        csv_path, json_path = result.write(args.out or cfg.out or ".")
    except InvalidParameterError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DegenerateFunctionalError as exc:
        print(f"degenerate statistics: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    print(csv_path)
    print(json_path)
    if "fits" in result.extra:
        print(json.dumps(result.extra["fits"]))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
