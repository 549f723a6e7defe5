"""Command line entry point: ``bfcshaper run|calibrate|presets|version``."""
from __future__ import annotations

import argparse
import sys

from . import __version__
from .calibration import ConvergenceError
from .scenario import PRESET_DESCRIPTIONS, PRESETS, ConfigError, load_scenario, preset, run_calibration, run_scenario

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NONCONVERGENCE = 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bfcshaper", description="Biphoton frequency comb shaping simulator.")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, with_method):
        src = sp.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", metavar="PATH", help="scenario config file")
        src.add_argument("--preset", metavar="NAME", help="built-in scenario (see 'presets')")
        sp.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
        sp.add_argument("--seed", type=int, metavar="N", help="override the config seed")
        if with_method:
            sp.add_argument("--method", choices=("quad", "closed"), help="override the wavepacket method")

    common(sub.add_parser("run", help="run a scenario and write CSV/plot artifacts"), True)
    common(sub.add_parser("calibrate", help="run the phase programming loop"), False)
    sub.add_parser("presets", help="list built-in scenarios")
    sub.add_parser("version", help="print the package version")
    return p


def _load(args):
    if args.preset:
        if args.preset not in PRESETS:
            raise ConfigError("<preset>", 0, None, f"unknown preset {args.preset!r}")
        return preset(args.preset)
    return load_scenario(args.config)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.verb == "version":
        print(__version__)
        return EXIT_OK
    if args.verb == "presets":
        for name in PRESETS:
            print(f"{name:16s} {PRESET_DESCRIPTIONS.get(name, '')}")
        return EXIT_OK

    try:
        sc = _load(args)
        if args.verb == "calibrate":
            if sc.kind != "calibration":
                raise ConfigError(sc.source, 0, "kind", "calibrate needs kind = calibration")
            res = run_calibration(sc, args.out, seed=args.seed)
        else:
            res = run_scenario(sc, args.out, seed=args.seed, method=args.method)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (ValueError, RuntimeError) as exc:
        print(f"error: scenario {sc.name} ({sc.source}): {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE if isinstance(exc, RuntimeError) else EXIT_VALIDATION

    for path in res.artifacts:
        print(path)
    if res.records:
        for label, rec in res.records.items():
            state = "converged" if rec.converged else "NOT converged"
            print(f"{label}: {state} after {rec.iterations} iterations, residual {rec.residual:.3g} rad")
        if not res.converged:
            return EXIT_NONCONVERGENCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
