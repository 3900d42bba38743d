"""Command-line entry point: ``dtasep <subcommand> [options]``.

Every subcommand accepts ``--config FILE``; flags given on the command line
override values from the file.  Exit codes: 0 all checks passed, 1 a check
failed or a stage raised, 2 configuration error (nothing written).
"""
from __future__ import annotations

import argparse
import json
import sys

from . import harness
from .harness import EXIT_CONFIG, EXIT_FAIL, ConfigError, StageError

# subcommand -> (experiment, [(flag, help)])
_COMMANDS = {
    "lpp-lln": ("lpp_lln", [("--speed", "speed file"), ("--x", "target x"), ("--y", "target y"),
                            ("--n", "comma-separated scales"), ("--replicas", "replicas per n"),
                            ("--expect", "optional expected limit"), ("--rtol", "relative tolerance for --expect")]),
    "tasep-sim": ("tasep", [("--speed", "speed file"), ("--init", "step | bernoulli:p | flat:r | riemann:l,r | file:path"),
                            ("--n", "scale"), ("--t", "macroscopic time"), ("--window", "sites a,b"),
                            ("--replicas", "replicas"), ("--engine", "timer | poisson"),
                            ("--snapshots", "equally spaced snapshot count")]),
    "envelope-check": ("envelope_check", [("--speed", "speed file"), ("--init", "initial profile"),
                                          ("--n", "scale"), ("--t", "macroscopic time"),
                                          ("--window", "sites a,b"), ("--seeds", "number of seeds"),
                                          ("--engine", "timer | poisson")]),
    "shape-grid": ("shape", [("--speed", "speed file"), ("--start", "a,b"), ("--extent", "w,h"),
                             ("--h", "grid step"), ("--stride", "write every k-th node")]),
    "level-curve": ("level_curve", [("--speed", "speed file"), ("--init", "initial profile"), ("--q", "anchor"),
                                    ("--t", "time"), ("--xrange", "a,b"), ("--samples", "points"),
                                    ("--h", "grid step")]),
    "hydro": ("hydro", [("--speed", "speed file"), ("--init", "initial profile"), ("--t", "time"),
                        ("--xrange", "a,b"), ("--samples", "points"), ("--h", "grid step")]),
    "godunov": ("godunov", [("--speed", "speed file"), ("--init", "initial profile"), ("--t", "time"),
                            ("--dx", "cell width"), ("--xrange", "reported range a,b"),
                            ("--snapshots", "stored snapshots"), ("--cfl", "CFL number <= 1/2")]),
    "pde-check": ("pde_check", [("--mode", "residual | viscosity | weak | maxcurrent"),
                                ("--speed", "speed file (default: from the input's manifest)"),
                                ("--init", "initial profile (default: from the manifest)"),
                                ("--t", "time of the hydro profile (default: from the manifest)"),
                                ("--tol", "tolerance"), ("--max-excluded", "residual: allowed excluded fraction"),
                                ("--radius", "viscosity: touching radius"), ("--h", "grid step"),
                                ("--points", "sample points")]),
    "compare": ("compare", [("--speed", "speed file"), ("--init", "initial profile"), ("--n", "comma-separated scales"),
                            ("--t", "time"), ("--xrange", "a,b"), ("--samples", "points"), ("--replicas", "replicas"),
                            ("--h", "grid step"), ("--bound", "final deviation bound"),
                            ("--trend-only", "true to skip the bound"), ("--engine", "timer | poisson")]),
    "run": (None, []),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--config", help="INI-style config file (flags override it)")
    g.add_argument("--seed", help="64-bit seed")
    g.add_argument("--threads", help="worker threads")
    g.add_argument("--out-dir", help=f"output directory (env {harness.OUT_DIR_ENV} overrides the config file)")
    g.add_argument("--mem-cap-mb", help="memory cap for passage-time grids")
    g.add_argument("--out", help="primary output file (relative to the output directory)")
    parser = argparse.ArgumentParser(prog="dtasep", description="Inhomogeneous TASEP / LPP experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, opts) in _COMMANDS.items():
        sp = sub.add_parser(name, parents=[common])
        for flag, help_ in opts:
            if flag == "--in":
                continue
            sp.add_argument(flag, help=help_)
        if name == "pde-check":
            sp.add_argument("--in", dest="in_", nargs="+", help="input CSV file(s)")
    return parser


def _raw_config(args: argparse.Namespace) -> tuple[dict, str | None]:
    exp, _ = _COMMANDS[args.command]
    raw = harness.read_config_file(args.config) if args.config else {}
    if exp is not None:
        if raw.get("experiment", exp).replace("-", "_") != exp:
            raise ConfigError(f"config file is for experiment {raw['experiment']!r}, not {exp!r}")
        raw["experiment"] = exp
    elif "experiment" not in raw:
        raise ConfigError("run needs a config file with an 'experiment' key")
    skip = {"command", "config", "out_dir"}
    for key, val in vars(args).items():
        if key in skip or val is None:
            continue
        raw["in" if key == "in_" else key] = val
    return raw, args.out_dir


_PAIR_FLAGS = {"--window", "--xrange", "--start", "--extent"}


def _glue_pairs(argv: list[str]) -> list[str]:
    """``--xrange -1,1`` -> ``--xrange=-1,1`` (argparse would read -1,1 as a flag)."""
    out: list[str] = []
    it = iter(argv)
    for tok in it:
        if tok in _PAIR_FLAGS:
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(_glue_pairs(list(sys.argv[1:] if argv is None else argv)))
    try:
        raw, out_dir = _raw_config(args)
        cfg = harness.prepare(raw, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        res = harness.execute(cfg)
    except ConfigError as exc:  # raised by late checks on input files
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_FAIL
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    status = "PASS" if res.passed else "FAIL"
    print(json.dumps({"status": status, "checks": res.checks, "outputs": [str(o.path) for o in res.outputs]}))
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())
