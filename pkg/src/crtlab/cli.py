"""Command-line experiment runner.

    crtlab run --experiment gap-distortion --seed 7 --out results/
    crtlab plotdata --report results/ --out results/plots/
    crtlab experiments

Configuration can come from a flat TOML file (--config); command-line
flags override file values.  The environment variable CRTLAB_OUT
overrides the output directory only.  Exit codes: 0 success, 2 usage or
unknown experiment, 3 resource guard, 4 failed validation or gate,
1 unexpected error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .errors import (CrtlabError, DataError, EnvelopeFailureError,
                     GateCheckError, InvalidParameterError, ResourceGuardError)
from .experiments import EXPERIMENTS, ExperimentConfig, run
from .reporting import emit_plotdata

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RESOURCE = 3
EXIT_VALIDATION = 4

_PARAM_FLAGS = {
    "k": int, "steps": int, "levels": int, "subsample": int, "cover_n": int,
    "grid": int, "pairs": int, "probes": int,
    "duration": float, "eta": float, "radius": float, "step": float,
    "horizon": float, "window": float, "dim": float,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crtlab", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="run a registered experiment")
    runp.add_argument("--experiment", required=True)
    runp.add_argument("--config", type=Path, help="flat TOML file with the same keys")
    runp.add_argument("--seed", type=int)
    runp.add_argument("--replicas", type=int)
    runp.add_argument("--out", type=Path)
    runp.add_argument("--model")
    runp.add_argument("--jobs", type=int)
    runp.add_argument("--max-table-bytes", type=int, dest="max_table_bytes")
    runp.add_argument("--sweep", help="comma-separated sweep values")
    for name, typ in _PARAM_FLAGS.items():
        runp.add_argument(f"--{name.replace('_', '-')}", type=typ, dest=name)

    plotp = sub.add_parser("plotdata", help="reshape a report into plot series + figures")
    plotp.add_argument("--report", required=True, type=Path,
                       help="report.csv or the directory containing it")
    plotp.add_argument("--out", required=True, type=Path)
    plotp.add_argument("--no-figures", action="store_true")

    sub.add_parser("experiments", help="list registered experiments")
    return parser


def _load_config_file(path: Path) -> dict:
    if not path.exists():
        raise InvalidParameterError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _assemble_config(args: argparse.Namespace) -> ExperimentConfig:
    file_cfg = _load_config_file(args.config) if args.config else {}
    merged = dict(file_cfg)
    for key in ("experiment", "seed", "replicas", "model", "jobs",
                "max_table_bytes", "sweep"):
        v = getattr(args, key, None)
        if v is not None:
            merged[key] = v
    if args.out is not None:
        merged["out"] = str(args.out)
    params = {k: v for k, v in merged.items()
              if k not in {"experiment", "seed", "replicas", "model", "jobs",
                           "max_table_bytes", "out"}}
    for name, typ in _PARAM_FLAGS.items():
        v = getattr(args, name, None)
        if v is not None:
            params[name] = typ(v)
    outdir = os.environ.get("CRTLAB_OUT") or merged.get("out", "crtlab-out")
    return ExperimentConfig(
        experiment=str(merged["experiment"]),
        model=merged.get("model"),
        replicas=None if merged.get("replicas") is None else int(merged["replicas"]),
        seed=int(merged.get("seed", 0)),
        outdir=Path(outdir),
        jobs=int(merged.get("jobs", 1)),
        max_table_bytes=int(merged.get("max_table_bytes", 800_000_000)),
        params=params,
    )


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = _assemble_config(args)
            rows = run(cfg)
            print(f"wrote {len(rows)} report rows to {cfg.outdir}")
            return EXIT_OK
        if args.command == "plotdata":
            written = emit_plotdata(args.report, args.out, render=not args.no_figures)
            print(f"wrote {len(written)} plot files to {args.out}")
            return EXIT_OK
        if args.command == "experiments":
            for name in sorted(EXPERIMENTS):
                print(f"{name}  (default model: {EXPERIMENTS[name][1]})")
            return EXIT_OK
        return EXIT_USAGE
    except ResourceGuardError as exc:
        print(f"resource guard: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (GateCheckError, InvalidParameterError, DataError, EnvelopeFailureError) as exc:
        kind = type(exc).__name__
        print(f"{kind}: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, InvalidParameterError) and "unknown experiment" in str(exc) else EXIT_VALIDATION
    except CrtlabError as exc:  # pragma: no cover
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
