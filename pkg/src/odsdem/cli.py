"""Command-line entry point: ``odsdem {weights,estimate,simulate,mc}``."""

from __future__ import annotations

import argparse
import json
import platform
import sys
import time
import warnings
from pathlib import Path

from . import __version__
from .design import DesignError
from .estimation import EstimationError
from .pipeline import DataError, PipelineError, load_run_config, run_pipeline, write_dataset
from .synth import SynthError, gen_instance, mc_study, read_config
from .weights import DEFAULT_CUTOFF_KM, WeightsError, build_weights, read_centroids, write_weights_csv

VALIDATION_EXIT = 2
ESTIMATION_EXIT = 3


def _global_flags(p: argparse.ArgumentParser):
    p.add_argument("--cutoff-km", type=float, default=None,
                   help=f"neighbour cutoff distance in km (default {DEFAULT_CUTOFF_KM:g})")
    p.add_argument("--zero-flow", choices=("error", "log1p"), default=None,
                   help="zero flows: reject (default) or use log(1 + flow) for the response")
    p.add_argument("--isolated", choices=("warn", "error", "nearest"), default=None,
                   help="units without neighbours: keep zero rows with a warning (default), "
                        "fail, or link to the nearest unit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="odsdem", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("weights", help="build cutoff weights from a centroid CSV")
    p.add_argument("centroids", help="CSV with id,x_km,y_km")
    p.add_argument("-o", "--out", required=True, help="output CSV of i,j,w triplets")
    p.add_argument("--project-lonlat", action="store_true",
                   help="accept id,lon,lat input and project it to planar km")
    _global_flags(p)

    p = sub.add_parser("estimate", help="fit the models listed in a JSON run config")
    p.add_argument("config", help="JSON run configuration")
    p.add_argument("-o", "--out", default=None, help="output directory (overrides the config)")
    _global_flags(p)

    p = sub.add_parser("simulate", help="write one synthetic dataset from a DGP config")
    p.add_argument("config", help="key = value DGP configuration")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    _global_flags(p)

    p = sub.add_parser("mc", help="Monte Carlo recovery study")
    p.add_argument("config", help="key = value DGP configuration")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("-R", "--reps", type=int, default=200, help="replications (default 200)")
    p.add_argument("-j", "--workers", type=int, default=1, help="worker processes (default 1)")
    _global_flags(p)
    return parser


def _fail(kind: str, exc: Exception, code: int) -> int:
    payload = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, PipelineError):
        payload["model_index"] = exc.model_index
        payload["model"] = exc.model_name
    sys.stderr.write(json.dumps(payload) + "\n")
    return code


def _cmd_weights(args) -> int:
    c = read_centroids(args.centroids, project=args.project_lonlat)
    w = build_weights(c, args.cutoff_km or DEFAULT_CUTOFF_KM, args.isolated or "warn")
    write_weights_csv(w, args.out)
    print(f"{len(c)} units, {int(w.adjacency.sum()) // 2} neighbour pairs, "
          f"{len(w.isolated)} isolated -> {args.out}")
    return 0


def _cmd_estimate(args) -> int:
    cfg = load_run_config(
        args.config,
        d_c=args.cutoff_km,
        zero_flow=args.zero_flow,
        isolated=args.isolated,
        output=args.out,
    )
    run_pipeline(cfg)
    print((Path(cfg.output) / "table.txt").read_text(), end="")
    return 0


def _dgp(args):
    cfg = read_config(args.config)
    changes = {}
    if args.cutoff_km is not None:
        changes["d_c"] = args.cutoff_km
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if changes:
        from dataclasses import replace

        cfg = replace(cfg, **changes)
    return cfg


def _cmd_simulate(args) -> int:
    inst = gen_instance(_dgp(args))
    out = write_dataset(inst, args.out)
    print(f"synthetic dataset (N={inst.design.N}) written to {out}")
    return 0


def _cmd_mc(args) -> int:
    cfg = _dgp(args)
    summary = mc_study(cfg, args.reps, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary.to_csv(out / "summary.csv")
    summary.to_json(out / "summary.json")
    meta = {
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "odsdem_version": __version__,
        "python": platform.python_version(),
        "workers": args.workers,
        "rng": summary.rng,
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"{summary.R} replications, {summary.failures} failures"
          f"{' (study FAILED)' if summary.failed else ''} -> {out}")
    return 1 if summary.failed else 0


COMMANDS = {
    "weights": _cmd_weights,
    "estimate": _cmd_estimate,
    "simulate": _cmd_simulate,
    "mc": _cmd_mc,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](args)
    except PipelineError as exc:
        if isinstance(exc.cause, (DesignError, DataError, WeightsError)):
            return _fail("validation", exc, VALIDATION_EXIT)
        return _fail("estimation", exc, ESTIMATION_EXIT)
    except (DataError, DesignError, WeightsError, SynthError, FileNotFoundError) as exc:
        return _fail("validation", exc, VALIDATION_EXIT)
    except EstimationError as exc:
        return _fail("estimation", exc, ESTIMATION_EXIT)


if __name__ == "__main__":
    sys.exit(main())
