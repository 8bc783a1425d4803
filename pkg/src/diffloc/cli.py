"""Command-line front end: ``diffloc {peb,mc,ratio,check}``.

Exit codes: 0 success, 1 failed self-check, 2 configuration error,
3 geometry or identifiability failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .checks import run_checks
from .errors import ConfigError, DiffLocError, GeometryError, NotIdentifiable
from .scenario import FULL_SCALE_SAMPLES, Scenario, run_estimator_mc, run_peb_map, run_power_ratio_sweep

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_GEOMETRY = 3
EXIT_IO = 4

log = logging.getLogger("diffloc")

_MODES = {"peb": "peb_map", "mc": "estimator_mc", "ratio": "power_ratio_sweep"}
_RUNNERS = {"peb_map": run_peb_map, "estimator_mc": run_estimator_mc, "power_ratio_sweep": run_power_ratio_sweep}


def _float_list(text: str):
    try:
        return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}") from err


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffloc", description="Diffraction-aided NLOS positioning simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("peb", "position error bound map over sampled node locations"),
        ("mc", "Monte Carlo comparison of the diffraction NLS and LLS estimators"),
        ("ratio", "upper/lower diffraction MPC power ratio sweep over anchor elevation"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", type=Path, help="JSON scenario file")
        p.add_argument("--seed", type=int)
        p.add_argument("--samples", type=int)
        p.add_argument("--out", type=Path, default=Path("out"))
        p.add_argument("--snr-db", type=_float_list, help="comma-separated SNR list in dB")
        p.add_argument("--full-scale", action="store_true", help=f"use {FULL_SCALE_SAMPLES:,} node samples")
        p.add_argument("--workers", type=int)
        if name == "ratio":
            p.add_argument("--theta-deg", type=_float_list, help="comma-separated elevation grid in degrees")
        if name == "mc":
            p.add_argument("--euclidean", action="store_true", help="debug: synthesise straight-line ranges")
    sub.add_parser("check", help="run the oracle self-checks")
    return parser


def load_scenario(args, mode: str) -> Scenario:
    data = {}
    if args.config is not None:
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as err:
            raise ConfigError(f"cannot read config {args.config}: {err}") from err
        try:
            data = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{args.config}: invalid JSON: {err}") from err
        if not isinstance(data, dict):
            raise ConfigError(f"{args.config}: top level must be an object")
    data["mode"] = mode
    if args.seed is not None:
        data["seed"] = args.seed
    if args.full_scale:
        data["n_samples"] = FULL_SCALE_SAMPLES
    if args.samples is not None:
        data["n_samples"] = args.samples
    if args.snr_db is not None:
        data["snr_db_list"] = args.snr_db
    if args.workers is not None:
        data["workers"] = args.workers
    if getattr(args, "theta_deg", None) is not None:
        data["theta_grid_deg"] = args.theta_deg
    if getattr(args, "euclidean", False):
        data["euclidean_ranges"] = True
    return Scenario.from_dict(data)


def _write_outputs(scenario: Scenario, tables: dict, out: Path, wall: float) -> list:
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for key, table in tables.items():
        path = out / f"{scenario.mode}_{key}.csv"
        table.to_csv(path)
        files.append(path.name)
    manifest = {
        "library": "diffloc",
        "version": __version__,
        "mode": scenario.mode,
        "seed": scenario.seed,
        "scenario": scenario.to_dict(),
        "files": files,
        "wall_time_s": round(wall, 3),
    }
    (out / f"{scenario.mode}_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return files


def _run(args) -> int:
    if args.command == "check":
        failed = 0
        for name, ok, detail in run_checks():
            print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
            failed += not ok
        return EXIT_OK if failed == 0 else EXIT_CHECK_FAILED

    scenario = load_scenario(args, _MODES[args.command])
    t0 = time.perf_counter()
    tables = _RUNNERS[scenario.mode](scenario)
    wall = time.perf_counter() - t0
    if scenario.mode == "peb_map":
        summary = dict(tables["summary"].rows)
        if summary["n_identifiable"] == 0:
            raise NotIdentifiable("no sampled node is identifiable", rank=0)
    files = _write_outputs(scenario, tables, args.out, wall)
    log.info("wrote %s to %s in %.1f s", ", ".join(files), args.out, wall)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _run(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (GeometryError, NotIdentifiable) as err:
        print(f"geometry error: {err}", file=sys.stderr)
        return EXIT_GEOMETRY
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    except DiffLocError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_GEOMETRY


if __name__ == "__main__":
    sys.exit(main())
