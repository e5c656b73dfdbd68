"""``track`` command line: batch runs, scenario listing, map building, report diffs.

Exit codes: 0 success, 2 configuration error, 3 scenario error, 4 runtime
error inside the filter or evaluation.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .benchmark import VARIANT_FLAGS, aggregate, replicate_seeds, run_replicate
from .config import ConfigError, apply_override, filter_config_from_dict, idm_from_dict, load_config, parse_overrides
from .metrics import COMPONENTS, comparison_table
from .roadmap import InvalidPolylineError, MapError, load_map
from .scenarios import SCENARIOS, build_scenario
from .simulator import Scenario, ScenarioError, simulate, write_scans_csv

log = logging.getLogger("roadlmb")

EXIT_OK, EXIT_CONFIG, EXIT_SCENARIO, EXIT_RUNTIME = 0, 2, 3, 4


class RuntimeFilterError(RuntimeError):
    pass


def resolve_scenario(spec: dict) -> Scenario:
    """Library name with params, or a path to a scenario JSON file."""
    name = spec.get("name")
    path = spec.get("file")
    if name and Path(name).suffix == ".json":
        name, path = None, name
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ScenarioError("scenario.file", f"no such file {path}") from None
        except json.JSONDecodeError as exc:
            raise ScenarioError("scenario.file", f"invalid JSON: {exc}") from None
        return Scenario.from_dict(doc)
    if not name:
        raise ConfigError("scenario.name or scenario.file is required")
    scn = build_scenario(name, **spec.get("params", {}))
    scn.validate()
    return scn


def _worker(args):
    scenario, variants, seed, fcfg, metrics = args
    return run_replicate(scenario, variants, seed, fcfg, metrics)


def _write_error_csv(path: Path, errors: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step"] + [f"err_{c}" for c in COMPONENTS])
        for k, row in enumerate(errors):
            w.writerow([k] + ["" if np.isnan(x) else repr(float(x)) for x in row])


def run(config: dict) -> int:
    """Execute a full run described by a resolved config dict; returns an exit code."""
    variants = config["variants"]
    if isinstance(variants, str):
        variants = [v for v in variants.split(",") if v]
    bad = [v for v in variants if v not in VARIANT_FLAGS]
    if bad or not variants:
        raise ConfigError(f"unknown variant(s) {bad}; choose from {sorted(VARIANT_FLAGS)}")
    fcfg = filter_config_from_dict(config["filter"])
    idm = idm_from_dict(config["idm"])
    mc = config["monte_carlo"]
    try:
        n_rep, seed, workers = int(mc["replicates"]), int(mc["seed"]), int(mc.get("workers", 1))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"monte_carlo: {exc}") from exc
    if n_rep < 1:
        raise ConfigError("monte_carlo.replicates must be at least 1")

    scenario = resolve_scenario(config["scenario"])
    scenario.idm = idm

    out = Path(config["output"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config, indent=2, default=str))
    seeds = replicate_seeds(seed, n_rep)
    jobs = [(scenario, variants, s, fcfg, config.get("metrics", {})) for s in seeds]
    try:
        if workers > 1 and n_rep > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_worker, jobs))
        else:
            results = [_worker(j) for j in jobs]
    except (ScenarioError, ConfigError):
        raise
    except Exception as exc:  # noqa: BLE001 - any failure inside the filter maps to one exit code
        raise RuntimeFilterError(f"{type(exc).__name__}: {exc}") from exc

    err_dir = out / "errors"
    err_dir.mkdir(exist_ok=True)
    if config.get("write_scans", True):
        rep_dir = out / "replicates"
        for i, s in enumerate(seeds):
            d = rep_dir / f"rep{i:03d}"
            d.mkdir(parents=True, exist_ok=True)
            sim = simulate(scenario, seed=s)
            sim.truth.write_csv(d / "ground_truth.csv")
            write_scans_csv(sim.scans, d / "scans.csv")
    summaries = {}
    for v in variants:
        for i, r in enumerate(results):
            _write_error_csv(err_dir / f"{v}_rep{i:03d}.csv", r.errors[v])
        agg = aggregate(results, v)
        summaries[v] = agg
        doc = {
            "variant": v,
            "scenario": scenario.name,
            "rmse": {c: agg[c]["mean"] for c in COMPONENTS},
            "aggregate": agg,
            "replicates": [
                {
                    "index": i,
                    "seed": r.seed,
                    "rmse": None if r.reports[v] is None else r.reports[v].rmse,
                    "label_error_series": None if r.reports[v] is None else r.reports[v].label_error_series,
                    "ospa_mean": None if r.reports[v] is None else float(np.mean(r.reports[v].ospa_series)),
                }
                for i, r in enumerate(results)
            ],
        }
        (out / f"{v}_report.json").write_text(json.dumps(doc, indent=2))
    if "baseline" in variants:
        base = {c: summaries["baseline"][c]["mean"] for c in COMPONENTS}
        parts = []
        for v in variants:
            if v == "baseline":
                continue
            cand = {c: summaries[v][c]["mean"] for c in COMPONENTS}
            parts.append(f"## {v} vs baseline ({scenario.name}, {n_rep} replicates)\n\n"
                         + comparison_table(cand, base, candidate_name=v, baseline_name="baseline"))
        (out / "comparison.md").write_text("\n".join(parts))
    for v in variants:
        agg = summaries[v]
        cells = ", ".join(f"{c}={agg[c]['mean']:.3f}±{agg[c]['std']:.3f}" for c in COMPONENTS)
        print(f"{v}: {cells}")
    print(f"outputs written to {out}")
    return EXIT_OK


def _cmd_run(args, extra) -> int:
    overrides = parse_overrides(extra)
    cfg = load_config(args.config, overrides)
    if args.scenario:
        cfg["scenario"] = {"file": args.scenario} if args.scenario.endswith(".json") else {
            "name": args.scenario, "params": cfg["scenario"].get("params", {}) if cfg["scenario"].get("name") == args.scenario else {}}
        for k, v in overrides.items():
            if k.startswith("scenario."):
                apply_override(cfg, k, v)
    if args.variants:
        cfg["variants"] = [v for v in args.variants.split(",") if v]
    if args.mc is not None:
        cfg["monte_carlo"]["replicates"] = args.mc
    if args.seed is not None:
        cfg["monte_carlo"]["seed"] = args.seed
    if args.workers is not None:
        cfg["monte_carlo"]["workers"] = args.workers
    if args.output:
        cfg["output"] = args.output
    return run(cfg)


def _cmd_scenario_list(args, extra) -> int:
    for name, builder in SCENARIOS.items():
        doc = (builder.__doc__ or "").strip().splitlines()
        print(f"{name:20s} {doc[0] if doc else ''}")
    return EXIT_OK


def _cmd_map_build(args, extra) -> int:
    road_map = load_map(args.polyline)
    text = json.dumps(road_map.to_dict(), indent=2)
    if args.output:
        Path(args.output).write_text(text)
        print(f"{len(road_map.rectangles)} rectangles written to {args.output}")
    else:
        print(text)
    return EXIT_OK


def _load_rmse(path: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
        return {c: float(doc["rmse"][c]) for c in COMPONENTS}
    except (FileNotFoundError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot read report {path}: {exc}") from exc


def _cmd_report_diff(args, extra) -> int:
    a, b = _load_rmse(args.a), _load_rmse(args.b)
    print(comparison_table(a, b, candidate_name=Path(args.a).stem, baseline_name=Path(args.b).stem), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="track", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario and compare filter variants",
                       epilog="Any config value can be overridden with --dotted.key=value.")
    r.add_argument("--config", help="JSON config file (default: $ROADLMB_CONFIG, else built-in defaults)")
    r.add_argument("--scenario", help="library scenario name or scenario JSON file")
    r.add_argument("--variants", help=f"comma-separated subset of {','.join(VARIANT_FLAGS)}")
    r.add_argument("--mc", type=int, help="Monte-Carlo replicate count")
    r.add_argument("--seed", type=int, help="master seed")
    r.add_argument("--workers", type=int, help="worker processes")
    r.add_argument("--output", help="output directory")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("scenario", help="scenario library")
    ssub = s.add_subparsers(dest="scenario_command", required=True)
    ssub.add_parser("list", help="list library scenarios").set_defaults(func=_cmd_scenario_list)

    m = sub.add_parser("map", help="road maps")
    msub = m.add_subparsers(dest="map_command", required=True)
    mb = msub.add_parser("build", help="build a rectangle map from lane polylines")
    mb.add_argument("polyline", help="lane polyline JSON")
    mb.add_argument("-o", "--output", help="write the map JSON here instead of stdout")
    mb.set_defaults(func=_cmd_map_build)

    rep = sub.add_parser("report", help="reports")
    rsub = rep.add_subparsers(dest="report_command", required=True)
    d = rsub.add_parser("diff", help="compare two report JSON files (a relative to b)")
    d.add_argument("a")
    d.add_argument("b")
    d.set_defaults(func=_cmd_report_diff)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if extra and args.command != "run":
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    try:
        return args.func(args, extra)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ScenarioError, MapError, InvalidPolylineError) as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except RuntimeFilterError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
