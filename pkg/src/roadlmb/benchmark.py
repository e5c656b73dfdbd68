"""Paired filter runs over simulated scans and Monte-Carlo aggregation."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lmb import Estimate, FilterConfig, LmbFilter
from .metrics import COMPONENTS, MATCH_GATE, EvaluationReport, error_series, UndefinedRmseError
from .simulator import Scenario, SimulationResult, simulate

VARIANT_FLAGS = {
    "baseline": (False, False),
    "interacting": (True, True),
    "interaction-only": (True, False),
    "map-only": (False, True),
}


def variant_config(base: FilterConfig, variant: str) -> FilterConfig:
    """Copy of ``base`` with the interaction and map flags set for ``variant``."""
    try:
        interaction, use_map = VARIANT_FLAGS[variant]
    except KeyError:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANT_FLAGS)}") from None
    pred = dataclasses.replace(base.prediction, enable_interaction=interaction, enable_map=use_map)
    return dataclasses.replace(base, prediction=pred)


def run_filter(scenario: Scenario, sim: SimulationResult, config: FilterConfig) -> tuple[list[list[Estimate]], LmbFilter]:
    """Feed the recorded scans through one filter; the map is supplied only when the map flag is on."""
    road_map = scenario.road_map if config.prediction.enable_map or config.prediction.enable_interaction else None
    filt = LmbFilter(config, road_map=road_map, idm=scenario.idm, sample_time=scenario.step)
    sensors = {s.sensor_id: s for s in scenario.sensors}
    out = []
    for step_scans in sim.scans:
        out.append(filt.step(step_scans, sensors, scenario.step))
    return out, filt


@dataclass
class ReplicateResult:
    seed: int
    reports: dict[str, EvaluationReport | None]
    errors: dict[str, np.ndarray]


def replicate_seeds(seed: int, count: int) -> list[int]:
    """Independent per-replicate seeds from one master seed."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(c.generate_state(1)[0]) for c in children]


def run_replicate(scenario: Scenario, variants: Sequence[str], seed: int,
                  base_config: FilterConfig = FilterConfig(), metrics: dict | None = None) -> ReplicateResult:
    """Simulate once and run every variant over the identical scan stream.

    ``metrics`` may hold ``match_gate``, ``ospa_cutoff`` and ``ospa_order``.
    """
    m = metrics or {}
    gate = float(m.get("match_gate", MATCH_GATE))
    sim = simulate(scenario, seed=seed)
    reports, errors = {}, {}
    for v in variants:
        est, filt = run_filter(scenario, sim, variant_config(base_config, v))
        try:
            rep = EvaluationReport.evaluate(est, sim.truth, scenario.reference_vehicle, gate=gate,
                                            cutoff=float(m.get("ospa_cutoff", 10.0)),
                                            order=float(m.get("ospa_order", 1.0)))
            rep.meta.update(variant=v, seed=seed, stats=dict(filt.stats))
        except UndefinedRmseError:
            rep = None
        reports[v] = rep
        errors[v] = error_series(est, sim.truth, scenario.reference_vehicle, gate)
    return ReplicateResult(seed, reports, errors)


def aggregate(results: Sequence[ReplicateResult], variant: str) -> dict:
    """Mean and standard deviation of each RMSE component over replicates with a defined RMSE."""
    rows = [r.reports[variant].rmse for r in results if r.reports.get(variant) is not None]
    out = {"replicates": len(results), "defined": len(rows)}
    for c in COMPONENTS:
        vals = np.array([row[c] for row in rows])
        out[c] = {"mean": float(vals.mean()) if len(vals) else float("nan"),
                  "std": float(vals.std()) if len(vals) else float("nan")}
    finals = [r.reports[variant].label_error_series[-1] for r in results if r.reports.get(variant) is not None]
    out["final_label_error"] = {"mean": float(np.mean(finals)) if finals else float("nan")}
    return out
