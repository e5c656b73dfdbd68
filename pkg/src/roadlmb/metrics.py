"""Evaluation against ground truth: per-component RMSE, label error, OSPA."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import PHI, OMEGA, wrap_angle
from .lmb import Estimate
from .simulator import GroundTruthLog

COMPONENTS = ("x", "y", "v", "phi", "omega")
UNITS = {"x": "m", "y": "m", "v": "m/s", "phi": "deg", "omega": "deg/s"}
MATCH_GATE = 5.0


class UndefinedRmseError(ValueError):
    """No step had an estimate matched to the reference vehicle."""


def match_reference(estimates: Sequence[Sequence[Estimate]], truth: GroundTruthLog, reference_vehicle: int,
                    gate: float = MATCH_GATE) -> list[Estimate | None]:
    """Per step, the estimate nearest to the reference vehicle within ``gate`` metres."""
    out = []
    for k, snap in enumerate(truth.states):
        ref = snap.get(reference_vehicle)
        ests = estimates[k] if k < len(estimates) else ()
        if ref is None or not ests:
            out.append(None)
            continue
        d = [np.hypot(*(e.state[:2] - ref[:2])) for e in ests]
        i = int(np.argmin(d))
        out.append(ests[i] if d[i] <= gate else None)
    return out


def error_series(estimates, truth: GroundTruthLog, reference_vehicle: int, gate: float = MATCH_GATE) -> np.ndarray:
    """(steps, 5) signed errors in report units; NaN rows for unmatched steps."""
    matched = match_reference(estimates, truth, reference_vehicle, gate)
    err = np.full((len(matched), 5), np.nan)
    for k, est in enumerate(matched):
        if est is None:
            continue
        e = np.asarray(est.state, float) - truth.states[k][reference_vehicle]
        e[PHI] = wrap_angle(e[PHI])
        e[PHI] = math.degrees(e[PHI])
        e[OMEGA] = math.degrees(e[OMEGA])
        err[k] = e
    return err


def rmse_report(estimates, truth: GroundTruthLog, reference_vehicle: int, gate: float = MATCH_GATE) -> dict:
    """RMSE per state component over matched steps (angles in degrees)."""
    err = error_series(estimates, truth, reference_vehicle, gate)
    ok = ~np.isnan(err[:, 0])
    present = np.array([reference_vehicle in s for s in truth.states])
    if not ok.any():
        raise UndefinedRmseError("no estimate was matched to the reference vehicle")
    rmse = np.sqrt(np.mean(err[ok] ** 2, axis=0))
    out = {c: float(r) for c, r in zip(COMPONENTS, rmse)}
    out["matched_steps"] = int(ok.sum())
    out["unmatched_steps"] = int((present & ~ok).sum())
    return out


def label_error(estimates, truth: GroundTruthLog, reference_vehicle: int, gate: float = MATCH_GATE) -> np.ndarray:
    """0 while untracked, else the number of distinct labels matched so far."""
    seen = set()
    out = np.zeros(len(truth.states), dtype=int)
    for k, est in enumerate(match_reference(estimates, truth, reference_vehicle, gate)):
        if est is not None:
            seen.add(tuple(est.label))
            out[k] = len(seen)
    return out


def ospa(estimated, truth, cutoff: float = 10.0, order: float = 1.0) -> float:
    """OSPA distance between two position sets."""
    if cutoff <= 0 or order < 1:
        raise ValueError("OSPA needs cutoff > 0 and order >= 1")
    X = np.asarray(estimated, float).reshape(-1, 2)
    Y = np.asarray(truth, float).reshape(-1, 2)
    m, n = len(X), len(Y)
    if m == 0 and n == 0:
        return 0.0
    if m == 0 or n == 0:
        return float(cutoff)
    if m > n:
        X, Y, m, n = Y, X, n, m
    D = np.minimum(np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=2), cutoff) ** order
    r, c = linear_sum_assignment(D)
    total = D[r, c].sum() + cutoff**order * (n - m)
    return float((total / n) ** (1.0 / order))


def ospa_series(estimates, truth: GroundTruthLog, cutoff: float = 10.0, order: float = 1.0) -> np.ndarray:
    return np.array([
        ospa([e.state[:2] for e in (estimates[k] if k < len(estimates) else ())],
             [s[:2] for s in snap.values()], cutoff, order)
        for k, snap in enumerate(truth.states)
    ])


def improvement_pct(baseline: dict, candidate: dict) -> dict:
    """100 * (baseline - candidate) / baseline per component."""
    return {c: (100.0 * (baseline[c] - candidate[c]) / baseline[c] if baseline[c] > 0 else 0.0) for c in COMPONENTS}


@dataclass
class EvaluationReport:
    rmse: dict
    label_error_series: list[int]
    ospa_series: list[float]
    improvement_pct: dict | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for c in COMPONENTS:
            if self.rmse[c] < 0:
                raise ValueError("RMSE must be non-negative")

    @classmethod
    def evaluate(cls, estimates, truth: GroundTruthLog, reference_vehicle: int, *,
                 gate: float = MATCH_GATE, cutoff: float = 10.0, order: float = 1.0) -> "EvaluationReport":
        return cls(
            rmse=rmse_report(estimates, truth, reference_vehicle, gate),
            label_error_series=label_error(estimates, truth, reference_vehicle, gate).tolist(),
            ospa_series=ospa_series(estimates, truth, cutoff, order).tolist(),
        )

    def with_baseline(self, baseline: "EvaluationReport") -> "EvaluationReport":
        return EvaluationReport(self.rmse, self.label_error_series, self.ospa_series,
                                improvement_pct(baseline.rmse, self.rmse), dict(self.meta))

    def to_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "label_error_series": self.label_error_series,
            "ospa_series": self.ospa_series,
            "improvement_pct": self.improvement_pct,
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        return cls(d["rmse"], d["label_error_series"], d["ospa_series"], d.get("improvement_pct"), d.get("meta", {}))


def comparison_table(candidate: dict, baseline: dict, candidate_name: str = "Interacting LMB",
                     baseline_name: str = "Standard LMB") -> str:
    """Markdown table of two RMSE dicts with the relative improvement."""
    imp = improvement_pct(baseline, candidate)
    rows = [f"| RMSE | {candidate_name} | {baseline_name} | Improvement % |", "|---|---|---|---|"]
    for c in COMPONENTS:
        rows.append(f"| {c} [{UNITS[c]}] | {candidate[c]:.3f} | {baseline[c]:.3f} | {imp[c]:.2f} |")
    return "\n".join(rows) + "\n"
