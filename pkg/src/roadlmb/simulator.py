"""Ground-truth traffic and sensor scan synthesis.

Vehicles follow their routes by arc length along the dense lane polylines
(not the rectangle approximation), so the truth never shares the tracker's
motion model. Speeds come from a scripted (time, speed) profile or from the
full IDM against the nearest vehicle ahead on the same route.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import shapely

from .core import wrap_angle
from .idm import IdmParams, idm_acceleration
from .lmb import MeasurementScan, SensorModel
from .motion import _matrix_sqrt
from .roadmap import RoadMap, build_map


class ScenarioError(ValueError):
    """Invalid scenario; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class Path2D:
    """Arc-length parametrized polyline with piecewise-linear heading."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        seg = np.diff(pts, axis=0)
        ds = np.hypot(seg[:, 0], seg[:, 1])
        keep = np.concatenate([[True], ds > 1e-9])
        pts = pts[keep]
        seg = np.diff(pts, axis=0)
        ds = np.hypot(seg[:, 0], seg[:, 1])
        self.points = pts
        self.s = np.concatenate([[0.0], np.cumsum(ds)])
        self.length = float(self.s[-1])
        self._mid_s = 0.5 * (self.s[:-1] + self.s[1:])
        self._mid_h = np.unwrap(np.arctan2(seg[:, 1], seg[:, 0]))

    def position(self, s: float) -> np.ndarray:
        return np.array([np.interp(s, self.s, self.points[:, 0]), np.interp(s, self.s, self.points[:, 1])])

    def heading(self, s: float) -> float:
        return float(np.interp(s, self._mid_s, self._mid_h))

    def curvature(self, s: float) -> float:
        i = int(np.searchsorted(self._mid_s, s)) - 1
        if i < 0 or i >= len(self._mid_s) - 1:
            return 0.0
        return float((self._mid_h[i + 1] - self._mid_h[i]) / (self._mid_s[i + 1] - self._mid_s[i]))

    def state(self, s: float, v: float) -> np.ndarray:
        x, y = self.position(s)
        return np.array([x, y, v, float(wrap_angle(self.heading(s))), v * self.curvature(s)])


@dataclass
class VehicleSpec:
    vehicle_id: int
    route: tuple[str, ...]
    speed: float
    spawn_time: float = 0.0
    start_offset: float = 0.0
    behavior: str = "scripted"
    profile: tuple[tuple[float, float], ...] = ()
    desired_speed: float = 20.0

    def scripted_speed(self, t: float) -> float:
        if not self.profile:
            return self.speed
        ts, vs = zip(*self.profile)
        return float(np.interp(t, ts, vs))


@dataclass
class Scenario:
    name: str
    lanes: dict[str, list]
    links: list[tuple[str, str]]
    vehicles: list[VehicleSpec]
    sensors: list[SensorModel]
    duration: float
    step: float = 0.1
    rng_seed: int = 0
    lane_width: float = 3.5
    tolerance: float = 0.1
    occlusion: bool = False
    occlusion_radius: float = 1.5
    idm: IdmParams = IdmParams()
    reference_vehicle: int = 0
    params: dict = field(default_factory=dict)

    @cached_property
    def road_map(self) -> RoadMap:
        return build_map({k: {"points": v} for k, v in self.lanes.items()}, self.links,
                         width=self.lane_width, tolerance=self.tolerance)

    def route_points(self, route: Sequence[str]) -> np.ndarray:
        chunks = []
        for name in route:
            pts = np.asarray(self.lanes[name], dtype=float)
            if chunks and np.allclose(chunks[-1][-1], pts[0]):
                pts = pts[1:]
            chunks.append(pts)
        return np.concatenate(chunks)

    def route_path(self, route: Sequence[str]) -> Path2D:
        return Path2D(self.route_points(route))

    def route_rectangles(self, route: Sequence[str]) -> list[int]:
        return [rid for name in route for rid in self.road_map.lanes[name]]

    def validate(self) -> None:
        if not self.step > 0:
            raise ScenarioError("step", "must be positive")
        if not self.duration > 0:
            raise ScenarioError("duration", "must be positive")
        for name, pts in self.lanes.items():
            if len(pts) < 2:
                raise ScenarioError(f"lanes.{name}", "needs at least two points")
        for a, b in self.links:
            for lane in (a, b):
                if lane not in self.lanes:
                    raise ScenarioError("links", f"unknown lane {lane!r}")
        ids = set()
        for n, veh in enumerate(self.vehicles):
            where = f"vehicles[{n}]"
            if veh.vehicle_id in ids:
                raise ScenarioError(f"{where}.vehicle_id", "duplicate id")
            ids.add(veh.vehicle_id)
            if not veh.route:
                raise ScenarioError(f"{where}.route", "empty route")
            for lane in veh.route:
                if lane not in self.lanes:
                    raise ScenarioError(f"{where}.route", f"unknown lane {lane!r}")
            rects = self.road_map
            for a, b in zip(veh.route[:-1], veh.route[1:]):
                if rects.lanes[b][0] not in rects[rects.lanes[a][-1]].successors:
                    raise ScenarioError(f"{where}.route", f"lane {a!r} is not connected to {b!r}")
            if veh.behavior not in ("scripted", "idm"):
                raise ScenarioError(f"{where}.behavior", f"unknown behavior {veh.behavior!r}")
            if veh.spawn_time < 0 or veh.speed < 0:
                raise ScenarioError(where, "spawn_time and speed must be non-negative")
        if self.reference_vehicle not in ids:
            raise ScenarioError("reference_vehicle", f"no vehicle with id {self.reference_vehicle}")
        seen = set()
        for s in self.sensors:
            if s.sensor_id in seen:
                raise ScenarioError("sensors", f"duplicate sensor id {s.sensor_id}")
            seen.add(s.sensor_id)

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.step)) + 1

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "lanes": {k: np.asarray(v).tolist() for k, v in self.lanes.items()},
            "links": [list(l) for l in self.links],
            "vehicles": [
                {
                    "vehicle_id": v.vehicle_id, "route": list(v.route), "speed": v.speed,
                    "spawn_time": v.spawn_time, "start_offset": v.start_offset, "behavior": v.behavior,
                    "profile": [list(p) for p in v.profile], "desired_speed": v.desired_speed,
                }
                for v in self.vehicles
            ],
            "sensors": [s.to_dict() for s in self.sensors],
            "duration": self.duration, "step": self.step, "rng_seed": self.rng_seed,
            "lane_width": self.lane_width, "tolerance": self.tolerance,
            "occlusion": self.occlusion, "occlusion_radius": self.occlusion_radius,
            "idm": self.idm.to_dict(), "reference_vehicle": self.reference_vehicle,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        def need(key, where=d, prefix=""):
            if key not in where:
                raise ScenarioError(prefix + key, "missing")
            return where[key]

        try:
            vehicles = [
                VehicleSpec(
                    vehicle_id=int(need("vehicle_id", v, f"vehicles[{n}].")),
                    route=tuple(need("route", v, f"vehicles[{n}].")),
                    speed=float(need("speed", v, f"vehicles[{n}].")),
                    spawn_time=float(v.get("spawn_time", 0.0)),
                    start_offset=float(v.get("start_offset", 0.0)),
                    behavior=v.get("behavior", "scripted"),
                    profile=tuple(tuple(p) for p in v.get("profile", ())),
                    desired_speed=float(v.get("desired_speed", 20.0)),
                )
                for n, v in enumerate(need("vehicles"))
            ]
            sensors = []
            for n, s in enumerate(d.get("sensors", [{}])):
                sensors.append(SensorModel(
                    sensor_id=int(s.get("sensor_id", n)),
                    detection_prob=float(s.get("detection_prob", 0.85)),
                    clutter_intensity=float(s.get("clutter_intensity", 1e-5)),
                    measurement_noise=np.asarray(s.get("measurement_noise", 0.25 * np.eye(2)), dtype=float),
                    field_of_view=s.get("field_of_view"),
                    blind_zones=s.get("blind_zones", ()),
                    position=tuple(s["position"]) if s.get("position") is not None else None,
                ))
            scn = cls(
                name=d.get("name", "custom"),
                lanes={k: v for k, v in need("lanes").items()},
                links=[tuple(l) for l in d.get("links", ())],
                vehicles=vehicles,
                sensors=sensors,
                duration=float(need("duration")),
                step=float(d.get("step", 0.1)),
                rng_seed=int(d.get("rng_seed", 0)),
                lane_width=float(d.get("lane_width", 3.5)),
                tolerance=float(d.get("tolerance", 0.1)),
                occlusion=bool(d.get("occlusion", False)),
                occlusion_radius=float(d.get("occlusion_radius", 1.5)),
                idm=IdmParams.from_dict(d.get("idm", {})),
                reference_vehicle=int(d.get("reference_vehicle", vehicles[0].vehicle_id if vehicles else 0)),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError("scenario", str(exc)) from exc
        scn.validate()
        return scn

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))


class GroundTruthLog:
    """Per-step mapping of vehicle id to true state."""

    def __init__(self, times: np.ndarray, states: list[dict[int, np.ndarray]]):
        self.times = times
        self.states = states

    def __len__(self) -> int:
        return len(self.states)

    def track(self, vehicle_id: int) -> dict[int, np.ndarray]:
        return {k: s[vehicle_id] for k, s in enumerate(self.states) if vehicle_id in s}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "vehicle_id", "x", "y", "v", "phi", "omega"])
            for k, snap in enumerate(self.states):
                for vid in sorted(snap):
                    w.writerow([k, vid, *(repr(float(x)) for x in snap[vid])])


class SimulationResult(NamedTuple):
    truth: GroundTruthLog
    scans: list[list[MeasurementScan]]


def write_scans_csv(scans: list[list[MeasurementScan]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "sensor_id", "meas_x", "meas_y", "is_clutter"])
        for k, step_scans in enumerate(scans):
            for scan in step_scans:
                flags = scan.is_clutter if scan.is_clutter is not None else np.zeros(len(scan.measurements), bool)
                for z, c in zip(scan.measurements, flags):
                    w.writerow([k, scan.sensor_id, repr(float(z[0])), repr(float(z[1])), int(c)])


def _occluded(target: np.ndarray, sensor: np.ndarray, others: list[np.ndarray], radius: float) -> bool:
    d = target - sensor
    L2 = d @ d
    if L2 == 0:
        return False
    for o in others:
        t = (o - sensor) @ d / L2
        if 0.0 < t < 1.0 and np.hypot(*(sensor + t * d - o)) < radius:
            return True
    return False


def _sample_clutter(rng: np.random.Generator, sensor: SensorModel, count: int, fallback_bounds) -> np.ndarray:
    region = sensor.region
    if count == 0:
        return np.zeros((0, 2))
    x0, y0, x1, y1 = region.bounds if region is not None else fallback_bounds
    out = []
    while len(out) < count:
        p = rng.uniform([x0, y0], [x1, y1], size=(count, 2))
        if region is not None:
            p = p[shapely.contains_xy(region, p[:, 0], p[:, 1])]
        out.extend(p)
    return np.asarray(out[:count])


def simulate(scenario: Scenario, seed: int | None = None) -> SimulationResult:
    """Roll the scenario forward and synthesize one scan per sensor per step."""
    scenario.validate()
    rng = np.random.default_rng(scenario.rng_seed if seed is None else seed)
    dt = scenario.step
    paths = {v.vehicle_id: scenario.route_path(v.route) for v in scenario.vehicles}
    specs = {v.vehicle_id: v for v in scenario.vehicles}
    s_pos = {v.vehicle_id: v.start_offset for v in scenario.vehicles}
    speed = {v.vehicle_id: v.speed for v in scenario.vehicles}
    active: dict[int, bool] = {}
    finished: set[int] = set()
    bounds = scenario.road_map.bounds()
    chol = {s.sensor_id: _matrix_sqrt(s.measurement_noise) for s in scenario.sensors}
    areas = {s.sensor_id: (s.region.area if s.region is not None else (bounds[2] - bounds[0]) * (bounds[3] - bounds[1]))
             for s in scenario.sensors}

    times = np.arange(scenario.n_steps) * dt
    truth: list[dict[int, np.ndarray]] = []
    scans: list[list[MeasurementScan]] = []
    for k, t in enumerate(times):
        for vid, spec in specs.items():
            if vid not in active and vid not in finished and spec.spawn_time <= t + 1e-9:
                active[vid] = True
                if spec.behavior == "scripted":
                    speed[vid] = spec.scripted_speed(t)
        snap = {vid: paths[vid].state(s_pos[vid], speed[vid]) for vid in sorted(active)}
        truth.append(snap)

        step_scans = []
        for sensor in scenario.sensors:
            ids = sorted(snap)
            pos = np.array([snap[v][:2] for v in ids]).reshape(-1, 2)
            pd = sensor.detection_prob_at(pos) if len(ids) else np.zeros(0)
            meas, flags = [], []
            for n, vid in enumerate(ids):
                hit = rng.random() < pd[n]
                if hit and scenario.occlusion and sensor.position is not None:
                    others = [pos[j] for j in range(len(ids)) if j != n]
                    hit = not _occluded(pos[n], np.asarray(sensor.position, float), others, scenario.occlusion_radius)
                noise = chol[sensor.sensor_id] @ rng.standard_normal(2)
                if hit:
                    meas.append(pos[n] + noise)
                    flags.append(False)
            n_clutter = rng.poisson(sensor.clutter_intensity * areas[sensor.sensor_id])
            clutter = _sample_clutter(rng, sensor, int(n_clutter), bounds)
            meas.extend(clutter)
            flags.extend([True] * len(clutter))
            step_scans.append(MeasurementScan(float(t), sensor.sensor_id, np.asarray(meas).reshape(-1, 2),
                                              is_clutter=np.asarray(flags, dtype=bool)))
        scans.append(step_scans)

        # advance
        accel = {}
        for vid in sorted(active):
            spec = specs[vid]
            if spec.behavior != "idm":
                continue
            ahead = [o for o in active if o != vid and specs[o].route == spec.route and s_pos[o] > s_pos[vid]]
            if ahead:
                lead = min(ahead, key=lambda o: s_pos[o])
                gap = s_pos[lead] - s_pos[vid]
                accel[vid] = idm_acceleration(speed[vid], speed[vid] - speed[lead], gap, spec.desired_speed, scenario.idm)
            else:
                accel[vid] = idm_acceleration(speed[vid], 0.0, math.inf, spec.desired_speed, scenario.idm)
        for vid in sorted(active):
            spec = specs[vid]
            v0 = speed[vid]
            if spec.behavior == "idm":
                v1 = max(0.0, v0 + float(accel[vid]) * dt)
            else:
                v1 = spec.scripted_speed(t + dt)
            s_pos[vid] += 0.5 * (v0 + v1) * dt
            speed[vid] = v1
            if s_pos[vid] > paths[vid].length:
                del active[vid]
                finished.add(vid)
    return SimulationResult(GroundTruthLog(times, truth), scans)
