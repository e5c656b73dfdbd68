"""Parameterized builders for the synthetic evaluation scenarios.

Lane polylines are sampled densely (``spacing`` metres) so the simulator can
follow the exact geometry; the tracker sees only the rectangle map derived
from them.
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .lmb import SensorModel
from .simulator import Scenario, ScenarioError, VehicleSpec

SPACING = 0.5


def line(p0, p1, spacing: float = SPACING) -> np.ndarray:
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    n = max(2, int(math.ceil(np.hypot(*(p1 - p0)) / spacing)) + 1)
    return p0 + np.linspace(0.0, 1.0, n)[:, None] * (p1 - p0)


def arc(center, radius: float, start: float, end: float, spacing: float = SPACING) -> np.ndarray:
    """Circle arc from polar angle ``start`` to ``end`` (either direction)."""
    n = max(2, int(math.ceil(abs(end - start) * radius / spacing)) + 1)
    a = np.linspace(start, end, n)
    return np.asarray(center, float) + radius * np.column_stack([np.cos(a), np.sin(a)])


def join(*parts: np.ndarray) -> np.ndarray:
    out = [parts[0]]
    for p in parts[1:]:
        out.append(p[1:] if np.allclose(out[-1][-1], p[0]) else p)
    return np.concatenate(out)


def _field_of_view(lanes: dict, margin: float):
    pts = np.concatenate([np.asarray(v) for v in lanes.values()])
    x0, y0 = pts.min(axis=0) - margin
    x1, y1 = pts.max(axis=0) + margin
    return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]


def _sensor(lanes: dict, detection_prob: float, clutter: float, sigma: float,
            blind_zones=(), position=None, margin: float = 20.0) -> SensorModel:
    return SensorModel(
        sensor_id=0,
        detection_prob=detection_prob,
        clutter_intensity=clutter,
        measurement_noise=sigma**2 * np.eye(2),
        field_of_view=_field_of_view(lanes, margin),
        blind_zones=blind_zones,
        position=position,
    )


def _as_lanes(d: dict) -> dict:
    return {k: np.round(np.asarray(v), 9).tolist() for k, v in d.items()}


def roundabout(radius: float = 25.0, entry_radius: float = 15.0, approach: float = 20.0, speed: float = 9.0,
               duration: float | None = None, detection_prob: float = 0.85, clutter: float = 1e-5,
               sigma: float = 0.5, tolerance: float = 0.01, seed: int = 0) -> Scenario:
    """Single-lane counter-clockwise roundabout with a southern entry/exit pair and a north exit.

    The reference vehicle enters from the south, completes one full loop
    and leaves through the southern exit.
    """
    R, re = radius, entry_radius
    c_low = (0.0, -R - re)
    entry = join(line((-re, -R - re - approach), (-re, -R - re)), arc(c_low, re, math.pi, math.pi / 2))
    exit_ = join(arc(c_low, re, math.pi / 2, 0.0), line((re, -R - re), (re, -R - re - approach)))
    ring_a = arc((0.0, 0.0), R, -math.pi / 2, math.pi / 2)
    ring_b = arc((0.0, 0.0), R, math.pi / 2, 3 * math.pi / 2)
    c_up = (0.0, R + re)
    north = join(arc(c_up, re, -math.pi / 2, -math.pi), line((-re, R + re), (-re, R + re + approach)))
    lanes = _as_lanes({"entry": entry, "ring_a": ring_a, "ring_b": ring_b, "exit": exit_, "north_exit": north})
    links = [("entry", "ring_a"), ("ring_a", "ring_b"), ("ring_b", "ring_a"), ("ring_b", "exit"),
             ("ring_a", "north_exit")]
    route = ("entry", "ring_a", "ring_b", "exit")
    length = sum(np.hypot(*np.diff(np.asarray(lanes[n]), axis=0).T).sum() for n in route)
    vehicles = [VehicleSpec(0, route, speed)]
    return Scenario("roundabout", lanes, links, vehicles,
                    [_sensor(lanes, detection_prob, clutter, sigma, position=(0.0, 0.0))],
                    duration=duration or math.floor(10 * length / speed) / 10, rng_seed=seed,
                    tolerance=tolerance, params=locals_params(locals()))


def urban_intersection(arm: float = 40.0, turn_radius: float = 8.0, speed: float = 7.0,
                       duration: float | None = None, detection_prob: float = 0.85, clutter: float = 1e-5,
                       sigma: float = 0.5, tolerance: float = 0.01, seed: int = 0) -> Scenario:
    """Four-arm crossing; the reference vehicle arrives from the south and turns left."""
    h = 1.75  # lane centre offset from the road axis
    a, r = arm, turn_radius
    south_in = line((h, -a), (h, -r - h))
    north_out = line((h, r + h), (h, a))
    straight = line((h, -r - h), (h, r + h))
    # left turn: from heading north at (h, -r-h) to heading west at (-r-h, h)
    rl = r + 2 * h
    left = arc((-r - h, -r - h), rl, 0.0, math.pi / 2)
    west_out = line((-r - h, h), (-a, h))
    # right turn: to heading east at (r+h, -h)
    right = arc((r + h, -r - h), r, math.pi, math.pi / 2)
    east_out = line((r + h, -h), (a, -h))
    # crossing traffic westbound on the northern carriageway of the east-west road
    east_in = line((a, h), (r + h, h))
    cross = line((r + h, h), (-r - h, h))
    lanes = _as_lanes({"south_in": south_in, "straight": straight, "north_out": north_out, "left": left,
                       "west_out": west_out, "right": right, "east_out": east_out,
                       "east_in": east_in, "cross": cross})
    links = [("south_in", "straight"), ("straight", "north_out"), ("south_in", "left"), ("left", "west_out"),
             ("south_in", "right"), ("right", "east_out"), ("east_in", "cross"), ("cross", "west_out")]
    route = ("south_in", "left", "west_out")
    vehicles = [VehicleSpec(0, route, speed)]
    length = sum(np.hypot(*np.diff(np.asarray(lanes[n]), axis=0).T).sum() for n in route)
    return Scenario("urban-intersection", lanes, links, vehicles,
                    [_sensor(lanes, detection_prob, clutter, sigma, position=(0.0, 0.0))],
                    duration=duration or math.floor(10 * length / speed) / 10, rng_seed=seed,
                    tolerance=tolerance, params=locals_params(locals()))


def long_right_turn(radius: float = 60.0, angle: float = 2 * math.pi / 3, straight: float = 40.0,
                    speed: float = 12.0, duration: float | None = None, detection_prob: float = 0.85,
                    clutter: float = 1e-5, sigma: float = 0.5, tolerance: float = 0.01, seed: int = 0) -> Scenario:
    """Eastbound straight, clockwise arc of ``angle`` radians, straight exit."""
    R = radius
    c = (straight, -R)
    end = math.pi / 2 - angle
    p_end = np.asarray(c) + R * np.array([math.cos(end), math.sin(end)])
    d_end = np.array([math.sin(end), -math.cos(end)])
    road = join(line((0.0, 0.0), (straight, 0.0)), arc(c, R, math.pi / 2, end), line(p_end, p_end + straight * d_end))
    lanes = _as_lanes({"road": road})
    length = float(np.hypot(*np.diff(road, axis=0).T).sum())
    vehicles = [VehicleSpec(0, ("road",), speed)]
    return Scenario("long-right-turn", lanes, [], vehicles,
                    [_sensor(lanes, detection_prob, clutter, sigma, position=(straight, 0.0))],
                    duration=duration or math.floor(10 * length / speed) / 10, rng_seed=seed,
                    tolerance=tolerance, params=locals_params(locals()))


def rural_intersection(arm: float = 80.0, turn_radius: float = 15.0, speed: float = 13.0,
                       duration: float | None = None, detection_prob: float = 0.85, clutter: float = 1e-5,
                       sigma: float = 0.5, tolerance: float = 0.01, seed: int = 0) -> Scenario:
    """T-junction on a fast road; the reference vehicle turns right into the side road."""
    a, r = arm, turn_radius
    main_in = line((-a, 0.0), (-r, 0.0))
    main_through = line((-r, 0.0), (r, 0.0))
    main_out = line((r, 0.0), (a, 0.0))
    turn = arc((-r, -r), r, math.pi / 2, 0.0)
    side_out = line((0.0, -r), (0.0, -a))
    lanes = _as_lanes({"main_in": main_in, "main_through": main_through, "main_out": main_out,
                       "turn": turn, "side_out": side_out})
    links = [("main_in", "main_through"), ("main_through", "main_out"), ("main_in", "turn"), ("turn", "side_out")]
    route = ("main_in", "turn", "side_out")
    vehicles = [VehicleSpec(0, route, speed)]
    length = sum(np.hypot(*np.diff(np.asarray(lanes[n]), axis=0).T).sum() for n in route)
    return Scenario("rural-intersection", lanes, links, vehicles,
                    [_sensor(lanes, detection_prob, clutter, sigma, position=(0.0, 10.0))],
                    duration=duration or math.floor(10 * length / speed) / 10, rng_seed=seed,
                    tolerance=tolerance, params=locals_params(locals()))


def s_curve(radius: float = 40.0, angle: float = math.pi / 3, straight: float = 30.0, speed: float = 10.0,
            duration: float | None = None, detection_prob: float = 0.85, clutter: float = 1e-5,
            sigma: float = 0.5, tolerance: float = 0.01, seed: int = 0) -> Scenario:
    """Straight, left arc, right arc of equal angle, straight."""
    R = radius
    first = arc((straight, R), R, -math.pi / 2, -math.pi / 2 + angle)
    p1 = first[-1]
    # second arc: centre mirrored across the junction point
    c2 = 2 * p1 - np.array([straight, R])
    second = arc(c2, R, math.pi / 2 + angle, math.pi / 2)
    d_end = np.array([1.0, 0.0])
    road = join(line((0.0, 0.0), (straight, 0.0)), first, second,
                line(second[-1], second[-1] + straight * d_end))
    lanes = _as_lanes({"road": road})
    length = float(np.hypot(*np.diff(road, axis=0).T).sum())
    vehicles = [VehicleSpec(0, ("road",), speed)]
    return Scenario("s-curve", lanes, [], vehicles,
                    [_sensor(lanes, detection_prob, clutter, sigma, position=(straight, -20.0))],
                    duration=duration or math.floor(10 * length / speed) / 10, rng_seed=seed,
                    tolerance=tolerance, params=locals_params(locals()))


def dense_following(gaps: tuple[float, float] = (20.0, 20.0), speed: float = 10.0, low_speed: float = 4.0,
                    brake_start: float = 6.0, brake_decel: float = 2.0, hold: float = 5.0,
                    recover_accel: float = 1.0, desired_speed: float = 20.0, lead_offset: float = 100.0,
                    road_length: float = 900.0, duration: float = 20.0, blind_zone: tuple[float, float] | None = None,
                    occlusion_time: float = 2.0, occlusion_delay: float = 1.5, detection_prob: float = 0.85, clutter: float = 1e-5,
                    sigma: float = 0.5, seed: int = 0) -> Scenario:
    """Three-vehicle platoon on one straight lane; the leader brakes and recovers.

    The two followers use IDM. A blind zone hides the middle vehicle for
    ``occlusion_time`` seconds starting ``occlusion_delay`` seconds after the
    leader starts braking, which is when the middle vehicle decelerates
    hardest. Its extent comes from a noiseless pre-run so that it matches
    the middle vehicle's trajectory.
    """
    road = line((0.0, 0.0), (road_length, 0.0), spacing=road_length / 10)
    lanes = _as_lanes({"lane": road})
    t_low = (speed - low_speed) / brake_decel
    profile = (
        (0.0, speed), (brake_start, speed), (brake_start + t_low, low_speed),
        (brake_start + t_low + hold, low_speed),
        (brake_start + t_low + hold + (speed - low_speed) / recover_accel, speed), (1e9, speed),
    )
    s_lead = lead_offset
    vehicles = [
        VehicleSpec(0, ("lane",), speed, start_offset=s_lead, behavior="scripted", profile=profile),
        VehicleSpec(1, ("lane",), speed, start_offset=s_lead - gaps[0], behavior="idm", desired_speed=desired_speed),
        VehicleSpec(2, ("lane",), speed, start_offset=s_lead - gaps[0] - gaps[1], behavior="idm",
                    desired_speed=desired_speed),
    ]
    base = Scenario("dense-following", lanes, [], vehicles, [_sensor(lanes, detection_prob, clutter, sigma, margin=15.0)],
                    duration=duration, rng_seed=seed, reference_vehicle=1)
    if blind_zone is None and occlusion_time > 0:
        from .simulator import simulate

        probe = Scenario("probe", lanes, [], vehicles, [SensorModel(detection_prob=0.0, clutter_intensity=0.0)],
                         duration=brake_start + occlusion_delay + occlusion_time + 0.2)
        truth = simulate(probe).truth
        k0 = int(round((brake_start + occlusion_delay) / probe.step))
        k1 = int(round((brake_start + occlusion_delay + occlusion_time) / probe.step))
        blind_zone = (float(truth.states[k0][1][0]), float(truth.states[k1][1][0]))
    zones = ()
    if blind_zone is not None:
        x0, x1 = blind_zone
        zones = ([(x0, -15.0), (x1, -15.0), (x1, 15.0), (x0, 15.0)],)
    base.sensors = [_sensor(lanes, detection_prob, clutter, sigma, blind_zones=zones, margin=15.0)]
    base.params = locals_params(locals())
    return base


def locals_params(ns: dict) -> dict:
    return {k: v for k, v in ns.items() if isinstance(v, (int, float, str, tuple)) and not k.startswith("_")}


SCENARIOS: dict[str, Callable[..., Scenario]] = {
    "roundabout": roundabout,
    "urban-intersection": urban_intersection,
    "long-right-turn": long_right_turn,
    "rural-intersection": rural_intersection,
    "s-curve": s_curve,
    "dense-following": dense_following,
}


def scenario_library() -> dict[str, Callable[..., Scenario]]:
    return dict(SCENARIOS)


def build_scenario(name: str, **params) -> Scenario:
    try:
        builder = SCENARIOS[name]
    except KeyError:
        raise ScenarioError("scenario", f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
    try:
        return builder(**params)
    except TypeError as exc:
        raise ScenarioError("scenario.params", str(exc)) from exc
