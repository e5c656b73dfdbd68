"""Unscented CTRV prediction with IDM velocity and road-map turn-rate adaptation.

Sigma points live in a 7-dimensional augmented space: the five CTRV state
slots followed by two process-noise slots (velocity, turn rate) that act as
accelerations over one sampling period.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .core import OMEGA, PHI, STATE_DIM, V, GaussianComponent, GaussianMixture, Label, StateVector, symmetrize, wrap_angle
from .idm import IdmParams, desired_gap
from .roadmap import Rectangle, RoadMap

NOISE_DIM = 2
AUG_DIM = STATE_DIM + NOISE_DIM
CTRV_OMEGA_EPS = 1e-4


class DegenerateCovarianceError(ValueError):
    pass


@dataclass(frozen=True)
class ProcessNoise:
    """Standard deviations of the velocity (m/s^2) and turn-rate (rad/s^2) noise."""

    q_v: float = 5.0
    q_omega: float = 0.1

    def __post_init__(self):
        if self.q_v < 0 or self.q_omega < 0:
            raise ValueError("process noise must be non-negative")

    def covariance(self) -> np.ndarray:
        return np.diag([self.q_v**2, self.q_omega**2])


@dataclass(frozen=True)
class SigmaPointSet:
    points: np.ndarray
    weights: np.ndarray
    n: int
    kappa: float


@dataclass(frozen=True)
class PredictionSettings:
    kappa: float = 2.0
    enable_interaction: bool = False
    enable_map: bool = False
    v_min: float = 0.5
    s_min: float = 0.5
    omega_max: float = 1.0
    max_decel: float = 9.81
    leader_existence: float = 0.5
    max_lookahead: int = 3
    gap_cutoff: float = 100.0
    corridor_half_width: float = 1.75
    merge_distance: float = 0.1
    max_components: int = 12
    prune_weight: float = 1e-4


class LeaderCandidate(NamedTuple):
    label: Label
    state: np.ndarray
    existence: float
    rects: frozenset = frozenset()


class Leader(NamedTuple):
    label: Label
    state: np.ndarray
    gap: float


@dataclass(frozen=True)
class PredictionContext:
    """Everything a single component prediction reads; ``leaders`` excludes the track being predicted."""

    T: float
    noise: ProcessNoise = ProcessNoise()
    settings: PredictionSettings = PredictionSettings()
    idm: IdmParams = IdmParams()
    road_map: RoadMap | None = None
    leaders: Sequence[LeaderCandidate] = ()
    stats: Counter = field(default_factory=Counter, compare=False)


def ctrv_transition(state, T: float):
    """Constant turn rate and velocity motion over ``T`` seconds.

    Accepts a single state, a StateVector, or an (N, 5) array of states.
    Below |omega| = 1e-4 rad/s the straight-line limit is used.
    """
    if isinstance(state, StateVector):
        return StateVector.from_array(ctrv_transition(state.as_array(), T))
    s = np.array(state, dtype=float)
    v, phi, w = s[..., V], s[..., PHI], s[..., OMEGA]
    small = np.abs(w) < CTRV_OMEGA_EPS
    w_safe = np.where(small, 1.0, w)
    phi_new = phi + w * T
    r = v / w_safe
    s[..., 0] += np.where(small, v * T * np.cos(phi), r * (np.sin(phi_new) - np.sin(phi)))
    s[..., 1] += np.where(small, v * T * np.sin(phi), r * (np.cos(phi) - np.cos(phi_new)))
    s[..., PHI] = wrap_angle(phi_new)
    return s


def _matrix_sqrt(S: np.ndarray) -> np.ndarray:
    """Lower factor L with L @ L.T == S; falls back to an eigen-decomposition for singular PSD input."""
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    S = symmetrize(S)
    lam, Q = np.linalg.eigh(S)
    if lam.min() < -1e-9 * max(1.0, abs(lam).max()):
        raise DegenerateCovarianceError(f"covariance has negative eigenvalue {lam.min():.3g}")
    return Q * np.sqrt(np.clip(lam, 0.0, None))


def generate_sigma_points(mean, cov, noise: ProcessNoise, kappa: float = 2.0) -> SigmaPointSet:
    mean = mean.as_array() if isinstance(mean, StateVector) else np.asarray(mean, dtype=float)
    n = AUG_DIM
    if not n + kappa > 0:
        raise ValueError(f"n + kappa must be positive, got {n + kappa}")
    mu = np.concatenate([mean, np.zeros(NOISE_DIM)])
    Sigma = np.zeros((n, n))
    Sigma[:STATE_DIM, :STATE_DIM] = cov
    Sigma[STATE_DIM:, STATE_DIM:] = noise.covariance()
    L = _matrix_sqrt((n + kappa) * Sigma)
    points = np.vstack([mu, mu + L.T, mu - L.T])
    weights = np.full(2 * n + 1, 0.5 / (n + kappa))
    weights[0] = kappa / (n + kappa)
    return SigmaPointSet(points, weights, n, kappa)


def apply_process_noise(points, T: float) -> np.ndarray:
    """Fold the noise slots of augmented points into velocity and turn rate."""
    p = np.asarray(points, dtype=float)
    out = p[..., :STATE_DIM].copy()
    out[..., V] += p[..., STATE_DIM] * T
    out[..., OMEGA] += p[..., STATE_DIM + 1] * T
    return out


def recombine(states, weights) -> tuple[np.ndarray, np.ndarray]:
    """Weighted mean and covariance of transformed sigma points.

    ``states`` is (N, 5) or a batch (J, N, 5). Headings are averaged as
    wrapped residuals around the first point, which is exact for spreads
    below pi and handles the +-pi seam.
    """
    X = np.array(states, dtype=float)
    W = np.asarray(weights, dtype=float)
    ref = X[..., :1, PHI]
    X[..., PHI] = ref + wrap_angle(X[..., PHI] - ref)
    mean = W @ X
    d = X - mean[..., None, :]
    mean[..., PHI] = wrap_angle(mean[..., PHI])
    cov = np.swapaxes(W[:, None] * d, -1, -2) @ d
    return mean, symmetrize(cov)


def _sigma_points_batch(means: np.ndarray, covs: np.ndarray, noise: ProcessNoise, kappa: float):
    """Augmented sigma points for every component at once: (J, 2n+1, n) and weights."""
    n = AUG_DIM
    if not n + kappa > 0:
        raise ValueError(f"n + kappa must be positive, got {n + kappa}")
    J = len(means)
    Sigma = np.zeros((J, n, n))
    Sigma[:, :STATE_DIM, :STATE_DIM] = covs
    Sigma[:, STATE_DIM:, STATE_DIM:] = noise.covariance()
    scaled = (n + kappa) * Sigma
    try:
        L = np.linalg.cholesky(scaled)
    except np.linalg.LinAlgError:
        L = np.stack([_matrix_sqrt(S) for S in scaled])
    mu = np.zeros((J, n))
    mu[:, :STATE_DIM] = means
    Lt = np.swapaxes(L, 1, 2)
    points = np.concatenate([mu[:, None, :], mu[:, None, :] + Lt, mu[:, None, :] - Lt], axis=1)
    weights = np.full(2 * n + 1, 0.5 / (n + kappa))
    weights[0] = kappa / (n + kappa)
    return points, weights


def find_leader(state, rects, context: PredictionContext) -> Leader | None:
    """Nearest sufficiently confident track ahead of ``state`` on its lane.

    With a map, candidates must sit in ``rects`` or within ``max_lookahead``
    successor hops of the rectangle best aligned with the heading. Off-map,
    a corridor of ``corridor_half_width`` around the heading line is used.
    """
    st = context.settings
    s = state.as_array() if isinstance(state, StateVector) else np.asarray(state, dtype=float)
    pos = s[:2]
    c, sn = math.cos(s[PHI]), math.sin(s[PHI])
    m = context.road_map
    region = None
    if m is not None and rects:
        canon = m.canonical(rects, s[PHI])
        region = set(rects) | m.downstream(canon, st.max_lookahead)
    best = None
    for cand in context.leaders:
        if cand.existence < st.leader_existence:
            continue
        dx, dy = cand.state[0] - pos[0], cand.state[1] - pos[1]
        along = dx * c + dy * sn
        if along <= 0:
            continue
        gap = math.hypot(dx, dy)
        if gap > st.gap_cutoff:
            continue
        if region is not None:
            if not (cand.rects & region):
                continue
        elif abs(-dx * sn + dy * c) > st.corridor_half_width:
            continue
        if best is None or gap < best.gap:
            best = Leader(cand.label, cand.state, gap)
    return best


def adapt_velocity(states, leader_state, idm: IdmParams, T: float, max_decel: float = 9.81,
                   gaps=None, stats: Counter | None = None) -> np.ndarray:
    """Decelerate sigma points with the IDM braking term against one leader.

    Gaps default to the Euclidean distance from each point to the leader mean;
    points with the leader not ahead (or non-positive gap) are left unchanged.
    """
    S = np.array(states, dtype=float, ndmin=2)
    lead = leader_state.as_array() if isinstance(leader_state, StateVector) else np.asarray(leader_state, float)
    d = lead[:2] - S[:, :2]
    if gaps is None:
        gaps = np.hypot(d[:, 0], d[:, 1])
        ahead = d[:, 0] * np.cos(S[:, PHI]) + d[:, 1] * np.sin(S[:, PHI]) > 0
    else:
        gaps = np.broadcast_to(np.asarray(gaps, dtype=float), (len(S),))
        ahead = np.ones(len(S), dtype=bool)
    ok = ahead & (gaps > 0)
    if stats is not None and not ok.all():
        stats["velocity_skipped"] += int((~ok).sum())
    if ok.any():
        v = np.maximum(S[ok, V], 0.0)
        accel = -idm.max_accel_a * (desired_gap(v, v - lead[V], idm) / gaps[ok]) ** 2
        accel = np.maximum(accel, -max_decel)
        S[ok, V] = np.maximum(0.0, S[ok, V] + accel * T)
    return S if np.ndim(states) == 2 else S[0]


def adapt_turn_rate(states, rect: Rectangle, T: float, v_min: float = 0.5, s_min: float = 0.5,
                    omega_max: float = 1.0, stats: Counter | None = None) -> np.ndarray:
    """Set each point's turn rate so its heading meets the rectangle orientation on exit.

    omega = dphi * v / s, with s the remaining along-lane distance to the
    downstream edge floored at max(s_min, v*T) so no point overshoots within
    one step. Points slower than ``v_min`` keep their turn rate.
    """
    S = np.array(states, dtype=float, ndmin=2)
    v = S[:, V]
    fast = v > v_min
    if stats is not None and not fast.all():
        stats["turn_rate_skipped"] += int((~fast).sum())
    if fast.any():
        u, _ = rect.local(S[fast, :2])
        s = np.clip(0.5 * rect.length - u, 0.0, rect.length)
        s = np.maximum(s, np.maximum(s_min, v[fast] * T))
        dphi = wrap_angle(rect.orientation - S[fast, PHI])
        S[fast, OMEGA] = np.clip(dphi * v[fast] / s, -omega_max, omega_max)
    return S if np.ndim(states) == 2 else S[0]


def _rect_after(m: RoadMap, rid: int, distance: float, prefer: set) -> int:
    """Rectangle reached after driving ``distance`` past the downstream edge of ``rid``.

    At forks the successor in ``prefer`` wins, then the one best aligned
    with the current rectangle.
    """
    cur = m[rid]
    while cur.successors:
        nxt = [s for s in cur.successors if s in prefer] or list(cur.successors)
        cur = min((m[s] for s in nxt), key=lambda r: abs(float(wrap_angle(r.orientation - cur.orientation))))
        if distance <= cur.length:
            break
        distance -= cur.length
    return cur.id


def _adapt_turn_rates_on_chain(states: np.ndarray, anchor: int, context: PredictionContext) -> np.ndarray:
    """Resolve each point to a rectangle near ``anchor`` on its chain and adapt against it.

    A point that would leave its rectangle within this step (remaining
    distance below v*T) is steered toward the orientation of the rectangle
    it reaches at the end of the step instead, so on finely segmented
    curves the heading keeps up with the road rather than lagging one
    rectangle behind.
    """
    m = context.road_map
    st = context.settings
    T = context.T
    down = m.downstream(anchor, 2)
    chain = [anchor] + sorted(down - {anchor})
    chain.extend(p for p in m.predecessors(anchor) if p not in chain)
    assigned = np.full(len(states), anchor)
    free = np.ones(len(states), dtype=bool)
    for rid in chain:
        hit = free & m[rid].contains(states[:, :2])
        assigned[hit] = rid
        free &= ~hit
    prefer = m.downstream(anchor, st.max_lookahead + 2)
    travel = np.maximum(states[:, V], 0.0) * T
    for i in range(len(states)):
        rect = m[int(assigned[i])]
        u, _ = rect.local(states[i, :2])
        remaining = 0.5 * rect.length - float(u)
        if states[i, V] > st.v_min and remaining < travel[i] and rect.successors:
            assigned[i] = _rect_after(m, rect.id, travel[i] - max(remaining, 0.0), prefer)
    out = states
    for rid in np.unique(assigned):
        sel = assigned == rid
        out[sel] = adapt_turn_rate(out[sel], m[int(rid)], T, st.v_min, st.s_min, st.omega_max, context.stats)
    return out


def ukf_ctrv_predict(component: GaussianComponent, noise: ProcessNoise, T: float,
                     kappa: float = 2.0) -> GaussianComponent:
    """Plain unscented CTRV prediction with no adaptation."""
    sigma = generate_sigma_points(component.mean, component.covariance, noise, kappa)
    states = ctrv_transition(apply_process_noise(sigma.points, T), T)
    mean, cov = recombine(states, sigma.weights)
    return GaussianComponent(component.weight, mean, cov)


def ukf_ctrv_predict_mixture(mixture: GaussianMixture, noise: ProcessNoise, T: float,
                             kappa: float = 2.0) -> GaussianMixture:
    """Plain unscented CTRV prediction of every component; the standard filter's motion step."""
    points, weights = _sigma_points_batch(mixture.means, mixture.covs, noise, kappa)
    states = ctrv_transition(apply_process_noise(points, T), T)
    means, covs = recombine(states, weights)
    return GaussianMixture(mixture.weights.copy(), means, covs)


def _split_weights(w: float, m: int) -> list[float]:
    shares = [w / m] * (m - 1)
    return shares + [w - sum(shares)]


def _adapt_component(mean: np.ndarray, weight: float, base: np.ndarray,
                     context: PredictionContext) -> list[tuple[float, np.ndarray]]:
    """Adapted sigma points of one component, one entry per road branch."""
    st = context.settings
    m = context.road_map
    rects = m.rectangles_containing(mean[:2]) if m is not None else frozenset()
    branches = m.branches(rects, mean[PHI]) if rects else []
    if st.enable_map and len(branches) > 1:
        copies = [(share, frozenset({b}), b) for share, b in zip(_split_weights(weight, len(branches)), branches)]
    else:
        anchor = m.canonical(branches, mean[PHI]) if branches else None
        copies = [(weight, rects, anchor)]
    out = []
    for share, crects, anchor in copies:
        states = base.copy()
        if st.enable_interaction:
            leader = find_leader(mean, crects, context)
            if leader is not None:
                context.stats["velocity_adapted"] += 1
                states = adapt_velocity(states, leader.state, context.idm, context.T, st.max_decel, stats=context.stats)
        if st.enable_map and anchor is not None:
            states = _adapt_turn_rates_on_chain(states, anchor, context)
        out.append((share, states))
    return out


def predict_mixture(mixture: GaussianMixture, context: PredictionContext) -> GaussianMixture:
    """Predict every component, splitting components at intersections.

    Per sigma point the order is: process noise, IDM velocity adaptation,
    map turn-rate adaptation, CTRV transition. With both adaptations
    disabled this performs exactly the operations of
    :func:`ukf_ctrv_predict_mixture`. The result is not reduced.
    """
    st = context.settings
    points, weights = _sigma_points_batch(mixture.means, mixture.covs, context.noise, st.kappa)
    base = apply_process_noise(points, context.T)
    if st.enable_interaction or st.enable_map:
        shares, stacks = [], []
        for j in range(len(mixture)):
            for share, states in _adapt_component(mixture.means[j], float(mixture.weights[j]), base[j], context):
                shares.append(share)
                stacks.append(states)
        w = np.array(shares)
        base = np.stack(stacks)
    else:
        w = mixture.weights.copy()
    states = ctrv_transition(base, context.T)
    means, covs = recombine(states, weights)
    return GaussianMixture(w, means, covs)


def predict_component(component: GaussianComponent, context: PredictionContext) -> list[GaussianComponent]:
    """Predict one component; returns one component per road branch."""
    mix = GaussianMixture(np.array([component.weight]), np.asarray(component.mean, float)[None],
                          np.asarray(component.covariance, float)[None])
    return list(predict_mixture(mix, context).components)
