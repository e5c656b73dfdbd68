"""Gaussian-mixture LMB filter: prediction, update, extraction and pruning."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np
import shapely
from scipy.special import logsumexp
from shapely.geometry import Polygon

from .association import association_marginals, gate_groups
from .core import (
    PHI,
    STATE_DIM,
    BernoulliTrack,
    GaussianMixture,
    Label,
    LmbDensity,
    reduce_mixture,
    symmetrize,
    wrap_angle,
)
from .idm import IdmParams
from .motion import (
    LeaderCandidate,
    PredictionContext,
    PredictionSettings,
    ProcessNoise,
    _matrix_sqrt,
    predict_mixture,
    ukf_ctrv_predict_mixture,
)
from .roadmap import RoadMap

_MIN_CLUTTER = 1e-300


@dataclass
class SensorModel:
    """Position sensor with optional field-of-view polygon and blind zones.

    Detection probability is zero outside the field of view and inside any
    blind zone. Clutter intensity is per square metre of visible area.
    """

    sensor_id: int = 0
    detection_prob: float = 0.85
    clutter_intensity: float = 1e-5
    measurement_noise: np.ndarray = field(default_factory=lambda: 0.25 * np.eye(2))
    field_of_view: Sequence | None = None
    blind_zones: Sequence = ()
    position: tuple[float, float] | None = None

    def __post_init__(self):
        if not 0.0 <= self.detection_prob <= 1.0:
            raise ValueError("detection probability must lie in [0, 1]")
        if self.clutter_intensity < 0:
            raise ValueError("clutter intensity must be non-negative")
        self.measurement_noise = np.asarray(self.measurement_noise, dtype=float)
        region = Polygon(self.field_of_view) if self.field_of_view is not None else None
        blind = [Polygon(b) for b in self.blind_zones]
        if blind:
            hole = shapely.union_all(blind)
            self._blind = hole
            if region is not None:
                region = region.difference(hole)
        else:
            self._blind = None
        self._region = region

    @property
    def region(self):
        """Visible area as a shapely geometry, or None for the full plane."""
        return self._region

    def detection_prob_at(self, xy) -> np.ndarray:
        p = np.atleast_2d(np.asarray(xy, dtype=float))
        pd = np.full(len(p), self.detection_prob)
        if self._region is not None:
            pd[~shapely.contains_xy(self._region, p[:, 0], p[:, 1])] = 0.0
        elif self._blind is not None:
            pd[shapely.contains_xy(self._blind, p[:, 0], p[:, 1])] = 0.0
        return pd

    def to_dict(self) -> dict:
        return {
            "sensor_id": self.sensor_id,
            "detection_prob": self.detection_prob,
            "clutter_intensity": self.clutter_intensity,
            "measurement_noise": self.measurement_noise.tolist(),
            "field_of_view": None if self.field_of_view is None else [list(p) for p in self.field_of_view],
            "blind_zones": [[list(p) for p in b] for b in self.blind_zones],
            "position": None if self.position is None else list(self.position),
        }


@dataclass(frozen=True)
class MeasurementScan:
    timestamp: float
    sensor_id: int
    measurements: np.ndarray
    is_clutter: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        z = np.asarray(self.measurements, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "measurements", z)


@dataclass(frozen=True)
class BirthLocation:
    mean: np.ndarray
    covariance: np.ndarray
    existence: float

    def __post_init__(self):
        if not 0.0 < self.existence < 1.0:
            raise ValueError("birth existence must lie in (0, 1)")


@dataclass(frozen=True)
class BirthModel:
    """Static birth regions and/or measurement-driven births.

    Measurement-driven births place ``heading_components`` Gaussians with
    evenly spaced headings at every poorly explained measurement.
    """

    mode: str = "measurement-driven"
    locations: tuple[BirthLocation, ...] = ()
    existence: float = 0.05
    speed_mean: float = 8.0
    speed_std: float = 4.0
    heading_components: int = 8
    turn_rate_std: float = 0.2
    min_existence: float = 0.01

    def __post_init__(self):
        if self.mode not in ("static-regions", "measurement-driven"):
            raise ValueError(f"unknown birth mode {self.mode!r}")
        if not 0.0 < self.existence < 1.0:
            raise ValueError("birth existence must lie in (0, 1)")

    def measurement_density(self, z: np.ndarray, meas_cov: np.ndarray) -> GaussianMixture:
        k = self.heading_components
        headings = wrap_angle(2.0 * math.pi * np.arange(k) / k)
        means = np.zeros((k, STATE_DIM))
        means[:, :2] = z
        means[:, 2] = self.speed_mean
        means[:, PHI] = headings
        cov = np.zeros((STATE_DIM, STATE_DIM))
        cov[:2, :2] = meas_cov
        cov[2, 2] = self.speed_std**2
        cov[PHI, PHI] = (math.pi / k) ** 2
        cov[4, 4] = self.turn_rate_std**2
        return GaussianMixture(np.full(k, 1.0 / k), means, np.repeat(cov[None], k, axis=0))


@dataclass(frozen=True)
class FilterConfig:
    survival_prob: float | Callable = 0.99
    extraction_threshold: float = 0.2
    prune_threshold: float = 0.01
    noise: ProcessNoise = ProcessNoise()
    prediction: PredictionSettings = PredictionSettings()
    birth: BirthModel = BirthModel()
    gate_threshold: float = 13.8
    hypothesis_cap: int = 100

    def __post_init__(self):
        if not 0.0 < self.prune_threshold < self.extraction_threshold < 1.0:
            raise ValueError("need 0 < prune_threshold < extraction_threshold < 1")


class Estimate(NamedTuple):
    label: Label
    state: np.ndarray
    covariance: np.ndarray
    existence: float


def _survival(config: FilterConfig, track: BernoulliTrack) -> float:
    ps = config.survival_prob
    if callable(ps):
        best = track.density.best()
        return float(ps(track.density.means[best], track.label))
    return float(ps)


def leader_snapshot(density: LmbDensity, road_map: RoadMap | None) -> list[LeaderCandidate]:
    """Highest-weight mean of every track, with the rectangles it lies in."""
    out = []
    for t in density:
        mean = t.density.means[t.density.best()]
        rects = road_map.rectangles_containing(mean[:2]) if road_map is not None else frozenset()
        out.append(LeaderCandidate(t.label, mean, t.existence, rects))
    return out


MotionModel = Callable[[GaussianMixture, PredictionContext], GaussianMixture]


def standard_motion(mixture: GaussianMixture, ctx: PredictionContext) -> GaussianMixture:
    """Unadapted unscented CTRV prediction, ignoring map, leaders and flags."""
    return ukf_ctrv_predict_mixture(mixture, ctx.noise, ctx.T, ctx.settings.kappa)


def _predict_mixture(mixture: GaussianMixture, ctx: PredictionContext, settings: PredictionSettings,
                     motion: MotionModel = predict_mixture) -> GaussianMixture:
    return reduce_mixture(motion(mixture, ctx), settings.merge_distance,
                          settings.max_components, settings.prune_weight)


def predict(density: LmbDensity, births: Iterable[tuple[GaussianMixture, float]], config: FilterConfig,
            T: float, road_map: RoadMap | None = None, idm: IdmParams = IdmParams(),
            stats: Counter | None = None, motion: MotionModel = predict_mixture) -> LmbDensity:
    """Survival prediction of every track plus new birth tracks labelled with the new step.

    ``births`` are (mixture, existence) pairs already expressed at the new step.
    ``motion`` predicts one track's mixture; pass :func:`standard_motion` for
    the plain filter.
    """
    stats = Counter() if stats is None else stats
    k = density.timestamp + 1
    snapshot = leader_snapshot(density, road_map) if config.prediction.enable_interaction else []
    tracks = []
    for t in density:
        ctx = PredictionContext(T, config.noise, config.prediction, idm, road_map,
                                [c for c in snapshot if c.label != t.label], stats)
        mix = _predict_mixture(t.density, ctx, config.prediction, motion)
        r = min(1.0, _survival(config, t) * t.existence)
        tracks.append(BernoulliTrack(t.label, r, mix))
    for i, (mix, r) in enumerate(births):
        tracks.append(BernoulliTrack(Label(k, i), r, mix))
    return LmbDensity.from_tracks(tracks, k)


def _measurement_moments(mix: GaussianMixture, R: np.ndarray, kappa: float):
    """Unscented transform of each component through h(x) = (x, y)."""
    J = len(mix)
    n = STATE_DIM
    scaled = (n + kappa) * mix.covs
    try:
        L = np.linalg.cholesky(scaled)
    except np.linalg.LinAlgError:
        L = np.stack([_matrix_sqrt(P) for P in scaled])
    cols = np.swapaxes(L, 1, 2)  # (J, n, n): rows are sigma offsets
    offsets = np.concatenate([np.zeros((J, 1, n)), cols, -cols], axis=1)
    W = np.full(2 * n + 1, 0.5 / (n + kappa))
    W[0] = kappa / (n + kappa)
    zpts = mix.means[:, None, :2] + offsets[:, :, :2]
    zhat = np.einsum("i,jik->jk", W, zpts)
    dz = zpts - zhat[:, None, :]
    S = np.einsum("i,jik,jil->jkl", W, dz, dz) + R
    Pxz = np.einsum("i,jik,jil->jkl", W, offsets, dz)
    return zhat, symmetrize(S), Pxz


def _update(density: LmbDensity, scan: MeasurementScan, sensor: SensorModel,
            config: FilterConfig) -> tuple[LmbDensity, np.ndarray]:
    """LMB update; also returns each measurement's probability of being track-originated."""
    Z = scan.measurements
    m = len(Z)
    tracks = list(density)
    n = len(tracks)
    if n == 0:
        return density, np.zeros(m)
    R = sensor.measurement_noise
    log_kappa = math.log(max(sensor.clutter_intensity, _MIN_CLUTTER))
    kappa_ut = config.prediction.kappa

    per_track = []
    log_eta = np.full((n, m + 1), -np.inf)
    gated = np.zeros((n, m), dtype=bool)
    pd = sensor.detection_prob_at(np.array([t.density.means[t.density.best()][:2] for t in tracks]))
    for i, t in enumerate(tracks):
        r = t.existence
        mix = t.density
        log_eta[i, 0] = math.log(max(1.0 - r * pd[i], 1e-300))
        if m == 0 or pd[i] == 0.0 or r == 0.0:
            per_track.append(None)
            continue
        zhat, S, Pxz = _measurement_moments(mix, R, kappa_ut)
        Sinv = np.linalg.inv(S)
        logdet = np.log(np.linalg.det(S))
        dz = Z[None, :, :] - zhat[:, None, :]  # (J, m, 2)
        maha = np.einsum("jmk,jkl,jml->jm", dz, Sinv, dz)
        logN = -0.5 * maha - 0.5 * logdet[:, None] - math.log(2.0 * math.pi)
        logq_c = np.log(np.maximum(mix.weights, 1e-300))[:, None] + logN
        logq = logsumexp(logq_c, axis=0)
        gated[i] = maha.min(axis=0) <= config.gate_threshold
        log_eta[i, 1:] = np.where(gated[i], math.log(r * pd[i]) + logq - log_kappa, -np.inf)
        per_track.append((zhat, S, Sinv, Pxz, dz, logq_c, logq))

    marg = np.zeros((n, m + 1))
    for tr, ms in gate_groups(gated):
        if len(ms) == 0:
            marg[tr, 0] = 1.0
            continue
        sub = log_eta[np.ix_(tr, np.concatenate([[0], ms + 1]))]
        sub_marg = association_marginals(sub, config.hypothesis_cap)
        marg[np.ix_(tr, [0])] = sub_marg[:, :1]
        marg[np.ix_(tr, ms + 1)] = sub_marg[:, 1:]

    st = config.prediction
    new_tracks = []
    for i, t in enumerate(tracks):
        r, mix = t.existence, t.density
        a = marg[i]
        rho_miss = r * (1.0 - pd[i]) / max(1.0 - r * pd[i], 1e-300)
        r_new = a[0] * rho_miss + a[1:].sum()
        if r_new <= 0.0 or per_track[i] is None:
            new_tracks.append(BernoulliTrack(t.label, float(np.clip(r_new, 0.0, 1.0)), mix))
            continue
        zhat, S, Sinv, Pxz, dz, logq_c, logq = per_track[i]
        ws, ms_, Ps = [mix.weights * (a[0] * rho_miss)], [mix.means], [mix.covs]
        K = np.einsum("jkl,jlm->jkm", Pxz, Sinv)  # (J, 5, 2)
        P_post = symmetrize(mix.covs - np.einsum("jkl,jlm,jnm->jkn", K, S, K))
        for j in np.flatnonzero(a[1:] > 1e-12):
            post_w = np.exp(logq_c[:, j] - logq[j]) * a[j + 1]
            mean = mix.means + np.einsum("jkl,jl->jk", K, dz[:, j, :])
            mean[:, PHI] = wrap_angle(mean[:, PHI])
            ws.append(post_w)
            ms_.append(mean)
            Ps.append(P_post)
        w = np.concatenate(ws)
        post = GaussianMixture(w, np.concatenate(ms_), np.concatenate(Ps))
        post = reduce_mixture(post, st.merge_distance, st.max_components, st.prune_weight)
        new_tracks.append(BernoulliTrack(t.label, float(np.clip(r_new, 0.0, 1.0)), post))
    return LmbDensity.from_tracks(new_tracks, density.timestamp), marg[:, 1:].sum(axis=0)


def update(density: LmbDensity, scan: MeasurementScan, sensor: SensorModel, config: FilterConfig = FilterConfig()) -> LmbDensity:
    """Standard GM-LMB measurement update for a position sensor."""
    return _update(density, scan, sensor, config)[0]


def extract(density: LmbDensity, threshold: float = 0.2) -> list[Estimate]:
    out = []
    for t in sorted(density, key=lambda t: t.label):
        if t.existence > threshold:
            j = t.density.best()
            out.append(Estimate(t.label, t.density.means[j].copy(), t.density.covs[j].copy(), t.existence))
    return out


def prune(density: LmbDensity, threshold: float = 0.01) -> LmbDensity:
    return LmbDensity({l: t for l, t in density.tracks.items() if t.existence >= threshold}, density.timestamp)


class LmbFilter:
    """Stateful predict/update pipeline around the pure filter functions."""

    def __init__(self, config: FilterConfig = FilterConfig(), road_map: RoadMap | None = None,
                 idm: IdmParams = IdmParams(), sample_time: float = 0.1, motion: MotionModel = predict_mixture):
        self.config = config
        self.motion = motion
        self.road_map = road_map
        self.idm = idm
        self.sample_time = sample_time
        self.density = LmbDensity({}, 0)
        self.stats: Counter = Counter()
        self._pending: list[tuple[GaussianMixture, float]] = []
        self._started = False

    def _births(self, T: float) -> list[tuple[GaussianMixture, float]]:
        births = []
        cfg = self.config
        if self._pending:
            # measurement-driven births sit at the previous step; carry them forward
            ctx = PredictionContext(T, cfg.noise, cfg.prediction, self.idm, self.road_map,
                                    leader_snapshot(self.density, self.road_map) if cfg.prediction.enable_interaction else [],
                                    self.stats)
            births = [(_predict_mixture(mix, ctx, cfg.prediction, self.motion), r) for mix, r in self._pending]
        for loc in cfg.birth.locations:
            births.append((GaussianMixture.single(loc.mean, loc.covariance), loc.existence))
        self._pending = []
        return births

    def predict(self, T: float | None = None) -> LmbDensity:
        T = self.sample_time if T is None else T
        if not self._started:
            self._started = True
            births = [(GaussianMixture.single(l.mean, l.covariance), l.existence) for l in self.config.birth.locations]
            self.density = LmbDensity.from_tracks(
                [BernoulliTrack(Label(0, i), r, mix) for i, (mix, r) in enumerate(births)], 0)
            return self.density
        self.density = predict(self.density, self._births(T), self.config, T, self.road_map, self.idm, self.stats,
                               self.motion)
        return self.density

    def update(self, scan: MeasurementScan, sensor: SensorModel) -> LmbDensity:
        self.density, assoc = _update(self.density, scan, sensor, self.config)
        birth = self.config.birth
        if birth.mode == "measurement-driven":
            for z, p in zip(scan.measurements, assoc):
                r = birth.existence * (1.0 - min(p, 1.0))
                if r >= birth.min_existence:
                    self._pending.append((birth.measurement_density(z, sensor.measurement_noise), r))
        return self.density

    def step(self, scans: Iterable[MeasurementScan], sensors: dict[int, SensorModel],
             T: float | None = None) -> list[Estimate]:
        """Predict, apply scans in (timestamp, sensor id) order, prune, extract."""
        self.predict(T)
        for scan in sorted(scans, key=lambda s: (s.timestamp, s.sensor_id)):
            self.update(scan, sensors[scan.sensor_id])
        self.density = prune(self.density, self.config.prune_threshold)
        return extract(self.density, self.config.extraction_threshold)


def density_to_json(density: LmbDensity) -> str:
    doc = {
        "timestamp": density.timestamp,
        "tracks": [
            {
                "label": [t.label.birth_time, t.label.birth_index],
                "existence": t.existence,
                "components": [
                    {"weight": float(w), "mean": m.tolist(), "covariance": P.tolist()}
                    for w, m, P in zip(t.density.weights, t.density.means, t.density.covs)
                ],
            }
            for t in sorted(density, key=lambda t: t.label)
        ],
    }
    return json.dumps(doc)


def density_from_json(text: str) -> LmbDensity:
    doc = json.loads(text)
    tracks = []
    for t in doc["tracks"]:
        comps = t["components"]
        mix = GaussianMixture(
            np.array([c["weight"] for c in comps]),
            np.array([c["mean"] for c in comps]),
            np.array([c["covariance"] for c in comps]),
        )
        tracks.append(BernoulliTrack(Label(*t["label"]), t["existence"], mix))
    return LmbDensity.from_tracks(tracks, doc["timestamp"])
