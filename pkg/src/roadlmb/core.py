"""Labeled multi-Bernoulli densities and Gaussian mixtures over CTRV states.

State vectors are 5-element float arrays ``[x, y, v, phi, omega]``; the
index constants below name the slots. Mixtures keep their components in
stacked arrays so the prediction and update code can vectorize over them.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, NamedTuple

import numpy as np

X, Y, V, PHI, OMEGA = range(5)
STATE_DIM = 5

_LOG_2PI = math.log(2.0 * math.pi)


class DegenerateMixtureError(ValueError):
    """Raised when a mixture has no positive weight to normalize."""


class SingularCovarianceError(ValueError):
    """Raised when a covariance cannot be factorized even after jitter."""


def wrap_angle(angle):
    """Wrap angles to the half-open interval (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(angle, dtype=float), 2.0 * np.pi)


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + np.swapaxes(P, -1, -2))


@dataclass(frozen=True)
class StateVector:
    x: float
    y: float
    v: float
    phi: float
    omega: float

    def __post_init__(self):
        object.__setattr__(self, "phi", float(wrap_angle(self.phi)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.v, self.phi, self.omega])

    @classmethod
    def from_array(cls, a) -> "StateVector":
        a = np.asarray(a, dtype=float)
        return cls(*map(float, a[:STATE_DIM]))


class Label(NamedTuple):
    """Track label: the step a track was born at and its index in that birth set."""

    birth_time: int
    birth_index: int

    def __str__(self) -> str:
        return f"{self.birth_time}:{self.birth_index}"


@dataclass(frozen=True)
class GaussianComponent:
    weight: float
    mean: np.ndarray
    covariance: np.ndarray


@dataclass(frozen=True)
class GaussianMixture:
    """Weighted sum of Gaussians, stored as stacked arrays.

    ``weights`` has shape (J,), ``means`` (J, 5), ``covs`` (J, 5, 5).
    """

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        m = np.atleast_2d(np.asarray(self.means, dtype=float))
        P = np.asarray(self.covs, dtype=float)
        if P.ndim == 2:
            P = P[None]
        if not (len(w) == len(m) == len(P)):
            raise ValueError("weights, means and covs must have the same length")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "covs", P)

    @classmethod
    def single(cls, mean, cov, weight: float = 1.0) -> "GaussianMixture":
        return cls(np.array([weight]), np.asarray(mean, dtype=float)[None], np.asarray(cov, dtype=float)[None])

    @classmethod
    def from_components(cls, components: Iterable[GaussianComponent]) -> "GaussianMixture":
        comps = list(components)
        if not comps:
            raise DegenerateMixtureError("mixture needs at least one component")
        return cls(
            np.array([c.weight for c in comps]),
            np.stack([np.asarray(c.mean, dtype=float) for c in comps]),
            np.stack([np.asarray(c.covariance, dtype=float) for c in comps]),
        )

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def components(self) -> list[GaussianComponent]:
        return [GaussianComponent(float(w), m, P) for w, m, P in zip(self.weights, self.means, self.covs)]

    def best(self) -> int:
        """Index of the highest-weight component."""
        return int(np.argmax(self.weights))


@dataclass(frozen=True)
class BernoulliTrack:
    label: Label
    existence: float
    density: GaussianMixture

    def __post_init__(self):
        if not 0.0 <= self.existence <= 1.0:
            raise ValueError(f"existence {self.existence} outside [0, 1]")


@dataclass(frozen=True)
class LmbDensity:
    tracks: Mapping[Label, BernoulliTrack] = field(default_factory=dict)
    timestamp: int = 0

    def __iter__(self) -> Iterator[BernoulliTrack]:
        return iter(self.tracks.values())

    def __len__(self) -> int:
        return len(self.tracks)

    @classmethod
    def from_tracks(cls, tracks: Iterable[BernoulliTrack], timestamp: int = 0) -> "LmbDensity":
        d = {}
        for t in tracks:
            if t.label in d:
                raise ValueError(f"duplicate label {t.label}")
            d[t.label] = t
        return cls(d, timestamp)


def lmb_set_weight(density: LmbDensity, label_set: Iterable[Label]) -> float:
    """Probability that exactly the tracks in ``label_set`` exist.

    Evaluated in the division-free form prod_{i not in L}(1 - r_i) * prod_{l in L} r_l,
    which equals the usual ratio form and stays exact at r = 0 or r = 1.
    """
    labels = set(label_set)
    if not labels <= set(density.tracks):
        return 0.0
    w = 1.0
    for label, track in density.tracks.items():
        w *= track.existence if label in labels else 1.0 - track.existence
    return w


def enumerate_set_weights(density: LmbDensity) -> dict[frozenset, float]:
    """w(L) for every subset L of the density's labels (exponential; small densities only)."""
    labels = list(density.tracks)
    out = {}
    for k in range(len(labels) + 1):
        for subset in itertools.combinations(labels, k):
            out[frozenset(subset)] = lmb_set_weight(density, subset)
    return out


def _cholesky_regularized(P: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(P + 1e-9 * np.eye(P.shape[-1]))
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError("covariance is not positive definite") from exc


def gaussian_logpdf(x: np.ndarray, mean: np.ndarray, cov: np.ndarray, angle_index: int | None = PHI) -> float:
    d = np.asarray(x, dtype=float) - mean
    if angle_index is not None:
        d[angle_index] = wrap_angle(d[angle_index])
    L = _cholesky_regularized(cov)
    z = np.linalg.solve(L, d)
    return float(-0.5 * (z @ z) - np.log(np.diag(L)).sum() - 0.5 * len(d) * _LOG_2PI)


def evaluate_mixture(mixture: GaussianMixture, state) -> float:
    """Mixture density at ``state``; heading residuals are wrapped before the quadratic form."""
    x = state.as_array() if isinstance(state, StateVector) else np.asarray(state, dtype=float)
    total = 0.0
    for w, m, P in zip(mixture.weights, mixture.means, mixture.covs):
        total += w * math.exp(gaussian_logpdf(x, m, P))
    return total


def normalize_mixture(mixture: GaussianMixture) -> GaussianMixture:
    total = mixture.weights.sum()
    if not total > 0.0:
        raise DegenerateMixtureError("cannot normalize a mixture with zero total weight")
    return GaussianMixture(mixture.weights / total, mixture.means, mixture.covs)


def reduce_mixture(
    mixture: GaussianMixture,
    merge_distance: float = 0.1,
    max_components: int = 12,
    prune_weight: float = 1e-4,
) -> GaussianMixture:
    """Prune, merge and cap a mixture, returning it normalized.

    Components below ``prune_weight`` (relative to the total) are dropped unless
    that would empty the mixture. Greedy merging starts from the heaviest
    component and absorbs every component within Mahalanobis distance
    ``merge_distance`` of it (moment matched, heading residuals wrapped). The
    result keeps at most ``max_components`` of the heaviest components.
    """
    mixture = normalize_mixture(mixture)
    w, m, P = mixture.weights, mixture.means, mixture.covs
    keep = w >= prune_weight
    if keep.any() and not keep.all():
        w, m, P = w[keep], m[keep], P[keep]
    if len(w) == 1:
        return GaussianMixture(w / w.sum(), m, P)

    order = np.argsort(-w, kind="stable")
    w, m, P = w[order], m[order], P[order]
    try:
        Pinv = np.linalg.inv(P)
    except np.linalg.LinAlgError:
        Pinv = np.linalg.pinv(P, hermitian=True)
    D = m[None, :, :] - m[:, None, :]  # D[j, i] = m_i - m_j
    D[:, :, PHI] = wrap_angle(D[:, :, PHI])
    maha2 = np.einsum("jik,jkl,jil->ji", D, Pinv, D)
    near = maha2 <= merge_distance**2
    if np.count_nonzero(near) == len(w):
        # nothing to merge
        k = min(len(w), max_components)
        return GaussianMixture(w[:k] / w[:k].sum(), m[:k], P[:k])
    np.fill_diagonal(near, True)
    remaining = np.ones(len(w), dtype=bool)
    out_w, out_m, out_P = [], [], []
    for j in range(len(w)):
        if not remaining[j]:
            continue
        close = np.flatnonzero(remaining & near[j])
        remaining[close] = False
        if len(close) == 1:
            out_w.append(w[j])
            out_m.append(m[j])
            out_P.append(P[j])
        else:
            wc = w[close]
            ws = wc.sum()
            dc = D[j, close]
            mean_off = (wc[:, None] * dc).sum(axis=0) / ws
            mean = m[j] + mean_off
            mean[PHI] = wrap_angle(mean[PHI])
            r = dc - mean_off
            cov = (wc[:, None, None] * (P[close] + r[:, :, None] * r[:, None, :])).sum(axis=0) / ws
            out_w.append(ws)
            out_m.append(mean)
            out_P.append(symmetrize(cov))
        if len(out_w) == max_components:
            break
    w = np.array(out_w)
    return GaussianMixture(w / w.sum(), np.stack(out_m), np.stack(out_P))
