import itertools
import math

import numpy as np
import pytest

from roadlmb.association import (
    association_marginals,
    enumerate_hypotheses,
    gate_groups,
    murty_k_best,
    ranked_hypotheses,
)


def random_scores(rng, n, m, forbid=0.0):
    log_eta = rng.normal(size=(n, m + 1))
    mask = rng.uniform(size=(n, m)) < forbid
    log_eta[:, 1:][mask] = -np.inf
    return log_eta


def brute_force(log_eta):
    n, mp1 = log_eta.shape
    out = {}
    for assign in itertools.product(range(mp1), repeat=n):
        used = [j for j in assign if j]
        if len(used) != len(set(used)):
            continue
        w = sum(log_eta[i, j] for i, j in enumerate(assign))
        if np.isfinite(w):
            out[assign] = w
    return out


def test_gate_groups_examples():
    gated = np.array([
        [1, 0, 0, 0],
        [1, 1, 0, 0],
        [0, 0, 0, 0],
        [0, 0, 1, 0],
    ], dtype=bool)
    groups = gate_groups(gated)
    as_sets = sorted((tuple(t), tuple(m)) for t, m in groups)
    assert as_sets == [((0, 1), (0, 1)), ((2,), ()), ((3,), (2,))]


def test_gate_groups_transitive_chain():
    gated = np.zeros((4, 3), dtype=bool)
    gated[0, 0] = gated[1, 0] = gated[1, 1] = gated[2, 1] = gated[2, 2] = gated[3, 2] = True
    (group,) = gate_groups(gated)
    assert group[0].tolist() == [0, 1, 2, 3] and group[1].tolist() == [0, 1, 2]


def test_gate_groups_cover_every_track_once():
    rng = np.random.default_rng(2)
    for _ in range(50):
        gated = rng.uniform(size=(6, 5)) < 0.2
        tracks = np.concatenate([t for t, _ in gate_groups(gated)])
        assert sorted(tracks.tolist()) == list(range(6))


def test_enumeration_matches_brute_force():
    rng = np.random.default_rng(0)
    for n, m in [(1, 0), (1, 3), (2, 2), (3, 3), (3, 1)]:
        log_eta = random_scores(rng, n, m, forbid=0.3)
        got = dict(enumerate_hypotheses(log_eta))
        want = brute_force(log_eta)
        assert got.keys() == want.keys()
        for k in want:
            assert got[k] == pytest.approx(want[k])


def test_murty_agrees_with_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(20):
        log_eta = random_scores(rng, 4, 4, forbid=0.25)
        full = sorted(enumerate_hypotheses(log_eta), key=lambda h: -h[1])
        best = murty_k_best(log_eta, 10)
        assert len(best) == min(10, len(full))
        assert np.allclose([h[1] for h in best], [h[1] for h in full[: len(best)]])
        assert len({h[0] for h in best}) == len(best)


def test_ranked_switches_to_murty_when_large(monkeypatch):
    import roadlmb.association as assoc

    rng = np.random.default_rng(3)
    log_eta = random_scores(rng, 3, 3)
    monkeypatch.setattr(assoc, "ENUMERATION_LIMIT", 1)
    top = ranked_hypotheses(log_eta, 5)
    full = sorted(enumerate_hypotheses(log_eta), key=lambda h: -h[1])
    assert np.allclose([h[1] for h in top], [h[1] for h in full[:5]])


def test_marginals_rows_sum_to_one():
    rng = np.random.default_rng(4)
    log_eta = random_scores(rng, 3, 4, forbid=0.3)
    marg = association_marginals(log_eta, cap=1000)
    assert np.allclose(marg.sum(axis=1), 1.0)
    assert np.all(marg[:, 1:].sum(axis=0) <= 1.0 + 1e-12)
    assert np.all(marg[np.isinf(log_eta)] == 0.0)


def test_marginals_single_track_closed_form():
    # one track, two measurements: weights proportional to exp(score)
    log_eta = np.log(np.array([[0.2, 0.5, 0.3]]))
    assert np.allclose(association_marginals(log_eta), [[0.2, 0.5, 0.3]])


def test_no_admissible_hypothesis():
    with pytest.raises(ValueError):
        association_marginals(np.full((1, 2), -np.inf))


def test_marginals_two_tracks_one_measurement():
    a, b = 0.7, 0.4
    # both may claim the single measurement, never together
    log_eta = np.log(np.array([[1 - a, a], [1 - b, b]]))
    w = {(0, 0): (1 - a) * (1 - b), (1, 0): a * (1 - b), (0, 1): (1 - a) * b}
    total = sum(w.values())
    marg = association_marginals(log_eta)
    assert marg[0, 1] == pytest.approx(w[(1, 0)] / total)
    assert marg[1, 1] == pytest.approx(w[(0, 1)] / total)
    assert math.isclose(marg[0, 0] + marg[0, 1], 1.0)
