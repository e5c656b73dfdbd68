import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roadlmb.core import GaussianComponent, GaussianMixture, Label, StateVector, reduce_mixture, wrap_angle
from roadlmb.idm import IdmParams, desired_gap
from roadlmb.motion import (
    LeaderCandidate,
    PredictionContext,
    PredictionSettings,
    ProcessNoise,
    adapt_turn_rate,
    adapt_velocity,
    apply_process_noise,
    ctrv_transition,
    find_leader,
    generate_sigma_points,
    predict_component,
    predict_mixture,
    recombine,
    ukf_ctrv_predict,
    ukf_ctrv_predict_mixture,
)
from roadlmb.roadmap import Rectangle, RoadMap, build_map
from roadlmb.scenarios import arc

P0 = np.diag([0.3, 0.3, 0.8, 0.02, 0.01])


# ---------------------------------------------------------------- CTRV

def test_ctrv_straight():
    out = ctrv_transition(np.array([0, 0, 10, 0, 0.0]), 1.0)
    assert np.allclose(out, [10, 0, 10, 0, 0])


def test_ctrv_quarter_turn(frozen):
    out = ctrv_transition(np.array([0, 0, 10, 0, math.pi / 2]), 1.0)
    assert np.allclose(out[[0, 1, 3]], frozen["closed_forms"]["ctrv_quarter_turn"], atol=1e-12)
    assert out[2] == 10 and out[4] == math.pi / 2


def test_ctrv_limit_consistency():
    a = ctrv_transition(np.array([0, 0, 30, 0.3, 1e-5]), 0.1)
    b = ctrv_transition(np.array([0, 0, 30, 0.3, 1e-3]), 0.1)
    assert np.hypot(*(a[:2] - b[:2])) < 1e-3


def test_ctrv_accepts_state_vector_and_batches():
    sv = ctrv_transition(StateVector(0, 0, 10, 0, 0), 0.5)
    assert isinstance(sv, StateVector) and sv.x == pytest.approx(5.0)
    batch = ctrv_transition(np.array([[0, 0, 1, 0, 0], [0, 0, 2, 0, 0.0]]), 1.0)
    assert np.allclose(batch[:, 0], [1, 2])


@given(st.floats(0, 40), st.floats(-math.pi, math.pi), st.floats(-1, 1), st.floats(0.01, 1.0))
@settings(max_examples=100)
def test_ctrv_preserves_speed_and_turn_rate(v, phi, w, T):
    out = ctrv_transition(np.array([1.0, 2.0, v, phi, w]), T)
    assert out[2] == v and out[4] == w
    assert -math.pi < out[3] <= math.pi


# ---------------------------------------------------------------- sigma points

def test_sigma_weights(frozen):
    sp = generate_sigma_points(np.zeros(5), P0, ProcessNoise(), kappa=2.0)
    w0, wi = frozen["closed_forms"]["sigma_weights_kappa2"]
    assert sp.points.shape == (15, 7) and sp.n == 7
    assert sp.weights[0] == pytest.approx(w0, abs=1e-15)
    assert np.allclose(sp.weights[1:], wi, atol=1e-15)
    assert sp.weights.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.array_equal(sp.points[0], np.zeros(7))


def test_sigma_zero_spread():
    m = np.array([1, 2, 3, 0.4, 0.1])
    sp = generate_sigma_points(m, np.zeros((5, 5)), ProcessNoise(0, 0))
    assert np.allclose(sp.points[:, :5], m)


def test_sigma_identity_recombine():
    m = np.array([1, 2, 3, 0.4, 0.1])
    sp = generate_sigma_points(m, P0, ProcessNoise(0, 0))
    mean, cov = recombine(sp.points[:, :5], sp.weights)
    assert np.allclose(mean, m, atol=1e-12) and np.allclose(cov, P0, atol=1e-12)


def test_sigma_rejects_bad_kappa():
    with pytest.raises(ValueError):
        generate_sigma_points(np.zeros(5), P0, ProcessNoise(), kappa=-7.0)


def test_negative_kappa_weights_still_sum_to_one():
    sp = generate_sigma_points(np.zeros(5), P0, ProcessNoise(), kappa=-2.0)
    assert sp.weights[0] < 0 and sp.weights.sum() == pytest.approx(1.0)


def test_process_noise_examples():
    p = np.zeros(7)
    assert np.array_equal(apply_process_noise(p, 0.1), np.zeros(5))
    p[5] = 5.0
    assert apply_process_noise(p, 0.1)[2] == pytest.approx(0.5)
    p[5], p[6] = 0.0, 0.1
    assert apply_process_noise(p, 0.1)[4] == pytest.approx(0.01)


def test_recombine_identical_points():
    pts = np.tile([1, 2, 3, 0.5, 0.1], (15, 1))
    _, cov = recombine(pts, np.full(15, 1 / 15))
    assert np.array_equal(cov, np.zeros((5, 5)))


def test_recombine_circular_mean():
    pts = np.zeros((2, 5))
    pts[:, 3] = [3.1, -3.1]
    mean, cov = recombine(pts, [0.5, 0.5])
    assert abs(abs(mean[3]) - math.pi) < 1e-9
    assert cov[3, 3] == pytest.approx((2 * math.pi - 6.2) ** 2 / 4)


def test_recombine_symmetric():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(15, 5))
    _, cov = recombine(pts, np.full(15, 1 / 15))
    assert np.array_equal(cov, cov.T)


# ---------------------------------------------------------------- leaders and velocity

def ctx_with(leaders=(), **kw):
    return PredictionContext(0.1, settings=PredictionSettings(**kw), leaders=list(leaders))


def test_find_leader_examples():
    me = np.array([0, 0, 10, 0, 0.0])
    assert find_leader(me, frozenset(), ctx_with()) is None
    ahead = LeaderCandidate(Label(0, 1), np.array([30, 0, 8, 0, 0.0]), 0.9)
    lead = find_leader(me, frozenset(), ctx_with([ahead]))
    assert lead.label == Label(0, 1) and lead.gap == pytest.approx(30.0)
    behind = LeaderCandidate(Label(0, 2), np.array([-30, 0, 8, 0, 0.0]), 0.9)
    assert find_leader(me, frozenset(), ctx_with([behind])) is None


def test_find_leader_filters():
    me = np.array([0, 0, 10, 0, 0.0])
    weak = LeaderCandidate(Label(0, 1), np.array([30, 0, 8, 0, 0.0]), 0.3)
    side = LeaderCandidate(Label(0, 2), np.array([30, 6, 8, 0, 0.0]), 0.9)
    far = LeaderCandidate(Label(0, 3), np.array([150, 0, 8, 0, 0.0]), 0.9)
    assert find_leader(me, frozenset(), ctx_with([weak, side, far])) is None
    near = LeaderCandidate(Label(0, 4), np.array([20, 0, 8, 0, 0.0]), 0.9)
    mid = LeaderCandidate(Label(0, 5), np.array([40, 0, 8, 0, 0.0]), 0.9)
    assert find_leader(me, frozenset(), ctx_with([mid, near])).label == Label(0, 4)


def test_find_leader_on_map():
    m = build_map({"lane": {"points": [(x, 0) for x in range(0, 101, 10)]}}, tolerance=0.1)
    # collinear points collapse to a single rectangle; split it into a chain
    m = RoadMap.from_rectangles([Rectangle(i, (5 + 10 * i, 0), 10, 3.5, 0, (i + 1,) if i < 9 else ()) for i in range(10)])
    me = np.array([5, 0, 10, 0, 0.0])
    cand = lambda x, y, lab: LeaderCandidate(Label(0, lab), np.array([x, y, 8, 0, 0.0]), 0.9,
                                             m.rectangles_containing((x, y)))
    ctx = PredictionContext(0.1, road_map=m, leaders=[cand(25, 0, 1)])
    assert find_leader(me, m.rectangles_containing(me[:2]), ctx).gap == pytest.approx(20)
    # beyond the successor lookahead (3 hops)
    ctx = PredictionContext(0.1, road_map=m, leaders=[cand(55, 0, 2)])
    assert find_leader(me, m.rectangles_containing(me[:2]), ctx) is None


def test_adapt_velocity_examples():
    idm = IdmParams()
    v = 12.0
    s = desired_gap(v, 0.0, idm)
    lead = np.array([s, 0, v, 0, 0])
    out = adapt_velocity(np.array([0, 0, v, 0, 0.0]), lead, idm, 0.1)
    assert out[2] == pytest.approx(v - 0.073)
    lead_far = np.array([10 * s, 0, v, 0, 0])
    out = adapt_velocity(np.array([0, 0, v, 0, 0.0]), lead_far, idm, 0.1)
    assert out[2] == pytest.approx(v - 0.073 / 100)
    out = adapt_velocity(np.array([0, 0, 0.0, 0, 0.0]), np.array([3, 0, 0, 0, 0.0]), idm, 0.1)
    assert out[2] == 0.0


def test_adapt_velocity_caps_deceleration_and_skips_passed_leader():
    idm = IdmParams()
    stats = Counter()
    pts = np.array([[0, 0, 20, 0, 0.0], [10, 0, 20, 0, 0.0]])
    out = adapt_velocity(pts, np.array([0.5, 0, 0, 0, 0]), idm, 0.1, max_decel=9.81, stats=stats)
    assert out[0, 2] == pytest.approx(20 - 0.981)
    assert out[1, 2] == 20  # leader behind this point
    assert stats["velocity_skipped"] == 1


@given(st.floats(0, 40), st.floats(0, 40), st.floats(0.5, 150))
@settings(max_examples=100)
def test_adapt_velocity_never_increases(v, vl, gap):
    out = adapt_velocity(np.array([0, 0, v, 0, 0.0]), np.array([gap, 0, vl, 0, 0]), IdmParams(), 0.1)
    assert 0.0 <= out[2] <= v


# ---------------------------------------------------------------- turn rate

RECT = Rectangle(0, (10, 0), 40, 3.5, 0.0)


def test_turn_rate_aligned():
    out = adapt_turn_rate(np.array([0, 0, 10, 0, 0.3]), RECT, 0.1)
    assert out[4] == 0.0


def test_turn_rate_example(frozen):
    # u = 0 at the centre, s = 20 m to the downstream edge
    out = adapt_turn_rate(np.array([10, 0, 10, -0.2, 0.0]), RECT, 0.1)
    assert out[4] == pytest.approx(frozen["closed_forms"]["turn_rate_0.2_10_20"])


def test_turn_rate_wraps():
    out = adapt_turn_rate(np.array([10, 0, 10, 2 * math.pi, 0.0]), RECT, 0.1)
    assert out[4] == pytest.approx(0.0, abs=1e-12)


def test_turn_rate_skips_slow_points_and_clamps():
    stats = Counter()
    out = adapt_turn_rate(np.array([[10, 0, 0.3, 1.0, 0.2], [29.9, 0, 10, 1.5, 0.0]]), RECT, 0.1, stats=stats)
    assert out[0, 4] == 0.2 and stats["turn_rate_skipped"] == 1
    assert out[1, 4] == -1.0


# ---------------------------------------------------------------- component prediction

def straight_map():
    return RoadMap.from_rectangles([Rectangle(i, (50 + 100 * i, 0), 100, 3.5, 0, (i + 1,) if i < 2 else ()) for i in range(3)])


def test_no_op_equivalence_on_straight_road():
    m = straight_map()
    # aligned heading with no heading or turn-rate spread: the turn-rate rule reproduces omega = 0 exactly
    comp = GaussianComponent(1.0, np.array([20, 0, 10, 0, 0.0]), np.diag([0.3, 0.3, 0.8, 0.0, 0.0]))
    ref = ukf_ctrv_predict(comp, ProcessNoise(q_v=5.0, q_omega=0.0), 0.1)
    ctx = PredictionContext(0.1, noise=ProcessNoise(q_v=5.0, q_omega=0.0),
                            settings=PredictionSettings(enable_interaction=True, enable_map=True), road_map=m)
    (out,) = predict_component(comp, ctx)
    assert np.allclose(out.mean, ref.mean, atol=1e-9) and np.allclose(out.covariance, ref.covariance, atol=1e-9)


def test_flags_off_is_bitwise_standard_prediction():
    rng = np.random.default_rng(2)
    means = np.column_stack([rng.normal(size=(4, 2)) * 10, rng.uniform(1, 15, 4), rng.uniform(-3, 3, 4), rng.normal(size=4) * 0.1])
    covs = np.stack([P0 * (1 + i) for i in range(4)])
    mix = GaussianMixture(np.array([0.1, 0.2, 0.3, 0.4]), means, covs)
    ctx = PredictionContext(0.1, road_map=straight_map(), leaders=[LeaderCandidate(Label(9, 9), means[0], 1.0)])
    a = predict_mixture(mix, ctx)
    b = ukf_ctrv_predict_mixture(mix, ProcessNoise(), 0.1)
    assert np.array_equal(a.weights, b.weights) and np.array_equal(a.means, b.means) and np.array_equal(a.covs, b.covs)


def fork_map():
    return build_map(
        {"in": {"points": [(0, 0), (20, 0)]}, "straight": {"points": [(20, 0), (40, 0)]},
         "left": {"points": [(20, 0), (34, 14)]}},
        [("in", "straight"), ("in", "left")],
    )


def test_intersection_split():
    m = fork_map()
    comp = GaussianComponent(0.6, np.array([21.0, 0.3, 8.0, 0.1, 0.0]), np.diag([0.2, 0.2, 0.5, 0.01, 0.01]))
    ctx = PredictionContext(0.1, settings=PredictionSettings(enable_map=True), road_map=m)
    out = predict_component(comp, ctx)
    assert len(out) == 2
    assert [c.weight for c in out] == [0.3, 0.3]
    assert sum(c.weight for c in out) == 0.6
    headings = sorted(c.mean[3] for c in out)
    assert headings[0] < 0.1 < headings[1]  # one copy turns toward 0, the other toward pi/4
    turn_rates = sorted(c.mean[4] for c in out)
    assert turn_rates[0] < 0 < turn_rates[1]


def test_split_weights_conserved_exactly():
    m = fork_map()
    for w in (1.0, 0.3, 1 / 3, 0.7):
        comp = GaussianComponent(w, np.array([21.0, 0.3, 8.0, 0.1, 0.0]), np.diag([0.2, 0.2, 0.5, 0.01, 0.01]))
        ctx = PredictionContext(0.1, settings=PredictionSettings(enable_map=True), road_map=m)
        assert sum(c.weight for c in predict_component(comp, ctx)) == w


def ring_map(radius=30.0):
    a = arc((0, 0), radius, -math.pi / 2, math.pi / 2)
    b = arc((0, 0), radius, math.pi / 2, 3 * math.pi / 2)
    return build_map({"a": {"points": a}, "b": {"points": b}}, [("a", "b"), ("b", "a")], tolerance=0.05)


def test_ring_heading_tracks_rectangles():
    m = ring_map()
    mean = np.array([0.0, -30.0, 10.0, 0.0, 0.0])
    mix = GaussianMixture.single(mean, np.diag([0.2, 0.2, 0.3, 0.01, 0.01]))
    ctx = PredictionContext(0.1, settings=PredictionSettings(enable_map=True), road_map=m)
    worst = 0.0
    for _ in range(50):
        mix = reduce_mixture(predict_mixture(mix, ctx))
        mu = mix.means[mix.best()]
        # nearest rectangle: on the outside of a bend consecutive rectangles leave small wedge gaps
        r = min(m.rectangles.values(), key=lambda r: math.hypot(mu[0] - r.center[0], mu[1] - r.center[1]))
        worst = max(worst, abs(float(wrap_angle(mu[3] - r.orientation))))
        assert abs(math.hypot(mu[0], mu[1]) - 30.0) < 1.75
    assert worst < 0.2


def test_map_adaptation_shrinks_heading_variance_on_curve():
    m = ring_map()
    mean = np.array([0.0, -30.0, 10.0, 0.0, 0.0])
    P = np.diag([0.2, 0.2, 0.3, 0.05, 0.02])
    var = {}
    for flag in (False, True):
        ctx = PredictionContext(0.1, settings=PredictionSettings(enable_map=flag), road_map=m)
        mix = GaussianMixture.single(mean, P)
        for _ in range(10):
            mix = reduce_mixture(predict_mixture(mix, ctx))
        var[flag] = mix.covs[mix.best()][3, 3]
    assert var[True] < var[False]


def test_follower_slows_only_with_interaction():
    follower = GaussianComponent(1.0, np.array([0, 0, 12, 0, 0.0]), P0)
    lead = LeaderCandidate(Label(0, 1), np.array([20, 0, 8, 0, 0.0]), 0.95)
    on = PredictionContext(0.1, settings=PredictionSettings(enable_interaction=True), leaders=[lead])
    off = PredictionContext(0.1, settings=PredictionSettings(enable_interaction=False), leaders=[lead])
    (a,) = predict_component(follower, on)
    (b,) = predict_component(follower, off)
    assert a.mean[2] < b.mean[2]
    assert on.stats["velocity_adapted"] == 1
