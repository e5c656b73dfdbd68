import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geometry_oracle import max_deviation
from roadlmb.roadmap import (
    InvalidPolylineError,
    MapError,
    Rectangle,
    RoadMap,
    build_map,
    distance_to_exit,
    fit_rectangles,
    link_lanes,
    load_map,
    simplify_polyline,
)


def is_subsequence(sub, seq) -> bool:
    it = iter(map(tuple, seq))
    return all(any(p == q for q in it) for p in map(tuple, sub))


# ---------------------------------------------------------------- simplify_polyline

def test_collinear_reduces_to_endpoints():
    pts = [(x, 2 * x) for x in np.linspace(0, 10, 100)]
    assert simplify_polyline(pts, 0.1) == [pts[0], pts[-1]]


def test_corner_kept():
    pts = [(0.0, 0.0), (5.0, 5.0), (10.0, 0.0)]
    assert simplify_polyline(pts, 0.5) == pts


def test_semicircle_matches_reference(frozen):
    case = frozen["semicircle"]
    pts = [tuple(p) for p in case["points"]]
    out = simplify_polyline(pts, case["tolerance"])
    assert len(out) == case["count"]
    assert out == [pts[i] for i in case["kept"]]
    assert max_deviation(pts, out) <= case["tolerance"] + 1e-12


def test_nearly_closed_polyline_keeps_far_points():
    pts = [(0.0, 0.0), (0.0, 2.0), (2.2e-309, 0.0)]
    assert simplify_polyline(pts, 1.0) == pts


def test_too_few_points():
    with pytest.raises(InvalidPolylineError):
        simplify_polyline([(0, 0)], 0.1)


@given(
    st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=2, max_size=40),
    st.floats(0.01, 5.0),
)
@settings(max_examples=150, deadline=None)
def test_deviation_bound_property(pts, tol):
    out = simplify_polyline(pts, tol)
    assert out[0] == tuple(map(float, pts[0])) and out[-1] == tuple(map(float, pts[-1]))
    assert is_subsequence(out, np.asarray(pts, float))
    if len(set(out)) > 1:
        assert max_deviation(pts, out) <= tol + 1e-9


def test_finer_tolerance_never_fewer_rectangles():
    a = np.linspace(0, math.pi, 400)
    pts = np.column_stack([30 * np.cos(a), 30 * np.sin(a)])
    counts = [len(fit_rectangles(simplify_polyline(pts, tol))) for tol in (2.0, 1.0, 0.5, 0.25, 0.125, 0.0625)]
    assert counts == sorted(counts)
    assert counts[-1] > counts[0]


# ---------------------------------------------------------------- fit_rectangles

def test_fit_axis_aligned():
    (r,) = fit_rectangles([(0, 0), (10, 0)], width=4)
    assert r.center == (5.0, 0.0) and r.length == 10 and r.width == 4 and r.orientation == 0.0
    assert r.successors == ()


def test_fit_two_segments():
    r0, r1 = fit_rectangles([(0, 0), (0, 10), (10, 10)])
    assert r0.orientation == pytest.approx(math.pi / 2)
    assert r1.orientation == pytest.approx(0.0)
    assert r0.successors == (r1.id,)


def test_fit_45_degrees(frozen):
    (r,) = fit_rectangles([(0, 0), (10, 10)])
    assert r.orientation == pytest.approx(math.pi / 4)
    assert r.length == pytest.approx(frozen["closed_forms"]["fit_45deg_length"], rel=1e-15)


def test_fit_skips_zero_length(caplog):
    rects = fit_rectangles([(0, 0), (0, 0), (5, 0)])
    assert len(rects) == 1
    assert "zero-length" in caplog.text


def test_vertices_on_short_edges():
    rng = np.random.default_rng(1)
    pts = np.cumsum(rng.normal(size=(30, 2)) * 5, axis=0)
    simp = simplify_polyline(pts, 0.3)
    rects = fit_rectangles(simp)
    for v in simp:
        ok = False
        for r in rects:
            u, w = r.local(v)
            if abs(abs(u) - r.length / 2) < 1e-9 and abs(w) < 1e-9:
                ok = True
        assert ok


# ---------------------------------------------------------------- link_lanes / containment

def two_lane_map() -> RoadMap:
    rects = fit_rectangles([(0, 0), (10, 0), (20, 0)]) + fit_rectangles([(10, 0), (10, 10)], id_seed=5)
    return RoadMap.from_rectangles(rects)


def test_link_and_idempotence():
    m = two_lane_map()
    m2 = link_lanes(m, 0, 5)
    assert m2[0].successors == (1, 5)
    assert link_lanes(m2, 0, 5)[0].successors == (1, 5)
    with pytest.raises(MapError):
        link_lanes(m, 0, 0)
    with pytest.raises(MapError):
        link_lanes(m, 0, 99)


def test_unknown_successor_rejected():
    with pytest.raises(MapError):
        RoadMap.from_rectangles([Rectangle(0, (0, 0), 1, 1, 0, (4,))])


def test_containment_examples():
    r = Rectangle(7, (5, 0), 10, 4, 0)
    m = RoadMap.from_rectangles([r])
    assert m.rectangles_containing((5, 0)) == {7}
    assert m.rectangles_containing((10.0, 2.0)) == {7}
    assert m.rectangles_containing((10.1, 0.0)) == set()


def test_containment_overlap_matches_brute_force():
    m = two_lane_map()
    p = (10.0, 1.0)
    brute = {i for i, r in m.rectangles.items() if r.contains(p)}
    assert m.rectangles_containing(p) == brute and len(brute) >= 2


def test_containment_random_map_brute_force():
    rng = np.random.default_rng(5)
    rects = [
        Rectangle(i, tuple(rng.uniform(-100, 100, 2)), rng.uniform(1, 30), rng.uniform(1, 8), rng.uniform(-math.pi, math.pi))
        for i in range(200)
    ]
    m = RoadMap.from_rectangles(rects)
    pts = rng.uniform(-120, 120, size=(2000, 2))
    for p in pts:
        assert m.rectangles_containing(p) == {r.id for r in rects if r.contains(p)}


# ---------------------------------------------------------------- distance_to_exit

def test_distance_to_exit(frozen):
    r = Rectangle(0, (5, 0), 10, 4, 0)
    assert distance_to_exit(r, (5, 0)) == 5.0
    assert distance_to_exit(r, (10, 0)) == 0.0
    assert distance_to_exit(r, (7, 1)) == pytest.approx(frozen["closed_forms"]["distance_to_exit_7_1"])
    with pytest.raises(MapError):
        distance_to_exit(r, (20, 0))


# ---------------------------------------------------------------- queries used by prediction

def test_canonical_and_branches():
    m = link_lanes(two_lane_map(), 0, 5)
    assert m.canonical({1, 5}, 0.1) == 1
    assert m.canonical({1, 5}, 1.4) == 5
    # overlap of the two outgoing lanes at (10, 1): both are real options for an eastbound heading
    assert m.branches({1, 5}, heading=0.5) == [1, 5]
    # a rectangle pointing backwards is no option
    assert m.branches({1, 5}, heading=-1.2) == [1]
    # consecutive rectangles of one lane are not a fork
    assert m.branches({0, 1}, heading=0.0) == [1]


def test_downstream():
    m = RoadMap.from_rectangles(fit_rectangles([(i, 0) for i in range(8)]))
    assert m.downstream(0, 2) == {0, 1, 2}
    assert m.predecessors(3) == (2,)


def test_map_roundtrip_and_loader(tmp_path):
    doc = {
        "width": 3.0,
        "tolerance": 0.2,
        "lanes": [
            {"id_prefix": 0, "points": [[0, 0], [10, 0], [20, 0.05], [30, 0]]},
            {"id_prefix": 100, "width": 4.0, "points": [[30, 0], [30, 20]]},
        ],
        "links": [[0, 100]],
    }
    p = tmp_path / "map.json"
    p.write_text(json.dumps(doc))
    m = load_map(p)
    assert set(m.rectangles) == {0, 100}
    assert m[0].successors == (100,) and m[0].width == 3.0 and m[100].width == 4.0
    again = RoadMap.from_dict(json.loads(json.dumps(m.to_dict())))
    assert again.rectangles == m.rectangles


def test_build_map_links_by_lane_name():
    m = build_map({"a": {"points": [(0, 0), (10, 0)]}, "b": {"points": [(10, 0), (10, 10)]}}, [("a", "b")])
    a, b = m.lanes["a"], m.lanes["b"]
    assert b[0] in m[a[-1]].successors


def test_loader_reports_missing_points():
    with pytest.raises(MapError):
        load_map({"lanes": [{"id_prefix": 0}]})
