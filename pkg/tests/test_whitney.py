from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geomeasure.cells import BandExt, CellError, GraphExt, Interval, Point, cell_from_doc
from geomeasure.expr import VectorMap
from geomeasure.io import builtin_path
from geomeasure.whitney import (
    WhitneyConstants,
    cell_lipschitz,
    connect_points,
    lipschitz_check,
    whitney_constants,
    whitney_verify,
)

CELLS = ("interval", "square", "roof", "graph3", "band3")


def vm(texts, d):
    return VectorMap.parse(texts, d)


def cell(name):
    return cell_from_doc(json.loads(builtin_path(f"cell_{name}.json").read_text()))


def polyline_length(curve, samples=20_001):
    # independent route: chord sum on a fine grid
    P = curve(np.linspace(0.0, 1.0, samples))
    return float(np.sum(np.linalg.norm(np.diff(P, axis=0), axis=1)))


# ---------------------------------------------------------------- constants


def test_constants_base_values():
    for L in (0.0, 0.5, 1.0, 7.0):
        K, k = whitney_constants(1, L)
        assert K == 1.0 and k == L
        K2, k2 = whitney_constants(2, L)
        assert K2 == pytest.approx(2 + 5 * L)
        assert k2 == pytest.approx(L)
    assert whitney_constants(2, 1.0)[0] == 7.0


def test_constants_recursion_three():
    L = 0.75
    K2 = 2 + 5 * L
    assert whitney_constants(3, L)[0] == pytest.approx(K2 * (1 + 4 * L) + L + 1)
    assert whitney_constants(3, L)[1] == pytest.approx(L * (2 + 5 * L))


@given(n=st.integers(1, 5), L=st.floats(0.0, 10.0), dL=st.floats(0.0, 5.0))
def test_constants_monotone(n, L, dL):
    K, k = whitney_constants(n, L)
    K2, k2 = whitney_constants(n, L + dL)
    assert K2 >= K and k2 >= k
    assert whitney_constants(n + 1, L)[0] >= K
    assert K >= 1.0


def test_constants_invalid():
    with pytest.raises(ValueError):
        whitney_constants(0, 1.0)
    with pytest.raises(ValueError):
        whitney_constants(2, -1.0)
    with pytest.raises(ValueError):
        whitney_constants(2, math.inf)


def test_constants_table():
    t = WhitneyConstants(3, 1.0).table()
    assert [r["n"] for r in t] == [1, 2, 3]
    assert t[1]["K"] == 7.0


def test_cell_lipschitz():
    assert cell_lipschitz(cell("roof")) == 2.0
    # band3 declares bounds 1 and 0.75 along its chain, so M = 1 and k(3, 1) = K(2, 1)
    assert cell_lipschitz(cell("band3")) == pytest.approx(7.0)
    with pytest.raises(CellError):
        cell_lipschitz(BandExt(Interval(0, 1), vm(["0"], 1), vm(["1+x"], 1)))


# ---------------------------------------------------------------- curves


def test_interval_segment():
    c = connect_points(Interval(0, 1), [0.1], [0.8])
    assert np.allclose(c.speed(np.linspace(0, 1, 11)), 0.7)
    assert c.length() == pytest.approx(0.7, abs=1e-14)


def test_square_diagonal_is_straight():
    sq = cell("square")
    x, y = np.array([0.1, 0.1]), np.array([0.9, 0.9])
    c = connect_points(sq, x, y)
    ts = np.linspace(0, 1, 101)
    assert np.allclose(c(ts), x + ts[:, None] * (y - x), atol=1e-12)
    assert c.length() == pytest.approx(0.8 * math.sqrt(2), rel=1e-12)


def test_roof_containment():
    roof = cell("roof")
    c = connect_points(roof, [0.6, 0.3], [0.95, 0.05])
    P = c(np.linspace(0, 1, 1000))
    assert roof.contains(P).all()
    assert c.length() == pytest.approx(polyline_length(c), rel=1e-7)


def test_graph_lift_stays_on_graph():
    g = cell("graph3")
    x = np.array([0.2, 0.3, 0.5 * 0.2 * 0.3])
    y = np.array([0.7, 0.9, 0.5 * 0.7 * 0.9])
    P = connect_points(g, x, y)(np.linspace(0, 1, 257))
    assert np.allclose(P[:, 2], 0.5 * P[:, 0] * P[:, 1], atol=1e-14)


def test_point_cell_and_endpoints():
    c = connect_points(Point((0.5, 0.5)), [0.5, 0.5], [0.5, 0.5])
    assert np.allclose(c(np.array([0.0, 0.5, 1.0])), 0.5)
    with pytest.raises(CellError):
        connect_points(Point((0.5,)), [0.4], [0.5])


def test_membership_errors():
    with pytest.raises(CellError):
        connect_points(Interval(0, 1), [0.5], [1.5])
    with pytest.raises(CellError):
        connect_points(GraphExt(Interval(0, 1), vm(["x^2"], 1)), [0.5, 0.25], [0.5, 0.3])
    with pytest.raises(CellError):
        connect_points(cell("roof"), [0.6, 0.3], [0.6, 0.5])


@given(
    a=st.tuples(st.floats(0.01, 0.99), st.floats(0.01, 0.99)),
    b=st.tuples(st.floats(0.01, 0.99), st.floats(0.01, 0.99)),
)
def test_roof_curves_bounded(a, b):
    roof = cell("roof")
    x, y = roof.unit_points(np.array([a, b]))
    d = float(np.linalg.norm(x - y))
    c = connect_points(roof, x, y)
    P = c(np.array([0.0, 1.0]))
    assert np.array_equal(P[0], x) and np.allclose(P[1], y, rtol=0, atol=1e-15)
    K = whitney_constants(2, cell_lipschitz(roof))[0]
    if d > 1e-9:
        assert c.length() <= K * d
        assert float(np.max(c.speed(np.linspace(0, 1, 101)))) <= K * d * (1 + 1e-8)


# ---------------------------------------------------------------- verification


@pytest.mark.parametrize("name", CELLS)
def test_verify_builtin_cells(name):
    r = whitney_verify(cell(name), trials=300, rng=np.random.default_rng(1))
    assert r["pass"], r
    assert r["outside"] == 0
    assert r["endpoint_error"] <= 1e-12
    assert r["max_ratio"] <= r["K_bound"]


def test_verify_fails_tight_bound():
    # an arc through a curved band is longer than the chord, so K = 1 is too small
    r = whitney_verify(cell("roof"), K_bound=1.0, trials=200, rng=np.random.default_rng(2))
    assert not r["pass"]
    assert r["max_ratio"] > 1.0


def test_lipschitz_check():
    roof = cell("roof")
    r = lipschitz_check(roof, vm(["x*y"], 2), 2.0, trials=500)
    assert r["pass"]
    assert r["max_ratio"] <= math.sqrt(2)
