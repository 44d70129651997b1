from __future__ import annotations

import json
import math
from fractions import Fraction

import numpy as np
import pytest

from geomeasure.cells import Interval
from geomeasure.expr import VectorMap
from geomeasure.io import load_builtin, parse_scene
from geomeasure.linalg import LinearSubspace, line_to_subspace_distance, sphere_volume
from geomeasure.measure import area_measure, hausdorff_measure
from geomeasure.partition import (
    GraphifyError,
    TransverseError,
    band_volume,
    choose_transverse_direction,
    eflat_refine,
    epsilon_n,
    graphify,
    partition_constants,
    rectifiable_partition,
    tangent_spread,
)
from geomeasure.patches import GraphPatch, ParametricPatch

EPS2 = float(epsilon_n(2))


def line(theta: float) -> LinearSubspace:
    return LinearSubspace.span([math.cos(theta), math.sin(theta)])


def graph(text: str, a: float = 0.0, b: float = 1.0) -> GraphPatch:
    return GraphPatch(2, 1, Interval(a, b), VectorMap.parse([text], 1))


# ---------------------------------------------------------------- band volume


def test_band_volume_examples():
    assert band_volume(3, 0.0) == 0.0
    assert band_volume(2, 0.25) == pytest.approx(2 * math.pi / 3, abs=1e-14)
    # a band of half-width h on S^2 has area 4 pi h
    assert band_volume(3, 0.1) == pytest.approx(4 * math.pi * 0.2, rel=1e-13)


@pytest.mark.parametrize("n, eps", [(2, 0.1), (3, 0.1), (4, 0.15)])
def test_band_volume_against_sphere_sampling(n, eps):
    rng = np.random.default_rng(n)
    V = rng.standard_normal((1_000_000, n))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    hit = np.abs(V[:, -1]) <= 2 * eps
    est = sphere_volume(n - 1) * hit.mean()
    se = sphere_volume(n - 1) * hit.std() / math.sqrt(len(hit))
    assert abs(est - band_volume(n, eps)) <= 3 * se


def test_band_volume_rejects_out_of_range():
    with pytest.raises(ValueError):
        band_volume(2, 0.6)
    with pytest.raises(ValueError):
        band_volume(0, 0.1)


# ---------------------------------------------------------------- constants


def test_epsilon_values():
    assert epsilon_n(1) == Fraction(1, 4)
    assert epsilon_n(2) == Fraction(12539, 65536)
    # the closed form of the n = 2 threshold is sin(pi/8)/2
    assert float(epsilon_n(2)) < math.sin(math.pi / 8) / 2 < float(epsilon_n(2) + Fraction(1, 65536)) + 1e-4


@pytest.mark.parametrize("n", range(2, 7))
def test_epsilon_satisfies_the_volume_bound_maximally(n):
    eps = epsilon_n(n)
    assert eps.denominator <= 2**16
    assert 2 * n * band_volume(n, float(eps)) < sphere_volume(n - 1)
    assert not 2 * n * band_volume(n, float(eps + Fraction(1, 2**16))) < sphere_volume(n - 1)


def test_derivative_bounds():
    Ms = [partition_constants(n).M_n for n in range(1, 7)]
    assert Ms == [8, 11, 24, 41, 60, 82]
    for n in range(1, 7):
        c = partition_constants(n)
        assert c.M_n >= math.sqrt(4 / c.eps**2 - 1)
        if n > 1:
            assert c.M_n >= partition_constants(n - 1).M_n


# ---------------------------------------------------------------- transverse directions


def test_transverse_direction_single_axis():
    X = LinearSubspace.coordinate(2, [0])
    P = choose_transverse_direction([X], 0.19, np.random.default_rng(0))
    assert line_to_subspace_distance(P, X) > 0.19


def test_transverse_direction_clears_four_lines():
    lines = [line(k * math.pi / 4) for k in range(4)]
    P = choose_transverse_direction(lines, EPS2, np.random.default_rng(1))
    assert all(line_to_subspace_distance(P, X) > EPS2 for X in lines)


def test_transverse_direction_hyperplanes_in_r3():
    rng = np.random.default_rng(2)
    planes = [LinearSubspace.span(rng.standard_normal((3, 2))) for _ in range(6)]
    eps = float(epsilon_n(3))
    P = choose_transverse_direction(planes, eps, rng)
    assert all(line_to_subspace_distance(P, X) > eps for X in planes)


def test_transverse_direction_budget_exhausted():
    # five lines 36 degrees apart; eps = 0.45 excludes +-26.7 degrees around each, covering the circle
    lines = [line(k * math.pi / 5) for k in range(5)]
    with pytest.raises(TransverseError):
        choose_transverse_direction(lines, 0.45, np.random.default_rng(3))


# ---------------------------------------------------------------- refinement


def test_affine_patch_is_one_flat_piece():
    (piece,) = eflat_refine(graph("3*x"), 0.01)
    assert tangent_spread(piece) == pytest.approx(0.0, abs=1e-14)
    assert "eps_flat" in piece.flags


def test_circle_refinement_counts_and_spread():
    circle = load_builtin("circle").patches[0]
    pieces = eflat_refine(circle, EPS2)
    assert math.ceil(2 * math.pi / (2 * math.asin(EPS2))) == 17
    assert 17 <= len(pieces) <= 64
    for p in pieces:
        assert "eps_flat" in p.flags
        assert tangent_spread(p, samples=65) < EPS2
    assert sum(area_measure(p).value for p in pieces) == pytest.approx(2 * math.pi, abs=1e-9)


def test_parabola_refinement_spread():
    pieces = eflat_refine(graph("x^2"), 0.1)
    assert len(pieces) > 1
    assert all(tangent_spread(p, samples=65) < 0.1 for p in pieces)


def test_refinement_of_a_surface():
    cap = load_builtin("sphere_cap").patches[0]
    pieces = eflat_refine(cap, 0.2)
    assert all(tangent_spread(p) < 0.2 for p in pieces)
    assert sum(area_measure(p).value for p in pieces) == pytest.approx(0.4 * math.pi, abs=1e-6)


def test_refinement_rejects_bad_eps():
    with pytest.raises(ValueError):
        eflat_refine(graph("x"), 0.0)


# ---------------------------------------------------------------- graphify


def test_graphify_quarter_arc_pieces():
    arc = ParametricPatch(2, 1, Interval(0, math.pi / 2), VectorMap.parse(["cos(t)", "sin(t)"], 1))
    const = partition_constants(2)
    S = np.linspace(0.01, 0.99, 33)[:, None]
    for piece in eflat_refine(arc, EPS2):
        chart = graphify(piece, const)
        Df = chart.graph_derivative_unit(S)
        assert np.all(np.abs(Df) <= const.M_n)
        assert np.all(np.abs(Df) <= math.tan(2 * math.asin(EPS2)))


def test_graphify_horizontal_graph_keeps_the_set():
    p = graph("0.5")
    chart = graphify(p, partition_constants(2))
    S = np.linspace(0.05, 0.95, 7)[:, None]
    assert np.allclose(chart.points(S), p.points(S))
    assert np.allclose(chart.graph_derivative_unit(S), 0.0, atol=1e-14)
    assert abs(abs(chart.rotation[0, 0]) - 1) < 1e-14


def test_graphify_kills_the_slope_of_a_diagonal():
    chart = graphify(graph("x"), partition_constants(2))
    S = np.linspace(0.05, 0.95, 7)[:, None]
    assert np.allclose(chart.graph_derivative_unit(S), 0.0, atol=1e-14)
    q, z, _, _ = chart.chart_jet(S)
    assert np.allclose(z, 0.0, atol=1e-14)
    assert np.allclose(chart.graph_value(q), 0.0, atol=1e-12)


def test_graphify_rejects_curved_pieces():
    with pytest.raises(GraphifyError):
        graphify(load_builtin("circle").patches[0], partition_constants(2))


# ---------------------------------------------------------------- rectifiable partition


def test_circle_partition():
    const = partition_constants(2)
    part = rectifiable_partition(load_builtin("circle"), 1)
    assert part.partitioned
    assert len(part.patches) >= 17
    S = np.linspace(0.01, 0.99, 65)[:, None]
    for p in part.patches:
        assert p.bound <= const.M_n
        assert np.all(np.abs(p.graph_derivative_unit(S)) <= const.M_n)
        assert "unverified" not in p.flags
    total = sum(area_measure(p).value for p in part.patches)
    assert abs(total - 2 * math.pi) <= 0.01 * 2 * math.pi


def test_flat_graph_partition_is_a_singleton():
    assert len(rectifiable_partition(load_builtin("segment"), 1).patches) == 1


def test_double_scene_keeps_both_graphs():
    part = rectifiable_partition(load_builtin("double"), 1)
    assert len(part.patches) == 2
    assert {p.source.map.texts()[0] for p in part.patches} == {"0.0", "0.001 * x1"}


def test_lower_dimensional_patches_are_dropped():
    s = load_builtin("points")
    assert rectifiable_partition(s, 1).patches == ()


def test_overlapping_patches_are_clipped_by_precedence():
    seg = {"kind": "graph", "e": 1, "domain": {"interval": [0, 1]}, "map": ["0"]}
    half = {"kind": "graph", "e": 1, "domain": {"interval": [0.5, 2]}, "map": ["0"]}
    s = parse_scene(json.dumps({"ambient_dim": 2, "patches": [seg, half], "overlapping": True}))
    assert hausdorff_measure(s, 1).value == pytest.approx(2.0, abs=0.01 * 2.0)
    assert hausdorff_measure(s, 1, partition=False).value == pytest.approx(2.5, abs=1e-9)


@pytest.mark.parametrize(
    "name, e",
    [("segment", 1), ("parabola", 1), ("helix", 1), ("double", 1), pytest.param("sphere_cap", 2, marks=pytest.mark.slow)],
)
def test_partition_conserves_measure(name, e):
    s = load_builtin(name)
    const = partition_constants(s.ambient_dim)
    part = rectifiable_partition(s, e)
    plain = hausdorff_measure(s, e, partition=False).value
    total = sum(area_measure(p).value for p in part.patches)
    assert abs(total - plain) <= 0.01 * plain
    assert all(p.bound <= const.M_n for p in part.patches)


def test_partition_rejects_patches_above_e():
    from geomeasure.patches import PatchError

    with pytest.raises(PatchError):
        rectifiable_partition(load_builtin("sphere_cap"), 1)
