from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import special_ortho_group

from geomeasure.cells import BandExt, Interval, Point
from geomeasure.expr import VectorMap
from geomeasure.io import load_builtin, parse_scene, serialize_scene
from geomeasure.measure import (
    MeasureError,
    MeasureReport,
    area_measure,
    embed_scene,
    gram_jacobian,
    hausdorff_measure,
    jacobian_Je,
    jacobian_minors,
    transform_scene,
)
from geomeasure.patches import GraphPatch, ParametricPatch, Scene


def vm(texts, d):
    return VectorMap.parse(texts, d)


def parabola_length_oracle() -> float:
    # independent route: scipy adaptive quadrature of sqrt(1 + 4x^2)
    return integrate.quad(lambda x: math.sqrt(1 + 4 * x * x), 0, 1, epsabs=1e-14)[0]


# ---------------------------------------------------------------- Jacobians


def test_jacobian_examples():
    for n in range(1, 5):
        assert jacobian_Je(VectorMap.identity(n), np.zeros(n), n) == pytest.approx(1.0)
    assert jacobian_Je(vm(["u", "2*u"], 1), [0.3], 1) == pytest.approx(math.sqrt(5))
    assert jacobian_Je(VectorMap.identity(2), [0.1, 0.2], 1) == math.inf


def test_jacobian_is_determinant_for_square_maps():
    F = vm(["x*cos(y)", "x*sin(y)"], 2)
    assert jacobian_Je(F, [0.7, 1.1], 2) == pytest.approx(0.7, rel=1e-14)


def test_jacobian_rank_deficient_counts_zero():
    assert jacobian_Je(vm(["x + y", "x + y"], 2), [0.1, 0.2], 2) == 0.0


@given(st.integers(1, 5), st.data())
def test_cauchy_binet_consistency(n, data):
    e = data.draw(st.integers(1, n))
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    D = rng.standard_normal((n, e))
    assert gram_jacobian(D[None])[0] == pytest.approx(jacobian_minors(D, e), rel=1e-10, abs=1e-12)
    sv = np.linalg.svd(D, compute_uv=False)
    assert gram_jacobian(D[None])[0] == pytest.approx(float(np.prod(sv)), rel=1e-10)


# ---------------------------------------------------------------- area_measure


def test_area_of_shipped_scenes_against_analytic_values():
    cases = {
        "segment": (1.0, 1e-12),
        "circle": (2 * math.pi, 1e-9),
        "sphere_cap": (0.4 * math.pi, 1e-6),
        "parabola": (parabola_length_oracle(), 1e-9),
        "helix": (2 * math.pi * math.sqrt(1.04), 1e-9),
    }
    for name, (exact, tol) in cases.items():
        (p,) = load_builtin(name).patches
        r = area_measure(p)
        assert abs(r.value - exact) <= tol, name
        assert r.method == "area" and r.stderr == 0.0 and not r.flagged


def test_area_rejects_unattested_parametric_patch():
    p = ParametricPatch(2, 1, Interval(0, 1), vm(["x", "x^2"], 1), injective=False)
    with pytest.raises(MeasureError):
        area_measure(p)


def test_area_rejects_infinite_jacobian():
    p = ParametricPatch(2, 1, Interval(-1, 1), vm(["sqrt(abs(x))", "0"], 1))
    with pytest.raises(MeasureError):
        area_measure(p)


def test_infinite_jacobian_triggers_one_repartition(monkeypatch):
    import geomeasure.measure as gm

    real = gm.area_measure
    calls = []

    def flaky(p, *a, **k):
        calls.append(p)
        if len(calls) == 1:
            raise gm.InfiniteJacobian("injected", [0.5])
        return real(p, *a, **k)

    monkeypatch.setattr(gm, "area_measure", flaky)
    s = load_builtin("segment")
    r = hausdorff_measure(s, 1)
    assert r.value == pytest.approx(1.0, abs=1e-9)
    assert len(calls) >= 2
    with pytest.raises(gm.InfiniteJacobian):
        calls.clear()
        hausdorff_measure(s, 1, partition=False)


def test_lebesgue_agreement_for_full_dimension():
    box = BandExt(Interval(0, 2), vm(["0"], 1), vm(["3"], 1))
    p = GraphPatch(2, 2, box, VectorMap((), 2))
    r = hausdorff_measure(Scene(2, (p,)), 2)
    assert r.value == pytest.approx(6.0, abs=1e-9)


def test_affine_restriction_matches_lebesgue_volume_in_the_plane():
    Q = special_ortho_group.rvs(3, random_state=3)
    x, y = Q[:, 0], Q[:, 1]
    comps = [f"{float(x[i])!r}*u + {float(y[i])!r}*v" for i in range(3)]
    square = BandExt(Interval(0, 1.5), vm(["-1"], 1), vm(["1"], 1))
    p = ParametricPatch(3, 2, square, vm(comps, 2))
    assert hausdorff_measure(Scene(3, (p,)), 2).value == pytest.approx(3.0, abs=1e-9)


# ---------------------------------------------------------------- hausdorff_measure


def test_double_scene_is_two_not_one():
    r = hausdorff_measure(load_builtin("double"), 1)
    assert abs(r.value - (1 + math.sqrt(1 + 1e-6))) <= 1e-6
    assert abs(r.value - 1.0) > 0.5


def test_points_have_no_length_and_count_in_dimension_zero():
    pts = load_builtin("points")
    assert hausdorff_measure(pts, 1).value == 0.0
    assert hausdorff_measure(pts, 0).value == 3.0
    single = Scene(2, (GraphPatch(2, 0, Point(()), vm(["0.5", "0.5"], 0)),))
    assert hausdorff_measure(single, 1).value == 0.0


def test_measure_rejects_patches_above_e():
    with pytest.raises(MeasureError):
        hausdorff_measure(load_builtin("sphere_cap"), 1)


def four_arc_circle() -> Scene:
    a = 1 / math.sqrt(2)
    upper = {"kind": "graph", "e": 1, "domain": {"interval": [-a, a]}, "map": ["sqrt(1-x^2)"]}
    lower = {"kind": "graph", "e": 1, "domain": {"interval": [-a, a]}, "map": ["-sqrt(1-x^2)"]}
    right = {"kind": "graph", "e": 1, "domain": {"interval": [-a, a]}, "map": ["sqrt(1-x^2)"], "permutation": [2, 1]}
    left = {"kind": "graph", "e": 1, "domain": {"interval": [-a, a]}, "map": ["-sqrt(1-x^2)"], "permutation": [2, 1]}
    return parse_scene(json.dumps({"ambient_dim": 2, "patches": [upper, lower, right, left]}))


def test_measure_does_not_depend_on_the_decomposition():
    one = hausdorff_measure(load_builtin("circle"), 1)
    four = hausdorff_measure(four_arc_circle(), 1)
    assert abs(one.value - four.value) <= one.quad_error + four.quad_error + 1e-9
    assert four.value == pytest.approx(2 * math.pi, abs=1e-9)


def test_partition_and_plain_sums_agree():
    s = load_builtin("parabola")
    assert hausdorff_measure(s, 1).value == pytest.approx(hausdorff_measure(s, 1, partition=False).value, abs=1e-9)


# ---------------------------------------------------------------- transforms


def test_rotation_leaves_circle_measure_unchanged():
    c, s = math.cos(math.pi / 7), math.sin(math.pi / 7)
    rotated = transform_scene(load_builtin("circle"), rotation=[[c, -s], [s, c]], offset=[2.0, -1.0])
    assert hausdorff_measure(rotated, 1).value == pytest.approx(2 * math.pi, abs=1e-6)


def test_scaling_multiplies_by_r_to_the_e():
    assert hausdorff_measure(transform_scene(load_builtin("segment"), scale=3.0), 1).value == pytest.approx(3.0, abs=1e-9)
    cap = load_builtin("sphere_cap")
    base = hausdorff_measure(cap, 2, partition=False).value
    scaled = hausdorff_measure(transform_scene(cap, scale=0.5), 2, partition=False).value
    assert scaled == pytest.approx(0.25 * base, abs=1e-6)


def test_identity_transform_is_the_same_document():
    s = load_builtin("helix")
    assert serialize_scene(transform_scene(s)) == serialize_scene(s)
    assert serialize_scene(transform_scene(s, rotation=np.eye(3), offset=np.zeros(3))) == serialize_scene(s)


def test_transform_rejects_non_orthogonal_maps():
    with pytest.raises(ValueError):
        transform_scene(load_builtin("circle"), rotation=[[1.0, 1.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        transform_scene(load_builtin("circle"), scale=-1.0)


@pytest.mark.parametrize("name, e", [("segment", 1), ("circle", 1), ("sphere_cap", 2), ("helix", 1), ("points", 0)])
def test_embedding_preserves_the_measure(name, e):
    s = load_builtin(name)
    emb = embed_scene(s)
    assert emb.ambient_dim == s.ambient_dim + 1
    a = hausdorff_measure(s, e, partition=False).value
    assert abs(hausdorff_measure(emb, e, partition=False).value - a) <= 1e-9


def test_report_rejects_negative_stderr():
    with pytest.raises(ValueError):
        MeasureReport(1.0, -1.0, "area", 1, 2)
