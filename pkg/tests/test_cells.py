from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geomeasure.cells import (
    BandExt,
    BoundViolation,
    CellError,
    EmptyBandError,
    GraphExt,
    Interval,
    Point,
    cell_from_doc,
    unit_samples,
)
from geomeasure.expr import DomainError, VectorMap


def vm(text: str, d: int) -> VectorMap:
    return VectorMap.parse([text], d)


ROOF = BandExt(Interval(0.5, 1.0), vm("0", 1), vm("x^2", 1), bound=2.0)


def test_patterns_follow_the_constructor_chain():
    line = Interval(0, 1)
    assert line.pattern() == (1,)
    assert Point((0.5,)).pattern() == (0,)
    assert GraphExt(line, vm("x", 1)).pattern() == (1, 0)
    assert BandExt(GraphExt(line, vm("x", 1)), vm("0", 2), vm("1", 2)).pattern() == (1, 0, 1)
    assert BandExt(Point((0.0,)), vm("0", 1), vm("1", 1)).pattern() == (0, 1)


def test_dimensions_and_declared_bound():
    c = BandExt(GraphExt(Interval(0, 1), vm("x^2", 1), bound=2.0), vm("0", 2), vm("1 + y", 2), bound=1.0)
    assert (c.dim, c.ambient_dim) == (2, 3)
    assert c.M == 2.0
    assert BandExt(Interval(0, 1), vm("0", 1), vm("1", 1)).M is None


def test_unit_points_stay_inside():
    P = ROOF.unit_points(unit_samples(2, 1000))
    assert np.all(ROOF.contains(P))
    assert np.all((P[:, 1] > 0) & (P[:, 1] < P[:, 0] ** 2))
    assert not ROOF.contains([[0.75, 0.6]])[0]
    assert not ROOF.contains([[0.25, 0.01]])[0]


def test_graph_cell_points_lie_on_the_graph():
    c = GraphExt(Interval(-1, 1), vm("sin(x)", 1), bound=1.0)
    P = c.sample(200)
    assert np.allclose(P[:, 1], np.sin(P[:, 0]), atol=1e-15)
    assert np.all(c.contains(P))


def test_unit_jet_matches_finite_differences():
    S = unit_samples(2, 20)
    P, J = ROOF.unit_jet(S)
    h = 1e-6
    for j in range(2):
        dS = np.zeros(2)
        dS[j] = h
        fd = (ROOF.unit_points(S + dS) - ROOF.unit_points(S - dS)) / (2 * h)
        assert np.allclose(J[:, :, j], fd, atol=1e-7)


def test_restrict_maps_the_unit_box():
    sub = ROOF.restrict([[0.0, 0.5], [0.5, 1.0]])
    P = sub.sample(200)
    assert np.all(ROOF.contains(P))
    assert np.all(P[:, 0] < 0.75 + 1e-12)
    assert np.all(P[:, 1] > 0.5 * P[:, 0] ** 2 - 1e-12)


def test_empty_band_is_reported_with_witness():
    c = BandExt(Interval(0, 1), vm("x", 1), vm("x", 1))
    with pytest.raises(EmptyBandError, match="empty band") as info:
        c.validate()
    assert info.value.witness is not None and len(info.value.witness) == 1


def test_bound_violation_reports_witness():
    c = GraphExt(Interval(0, 2), vm("x^2", 1), bound=1.0)
    with pytest.raises(BoundViolation) as info:
        c.validate()
    assert info.value.witness[0] > 0.5


def test_undefined_function_is_a_domain_error():
    with pytest.raises(DomainError):
        GraphExt(Interval(-1, 1), vm("sqrt(x)", 1)).validate()


def test_empty_interval_rejected():
    with pytest.raises(EmptyBandError):
        Interval(1, 1)


@given(st.floats(-3, 3), st.floats(0.1, 2), st.floats(-1, 1))
def test_band_validation_accepts_positive_width(a, width, slope):
    c = BandExt(Interval(a, a + 1), vm(f"{slope}*x", 1), vm(f"{slope}*x + {width}", 1), bound=abs(slope))
    c.validate()
    P = c.sample(100)
    assert np.all(c.contains(P))


def test_cell_documents_round_trip():
    doc = {
        "band_ext": {
            "base": {"graph_ext": {"base": {"interval": [0, 1]}, "f": "x^2"}, "bound": 2},
            "g": "0",
            "h": "1 + y",
        },
        "bound": 1,
    }
    c = cell_from_doc(doc)
    again = cell_from_doc(c.to_doc())
    S = unit_samples(2, 50)
    assert np.array_equal(c.unit_points(S), again.unit_points(S))
    assert cell_from_doc({"interval": [0, "pi/2"]}).b == pytest.approx(np.pi / 2)


@pytest.mark.parametrize(
    "doc",
    [
        {"interval": [0]},
        {"interval": [0, 1], "graph_ext": {}},
        {"disk": [0, 1]},
        {"interval": [0, "x"]},
        [0, 1],
    ],
)
def test_malformed_cell_documents(doc):
    with pytest.raises(CellError):
        cell_from_doc(doc)
