from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geomeasure.expr import (
    Call,
    Const,
    DomainError,
    ExprSyntaxError,
    Var,
    VectorMap,
    derivative_matrix,
    eval_map,
    parse_expr,
)

D = 3


def random_expr(rng: np.random.Generator, depth: int):
    """Random smooth expression; every node keeps its argument in a safe domain."""
    if depth == 0 or rng.random() < 0.2:
        if rng.random() < 0.7:
            return Var(int(rng.integers(D)))
        return Const(float(np.round(rng.uniform(-2, 2), 3)))
    a = random_expr(rng, depth - 1)
    kind = rng.integers(9)
    if kind < 4:
        b = random_expr(rng, depth - 1)
        return [a + b, a - b, a * b, a / (Const(2.0) + Call("cos", (b,)))][kind]
    if kind == 4:
        return Call("sin", (a,))
    if kind == 5:
        return Call("cos", (a,))
    if kind == 6:
        return Call("exp", (Call("sin", (a,)),))
    if kind == 7:
        return Call("sqrt", (Const(1.0) + a * a,))
    return Call("sin", (a,)) ** int(rng.integers(2, 4))


def central_difference(expr, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    grad = np.empty(D)
    for i in range(D):
        dx = np.zeros(D)
        dx[i] = h
        grad[i] = (expr.evaluate((x + dx)[None])[0] - expr.evaluate((x - dx)[None])[0]) / (2 * h)
    return grad


def test_forward_derivatives_match_finite_differences():
    rng = np.random.default_rng(2718)
    for _ in range(100):
        expr = random_expr(rng, 6)
        F = VectorMap((expr,), D)
        X = rng.uniform(-1, 1, (10, D))
        J = F.jacobian(X)[:, 0, :]
        for x, g in zip(X, J):
            fd = central_difference(expr, x)
            assert np.all(np.abs(g - fd) <= 1e-5 * np.maximum(1.0, np.abs(g))), (expr.to_str(), x)


@given(st.integers(0, 2**32 - 1))
def test_printed_expressions_reparse_to_the_same_function(seed):
    rng = np.random.default_rng(seed)
    expr = random_expr(rng, 5)
    again = parse_expr(expr.to_str())
    X = rng.uniform(-1, 1, (16, D))
    assert np.allclose(again.evaluate(X), expr.evaluate(X), rtol=1e-12, atol=1e-12)


def test_eval_map_examples():
    F = VectorMap.parse(["x", "x^2"], 1)
    assert np.allclose(eval_map(F, [3.0]), [3.0, 9.0])
    assert np.allclose(derivative_matrix(F, [3.0]), [[1.0], [6.0]])
    assert np.array_equal(derivative_matrix(VectorMap.identity(3), [0.3, -1.0, 2.0]), np.eye(3))
    C = VectorMap.parse(["cos(t)", "sin(t)"], 1)
    Dc = derivative_matrix(C, [math.pi / 3])[:, 0]
    assert np.allclose(Dc, [-math.sqrt(3) / 2, 0.5])
    assert np.linalg.norm(Dc) == pytest.approx(1.0)


def test_variable_names():
    X = np.array([[1.0, 2.0, 3.0]])
    assert parse_expr("x + 10*y + 100*z").evaluate(X)[0] == 321.0
    assert parse_expr("x1 + 10*x2 + 100*x3").evaluate(X)[0] == 321.0
    assert parse_expr("pi").evaluate(X)[0] == math.pi


def test_kinks_take_the_left_branch():
    F = VectorMap.parse(["abs(x)", "min(x, 0)", "max(x, 0)"], 1)
    J = F.jacobian([[0.0]])[0, :, 0]
    assert J[0] == -1.0
    assert np.array_equal(F.jacobian([[0.5]])[0, :, 0], [1.0, 0.0, 1.0])
    assert np.array_equal(F.jacobian([[-0.5]])[0, :, 0], [-1.0, 1.0, 0.0])


def test_sqrt_of_clamped_zero_is_differentiable():
    F = VectorMap.parse(["sqrt(max(x - 1, 0))"], 1)
    assert F.jacobian([[0.5]])[0, 0, 0] == 0.0


@pytest.mark.parametrize(
    "text, column",
    [("foo(x)", 1), ("x ^ y", 5), ("sin(x, y)", 1), ("x^2 + q", 7), ("2 * 'a'", 5), ("x^^2", 3)],
)
def test_syntax_errors_report_position(text, column):
    with pytest.raises(ExprSyntaxError) as info:
        parse_expr(text)
    assert info.value.line == 1
    assert info.value.column == column


@pytest.mark.parametrize("text", ["x +", "(x", "", "x = 1", "lambda: 1"])
def test_malformed_text_is_a_syntax_error(text):
    with pytest.raises(ExprSyntaxError) as info:
        parse_expr(text)
    assert info.value.line >= 1 and info.value.column >= 1


def test_domain_violations():
    with pytest.raises(DomainError):
        eval_map(VectorMap.parse(["sqrt(x)"], 1), [-1.0])
    with pytest.raises(DomainError):
        eval_map(VectorMap.parse(["1/x"], 1), [0.0])
    with pytest.raises(DomainError):
        derivative_matrix(VectorMap.parse(["sqrt(x)"], 1), [0.0])


def test_compose_and_dimension_checks():
    outer = VectorMap.parse(["x*y"], 2)
    inner = VectorMap.parse(["cos(t)", "sin(t)"], 1)
    h = outer.compose(inner)
    t = np.array([[0.3]])
    assert h(t)[0, 0] == pytest.approx(math.cos(0.3) * math.sin(0.3))
    assert h.jacobian(t)[0, 0, 0] == pytest.approx(math.cos(0.6))
    with pytest.raises(ValueError):
        VectorMap.parse(["y"], 1)
    with pytest.raises(ValueError):
        outer.compose(outer)
