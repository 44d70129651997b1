"""Connecting curves inside Lipschitz cells and the Whitney arc property.

Two points of a cell are joined by the recursive construction over the cell
tree: a straight segment on an interval, a lift through f over a graph, and a
linear interpolation of the relative fibre position over a band.  The
resulting curve is a closed-form map t -> R^n whose speed is bounded by
``K(n, L) |x - y|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .cells import BandExt, CellDomain, CellError, GraphExt, Interval, Point
from .expr import Const, Dual, Var, VectorMap
from .quadrature import integrate_unit_cube

__all__ = [
    "WhitneyConstants",
    "DefinableCurve",
    "whitney_constants",
    "cell_lipschitz",
    "connect_points",
    "whitney_verify",
    "lipschitz_check",
]

NUDGE = 1e-12
T = Var(0)


@lru_cache(maxsize=None)
def _K(n: int, L: float) -> float:
    if n == 1:
        return 1.0
    return _K(n - 1, L) * (1 + 4 * L) + L + 1


@lru_cache(maxsize=None)
def _k(n: int, L: float) -> float:
    if n == 1:
        return L
    return L * _K(n - 1, _k(n - 1, L))


def whitney_constants(n: int, L: float) -> tuple[float, float]:
    """(K(n, L), k(n, L)): curve-speed constant and Lipschitz constant of an L-cell in R^n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    L = float(L)
    if not L >= 0 or not math.isfinite(L):
        raise ValueError("L must be finite and non-negative")
    return _K(n, L), _k(n, L)


@dataclass(frozen=True)
class WhitneyConstants:
    n: int
    L: float

    @property
    def K(self) -> float:
        return whitney_constants(self.n, self.L)[0]

    @property
    def k(self) -> float:
        return whitney_constants(self.n, self.L)[1]

    def table(self) -> list[dict]:
        return [{"n": d, "K": _K(d, self.L), "k": _k(d, self.L)} for d in range(1, self.n + 1)]


def cell_lipschitz(c: CellDomain) -> float:
    """Lipschitz constant of the functions defining ``c``, from its declared derivative bound."""
    M = c.M
    if M is None:
        raise CellError("cell lacks a declared derivative bound")
    # an M-cell of R^n is a k(n, M)-Lipschitz cell
    return _k(c.ambient_dim, float(M))


@dataclass(frozen=True)
class DefinableCurve:
    """A curve [0, 1] -> R^n given by closed-form pieces on consecutive subintervals."""

    pieces: tuple[VectorMap, ...]
    breaks: tuple[float, ...]
    x: np.ndarray
    y: np.ndarray

    @property
    def n(self) -> int:
        return self.pieces[0].codomain_dim

    def _piece_index(self, t: np.ndarray) -> np.ndarray:
        return np.clip(np.searchsorted(np.asarray(self.breaks), t, side="right") - 1, 0, len(self.pieces) - 1)

    def __call__(self, t) -> np.ndarray:
        return self.jet(t)[0]

    def jet(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Positions (N, n) and velocities (N, n) at the parameters t."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = self._piece_index(t)
        P = np.empty((len(t), self.n))
        V = np.empty((len(t), self.n))
        for i, piece in enumerate(self.pieces):
            sel = idx == i
            if not sel.any():
                continue
            out = piece.dual(Dual.seed(t[sel, None]))
            P[sel] = np.stack([o.val for o in out], axis=1)
            V[sel] = np.stack([o.grad[0] for o in out], axis=1)
        return P, V

    def speed(self, t) -> np.ndarray:
        return np.linalg.norm(self.jet(t)[1], axis=1)

    def length(self, tol: float = 1e-12) -> float:
        cuts = tuple((0, b) for b in self.breaks[1:-1])
        return integrate_unit_cube(lambda S: self.speed(S[:, 0]), 1, tol=tol, cuts=cuts).value


def _segment(x: np.ndarray, y: np.ndarray) -> list:
    return [Const(float(a)) + T * Const(float(b - a)) for a, b in zip(x, y)]


def _build(c: CellDomain, x: np.ndarray, y: np.ndarray, tol: float) -> list:
    if isinstance(c, Point):
        if np.max(np.abs(x - np.asarray(c.coords)), initial=0.0) > tol or np.max(
            np.abs(y - np.asarray(c.coords)), initial=0.0
        ) > tol:
            raise CellError("endpoint is not the point cell", x)
        return [Const(float(v)) for v in c.coords]
    if isinstance(c, Interval):
        for p in (x, y):
            if not c.a - tol <= p[0] <= c.b + tol:
                raise CellError(f"endpoint {p[0]} outside ({c.a}, {c.b})", p)
        return _segment(x, y)
    base_x, base_y = x[:-1], y[:-1]
    alpha = _build(c.base, base_x, base_y, tol)
    sub = dict(enumerate(alpha))
    if isinstance(c, GraphExt):
        f = c.f.components[0]
        for p in (x, y):
            fv = float(c.f(p[None, :-1])[0, 0])
            if abs(p[-1] - fv) > tol * (1 + abs(fv)):
                raise CellError("endpoint is off the graph", p)
        return alpha + [f.substitute(sub)]
    if isinstance(c, BandExt):
        pos = []
        for p in (x, y):
            g = float(c.g(p[None, :-1])[0, 0])
            h = float(c.h(p[None, :-1])[0, 0])
            w = (p[-1] - g) / (h - g)
            if not -tol <= w <= 1 + tol:
                raise CellError("endpoint outside the band", p)
            # boundary endpoints: the cell is open, so move them inside
            pos.append(min(max(w, NUDGE), 1 - NUDGE))
        u, v = pos
        g = c.g.components[0].substitute(sub)
        h = c.h.components[0].substitute(sub)
        lt = Const(u) + T * Const(v - u)
        return alpha + [g + lt * (h - g)]
    raise CellError(f"unsupported cell {type(c).__name__}")


def connect_points(c: CellDomain, x, y, tol: float = 1e-9) -> DefinableCurve:
    """The recursive connecting curve from x to y inside the cell ``c``."""
    n = c.ambient_dim
    x = np.asarray(x, dtype=float).reshape(n)
    y = np.asarray(y, dtype=float).reshape(n)
    comps = _build(c, x, y, tol)
    return DefinableCurve((VectorMap(tuple(comps), 1),), (0.0, 1.0), x, y)


def _pairs(c: CellDomain, trials: int, rng: np.random.Generator):
    S = rng.random((2 * trials, c.dim))
    S = np.clip(S, 1e-9, 1 - 1e-9)
    P = c.unit_points(S)
    return P[:trials], P[trials:]


def whitney_verify(
    c: CellDomain,
    K_bound: float | None = None,
    trials: int = 1000,
    rng: np.random.Generator | None = None,
    t_samples: int = 1000,
) -> dict:
    """Build connecting curves for random pairs and compare their length with K |x - y|.

    Every curve is also checked for exact endpoints, strict containment at the
    sampled parameters and the pointwise speed bound.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    n = c.ambient_dim
    L = cell_lipschitz(c) if c.dim > 0 and n > 1 else 0.0
    K_cell = whitney_constants(n, L)[0]
    K_bound = K_cell if K_bound is None else float(K_bound)
    X, Y = _pairs(c, trials, rng)
    ts = np.linspace(0.0, 1.0, t_samples)
    max_ratio = 0.0
    max_speed_ratio = 0.0
    endpoint_error = 0.0
    outside = 0
    for x, y in zip(X, Y):
        d = float(np.linalg.norm(x - y))
        if d == 0.0:
            continue
        curve = connect_points(c, x, y)
        P, V = curve.jet(ts)
        endpoint_error = max(endpoint_error, float(np.max(np.abs(P[0] - x))), float(np.max(np.abs(P[-1] - y))))
        outside += int(np.count_nonzero(~c.contains(P)))
        max_speed_ratio = max(max_speed_ratio, float(np.max(np.linalg.norm(V, axis=1))) / d)
        max_ratio = max(max_ratio, curve.length() / d)
    passed = (
        max_ratio <= K_bound
        and max_speed_ratio <= K_bound * (1 + 1e-8)
        and endpoint_error <= 1e-12 * max(1.0, float(np.max(np.abs(np.vstack([X, Y])))))
        and outside == 0
    )
    return {
        "max_ratio": max_ratio,
        "max_speed_ratio": max_speed_ratio,
        "K_bound": K_bound,
        "L": L,
        "endpoint_error": endpoint_error,
        "outside": outside,
        "trials": int(trials),
        "pass": bool(passed),
    }


def lipschitz_check(
    c: CellDomain, f: VectorMap, M: float, trials: int = 1000, rng: np.random.Generator | None = None
) -> dict:
    """Sampled Lipschitz ratio of an M-function on an M-cell against the bound k(n + 1, M)."""
    rng = np.random.default_rng(0) if rng is None else rng
    n = c.ambient_dim
    X, Y = _pairs(c, trials, rng)
    d = np.linalg.norm(X - Y, axis=1)
    keep = d > 0
    ratio = np.abs(f(X[keep])[:, 0] - f(Y[keep])[:, 0]) / d[keep]
    # the cell is k(n, M)-Lipschitz, so curves have speed K(n, k(n, M)) and f gains the factor M
    bound = float(M) * _K(n, _k(n, float(M)))
    worst = float(ratio.max(initial=0.0))
    return {"max_ratio": worst, "bound": bound, "pass": bool(worst <= bound)}
