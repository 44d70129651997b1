"""The inductive M-cell grammar.

A cell of dimension ``dim`` living in ``R^ambient_dim`` is built from a point or an
open interval by repeatedly taking either the graph of a function over the
previous cell or the open band between two functions.  Every open cell is the
image of the unit cube ``(0,1)^dim`` under a canonical map (affine on the
interval, fibrewise affine in the bands); all sampling, quadrature and
subdivision in the package goes through that map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.stats import qmc

from .expr import DomainError, Dual, Expr, VectorMap, as_expr, parse_expr

__all__ = [
    "CellDomain",
    "Point",
    "Interval",
    "GraphExt",
    "BandExt",
    "CellError",
    "EmptyBandError",
    "BoundViolation",
    "unit_samples",
    "cell_from_doc",
]


class CellError(ValueError):
    def __init__(self, message: str, witness=None):
        super().__init__(message)
        self.witness = None if witness is None else np.asarray(witness, dtype=float).tolist()


class EmptyBandError(CellError):
    pass


class BoundViolation(CellError):
    pass


def _rows(S, d: int) -> np.ndarray:
    """``S`` as a (N, d) float array; for d = 0 a single row unless S is already 2-D."""
    S = np.asarray(S, dtype=float)
    if d == 0:
        return np.zeros((len(S) if S.ndim == 2 else 1, 0))
    return S.reshape(-1, d)

@lru_cache(maxsize=256)
def unit_samples(d: int, count: int, seed: int = 20240917) -> np.ndarray:
    """Deterministic quasi-random points in the open unit cube, shape (count, d); read-only."""
    if d == 0:
        pts = np.zeros((count, 0))
    else:
        pts = np.clip(qmc.Halton(d, scramble=True, seed=seed).random(count), 1e-12, 1 - 1e-12)
    pts.setflags(write=False)
    return pts


def _lift(value, n: int, k: int) -> Dual:
    if isinstance(value, Dual):
        return value
    return Dual(np.broadcast_to(np.asarray(value, dtype=float), (n,)).copy(), np.zeros((k, n)))


def _op_norm(D: np.ndarray) -> np.ndarray:
    """Operator norms of a stack of matrices (N, m, d)."""
    if D.shape[1] == 1 or D.shape[2] == 1:
        return np.sqrt(np.sum(D * D, axis=(1, 2)))
    return np.linalg.norm(D, ord=2, axis=(1, 2))


class CellDomain:
    """Base class; concrete cells are frozen dataclasses below."""

    dim: int
    ambient_dim: int

    # -- parametrisation ----------------------------------------------------
    def unit_dual(self, s: list[Dual], n: int, k: int) -> list[Dual]:
        raise NotImplementedError

    def unit_points(self, S) -> np.ndarray:
        """Images of unit-cube points ``S`` (N, dim) in R^ambient_dim."""
        S = _rows(S, self.dim)
        with np.errstate(all="ignore"):
            duals = self.unit_dual(Dual.seed(S) if self.dim else [], len(S), max(self.dim, 1))
        return np.stack([d.val for d in duals], axis=1)

    def unit_jet(self, S) -> tuple[np.ndarray, np.ndarray]:
        """Points and the derivative of the unit map, shapes (N, a) and (N, a, dim)."""
        S = _rows(S, self.dim)
        with np.errstate(all="ignore"):
            duals = self.unit_dual(Dual.seed(S) if self.dim else [], len(S), max(self.dim, 1))
        P = np.stack([d.val for d in duals], axis=1)
        J = np.stack([d.grad.T for d in duals], axis=1)[:, :, : self.dim]
        return P, J

    def pattern(self) -> tuple[int, ...]:
        raise NotImplementedError

    @property
    def M(self) -> float | None:
        """Largest declared derivative bound along the constructor chain (None if any missing)."""
        raise NotImplementedError

    def contains(self, P, tol: float = 1e-9) -> np.ndarray:
        raise NotImplementedError

    def restrict(self, box) -> "CellDomain":
        raise NotImplementedError

    def substitute(self, mapping: dict[int, Expr]) -> "CellDomain":
        return self

    def sample(self, count: int, seed: int = 20240917) -> np.ndarray:
        return self.unit_points(unit_samples(self.dim, count, seed))

    def validate(self, count: int = 1000) -> None:
        """Sampling checks: functions defined, bands non-empty, declared bounds respected."""
        S = unit_samples(self.dim, count)
        self._validate(S)

    def _validate(self, S) -> None:
        pass

    def to_doc(self) -> dict:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.to_doc()})"


@dataclass(frozen=True, repr=False)
class Point(CellDomain):
    coords: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(float(c) for c in self.coords))

    @property
    def dim(self):
        return 0

    @property
    def ambient_dim(self):
        return len(self.coords)

    def pattern(self):
        return (0,) * len(self.coords)

    @property
    def M(self):
        return 0.0

    def unit_dual(self, s, n, k):
        return [Dual(np.full(n, c), np.zeros((k, n))) for c in self.coords]

    def unit_points(self, S):
        S = np.asarray(S, dtype=float)
        count = len(S) if S.ndim == 2 else 1
        return np.tile(np.asarray(self.coords, dtype=float), (count, 1))

    def contains(self, P, tol=1e-9):
        P = np.asarray(P, dtype=float).reshape(-1, self.ambient_dim)
        return np.all(np.abs(P - np.asarray(self.coords)) <= tol, axis=1)

    def restrict(self, box):
        return self

    def to_doc(self):
        return {"point": list(self.coords)}


@dataclass(frozen=True, repr=False)
class Interval(CellDomain):
    a: float
    b: float

    def __post_init__(self):
        a, b = float(self.a), float(self.b)
        if not (math.isfinite(a) and math.isfinite(b)) or not a < b:
            raise EmptyBandError(f"empty interval ({a}, {b})", [a])
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def dim(self):
        return 1

    @property
    def ambient_dim(self):
        return 1

    def pattern(self):
        return (1,)

    @property
    def M(self):
        return 0.0

    def unit_dual(self, s, n, k):
        return [s[0] * (self.b - self.a) + self.a]

    def contains(self, P, tol=1e-9):
        x = np.asarray(P, dtype=float).reshape(-1, 1)[:, 0]
        return (x > self.a) & (x < self.b)

    def restrict(self, box):
        (lo, hi), = np.asarray(box, dtype=float).reshape(1, 2)
        w = self.b - self.a
        return Interval(self.a + lo * w, self.a + hi * w)

    def to_doc(self):
        return {"interval": [self.a, self.b]}


def _check_functions(name: str, fns: list[VectorMap], X: np.ndarray, bound: float | None):
    for F in fns:
        vals = F(X)
        bad = ~np.all(np.isfinite(vals), axis=1)
        if bad.any():
            raise DomainError(f"{name}: function {F.texts()} undefined at {X[bad][0].tolist()}", X[bad][0])
        if bound is not None:
            D = F.jacobian(X)
            norms = _op_norm(D)
            ok = np.isfinite(norms) & (norms <= bound * (1 + 1e-9))
            if not ok.all():
                i = int(np.argmin(ok))
                raise BoundViolation(
                    f"{name}: |Df| = {norms[i]:.6g} exceeds declared bound {bound} at {X[i].tolist()}", X[i]
                )


@dataclass(frozen=True, repr=False)
class GraphExt(CellDomain):
    base: CellDomain
    f: VectorMap
    bound: float | None = None

    def __post_init__(self):
        f = self.f
        if not isinstance(f, VectorMap):
            f = VectorMap((as_expr(f),), self.base.ambient_dim)
        if f.codomain_dim != 1 or f.domain_dim != self.base.ambient_dim:
            raise CellError("graph_ext function must map the base ambient space to R")
        object.__setattr__(self, "f", f)

    @property
    def dim(self):
        return self.base.dim

    @property
    def ambient_dim(self):
        return self.base.ambient_dim + 1

    def pattern(self):
        return self.base.pattern() + (0,)

    @property
    def M(self):
        m = self.base.M
        if m is None or self.bound is None:
            return None
        return max(m, self.bound)

    def unit_dual(self, s, n, k):
        base = self.base.unit_dual(s, n, k)
        return base + [_lift(self.f.components[0].dual(base) if base else self.f.components[0]._eval([]), n, k)]

    def contains(self, P, tol=1e-9):
        P = np.asarray(P, dtype=float).reshape(-1, self.ambient_dim)
        inside = self.base.contains(P[:, :-1], tol)
        fv = self.f(P[:, :-1])[:, 0]
        return inside & (np.abs(P[:, -1] - fv) <= tol * (1 + np.abs(fv)))

    def restrict(self, box):
        return GraphExt(self.base.restrict(box), self.f, self.bound)

    def substitute(self, mapping):
        return GraphExt(self.base.substitute(mapping), _sub_map(self.f, mapping), self.bound)

    def _validate(self, S):
        self.base._validate(S)
        X = self.base.unit_points(S)
        _check_functions("graph_ext", [self.f], X, self.bound)

    def to_doc(self):
        doc = {"graph_ext": {"base": self.base.to_doc(), "f": self.f.components[0].to_str()}}
        if self.bound is not None:
            doc["bound"] = self.bound
        return doc


@dataclass(frozen=True, repr=False)
class BandExt(CellDomain):
    base: CellDomain
    g: VectorMap
    h: VectorMap
    bound: float | None = None

    def __post_init__(self):
        d = self.base.ambient_dim
        for name in ("g", "h"):
            F = getattr(self, name)
            if not isinstance(F, VectorMap):
                F = VectorMap((as_expr(F),), d)
            if F.codomain_dim != 1 or F.domain_dim != d:
                raise CellError("band_ext bounds must map the base ambient space to R")
            object.__setattr__(self, name, F)

    @property
    def dim(self):
        return self.base.dim + 1

    @property
    def ambient_dim(self):
        return self.base.ambient_dim + 1

    def pattern(self):
        return self.base.pattern() + (1,)

    @property
    def M(self):
        m = self.base.M
        if m is None or self.bound is None:
            return None
        return max(m, self.bound)

    def _gh(self, base, n, k):
        g, h = self.g.components[0], self.h.components[0]
        if base:
            return g.dual(base), h.dual(base)
        return _lift(g._eval([]), n, k), _lift(h._eval([]), n, k)

    def unit_dual(self, s, n, k):
        base = self.base.unit_dual(s[: self.base.dim], n, k)
        g, h = self._gh(base, n, k)
        g, h = _lift(g, n, k), _lift(h, n, k)
        return base + [g + s[self.base.dim] * (h - g)]

    def contains(self, P, tol=1e-9):
        P = np.asarray(P, dtype=float).reshape(-1, self.ambient_dim)
        X = P[:, :-1]
        inside = self.base.contains(X, tol)
        g = self.g(X)[:, 0]
        h = self.h(X)[:, 0]
        return inside & (P[:, -1] > g) & (P[:, -1] < h)

    def restrict(self, box):
        box = np.asarray(box, dtype=float).reshape(-1, 2)
        base = self.base.restrict(box[:-1]) if self.base.dim else self.base
        lo, hi = float(box[-1, 0]), float(box[-1, 1])
        g, h = self.g.components[0], self.h.components[0]
        new_g = g if lo == 0.0 else g + lo * (h - g)
        new_h = h if hi == 1.0 else g + hi * (h - g)
        d = self.base.ambient_dim
        return BandExt(base, VectorMap((new_g,), d), VectorMap((new_h,), d), self.bound)

    def substitute(self, mapping):
        return BandExt(self.base.substitute(mapping), _sub_map(self.g, mapping), _sub_map(self.h, mapping), self.bound)

    def _validate(self, S):
        self.base._validate(S[:, : self.base.dim])
        X = self.base.unit_points(S[:, : self.base.dim])
        _check_functions("band_ext", [self.g, self.h], X, self.bound)
        g = self.g(X)[:, 0]
        h = self.h(X)[:, 0]
        bad = ~(g < h)
        if bad.any():
            i = int(np.argmax(bad))
            raise EmptyBandError(f"empty band: g >= h at {X[i].tolist()} (g={g[i]:.6g}, h={h[i]:.6g})", X[i])

    def to_doc(self):
        doc = {
            "band_ext": {
                "base": self.base.to_doc(),
                "g": self.g.components[0].to_str(),
                "h": self.h.components[0].to_str(),
            }
        }
        if self.bound is not None:
            doc["bound"] = self.bound
        return doc


def _sub_map(F: VectorMap, mapping: dict[int, Expr]) -> VectorMap:
    comps = tuple(c.substitute(mapping) for c in F.components)
    return VectorMap(comps, F.domain_dim, F.declared_bound)


def _number(value, where: str) -> float:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, str):
        e = parse_expr(value)
        if e.variables():
            raise CellError(f"{where}: endpoint must be constant, got {value!r}")
        return float(e.evaluate(np.zeros((1, 0)))[0])
    raise CellError(f"{where}: expected a number, got {value!r}")


def cell_from_doc(doc: dict, where: str = "domain") -> CellDomain:
    """Build a cell from its JSON tree (``interval``, ``point``, ``graph_ext``, ``band_ext``)."""
    if not isinstance(doc, dict):
        raise CellError(f"{where}: cell must be an object")
    bound = doc.get("bound")
    if bound is not None:
        bound = _number(bound, where + ".bound")
    keys = [k for k in doc if k != "bound"]
    if len(keys) != 1:
        raise CellError(f"{where}: cell must have exactly one constructor, got {keys}")
    (key,) = keys
    body = doc[key]
    if key == "point":
        return Point(tuple(_number(v, where) for v in body))
    if key == "interval":
        if not isinstance(body, (list, tuple)) or len(body) != 2:
            raise CellError(f"{where}: interval needs [a, b]")
        return Interval(_number(body[0], where), _number(body[1], where))
    if key == "graph_ext":
        base = cell_from_doc(body["base"], where + ".base")
        return GraphExt(base, VectorMap((parse_expr(body["f"]),), base.ambient_dim), bound)
    if key == "band_ext":
        base = cell_from_doc(body["base"], where + ".base")
        d = base.ambient_dim
        return BandExt(base, VectorMap((parse_expr(body["g"]),), d), VectorMap((parse_expr(body["h"]),), d), bound)
    raise CellError(f"{where}: unknown cell constructor {key!r}")
