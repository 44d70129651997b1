"""Patches (graph, parametric and rotated-chart pieces) and scenes.

Every patch is evaluated through the unit cube of its domain cell: ``jet(S)``
returns realised points together with their derivative with respect to the
unit-cube coordinates, which is all the measure, sampling and intersection code
needs.  Tangent spaces are computed from the derivative with respect to the
domain coordinates instead, so they stay well defined where the cell
parametrisation degenerates (band bounds meeting at a cell edge).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .cells import _rows, BandExt, CellDomain, GraphExt, Interval, Point, unit_samples, _op_norm
from .expr import Const, DomainError, Dual, VectorMap, Var
from .linalg import LinearSubspace, tangent_bases

__all__ = [
    "Frame",
    "Patch",
    "GraphPatch",
    "ParametricPatch",
    "ChartPatch",
    "Scene",
    "PatchError",
    "cell_to_graph",
    "tangent_space",
    "project_points",
]


class PatchError(ValueError):
    def __init__(self, message: str, witness=None):
        super().__init__(message)
        self.witness = None if witness is None else np.asarray(witness, dtype=float).tolist()


def _ro(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Frame:
    """The similarity x -> offset + scale * rotation @ x."""

    scale: float = 1.0
    rotation: np.ndarray | None = None
    offset: np.ndarray | None = None

    def __post_init__(self):
        if self.rotation is not None:
            object.__setattr__(self, "rotation", _ro(self.rotation))
        if self.offset is not None:
            object.__setattr__(self, "offset", _ro(self.offset).reshape(-1))
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def isometry(cls, Q, t=None, tol: float = 1e-10) -> "Frame":
        Q = np.asarray(Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or not np.allclose(Q.T @ Q, np.eye(len(Q)), atol=tol):
            raise ValueError("linear part of an isometry must be orthogonal")
        return cls(1.0, Q, None if t is None else np.asarray(t, dtype=float))

    @property
    def is_identity(self) -> bool:
        return (
            self.scale == 1.0
            and (self.rotation is None or np.array_equal(self.rotation, np.eye(len(self.rotation))))
            and (self.offset is None or not np.any(self.offset))
        )

    def linear(self, n: int) -> np.ndarray:
        Q = np.eye(n) if self.rotation is None else self.rotation
        return self.scale * Q

    def apply(self, P: np.ndarray) -> np.ndarray:
        out = P
        if self.rotation is not None:
            out = out @ self.rotation.T
        if self.scale != 1.0:
            out = out * self.scale
        if self.offset is not None:
            out = out + self.offset
        return out

    def apply_vectors(self, D: np.ndarray) -> np.ndarray:
        """Apply the linear part to a stack of n x k matrices (N, n, k)."""
        out = D
        if self.rotation is not None:
            out = np.einsum("ij,njk->nik", self.rotation, out)
        if self.scale != 1.0:
            out = out * self.scale
        return out

    def then(self, outer: "Frame") -> "Frame":
        """The composite ``outer`` after ``self``."""
        n = None
        for a in (self.rotation, outer.rotation):
            if a is not None:
                n = len(a)
        for a in (self.offset, outer.offset):
            if a is not None:
                n = len(a)
        if n is None:
            return Frame(self.scale * outer.scale)
        Qs = np.eye(n) if self.rotation is None else self.rotation
        Qo = np.eye(n) if outer.rotation is None else outer.rotation
        ts = np.zeros(n) if self.offset is None else self.offset
        to = np.zeros(n) if outer.offset is None else outer.offset
        rot = Qo @ Qs
        off = to + outer.scale * (Qo @ ts)
        return Frame(
            self.scale * outer.scale,
            None if np.array_equal(rot, np.eye(n)) else rot,
            None if not np.any(off) else off,
        )

    def to_doc(self) -> dict | None:
        if self.is_identity:
            return None
        doc: dict = {}
        if self.scale != 1.0:
            doc["scale"] = self.scale
        if self.rotation is not None:
            doc["rotation"] = self.rotation.tolist()
        if self.offset is not None:
            doc["offset"] = self.offset.tolist()
        return doc


IDENTITY = Frame()


def _stack_duals(duals: Sequence[Dual], n: int, k: int):
    P = np.stack([d.val for d in duals], axis=1) if duals else np.zeros((n, 0))
    D = np.stack([d.grad.T for d in duals], axis=1) if duals else np.zeros((n, 0, k))
    return P, D


def _lift(v, n, k):
    if isinstance(v, Dual):
        return v
    return Dual(np.broadcast_to(np.asarray(v, dtype=float), (n,)).copy(), np.zeros((k, n)))


class Patch:
    """Common interface of all patch kinds."""

    kind: str
    n: int
    e: int
    frame: Frame
    kinks: tuple
    flags: frozenset

    # -- evaluation in local coordinates (before the frame) ----------------
    def _jet_local(self, S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def _dx_local(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    @property
    def domain(self) -> CellDomain:
        raise NotImplementedError

    # -- public evaluation ---------------------------------------------------
    def jet(self, S) -> tuple[np.ndarray, np.ndarray]:
        """Realised points (N, n) and derivatives w.r.t. unit-cube coordinates (N, n, e)."""
        S = _rows(S, self.e)
        with np.errstate(all="ignore"):
            P, D = self._jet_local(S)
        return self.frame.apply(P), self.frame.apply_vectors(D)

    def points(self, S) -> np.ndarray:
        return self.jet(S)[0]

    def domain_points(self, S) -> np.ndarray:
        return self.domain.unit_points(S)

    def realize(self, X) -> np.ndarray:
        """Realised points for domain points X (N, e)."""
        X = _rows(X, self.e)
        with np.errstate(all="ignore"):
            P, _ = self._dx_local(X)
        return self.frame.apply(P)

    def map_derivative(self, X) -> np.ndarray:
        """Derivative of the realisation w.r.t. domain coordinates, (N, n, e)."""
        X = _rows(X, self.e)
        with np.errstate(all="ignore"):
            _, D = self._dx_local(X)
        return self.frame.apply_vectors(D)

    def tangent_bases_unit(self, S) -> np.ndarray:
        """Orthonormal tangent bases (N, n, e) at the images of unit-cube points."""
        X = self.domain_points(S)
        D = self.map_derivative(X)
        if not np.all(np.isfinite(D)):
            bad = int(np.argmin(np.all(np.isfinite(D), axis=(1, 2))))
            raise PatchError(f"not differentiable at domain point {X[bad].tolist()}", X[bad])
        if self.e:
            sv = np.linalg.svd(D, compute_uv=False)
            scale = np.maximum(sv[:, 0], 1e-300)
            if np.any(sv[:, -1] <= 1e-10 * scale):
                bad = int(np.argmin(sv[:, -1] / scale))
                raise PatchError(f"rank of the derivative drops below {self.e} at {X[bad].tolist()}", X[bad])
        return tangent_bases(D)

    def sample(self, count: int = 1000) -> np.ndarray:
        return self.points(unit_samples(self.e, count))

    # -- structure -----------------------------------------------------------
    def restrict(self, box) -> "Patch":
        raise NotImplementedError

    def transformed(self, frame: Frame) -> "Patch":
        raise NotImplementedError

    def with_flags(self, *flags: str) -> "Patch":
        return replace(self, flags=frozenset(self.flags) | set(flags))

    def validate(self, count: int = 1000) -> None:
        raise NotImplementedError


def _validate_domain(domain: CellDomain, e: int):
    if e == 0:
        if not isinstance(domain, Point) or domain.coords:
            raise PatchError("a 0-dimensional patch needs the domain {\"point\": []}")
        return
    if domain.ambient_dim != e or domain.dim != e:
        raise PatchError(f"patch domain must be an open {e}-cell in R^{e}, got pattern {domain.pattern()}")


@dataclass(frozen=True, eq=False)
class GraphPatch(Patch):
    """sigma(x, f(x)) for x in an open cell U of R^e."""

    n: int
    e: int
    cell: CellDomain
    map: VectorMap
    permutation: tuple[int, ...] = ()
    bound: float | None = None
    frame: Frame = IDENTITY
    kinks: tuple = ()
    flags: frozenset = frozenset()
    kind = "graph"

    def __post_init__(self):
        perm = tuple(self.permutation) if self.permutation else tuple(range(self.n))
        if sorted(perm) != list(range(self.n)):
            raise PatchError(f"invalid permutation {perm}")
        object.__setattr__(self, "permutation", perm)
        object.__setattr__(self, "flags", frozenset(self.flags))
        object.__setattr__(self, "kinks", tuple(tuple(k) for k in self.kinks))
        _validate_domain(self.cell, self.e)
        if self.map.domain_dim != self.e or self.map.codomain_dim != self.n - self.e:
            raise PatchError(
                f"graph map must be R^{self.e} -> R^{self.n - self.e}, got "
                f"R^{self.map.domain_dim} -> R^{self.map.codomain_dim}"
            )

    @property
    def domain(self):
        return self.cell

    def _assemble(self, x: list[Dual], n: int, k: int):
        fx = [_lift(c, n, k) for c in self.map.dual(x)] if x else [
            _lift(c._eval([]), n, k) for c in self.map.components
        ]
        z = list(x) + fx
        out = [None] * self.n
        for i, j in enumerate(self.permutation):
            out[j] = z[i]
        return _stack_duals(out, n, k)

    def _jet_local(self, S):
        N = len(S)
        k = max(self.e, 1)
        s = Dual.seed(S) if self.e else []
        x = self.cell.unit_dual(s, N, k)
        P, D = self._assemble(x, N, k)
        return P, D[:, :, : self.e]

    def _dx_local(self, X):
        N = len(X)
        k = max(self.e, 1)
        x = Dual.seed(X) if self.e else []
        P, D = self._assemble(x, N, k)
        return P, D[:, :, : self.e]

    def graph_derivative(self, X) -> np.ndarray:
        return self.map.jacobian(_rows(X, self.e))

    def restrict(self, box):
        return replace(self, cell=self.cell.restrict(box) if self.e else self.cell, kinks=())

    def transformed(self, frame: Frame):
        return replace(self, frame=self.frame.then(frame))

    def validate(self, count=1000):
        self.cell.validate(count)
        X = self.domain_points(unit_samples(self.e, count))
        vals = self.map(X)
        bad = ~np.all(np.isfinite(vals), axis=1)
        if bad.any():
            raise DomainError(f"graph map undefined at {X[bad][0].tolist()}", X[bad][0])
        if self.bound is not None and self.e and self.n > self.e:
            norms = _op_norm(self.map.jacobian(X))
            ok = np.isfinite(norms) & (norms <= self.bound * (1 + 1e-9))
            if not ok.all():
                i = int(np.argmin(ok))
                from .cells import BoundViolation

                raise BoundViolation(f"|Df| = {norms[i]:.6g} exceeds bound {self.bound} at {X[i].tolist()}", X[i])


@dataclass(frozen=True, eq=False)
class ParametricPatch(Patch):
    """phi(x) for x in an open cell U of R^e; injectivity is attested by the author."""

    n: int
    e: int
    cell: CellDomain
    map: VectorMap
    injective: bool = True
    frame: Frame = IDENTITY
    kinks: tuple = ()
    flags: frozenset = frozenset()
    kind = "parametric"

    def __post_init__(self):
        object.__setattr__(self, "flags", frozenset(self.flags))
        object.__setattr__(self, "kinks", tuple(tuple(k) for k in self.kinks))
        _validate_domain(self.cell, self.e)
        if self.map.domain_dim != self.e or self.map.codomain_dim != self.n:
            raise PatchError(f"parametric map must be R^{self.e} -> R^{self.n}")

    @property
    def domain(self):
        return self.cell

    def _jet_local(self, S):
        N = len(S)
        k = max(self.e, 1)
        s = Dual.seed(S) if self.e else []
        x = self.cell.unit_dual(s, N, k)
        outs = [_lift(c, N, k) for c in self.map.dual(x)] if x else [
            _lift(c._eval([]), N, k) for c in self.map.components
        ]
        P, D = _stack_duals(outs, N, k)
        return P, D[:, :, : self.e]

    def _dx_local(self, X):
        N = len(X)
        k = max(self.e, 1)
        x = Dual.seed(X) if self.e else []
        outs = [_lift(c, N, k) for c in self.map.dual(x)] if x else [
            _lift(c._eval([]), N, k) for c in self.map.components
        ]
        P, D = _stack_duals(outs, N, k)
        return P, D[:, :, : self.e]

    def restrict(self, box):
        return replace(self, cell=self.cell.restrict(box) if self.e else self.cell, kinks=())

    def transformed(self, frame: Frame):
        return replace(self, frame=self.frame.then(frame))

    def validate(self, count=1000):
        self.cell.validate(count)
        X = self.domain_points(unit_samples(self.e, count))
        D = self.map_derivative(X)
        P = self.realize(X)
        bad = ~(np.all(np.isfinite(P), axis=1) & np.all(np.isfinite(D), axis=(1, 2)))
        if bad.any():
            raise DomainError(f"parametric map undefined at {X[bad][0].tolist()}", X[bad][0])
        if self.e:
            G = np.einsum("nki,nkj->nij", D, D)
            J = np.sqrt(np.clip(np.linalg.det(G), 0, None))
            if np.any(J <= 1e-12):
                i = int(np.argmin(J))
                raise PatchError(f"parametric map is not an immersion at {X[i].tolist()}", X[i])


@dataclass(frozen=True, eq=False)
class ChartPatch(Patch):
    """A piece of ``source`` presented as a graph over the first e axes of ``rotation``.

    In the coordinates y = rotation.T @ (p - origin) the piece is the graph of a
    function over the first e coordinates; the function is the fibre part of the
    source parametrisation composed with the inverse of its base part.
    """

    source: Patch
    rotation: np.ndarray
    origin: np.ndarray
    bound: float | None = None
    flags: frozenset = frozenset()
    kind = "graph"

    def __post_init__(self):
        object.__setattr__(self, "rotation", _ro(self.rotation))
        object.__setattr__(self, "origin", _ro(self.origin).reshape(-1))
        object.__setattr__(self, "flags", frozenset(self.flags))

    @property
    def n(self):
        return self.source.n

    @property
    def e(self):
        return self.source.e

    @property
    def frame(self):
        return IDENTITY

    @property
    def kinks(self):
        return ()

    @property
    def domain(self):
        return self.source.domain

    def jet(self, S):
        return self.source.jet(S)

    def realize(self, X):
        return self.source.realize(X)

    def map_derivative(self, X):
        return self.source.map_derivative(X)

    def _local(self, P):
        return (P - self.origin) @ self.rotation

    def chart_jet(self, S):
        """Base coordinates q (N, e), fibre coordinates (N, n-e) and their unit-cube derivatives."""
        P, D = self.source.jet(S)
        Y = self._local(P)
        DY = np.einsum("ji,njk->nik", self.rotation, D)
        e = self.e
        return Y[:, :e], Y[:, e:], DY[:, :e, :], DY[:, e:, :]

    def graph_derivative_unit(self, S) -> np.ndarray:
        """Df at the base points q(S), computed as D_s z (D_s q)^-1."""
        _, _, Dq, Dz = self.chart_jet(S)
        return Dz @ np.linalg.inv(Dq)

    def locate(self, Y, iters: int = 60) -> np.ndarray:
        """Unit-cube coordinates of the points whose base coordinates are ``Y`` (Newton)."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        S = np.full((len(Y), self.e), 0.5)
        for _ in range(iters):
            q, _, Dq, _ = self.chart_jet(S)
            step = np.linalg.solve(Dq, (Y - q)[..., None])[..., 0]
            S = S + step
            if np.max(np.abs(step)) < 1e-15:
                break
        return S

    def graph_value(self, Y) -> np.ndarray:
        """The graph function at base points ``Y``."""
        S = self.locate(Y)
        return self.chart_jet(S)[1]

    def restrict(self, box):
        return replace(self, source=self.source.restrict(box))

    def transformed(self, frame: Frame):
        n = self.n
        Q = np.eye(n) if frame.rotation is None else frame.rotation
        return ChartPatch(
            self.source.transformed(frame),
            Q @ self.rotation,
            frame.apply(self.origin[None, :])[0],
            self.bound,
            self.flags,
        )

    def validate(self, count=1000):
        self.source.validate(count)


def tangent_space(p: Patch, u) -> LinearSubspace:
    """Tangent space of the realised patch at the domain point ``u``.

    For chart pieces ``u`` is a point of the chart base (the rotated coordinates).
    """
    if isinstance(p, ChartPatch):
        S = p.locate(np.asarray(u, dtype=float).reshape(1, -1))
        return LinearSubspace(p.source.tangent_bases_unit(S)[0])
    u = np.asarray(u, dtype=float).reshape(1, p.e)
    D = p.map_derivative(u)[0]
    if not np.all(np.isfinite(D)):
        raise PatchError(f"not differentiable at {u[0].tolist()}", u[0])
    if p.e == 0:
        return LinearSubspace(np.zeros((p.n, 0)))
    sv = np.linalg.svd(D, compute_uv=False)
    if sv[-1] <= 1e-10 * max(sv[0], 1e-300):
        raise PatchError(f"rank of the derivative is below {p.e} at {u[0].tolist()}", u[0])
    return LinearSubspace(tangent_bases(D[None])[0])


# --------------------------------------------------------------------------- cell -> graph


def cell_to_graph(c: CellDomain) -> GraphPatch:
    """Present an M-cell as a basic rectifiable graph patch (permuted coordinates).

    Follows the induction on the constructor chain: a graph extension appends
    the composed function to the graph map, a band extension turns the band
    over the base graph into a band over the base's free domain with the bounds
    pulled back through the base graph.
    """
    if c.M is None:
        raise PatchError("cell has an undeclared (infinite) derivative bound")
    U, f, perm, bound = _to_graph(c)
    n = c.ambient_dim
    return GraphPatch(n, U.dim if isinstance(U, CellDomain) else 0, U, VectorMap(tuple(f), U.dim), perm, bound)


def _to_graph(c: CellDomain):
    if isinstance(c, Point):
        if len(c.coords) == 0:
            return Point(()), [], (), 0.0
        return Point(()), [Const(v) for v in c.coords], tuple(range(len(c.coords))), 0.0
    if isinstance(c, Interval):
        return c, [], (0,), 0.0
    U, f, perm, L = _to_graph(c.base)
    d = U.dim
    # realised base point as expressions of the free coordinates
    z = [Var(i) for i in range(d)] + list(f)
    b = [None] * c.base.ambient_dim
    for i, j in enumerate(perm):
        b[j] = z[i]
    sub = dict(enumerate(b))
    M = c.bound
    lift = (1.0 + L * L) ** 0.5
    if isinstance(c, GraphExt):
        g = c.f.components[0].substitute(sub)
        new_perm = perm + (c.base.ambient_dim,)
        new_bound = (L * L + (M * lift) ** 2) ** 0.5
        return U, list(f) + [g], new_perm, new_bound
    if isinstance(c, BandExt):
        g = c.g.components[0].substitute(sub)
        h = c.h.components[0].substitute(sub)
        if d == 0:
            zero = np.zeros((1, 0))
            band = Interval(float(g.evaluate(zero)[0]), float(h.evaluate(zero)[0]))
        else:
            band = BandExt(U, VectorMap((g,), d), VectorMap((h,), d), M * lift)
        # the new free coordinate sits at index d of z and is the last realised coordinate
        new_perm = perm[:d] + (c.base.ambient_dim,) + perm[d:]
        return band, list(f), new_perm, L
    raise PatchError(f"unsupported cell {type(c).__name__}")


# --------------------------------------------------------------------------- nearest points


def project_points(p: Patch, X, grid: int = 5, iters: int = 40) -> tuple[np.ndarray, np.ndarray]:
    """Distances from points ``X`` (N, n) to the closure of ``p`` and the minimising unit coordinates."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N = len(X)
    e = p.e
    if e == 0:
        P = p.points(np.zeros((1, 0)))
        return np.linalg.norm(X - P[0], axis=1), np.zeros((N, 0))
    axes = [(np.arange(grid) + 0.5) / grid] * e
    starts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, e)
    m = len(starts)
    S = np.tile(starts, (N, 1))
    T = np.repeat(X, m, axis=0)
    for _ in range(iters):
        P, D = p.jet(S)
        r = P - T
        JtJ = np.einsum("nki,nkj->nij", D, D)
        g = np.einsum("nki,nk->ni", D, r)
        lam = 1e-12 * np.trace(JtJ, axis1=1, axis2=2)[:, None, None] + 1e-300
        step = -np.linalg.solve(JtJ + lam * np.eye(e), g[..., None])[..., 0]
        step = np.where(np.isfinite(step), step, 0.0)
        S_new = np.clip(S + step, 0.0, 1.0)
        if np.max(np.abs(S_new - S)) < 1e-14:
            S = S_new
            break
        S = S_new
    P, _ = p.jet(S)
    dist = np.linalg.norm(P - T, axis=1)
    dist = np.where(np.isfinite(dist), dist, np.inf).reshape(N, m)
    best = np.argmin(dist, axis=1)
    return dist[np.arange(N), best], S.reshape(N, m, e)[np.arange(N), best]


# --------------------------------------------------------------------------- scenes


@dataclass(frozen=True, eq=False)
class Scene:
    ambient_dim: int
    patches: tuple[Patch, ...]
    bounding_box: np.ndarray = field(default=None)
    partitioned: bool = False
    overlapping: bool = False

    def __post_init__(self):
        object.__setattr__(self, "patches", tuple(self.patches))
        for i, p in enumerate(self.patches):
            if p.n != self.ambient_dim:
                raise PatchError(f"patch {i} lives in R^{p.n}, scene is R^{self.ambient_dim}")
        if self.bounding_box is None:
            object.__setattr__(self, "bounding_box", _ro(compute_bounding_box(self.patches, self.ambient_dim)))
        else:
            object.__setattr__(self, "bounding_box", _ro(self.bounding_box))

    @property
    def n(self) -> int:
        return self.ambient_dim

    def circumradius(self) -> float:
        lo, hi = self.bounding_box
        return float(0.5 * np.linalg.norm(hi - lo))

    def center(self) -> np.ndarray:
        lo, hi = self.bounding_box
        return 0.5 * (lo + hi)

    def with_patches(self, patches, **kw) -> "Scene":
        return Scene(self.ambient_dim, tuple(patches), None, kw.get("partitioned", self.partitioned),
                     kw.get("overlapping", self.overlapping))

    def check_box(self, count: int = 1000) -> None:
        lo, hi = self.bounding_box
        for i, p in enumerate(self.patches):
            P = p.sample(count)
            if np.any(P < lo - 1e-12) or np.any(P > hi + 1e-12):
                raise PatchError(f"patch {i} leaves the bounding box")


def compute_bounding_box(patches: Sequence[Patch], n: int, count: int = 1000) -> np.ndarray:
    if not patches:
        return np.zeros((2, n))
    pts = []
    for p in patches:
        S = unit_samples(p.e, count)
        if p.e:
            corners = np.stack(np.meshgrid(*[[1e-9, 0.5, 1 - 1e-9]] * p.e, indexing="ij"), -1).reshape(-1, p.e)
            S = np.vstack([S, corners])
        P = p.points(S)
        pts.append(P[np.all(np.isfinite(P), axis=1)])
    P = np.vstack(pts)
    lo, hi = P.min(axis=0), P.max(axis=0)
    extent = hi - lo
    pad = 0.01 * np.maximum(extent, max(extent.max(), 1e-3))
    return np.stack([lo - pad, hi + pad])
