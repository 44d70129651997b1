"""Jacobians, area-formula measures of patches and scenes, and scene transforms."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .expr import Const, DomainError, VectorMap
from .patches import ChartPatch, Frame, GraphPatch, ParametricPatch, Patch, Scene
from .quadrature import integrate_unit_cube

__all__ = [
    "MeasureReport",
    "MeasureError",
    "InfiniteJacobian",
    "jacobian_Je",
    "jacobian_minors",
    "gram_jacobian",
    "area_measure",
    "hausdorff_measure",
    "transform_scene",
    "embed_scene",
]

JacobianValue = float  # math.inf encodes the infinite value


class MeasureError(ValueError):
    def __init__(self, message: str, witness=None):
        super().__init__(message)
        self.witness = None if witness is None else np.asarray(witness, dtype=float).tolist()


class InfiniteJacobian(MeasureError):
    pass


@dataclass
class MeasureReport:
    value: float
    stderr: float
    method: str
    e: int
    n: int
    samples: int | None = None
    seed: int | None = None
    quad_error: float | None = None
    flagged: bool = False
    pieces: int | None = None
    window: float | None = None
    unstable_fraction: float | None = None
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.stderr >= 0:
            raise ValueError("stderr must be non-negative")

    def to_doc(self) -> dict:
        doc = {
            "value": float(self.value),
            "stderr": float(self.stderr),
            "method": self.method,
            "e": int(self.e),
            "n": int(self.n),
        }
        for key in ("samples", "seed", "pieces"):
            v = getattr(self, key)
            if v is not None:
                doc[key] = int(v)
        for key in ("quad_error", "window", "unstable_fraction"):
            v = getattr(self, key)
            if v is not None:
                doc[key] = float(v)
        if self.flagged:
            doc["flagged"] = True
        if self.warnings:
            doc["warnings"] = list(self.warnings)
        return doc


# --------------------------------------------------------------------------- Jacobians


def gram_jacobian(D: np.ndarray) -> np.ndarray:
    """sqrt(det(D^T D)) for a stack (N, n, e) of derivatives of maps R^e -> R^n."""
    e = D.shape[-1]
    if e == 0:
        return np.ones(D.shape[0])
    if D.shape[-2] == e:
        return np.abs(np.linalg.det(D))
    if e == 1:
        return np.sqrt(np.sum(D * D, axis=(-2, -1)))
    G = np.einsum("nki,nkj->nij", D, D)
    return np.sqrt(np.clip(np.linalg.det(G), 0.0, None))


def jacobian_minors(D: np.ndarray, e: int) -> float:
    """sqrt of the sum of squared e x e minors of the matrix D (direct enumeration)."""
    D = np.asarray(D, dtype=float)
    m, d = D.shape
    if e == 0:
        return 1.0
    total = 0.0
    for rows in itertools.combinations(range(m), e):
        for cols in itertools.combinations(range(d), e):
            total += np.linalg.det(D[np.ix_(rows, cols)]) ** 2
    return math.sqrt(total)


def jacobian_Je(F: VectorMap, a, e: int) -> JacobianValue:
    """J_e F(a): infinite when rank DF(a) > e, else sqrt of the sum of squared e x e minors."""
    a = np.asarray(a, dtype=float).reshape(1, -1)
    vals = F(a)
    D = F.jacobian(a)[0]
    if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(D))):
        raise DomainError(f"F is not differentiable at {a[0].tolist()}", a[0])
    if e == 0:
        return 1.0
    if min(D.shape) == 0:
        return 0.0
    sv = np.linalg.svd(D, compute_uv=False)
    rank = int(np.sum(sv > 1e-10 * sv[0])) if sv[0] > 0 else 0
    if rank > e:
        return math.inf
    if rank < e:
        return 0.0
    return float(np.prod(sv[:e]))


# --------------------------------------------------------------------------- area formula


def _diameter(p: Patch) -> float:
    P = p.sample(64)
    P = P[np.all(np.isfinite(P), axis=1)]
    if len(P) == 0:
        return 1.0
    return float(np.linalg.norm(P.max(axis=0) - P.min(axis=0)))


def area_measure(p: Patch, tol: float = 1e-10, max_depth: int = 14, order: int = 8) -> MeasureReport:
    """H^e of one patch: adaptive quadrature of J_e of the realisation over the unit cube."""
    if isinstance(p, ParametricPatch) and not p.injective:
        raise MeasureError("parametric patch lacks an injectivity attestation")
    e, n = p.e, p.n
    bad: list = []

    def integrand(S):
        _, D = p.jet(S)
        J = gram_jacobian(D)
        finite = np.isfinite(J)
        if not finite.all():
            bad.append(S[~finite][0])
            J = np.where(finite, J, 0.0)
        return J

    scale = max(1.0, _diameter(p)) ** max(e, 1)
    res = integrate_unit_cube(integrand, e, tol=tol * scale, order=order, max_depth=max_depth, cuts=p.kinks,
                              smooth=True)
    if bad:
        raise InfiniteJacobian(f"J_{e} is infinite or undefined at unit point {np.asarray(bad[0]).tolist()}", bad[0])
    flagged = not res.converged and res.error > 1e-6 * max(1.0, abs(res.value))
    return MeasureReport(res.value, 0.0, "area", e, n, quad_error=res.error, flagged=flagged, pieces=1)


def hausdorff_measure(s: Scene, e: int, partition: bool = True, eps: float | None = None) -> MeasureReport:
    """H^e of a scene: partition into basic rectifiable pieces, then sum the area measures."""
    for i, p in enumerate(s.patches):
        if p.e > e:
            raise MeasureError(f"patch {i} has dimension {p.e} > {e}")
    top = [p for p in s.patches if p.e == e]
    if partition and top:
        from .partition import partition_constants, rectifiable_partition

        pieces = rectifiable_partition(s.with_patches(top), e, eps=eps).patches
    else:
        pieces = top
    total = 0.0
    err = 0.0
    flagged = False
    for p in pieces:
        try:
            reports = [area_measure(p)]
        except InfiniteJacobian:
            if not partition:
                raise
            # one retry: re-partition the piece at half the flatness
            fine = 0.5 * (eps if eps is not None else partition_constants(s.ambient_dim).eps)
            sub = rectifiable_partition(s.with_patches([p]), e, eps=fine).patches
            reports = [area_measure(q) for q in sub]
        for r in reports:
            total += r.value
            err += r.quad_error or 0.0
            flagged |= r.flagged
    return MeasureReport(total, 0.0, "area", e, s.ambient_dim, quad_error=err, flagged=flagged, pieces=len(pieces))


# --------------------------------------------------------------------------- transforms


def transform_scene(s: Scene, rotation=None, offset=None, scale: float = 1.0) -> Scene:
    """Apply x -> offset + scale * rotation @ x to every patch."""
    n = s.ambient_dim
    if scale <= 0:
        raise ValueError("scale must be positive")
    if rotation is not None:
        Q = np.asarray(rotation, dtype=float)
        if Q.shape != (n, n) or not np.allclose(Q.T @ Q, np.eye(n), atol=1e-10):
            raise ValueError("linear part must be orthogonal")
    frame = Frame(scale, rotation, offset)
    if frame.is_identity:
        return s
    return Scene(n, tuple(p.transformed(frame) for p in s.patches), None, s.partitioned, s.overlapping)


def _embed_frame(f: Frame, n: int) -> Frame:
    rot = None
    if f.rotation is not None:
        rot = np.eye(n + 1)
        rot[:n, :n] = f.rotation
    off = None if f.offset is None else np.append(f.offset, 0.0)
    return Frame(f.scale, rot, off)


def _embed_patch(p: Patch) -> Patch:
    n = p.n
    if isinstance(p, ChartPatch):
        R = np.eye(n + 1)
        R[:n, :n] = p.rotation
        return ChartPatch(_embed_patch(p.source), R, np.append(p.origin, 0.0), p.bound, p.flags)
    comps = p.map.components + (Const(0.0),)
    fmap = VectorMap(comps, p.map.domain_dim, p.map.declared_bound)
    if isinstance(p, GraphPatch):
        perm = p.permutation + (n,)
        return GraphPatch(n + 1, p.e, p.cell, fmap, perm, p.bound, _embed_frame(p.frame, n), p.kinks, p.flags)
    return ParametricPatch(n + 1, p.e, p.cell, fmap, p.injective, _embed_frame(p.frame, n), p.kinks, p.flags)


def embed_scene(s: Scene) -> Scene:
    """The image of the scene under x -> (x, 0)."""
    return Scene(s.ambient_dim + 1, tuple(_embed_patch(p) for p in s.patches), None, s.partitioned, s.overlapping)
