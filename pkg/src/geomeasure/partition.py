"""Flatness constants, epsilon-flat refinement and basic rectifiable partitions.

A patch is cut into dyadic parameter boxes until its Gauss map varies by less
than ``eps`` (projection-norm distance between tangent spaces) on every box.
Each flat piece is then rotated so that its central tangent space becomes the
span of the first e axes, where it is the graph of a function whose derivative
is bounded by ``M_n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.special import betainc

from .cells import _op_norm, unit_samples
from .linalg import LinearSubspace, projection_distances, rotation_from_basis, sphere_volume
from .patches import ChartPatch, Patch, PatchError, Scene, project_points

__all__ = [
    "PartitionConstants",
    "GraphifyError",
    "TransverseError",
    "band_volume",
    "epsilon_n",
    "partition_constants",
    "choose_transverse_direction",
    "tangent_spread",
    "eflat_refine",
    "graphify",
    "rectifiable_partition",
]

DYADIC_BITS = 16


class GraphifyError(PatchError):
    pass


class TransverseError(RuntimeError):
    pass


def band_volume(n: int, eps: float) -> float:
    """Surface measure of {v in S^(n-1) : |v - pi_X v| <= 2 eps} for a hyperplane X."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= eps <= 0.5:
        raise ValueError(f"eps must lie in [0, 1/2], got {eps}")
    if eps == 0.0:
        return 0.0
    if n == 1:
        # S^0 = {-1, 1}; both points are at distance 1 from the hyperplane {0}
        return 2.0 if 2 * eps >= 1.0 else 0.0
    t = min(4.0 * eps * eps, 1.0)
    return sphere_volume(n - 1) * float(betainc(0.5, (n - 1) / 2.0, t))


def _eps_ok(n: int, eps: float) -> bool:
    return 2 * n * band_volume(n, eps) < sphere_volume(n - 1)


@lru_cache(maxsize=None)
def epsilon_n(n: int) -> Fraction:
    """Largest k / 2^16 <= 1/4 with 2n band_volume(n, eps) < vol(S^(n-1))."""
    if n < 1:
        raise ValueError("n must be >= 1")
    denom = 2**DYADIC_BITS
    lo, hi = 0, denom // 4
    if _eps_ok(n, hi / denom):
        return Fraction(hi, denom)
    # band_volume is increasing in eps: bisect on the numerator
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _eps_ok(n, mid / denom):
            lo = mid
        else:
            hi = mid
    return Fraction(lo, denom)


@dataclass(frozen=True)
class PartitionConstants:
    n: int
    epsilon_n: Fraction
    M_n: int

    @property
    def eps(self) -> float:
        return float(self.epsilon_n)


@lru_cache(maxsize=None)
def partition_constants(n: int) -> PartitionConstants:
    """epsilon_n and the derivative bound M_n (smallest integer above the previous bound and sqrt(4/eps^2 - 1))."""
    eps = epsilon_n(n)
    need = math.sqrt(4.0 / float(eps) ** 2 - 1.0)
    prev = partition_constants(n - 1).M_n if n > 1 else 0
    M = max(prev, math.floor(need) + 1)
    return PartitionConstants(n, eps, M)


# --------------------------------------------------------------------------- transverse direction


def choose_transverse_direction(
    tangents: Sequence[LinearSubspace], eps: float, rng: np.random.Generator, budget: int = 100_000
) -> LinearSubspace:
    """A unit direction P with |v - pi_X v| > eps for every supplied subspace X (rejection sampling)."""
    if not tangents:
        raise ValueError("need at least one subspace")
    n = tangents[0].ambient_dim
    Ps = np.stack([X.projection for X in tangents])
    drawn = 0
    batch = 1024
    while drawn < budget:
        m = min(batch, budget - drawn)
        V = rng.standard_normal((m, n))
        V /= np.linalg.norm(V, axis=1, keepdims=True)
        drawn += m
        resid = V[:, None, :] - np.einsum("kij,mj->mki", Ps, V)
        dist = np.linalg.norm(resid, axis=2)
        ok = np.all(dist > eps, axis=1)
        if ok.any():
            return LinearSubspace(V[int(np.argmax(ok))])
    raise TransverseError(f"no direction clears all {len(tangents)} subspaces by {eps} after {budget} draws")


# --------------------------------------------------------------------------- refinement


def _probe_points(e: int, samples: int) -> np.ndarray:
    S = unit_samples(e, samples)
    if e:
        corners = np.stack(np.meshgrid(*([[1e-6, 1 - 1e-6]] * e), indexing="ij"), axis=-1).reshape(-1, e)
        S = np.vstack([S, corners])
    return S


def tangent_spread(p: Patch, box=None, samples: int = 17) -> float:
    """Largest projection-norm distance between sampled tangent spaces on a parameter box."""
    if p.e == 0:
        return 0.0
    S = _probe_points(p.e, samples)
    if box is not None:
        box = np.asarray(box, dtype=float)
        S = box[:, 0] + S * (box[:, 1] - box[:, 0])
    T = p.tangent_bases_unit(S)
    P = np.einsum("mik,mjk->mij", T, T)
    D = projection_distances(P[:, None], P[None, :])
    return float(D.max())


def _split(box: np.ndarray) -> list[np.ndarray]:
    e = len(box)
    mid = 0.5 * (box[:, 0] + box[:, 1])
    out = []
    for corner in np.stack(np.meshgrid(*([[0, 1]] * e), indexing="ij"), axis=-1).reshape(-1, e):
        lo = np.where(corner, mid, box[:, 0])
        hi = np.where(corner, box[:, 1], mid)
        out.append(np.stack([lo, hi], axis=1))
    return out


def _kink_boxes(p: Patch) -> list[np.ndarray]:
    e = p.e
    edges = []
    for axis in range(e):
        cuts = sorted({0.0, 1.0, *(t for a, t in p.kinks if a == axis and 0.0 < t < 1.0)})
        edges.append(list(zip(cuts[:-1], cuts[1:])))
    boxes = [np.zeros((0, 2))]
    for axis_edges in edges:
        boxes = [np.vstack([b, [interval]]) for b in boxes for interval in axis_edges]
    return boxes


def _refine_boxes(p: Patch, eps: float, samples: int, max_depth: int):
    """(box, depth, verified) triples covering the unit cube of ``p``."""
    if p.e == 0:
        return [(np.zeros((0, 2)), 0, True)]
    out = []
    stack = [(b, 0) for b in reversed(_kink_boxes(p))]
    while stack:
        box, depth = stack.pop()
        if tangent_spread(p, box, samples) < eps:
            out.append((box, depth, True))
        elif depth >= max_depth:
            out.append((box, depth, False))
        else:
            stack.extend((b, depth + 1) for b in reversed(_split(box)))
    return out


def eflat_refine(p: Patch, eps: float, samples: int = 17, max_depth: int = 12) -> list[Patch]:
    """Dyadic subdivision of ``p`` into pieces with sampled tangent spread below ``eps``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    bound = getattr(p, "bound", None)
    if p.kind == "graph" and bound is not None and not math.isfinite(bound):
        raise PatchError("patch bound is infinite")
    pieces = []
    for box, _, ok in _refine_boxes(p, eps, samples, max_depth):
        piece = p.restrict(box) if p.e else p
        pieces.append(piece.with_flags("eps_flat" if ok else "unverified"))
    return pieces


# --------------------------------------------------------------------------- graphs


def graphify(p: Patch, constants: PartitionConstants, samples: int = 65) -> ChartPatch:
    """Present a flat piece as a graph over its central tangent space (rotated chart)."""
    e, n = p.e, p.n
    M = float(constants.M_n)
    center = np.full((1, e), 0.5)
    if e == 0:
        R = np.eye(n)
        origin = p.points(center)[0]
        return ChartPatch(p, R, origin, 0.0, p.flags)
    T = p.tangent_bases_unit(center)[0]
    R = rotation_from_basis(T)
    origin = p.points(center)[0]
    chart = ChartPatch(p, R, origin, M, p.flags)
    S = np.vstack([unit_samples(e, samples), _probe_points(e, 0)])
    q, z, Dq, Dz = chart.chart_jet(S)
    det = np.linalg.det(Dq)
    if np.any(~np.isfinite(det)) or np.any(np.abs(det) <= 1e-14 * np.max(np.abs(Dq), axis=(1, 2)) ** e):
        raise GraphifyError("base projection degenerates: piece is not flat enough")
    Df = Dz @ np.linalg.inv(Dq)
    if n > e:
        norms = _op_norm(Df)
        if np.any(norms > M * (1 + 1e-9)):
            i = int(np.argmax(norms))
            raise GraphifyError(f"|Df| = {norms[i]:.6g} exceeds M_n = {M}", p.domain_points(S[i:i + 1])[0])
        # graph property: no two samples over (nearly) the same base point
        dq = np.linalg.norm(q[:, None] - q[None], axis=2)
        dz = np.linalg.norm(z[:, None] - z[None], axis=2)
        viol = dz > M * dq * (1 + 1e-9) + 1e-12
        if viol.any():
            i, _ = np.argwhere(viol)[0]
            raise GraphifyError("two sample points lie over one base point", p.domain_points(S[i:i + 1])[0])
    return chart


def _sample_on(patches: Sequence[Patch], X: np.ndarray, tol: float) -> np.ndarray:
    on = np.zeros(len(X), dtype=bool)
    for q in patches:
        d, _ = project_points(q, X)
        on |= d <= tol
    return on


def rectifiable_partition(
    s: Scene, e: int, eps: float | None = None, samples: int = 17, max_depth: int = 12
) -> Scene:
    """Cut every e-dimensional patch into rotated graph pieces with bound M_n.

    Lower-dimensional patches are dropped (they carry no e-dimensional measure).
    In scenes flagged ``overlapping`` earlier patches take precedence: parameter
    boxes of later patches whose samples lie on an earlier patch are removed.
    """
    n = s.ambient_dim
    const = partition_constants(n)
    eps = const.eps if eps is None else float(eps)
    scale = max(1.0, float(np.max(s.bounding_box[1] - s.bounding_box[0])))
    out: list[Patch] = []
    earlier: list[Patch] = []
    for p in s.patches:
        if p.e > e:
            raise PatchError(f"patch of dimension {p.e} exceeds e = {e}")
        if p.e < e:
            continue
        boxes = _refine_boxes(p, eps, samples, max_depth)
        work = [(box, depth, ok) for box, depth, ok in boxes]
        while work:
            box, depth, ok = work.pop()
            piece = p.restrict(box) if p.e else p
            if s.overlapping and earlier:
                on = _sample_on(earlier, piece.points(_probe_points(p.e, samples)), 1e-7 * scale)
                if on.all():
                    continue
                if on.any():
                    if depth < max_depth + 4 and p.e:
                        work.extend((b, depth + 1, ok) for b in _split(box))
                        continue
                    if on.mean() > 0.5:
                        continue
                    piece = piece.with_flags("clipped")
            piece = piece.with_flags("eps_flat" if ok else "unverified")
            try:
                out.append(graphify(piece, const))
            except GraphifyError:
                if depth < max_depth + 4 and p.e:
                    work.extend((b, depth + 1, ok) for b in _split(box))
                else:
                    out.append(ChartPatch(piece, np.eye(n), np.zeros(n), None, piece.flags | {"unverified"}))
        earlier.append(p)
    return Scene(n, tuple(out), s.bounding_box, True, False)


def partition_summary(s: Scene) -> dict:
    bounds = [p.bound for p in s.patches if getattr(p, "bound", None) is not None]
    return {
        "pieces": len(s.patches),
        "max_bound": float(max(bounds)) if bounds else 0.0,
        "flagged": sum(1 for p in s.patches if "unverified" in p.flags),
    }
