"""Globally adaptive tensor Gauss-Legendre quadrature over boxes of the unit cube."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

__all__ = ["QuadResult", "gauss_legendre", "integrate_unit_cube", "integrate_box", "tensor_rule"]


@dataclass(frozen=True)
class QuadResult:
    value: float
    error: float
    boxes: int
    evaluations: int
    converged: bool


@lru_cache(maxsize=None)
def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def tensor_rule(d: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = gauss_legendre(order)
    if d == 0:
        return np.zeros((1, 0)), np.ones(1)
    nodes = np.stack(np.meshgrid(*([x] * d), indexing="ij"), axis=-1).reshape(-1, d)
    weights = np.prod(np.stack(np.meshgrid(*([w] * d), indexing="ij"), axis=-1).reshape(-1, d), axis=1)
    return nodes, weights


def _apply_rules(F, lo: np.ndarray, hi: np.ndarray, high: int, lows: tuple[int, ...]):
    """Estimate and error indicator on a batch of boxes (B, d).

    The indicator is the largest difference between the ``high`` rule and the
    lower-order ``lows`` rules; two comparison rules guard against an isolated
    coincidence of errors.
    """
    B, d = lo.shape
    width = hi - lo
    vol = np.prod(width, axis=1)
    est = []
    evals = 0
    for order in (high,) + lows:
        nodes, weights = tensor_rule(d, order)
        pts = lo[:, None, :] + width[:, None, :] * nodes[None, :, :]
        vals = np.asarray(F(pts.reshape(-1, d)), dtype=float).reshape(B, len(weights))
        est.append(vol * (vals @ weights))
        evals += B * len(weights)
    q = est[0]
    err = np.max(np.abs(np.stack([q - e for e in est[1:]])), axis=0)
    return q, err, evals


def _initial_boxes(d: int, cuts) -> tuple[np.ndarray, np.ndarray]:
    edges = []
    for axis in range(d):
        pts = sorted({0.0, 1.0, *(float(t) for a, t in cuts if a == axis and 0.0 < t < 1.0)})
        edges.append(np.array(pts))
    los, his = [np.zeros((1, 0))], [np.zeros((1, 0))]
    lo = np.zeros((1, 0))
    hi = np.zeros((1, 0))
    for e in edges:
        a, b = e[:-1], e[1:]
        k = len(a)
        lo = np.hstack([np.repeat(lo, k, axis=0), np.tile(a, len(lo))[:, None]])
        hi = np.hstack([np.repeat(hi, k, axis=0), np.tile(b, len(hi))[:, None]])
    del los, his
    return lo, hi


def integrate_unit_cube(
    F: Callable[[np.ndarray], np.ndarray],
    d: int,
    tol: float = 1e-10,
    rel_tol: float = 1e-12,
    order: int = 8,
    max_depth: int = 14,
    max_boxes: int = 200_000,
    cuts=(),
    smooth: bool = False,
) -> QuadResult:
    """Integrate ``F`` (vectorised over rows) over (0, 1)^d.

    Each box carries the largest difference between the order ``order`` tensor
    rule and the orders ``order - 1`` and ``order - 3`` as its error; the boxes holding the largest share
    of the total error are bisected along every axis until the total error is
    below ``max(tol, rel_tol * |value|)``.  ``cuts`` lists (axis, position)
    pairs where the integrand is known to be non-smooth; the initial mesh is
    aligned with them.  With ``smooth`` every initial interval is reparametrised
    by t - sin(2 pi t) / (2 pi), which flattens endpoint singularities such as
    square-root edges of band domains.
    """
    if d == 0:
        v = float(np.asarray(F(np.zeros((1, 0))), dtype=float).reshape(-1)[0])
        return QuadResult(v, 0.0, 1, 1, True)
    lows = tuple(sorted({max(order - 1, 1), max(order - 3, 1)}, reverse=True))
    lo, hi = _initial_boxes(d, cuts)
    if smooth:
        F = _smoothed(F, lo, hi)
    depth = np.zeros(len(lo), dtype=int)
    q, err, evals = _apply_rules(F, lo, hi, order, lows)
    done_val = 0.0
    done_err = 0.0
    converged = True
    while True:
        total = done_val + q.sum()
        total_err = done_err + err.sum()
        if not np.isfinite(total):
            converged = False
            break
        target = max(tol, rel_tol * abs(total))
        if total_err <= target:
            break
        order_idx = np.argsort(-err)
        cum = np.cumsum(err[order_idx])
        # refine the boxes carrying half of the excess (at least one)
        m = int(np.searchsorted(cum, 0.5 * err.sum())) + 1
        pick = order_idx[:m]
        capped = depth[pick] >= max_depth
        if capped.all() or len(q) + m * (2**d - 1) > max_boxes:
            converged = False
            break
        pick = pick[~capped]
        keep = np.ones(len(q), dtype=bool)
        keep[pick] = False
        plo, phi, pdep = lo[pick], hi[pick], depth[pick]
        mid = 0.5 * (plo + phi)
        corners = np.stack(np.meshgrid(*([[0, 1]] * d), indexing="ij"), axis=-1).reshape(-1, d).astype(bool)
        clo = np.where(corners[None], mid[:, None, :], plo[:, None, :]).reshape(-1, d)
        chi = np.where(corners[None], phi[:, None, :], mid[:, None, :]).reshape(-1, d)
        cdep = np.repeat(pdep + 1, 2**d)
        cq, cerr, ce = _apply_rules(F, clo, chi, order, lows)
        evals += ce
        # freeze boxes with negligible error to keep the working set small
        lo, hi, depth = np.vstack([lo[keep], clo]), np.vstack([hi[keep], chi]), np.concatenate([depth[keep], cdep])
        q, err = np.concatenate([q[keep], cq]), np.concatenate([err[keep], cerr])
        tiny = err < 1e-3 * target / max(len(err), 1)
        if tiny.any() and tiny.sum() > 1000:
            done_val += q[tiny].sum()
            done_err += err[tiny].sum()
            lo, hi, depth, q, err = lo[~tiny], hi[~tiny], depth[~tiny], q[~tiny], err[~tiny]
    return QuadResult(float(done_val + q.sum()), float(done_err + err.sum()), int(len(q)), int(evals), converged)


def _smoothed(F, lo: np.ndarray, hi: np.ndarray):
    d = lo.shape[1]
    edges = [np.unique(np.concatenate([lo[:, i], hi[:, i]])) for i in range(d)]

    def G(U):
        S = np.empty_like(U)
        w = np.ones(len(U))
        for i, e in enumerate(edges):
            k = np.clip(np.searchsorted(e, U[:, i], side="right") - 1, 0, len(e) - 2)
            a, b = e[k], e[k + 1]
            t = (U[:, i] - a) / (b - a)
            S[:, i] = a + (b - a) * (t - np.sin(2 * np.pi * t) / (2 * np.pi))
            w *= 1.0 - np.cos(2 * np.pi * t)
        return np.asarray(F(S), dtype=float) * w

    return G


def integrate_box(F, lo, hi, **kw) -> QuadResult:
    """Integrate over the box [lo, hi] by mapping to the unit cube."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    width = hi - lo
    vol = float(np.prod(width))
    res = integrate_unit_cube(lambda S: F(lo + S * width), len(lo), **kw)
    return QuadResult(res.value * vol, res.error * abs(vol), res.boxes, res.evaluations, res.converged)
