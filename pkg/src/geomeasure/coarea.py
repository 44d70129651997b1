"""Numerical checks of the co-area formula, change of variables and Fubini.

Each check evaluates both sides of an integral identity by independent routes
and reports them with their gap and an estimate of the numerical error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq, minimize, minimize_scalar

from .cells import CellDomain, Interval, cell_from_doc, unit_samples
from .expr import Dual, VectorMap
from .measure import area_measure, gram_jacobian
from .quadrature import gauss_legendre, integrate_unit_cube

__all__ = [
    "SliceSpec",
    "CheckResult",
    "FiberError",
    "coarea_check",
    "change_of_variables_check",
    "fubini_check",
    "region_integral",
    "slice_spec_from_doc",
]


class FiberError(RuntimeError):
    def __init__(self, message: str, y: float):
        super().__init__(message)
        self.y = y


@dataclass(frozen=True)
class SliceSpec:
    """A map f: R^m -> R^n restricted to an open m-cell ``region``.

    ``slicer`` optionally returns the fibre A ∩ f^-1(y) as a list of patches.
    ``kinks`` lists (axis, position) pairs in the region's unit coordinates where
    the region parametrisation is not smooth.
    """

    f: VectorMap
    region: CellDomain
    slicer: Callable | None = None
    kinks: tuple = ()
    bound: float | None = None

    @property
    def m(self) -> int:
        return self.f.domain_dim

    @property
    def n(self) -> int:
        return self.f.codomain_dim


@dataclass
class CheckResult:
    lhs: float
    rhs: float
    gap: float
    error: float
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.gap <= max(1e-4, 3 * self.error)

    def to_doc(self) -> dict:
        doc = {"lhs": self.lhs, "rhs": self.rhs, "gap": self.gap, "error": self.error}
        doc.update(self.details)
        return doc


def _jet(F: VectorMap, X: np.ndarray):
    """Values (N, m) and derivatives (N, m, d) of F at rows of X."""
    with np.errstate(all="ignore"):
        out = F.dual(Dual.seed(X))
    vals = np.stack([o.val for o in out], axis=1)
    D = np.stack([o.grad.T for o in out], axis=1)
    return vals, D


def region_integral(region: CellDomain, integrand, kinks=(), tol: float = 1e-12):
    """Integral over an open m-cell of R^m of ``integrand(X) -> (N,)`` (a QuadResult)."""
    d = region.dim
    if region.ambient_dim != d:
        raise ValueError("region must be an open cell of full dimension")

    def F(S):
        X, DX = region.unit_jet(S)
        return integrand(X) * np.abs(np.linalg.det(DX))

    return integrate_unit_cube(F, d, tol=tol, cuts=kinks, smooth=True)


# --------------------------------------------------------------------------- co-area


def slice_spec_from_doc(doc: dict) -> tuple[SliceSpec, int]:
    """A SliceSpec and its y-grid from a spec document {map, region, kinks?, bound?, grid?}."""
    region = cell_from_doc(doc["region"], "region")
    f = VectorMap.parse(doc["map"], region.ambient_dim, doc.get("bound"))
    kinks = tuple((int(a), float(t)) for a, t in doc.get("kinks", ()))
    return SliceSpec(f, region, None, kinks, doc.get("bound")), int(doc.get("grid", 16))


def _value_range(spec: SliceSpec, candidates=()) -> tuple[float, float]:
    """Range of the scalar map over the region: samples, boundary candidates, bounded minimisation."""
    reg = spec.region
    d = reg.dim
    S = unit_samples(d, 4096)
    vals = spec.f(reg.unit_points(S))[:, 0]
    out = []
    for sign in (1.0, -1.0):
        i = int(np.argmin(sign * vals))
        res = minimize(
            lambda s: sign * float(spec.f(reg.unit_points(s[None]))[0, 0]),
            S[i],
            method="L-BFGS-B",
            bounds=[(0.0, 1.0)] * d,
        )
        best = min(sign * vals[i], float(res.fun), *(sign * c for c in candidates))
        out.append(sign * best)
    return out[0], out[1]


def _boundary_values(spec: SliceSpec) -> list[float]:
    """Values where the fibre topology may change: images of cell corners, kink lines and
    boundary points where a level curve touches the boundary tangentially."""
    reg = spec.region
    d = reg.dim
    ticks = [sorted({0.0, 1.0, *(t for a, t in spec.kinks if a == axis)}) for axis in range(d)]
    corners = np.stack(np.meshgrid(*ticks, indexing="ij"), axis=-1).reshape(-1, d)
    vals = [float(v) for v in spec.f(reg.unit_points(np.clip(corners, 0.0, 1.0)))[:, 0]]
    if d == 2:
        t = np.linspace(0.0, 1.0, 2049)
        for axis in range(2):
            for side in (0.0, 1.0):
                def edge(u, axis=axis, side=side):
                    S = np.empty((np.size(u), 2))
                    S[:, axis] = side
                    S[:, 1 - axis] = u
                    return spec.f(reg.unit_points(S))[:, 0]

                fv = edge(t)
                if np.ptp(fv) <= 1e-12 * max(1.0, float(np.max(np.abs(fv)))):
                    continue
                df = np.diff(fv)
                for i in np.nonzero(df[:-1] * df[1:] < 0)[0]:
                    sign = 1.0 if df[i] < 0 else -1.0
                    res = minimize_scalar(lambda u: sign * float(edge(u)[0]), bounds=(t[i], t[i + 2]),
                                          method="bounded", options={"xatol": 1e-13})
                    vals.append(sign * float(res.fun))
    return vals


def _boundary_crossings(spec: SliceSpec, ys: np.ndarray, per_edge: int = 4096):
    """Points of the region boundary where f = y, for every y (list of (y index, point))."""
    reg = spec.region
    t = np.linspace(0.0, 1.0, per_edge)
    edges = []
    for axis in range(2):
        for side in (0.0, 1.0):
            S = np.empty((per_edge, 2))
            S[:, axis] = side
            S[:, 1 - axis] = t
            edges.append((axis, side, S))
    hits = []
    for axis, side, S in edges:
        X = reg.unit_points(S)
        fv = spec.f(X)[:, 0]
        for k, y in enumerate(ys):
            r = fv - y
            idx = np.nonzero((r[:-1] < 0) != (r[1:] < 0))[0]
            for i in idx:
                def g(u, axis=axis, side=side):
                    s = np.empty((1, 2))
                    s[0, axis] = side
                    s[0, 1 - axis] = u
                    return float(spec.f(reg.unit_points(s))[0, 0] - y)

                u = brentq(g, t[i], t[i + 1], xtol=1e-15, rtol=1e-15)
                s = np.empty((1, 2))
                s[0, axis] = side
                s[0, 1 - axis] = u
                hits.append((k, reg.unit_points(s)[0]))
    return hits


def _trace(spec: SliceSpec, x: np.ndarray, t: np.ndarray, y: np.ndarray, h: float, ctol: float, max_steps: int):
    """Predictor-corrector continuation of the level curves f = y from the points x.

    A curve stops when it leaves the region (the exit is located on the last
    chord by bisection) or when it closes up near its start.  Returns the
    lengths, the chord-to-arc corrections, the bounding boxes (N, 2, 2) of the
    traced points, and flags for closed, critical and exited curves.
    """
    reg = spec.region
    f = spec.f
    x = x.copy()
    t = t.copy()
    start = x.copy()
    N = len(x)
    length = np.zeros(N)
    correction = np.zeros(N)
    closed = np.zeros(N, dtype=bool)
    crit = np.zeros(N, dtype=bool)
    alive = np.all(np.isfinite(t), axis=1)
    box = np.stack([x, x], axis=1)
    steps = 0
    while alive.any():
        steps += 1
        if steps > max_steps:
            raise FiberError("fibre tracing did not terminate", float(y[alive][0]))
        idx = np.nonzero(alive)[0]
        xa, ta, ya = x[idx], t[idx], y[idx]
        xn = xa + h * ta
        for _ in range(30):
            v, D = _jet(f, xn)
            gg = D[:, 0, :]
            r = v[:, 0] - ya
            g2 = np.sum(gg * gg, axis=1)
            xn = xn - (r / np.maximum(g2, 1e-300))[:, None] * gg
            if np.max(np.abs(r)) < ctol:
                break
        _, D = _jet(f, xn)
        gg = D[:, 0, :]
        gn = np.linalg.norm(gg, axis=1)
        c = gn < 1e-8
        crit[idx[c]] = True
        tn = np.stack([-gg[:, 1], gg[:, 0]], axis=1) / np.maximum(gn, 1e-300)[:, None]
        tn *= np.where(np.sum(tn * ta, axis=1) < 0, -1.0, 1.0)[:, None]
        inside = reg.contains(xn) & ~c
        out = ~inside
        if out.any():
            a, b = xa[out], xn[out]
            lo_t = np.zeros(len(a))
            hi_t = np.ones(len(a))
            for _ in range(50):
                mid = 0.5 * (lo_t + hi_t)
                ins = reg.contains(a + mid[:, None] * (b - a))
                lo_t = np.where(ins, mid, lo_t)
                hi_t = np.where(ins, hi_t, mid)
            length[idx[out]] += lo_t * np.linalg.norm(b - a, axis=1)
            alive[idx[out]] = False
        keep = idx[inside]
        chord = np.linalg.norm(xn[inside] - xa[inside], axis=1)
        # chord -> arc of the osculating circle, using the turn of the tangent
        half = 0.5 * np.arccos(np.clip(np.sum(tn[inside] * ta[inside], axis=1), -1.0, 1.0))
        arc = chord * np.where(half > 1e-8, half / np.maximum(np.sin(half), 1e-300), 1.0)
        length[keep] += arc
        correction[keep] += arc - chord
        x[keep] = xn[inside]
        t[keep] = tn[inside]
        box[keep, 0] = np.minimum(box[keep, 0], x[keep])
        box[keep, 1] = np.maximum(box[keep, 1], x[keep])
        # closing up: back within one step of the start, heading towards it
        back = start[keep] - x[keep]
        dist = np.linalg.norm(back, axis=1)
        shut = (length[keep] > 4 * h) & (dist < 1.5 * h) & (np.sum(back * t[keep], axis=1) > 0)
        if shut.any():
            j = keep[shut]
            length[j] += dist[shut]
            closed[j] = True
            alive[j] = False
    exited = ~closed & np.all(np.isfinite(t), axis=1)
    return length, correction, box, closed, crit, exited


def _level_tangent(spec: SliceSpec, x: np.ndarray):
    _, D = _jet(spec.f, x)
    g = D[:, 0, :]
    gn = np.linalg.norm(g, axis=1)
    return np.stack([-g[:, 1], g[:, 0]], axis=1) / np.maximum(gn, 1e-300)[:, None], gn


def _grad(spec: SliceSpec, X: np.ndarray) -> np.ndarray:
    return _jet(spec.f, X)[1][:, 0, :]


def _interior_critical_points(spec: SliceSpec, starts: int = 9, iters: int = 100) -> np.ndarray:
    """Critical points of f inside the region.

    Levenberg-Marquardt on grad f = 0 from a grid of starts, with the exact
    gradient and a central-difference Hessian; every kind of critical point
    (extremum or saddle) is a zero of the gradient.
    """
    reg = spec.region
    ticks = (np.arange(starts) + 0.5) / starts
    S0 = np.stack(np.meshgrid(ticks, ticks, indexing="ij"), axis=-1).reshape(-1, 2)
    X = reg.unit_points(S0)
    scale = max(1.0, float(np.max(np.abs(X))))
    dh = 1e-6 * scale
    mu = np.full(len(X), 1e-3)
    with np.errstate(all="ignore"):
        g = _grad(spec, X)
        for _ in range(iters):
            H = np.stack([(_grad(spec, X + dh * e) - _grad(spec, X - dh * e)) / (2 * dh) for e in np.eye(2)], axis=2)
            Ht = np.swapaxes(H, 1, 2)
            A = Ht @ H + mu[:, None, None] * np.eye(2)
            step = -np.linalg.solve(A, (Ht @ g[..., None]))[..., 0]
            Xn = X + step
            gn = _grad(spec, Xn)
            better = np.all(np.isfinite(gn), axis=1) & (np.sum(gn * gn, axis=1) < np.sum(g * g, axis=1))
            X = np.where(better[:, None], Xn, X)
            g = np.where(better[:, None], gn, g)
            mu = np.where(better, mu * 0.3, mu * 10.0)
            if np.all((np.linalg.norm(g, axis=1) < 1e-14) | (mu > 1e12)):
                break
    ok = np.all(np.isfinite(g), axis=1) & (np.linalg.norm(g, axis=1) < 1e-9)
    found: list[np.ndarray] = []
    for x in X[ok]:
        if not reg.contains(x[None])[0]:
            continue
        if all(np.linalg.norm(x - q) > 1e-6 * scale for q in found):
            found.append(x)
    return np.array(found).reshape(-1, 2)


def _loop_seeds(spec: SliceSpec, ys: np.ndarray, crit: np.ndarray, samples: int = 4001):
    """For every interior critical point and level y, the first point with f = y on a ray from it."""
    reg = spec.region
    out = []
    for c in crit:
        v = np.array([1.0, 0.0])
        # walk out to the region boundary along the ray
        lo_r, hi_r = 0.0, 1.0
        while reg.contains((c + hi_r * v)[None])[0] and hi_r < 1e6:
            hi_r *= 2
        for _ in range(60):
            mid = 0.5 * (lo_r + hi_r)
            if reg.contains((c + mid * v)[None])[0]:
                lo_r = mid
            else:
                hi_r = mid
        r = np.linspace(0.0, lo_r, samples)[1:]
        fv = spec.f(c + r[:, None] * v)[:, 0]
        for k, y in enumerate(ys):
            d = fv - y
            idx = np.nonzero((d[:-1] < 0) != (d[1:] < 0))[0]
            if len(idx) == 0:
                if (spec.f(c[None])[0, 0] - y) * d[0] < 0:
                    i0, a, b = None, 0.0, r[0]
                else:
                    continue
            else:
                i0 = idx[0]
                if (spec.f(c[None])[0, 0] - y) * d[0] < 0:
                    a, b = 0.0, r[0]
                else:
                    a, b = r[i0], r[i0 + 1]
            rr = brentq(lambda u: float(spec.f((c + u * v)[None])[0, 0] - y), a, b, xtol=1e-15, rtol=1e-15)
            out.append((k, c + rr * v))
    return out


def _trace_fibres(
    spec: SliceSpec, ys: np.ndarray, h: float = 1e-3, ctol: float = 1e-10, max_steps: int = 200_000, cpts=None
):
    """Lengths of the level curves f = y inside a planar region.

    Arcs ending on the boundary are traced from every boundary crossing, so each
    is traced once from either end and the sum is halved.  Closed curves lie in
    the region with the disk they bound, so each of them encloses an interior
    critical point; they are seeded on a ray from every such point and
    deduplicated by length and extent.  Returns (lengths, arc corrections, critical flags) per y.
    The arc correction is itself the leading discretisation error, so its size
    is a conservative bound on what remains.
    """
    reg = spec.region
    lengths = np.zeros(len(ys))
    corr = np.zeros(len(ys))
    critical = np.zeros(len(ys), dtype=bool)
    hits = _boundary_crossings(spec, ys)
    if hits:
        k = np.array([hk for hk, _ in hits])
        x = np.array([pt for _, pt in hits], dtype=float)
        t, gn = _level_tangent(spec, x)
        critical[k[gn < 1e-8]] = True
        probe = 1e-7 * max(1.0, float(np.max(np.abs(x))))
        fwd = reg.contains(x + probe * t)
        bwd = reg.contains(x - probe * t)
        t = np.where((fwd & ~bwd)[:, None], t, np.where((bwd & ~fwd)[:, None], -t, np.nan))
        length, correction, _, _, crit, _ = _trace(spec, x, t, ys[k], h, ctol, max_steps)
        critical[k[crit]] = True
        np.add.at(lengths, k, 0.5 * length)
        np.add.at(corr, k, 0.5 * correction)
    if cpts is None:
        cpts = _interior_critical_points(spec)
    seeds = _loop_seeds(spec, ys, cpts) if len(cpts) else []
    if seeds:
        k = np.array([hk for hk, _ in seeds])
        x = np.array([pt for _, pt in seeds], dtype=float)
        t, gn = _level_tangent(spec, x)
        critical[k[gn < 1e-8]] = True
        length, correction, box, closed, crit, _ = _trace(spec, x, t, ys[k], h, ctol, max_steps)
        critical[k[crit]] = True
        seen: dict[int, list[tuple[float, np.ndarray]]] = {}
        for i in np.nonzero(closed)[0]:
            # one loop may enclose several critical points: count it once per level.
            # Distinct loops of one level are disjoint, so length and extent identify a loop.
            prior = seen.setdefault(int(k[i]), [])
            if any(abs(length[i] - L) <= 1e-6 * max(L, h) and np.max(np.abs(box[i] - B)) <= 2 * h for L, B in prior):
                continue
            prior.append((length[i], box[i]))
            lengths[k[i]] += length[i]
            corr[k[i]] += correction[i]
    return lengths, corr, critical


def _lhs_coarea(spec: SliceSpec):
    n = spec.n

    def integrand(X):
        _, D = _jet(spec.f, X)
        if n == spec.m:
            return np.abs(np.linalg.det(D))
        return gram_jacobian(np.swapaxes(D, 1, 2))

    return region_integral(spec.region, integrand, spec.kinks)


def _degree_1d(spec: SliceSpec):
    """Exact integral of #f^-1(y) for a scalar map on an interval (monotone pieces)."""
    A = spec.region
    if not isinstance(A, Interval):
        raise NotImplementedError("equal-dimension co-area without a slicer is supported on intervals")
    a, b = A.a, A.b
    xs = np.linspace(a, b, 4097)
    _, D = _jet(spec.f, xs[:, None])
    d = D[:, 0, 0]
    crit = [a]
    for i in np.nonzero((d[:-1] < 0) != (d[1:] < 0))[0]:
        crit.append(brentq(lambda u: float(_jet(spec.f, np.array([[u]]))[1][0, 0, 0]), xs[i], xs[i + 1]))
    crit.append(b)
    vals = spec.f(np.array(crit)[:, None])[:, 0]
    lo, hi = float(vals.min()), float(vals.max())
    # the count is piecewise constant between the critical values; integrate panel by panel
    levels = np.unique(vals)
    total = 0.0
    for y0, y1 in zip(levels[:-1], levels[1:]):
        ym = 0.5 * (y0 + y1)
        count = int(np.sum((np.minimum(vals[:-1], vals[1:]) < ym) & (ym < np.maximum(vals[:-1], vals[1:]))))
        total += count * (y1 - y0)
    return total, 0.0, {"range": [lo, hi], "critical_points": len(crit) - 2, "_crit": crit[1:-1]}


def coarea_check(spec: SliceSpec, grid: int = 16, order: int = 8) -> CheckResult:
    """Compare the integral of J_n f over the region with the integral of the fibre measures."""
    m, n = spec.m, spec.n
    if m < n:
        raise ValueError("co-area needs m >= n")
    lhs_res = _lhs_coarea(spec)
    lhs = lhs_res.value
    details: dict = {"m": m, "n": n}
    if spec.slicer is not None:
        rhs, err, info = _rhs_slicer(spec, grid, order)
    elif m == n and n == 1:
        rhs, err, info = _degree_1d(spec)
        # |f'| has kinks at the critical points: align the quadrature with them
        a, b = spec.region.a, spec.region.b
        cuts = tuple(spec.kinks) + tuple((0, (c - a) / (b - a)) for c in info.pop("_crit"))
        lhs_res = _lhs_coarea(SliceSpec(spec.f, spec.region, None, cuts, spec.bound))
        lhs = lhs_res.value
    elif m == 2 and n == 1:
        rhs, err, info = _rhs_traced(spec, grid, order)
    else:
        raise NotImplementedError("fibres of this dimension need a slicer")
    details.update(info)
    lhs, rhs = float(lhs), float(rhs)
    return CheckResult(lhs, rhs, abs(lhs - rhs), float(lhs_res.error + err), details)


def _merge_close(vals, tol: float) -> list[float]:
    out: list[float] = []
    for v in sorted(vals):
        if not out or v - out[-1] > tol:
            out.append(v)
    return out


def _y_rule(breaks, grid: int, order: int):
    """Composite rule over [breaks[0], breaks[-1]] with panels aligned to the breakpoints.

    Each breakpoint interval is smoothed by t - sin(2 pi t) / (2 pi), which removes
    the square-root behaviour of fibre lengths at tangencies.  Returns the nodes
    and the weights of the ``order`` rule and of the ``order - 3`` rule.
    """
    span = breaks[-1] - breaks[0]
    rules = [gauss_legendre(order), gauss_legendre(max(order - 3, 1))]
    nodes, weights = [], [[], []]
    for k, (x, w) in enumerate(rules):
        for a, b in zip(breaks[:-1], breaks[1:]):
            cuts = np.linspace(0.0, 1.0, max(1, int(math.ceil(grid * (b - a) / span))) + 1)
            u = (cuts[:-1, None] + np.diff(cuts)[:, None] * x).ravel()
            wu = (np.diff(cuts)[:, None] * w).ravel()
            t = u - np.sin(2 * np.pi * u) / (2 * np.pi)
            wt = wu * (1.0 - np.cos(2 * np.pi * u))
            nodes.append(a + (b - a) * t)
            weights[k].append((b - a) * wt)
    n_hi = sum(len(v) for v in weights[0])
    Y = np.concatenate(nodes)
    W = np.zeros((2, len(Y)))
    W[0, :n_hi] = np.concatenate(weights[0])
    W[1, n_hi:] = np.concatenate(weights[1])
    return Y, W


def _rhs_traced(spec: SliceSpec, grid: int, order: int):
    cands = _boundary_values(spec)
    cpts = _interior_critical_points(spec)
    cands += [float(v) for v in spec.f(cpts)[:, 0]] if len(cpts) else []
    lo, hi = _value_range(spec, cands)
    breaks = _merge_close([lo, hi, *(v for v in cands if lo < v < hi)], 1e-9 * max(hi - lo, 1e-300))
    breaks[0], breaks[-1] = lo, hi
    ys, W = _y_rule(breaks, grid, order)
    lengths, corr, critical = _trace_fibres(spec, ys, cpts=cpts)
    good = ~critical
    hi_est = float(np.sum(W[0, good] * lengths[good]))
    lo_est = float(np.sum(W[1, good] * lengths[good]))
    n_hi = int(np.count_nonzero(W[0]))
    budget = float(np.sum(W[0, critical])) * 2 * float(lengths.max(initial=0.0))
    budget += float(np.sum(W[0, good] * np.abs(corr[good])))
    budget += abs(hi_est - lo_est)
    return hi_est, budget, {"range": [lo, hi], "y_nodes": n_hi, "excluded": int(critical[:n_hi].sum()),
                            "critical_points": int(len(cpts))}


def _rhs_slicer(spec: SliceSpec, grid: int, order: int):
    reg = spec.region
    n = spec.n
    if n == 1:
        lo, hi = (np.array([v]) for v in _value_range(spec))
    else:
        P = spec.f(reg.sample(4096))
        lo, hi = P.min(axis=0), P.max(axis=0)
    x, w = gauss_legendre(order)
    nodes = []
    for i in range(n):
        edges = np.linspace(lo[i], hi[i], grid + 1)
        nodes.append(((edges[:-1, None] + np.diff(edges)[:, None] * x).ravel(), (np.diff(edges)[:, None] * w).ravel()))
    Y = np.stack(np.meshgrid(*[a for a, _ in nodes], indexing="ij"), axis=-1).reshape(-1, n)
    W = np.prod(np.stack(np.meshgrid(*[b for _, b in nodes], indexing="ij"), axis=-1).reshape(-1, n), axis=1)
    total = 0.0
    err = 0.0
    for y, wt in zip(Y, W):
        fibre = spec.slicer(y)
        for p in fibre:
            r = area_measure(p)
            total += wt * r.value
            err += wt * (r.quad_error or 0.0)
    return total, err, {"y_nodes": int(len(Y))}


# --------------------------------------------------------------------------- change of variables


def change_of_variables_check(
    f: VectorMap,
    g: VectorMap,
    A: CellDomain,
    image: CellDomain | None = None,
    kinks=(),
    image_kinks=(),
    samples: int = 50_000,
    seed: int = 0,
) -> CheckResult:
    """Compare the integral of g over f(A) with the integral of |det Df| g(f) over A.

    With an ``image`` cell the left side is a quadrature over the image; without
    one it is a quasi-Monte Carlo estimate over a box around f(A) with
    membership decided by inverting f with Newton's method.
    """
    d = A.dim

    def rhs_integrand(X):
        v, D = _jet(f, X)
        return np.abs(np.linalg.det(D)) * g(v)[:, 0]

    rhs_res = region_integral(A, rhs_integrand, kinks)
    if image is not None:
        lhs_res = region_integral(image, lambda Y: g(Y)[:, 0], image_kinks)
        lhs, lhs_err = lhs_res.value, lhs_res.error
        how = "quadrature"
    else:
        lhs, lhs_err = _image_integral_mc(f, g, A, samples, seed)
        how = "monte_carlo"
    lhs, rhs = float(lhs), float(rhs_res.value)
    return CheckResult(lhs, rhs, abs(lhs - rhs), float(lhs_err + rhs_res.error), {"lhs_method": how, "dim": d})


def _invert(f: VectorMap, A: CellDomain, Y: np.ndarray, starts: int = 4, iters: int = 40) -> np.ndarray:
    """Whether each y has a preimage in A (multi-start Newton in the unit coordinates of A)."""
    d = A.dim
    ticks = (np.arange(starts) + 0.5) / starts
    S0 = np.stack(np.meshgrid(*([ticks] * d), indexing="ij"), axis=-1).reshape(-1, d)
    hit = np.zeros(len(Y), dtype=bool)
    for s0 in S0:
        S = np.tile(s0, (len(Y), 1))
        for _ in range(iters):
            X, DX = A.unit_jet(S)
            v, D = _jet(f, X)
            J = D @ DX
            with np.errstate(all="ignore"):
                step = np.linalg.solve(J + 1e-14 * np.eye(d), (Y - v)[..., None])[..., 0]
            step = np.where(np.isfinite(step), step, 0.0)
            S = np.clip(S + np.clip(step, -0.25, 0.25), -0.05, 1.05)
        X, _ = A.unit_jet(np.clip(S, 0.0, 1.0))
        v, _ = _jet(f, X)
        ok = (np.linalg.norm(v - Y, axis=1) < 1e-9) & np.all((S > 0) & (S < 1), axis=1)
        hit |= ok
    return hit


def _image_integral_mc(f, g, A, samples, seed):
    from scipy.stats import qmc

    P = f(A.sample(4096))
    lo, hi = P.min(axis=0), P.max(axis=0)
    pad = 0.02 * (hi - lo) + 1e-9
    lo, hi = lo - pad, hi + pad
    d = len(lo)
    U = qmc.Halton(d, scramble=True, seed=seed).random(samples)
    Y = lo + U * (hi - lo)
    vol = float(np.prod(hi - lo))
    vals = np.where(_invert(f, A, Y), g(Y)[:, 0], 0.0)
    return vol * float(vals.mean()), vol * float(vals.std(ddof=1)) / math.sqrt(samples)


# --------------------------------------------------------------------------- Fubini


def fubini_check(f: VectorMap, n: int, m: int, tol: float = 1e-13) -> CheckResult:
    """Joint (n+m)-dimensional integral over the unit cube versus the iterated integral.

    The inner integral runs over the first m variables x, the outer one over the
    remaining n variables y.
    """
    if f.domain_dim != n + m or f.codomain_dim != 1:
        raise ValueError("f must be a scalar function of n + m variables")
    joint = integrate_unit_cube(lambda S: f(S)[:, 0], n + m, tol=tol)
    inner_err = [0.0]

    def outer(Y):
        out = np.empty(len(Y))
        for i, y in enumerate(Y):
            res = integrate_unit_cube(lambda X: f(np.hstack([X, np.tile(y, (len(X), 1))]))[:, 0], m, tol=tol)
            out[i] = res.value
            inner_err[0] = max(inner_err[0], res.error)
        return out

    iterated = integrate_unit_cube(outer, n, tol=tol)
    err = joint.error + iterated.error + inner_err[0]
    return CheckResult(joint.value, iterated.value, abs(joint.value - iterated.value), err,
                       {"joint": joint.value, "iterated": iterated.value})
