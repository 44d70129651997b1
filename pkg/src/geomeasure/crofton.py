"""Monte Carlo Cauchy-Crofton estimation of Hausdorff measures.

Random affine (n-e)-planes are drawn with a Haar-distributed normal space and an
offset uniform in an e-ball of radius R around the centre of the scene's
bounding box.  For each plane the intersection points with every patch are
found by Newton's method started in each cell of a parameter grid (iterates are
confined to their cell, so every cell is responsible for its own roots), and
then deduplicated.  The measure estimate is

    (1 / beta(n, e)) * vol_e(B_R) * mean(count).
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    AffinePlane,
    LinearSubspace,
    ball_volume,
    basis_distances,
    beta_constant,
    haar_bases,
    min_singular_values,
    tangent_bases,
)
from .measure import MeasureError, MeasureReport
from .patches import Patch, Scene

__all__ = [
    "NewtonConfig",
    "CroftonConfig",
    "UNSTABLE",
    "sample_affine_plane",
    "sample_planes",
    "intersect_count",
    "crofton_estimate",
]

log = logging.getLogger(__name__)


class _Unstable:
    """Sentinel count for planes meeting the scene tangentially."""

    def __repr__(self):
        return "UNSTABLE"


UNSTABLE = _Unstable()


@dataclass(frozen=True)
class NewtonConfig:
    grid_per_axis: int = 8
    max_iter: int = 40
    tol: float = 1e-12
    dedup_radius: float = 1e-6
    cond_limit: float = 1e8
    max_split: int = 12


@dataclass(frozen=True)
class CroftonConfig:
    samples: int = 200_000
    window_radius: float | None = None
    seed: int = 0
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    chunk_size: int = 8192
    threads: int | None = None


def _ball_offsets(rng: np.random.Generator, count: int, e: int, R: float) -> np.ndarray:
    g = rng.standard_normal((count, e))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = R * rng.random(count) ** (1.0 / e)
    return g * r[:, None]


def sample_planes(n: int, e: int, R: float, rng: np.random.Generator, count: int):
    """``count`` planes {x : N^T (x - c) = b}: normal bases N (count, n, e) and offsets b (count, e)."""
    N = haar_bases(n, e, rng, count)
    b = _ball_offsets(rng, count, e, R)
    return N, b


def sample_affine_plane(n: int, k: int, R: float, rng: np.random.Generator) -> AffinePlane:
    """A random affine k-plane: Haar direction, base uniform in the R-ball of the orthogonal complement."""
    if not 0 < k < n:
        raise ValueError(f"need 0 < k < n, got k={k}, n={n}")
    N, b = sample_planes(n, n - k, R, rng, 1)
    direction = LinearSubspace(_complement_batch(N)[0])
    return AffinePlane(direction, N[0] @ b[0])


def _complement_batch(N: np.ndarray) -> np.ndarray:
    n, e = N.shape[1:]
    Q, _ = np.linalg.qr(np.concatenate([N, np.broadcast_to(np.eye(n), (len(N), n, n))], axis=2))
    return Q[:, :, e:n]


# --------------------------------------------------------------------------- multi-start Newton


@dataclass
class _Cells:
    """Parameter boxes with the geometry needed to prune and split them."""

    lo: np.ndarray  # (C, e)
    hi: np.ndarray
    center_img: np.ndarray  # (C, n) images of the box centres
    radius: np.ndarray  # (C,) enclosing radius of the box images
    tangent: np.ndarray  # (C, n, e) tangent basis at the centre
    spread: np.ndarray  # (C,) largest distance of sampled tangent spaces from the central one

    def take(self, idx):
        return _Cells(*(a[idx] for a in (self.lo, self.hi, self.center_img, self.radius, self.tangent, self.spread)))


def _cell_geometry(p: Patch, lo: np.ndarray, hi: np.ndarray, per_axis: int) -> _Cells:
    e = p.e
    C = len(lo)
    t = np.linspace(1e-9, 1 - 1e-9, per_axis)
    t[per_axis // 2] = 0.5
    probe = np.stack(np.meshgrid(*([t] * e), indexing="ij"), axis=-1).reshape(-1, e)
    mid = int(np.argmin(np.sum((probe - 0.5) ** 2, axis=1)))
    S = lo[:, None, :] + (hi - lo)[:, None, :] * probe[None]
    P, D = p.jet(S.reshape(-1, e))
    P = P.reshape(C, len(probe), -1)
    D = D.reshape(C, len(probe), p.n, e)
    cimg = P[:, mid]
    rad = 1.25 * np.max(np.linalg.norm(P - cimg[:, None, :], axis=2), axis=1) + 1e-12
    with np.errstate(all="ignore"):
        ok = np.all(np.isfinite(D), axis=(2, 3))
        T = tangent_bases(np.where(ok[..., None, None], D, 0.0))
        spread = basis_distances(T, T[:, mid : mid + 1]).max(axis=1)
    spread = np.where(np.all(ok, axis=1) & np.isfinite(spread), spread, 1.0)
    return _Cells(lo, hi, cimg, rad, T[:, mid], spread)


def _patch_grid(p: Patch, G: int) -> _Cells:
    e = p.e
    ticks = np.linspace(0.0, 1.0, G + 1)
    axes = np.stack(np.meshgrid(*([np.arange(G)] * e), indexing="ij"), axis=-1).reshape(-1, e)
    return _cell_geometry(p, ticks[axes], ticks[axes + 1], 5)


def _split_cells(lo: np.ndarray, hi: np.ndarray):
    e = lo.shape[1]
    mid = 0.5 * (lo + hi)
    corners = np.stack(np.meshgrid(*([[0, 1]] * e), indexing="ij"), axis=-1).reshape(-1, e).astype(bool)
    clo = np.where(corners[None], mid[:, None, :], lo[:, None, :]).reshape(-1, e)
    chi = np.where(corners[None], hi[:, None, :], mid[:, None, :]).reshape(-1, e)
    return clo, chi, 2**e


def _dedup_counts(plane_idx: np.ndarray, pts: np.ndarray, B: int, radius: float) -> np.ndarray:
    counts = np.zeros(B, dtype=np.int64)
    if len(plane_idx) == 0:
        return counts
    order = np.argsort(plane_idx, kind="stable")
    plane_idx, pts = plane_idx[order], pts[order]
    uniq, start, sizes = np.unique(plane_idx, return_index=True, return_counts=True)
    K = int(sizes.max())
    pad = np.full((len(uniq), K, pts.shape[1]), np.nan)
    slot = np.arange(len(plane_idx)) - np.repeat(start, sizes)
    row = np.repeat(np.arange(len(uniq)), sizes)
    pad[row, slot] = pts
    valid = ~np.isnan(pad[:, :, 0])
    d = np.linalg.norm(pad[:, :, None, :] - pad[:, None, :, :], axis=3)
    close = (d <= radius) & np.tril(np.ones((K, K), dtype=bool), -1)[None]
    dup = np.any(close, axis=2)
    counts[uniq] = np.sum(valid & ~dup, axis=1)
    return counts


def _tdot(N: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Rows N_a^T x_a for stacks N (A, n, e) and X (A, n)."""
    return np.matmul(X[:, None, :], N)[:, 0, :]


def _reaching(cells: _Cells, pi: np.ndarray, N: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    F = _tdot(N[pi], cells.center_img - c) - b[pi]
    return np.linalg.norm(F, axis=1) <= cells.radius


def _start_cells(p: Patch, grid: _Cells, N, b, c, max_split: int):
    """(plane index, lo, hi) of parameter boxes on which each plane has at most one transverse root.

    A box is split while the plane is not clearly transverse to all of its
    tangent spaces: the smallest singular value of N^T T at the centre must
    exceed the sampled tangent spread, otherwise two roots may share the box.
    """
    B = len(N)
    C = len(grid.lo)
    pi = np.repeat(np.arange(B), C)
    ci = np.tile(np.arange(C), B)
    rel = grid.center_img - c
    F0 = np.matmul(rel, N) - b[:, None, :]
    reach = (np.linalg.norm(F0, axis=2) <= grid.radius[None, :]).reshape(-1)
    pi, cells = pi[reach], grid.take(ci[reach])
    out_pi, out_lo, out_hi = [], [], []
    for depth in range(max_split + 1):
        if len(pi) == 0:
            break
        sv = min_singular_values(np.matmul(N[pi].transpose(0, 2, 1), cells.tangent))
        ambiguous = sv <= 2.5 * cells.spread
        if depth == max_split:
            ambiguous[:] = False
        ready = ~ambiguous
        out_pi.append(pi[ready])
        out_lo.append(cells.lo[ready])
        out_hi.append(cells.hi[ready])
        if not ambiguous.any():
            break
        clo, chi, k = _split_cells(cells.lo[ambiguous], cells.hi[ambiguous])
        cpi = np.repeat(pi[ambiguous], k)
        child = _cell_geometry(p, clo, chi, 3)
        keep = _reaching(child, cpi, N, b, c)
        pi, cells = cpi[keep], child.take(keep)
    if not out_pi:
        e = p.e
        return np.zeros(0, dtype=int), np.zeros((0, e)), np.zeros((0, e))
    return np.concatenate(out_pi), np.concatenate(out_lo), np.concatenate(out_hi)


def _count_patch(p: Patch, grid: _Cells, N: np.ndarray, b: np.ndarray, c: np.ndarray, cfg: NewtonConfig):
    """Per-plane root counts and instability flags for one patch."""
    e = p.e
    B = len(N)
    unstable = np.zeros(B, dtype=bool)
    pi, clo, chi = _start_cells(p, grid, N, b, c, cfg.max_split)
    if len(pi) == 0:
        return np.zeros(B, dtype=np.int64), unstable
    width = chi - clo
    lo = np.clip(clo - 0.1 * width, 0.0, 1.0)
    hi = np.clip(chi + 0.1 * width, 0.0, 1.0)
    s = 0.5 * (clo + chi)
    scale = max(1.0, float(np.max(np.abs(grid.center_img - c))))
    tol = cfg.tol * scale
    # a root is unusable when its condition number is excessive or its
    # position is uncertain at the deduplication scale
    sv_floor = max(1.0 / cfg.cond_limit, 10.0 * tol / cfg.dedup_radius)
    eye = np.eye(e)
    found_pi, found_pts = [], []
    for _ in range(cfg.max_iter):
        if len(pi) == 0:
            break
        P, D = p.jet(s)
        Nb = N[pi]
        F = _tdot(Nb, P - c) - b[pi]
        J = np.matmul(Nb.transpose(0, 2, 1), D)
        res = np.max(np.abs(F), axis=1)
        # patches are open: a root on the parameter boundary is not a point of the patch
        interior = np.all((s > 0.0) & (s < 1.0), axis=1)
        conv = (res <= tol) & interior
        with np.errstate(all="ignore"):
            det = np.linalg.det(J)
            Jr = np.where((np.abs(det) > 1e-300)[:, None, None], J, J + 1e-12 * eye)
            step = -np.linalg.solve(Jr, F[..., None])[..., 0]
        lim = np.max(np.abs(step) / (hi - lo + 1e-300), axis=1)
        step = step / np.maximum(1.0, lim)[:, None]
        bad = ~np.all(np.isfinite(step), axis=1) | ~np.isfinite(res)
        s_new = np.clip(s + np.where(bad[:, None], 0.0, step), lo, hi)
        stalled = np.max(np.abs(s_new - s), axis=1) < 1e-15
        done = conv | bad | stalled | ((res <= tol) & ~interior)
        if conv.any():
            found_pi.append(pi[conv])
            found_pts.append(P[conv])
            T = tangent_bases(D[conv])
            sv = min_singular_values(np.matmul(Nb[conv].transpose(0, 2, 1), T))
            unstable[pi[conv][sv < sv_floor]] = True
        keep = ~done
        pi, s, lo, hi = pi[keep], s_new[keep], lo[keep], hi[keep]
    if not found_pi:
        return np.zeros(B, dtype=np.int64), unstable
    return _dedup_counts(np.concatenate(found_pi), np.concatenate(found_pts), B, cfg.dedup_radius), unstable


def _scene_grids(s: Scene, e: int, G: int) -> list[tuple[Patch, _Cells]]:
    grids = []
    for i, p in enumerate(s.patches):
        if p.e > e:
            raise MeasureError(f"patch {i} has dimension {p.e} > {e}")
        if p.e == e:
            grids.append((p, _patch_grid(p, G)))
    return grids


def _count_planes(grids, N, b, c, cfg: NewtonConfig):
    total = np.zeros(len(N), dtype=np.int64)
    unstable = np.zeros(len(N), dtype=bool)
    for p, g in grids:
        cnt, un = _count_patch(p, g, N, b, c, cfg)
        total += cnt
        unstable |= un
    return total, unstable


def intersect_count(s: Scene, E: AffinePlane, newton: NewtonConfig | None = None):
    """Number of points of the scene on the plane E, or ``UNSTABLE`` for tangential contact."""
    cfg = newton or NewtonConfig()
    n = s.ambient_dim
    e = n - E.dim
    A, rhs = E.equations()
    N = A.T[None]
    grids = _scene_grids(s, e, cfg.grid_per_axis)
    count, unstable = _count_planes(grids, N, rhs[None], np.zeros(n), cfg)
    if unstable[0]:
        return UNSTABLE
    return int(count[0])


# --------------------------------------------------------------------------- estimator


def _threads(cfg: CroftonConfig) -> int:
    if cfg.threads is not None:
        return max(1, int(cfg.threads))
    env = os.environ.get("GEOMEASURE_THREADS")
    return max(1, int(env)) if env else 1


def _run_chunk(grids, n, e, R, c, seed, chunk, size, cfg: NewtonConfig):
    rng = np.random.default_rng(np.random.SeedSequence([seed, chunk]))
    counts = np.empty(size, dtype=np.int64)
    todo = np.arange(size)
    draws = 0
    rejected = 0
    while len(todo):
        N, b = sample_planes(n, e, R, rng, len(todo))
        draws += len(todo)
        cnt, un = _count_planes(grids, N, b, c, cfg)
        counts[todo[~un]] = cnt[~un]
        rejected += int(un.sum())
        todo = todo[un]
        if draws > 20 * size + 1000:
            raise MeasureError("too many tangential samples; the scene is likely degenerate")
    return counts, draws, rejected


def crofton_estimate(s: Scene, e: int, cfg: CroftonConfig | None = None) -> MeasureReport:
    """Cauchy-Crofton estimate of H^e(s) with its Monte Carlo standard error."""
    cfg = cfg or CroftonConfig()
    n = s.ambient_dim
    if not 0 < e < n:
        raise ValueError(f"need 0 < e < n, got e={e}, n={n}")
    circ = s.circumradius()
    R = circ if cfg.window_radius is None else float(cfg.window_radius)
    if R < circ * (1 - 1e-12):
        raise ValueError(f"window radius {R} is smaller than the bounding-box circumradius {circ}")
    c = s.center()
    grids = _scene_grids(s, e, cfg.newton.grid_per_axis)
    sizes = [min(cfg.chunk_size, cfg.samples - k) for k in range(0, cfg.samples, cfg.chunk_size)]
    jobs = [(grids, n, e, R, c, cfg.seed, i, size, cfg.newton) for i, size in enumerate(sizes)]
    threads = _threads(cfg)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(lambda a: _run_chunk(*a), jobs))
    else:
        results = [_run_chunk(*a) for a in jobs]
    counts = np.concatenate([r[0] for r in results]) if results else np.zeros(0)
    draws = sum(r[1] for r in results)
    rejected = sum(r[2] for r in results)
    factor = ball_volume(e, R) / beta_constant(n, e)
    m = len(counts)
    value = factor * float(np.mean(counts)) if m else 0.0
    sd = float(np.std(counts, ddof=1)) if m > 1 else 0.0
    frac = rejected / draws if draws else 0.0
    warnings = []
    if frac > 0.01:
        msg = f"unstable fraction {frac:.3%} exceeds 1%: the scene may contain a plane-aligned patch"
        log.warning(msg)
        warnings.append(msg)
    return MeasureReport(
        value,
        factor * sd / math.sqrt(m) if m else 0.0,
        "crofton",
        e,
        n,
        samples=m,
        seed=cfg.seed,
        window=R,
        unstable_fraction=frac,
        warnings=warnings,
    )
