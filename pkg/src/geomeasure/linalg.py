"""Small dense linear algebra on Grassmannians.

Subspaces are carried by orthonormal bases; the projection-norm distance between
two subspaces is the largest singular value of the difference of their
orthogonal projections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_DIM = 8
TOL = 1e-10


@dataclass(frozen=True, eq=False)
class LinearSubspace:
    """A k-dimensional linear subspace of R^n given by an orthonormal basis (n x k)."""

    basis: np.ndarray
    projection: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        B = np.array(self.basis, dtype=float, copy=True)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        if B.shape[0] > MAX_DIM:
            raise ValueError(f"ambient dimension {B.shape[0]} exceeds the cap {MAX_DIM}")
        B.setflags(write=False)
        P = B @ B.T
        P.setflags(write=False)
        object.__setattr__(self, "basis", B)
        object.__setattr__(self, "projection", P)

    @classmethod
    def span(cls, vectors) -> "LinearSubspace":
        """Orthonormalise the columns of ``vectors`` (n x k, full column rank)."""
        A = np.asarray(vectors, dtype=float)
        if A.ndim == 1:
            A = A.reshape(-1, 1)
        if A.shape[1] == 0:
            return cls(np.zeros((A.shape[0], 0)))
        Q, R = np.linalg.qr(A)
        d = np.abs(np.diag(R))
        if d.min() <= TOL * max(d.max(), 1.0):
            raise np.linalg.LinAlgError("vectors are linearly dependent")
        return cls(Q * np.sign(np.diag(R)))

    @classmethod
    def coordinate(cls, n: int, axes) -> "LinearSubspace":
        return cls(np.eye(n)[:, list(axes)])

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def project(self, v) -> np.ndarray:
        return self.projection @ np.asarray(v, dtype=float)

    def complement(self) -> "LinearSubspace":
        return LinearSubspace(orthogonal_complement(self.basis))

    def transformed(self, Q) -> "LinearSubspace":
        """Image under an orthogonal map ``Q``."""
        return LinearSubspace(np.asarray(Q, dtype=float) @ self.basis)


@dataclass(frozen=True, eq=False)
class AffinePlane:
    """``base + direction`` with ``base`` orthogonal to ``direction``."""

    direction: LinearSubspace
    base: np.ndarray

    def __post_init__(self):
        b = np.array(self.base, dtype=float, copy=True).reshape(-1)
        b = b - self.direction.project(b)
        b.setflags(write=False)
        object.__setattr__(self, "base", b)

    @property
    def dim(self) -> int:
        return self.direction.dim

    @property
    def ambient_dim(self) -> int:
        return self.direction.ambient_dim

    def equations(self) -> tuple[np.ndarray, np.ndarray]:
        """(A, b) with rows of A orthonormal and the plane equal to {x : A x = b}."""
        N = orthogonal_complement(self.direction.basis)
        return N.T, N.T @ self.base


def orthogonal_complement(B: np.ndarray) -> np.ndarray:
    """Orthonormal basis (n x (n-k)) of the orthogonal complement of the columns of ``B``."""
    B = np.asarray(B, dtype=float)
    n, k = B.shape
    if k == 0:
        return np.eye(n)
    if k == n:
        return np.zeros((n, 0))
    Q, _ = np.linalg.qr(np.hstack([B, np.eye(n)]))
    return Q[:, k:n]


def rotation_from_basis(B: np.ndarray) -> np.ndarray:
    """An orthogonal n x n matrix whose first k columns are the orthonormal columns of ``B``."""
    B = np.asarray(B, dtype=float)
    return np.hstack([B, orthogonal_complement(B)])


def grassmann_distance(V: LinearSubspace, W: LinearSubspace) -> float:
    """Operator norm of the difference of the orthogonal projections."""
    if V.ambient_dim != W.ambient_dim:
        raise ValueError(f"ambient dimensions differ: {V.ambient_dim} vs {W.ambient_dim}")
    return float(np.linalg.svd(V.projection - W.projection, compute_uv=False)[0])


def projection_distances(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Batched projection-norm distances between stacks of projection matrices (..., n, n)."""
    return np.linalg.svd(P - Q, compute_uv=False)[..., 0]


def line_to_subspace_distance(P: LinearSubspace, X: LinearSubspace) -> float:
    """|v - pi_X v| for the unit generator v of the line P (the sine of the angle)."""
    if P.dim != 1:
        raise ValueError(f"expected a line, got a subspace of dimension {P.dim}")
    if P.ambient_dim != X.ambient_dim:
        raise ValueError("ambient dimensions differ")
    v = P.basis[:, 0]
    return float(np.linalg.norm(v - X.project(v)))


def haar_sample_subspace(n: int, k: int, rng: np.random.Generator) -> LinearSubspace:
    """A Haar-random k-dimensional subspace of R^n (Gaussian matrix, sign-fixed QR)."""
    if not 0 < k <= n:
        raise ValueError(f"need 0 < k <= n, got k={k}, n={n}")
    return LinearSubspace(haar_bases(n, k, rng, 1)[0])


def haar_bases(n: int, k: int, rng: np.random.Generator, count: int) -> np.ndarray:
    """``count`` Haar-random orthonormal n x k bases, shape (count, n, k)."""
    G = rng.standard_normal((count, n, k))
    Q, R = np.linalg.qr(G)
    signs = np.sign(np.diagonal(R, axis1=1, axis2=2))
    signs[signs == 0] = 1.0
    return Q * signs[:, None, :]


def beta_constant(n: int, e: int) -> float:
    """Gamma((e+1)/2) Gamma((n-e+1)/2) / (Gamma((n+1)/2) sqrt(pi))."""
    if not 0 <= e <= n:
        raise ValueError(f"need 0 <= e <= n, got e={e}, n={n}")
    return math.gamma((e + 1) / 2) * math.gamma((n - e + 1) / 2) / math.gamma((n + 1) / 2) / math.sqrt(math.pi)


def sphere_volume(d: int) -> float:
    """Surface measure of the unit sphere S^d in R^(d+1)."""
    if d < 0:
        raise ValueError("dimension must be >= 0")
    return 2 * math.pi ** ((d + 1) / 2) / math.gamma((d + 1) / 2)


def ball_volume(d: int, r: float = 1.0) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * r**d


def tangent_bases(D: np.ndarray) -> np.ndarray:
    """Orthonormal bases (N, n, e) of the column spans of a stack of n x e derivatives.

    Equal to the sign-fixed QR factor; one and two columns use Gram-Schmidt directly.
    """
    e = D.shape[-1]
    if e == 1:
        return D / np.linalg.norm(D, axis=-2, keepdims=True)
    if e == 2:
        a = D[..., 0]
        q1 = a / np.linalg.norm(a, axis=-1, keepdims=True)
        b = D[..., 1] - np.sum(q1 * D[..., 1], axis=-1, keepdims=True) * q1
        q2 = b / np.linalg.norm(b, axis=-1, keepdims=True)
        return np.stack([q1, q2], axis=-1)
    Q, R = np.linalg.qr(D)
    signs = np.sign(np.diagonal(R, axis1=-2, axis2=-1))
    signs[signs == 0] = 1.0
    return Q * signs[..., None, :]


def min_singular_values(M: np.ndarray) -> np.ndarray:
    """Smallest singular value of each square matrix in a stack (..., k, k)."""
    k = M.shape[-1]
    if k == 1:
        return np.abs(M[..., 0, 0])
    if k == 2:
        F = np.sum(M * M, axis=(-2, -1))
        D = np.abs(M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0])
        smax = np.sqrt(0.5 * (F + np.sqrt(np.maximum(F * F - 4 * D * D, 0.0))))
        return np.where(smax > 0, D / np.where(smax > 0, smax, 1.0), 0.0)
    return np.linalg.svd(M, compute_uv=False)[..., -1]


def basis_distances(T: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Projection-norm distances between equal-dimensional subspaces given by orthonormal bases (..., n, k).

    ||pi_T - pi_U|| is the sine of the largest principal angle, sqrt(1 - s_min(T^T U)^2).
    """
    s = min_singular_values(np.einsum("...ik,...il->...kl", T, U))
    return np.sqrt(np.clip(1.0 - s * s, 0.0, 1.0))
