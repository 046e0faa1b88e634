"""Covariance functions and Kronecker-structured Gaussian linear algebra.

Vectors over a regular grid are stored row-major (row = northing index,
column = easting index), so the grid covariance of a separable kernel is
``variance * kron(K_north, K_east) + jitter * I``. All Kronecker operations
work on the two small factor matrices through their eigendecompositions and
never form the full matrix.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import SingularKernelError

SQRT3 = np.sqrt(3.0)
DEFAULT_JITTER = 1e-6


def matern32(lengthscale, r):
    """Matern nu=3/2 correlation, ``(1 + sqrt(3) r / l) exp(-sqrt(3) r / l)``."""
    with np.errstate(over="ignore", invalid="ignore"):
        a = SQRT3 * np.abs(r) / lengthscale
        out = (1.0 + a) * np.exp(-a)
    return np.where(np.isnan(out), 0.0, out)


def matern32_dl(lengthscale, r):
    """Derivative of :func:`matern32` with respect to the lengthscale."""
    with np.errstate(over="ignore"):
        a = SQRT3 * np.abs(r) / lengthscale
    # log space keeps a^2 e^{-a} finite for tiny lengthscales
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        out = np.exp(2.0 * np.log(a) - a) / lengthscale
    return np.where(np.isfinite(out), out, 0.0)


def sqexp(variance, lengthscale, x, x2):
    """Squared exponential covariance between two points."""
    d2 = np.sum((np.asarray(x, dtype=float) - np.asarray(x2, dtype=float)) ** 2)
    return variance * np.exp(-0.5 * d2 / lengthscale**2)


def _sqdist(a, b):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d2, 0.0)


@dataclass(frozen=True)
class SqExpKernel:
    variance: float
    lengthscale: float

    def __post_init__(self):
        if not (self.variance > 0 and self.lengthscale > 0):
            raise ValueError("SqExpKernel needs positive variance and lengthscale")

    def __call__(self, a, b):
        return self.variance * np.exp(-0.5 * _sqdist(a, b) / self.lengthscale**2)

    def gradients(self, a, b):
        """Return ``(dK/dvariance, dK/dlengthscale)`` matrices."""
        d2 = _sqdist(a, b)
        base = np.exp(-0.5 * d2 / self.lengthscale**2)
        return base, self.variance * base * d2 / self.lengthscale**3


@dataclass(frozen=True)
class Matern32Kernel:
    """Unit-variance Matern-3/2 correlation on a 1-D coordinate."""

    lengthscale: float

    def __post_init__(self):
        if not self.lengthscale > 0:
            raise ValueError("Matern32Kernel needs a positive lengthscale")

    def __call__(self, a, b):
        a = np.asarray(a, dtype=float).ravel()
        b = np.asarray(b, dtype=float).ravel()
        return matern32(self.lengthscale, a[:, None] - b[None, :])

    def d_lengthscale(self, a, b):
        a = np.asarray(a, dtype=float).ravel()
        b = np.asarray(b, dtype=float).ravel()
        return matern32_dl(self.lengthscale, a[:, None] - b[None, :])


@dataclass(frozen=True)
class ProductKernel:
    """``variance * k_east(dx_E) * k_north(dx_N)`` on planar coordinates."""

    variance: float
    k_east: Matern32Kernel
    k_north: Matern32Kernel

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError("ProductKernel needs a positive variance")

    def __call__(self, a, b):
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_2d(np.asarray(b, dtype=float))
        return self.variance * self.k_east(a[:, 0], b[:, 0]) * self.k_north(a[:, 1], b[:, 1])

    def kron_gram(self, grid, jitter_rel=DEFAULT_JITTER) -> "KroneckerGram":
        north, east = grid.axis_coordinates()
        return KroneckerGram(self.k_north(north, north), self.k_east(east, east),
                             self.variance, jitter_rel * self.variance)


def gram_dense(kernel, points, jitter=None):
    """Dense Gram matrix of ``kernel`` over ``points`` plus ``jitter * I``.

    The default jitter is ``1e-6`` times the kernel variance.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if jitter is None:
        jitter = DEFAULT_JITTER * getattr(kernel, "variance", 1.0)
    K = kernel(points, points)
    K = 0.5 * (K + K.T)
    K[np.diag_indices_from(K)] += jitter
    return K


def cholesky(K):
    try:
        return linalg.cho_factor(K, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularKernelError(f"kernel matrix is not positive definite: {exc}") from exc


class KroneckerGram:
    """``variance * kron(k_outer, k_inner) + jitter * I`` in factored form.

    For a row-major grid vector ``k_outer`` is the northing factor and
    ``k_inner`` the easting factor.
    """

    def __init__(self, k_outer, k_inner, variance=1.0, jitter=0.0):
        self.k_outer = np.asarray(k_outer, dtype=float)
        self.k_inner = np.asarray(k_inner, dtype=float)
        self.variance = float(variance)
        self.jitter = float(jitter)
        for name, m in (("outer", self.k_outer), ("inner", self.k_inner)):
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError(f"{name} factor must be square")
            if not np.allclose(m, m.T, atol=1e-12):
                raise ValueError(f"{name} factor must be symmetric")
        self.lam_outer, self.q_outer = np.linalg.eigh(self.k_outer)
        self.lam_inner, self.q_inner = np.linalg.eigh(self.k_inner)
        self.eigenvalues = (self.variance * np.outer(self.lam_outer, self.lam_inner)
                            + self.jitter)
        if not np.all(self.eigenvalues > 0):
            raise SingularKernelError(
                f"Kronecker Gram not positive definite: min eigenvalue "
                f"{self.eigenvalues.min():.3e}")

    @property
    def shape(self):
        return self.k_outer.shape[0], self.k_inner.shape[0]

    @property
    def size(self):
        return self.shape[0] * self.shape[1]

    def _as_matrix(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.size,):
            raise ValueError(f"vector of length {v.size} does not match Gram size {self.size}")
        return v.reshape(self.shape)

    def matvec(self, v):
        V = self._as_matrix(v)
        return (self.variance * self.k_outer @ V @ self.k_inner.T + self.jitter * V).ravel()

    def solve(self, v):
        V = self._as_matrix(v)
        W = self.q_outer.T @ V @ self.q_inner
        W /= self.eigenvalues
        return (self.q_outer @ W @ self.q_inner.T).ravel()

    def logdet(self):
        return float(np.log(self.eigenvalues).sum())

    def sqrt_matvec(self, v):
        """Apply a symmetric square root of the Gram matrix."""
        V = self._as_matrix(v)
        W = self.q_outer.T @ V @ self.q_inner
        W *= np.sqrt(self.eigenvalues)
        return (self.q_outer @ W @ self.q_inner.T).ravel()

    def trace_solve(self, a_outer, a_inner, identity_coef=0.0):
        """``tr(G^{-1} (kron(a_outer, a_inner) + identity_coef * I))``."""
        d_outer = np.einsum("ij,ik,kj->j", self.q_outer, a_outer, self.q_outer)
        d_inner = np.einsum("ij,ik,kj->j", self.q_inner, a_inner, self.q_inner)
        tr = float((np.outer(d_outer, d_inner) / self.eigenvalues).sum())
        if identity_coef:
            tr += identity_coef * float((1.0 / self.eigenvalues).sum())
        return tr

    def dense(self):
        return self.variance * np.kron(self.k_outer, self.k_inner) + self.jitter * np.eye(self.size)


def kron_apply(a_outer, a_inner, v):
    """``kron(a_outer, a_inner) @ v`` without forming the product."""
    V = np.asarray(v, dtype=float).reshape(a_outer.shape[1], a_inner.shape[1])
    return (a_outer @ V @ a_inner.T).ravel()


def kron_matvec(g: KroneckerGram, v):
    return g.matvec(v)


def kron_solve(g: KroneckerGram, v):
    return g.solve(v)


def kron_logdet(g: KroneckerGram):
    return g.logdet()
