"""Forward simulation from the SAM-GLM and LGCP generative models."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import softmax

from .domain import (CovariateMatrix, Dataset, build_regular_grid, rectangular_blocks,
                     standardize_covariates)
from .errors import SimulationSpecError
from .kernels import SqExpKernel, gram_dense, ProductKernel
from .mixture import MixtureState

ETA_LIMIT = 20.0


@dataclass
class SimulationSpec:
    """Synthetic SAM-GLM world.

    Covariates are an intercept, ``n_normal`` standard-normal columns and
    ``n_count`` count-like columns ``log(1 + Poisson(count_rate))``; every
    non-intercept column is standardised. ``beta`` has one row per component
    and ``1 + n_normal + n_count`` columns.
    """

    beta: np.ndarray
    rows: int = 32
    cols: int = 32
    cell_size: float = 400.0
    block_rows: int = 4
    block_cols: int = 4
    n_normal: int = 4
    n_count: int = 0
    count_rate: float = 3.0
    weights: str = "dirichlet"
    alpha: Optional[float] = None
    gp_variance: float = 1.0
    gp_lengthscale: Optional[float] = None
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        J = 1 + self.n_normal + self.n_count
        if self.beta.shape[1] != J:
            raise SimulationSpecError(
                f"beta has {self.beta.shape[1]} columns but the covariate generator makes {J}")
        if self.weights not in ("dirichlet", "gp"):
            raise SimulationSpecError(f"unknown weights mode {self.weights!r}")
        if self.alpha is not None and not self.alpha > 0:
            raise SimulationSpecError("alpha must be positive")

    @property
    def K(self) -> int:
        return self.beta.shape[0]


def default_demo_spec(seed=0) -> SimulationSpec:
    """32x32 grid, 16 blocks, K=3, J=5."""
    beta = np.array([
        [0.0, 0.8, -0.5, 0.0, 0.3],
        [2.5, 0.2, 0.4, -0.6, 0.0],
        [-2.0, -0.5, 0.0, 0.6, 0.5],
    ])
    return SimulationSpec(beta=beta, n_normal=3, n_count=1, seed=seed)


def generate_covariates(n, n_normal, n_count, count_rate, rng) -> CovariateMatrix:
    cols = [np.ones(n)]
    names = ["intercept"]
    for j in range(n_normal):
        cols.append(rng.standard_normal(n))
        names.append(f"x{j + 1}")
    for j in range(n_count):
        cols.append(np.log1p(rng.poisson(count_rate, size=n)))
        names.append(f"log_count{j + 1}")
    cov = CovariateMatrix(X=np.column_stack(cols), column_names=tuple(names), intercept=0)
    return standardize_covariates(cov)


def simulate_samglm(spec: SimulationSpec):
    """Draw a dataset and its ground truth from the SAM-GLM prior.

    Returns ``(dataset, truth)``; ``truth.F`` holds the block GP values in GP
    mode and ``dataset.meta`` carries the block weights and intensities.
    """
    rng = np.random.default_rng(spec.seed)
    grid = build_regular_grid(spec.rows, spec.cols, spec.cell_size)
    blocks = rectangular_blocks(grid, spec.block_rows, spec.block_cols)
    N, K = grid.n_cells, spec.K
    cov = generate_covariates(N, spec.n_normal, spec.n_count, spec.count_rate, rng)

    eta_all = cov.X @ spec.beta.T
    if eta_all.max() > ETA_LIMIT:
        raise SimulationSpecError(
            f"linear predictor reaches {eta_all.max():.1f} > {ETA_LIMIT}; use smaller beta")

    F = None
    if spec.weights == "dirichlet":
        alpha = 1.0 / K if spec.alpha is None else spec.alpha
        pi = rng.dirichlet(np.full(K, alpha), size=blocks.n_blocks)
    else:
        ls = spec.gp_lengthscale or 0.25 * grid.extent()
        Kmat = gram_dense(SqExpKernel(spec.gp_variance, ls), blocks.block_centroids)
        L = np.linalg.cholesky(Kmat)
        F = L @ rng.standard_normal((blocks.n_blocks, K))
        pi = softmax(F, axis=1)

    if K == 1:
        z = np.zeros(N, dtype=np.int64)
    else:
        u = rng.random(N)
        cdf = np.cumsum(pi[blocks.block_of_cell], axis=1)
        z = np.minimum((cdf < u[:, None]).sum(axis=1), K - 1).astype(np.int64)
    eta = eta_all[np.arange(N), z]
    lam = np.exp(eta)
    y = rng.poisson(lam).astype(np.int64)

    meta = {"pi": pi, "intensity": lam, "seed": spec.seed}
    data = Dataset(grid=grid, blocks=blocks, covariates=cov, counts=y, meta=meta)
    truth = MixtureState(beta=spec.beta.copy(), z=z, F=F)
    return data, truth


def simulate_lgcp(grid, beta, kernel: ProductKernel, seed=0, blocks=None,
                  n_count=0, count_rate=3.0):
    """Poisson counts with log intensity ``X beta + f`` and a GP field ``f``.

    The field is drawn through the symmetric square root of the Kronecker
    Gram matrix. The covariates are an intercept plus standard-normal
    columns (the last ``n_count`` columns are count-like instead). Returns
    ``(dataset, f)``.
    """
    beta = np.asarray(beta, dtype=float).ravel()
    rng = np.random.default_rng(seed)
    N = grid.n_cells
    cov = generate_covariates(N, beta.size - 1 - n_count, n_count, count_rate, rng)
    if kernel.variance > 0:
        gram = kernel.kron_gram(grid)
        f = gram.sqrt_matvec(rng.standard_normal(N))
    else:
        f = np.zeros(N)
    eta = cov.X @ beta + f
    if eta.max() > ETA_LIMIT:
        raise SimulationSpecError(f"linear predictor reaches {eta.max():.1f} > {ETA_LIMIT}")
    lam = np.exp(eta)
    y = rng.poisson(lam).astype(np.int64)
    if blocks is None:
        blocks = rectangular_blocks(grid, 1, 1)
    data = Dataset(grid=grid, blocks=blocks, covariates=cov, counts=y,
                   meta={"intensity": lam, "seed": seed})
    return data, f


def resample_counts(dataset: Dataset, intensity, seed) -> Dataset:
    """Same world, fresh Poisson counts (a held-out period)."""
    rng = np.random.default_rng(seed)
    return dataset.with_counts(rng.poisson(np.asarray(intensity)).astype(np.int64))
