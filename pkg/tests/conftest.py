import numpy as np
import pytest
from hypothesis import settings

from samglm.domain import CovariateMatrix, Dataset, build_regular_grid, make_covariates, rectangular_blocks
from samglm.kernels import Matern32Kernel, ProductKernel
from samglm.simulate import SimulationSpec, simulate_lgcp, simulate_samglm

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_mixture():
    beta = np.array([[0.5, 0.6, -0.4], [2.5, -0.3, 0.5]])
    spec = SimulationSpec(beta=beta, rows=8, cols=8, block_rows=2, block_cols=2, n_normal=2,
                          seed=7)
    return simulate_samglm(spec)


@pytest.fixture(scope="session")
def small_lgcp():
    grid = build_regular_grid(6, 7, 1.0)
    kern = ProductKernel(1.0, Matern32Kernel(2.5), Matern32Kernel(2.0))
    return simulate_lgcp(grid, [0.8, 0.3, -0.2], kern, seed=3,
                         blocks=rectangular_blocks(grid, 2, 2))


def toy_dataset(y, X=None, rows=1):
    """Single-block dataset on a ``rows x N/rows`` grid."""
    y = np.asarray(y, dtype=np.int64)
    n = y.size
    grid = build_regular_grid(rows, n // rows, 1.0)
    if X is None:
        cov = CovariateMatrix(X=np.ones((n, 1)), column_names=("intercept",), intercept=0)
    else:
        cov = make_covariates({f"x{j}": X[:, j] for j in range(X.shape[1])})
    return Dataset(grid=grid, blocks=rectangular_blocks(grid, 1, 1), covariates=cov, counts=y)
