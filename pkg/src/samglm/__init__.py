"""Spatial mixtures of Poisson regressions with a log-Gaussian Cox process baseline."""
from .domain import (BlockMap, CovariateMatrix, Dataset, Grid, build_regular_grid,
                     make_covariates, rectangular_blocks, standardize_covariates,
                     validate_dataset)
from .chain import McmcConfig
from .hmc import HmcConfig, HmcSampler, TargetDensity
from .kernels import KroneckerGram, Matern32Kernel, ProductKernel, SqExpKernel
from .lgcp import LgcpModel, LgcpPrior, LgcpState, run_lgcp_sampler
from .mixture import (DirichletWeights, GPWeights, MixtureSpec, MixtureState,
                      label_alignment, run_sampler)
from .prior import ShrinkagePrior
from .simulate import SimulationSpec, simulate_lgcp, simulate_samglm
from .trace import ChainTrace

__version__ = "0.1.0"
