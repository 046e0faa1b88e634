"""Typed run and simulation configuration read from TOML files.

The file is a set of flat sections; unknown keys are rejected so typos
surface as validation errors naming the key.
"""
from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .chain import McmcConfig
from .errors import ConfigError
from .hmc import HmcConfig
from .lgcp import LgcpPrior
from .mixture import DirichletWeights, GPWeights, MixtureSpec
from .prior import ShrinkagePrior
from .simulate import SimulationSpec

OUTPUT_ENV = "SAMGLM_OUTPUT_DIR"


@dataclass
class RunSection:
    model: str = "samglm"
    seed: int = 0
    chains: int = 1
    jobs: int = 1
    output_dir: str = "fit"
    checkpoint_every: int = 0


@dataclass
class McmcSection:
    iterations: int = 2000
    warmup: int = 1000
    thin: int = 1
    init: str = "kmeans-counts"
    max_warmup_divergence: float = 0.5


@dataclass
class HmcSection:
    step_size: float = 0.05
    n_leapfrog: int = 25
    target_accept: float = 0.8
    adapt: bool = True
    adapt_mass: bool = True
    jitter: float = 0.2


@dataclass
class SamGlmSection:
    K: int = 3
    weights: str = "dirichlet"
    alpha: Optional[float] = None
    gp_mode: str = "sample"
    gp_variance: float = 1.0
    gp_lengthscale: Optional[float] = None


@dataclass
class LgcpSection:
    update: str = "joint"
    coords: str = "whitened"
    shared_lengthscale: bool = False
    log_variance_mean: float = 0.0
    log_variance_sd: float = 1.0
    log_lengthscale_mean: Optional[float] = None
    log_lengthscale_sd: float = 1.0


@dataclass
class PriorSection:
    a: float = 1.0
    b: float = 0.01


@dataclass
class DataSection:
    covariates: Optional[list] = None


@dataclass
class EvaluateSection:
    metrics: list = field(default_factory=lambda: ["loglik", "rmse", "hotspots", "cov_effect"])
    n_flagged: list = field(default_factory=lambda: [10, 25, 50, 100])


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    mcmc: McmcSection = field(default_factory=McmcSection)
    hmc_beta: HmcSection = field(default_factory=HmcSection)
    hmc_gp: HmcSection = field(default_factory=HmcSection)
    samglm: SamGlmSection = field(default_factory=SamGlmSection)
    lgcp: LgcpSection = field(default_factory=LgcpSection)
    prior: PriorSection = field(default_factory=PriorSection)
    data: DataSection = field(default_factory=DataSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)

    # derived objects ------------------------------------------------------------------
    def shrinkage(self) -> ShrinkagePrior:
        return ShrinkagePrior(self.prior.a, self.prior.b)

    def mcmc_config(self) -> McmcConfig:
        m = self.mcmc
        return McmcConfig(m.iterations, m.warmup, m.thin, m.init,
                          _hmc(self.hmc_beta), _hmc(self.hmc_gp), m.max_warmup_divergence)

    def mixture_spec(self) -> MixtureSpec:
        s = self.samglm
        if s.weights == "dirichlet":
            w = DirichletWeights(s.alpha)
        else:
            w = GPWeights(mode=s.gp_mode, variance=s.gp_variance, lengthscale=s.gp_lengthscale)
        return MixtureSpec(K=s.K, weights=w, shrinkage=self.shrinkage())

    def lgcp_prior(self) -> LgcpPrior:
        g = self.lgcp
        return LgcpPrior(self.shrinkage(), g.log_variance_mean, g.log_variance_sd,
                         g.log_lengthscale_mean, g.log_lengthscale_sd, g.shared_lengthscale)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        """Digest of every setting that affects sampling output."""
        d = self.to_dict()
        d["run"] = {k: v for k, v in d["run"].items() if k not in ("output_dir", "jobs")}
        d.pop("evaluate")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def output_dir(self) -> str:
        return os.environ.get(OUTPUT_ENV) or self.run.output_dir


def _hmc(h: HmcSection) -> HmcConfig:
    return HmcConfig(step_size=h.step_size, n_leapfrog=h.n_leapfrog, adapt=h.adapt,
                     target_accept=h.target_accept, adapt_mass=h.adapt_mass, jitter=h.jitter)


def _fill(cls, section: str, values: dict):
    if not isinstance(values, dict):
        raise ConfigError(f"[{section}] must be a table")
    known = {f.name: f for f in fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError(f"unknown key '{section}.{key}'")
    obj = cls()
    for key, val in values.items():
        default = getattr(obj, key)
        if isinstance(default, bool) and not isinstance(val, bool):
            raise ConfigError(f"'{section}.{key}' must be true or false")
        if isinstance(default, int) and not isinstance(default, bool):
            if isinstance(val, bool) or not isinstance(val, int):
                raise ConfigError(f"'{section}.{key}' must be an integer")
        if isinstance(default, float):
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(f"'{section}.{key}' must be a number")
            val = float(val)
        if isinstance(default, str) and not isinstance(val, str):
            raise ConfigError(f"'{section}.{key}' must be a string")
        if isinstance(default, list) or (default is None and key == "covariates"):
            if not isinstance(val, list):
                raise ConfigError(f"'{section}.{key}' must be an array")
        elif default is None:
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(f"'{section}.{key}' must be a number")
            val = float(val)
        setattr(obj, key, val)
    return obj


def _check(cfg: RunConfig):
    r, m, s = cfg.run, cfg.mcmc, cfg.samglm
    if r.model not in ("samglm", "lgcp"):
        raise ConfigError(f"'run.model' must be 'samglm' or 'lgcp', got {r.model!r}")
    if r.chains < 1:
        raise ConfigError("'run.chains' must be at least 1")
    if r.jobs < 1:
        raise ConfigError("'run.jobs' must be at least 1")
    if not m.iterations > m.warmup >= 0:
        raise ConfigError("'mcmc.iterations' must exceed 'mcmc.warmup' >= 0")
    if m.thin < 1:
        raise ConfigError("'mcmc.thin' must be at least 1")
    if m.init not in ("kmeans-counts", "random"):
        raise ConfigError(f"'mcmc.init' must be 'kmeans-counts' or 'random', got {m.init!r}")
    if s.K < 1:
        raise ConfigError("'samglm.K' must be at least 1")
    if s.weights not in ("dirichlet", "gp"):
        raise ConfigError(f"'samglm.weights' must be 'dirichlet' or 'gp', got {s.weights!r}")
    if s.gp_mode not in ("sample", "fixed"):
        raise ConfigError(f"'samglm.gp_mode' must be 'sample' or 'fixed', got {s.gp_mode!r}")
    if s.weights == "gp" and s.gp_mode == "fixed" and s.gp_lengthscale is None:
        raise ConfigError("'samglm.gp_lengthscale' is required when gp_mode is 'fixed'")
    if s.alpha is not None and not s.alpha > 0:
        raise ConfigError("'samglm.alpha' must be positive")
    if cfg.lgcp.update not in ("joint", "blockwise"):
        raise ConfigError("'lgcp.update' must be 'joint' or 'blockwise'")
    if cfg.lgcp.coords not in ("whitened", "centered"):
        raise ConfigError("'lgcp.coords' must be 'whitened' or 'centered'")
    for name in ("hmc_beta", "hmc_gp"):
        h = getattr(cfg, name)
        if not (h.step_size > 0 and h.n_leapfrog >= 1 and 0 < h.target_accept < 1
                and 0 <= h.jitter < 1):
            raise ConfigError(f"[{name}] has an invalid setting")
    if not (cfg.prior.a > 0 and cfg.prior.b > 0):
        raise ConfigError("'prior.a' and 'prior.b' must be positive")
    unknown = set(cfg.evaluate.metrics) - {"loglik", "rmse", "hotspots", "cov_effect"}
    if unknown:
        raise ConfigError(f"'evaluate.metrics' has unknown entries {sorted(unknown)}")


def run_config_from_dict(d: dict) -> RunConfig:
    sections = {f.name: f.type for f in fields(RunConfig)}
    cfg = RunConfig()
    for name, values in d.items():
        if name == "simulate":
            continue
        if name not in sections:
            raise ConfigError(f"unknown section [{name}]")
        setattr(cfg, name, _fill(type(getattr(cfg, name)), name, values))
    _check(cfg)
    return cfg


def load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_run_config(path) -> RunConfig:
    return run_config_from_dict(load_toml(path))


# simulation -----------------------------------------------------------------------
@dataclass
class SimulateSection:
    model: str = "samglm"
    beta: list = field(default_factory=lambda: [[0.0, 0.8, -0.5, 0.0, 0.3],
                                                [2.5, 0.2, 0.4, -0.6, 0.0],
                                                [-2.0, -0.5, 0.0, 0.6, 0.5]])
    rows: int = 32
    cols: int = 32
    cell_size: float = 400.0
    block_rows: int = 4
    block_cols: int = 4
    n_normal: int = 3
    n_count: int = 1
    count_rate: float = 3.0
    weights: str = "dirichlet"
    alpha: Optional[float] = None
    gp_variance: float = 1.0
    gp_lengthscale: Optional[float] = None
    field_variance: float = 1.0
    field_lengthscale: Optional[float] = None
    seed: int = 0
    heldout: bool = True


def load_simulation_config(path) -> SimulateSection:
    d = load_toml(path)
    extra = set(d) - {"simulate"}
    if extra:
        raise ConfigError(f"unknown section [{sorted(extra)[0]}] in simulation file")
    sim = _fill(SimulateSection, "simulate", d.get("simulate", {}))
    if sim.model not in ("samglm", "lgcp"):
        raise ConfigError(f"'simulate.model' must be 'samglm' or 'lgcp', got {sim.model!r}")
    try:
        beta = np.asarray(sim.beta, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError("'simulate.beta' must be a numeric array") from exc
    if sim.model == "samglm" and beta.ndim != 2:
        raise ConfigError("'simulate.beta' must be a list of rows for the mixture model")
    if sim.model == "lgcp" and beta.ndim != 1:
        raise ConfigError("'simulate.beta' must be a flat list for the LGCP")
    if beta.shape[-1] != 1 + sim.n_normal + sim.n_count:
        raise ConfigError("'simulate.beta' width must be 1 + n_normal + n_count")
    return sim


def simulation_spec(sim: SimulateSection) -> SimulationSpec:
    return SimulationSpec(beta=np.asarray(sim.beta, dtype=float), rows=sim.rows, cols=sim.cols,
                          cell_size=sim.cell_size, block_rows=sim.block_rows,
                          block_cols=sim.block_cols, n_normal=sim.n_normal,
                          n_count=sim.n_count, count_rate=sim.count_rate,
                          weights=sim.weights, alpha=sim.alpha, gp_variance=sim.gp_variance,
                          gp_lengthscale=sim.gp_lengthscale, seed=sim.seed)
