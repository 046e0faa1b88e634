"""Spatially-aware mixture of Poisson GLMs (SAM-GLM).

Each cell's count is Poisson with log-intensity ``X_n . beta_k`` for its
allocated component ``k = z_n``. Allocation probabilities are shared within a
block, either through independent symmetric Dirichlet weights (integrated out
analytically) or through a softmax of K block-level Gaussian processes.

Sampling is Metropolis-within-Gibbs: an HMC move on all coefficients, a
cell-by-cell allocation sweep, then (dependent blocks only) an HMC move on
the block-level GP values and their log hyperparameters.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import linalg
from scipy.special import gammaln, logsumexp

from . import prior as shrink
from .chain import BaseChain, McmcConfig
from .domain import Dataset
from .errors import SingularKernelError
from .hmc import HmcSampler, TargetDensity
from .kernels import DEFAULT_JITTER, SqExpKernel, cholesky, gram_dense
from .prior import ShrinkagePrior

ETA_MAX = 700.0


@dataclass(frozen=True)
class DirichletWeights:
    """Independent symmetric Dirichlet block weights; ``alpha=None`` means 1/K."""

    alpha: Optional[float] = None


@dataclass(frozen=True)
class GPWeights:
    """Softmax of K squared-exponential GPs evaluated at block centroids.

    ``mode="sample"`` samples the log hyperparameters under log-normal priors;
    ``mode="fixed"`` holds them at ``(variance, lengthscale)``.
    """

    mode: str = "sample"
    variance: float = 1.0
    lengthscale: Optional[float] = None
    log_variance_mean: float = 0.0
    log_variance_sd: float = 1.0
    log_lengthscale_mean: Optional[float] = None
    log_lengthscale_sd: float = 1.0
    jitter: float = DEFAULT_JITTER

    def __post_init__(self):
        if self.mode not in ("sample", "fixed"):
            raise ValueError("GP weights mode must be 'sample' or 'fixed'")
        if self.mode == "fixed" and self.lengthscale is None:
            raise ValueError("fixed GP weights need a lengthscale")


@dataclass(frozen=True)
class MixtureSpec:
    K: int
    weights: Union[DirichletWeights, GPWeights] = field(default_factory=DirichletWeights)
    shrinkage: ShrinkagePrior = field(default_factory=ShrinkagePrior)

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if isinstance(self.weights, DirichletWeights) and self.weights.alpha is not None \
                and not self.weights.alpha > 0:
            raise ValueError("Dirichlet alpha must be positive")

    @property
    def dependent(self) -> bool:
        return isinstance(self.weights, GPWeights)

    @property
    def alpha(self) -> float:
        a = getattr(self.weights, "alpha", None)
        return 1.0 / self.K if a is None else float(a)


@dataclass
class MixtureState:
    beta: np.ndarray
    z: np.ndarray
    F: Optional[np.ndarray] = None
    log_theta: Optional[np.ndarray] = None  # (K, 2): log variance, log lengthscale

    def copy(self) -> "MixtureState":
        return MixtureState(self.beta.copy(), self.z.copy(),
                            None if self.F is None else self.F.copy(),
                            None if self.log_theta is None else self.log_theta.copy())


# -- likelihood ---------------------------------------------------------------

def poisson_loglik(eta, y):
    """Elementwise Poisson log pmf with log-mean ``eta``.

    Entries with ``eta > 700`` return ``-inf``; callers treat that as a
    divergence rather than an overflow.
    """
    eta = np.asarray(eta, dtype=float)
    y = np.asarray(y, dtype=float)
    with np.errstate(over="ignore"):
        out = y * eta - np.exp(eta) - gammaln(y + 1.0)
    return np.where(eta > ETA_MAX, -np.inf, out)


def poisson_loglik_cell(x_n, beta_k, y_n) -> float:
    return float(poisson_loglik(np.dot(x_n, beta_k), y_n))


def component_loglik(X, y, beta) -> np.ndarray:
    """``(N, K)`` matrix of log p(y_n | z_n = k)."""
    return poisson_loglik(X @ beta.T, np.asarray(y)[:, None])


def block_counts(z, block_of_cell, n_blocks, K) -> np.ndarray:
    """``c[b, k]`` = number of cells in block ``b`` allocated to ``k``."""
    c = np.zeros((n_blocks, K), dtype=np.int64)
    np.add.at(c, (block_of_cell, z), 1)
    return c


# -- coefficient conditional --------------------------------------------------

def beta_conditional(beta, X, y, z, prior: ShrinkagePrior, mask=None, log_y_fact=None,
                     onehot=None):
    """Log density (up to a constant) and gradient of p(beta | y, X, z).

    Cells only contribute to their own component; components without cells
    see the prior alone. ``mask`` flags the columns under the shrinkage prior
    (the intercept is flat). ``log_y_fact`` and the ``(N, K)`` indicator
    matrix ``onehot`` may be passed in to avoid recomputation.
    """
    beta = np.asarray(beta, dtype=float)
    K, J = beta.shape
    eta = np.einsum("nj,nj->n", X, beta[z])
    if np.any(eta > ETA_MAX):
        return -np.inf, np.zeros_like(beta)
    mu = np.exp(eta)
    if log_y_fact is None:
        log_y_fact = gammaln(np.asarray(y, dtype=float) + 1.0)
    if onehot is None:
        onehot = np.eye(K)[z]
    logp = float(np.dot(y, eta) - mu.sum() - log_y_fact.sum())
    grad = onehot.T @ ((y - mu)[:, None] * X)
    if mask is None:
        mask = np.ones(J, dtype=bool)
    logp += shrink.log_density(prior, beta, mask)
    grad += shrink.grad_log_density(prior, beta, mask)
    return logp, grad


# -- allocation ----------------------------------------------------------------

def allocation_prob_independent(loglik_row, counts_excl, alpha) -> np.ndarray:
    """Collapsed-Dirichlet allocation probabilities for one cell.

    ``counts_excl`` are the block's component counts with this cell removed.
    """
    counts_excl = np.asarray(counts_excl, dtype=float)
    K = counts_excl.size
    logw = (np.asarray(loglik_row, dtype=float) + np.log(counts_excl + alpha)
            - np.log(K * alpha + counts_excl.sum()))
    return np.exp(logw - logsumexp(logw))


def allocation_prob_dependent(loglik_row, F_row) -> np.ndarray:
    F_row = np.asarray(F_row, dtype=float)
    logw = np.asarray(loglik_row, dtype=float) + F_row - logsumexp(F_row)
    return np.exp(logw - logsumexp(logw))


def _categorical(logw, u):
    """Inverse-CDF draw per row of ``logw`` using uniforms ``u``."""
    w = np.exp(logw - logw.max(axis=1, keepdims=True))
    cdf = np.cumsum(w, axis=1)
    k = (cdf < (u * cdf[:, -1])[:, None]).sum(axis=1)
    return np.minimum(k, logw.shape[1] - 1)


def gibbs_allocation_sweep(state: MixtureState, dataset: Dataset, spec: MixtureSpec,
                           rng, loglik=None, cells_by_block=None):
    """Resample every allocation from its full conditional.

    Independent blocks: blocks in index order, cells within a block in index
    order, with the block counts decremented before and incremented after
    each draw. Dependent blocks: all cells are conditionally independent
    given F and are drawn at once. Returns ``(z, counts)``.
    """
    K = spec.K
    blocks = dataset.blocks
    if loglik is None:
        loglik = component_loglik(dataset.X, dataset.y, state.beta)
    u = rng.random(dataset.n_cells)
    if spec.dependent:
        F = state.F
        log_pi = F - logsumexp(F, axis=1, keepdims=True)
        z = _categorical(loglik + log_pi[blocks.block_of_cell], u)
        return z.astype(np.int64), block_counts(z, blocks.block_of_cell, blocks.n_blocks, K)

    alpha = spec.alpha
    lik = np.exp(loglik - loglik.max(axis=1, keepdims=True)).tolist()
    z = state.z.tolist()
    u = u.tolist()
    counts = block_counts(state.z, blocks.block_of_cell, blocks.n_blocks, K)
    if cells_by_block is None:
        cells_by_block = _cells_by_block(blocks)
    out_counts = np.empty_like(counts)
    krange = range(K)
    for b, cells in enumerate(cells_by_block):
        c = [float(v) for v in counts[b]]
        for n in cells:
            c[z[n]] -= 1.0
            ln = lik[n]
            w = [ln[k] * (c[k] + alpha) for k in krange]
            target = u[n] * sum(w)
            acc = 0.0
            k_new = K - 1
            for k in krange:
                acc += w[k]
                if target < acc:
                    k_new = k
                    break
            z[n] = k_new
            c[k_new] += 1.0
        out_counts[b] = c
    return np.asarray(z, dtype=np.int64), out_counts


def _cells_by_block(blocks):
    order = np.argsort(blocks.block_of_cell, kind="stable")
    sizes = blocks.cells_per_block()
    return [part.tolist() for part in np.split(order, np.cumsum(sizes)[:-1])]


def log_allocation_prior_dirichlet(counts, alpha) -> float:
    """log p(z | alpha) with block weights integrated out (Dirichlet-multinomial)."""
    counts = np.asarray(counts, dtype=float)
    K = counts.shape[1]
    n_b = counts.sum(axis=1)
    return float(np.sum(gammaln(K * alpha) - gammaln(K * alpha + n_b))
                 + np.sum(gammaln(counts + alpha) - gammaln(alpha)))


def log_allocation_prior_softmax(z, F, block_of_cell) -> float:
    log_pi = F - logsumexp(F, axis=1, keepdims=True)
    return float(log_pi[block_of_cell, z].sum())


# -- block-level GP weights -----------------------------------------------------

def _theta_prior_params(weights: GPWeights, dataset: Dataset):
    ls_mean = weights.log_lengthscale_mean
    if ls_mean is None:
        ls_mean = float(np.log(0.25 * dataset.grid.extent()))
    mean = np.array([weights.log_variance_mean, ls_mean])
    sd = np.array([weights.log_variance_sd, weights.log_lengthscale_sd])
    return mean, sd


def log_hyperprior_theta(theta, mean, sd) -> float:
    """Independent log-normal densities evaluated at ``theta`` (not log theta)."""
    theta = np.asarray(theta, dtype=float)
    lt = np.log(theta)
    return float(np.sum(-lt - np.log(sd * np.sqrt(2 * np.pi)) - 0.5 * ((lt - mean) / sd) ** 2))


def fixed_log_theta(weights: GPWeights, K):
    return np.tile(np.log([weights.variance, weights.lengthscale]), (K, 1))


def gp_weights_conditional(F, log_theta, z, dataset: Dataset, weights: GPWeights,
                           with_theta_grad=True):
    """Log density and gradients of p(F, log theta | z).

    Returns ``(logp, grad_F, grad_log_theta)``. The density includes the
    softmax allocation term, each component's GP prior (with its
    log-determinant), the log-normal hyperprior on theta and the log-space
    Jacobian ``sum(log theta)``.
    """
    F = np.asarray(F, dtype=float)
    B, K = F.shape
    blocks = dataset.blocks
    counts = block_counts(np.asarray(z), blocks.block_of_cell, blocks.n_blocks, K)
    n_b = counts.sum(axis=1)
    lse = logsumexp(F, axis=1)
    logp = float(np.sum(counts * F) - np.dot(n_b, lse))
    soft = np.exp(F - lse[:, None])
    grad_F = counts - n_b[:, None] * soft

    pts = blocks.block_centroids
    grad_theta = np.zeros((K, 2))
    for k in range(K):
        var, ls = np.exp(log_theta[k])
        kern = SqExpKernel(var, ls)
        Kmat = gram_dense(kern, pts, jitter=weights.jitter * var)
        cf = cholesky(Kmat)
        a = linalg.cho_solve(cf, F[:, k], check_finite=False)
        logdet = 2.0 * np.log(np.diag(cf[0])).sum()
        logp += -0.5 * F[:, k] @ a - 0.5 * logdet
        grad_F[:, k] -= a
        if with_theta_grad:
            Kinv = linalg.cho_solve(cf, np.eye(B), check_finite=False)
            dvar, dls = kern.gradients(pts, pts)
            dvar = dvar + weights.jitter * np.eye(B)
            for i, (theta_i, dK) in enumerate(((var, dvar), (ls, dls))):
                grad_theta[k, i] = theta_i * (0.5 * a @ dK @ a - 0.5 * np.sum(Kinv * dK))
    if with_theta_grad:
        mean, sd = _theta_prior_params(weights, dataset)
        logp += sum(log_hyperprior_theta(np.exp(log_theta[k]), mean, sd) for k in range(K))
        logp += float(np.sum(log_theta))
        grad_theta += -1.0 - (log_theta - mean) / sd**2 + 1.0
    return logp, grad_F, grad_theta


# -- joint posterior --------------------------------------------------------------

def joint_log_posterior(state: MixtureState, dataset: Dataset, spec: MixtureSpec,
                        pieces=False):
    """Unnormalised log p(beta, z, F, theta | y, X).

    With ``pieces=True`` returns a dict of the additive terms: ``loglik``,
    ``beta_prior``, ``allocation`` and (dependent blocks) ``gp``.
    """
    X, y = dataset.X, dataset.y
    mask = dataset.covariates.slope_mask()
    eta = np.einsum("nj,nj->n", X, state.beta[state.z])
    out = {
        "loglik": float(poisson_loglik(eta, y).sum()),
        "beta_prior": shrink.log_density(spec.shrinkage, state.beta, mask),
    }
    blocks = dataset.blocks
    if spec.dependent:
        out["allocation"] = log_allocation_prior_softmax(state.z, state.F, blocks.block_of_cell)
        lt = state.log_theta if spec.weights.mode == "sample" else fixed_log_theta(spec.weights, spec.K)
        gp, _, _ = gp_weights_conditional(state.F, lt, state.z, dataset, spec.weights,
                                          with_theta_grad=spec.weights.mode == "sample")
        out["gp"] = gp - out["allocation"]
    else:
        counts = block_counts(state.z, blocks.block_of_cell, blocks.n_blocks, spec.K)
        out["allocation"] = log_allocation_prior_dirichlet(counts, spec.alpha)
    return out if pieces else float(sum(out.values()))


# -- initialisation -------------------------------------------------------------

def kmeans_1d(values, k, n_iter=100):
    """Lloyd's algorithm on a 1-D array with quantile starting centres.

    Returns labels ordered so that cluster 0 has the smallest centre.
    """
    values = np.asarray(values, dtype=float)
    centres = np.quantile(values, (np.arange(k) + 0.5) / k)
    labels = np.zeros(values.size, dtype=np.int64)
    for _ in range(n_iter):
        labels = np.argmin(np.abs(values[:, None] - centres[None, :]), axis=1)
        new = np.array([values[labels == j].mean() if np.any(labels == j) else centres[j]
                        for j in range(k)])
        if np.allclose(new, centres):
            break
        centres = new
    order = np.argsort(centres, kind="stable")
    rank = np.empty(k, dtype=np.int64)
    rank[order] = np.arange(k)
    return rank[labels]


def initialize_state(dataset: Dataset, spec: MixtureSpec, rng, strategy="kmeans-counts"):
    """Starting point for the sampler.

    ``"random"`` draws allocations uniformly. ``"kmeans-counts"`` clusters the
    block means of ``log(1 + y)`` and gives every cell its block's cluster;
    when there are fewer blocks than components the cells are clustered
    directly. Coefficients and GP values start at zero, hyperparameters at
    their prior medians.
    """
    K, N, J = spec.K, dataset.n_cells, dataset.covariates.n_covariates
    blocks = dataset.blocks
    if strategy == "random":
        z = rng.integers(0, K, size=N) if K > 1 else np.zeros(N, dtype=np.int64)
    elif strategy == "kmeans-counts":
        ly = np.log1p(np.asarray(dataset.y, dtype=float))
        if K == 1:
            z = np.zeros(N, dtype=np.int64)
        elif blocks.n_blocks >= K:
            sums = np.bincount(blocks.block_of_cell, weights=ly, minlength=blocks.n_blocks)
            means = sums / np.maximum(blocks.cells_per_block(), 1)
            z = kmeans_1d(means, K)[blocks.block_of_cell]
        else:
            z = kmeans_1d(ly, K)
    else:
        raise ValueError(f"unknown initialisation strategy {strategy!r}")
    state = MixtureState(beta=np.zeros((K, J)), z=np.asarray(z, dtype=np.int64))
    if spec.dependent:
        state.F = np.zeros((blocks.n_blocks, K))
        if spec.weights.mode == "sample":
            mean, _ = _theta_prior_params(spec.weights, dataset)
            state.log_theta = np.tile(mean, (K, 1))
        else:
            state.log_theta = fixed_log_theta(spec.weights, K)
    return state


# -- label switching --------------------------------------------------------------

def _greedy_match(ref, cur):
    """perm with ``cur[perm[k]]`` closest to ``ref[k]``, chosen greedily."""
    K = ref.shape[0]
    D = np.linalg.norm(ref[:, None, :] - cur[None, :, :], axis=2)
    perm = np.full(K, -1, dtype=np.int64)
    for _ in range(K):
        i, j = np.unravel_index(np.argmin(D), D.shape)
        perm[i] = j
        D[i, :] = np.inf
        D[:, j] = np.inf
    return perm


def label_alignment(betas, reference=None) -> np.ndarray:
    """Per-sample permutations aligning components to a reference.

    ``betas`` is ``(S, K, J)`` (or a single ``(K, J)`` state). Row ``s`` of
    the result satisfies ``betas[s][perm[s]] ~ reference``. The reference
    defaults to the first sample. Reporting only; the sampler never relabels.
    """
    betas = np.asarray(betas, dtype=float)
    if betas.ndim == 2:
        betas = betas[None]
    ref = betas[0] if reference is None else np.asarray(reference, dtype=float)
    return np.stack([_greedy_match(ref, b) for b in betas])


def apply_alignment(beta, z, perms):
    """Relabel samples so that component ``k`` means ``reference[k]``."""
    beta = np.asarray(beta)
    aligned_beta = np.stack([beta[s][perms[s]] for s in range(len(perms))])
    aligned_z = None
    if z is not None:
        inv = np.argsort(perms, axis=1)
        aligned_z = np.stack([inv[s][z[s]] for s in range(len(perms))])
    return aligned_beta, aligned_z


# -- sampler ----------------------------------------------------------------------

def _guarded(vg):
    """Map invalid states (non-PD kernels, extreme values) to ``-inf``."""
    def wrapped(q):
        if not np.all(np.isfinite(q)) or np.any(np.abs(q) > 1e6):
            return -np.inf, np.zeros_like(q)
        try:
            with np.errstate(all="ignore"):
                lp, g = vg(q)
        except (SingularKernelError, ValueError):
            return -np.inf, np.zeros_like(q)
        if not (np.isfinite(lp) and np.all(np.isfinite(g))):
            return -np.inf, np.zeros_like(q)
        return lp, g
    return wrapped


class SamGlmChain(BaseChain):
    """Metropolis-within-Gibbs chain for the SAM-GLM posterior."""

    model = "samglm"

    def __init__(self, dataset: Dataset, spec: MixtureSpec, mcmc: McmcConfig, rng,
                 state: MixtureState = None):
        self.hmc_steps = ("beta", "gp") if spec.dependent else ("beta",)
        super().__init__(mcmc, rng)
        self.dataset, self.spec = dataset, spec
        self.X = np.asarray(dataset.X, dtype=float)
        self.y = np.asarray(dataset.y, dtype=float)
        self.mask = dataset.covariates.slope_mask()
        self.log_y_fact = gammaln(self.y + 1.0)
        self.cells_by_block = _cells_by_block(dataset.blocks)
        self.state = state if state is not None else initialize_state(dataset, spec, rng, mcmc.init)
        K, J = self.state.beta.shape
        self.samplers = {"beta": HmcSampler(mcmc.hmc_beta, K * J, mcmc.warmup)}
        self.sample_theta = spec.dependent and spec.weights.mode == "sample"
        if spec.dependent:
            B = dataset.blocks.n_blocks
            dim = B * K + (2 * K if self.sample_theta else 0)
            self.samplers["gp"] = HmcSampler(mcmc.hmc_gp, dim, mcmc.warmup)

    def beta_target(self, z) -> TargetDensity:
        K, J = self.state.beta.shape
        onehot = np.eye(K)[z]

        def vg(q):
            lp, g = beta_conditional(q.reshape(K, J), self.X, self.y, z,
                                     self.spec.shrinkage, self.mask, self.log_y_fact, onehot)
            return lp, g.ravel()
        return TargetDensity(K * J, value_and_grad=vg)

    def gp_target(self, z) -> TargetDensity:
        B, K = self.state.F.shape
        nF = B * K
        weights = self.spec.weights
        if self.sample_theta:
            def vg(q):
                lp, gF, gT = gp_weights_conditional(q[:nF].reshape(B, K), q[nF:].reshape(K, 2),
                                                    z, self.dataset, weights)
                return lp, np.concatenate([gF.ravel(), gT.ravel()])
            return TargetDensity(nF + 2 * K, value_and_grad=_guarded(vg))
        lt = self.state.log_theta

        def vg_fixed(q):
            lp, gF, _ = gp_weights_conditional(q.reshape(B, K), lt, z, self.dataset, weights,
                                               with_theta_grad=False)
            return lp, gF.ravel()
        return TargetDensity(nF, value_and_grad=_guarded(vg_fixed))

    def _step_beta(self):
        st = self.state
        res = self.samplers["beta"].step(self.beta_target(st.z), st.beta.ravel(), self.rng)
        self._tally("beta", res)
        st.beta = res.q.reshape(st.beta.shape).copy()
        return res.accepted

    def _step_z(self):
        st = self.state
        st.z, _ = gibbs_allocation_sweep(st, self.dataset, self.spec, self.rng,
                                         cells_by_block=self.cells_by_block)

    def _step_gp(self):
        st = self.state
        q = st.F.ravel()
        if self.sample_theta:
            q = np.concatenate([q, st.log_theta.ravel()])
        res = self.samplers["gp"].step(self.gp_target(st.z), q, self.rng)
        self._tally("gp", res)
        B, K = st.F.shape
        st.F = res.q[:B * K].reshape(B, K).copy()
        if self.sample_theta:
            st.log_theta = res.q[B * K:].reshape(K, 2).copy()
        return res.accepted

    def _iterate(self):
        accepted = {"beta": self._timed("beta", self._step_beta)}
        self._timed("z", self._step_z)
        if self.spec.dependent:
            accepted["gp"] = self._timed("gp", self._step_gp)
        return accepted

    def _record(self):
        st = self.state
        pieces = joint_log_posterior(st, self.dataset, self.spec, pieces=True)
        return {
            "log_density": float(sum(pieces.values())),
            "loglik": pieces["loglik"],
            "beta": st.beta.copy(),
            "z": st.z.copy(),
            "F": None if st.F is None else st.F.copy(),
            "log_theta": None if st.log_theta is None else st.log_theta.copy(),
        }

    def build_trace(self, records):
        K, J = self.state.beta.shape
        N = self.dataset.n_cells
        return self._base_trace(
            records,
            beta=self._stack(records, "beta") if records else np.zeros((0, K, J)),
            z=self._stack(records, "z", np.int64) if records else np.zeros((0, N), np.int64),
            F=self._stack(records, "F"),
            log_theta=self._stack(records, "log_theta"))

    def step_timings(self) -> dict:
        out = {k: self.timings.get(k, 0.0) for k in ("beta", "z")}
        out["gp"] = self.timings.get("gp", 0.0) if self.spec.dependent else "skipped"
        return out

    def _state_dict(self):
        st = self.state
        return {"beta": st.beta.tolist(), "z": st.z.tolist(),
                "F": None if st.F is None else st.F.tolist(),
                "log_theta": None if st.log_theta is None else st.log_theta.tolist()}

    def _load_state_dict(self, d):
        self.state = MixtureState(
            beta=np.asarray(d["beta"], dtype=float),
            z=np.asarray(d["z"], dtype=np.int64),
            F=None if d["F"] is None else np.asarray(d["F"], dtype=float),
            log_theta=None if d["log_theta"] is None else np.asarray(d["log_theta"], dtype=float))


def run_sampler(dataset: Dataset, spec: MixtureSpec, mcmc: McmcConfig, rng, state=None):
    """Run one SAM-GLM chain and return its :class:`~samglm.trace.ChainTrace`."""
    chain = SamGlmChain(dataset, spec, mcmc, rng, state)
    trace = chain.run()
    trace.stats["timings"] = chain.step_timings()
    return trace
