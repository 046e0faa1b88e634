"""Log-Gaussian Cox process baseline on a regular grid.

Counts are Poisson with log intensity ``X beta + f`` where ``f`` is a
zero-mean GP with covariance ``variance * k_east * k_north`` (Matern-3/2
factors). The field, coefficients and log hyperparameters
``phi = log(variance, lengthscale_east, lengthscale_north)`` are sampled by
HMC; every operation on the grid covariance goes through its Kronecker
factors.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import gammaln

from . import prior as shrink
from .chain import BaseChain, McmcConfig
from .domain import Dataset
from .errors import SingularKernelError
from .hmc import HmcSampler, TargetDensity
from .kernels import DEFAULT_JITTER, KroneckerGram, Matern32Kernel, kron_apply
from .mixture import ETA_MAX, log_hyperprior_theta
from .prior import ShrinkagePrior

# |log theta| beyond this is treated as outside the support
PHI_LIMIT = 30.0


@dataclass(frozen=True)
class LgcpPrior:
    """Shrinkage prior on coefficients and log-normal hyperpriors.

    ``log_lengthscale_mean=None`` centres the lengthscale prior at a quarter
    of the longer grid side.
    """

    shrinkage: ShrinkagePrior = field(default_factory=ShrinkagePrior)
    log_variance_mean: float = 0.0
    log_variance_sd: float = 1.0
    log_lengthscale_mean: Optional[float] = None
    log_lengthscale_sd: float = 1.0
    shared_lengthscale: bool = False
    jitter: float = DEFAULT_JITTER

    def hyper_params(self, dataset: Dataset):
        """Means and s.d.s of the normal priors on ``phi``."""
        ls_mean = self.log_lengthscale_mean
        if ls_mean is None:
            rows, cols = dataset.grid.shape
            ls_mean = float(np.log(0.25 * max(rows, cols) * dataset.grid.cell_size))
        n_ls = 1 if self.shared_lengthscale else 2
        mean = np.array([self.log_variance_mean] + [ls_mean] * n_ls)
        sd = np.array([self.log_variance_sd] + [self.log_lengthscale_sd] * n_ls)
        return mean, sd


@dataclass
class LgcpState:
    f: np.ndarray
    beta: np.ndarray
    phi: np.ndarray

    def copy(self):
        return LgcpState(self.f.copy(), self.beta.copy(), self.phi.copy())


class LgcpModel:
    """Log posterior and gradients for one dataset, Kronecker-accelerated."""

    def __init__(self, dataset: Dataset, prior: LgcpPrior = None):
        if not dataset.grid.is_regular:
            raise ValueError("the LGCP needs a regular grid")
        self.dataset = dataset
        self.prior = prior or LgcpPrior()
        self.X = np.asarray(dataset.X, dtype=float)
        self.y = np.asarray(dataset.y, dtype=float)
        self.mask = dataset.covariates.slope_mask()
        self.log_y_fact = gammaln(self.y + 1.0)
        self.north, self.east = dataset.grid.axis_coordinates()
        self.hyper_mean, self.hyper_sd = self.prior.hyper_params(dataset)
        self.N, self.J = self.X.shape
        self.n_phi = len(self.hyper_mean)

    def unpack_phi(self, phi):
        phi = np.asarray(phi, dtype=float)
        if self.prior.shared_lengthscale:
            return np.exp(phi[0]), np.exp(phi[1]), np.exp(phi[1])
        return np.exp(phi[0]), np.exp(phi[1]), np.exp(phi[2])

    def gram(self, phi) -> KroneckerGram:
        var, ls_e, ls_n = self.unpack_phi(phi)
        kn = Matern32Kernel(ls_n)(self.north, self.north)
        ke = Matern32Kernel(ls_e)(self.east, self.east)
        return KroneckerGram(kn, ke, var, self.prior.jitter * var)

    def log_posterior(self, state: LgcpState, pieces=False):
        eta = self.X @ state.beta + state.f
        if np.any(eta > ETA_MAX):
            return -np.inf
        g = self.gram(state.phi)
        theta = np.exp(state.phi)
        out = {
            "loglik": float(self.y @ eta - np.exp(eta).sum() - self.log_y_fact.sum()),
            "beta_prior": shrink.log_density(self.prior.shrinkage, state.beta, self.mask),
            "field_prior": -0.5 * g.logdet() - 0.5 * float(state.f @ g.solve(state.f)),
            "hyperprior": log_hyperprior_theta(theta, self.hyper_mean, self.hyper_sd),
            "jacobian": float(np.sum(state.phi)),
        }
        return out if pieces else float(sum(out.values()))

    def gradients(self, state: LgcpState):
        """Return ``(logp, grad_f, grad_beta, grad_phi)``."""
        eta = self.X @ state.beta + state.f
        if np.any(eta > ETA_MAX):
            return -np.inf, np.zeros(self.N), np.zeros(self.J), np.zeros(self.n_phi)
        mu = np.exp(eta)
        resid = self.y - mu
        g = self.gram(state.phi)
        alpha = g.solve(state.f)
        theta = np.exp(state.phi)

        logp = (float(self.y @ eta - mu.sum() - self.log_y_fact.sum())
                + shrink.log_density(self.prior.shrinkage, state.beta, self.mask)
                - 0.5 * g.logdet() - 0.5 * float(state.f @ alpha)
                + log_hyperprior_theta(theta, self.hyper_mean, self.hyper_sd)
                + float(np.sum(state.phi)))
        grad_f = resid - alpha
        grad_beta = self.X.T @ resid + shrink.grad_log_density(self.prior.shrinkage,
                                                               state.beta, self.mask)
        grad_phi = self._phi_gradient(g, alpha, state.phi)
        return logp, grad_f, grad_beta, grad_phi

    def dK_terms(self, phi):
        """Kronecker pieces of dK/dtheta_i as ``(outer, inner, identity_coef)``.

        ``dK/dtheta_i = kron(outer, inner) + identity_coef * I``; a lengthscale
        shared between both axes yields two such terms.
        """
        var, ls_e, ls_n = self.unpack_phi(phi)
        kn = Matern32Kernel(ls_n)(self.north, self.north)
        ke = Matern32Kernel(ls_e)(self.east, self.east)
        dkn = Matern32Kernel(ls_n).d_lengthscale(self.north, self.north)
        dke = Matern32Kernel(ls_e).d_lengthscale(self.east, self.east)
        terms = [[(kn, ke, self.prior.jitter)]]
        if self.prior.shared_lengthscale:
            terms.append([(var * kn, dke, 0.0), (var * dkn, ke, 0.0)])
        else:
            terms.append([(var * kn, dke, 0.0)])
            terms.append([(var * dkn, ke, 0.0)])
        return terms

    def _phi_gradient(self, g, alpha, phi):
        theta = np.exp(phi)
        grad = np.zeros(self.n_phi)
        for i, parts in enumerate(self.dK_terms(phi)):
            quad = 0.0
            tr = 0.0
            for outer, inner, ident in parts:
                quad += float(alpha @ kron_apply(outer, inner, alpha)) + ident * float(alpha @ alpha)
                tr += g.trace_solve(outer, inner, ident)
            grad[i] = theta[i] * (0.5 * quad - 0.5 * tr)
        # log-normal hyperprior in theta, chain rule to phi, plus the Jacobian term
        grad += -1.0 - (phi - self.hyper_mean) / self.hyper_sd**2 + 1.0
        return grad

    # whitened field f = G^{1/2} v ---------------------------------------------------
    def field_from_white(self, v, phi):
        return self.gram(phi).sqrt_matvec(v)

    def whitened_gradients(self, v, beta, phi):
        """Log density and gradients in coordinates ``(v, beta, phi)``.

        ``f = S v`` with ``S`` the symmetric square root of the Gram matrix, so
        ``v`` has a standard normal prior. Returns
        ``(logp, grad_v, grad_beta, grad_phi, f)``.
        """
        g = self.gram(phi)
        s = np.sqrt(g.eigenvalues)
        qo, qi = g.q_outer, g.q_inner
        vt = qo.T @ v.reshape(g.shape) @ qi
        f = (qo @ (s * vt) @ qi.T).ravel()
        eta = self.X @ beta + f
        if np.any(eta > ETA_MAX):
            return -np.inf, np.zeros(self.N), np.zeros(self.J), np.zeros(self.n_phi), f
        mu = np.exp(eta)
        resid = self.y - mu
        theta = np.exp(phi)
        logp = (float(self.y @ eta - mu.sum() - self.log_y_fact.sum())
                + shrink.log_density(self.prior.shrinkage, beta, self.mask)
                - 0.5 * float(v @ v)
                + log_hyperprior_theta(theta, self.hyper_mean, self.hyper_sd)
                + float(np.sum(phi)))
        rt = qo.T @ resid.reshape(g.shape) @ qi
        grad_v = (qo @ (s * rt) @ qi.T).ravel() - v
        grad_beta = self.X.T @ resid + shrink.grad_log_density(self.prior.shrinkage, beta,
                                                               self.mask)
        # d(sqrt K) in the eigenbasis: (Q^T dK Q)_ab / (s_a + s_b)
        var = g.variance
        ls_grads = []
        for axis, lam_other in ((1, g.lam_outer), (0, g.lam_inner)):
            if axis == 1:
                kern, coords, q = Matern32Kernel(self.unpack_phi(phi)[1]), self.east, qi
            else:
                kern, coords, q = Matern32Kernel(self.unpack_phi(phi)[2]), self.north, qo
            M = q.T @ kern.d_lengthscale(coords, coords) @ q
            if axis == 1:
                D = 1.0 / (s[:, :, None] + s[:, None, :])
                val = var * np.einsum("ij,i,jk,ijk,ik->", rt, lam_other, M, D, vt)
            else:
                D = 1.0 / (s[:, None, :] + s[None, :, :])
                val = var * np.einsum("ij,j,ik,ikj,kj->", rt, lam_other, M, D, vt)
            ls_grads.append(val)
        g_var = float(np.sum(rt * vt * s) / (2.0 * var))
        if self.prior.shared_lengthscale:
            raw = np.array([g_var, ls_grads[0] + ls_grads[1]])
        else:
            raw = np.array([g_var, ls_grads[0], ls_grads[1]])
        grad_phi = theta * raw - 1.0 - (phi - self.hyper_mean) / self.hyper_sd**2 + 1.0
        return logp, grad_v, grad_beta, grad_phi, f

    # flat parameter vector [field, beta, phi] -----------------------------------------
    def pack(self, state: LgcpState):
        return np.concatenate([state.f, state.beta, state.phi])

    def unpack(self, q) -> LgcpState:
        N, J = self.N, self.J
        return LgcpState(q[:N], q[N:N + J], q[N + J:])

    def value_and_grad(self, x, coords="whitened"):
        """Joint log density and gradient at a packed vector; ``-inf`` when invalid."""
        N, J = self.N, self.J
        bad = (-np.inf, np.zeros_like(x))
        if not np.all(np.isfinite(x)) or np.any(np.abs(x[N + J:]) > PHI_LIMIT):
            return bad
        try:
            with np.errstate(over="ignore", under="ignore"):
                if coords == "whitened":
                    lp, gu, gb, gp, _ = self.whitened_gradients(x[:N], x[N:N + J], x[N + J:])
                else:
                    lp, gu, gb, gp = self.gradients(self.unpack(x))
        except (SingularKernelError, ValueError):
            return bad
        if not np.isfinite(lp):
            return bad
        return lp, np.concatenate([gu, gb, gp])

    def target(self, blocks=("field", "beta", "phi"), fixed=None,
               coords="centered") -> TargetDensity:
        """HMC target over the listed blocks; the rest are held at the packed ``fixed``."""
        slices = {"field": slice(0, self.N), "beta": slice(self.N, self.N + self.J),
                  "phi": slice(self.N + self.J, self.N + self.J + self.n_phi)}
        idx = np.concatenate([np.arange(self.N + self.J + self.n_phi)[slices[b]] for b in blocks])

        def vg(q):
            if fixed is None:
                x = q
            else:
                x = np.array(fixed, dtype=float)
                x[idx] = q
            lp, grad = self.value_and_grad(x, coords)
            return lp, grad[idx]
        return TargetDensity(len(idx), value_and_grad=vg)

    def initial_state(self) -> LgcpState:
        beta = np.zeros(self.J)
        icpt = self.dataset.covariates.intercept
        if icpt is not None:
            beta[icpt] = np.log(self.y.mean() + 0.5)
        return LgcpState(np.zeros(self.N), beta, self.hyper_mean.copy())


def lgcp_log_posterior(state: LgcpState, dataset: Dataset, prior: LgcpPrior = None):
    return LgcpModel(dataset, prior).log_posterior(state)


def lgcp_gradients(state: LgcpState, dataset: Dataset, prior: LgcpPrior = None):
    """Gradients ``(grad_f, grad_beta, grad_phi)`` of the log posterior."""
    _, gf, gb, gp = LgcpModel(dataset, prior).gradients(state)
    return gf, gb, gp


class LgcpChain(BaseChain):
    """Joint (default) or blockwise HMC over field, coefficients and hyperparameters.

    ``coords="whitened"`` (default) samples ``v`` with ``f = G^{1/2} v``;
    ``"centered"`` samples ``f`` directly. Both target the same posterior.
    """

    model = "lgcp"
    BLOCKS = ("field", "beta", "phi")

    def __init__(self, dataset: Dataset, prior: LgcpPrior, mcmc: McmcConfig, rng,
                 update="joint", coords="whitened"):
        if update not in ("joint", "blockwise"):
            raise ValueError("update must be 'joint' or 'blockwise'")
        if coords not in ("whitened", "centered"):
            raise ValueError("coords must be 'whitened' or 'centered'")
        self.update, self.coords = update, coords
        self.hmc_steps = ("lgcp",) if update == "joint" else self.BLOCKS
        super().__init__(mcmc, rng)
        self.dataset = dataset
        self.lgcp = m = LgcpModel(dataset, prior)
        # zero field is zero in both coordinate systems
        self.q = m.pack(m.initial_state())
        dims = {"field": m.N, "beta": m.J, "phi": m.n_phi}
        if update == "joint":
            self.samplers = {"lgcp": HmcSampler(mcmc.hmc_gp, m.N + m.J + m.n_phi, mcmc.warmup)}
        else:
            self.samplers = {b: HmcSampler(mcmc.hmc_gp, dims[b], mcmc.warmup) for b in self.BLOCKS}

    @property
    def state(self) -> LgcpState:
        st = self.lgcp.unpack(self.q.copy())
        if self.coords == "whitened":
            st.f = self.lgcp.field_from_white(st.f, st.phi)
        return st

    def _iterate(self):
        m = self.lgcp
        if self.update == "joint":
            res = self._timed("lgcp", self.samplers["lgcp"].step,
                              m.target(coords=self.coords), self.q, self.rng)
            self._tally("lgcp", res)
            self.q = res.q.copy()
            return {"lgcp": res.accepted}
        accepted = {}
        for b in self.BLOCKS:
            target = m.target((b,), self.q, self.coords)
            sl = {"field": slice(0, m.N), "beta": slice(m.N, m.N + m.J),
                  "phi": slice(m.N + m.J, None)}[b]
            res = self._timed(b, self.samplers[b].step, target, self.q[sl], self.rng)
            self._tally(b, res)
            self.q[sl] = res.q
            accepted[b] = res.accepted
        return accepted

    def _record(self):
        st = self.state
        pieces = self.lgcp.log_posterior(st, pieces=True)
        return {"log_density": float(sum(pieces.values())), "loglik": pieces["loglik"],
                "beta": st.beta[None, :].copy(), "f": st.f, "log_theta": st.phi.copy()}

    def build_trace(self, records):
        m = self.lgcp
        return self._base_trace(
            records,
            beta=self._stack(records, "beta") if records else np.zeros((0, 1, m.J)),
            f=self._stack(records, "f") if records else np.zeros((0, m.N)),
            log_theta=self._stack(records, "log_theta") if records else np.zeros((0, m.n_phi)))

    def step_timings(self):
        return dict(self.timings)

    def _state_dict(self):
        return {"coords": self.coords, "q": self.q.tolist()}

    def _load_state_dict(self, d):
        if d["coords"] != self.coords:
            raise ValueError("checkpoint uses a different field parameterisation")
        self.q = np.asarray(d["q"], dtype=float)


def field_summary(trace):
    """Posterior mean and s.d. of the latent field per cell."""
    return trace.f.mean(axis=0), trace.f.std(axis=0)


def run_lgcp_sampler(dataset: Dataset, mcmc: McmcConfig, rng, prior: LgcpPrior = None,
                     update="joint", coords="whitened"):
    chain = LgcpChain(dataset, prior or LgcpPrior(), mcmc, rng, update, coords)
    trace = chain.run()
    trace.stats["timings"] = chain.step_timings()
    return trace
