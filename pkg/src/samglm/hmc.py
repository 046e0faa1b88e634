"""Hamiltonian Monte Carlo with a diagonal mass matrix.

Leapfrog integration, Metropolis correction, dual-averaging step-size
adaptation and windowed diagonal mass adaptation during warm-up. One
:class:`HmcSampler` instance serves one target within one chain.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

DIVERGENCE_THRESHOLD = 1000.0


@dataclass
class HmcConfig:
    step_size: float = 0.05
    n_leapfrog: int = 25
    mass_diagonal: object = 1.0
    adapt: bool = True
    target_accept: float = 0.8
    adapt_mass: bool = True
    jitter: float = 0.2

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.n_leapfrog < 1:
            raise ValueError("n_leapfrog must be at least 1")
        if np.any(np.asarray(self.mass_diagonal) <= 0):
            raise ValueError("mass entries must be positive")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")


class TargetDensity:
    """Log density and its gradient over a flat real vector.

    ``value_and_grad`` may be supplied when the two share work; otherwise it
    is assembled from the separate callables.
    """

    def __init__(self, dimension: int, log_density: Optional[Callable] = None,
                 grad_log_density: Optional[Callable] = None,
                 value_and_grad: Optional[Callable] = None):
        if value_and_grad is None and (log_density is None or grad_log_density is None):
            raise ValueError("need value_and_grad or both log_density and grad_log_density")
        self.dimension = int(dimension)
        self._logp = log_density
        self._grad = grad_log_density
        self._vg = value_and_grad

    def log_density(self, q):
        if self._logp is not None:
            return float(self._logp(q))
        return float(self._vg(q)[0])

    def grad_log_density(self, q):
        if self._grad is not None:
            return np.asarray(self._grad(q), dtype=float)
        return np.asarray(self._vg(q)[1], dtype=float)

    def value_and_grad(self, q):
        if self._vg is not None:
            v, g = self._vg(q)
            return float(v), np.asarray(g, dtype=float)
        return self.log_density(q), self.grad_log_density(q)


def _mass_vector(mass, dim):
    return np.broadcast_to(np.asarray(mass, dtype=float), (dim,)).copy()


def _integrate(target, q, p, step_size, n_steps, inv_mass, grad=None):
    """Leapfrog trajectory. Returns (q, p, logp, grad, diverged)."""
    q = np.array(q, dtype=float, copy=True)
    p = np.array(p, dtype=float, copy=True)
    if grad is None:
        _, grad = target.value_and_grad(q)
    p += 0.5 * step_size * grad
    logp = -np.inf
    for i in range(n_steps):
        with np.errstate(over="ignore", invalid="ignore"):
            q += step_size * inv_mass * p
        logp, grad = target.value_and_grad(q)
        if not (np.isfinite(logp) and np.all(np.isfinite(grad))):
            return q, p, -np.inf, grad, True
        if i < n_steps - 1:
            p += step_size * grad
    p += 0.5 * step_size * grad
    return q, p, logp, grad, False


def leapfrog(target: TargetDensity, q, p, cfg: HmcConfig):
    """Run ``cfg.n_leapfrog`` leapfrog steps from ``(q, p)``.

    Raises ``FloatingPointError`` if the density or gradient becomes
    non-finite along the way.
    """
    inv_mass = 1.0 / _mass_vector(cfg.mass_diagonal, len(np.atleast_1d(q)))
    q1, p1, _, _, diverged = _integrate(target, np.atleast_1d(q), np.atleast_1d(p),
                                        cfg.step_size, cfg.n_leapfrog, inv_mass)
    if diverged:
        raise FloatingPointError("non-finite density or gradient during leapfrog")
    return q1, p1


def hamiltonian(logp, p, inv_mass):
    with np.errstate(over="ignore"):
        return -logp + 0.5 * float(np.sum(inv_mass * p * p))


class DualAveraging:
    """Step-size adaptation of Hoffman & Gelman (2014), Algorithm 5."""

    def __init__(self, step_size, target=0.8, gamma=0.05, t0=10.0, kappa=0.75):
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.restart(step_size)

    def restart(self, step_size):
        self.mu = np.log(10.0 * step_size)
        self.log_step = np.log(step_size)
        self.log_step_bar = 0.0
        self.h_bar = 0.0
        self.t = 0

    def update(self, accept_prob):
        self.t += 1
        t = self.t
        w = 1.0 / (t + self.t0)
        self.h_bar = (1 - w) * self.h_bar + w * (self.target - accept_prob)
        self.log_step = self.mu - np.sqrt(t) / self.gamma * self.h_bar
        eta = t ** -self.kappa
        self.log_step_bar = eta * self.log_step + (1 - eta) * self.log_step_bar
        return float(np.exp(self.log_step))

    @property
    def final_step(self):
        return float(np.exp(self.log_step_bar))


@dataclass
class StepResult:
    q: np.ndarray
    accepted: bool
    energy_error: float
    accept_prob: float
    divergent: bool
    log_density: float


class HmcSampler:
    """Stateful HMC kernel with warm-up adaptation.

    Call :meth:`step` once per iteration; ``warmup`` iterations at the start
    adapt the step size (and optionally the diagonal mass), after which both
    are frozen.
    """

    def __init__(self, cfg: HmcConfig, dimension: int, warmup: int = 0):
        self.cfg = cfg
        self.dimension = int(dimension)
        self.warmup = int(warmup)
        self.step_size = float(cfg.step_size)
        self.mass = _mass_vector(cfg.mass_diagonal, self.dimension)
        self.iteration = 0
        self.initialised = False
        self.da = DualAveraging(self.step_size, cfg.target_accept)
        # mass window in warm-up iterations, Stan-like proportions
        self.window = (int(0.15 * self.warmup), int(0.75 * self.warmup))
        self._w_n = 0
        self._w_mean = np.zeros(self.dimension)
        self._w_m2 = np.zeros(self.dimension)

    @property
    def adapting(self):
        return self.cfg.adapt and self.iteration < self.warmup

    def _find_initial_step(self, target, q, rng):
        inv_mass = 1.0 / self.mass
        logp, grad = target.value_and_grad(q)
        eps = self.step_size
        p = rng.standard_normal(self.dimension) * np.sqrt(self.mass)
        h0 = hamiltonian(logp, p, inv_mass)

        def log_ratio(e):
            q1, p1, lp1, _, div = _integrate(target, q, p, e, 1, inv_mass, grad)
            if div or not np.isfinite(lp1):
                return -np.inf
            return h0 - hamiltonian(lp1, p1, inv_mass)

        direction = 1.0 if log_ratio(eps) > np.log(0.5) else -1.0
        for _ in range(60):
            lr = log_ratio(eps)
            if direction > 0 and not lr > np.log(0.5):
                break
            if direction < 0 and lr > np.log(0.5):
                break
            eps = eps * 2.0 ** direction
        return eps

    def step(self, target: TargetDensity, q, rng) -> StepResult:
        q = np.asarray(q, dtype=float)
        if self.adapting and not self.initialised:
            self.step_size = self._find_initial_step(target, q, rng)
            self.da.restart(self.step_size)
            self.initialised = True

        n_steps = self.cfg.n_leapfrog
        if self.cfg.jitter > 0:
            n_steps = max(1, int(round(n_steps * rng.uniform(1 - self.cfg.jitter,
                                                             1 + self.cfg.jitter))))
        inv_mass = 1.0 / self.mass
        p0 = rng.standard_normal(self.dimension) * np.sqrt(self.mass)
        logp0, grad0 = target.value_and_grad(q)
        h0 = hamiltonian(logp0, p0, inv_mass)
        q1, p1, logp1, _, diverged = _integrate(target, q, p0, self.step_size,
                                                n_steps, inv_mass, grad0)
        if diverged:
            energy_error = np.inf
        else:
            energy_error = hamiltonian(logp1, p1, inv_mass) - h0
        divergent = diverged or not np.isfinite(energy_error) or abs(energy_error) > DIVERGENCE_THRESHOLD
        accept_prob = 0.0 if divergent else float(min(1.0, np.exp(-energy_error)))
        u = rng.random()
        accepted = (not divergent) and u < accept_prob
        q_next = q1 if accepted else q
        logp_next = logp1 if accepted else logp0

        if self.adapting:
            self._adapt(q_next, accept_prob)
        self.iteration += 1
        if self.cfg.adapt and self.iteration == self.warmup:
            self.step_size = self.da.final_step
        return StepResult(q_next, accepted, float(energy_error), accept_prob,
                          bool(divergent), float(logp_next))

    def _adapt(self, q, accept_prob):
        self.step_size = self.da.update(accept_prob)
        lo, hi = self.window
        if not self.cfg.adapt_mass or hi - lo < 20:
            return
        if lo <= self.iteration < hi:
            self._w_n += 1
            delta = q - self._w_mean
            self._w_mean += delta / self._w_n
            self._w_m2 += delta * (q - self._w_mean)
        if self.iteration == hi - 1:
            n = self._w_n
            var = self._w_m2 / max(n - 1, 1)
            var = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            self.mass = 1.0 / var
            self.da.restart(self.step_size)

    def state_dict(self) -> dict:
        return {
            "step_size": self.step_size,
            "mass": self.mass.tolist(),
            "iteration": self.iteration,
            "initialised": self.initialised,
            "da": [self.da.mu, self.da.log_step, self.da.log_step_bar,
                   self.da.h_bar, self.da.t],
            "window": [self._w_n, self._w_mean.tolist(), self._w_m2.tolist()],
        }

    def load_state_dict(self, state: dict):
        self.step_size = float(state["step_size"])
        self.mass = np.asarray(state["mass"], dtype=float)
        self.iteration = int(state["iteration"])
        self.initialised = bool(state["initialised"])
        mu, ls, lsb, hb, t = state["da"]
        self.da.mu, self.da.log_step, self.da.log_step_bar = float(mu), float(ls), float(lsb)
        self.da.h_bar, self.da.t = float(hb), int(t)
        n, mean, m2 = state["window"]
        self._w_n = int(n)
        self._w_mean = np.asarray(mean, dtype=float)
        self._w_m2 = np.asarray(m2, dtype=float)


def hmc_step(target: TargetDensity, q, cfg: HmcConfig, rng):
    """Single non-adaptive HMC transition.

    Returns ``(q_next, accepted, energy_error)``.
    """
    sampler = HmcSampler(HmcConfig(**{**cfg.__dict__, "adapt": False}),
                         len(np.atleast_1d(q)))
    res = sampler.step(target, np.atleast_1d(q), rng)
    return res.q, res.accepted, res.energy_error


def finite_difference_gradient(f, q, h=1e-5):
    q = np.asarray(q, dtype=float)
    g = np.empty_like(q)
    for i in range(q.size):
        step = h * max(1.0, abs(q[i]))
        e = np.zeros_like(q)
        e[i] = step
        g[i] = (f(q + e) - f(q - e)) / (2 * step)
    return g


def gradient_relative_error(target: TargetDensity, q, h=1e-5) -> float:
    """Sup-norm relative discrepancy between analytic and central-difference gradients."""
    g = target.grad_log_density(q)
    fd = finite_difference_gradient(target.log_density, q, h)
    return float(np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-8))


def check_gradient(target: TargetDensity, points, rtol=1e-5, h=1e-5):
    """Raise ``AssertionError`` if any point fails the finite-difference check."""
    worst = 0.0
    for q in points:
        worst = max(worst, gradient_relative_error(target, q, h))
    if not worst < rtol:
        raise AssertionError(f"gradient check failed: relative error {worst:.3e} >= {rtol}")
    return worst
