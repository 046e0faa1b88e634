"""Normal / inverse-gamma shrinkage prior with the scale integrated out.

With beta_j ~ N(0, s_j) and s_j ~ InvGamma(a, b), the marginal density of each
coefficient is proportional to (beta_j**2 / 2 + b) ** -(a + 1/2). The additive
normalising constant ``log(b**a Gamma(a + 1/2) / (sqrt(2 pi) Gamma(a)))`` per
coefficient is omitted from :func:`log_density`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ShrinkagePrior:
    a: float = 1.0
    b: float = 0.01

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"shrinkage prior needs a > 0 and b > 0, got a={self.a}, b={self.b}")


def log_density(prior: ShrinkagePrior, beta, mask=None) -> float:
    """Unnormalised log prior, summed over entries where ``mask`` is true.

    Entries excluded by ``mask`` (intercepts) carry a flat prior and
    contribute exactly zero.
    """
    beta = np.asarray(beta, dtype=float)
    terms = -(0.5 + prior.a) * np.log(0.5 * beta**2 + prior.b)
    if mask is not None:
        terms = np.where(np.broadcast_to(mask, beta.shape), terms, 0.0)
    return float(terms.sum())


def grad_log_density(prior: ShrinkagePrior, beta, mask=None) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    g = (-0.5 - prior.a) * beta / (0.5 * beta**2 + prior.b)
    if mask is not None:
        g = np.where(np.broadcast_to(mask, beta.shape), g, 0.0)
    return g


def log_normaliser(prior: ShrinkagePrior) -> float:
    """Per-coefficient log normalising constant dropped by :func:`log_density`."""
    from scipy.special import gammaln
    a, b = prior.a, prior.b
    return float(a * np.log(b) + gammaln(a + 0.5) - 0.5 * np.log(2 * np.pi) - gammaln(a))


def intercept_prior_contribution(beta_intercept):
    """Flat (improper) intercept prior: zero log-density and zero gradient."""
    return 0.0, np.zeros_like(np.asarray(beta_intercept, dtype=float))
