"""Posterior sample containers shared by the SAM-GLM and LGCP samplers."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass
class ChainTrace:
    """Retained post-warm-up samples of one chain.

    ``beta`` always has shape ``(S, K, J)``; the LGCP stores its single
    coefficient vector as ``K = 1``. ``z`` is ``(S, N)`` for mixtures and
    ``None`` for the LGCP, whose latent field lives in ``f`` instead.
    """

    model: str
    iteration: np.ndarray
    log_density: np.ndarray
    loglik: np.ndarray
    beta: np.ndarray
    z: Optional[np.ndarray] = None
    F: Optional[np.ndarray] = None
    log_theta: Optional[np.ndarray] = None
    f: Optional[np.ndarray] = None
    accept: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)
    header: dict = field(default_factory=dict)

    def __len__(self):
        return int(len(self.iteration))

    @property
    def n_components(self) -> int:
        return int(self.beta.shape[1])

    def linear_predictor(self, X, s: int) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.z is not None:
            z = self.z[s]
            eta = np.einsum("nj,nj->n", X, self.beta[s][z])
        else:
            eta = X @ self.beta[s, 0]
        if self.f is not None:
            eta = eta + self.f[s]
        return eta

    def intensities(self, X) -> np.ndarray:
        """Per-sample cell intensities, shape ``(S, N)``."""
        return np.exp(np.stack([self.linear_predictor(X, s) for s in range(len(self))]))

    def allocations(self) -> np.ndarray:
        """``(S, N)`` component labels; all zeros for single-component models."""
        if self.z is not None:
            return self.z
        return np.zeros((len(self), len(self.f[0]) if self.f is not None else 0), dtype=np.int64)

    def select(self, idx) -> "ChainTrace":
        def take(a):
            return None if a is None else a[idx]
        return ChainTrace(self.model, self.iteration[idx], self.log_density[idx],
                          self.loglik[idx], self.beta[idx], take(self.z), take(self.F),
                          take(self.log_theta), take(self.f),
                          {k: v[idx] for k, v in self.accept.items()},
                          dict(self.stats), dict(self.header))


def concatenate(traces) -> ChainTrace:
    """Join traces of the same chain (e.g. an original run and its resumption)."""
    first = traces[0]

    def cat(name):
        parts = [getattr(t, name) for t in traces]
        return None if parts[0] is None else np.concatenate(parts)

    accept = {k: np.concatenate([t.accept[k] for t in traces]) for k in first.accept}
    return ChainTrace(first.model, cat("iteration"), cat("log_density"), cat("loglik"),
                      cat("beta"), cat("z"), cat("F"), cat("log_theta"), cat("f"),
                      accept, dict(traces[-1].stats), dict(first.header))
