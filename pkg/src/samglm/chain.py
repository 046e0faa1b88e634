"""Iteration loop, bookkeeping and checkpointing common to all samplers."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import SamplingError
from .hmc import HmcConfig
from .trace import ChainTrace


@dataclass
class McmcConfig:
    iterations: int = 2000
    warmup: int = 1000
    thin: int = 1
    init: str = "kmeans-counts"
    hmc_beta: HmcConfig = field(default_factory=HmcConfig)
    hmc_gp: HmcConfig = field(default_factory=HmcConfig)
    max_warmup_divergence: float = 0.5

    def __post_init__(self):
        if not self.iterations > self.warmup >= 0:
            raise ValueError("need iterations > warmup >= 0")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")

    @property
    def n_retained(self) -> int:
        return len(range(self.warmup, self.iterations, self.thin))


class BaseChain:
    """One Markov chain. Subclasses implement :meth:`_iterate` and :meth:`_record`.

    The random stream, sampler adaptation state and model state are all part
    of :meth:`checkpoint`, so a restored chain continues exactly as an
    uninterrupted one would.
    """

    model = "base"
    hmc_steps: tuple = ()

    def __init__(self, mcmc: McmcConfig, rng: np.random.Generator):
        self.mcmc = mcmc
        self.rng = rng
        self.iteration = 0
        self.counters = {name: {"accepted": 0, "divergent": 0, "n": 0,
                                "warmup_divergent": 0, "warmup_accept_prob": 0.0,
                                "warmup_n": 0}
                         for name in self.hmc_steps}
        self.timings = {}

    def _iterate(self) -> dict:
        raise NotImplementedError

    def _record(self) -> dict:
        raise NotImplementedError

    def _tally(self, name, res):
        c = self.counters[name]
        if self.iteration < self.mcmc.warmup:
            c["warmup_divergent"] += int(res.divergent)
            c["warmup_accept_prob"] += res.accept_prob
            c["warmup_n"] += 1
        else:
            c["accepted"] += int(res.accepted)
            c["divergent"] += int(res.divergent)
            c["n"] += 1

    def _timed(self, name, fn, *args):
        t0 = time.perf_counter()
        out = fn(*args)
        self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0
        return out

    def run(self, until: int = None, callback=None) -> ChainTrace:
        """Advance the chain to iteration ``until`` (default: the configured total)."""
        until = self.mcmc.iterations if until is None else min(until, self.mcmc.iterations)
        records = []
        while self.iteration < until:
            accepted = self._iterate()
            it = self.iteration
            self.iteration += 1
            if it == self.mcmc.warmup - 1:
                self._check_warmup()
            if it >= self.mcmc.warmup and (it - self.mcmc.warmup) % self.mcmc.thin == 0:
                rec = self._record()
                rec["iteration"] = it
                rec["accept"] = accepted
                records.append(rec)
                if callback is not None:
                    callback(rec)
        return self.build_trace(records)

    def _check_warmup(self):
        limit = self.mcmc.max_warmup_divergence * self.mcmc.warmup
        for name, c in self.counters.items():
            if c["warmup_divergent"] > limit:
                raise SamplingError(
                    f"{name}: {c['warmup_divergent']} of {self.mcmc.warmup} warm-up "
                    f"transitions diverged; reduce the initial step size or increase "
                    f"warm-up (adapted step size {self.samplers[name].step_size:.3g})")

    def summary(self) -> dict:
        out = {}
        for name, c in self.counters.items():
            s = self.samplers[name]
            out[name] = {
                "acceptance_rate": c["accepted"] / c["n"] if c["n"] else None,
                "divergences": c["divergent"],
                "warmup_divergences": c["warmup_divergent"],
                "warmup_mean_accept_prob": (c["warmup_accept_prob"] / c["warmup_n"]
                                            if c["warmup_n"] else None),
                "step_size": s.step_size,
            }
        return out

    def build_trace(self, records) -> ChainTrace:
        raise NotImplementedError

    def _stack(self, records, key, dtype=float):
        if not records or records[0].get(key) is None:
            return None
        return np.asarray([r[key] for r in records], dtype=dtype)

    def _base_trace(self, records, **extra) -> ChainTrace:
        accept = {name: np.asarray([r["accept"][name] for r in records], dtype=bool)
                  for name in self.hmc_steps}
        return ChainTrace(
            model=self.model,
            iteration=np.asarray([r["iteration"] for r in records], dtype=np.int64),
            log_density=self._stack(records, "log_density") if records else np.zeros(0),
            loglik=self._stack(records, "loglik") if records else np.zeros(0),
            accept=accept, stats=self.summary(), **extra)

    # checkpointing -------------------------------------------------------
    def checkpoint(self) -> dict:
        return {
            "model": self.model,
            "iteration": self.iteration,
            "rng": self.rng.bit_generator.state,
            "counters": self.counters,
            "samplers": {k: s.state_dict() for k, s in self.samplers.items()},
            "state": self._state_dict(),
        }

    def restore(self, ckpt: dict):
        if ckpt["model"] != self.model:
            raise ValueError(f"checkpoint is for model {ckpt['model']!r}, not {self.model!r}")
        self.iteration = int(ckpt["iteration"])
        self.rng.bit_generator.state = ckpt["rng"]
        self.counters = {k: dict(v) for k, v in ckpt["counters"].items()}
        for k, s in ckpt["samplers"].items():
            self.samplers[k].load_state_dict(s)
        self._load_state_dict(ckpt["state"])
        return self

    def _state_dict(self) -> dict:
        raise NotImplementedError

    def _load_state_dict(self, state: dict):
        raise NotImplementedError
