"""Scoring, model comparison and chain diagnostics."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import gammaln

from .domain import Dataset
from .errors import FitFailureError, UndefinedMetricError
from .trace import ChainTrace


@dataclass(frozen=True)
class PosteriorSample:
    """Cell intensities implied by one posterior draw."""

    model: str
    intensity: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.intensity, dtype=float)
        if not (np.all(np.isfinite(lam)) and np.all(lam > 0)):
            raise ValueError("intensity must be positive and finite")
        object.__setattr__(self, "intensity", lam)


@dataclass
class MetricReport:
    name: str
    values: np.ndarray
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    @property
    def n_samples(self) -> int:
        return int(self.values.size)

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def sd(self) -> float:
        return float(self.values.std(ddof=1)) if self.values.size > 1 else 0.0

    def as_dict(self):
        return {"metric": self.name, "mean": self.mean, "sd": self.sd,
                "n_samples": self.n_samples, **self.config}


def posterior_samples(trace: ChainTrace, X) -> list:
    return [PosteriorSample(trace.model, lam) for lam in trace.intensities(X)]


def _lam(sample):
    return sample.intensity if isinstance(sample, PosteriorSample) else np.asarray(sample, float)


# predictive scores ---------------------------------------------------------------
def held_out_loglik(sample, y_tilde) -> float:
    """Mean pointwise Poisson log-pmf of ``y_tilde`` under the sample's intensity."""
    lam = _lam(sample)
    y = np.asarray(y_tilde, dtype=float)
    if lam.shape != y.shape:
        raise ValueError("intensity and counts differ in length")
    return float(np.mean(y * np.log(lam) - lam - gammaln(y + 1.0)))


def rmse(sample, y_tilde, rng) -> float:
    """RMSE of one Poisson replicate drawn from the sample against ``y_tilde``."""
    lam = _lam(sample)
    y = np.asarray(y_tilde, dtype=float)
    if lam.shape != y.shape:
        raise ValueError("intensity and counts differ in length")
    draw = rng.poisson(lam)
    return float(np.sqrt(np.mean((draw - y) ** 2)))


def _flag(predicted, n_flagged):
    pred = np.asarray(predicted, dtype=float)
    N = pred.size
    if not 1 <= n_flagged <= N:
        raise ValueError(f"n_flagged must lie in [1, {N}]")
    # stable sort: ties at the boundary go to the lower cell index
    return np.argsort(-pred, kind="stable")[:n_flagged]


def pai(predicted_intensity, observed, n_flagged) -> float:
    """Share of events captured by the flagged cells over the share of area flagged."""
    obs = np.asarray(observed, dtype=float)
    total = obs.sum()
    if total <= 0:
        raise UndefinedMetricError("PAI is undefined when there are no observed events")
    idx = _flag(predicted_intensity, n_flagged)
    return float((obs[idx].sum() / total) / (n_flagged / obs.size))


def pei(predicted_intensity, observed, n_flagged) -> float:
    """Events captured by the flagged cells over the best achievable capture."""
    obs = np.asarray(observed, dtype=float)
    idx = _flag(predicted_intensity, n_flagged)
    best = np.sort(obs)[::-1][:n_flagged].sum()
    if best <= 0:
        raise UndefinedMetricError("PEI is undefined when the top cells hold no events")
    return float(obs[idx].sum() / best)


def hotspot_curves(predicted_intensity, observed, n_values):
    """Long-format rows ``(n_flagged, pai, pei)`` for a list of hotspot sizes."""
    return [(int(n), pai(predicted_intensity, observed, n), pei(predicted_intensity, observed, n))
            for n in n_values]


def pearson_chi2(expected, observed) -> float:
    e = np.asarray(expected, dtype=float)
    o = np.asarray(observed, dtype=float)
    if np.any(e <= 0):
        raise UndefinedMetricError("expected counts must be positive")
    return float(np.sum((o - e) ** 2 / e))


def welch_ttest(samples_a, samples_b):
    """Two-sided unequal-variance t-test; returns ``(t, p)``."""
    a = np.asarray(samples_a, dtype=float)
    b = np.asarray(samples_b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise UndefinedMetricError("each sample needs at least two values")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va <= 0 and vb <= 0:
        raise UndefinedMetricError("both samples have zero variance")
    se2a, se2b = va / a.size, vb / b.size
    se2 = se2a + se2b
    t = (a.mean() - b.mean()) / np.sqrt(se2)
    df = se2**2 / (se2a**2 / (a.size - 1) + se2b**2 / (b.size - 1))
    p = 2.0 * stats.t.sf(abs(t), df)
    return float(t), float(p)


# interpretation -----------------------------------------------------------------
@dataclass
class CovEffect:
    covariate: str
    mean: float
    sd: float
    sign: str
    n_used: int
    n_skipped: int

    def as_dict(self):
        return dict(self.__dict__)


def cov_effect(trace: ChainTrace, dataset: Dataset, k: int, j: int) -> CovEffect:
    """Residual-ratio importance of covariate ``j`` within component ``k``.

    For an LGCP trace pass ``j = J`` to score the latent field, which enters
    every cell with coefficient one.
    """
    X = np.asarray(dataset.X, dtype=float)
    y = np.asarray(dataset.y, dtype=float)
    N, J = X.shape
    is_field = trace.f is not None and j == J
    if not (0 <= j < J or is_field):
        raise IndexError(f"covariate index {j} out of range")
    z_all = trace.allocations()
    values = []
    signed = []
    col_means = []
    for s in range(len(trace)):
        cells = z_all[s] == k
        if not cells.any():
            continue
        b = trace.beta[s, k]
        eta = X[cells] @ b
        extra = trace.f[s][cells] if trace.f is not None else 0.0
        if is_field:
            contrib = extra
            coef = 1.0
            cov_col = extra
        else:
            contrib = X[cells, j] * b[j]
            coef = b[j]
            cov_col = X[cells, j]
        full = np.exp(eta + extra)
        reduced = np.exp(eta + extra - contrib)
        ssr_full = np.sum((y[cells] - full) ** 2)
        ssr_red = np.sum((y[cells] - reduced) ** 2)
        if ssr_red == 0:
            values.append(0.0)
        else:
            values.append(1.0 - ssr_full / ssr_red)
        signed.append(coef)
        col_means.append(cov_col.mean())
    if not values:
        raise UndefinedMetricError(f"component {k} is empty in every sample")
    values = np.asarray(values)
    beta_mean = float(np.mean(signed))
    x_mean = float(np.mean(col_means))
    s = np.sign(beta_mean) if x_mean > 0 else -np.sign(beta_mean)
    name = "latent_field" if is_field else dataset.covariates.column_names[j]
    return CovEffect(name, float(values.mean()),
                     float(values.std(ddof=1)) if values.size > 1 else 0.0,
                     {1.0: "+", -1.0: "-"}.get(float(s), "0"),
                     int(values.size), int(len(trace) - values.size))


def cov_effect_table(trace: ChainTrace, dataset: Dataset, k: int = 0):
    J = dataset.covariates.n_covariates
    icpt = dataset.covariates.intercept
    js = [j for j in range(J) if j != icpt]
    if trace.f is not None:
        js.append(J)
    return [cov_effect(trace, dataset, k, j) for j in js]


# dispersion -----------------------------------------------------------------
def fit_poisson_glm(X, y, tol=1e-8, max_iter=100):
    """Maximum-likelihood Poisson regression by IRLS; returns ``(beta, mu)``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    mu = y + 0.5
    eta = np.log(mu)
    beta = np.linalg.lstsq(X, eta, rcond=None)[0]
    dev_old = np.inf
    for _ in range(max_iter):
        eta = X @ beta
        mu = np.exp(eta)
        zwork = eta + (y - mu) / mu
        sw = np.sqrt(mu)
        beta = np.linalg.lstsq(X * sw[:, None], zwork * sw, rcond=None)[0]
        mu = np.exp(X @ beta)
        with np.errstate(divide="ignore", invalid="ignore"):
            term = np.where(y > 0, y * np.log(y / mu), 0.0)
        dev = 2.0 * np.sum(term - (y - mu))
        if not np.isfinite(dev):
            raise FitFailureError("Poisson GLM diverged")
        if abs(dev - dev_old) <= tol * (abs(dev) + 0.1):
            return beta, mu
        dev_old = dev
    raise FitFailureError(f"Poisson GLM did not converge in {max_iter} iterations")


@dataclass(frozen=True)
class OverdispersionResult:
    c_hat: float
    statistic: float
    p_value: float


def overdispersion_test(dataset_or_X, y=None) -> OverdispersionResult:
    """Score-type test of Var(y) = mu against Var(y) = mu + c."""
    if isinstance(dataset_or_X, Dataset):
        X, y = dataset_or_X.X, dataset_or_X.y
    else:
        X = dataset_or_X
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    N, J = X.shape
    if N < J + 1:
        raise ValueError("need more cells than covariates")
    _, mu = fit_poisson_glm(X, y)
    z = (y - mu) ** 2 - y
    sd = z.std(ddof=1)
    if sd == 0:
        raise UndefinedMetricError("zero spread in the dispersion residuals")
    stat = np.sqrt(N) * z.mean() / sd
    return OverdispersionResult(float(z.mean()), float(stat), float(stats.norm.sf(stat)))


# chain diagnostics ---------------------------------------------------------------
def autocorrelation(x, max_lag=None) -> np.ndarray:
    """Sample autocorrelation at lags ``0..max_lag`` via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    max_lag = n - 1 if max_lag is None else min(max_lag, n - 1)
    d = x - x.mean()
    var = d @ d
    if var == 0:
        out = np.full(max_lag + 1, np.nan)
        out[0] = 1.0
        return out
    m = 1 << int(np.ceil(np.log2(2 * n)))
    fx = np.fft.rfft(d, m)
    ac = np.fft.irfft(fx * np.conj(fx), m)[:max_lag + 1]
    return ac / var


def effective_sample_size(x) -> float:
    """Geyer initial-positive-sequence ESS. ``nan`` for constant traces."""
    x = np.asarray(x, dtype=float)
    n = x.size
    rho = autocorrelation(x)
    if np.isnan(rho[1:]).all() and n > 1:
        return float("nan")
    tau = -1.0
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        tau += 2.0 * pair
    return float(n / max(tau, 1.0 / n))


def trace_diagnostics(trace: ChainTrace, max_lag=20) -> dict:
    """Log-likelihood table, ESS per parameter, acceptance and autocorrelation."""
    if len(trace) < 10:
        raise ValueError("need at least 10 retained samples")
    params = {}
    S, K, J = trace.beta.shape
    for k in range(K):
        for j in range(J):
            params[f"beta[{k},{j}]"] = trace.beta[:, k, j]
    if trace.log_theta is not None:
        lt = trace.log_theta.reshape(S, -1)
        for i in range(lt.shape[1]):
            params[f"log_theta[{i}]"] = lt[:, i]
    params["log_density"] = trace.log_density
    params["loglik"] = trace.loglik
    ess = {}
    degenerate = []
    for name, v in params.items():
        e = effective_sample_size(v)
        ess[name] = e
        if np.isnan(e):
            degenerate.append(name)
    if degenerate:
        warnings.warn(f"constant trace, ESS undefined for: {', '.join(degenerate)}",
                      RuntimeWarning, stacklevel=2)
    acf = autocorrelation(trace.loglik, max_lag)
    acceptance = {k: float(np.mean(v)) for k, v in trace.accept.items() if len(v)}
    divergences = {k: v.get("divergences") for k, v in trace.stats.items()
                   if isinstance(v, dict) and "divergences" in v}
    return {
        "n_samples": len(trace),
        "loglik_table": [(int(i), float(l)) for i, l in zip(trace.iteration, trace.loglik)],
        "ess": ess,
        "degenerate": degenerate,
        "acceptance": acceptance,
        "divergences": divergences,
        "loglik_autocorrelation": [float(a) for a in acf],
    }


def metric_reports(trace: ChainTrace, test: Dataset, rng, metrics=("loglik", "rmse")):
    """Per-sample metrics of a trace on held-out counts."""
    samples = posterior_samples(trace, test.X)
    out = {}
    if "loglik" in metrics:
        out["loglik"] = MetricReport("held_out_loglik", [held_out_loglik(s, test.y) for s in samples])
    if "rmse" in metrics:
        out["rmse"] = MetricReport("rmse", [rmse(s, test.y, rng) for s in samples])
    return out
