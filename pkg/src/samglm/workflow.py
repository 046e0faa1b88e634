"""File-level operations behind the command-line interface.

Each function reads inputs from disk, runs the library code and writes its
outputs; none of them print. Wall-clock timings go to ``timing.json`` so
that every other artifact is byte-reproducible for a fixed seed and config.
"""
from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import evaluation as ev
from . import io
from .config import RunConfig, SimulateSection, simulation_spec
from .domain import Dataset, build_regular_grid, rectangular_blocks, subset_columns, validate_dataset
from .errors import DatasetValidationError
from .kernels import Matern32Kernel, ProductKernel
from .lgcp import LgcpChain
from .mixture import SamGlmChain, apply_alignment, label_alignment
from .simulate import resample_counts, simulate_lgcp, simulate_samglm

REPORT_FILE = "report.json"
TIMING_FILE = "timing.json"


def trace_path(out_dir, chain):
    return os.path.join(out_dir, f"chain{chain}.jsonl")


def checkpoint_path(out_dir, chain):
    return os.path.join(out_dir, f"chain{chain}.ckpt.json")


# simulate -----------------------------------------------------------------------------
def simulate(sim: SimulateSection, out_dir):
    """Write ``train/`` (and ``test/`` with fresh counts) plus ``truth.json``."""
    if sim.model == "samglm":
        data, truth = simulate_samglm(simulation_spec(sim))
        truth_doc = {"model": "samglm", "beta": truth.beta, "z": truth.z,
                     "F": truth.F, "pi": data.meta["pi"], "intensity": data.meta["intensity"]}
    else:
        grid = build_regular_grid(sim.rows, sim.cols, sim.cell_size)
        ls = sim.field_lengthscale if sim.field_lengthscale is not None else 3.0 * sim.cell_size
        kern = ProductKernel(sim.field_variance, Matern32Kernel(ls), Matern32Kernel(ls))
        blocks = rectangular_blocks(grid, sim.block_rows, sim.block_cols)
        data, f = simulate_lgcp(grid, sim.beta, kern, sim.seed, blocks, sim.n_count, sim.count_rate)
        truth_doc = {"model": "lgcp", "beta": np.asarray(sim.beta, dtype=float), "f": f,
                     "variance": sim.field_variance, "lengthscale": ls,
                     "intensity": data.meta["intensity"]}
    problems = validate_dataset(data)
    if problems:
        raise DatasetValidationError("; ".join(problems))
    os.makedirs(out_dir, exist_ok=True)
    io.write_dataset(data, os.path.join(out_dir, "train"))
    if sim.heldout:
        seed = int(np.random.SeedSequence([sim.seed, 1]).generate_state(1)[0])
        test = resample_counts(data, data.meta["intensity"], seed)
        io.write_dataset(test, os.path.join(out_dir, "test"))
    io.write_json(os.path.join(out_dir, io.TRUTH_FILE), truth_doc)
    return data


# fit ----------------------------------------------------------------------------------
def prepare_dataset(cfg: RunConfig, data_dir) -> Dataset:
    """Load and validate the training data against the run configuration."""
    try:
        data = io.read_dataset(data_dir)
    except (OSError, ValueError, KeyError) as exc:
        raise DatasetValidationError(f"cannot read dataset in {data_dir}: {exc}") from exc
    if cfg.data.covariates is not None:
        missing = [c for c in cfg.data.covariates if c not in data.covariates.column_names]
        if missing:
            raise DatasetValidationError(
                f"'data.covariates' names columns absent from the dataset: {missing}")
        data = replace(data, covariates=subset_columns(data.covariates, cfg.data.covariates))
    problems = validate_dataset(data)
    if problems:
        raise DatasetValidationError("; ".join(problems))
    if cfg.run.model == "lgcp" and not data.grid.is_regular:
        raise DatasetValidationError("the LGCP needs a regular grid")
    if cfg.run.model == "samglm" and cfg.samglm.K > data.n_cells:
        raise DatasetValidationError(
            f"'samglm.K' = {cfg.samglm.K} exceeds the number of cells {data.n_cells}")
    if data.n_cells <= data.covariates.n_covariates:
        raise DatasetValidationError("need more cells than covariates")
    return data


def make_chain(cfg: RunConfig, data: Dataset, rng):
    mcmc = cfg.mcmc_config()
    if cfg.run.model == "samglm":
        return SamGlmChain(data, cfg.mixture_spec(), mcmc, rng)
    return LgcpChain(data, cfg.lgcp_prior(), mcmc, rng, cfg.lgcp.update, cfg.lgcp.coords)


def chain_header(cfg: RunConfig, data: Dataset, chain, index) -> dict:
    st = chain.state
    K = st.beta.shape[0] if st.beta.ndim == 2 else 1
    lt = getattr(st, "log_theta", None)
    if lt is None:
        lt = getattr(st, "phi", None)
    return {
        "model": cfg.run.model, "config_hash": cfg.hash(), "data_hash": io.dataset_hash(data),
        "chain": index, "N": data.n_cells, "J": data.covariates.n_covariates, "K": K,
        "B": data.blocks.n_blocks, "column_names": list(data.covariates.column_names),
        "hmc_steps": list(chain.hmc_steps),
        "log_theta_shape": None if lt is None else list(np.shape(lt)),
        "iterations": cfg.mcmc.iterations, "warmup": cfg.mcmc.warmup, "thin": cfg.mcmc.thin,
    }


def chain_seeds(seed, n):
    return np.random.SeedSequence(seed).spawn(n)


def _fit_one(cfg: RunConfig, data: Dataset, out_dir, index, seed_seq, resume, stop_after):
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed_seq)
    chain = make_chain(cfg, data, rng)
    header = chain_header(cfg, data, chain, index)
    tpath, cpath = trace_path(out_dir, index), checkpoint_path(out_dir, index)
    keep = []
    if resume and os.path.exists(cpath):
        ckpt = io.read_checkpoint(cpath)
        if ckpt.get("config_hash") != header["config_hash"] or \
                ckpt.get("data_hash") != header["data_hash"]:
            raise DatasetValidationError(
                f"{cpath} was written for a different config or dataset")
        chain.restore(ckpt["chain"])
        if os.path.exists(tpath):
            old_header, lines = io.read_trace_lines(tpath)
            if old_header.get("config_hash") != header["config_hash"]:
                raise DatasetValidationError(f"{tpath} belongs to a different config")
            keep = [ln for ln in lines if json.loads(ln)["iteration"] < chain.iteration]
    target = cfg.mcmc.iterations if stop_after is None else min(stop_after, cfg.mcmc.iterations)
    every = cfg.run.checkpoint_every or cfg.mcmc.iterations

    def save():
        io.write_checkpoint(cpath, {"config_hash": header["config_hash"],
                                    "data_hash": header["data_hash"],
                                    "chain": chain.checkpoint()})

    with io.TraceWriter(tpath, header, keep) as writer:
        while chain.iteration < target:
            nxt = min(target, (chain.iteration // every + 1) * every)
            chain.run(until=nxt, callback=writer)
            save()
    summary = {"chain": index, "iterations_done": chain.iteration,
               "complete": chain.iteration >= cfg.mcmc.iterations,
               "retained": len(range(cfg.mcmc.warmup, chain.iteration, cfg.mcmc.thin)),
               "hmc": chain.summary()}
    timing = {"chain": index, "wall_seconds": time.perf_counter() - t0,
              "steps": chain.step_timings()}
    return summary, timing


def fit(cfg: RunConfig, data_dir, out_dir=None, resume=False, stop_after=None):
    """Run every chain, writing traces, checkpoints and the run report."""
    data = prepare_dataset(cfg, data_dir)
    out_dir = out_dir or cfg.output_dir()
    os.makedirs(out_dir, exist_ok=True)
    seeds = chain_seeds(cfg.run.seed, cfg.run.chains)
    args = [(cfg, data, out_dir, i, seeds[i], resume, stop_after) for i in range(cfg.run.chains)]
    if cfg.run.jobs > 1 and cfg.run.chains > 1:
        with ProcessPoolExecutor(max_workers=cfg.run.jobs) as pool:
            results = list(pool.map(_fit_one, *zip(*args)))
    else:
        results = [_fit_one(*a) for a in args]
    report = {"model": cfg.run.model, "config_hash": cfg.hash(),
              "data_hash": io.dataset_hash(data), "config": cfg.to_dict(),
              "chains": [r[0] for r in results]}
    report["config"]["run"].pop("output_dir")
    io.write_json(os.path.join(out_dir, REPORT_FILE), report)
    io.write_json(os.path.join(out_dir, TIMING_FILE), {"chains": [r[1] for r in results]})
    return report


# post-processing -------------------------------------------------------------------------
def load_traces(paths):
    traces = [io.read_trace(p) for p in paths]
    if not traces:
        raise DatasetValidationError("no trace files given")
    h0 = traces[0].header
    for t in traces[1:]:
        if t.header["config_hash"] != h0["config_hash"] or t.header["data_hash"] != h0["data_hash"]:
            raise DatasetValidationError("traces come from different configs or datasets")
    return traces


def check_compatible(trace, data: Dataset, strict: bool):
    h = trace.header
    if h["N"] != data.n_cells or list(h["column_names"]) != list(data.covariates.column_names):
        raise DatasetValidationError(
            "trace and dataset disagree on the number of cells or covariate columns")
    if strict and h["data_hash"] != io.dataset_hash(data):
        raise DatasetValidationError("trace was fitted to a different training dataset")


def _read_for(trace, data_dir, columns):
    data = io.read_dataset(data_dir)
    if list(columns) != list(data.covariates.column_names):
        missing = [c for c in columns if c not in data.covariates.column_names]
        if missing:
            raise DatasetValidationError(f"dataset lacks covariates {missing}")
        data = replace(data, covariates=subset_columns(data.covariates, columns))
    return data


def predict(trace_paths, data_dir, out_dir):
    """Posterior mean and s.d. of every cell's intensity."""
    traces = load_traces(trace_paths)
    data = _read_for(traces[0], data_dir, traces[0].header["column_names"])
    for t in traces:
        check_compatible(t, data, strict=False)
    lam = np.concatenate([t.intensities(data.X) for t in traces])
    mean, sd = lam.mean(axis=0), lam.std(axis=0)
    os.makedirs(out_dir, exist_ok=True)
    io.write_table(os.path.join(out_dir, "predict.csv"), ["cell", "mean", "sd"],
                   ((n, float(mean[n]), float(sd[n])) for n in range(data.n_cells)))
    return mean, sd


def aligned(trace):
    """Trace with mixture labels matched to the first retained sample."""
    if trace.z is None or trace.n_components == 1 or len(trace) == 0:
        return trace
    perms = label_alignment(trace.beta)
    beta, z = apply_alignment(trace.beta, trace.z, perms)
    out = trace.select(slice(None))
    out.beta, out.z = beta, z
    return out


def evaluate(trace_paths, train_dir, test_dir, out_dir, metrics=None, n_flagged=(10, 25, 50, 100),
             seed=0):
    """Per-sample and summary metrics, hotspot curves and CovEffect tables."""
    metrics = list(metrics or ["loglik", "rmse", "hotspots", "cov_effect"])
    traces = load_traces(trace_paths)
    cols = traces[0].header["column_names"]
    train = _read_for(traces[0], train_dir, cols)
    test = _read_for(traces[0], test_dir, cols)
    for t in traces:
        check_compatible(t, train, strict=True)
        check_compatible(t, test, strict=False)
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    summary = {"model": traces[0].model, "config_hash": traces[0].header["config_hash"],
               "n_samples": int(sum(len(t) for t in traces)), "metrics": {}}

    rows = []
    per_metric = {"held_out_loglik": [], "rmse": []}
    in_sample_gap = 0.0
    for t in traces:
        lam_test = t.intensities(test.X)
        lam_train = t.intensities(train.X)
        for s in range(len(t)):
            row = [t.header["chain"], int(t.iteration[s])]
            if "loglik" in metrics:
                v = ev.held_out_loglik(lam_test[s], test.y)
                per_metric["held_out_loglik"].append(v)
                row.append(v)
                own = ev.held_out_loglik(lam_train[s], train.y) * train.n_cells
                in_sample_gap = max(in_sample_gap, abs(own - float(t.loglik[s])))
            if "rmse" in metrics:
                v = ev.rmse(lam_test[s], test.y, rng)
                per_metric["rmse"].append(v)
                row.append(v)
            rows.append(row)
    header = ["chain", "iteration"] + [m for m, k in (("held_out_loglik", "loglik"),
                                                     ("rmse", "rmse")) if k in metrics]
    io.write_table(os.path.join(out_dir, "metrics_samples.csv"), header, rows)
    for name, vals in per_metric.items():
        if vals:
            summary["metrics"][name] = ev.MetricReport(name, vals).as_dict()
    if "loglik" in metrics:
        summary["in_sample_loglik_max_abs_diff"] = in_sample_gap

    if "hotspots" in metrics:
        lam_mean = np.concatenate([t.intensities(test.X) for t in traces]).mean(axis=0)
        ns = [n for n in n_flagged if 1 <= n <= test.n_cells]
        curves = ev.hotspot_curves(lam_mean, test.y, ns) if test.y.sum() > 0 else []
        io.write_table(os.path.join(out_dir, "hotspots.csv"), ["n_flagged", "pai", "pei"], curves)

    if "cov_effect" in metrics:
        rows = []
        t = aligned(traces[0]) if len(traces) == 1 else aligned(_merge(traces))
        for k in range(t.n_components):
            if not (t.allocations() == k).any():
                continue
            for ce in ev.cov_effect_table(t, train, k):
                rows.append([k, ce.covariate, ce.mean, ce.sd, ce.sign, ce.n_used, ce.n_skipped])
        io.write_table(os.path.join(out_dir, "cov_effect.csv"),
                       ["component", "covariate", "mean", "sd", "sign", "n_used", "n_skipped"],
                       rows)
    io.write_json(os.path.join(out_dir, "metrics_summary.json"), summary)
    return summary


def _merge(traces):
    from .trace import concatenate
    return concatenate(traces)


def diagnose(trace_paths, out_dir, max_lag=20):
    """Chain diagnostics per trace file."""
    import warnings

    os.makedirs(out_dir, exist_ok=True)
    reports = []
    for path in trace_paths:
        t = io.read_trace(path)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            d = ev.trace_diagnostics(t, max_lag)
        # acceptance stats live in the fit report next to the trace
        rep = os.path.join(os.path.dirname(os.path.abspath(path)), REPORT_FILE)
        if os.path.exists(rep):
            for c in io.read_json(rep)["chains"]:
                if c["chain"] == t.header["chain"]:
                    d["divergences"] = {k: v["divergences"] for k, v in c["hmc"].items()}
                    d["step_size"] = {k: v["step_size"] for k, v in c["hmc"].items()}
        chain = t.header["chain"]
        io.write_table(os.path.join(out_dir, f"chain{chain}_loglik.csv"),
                       ["iteration", "loglik"], d.pop("loglik_table"))
        io.write_table(os.path.join(out_dir, f"chain{chain}_acf.csv"), ["lag", "acf"],
                       [(i, float(a)) for i, a in enumerate(d["loglik_autocorrelation"])])
        d["chain"] = chain
        d["ess"] = {k: (None if np.isnan(v) else v) for k, v in d["ess"].items()}
        d["loglik_autocorrelation"] = [None if np.isnan(a) else a
                                       for a in d["loglik_autocorrelation"]]
        reports.append(d)
    io.write_json(os.path.join(out_dir, "diagnostics.json"), {"chains": reports})
    return reports
