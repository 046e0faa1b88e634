"""On-disk formats for datasets, chain traces, checkpoints and metric tables.

Numbers are written locale-independently with enough digits to round-trip
exactly: ``.17g`` in delimited tables and Python's shortest round-trip repr
inside JSON documents.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os

import numpy as np

from .domain import (BlockMap, CovariateMatrix, Dataset, Grid, block_map_from_labels,
                     build_regular_grid)
from .trace import ChainTrace

GRID_FILE = "grid.json"
COVARIATES_FILE = "covariates.csv"
COUNTS_FILE = "counts.csv"
BLOCKS_FILE = "blocks.csv"
TRUTH_FILE = "truth.json"


def fmt(x) -> str:
    return format(float(x), ".17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(obj), fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_table(path, header, rows):
    """Comma-separated table; floats written with 17 significant digits."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_table(path):
    """Return ``(header, rows)`` with numeric cells parsed as int or float."""
    with open(path, encoding="utf-8", newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [[_parse(v) for v in row] for row in r]
    return header, rows


def _parse(v: str):
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


# datasets ------------------------------------------------------------------------
def dataset_hash(d: Dataset) -> str:
    h = hashlib.sha256()
    for arr in (np.asarray(d.X, dtype=np.float64), np.asarray(d.y, dtype=np.int64),
                np.asarray(d.blocks.block_of_cell, dtype=np.int64),
                np.asarray(d.grid.centroids, dtype=np.float64)):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:16]


def write_dataset(d: Dataset, directory):
    os.makedirs(directory, exist_ok=True)
    g = d.grid
    desc = {"n_cells": g.n_cells, "cell_size": g.cell_size, "origin": list(g.origin),
            "shape": list(g.shape) if g.is_regular else None,
            "n_blocks": d.blocks.n_blocks,
            "covariates": {"names": list(d.covariates.column_names),
                           "intercept": d.covariates.intercept,
                           "standardized": bool(d.covariates.standardized)}}
    if not g.is_regular:
        desc["centroids"] = g.centroids.tolist()
    write_json(os.path.join(directory, GRID_FILE), desc)
    N = g.n_cells
    write_table(os.path.join(directory, COVARIATES_FILE), ["cell", *d.covariates.column_names],
                ([n, *map(float, d.X[n])] for n in range(N)))
    write_table(os.path.join(directory, COUNTS_FILE), ["cell", "count"],
                ((n, int(c)) for n, c in enumerate(d.y)))
    write_table(os.path.join(directory, BLOCKS_FILE), ["cell", "block"],
                ((n, int(b)) for n, b in enumerate(d.blocks.block_of_cell)))


def _cell_column(rows, path, N):
    cells = [r[0] for r in rows]
    if cells != list(range(N)):
        raise ValueError(f"{path}: cells must be listed as 0..{N - 1} in order")


def read_dataset(directory, counts_file=COUNTS_FILE) -> Dataset:
    desc = read_json(os.path.join(directory, GRID_FILE))
    N = int(desc["n_cells"])
    origin = tuple(float(v) for v in desc.get("origin", (0.0, 0.0)))
    if desc.get("shape"):
        rows_, cols_ = desc["shape"]
        grid = build_regular_grid(int(rows_), int(cols_), float(desc["cell_size"]), origin)
    else:
        grid = Grid(np.asarray(desc["centroids"], dtype=float), float(desc["cell_size"]),
                    None, origin)
    path = os.path.join(directory, COVARIATES_FILE)
    header, rows = read_table(path)
    _cell_column(rows, path, N)
    X = np.array([[float(v) for v in r[1:]] for r in rows], dtype=float).reshape(N, -1)
    cmeta = desc.get("covariates", {})
    cov = CovariateMatrix(X=X, column_names=tuple(header[1:]),
                          intercept=cmeta.get("intercept"),
                          standardized=bool(cmeta.get("standardized", False)))
    path = os.path.join(directory, counts_file)
    _, rows = read_table(path)
    _cell_column(rows, path, N)
    y = np.array([r[1] for r in rows], dtype=np.int64)
    path = os.path.join(directory, BLOCKS_FILE)
    if os.path.exists(path):
        _, rows = read_table(path)
        _cell_column(rows, path, N)
        labels = np.array([r[1] for r in rows], dtype=np.int64)
        blocks = block_map_from_labels(grid, labels)
        n_blocks = int(desc.get("n_blocks", blocks.n_blocks))
        if n_blocks != blocks.n_blocks:
            blocks = BlockMap(labels, n_blocks, blocks.block_centroids)
    else:
        blocks = block_map_from_labels(grid, np.zeros(N, dtype=np.int64))
    return Dataset(grid=grid, blocks=blocks, covariates=cov, counts=y,
                   meta={"source": str(directory)})


# traces -----------------------------------------------------------------------------
def rle_encode(z) -> list:
    z = np.asarray(z, dtype=np.int64)
    if z.size == 0:
        return []
    change = np.flatnonzero(np.diff(z)) + 1
    starts = np.concatenate([[0], change])
    lengths = np.diff(np.concatenate([starts, [z.size]]))
    return [[int(z[s]), int(n)] for s, n in zip(starts, lengths)]


def rle_decode(runs) -> np.ndarray:
    if not runs:
        return np.zeros(0, dtype=np.int64)
    vals, lens = zip(*runs)
    return np.repeat(np.asarray(vals, dtype=np.int64), np.asarray(lens, dtype=np.int64))


def _dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))


def trace_record(rec: dict) -> str:
    """One JSON line for a sampler record."""
    out = {"iteration": int(rec["iteration"]), "log_density": float(rec["log_density"]),
           "loglik": float(rec["loglik"]), "beta": np.asarray(rec["beta"]).ravel(),
           "accept": {k: bool(v) for k, v in rec["accept"].items()}}
    if rec.get("z") is not None:
        out["z"] = rle_encode(rec["z"])
    for key in ("F", "log_theta", "f"):
        if rec.get(key) is not None:
            out[key] = np.asarray(rec[key]).ravel()
    return _dumps(out)


class TraceWriter:
    """Append-only JSONL trace: one header line, then one line per sample."""

    def __init__(self, path, header: dict, keep_lines=()):
        self.path = path
        self.fh = open(path, "w", encoding="utf-8", newline="\n")
        self.fh.write(_dumps({"header": header}) + "\n")
        for line in keep_lines:
            self.fh.write(line + "\n")
        self.fh.flush()

    def __call__(self, rec: dict):
        self.fh.write(trace_record(rec) + "\n")
        self.fh.flush()

    def close(self):
        self.fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_trace_lines(path):
    """Header dict and raw record lines; a truncated final line is dropped."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    header = json.loads(lines[0])["header"]
    records = []
    for line in lines[1:]:
        if not line:
            continue
        try:
            json.loads(line)
        except json.JSONDecodeError:
            break
        records.append(line)
    return header, records


def read_trace(path) -> ChainTrace:
    header, lines = read_trace_lines(path)
    recs = [json.loads(line) for line in lines]
    K, J = int(header["K"]), int(header["J"])
    S = len(recs)

    def stack(key, shape, dtype=float):
        if not recs or key not in recs[0]:
            return None
        return np.asarray([r[key] for r in recs], dtype=dtype).reshape((S, *shape))

    z = None
    if recs and "z" in recs[0]:
        z = np.stack([rle_decode(r["z"]) for r in recs])
    elif header["model"] == "samglm":
        z = np.zeros((0, int(header["N"])), dtype=np.int64)
    accept_keys = header.get("hmc_steps", [])
    theta_shape = tuple(header["log_theta_shape"]) if header.get("log_theta_shape") else (-1,)
    return ChainTrace(
        model=header["model"],
        iteration=np.asarray([r["iteration"] for r in recs], dtype=np.int64),
        log_density=np.asarray([r["log_density"] for r in recs], dtype=float),
        loglik=np.asarray([r["loglik"] for r in recs], dtype=float),
        beta=stack("beta", (K, J)) if recs else np.zeros((0, K, J)),
        z=z,
        F=stack("F", (int(header["B"]), K)),
        log_theta=stack("log_theta", theta_shape),
        f=stack("f", (int(header["N"]),)),
        accept={k: np.asarray([r["accept"][k] for r in recs], dtype=bool) for k in accept_keys},
        header=header)


# checkpoints -------------------------------------------------------------------------
def write_checkpoint(path, ckpt: dict):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dumps(ckpt))
        fh.write("\n")
    os.replace(tmp, path)


def read_checkpoint(path) -> dict:
    return read_json(path)
