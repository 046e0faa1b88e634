"""Grid, blocking structure, covariates and counts.

Every other module consumes a :class:`Dataset`. Objects here are treated as
immutable once built; helpers return new instances rather than mutating.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateCovariateError


@dataclass(frozen=True)
class Grid:
    """Square cells with explicit centroids (easting, northing) in metres.

    ``shape`` is ``(rows, cols)`` for regular lattices, stored row-major with
    the row index running along northing and the column index along easting.
    """

    centroids: np.ndarray
    cell_size: float
    shape: Optional[tuple] = None
    origin: tuple = (0.0, 0.0)

    @property
    def n_cells(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def is_regular(self) -> bool:
        return self.shape is not None

    def axis_coordinates(self):
        """Return the (northing, easting) coordinates of rows and columns."""
        if not self.is_regular:
            raise ValueError("axis coordinates require a regular grid")
        rows, cols = self.shape
        s = self.cell_size
        east = self.origin[0] + (np.arange(cols) + 0.5) * s
        north = self.origin[1] + (np.arange(rows) + 0.5) * s
        return north, east

    def extent(self) -> float:
        """Diameter of the bounding box of the cell centroids (plus one cell)."""
        span = self.centroids.max(axis=0) - self.centroids.min(axis=0)
        return float(np.hypot(*span) + self.cell_size)


@dataclass(frozen=True)
class BlockMap:
    block_of_cell: np.ndarray
    n_blocks: int
    block_centroids: np.ndarray

    def cells_per_block(self) -> np.ndarray:
        return np.bincount(self.block_of_cell, minlength=self.n_blocks)


@dataclass(frozen=True)
class CovariateMatrix:
    X: np.ndarray
    column_names: tuple
    intercept: Optional[int] = None
    standardized: bool = False

    @property
    def n_covariates(self) -> int:
        return int(self.X.shape[1])

    def slope_mask(self) -> np.ndarray:
        """Boolean mask of columns that receive the shrinkage prior."""
        mask = np.ones(self.n_covariates, dtype=bool)
        if self.intercept is not None:
            mask[self.intercept] = False
        return mask


@dataclass(frozen=True)
class Dataset:
    grid: Grid
    blocks: BlockMap
    covariates: CovariateMatrix
    counts: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def n_cells(self) -> int:
        return self.grid.n_cells

    @property
    def X(self) -> np.ndarray:
        return self.covariates.X

    @property
    def y(self) -> np.ndarray:
        return self.counts

    def with_counts(self, counts) -> "Dataset":
        return replace(self, counts=np.asarray(counts, dtype=np.int64))


def build_regular_grid(rows: int, cols: int, cell_size: float = 1.0,
                       origin=(0.0, 0.0)) -> Grid:
    """Regular lattice of ``rows * cols`` square cells, row-major.

    The centroid of cell ``(r, c)`` is ``origin + ((c + 0.5) s, (r + 0.5) s)``.
    """
    if rows < 1 or cols < 1:
        raise ValueError(f"grid dimensions must be positive, got {rows}x{cols}")
    if not cell_size > 0:
        raise ValueError(f"cell_size must be positive, got {cell_size}")
    r, c = np.divmod(np.arange(rows * cols), cols)
    centroids = np.column_stack([
        origin[0] + (c + 0.5) * cell_size,
        origin[1] + (r + 0.5) * cell_size,
    ])
    return Grid(centroids=centroids, cell_size=float(cell_size),
                shape=(int(rows), int(cols)), origin=(float(origin[0]), float(origin[1])))


def block_map_from_labels(grid: Grid, block_of_cell) -> BlockMap:
    block_of_cell = np.asarray(block_of_cell, dtype=np.int64)
    n_blocks = int(block_of_cell.max()) + 1 if block_of_cell.size else 0
    sums = np.zeros((n_blocks, 2))
    np.add.at(sums, block_of_cell, grid.centroids)
    sizes = np.bincount(block_of_cell, minlength=n_blocks)
    with np.errstate(invalid="ignore", divide="ignore"):
        centroids = sums / sizes[:, None]
    return BlockMap(block_of_cell=block_of_cell, n_blocks=n_blocks,
                    block_centroids=centroids)


def rectangular_blocks(grid: Grid, block_rows: int, block_cols: int) -> BlockMap:
    """Tile a regular grid into ``block_rows x block_cols`` rectangular blocks."""
    rows, cols = grid.shape
    if not (1 <= block_rows <= rows and 1 <= block_cols <= cols):
        raise ValueError("block tiling must fit inside the grid")
    r, c = np.divmod(np.arange(rows * cols), cols)
    br = r * block_rows // rows
    bc = c * block_cols // cols
    return block_map_from_labels(grid, br * block_cols + bc)


def single_block(grid: Grid) -> BlockMap:
    return block_map_from_labels(grid, np.zeros(grid.n_cells, dtype=np.int64))


def standardize_covariates(cov: CovariateMatrix) -> CovariateMatrix:
    """Centre and scale non-intercept columns using the population s.d."""
    X = np.array(cov.X, dtype=float, copy=True)
    for j in range(X.shape[1]):
        if j == cov.intercept:
            continue
        col = X[:, j]
        sd = col.std()
        if not sd > 0:
            raise DegenerateCovariateError(cov.column_names[j])
        X[:, j] = (col - col.mean()) / sd
    return replace(cov, X=X, standardized=True)


def make_covariates(columns: dict, intercept: bool = True) -> CovariateMatrix:
    """Assemble a covariate matrix from named columns, intercept first."""
    names = list(columns)
    mats = [np.asarray(columns[n], dtype=float) for n in names]
    if intercept:
        n = len(mats[0]) if mats else 0
        names = ["intercept"] + names
        mats = [np.ones(n)] + mats
    X = np.column_stack(mats)
    return CovariateMatrix(X=X, column_names=tuple(names),
                           intercept=0 if intercept else None)


def validate_dataset(d: Dataset) -> list:
    """Return one human-readable message per violated invariant."""
    problems = []
    grid, blocks, cov, y = d.grid, d.blocks, d.covariates, np.asarray(d.counts)
    n = grid.n_cells

    if grid.centroids.ndim != 2 or grid.centroids.shape[1] != 2:
        problems.append("grid centroids must be an N x 2 array")
    elif len(np.unique(grid.centroids, axis=0)) != n:
        problems.append("grid centroids are not pairwise distinct")
    if grid.shape is not None:
        rows, cols = grid.shape
        if rows * cols != n:
            problems.append(f"grid shape {rows}x{cols} does not match N={n}")
        else:
            expected = build_regular_grid(rows, cols, grid.cell_size, grid.origin)
            if not np.allclose(expected.centroids, grid.centroids):
                problems.append("centroids do not lie on the row-major lattice")

    b = np.asarray(blocks.block_of_cell)
    if b.shape != (n,):
        problems.append(f"block map has {b.size} entries, expected N={n}")
    else:
        bad = (b < 0) | (b >= blocks.n_blocks)
        if bad.any():
            problems.append(f"block index out of range [0, {blocks.n_blocks}) "
                            f"at {int(bad.sum())} cell(s), first cell {int(np.argmax(bad))}")
        else:
            empty = np.flatnonzero(np.bincount(b, minlength=blocks.n_blocks) == 0)
            if empty.size:
                problems.append(f"block(s) with no cells: {empty[:10].tolist()}")
    if np.asarray(blocks.block_centroids).shape != (blocks.n_blocks, 2):
        problems.append("block centroids must be an n_blocks x 2 array")

    X = np.asarray(cov.X)
    if X.ndim != 2 or X.shape[0] != n:
        problems.append(f"covariate matrix has {X.shape[0] if X.ndim else 0} rows, expected N={n}")
    else:
        if len(cov.column_names) != X.shape[1]:
            problems.append("covariate column names do not match the number of columns")
        if not np.isfinite(X).all():
            problems.append("covariate matrix contains non-finite values")
        for j in np.flatnonzero(~X.any(axis=0)):
            problems.append(f"covariate column {cov.column_names[j]!r} is entirely zero")
        if cov.intercept is not None and not np.all(X[:, cov.intercept] == 1.0):
            problems.append("intercept column is not constant 1")
        if cov.standardized:
            for j in np.flatnonzero(cov.slope_mask()):
                col = X[:, j]
                if abs(col.mean()) > 1e-8 or abs(col.std() - 1.0) > 1e-6:
                    problems.append(f"covariate column {cov.column_names[j]!r} "
                                    "is flagged standardized but is not")

    if y.shape != (n,):
        problems.append(f"counts have {y.size} entries, expected N={n}")
    else:
        if not np.issubdtype(y.dtype, np.integer) and not np.all(y == np.round(y)):
            problems.append("counts must be integers")
        neg = np.flatnonzero(y < 0)
        if neg.size:
            problems.append(f"negative count at {neg.size} cell(s), first cell {int(neg[0])}")
    return problems


def subset_columns(cov: CovariateMatrix, names: Sequence[str]) -> CovariateMatrix:
    idx = [cov.column_names.index(n) for n in names]
    intercept = idx.index(cov.intercept) if cov.intercept in idx else None
    return replace(cov, X=cov.X[:, idx], column_names=tuple(names), intercept=intercept)
