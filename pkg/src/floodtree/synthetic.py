"""Synthetic study-area generation: terrain, ground truth, block features.

The elevation surface is a seeded sum of radial bumps over a gentle
plane, normalized to [0, 100]. Ground truth floods the connected pond
spreading from the global minimum through cells below a rank quantile
of the elevation order; because branches of the dependency tree grow by
spatial adjacency among already-inserted (lower) cells, such a pond is
always closed under tree parents, i.e. feasible for the model built on
the same surface with the same 4-neighborhood.

Features are drawn per coarse block from the Gaussian of the block's
majority class; the standard-normal draws are made before any sigma is
applied, so runs that differ only in sigma share their noise.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .errors import EmptyInputError
from .inference import ClassMap
from .raster import RasterFrame, frame_from_arrays

N_BUMPS = 16


@dataclass(frozen=True)
class SynthConfig:
    rows: int = 1000
    cols: int = 1000
    block: int = 50
    mu1: float = 110.0     # dry-class feature mean
    mu2: float = 150.0     # flood-class feature mean
    sigma1: float = 20.0
    sigma2: float = 20.0
    n_train: int = 1000
    water_level_quantile: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.rows <= 0 or self.cols <= 0 or self.block <= 0:
            raise EmptyInputError("rows, cols and block must be positive")
        if self.rows % self.block or self.cols % self.block:
            raise ValueError(
                f"block {self.block} must divide rows {self.rows} and cols {self.cols}"
            )
        if not 0.0 < self.water_level_quantile < 1.0:
            raise ValueError("water_level_quantile must lie strictly between 0 and 1")
        if self.sigma1 < 0.0 or self.sigma2 < 0.0:
            raise ValueError("sigmas must be non-negative")
        if self.n_train < 2:
            raise ValueError("n_train must be at least 2")


@dataclass(frozen=True)
class TrainingSet:
    """Labeled samples: fresh per-record feature draws plus source cells.

    ``x``/``y`` are what initialization consumes by default; ``cells``
    (row, col per record) let the same set travel through the label-CSV
    interface, where features are read back off the frame instead.
    """

    x: np.ndarray      # (k, m)
    y: np.ndarray      # (k,)
    cells: np.ndarray  # (k, 2) row, col

    def records(self) -> np.ndarray:
        return np.column_stack([self.cells, self.y]).astype(np.int64)


def _elevation_surface(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    rr, cc = np.meshgrid(np.arange(rows, dtype=np.float64),
                         np.arange(cols, dtype=np.float64), indexing="ij")
    scale = float(min(rows, cols))
    z = np.zeros((rows, cols))
    for _ in range(N_BUMPS):
        cy = rng.uniform(0, rows)
        cx = rng.uniform(0, cols)
        width = rng.uniform(scale / 8.0, scale / 2.0)
        amp = rng.uniform(-1.0, 1.0)
        z += amp * np.exp(-((rr - cy) ** 2 + (cc - cx) ** 2) / (2.0 * width * width))
    gx, gy = rng.uniform(-0.5, 0.5, size=2)
    z += (gx * cc / cols + gy * rr / rows) * 0.5
    lo, hi = float(z.min()), float(z.max())
    if hi - lo <= 0.0:
        return np.zeros((rows, cols))
    return (z - lo) / (hi - lo) * 100.0


def _ground_truth(elev_flat: np.ndarray, rows: int, cols: int, quantile: float) -> np.ndarray:
    """Flood the pond around the global minimum below the rank cutoff.

    The cutoff counts cells in the same stable elevation-plus-index
    order the tree construction uses, so the pond is a subset of an
    insertion prefix.
    """
    n = rows * cols
    order = np.argsort(elev_flat, kind="stable")
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    cutoff = int(round(quantile * n))
    cutoff = max(1, min(cutoff, n - 1))
    below = (rank < cutoff)
    pond = _kernels.pond_fill(below, int(order[0]), rows, cols, False)
    return pond.astype(np.int8)


def generate(config: SynthConfig) -> tuple[RasterFrame, ClassMap, TrainingSet]:
    """Produce (frame, ground-truth map, training set) for one seed."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    rows, cols, block = config.rows, config.cols, config.block

    elev = _elevation_surface(rng, rows, cols)
    truth = _ground_truth(elev.reshape(-1), rows, cols, config.water_level_quantile)

    # majority class per coarse block (ties go dry), one value per block
    truth_grid = truth.reshape(rows, cols).astype(np.float64)
    br, bc = rows // block, cols // block
    block_mean = truth_grid.reshape(br, block, bc, block).mean(axis=(1, 3))
    block_class = (block_mean > 0.5).astype(np.int8)

    z = rng.standard_normal((br, bc))
    mu = np.where(block_class == 1, config.mu2, config.mu1)
    sd = np.where(block_class == 1, config.sigma2, config.sigma1)
    block_values = mu + sd * z
    features = np.repeat(np.repeat(block_values, block, axis=0), block, axis=1)

    frame = frame_from_arrays(elevation=elev, features=features)

    # training cells come from blocks whose majority matches the cell's
    # class, so features read back off the frame are class-correct too
    cell_block_class = np.repeat(np.repeat(block_class, block, axis=0), block, axis=1).reshape(-1)
    n0 = config.n_train // 2
    n1 = config.n_train - n0
    cells_list = []
    ys = []
    for c, k in ((0, n0), (1, n1)):
        pool = np.flatnonzero((truth == c) & (cell_block_class == c))
        if pool.size == 0:
            pool = np.flatnonzero(truth == c)
        if pool.size == 0:
            raise EmptyInputError(f"ground truth contains no cells of class {c}")
        chosen = rng.choice(pool, size=k, replace=pool.size < k)
        cells_list.append(chosen)
        ys.append(np.full(k, c, dtype=np.int8))
    cells = np.concatenate(cells_list)
    y = np.concatenate(ys)
    sd_of = np.where(y == 1, config.sigma2, config.sigma1)
    mu_of = np.where(y == 1, config.mu2, config.mu1)
    x = (mu_of + sd_of * rng.standard_normal(y.size)).reshape(-1, 1)
    train = TrainingSet(
        x=x,
        y=y.astype(np.int64),
        cells=np.column_stack([cells // cols, cells % cols]).astype(np.int64),
    )
    truth_map = ClassMap(labels=truth, objective=None)
    return frame, truth_map, train


def scaled_config(base: SynthConfig, n_cells: float) -> SynthConfig:
    """Nearest square grid (block-aligned sides) to a target cell count."""
    side = float(np.sqrt(n_cells))
    steps = max(1, int(round(side / base.block)))
    side_cells = steps * base.block
    return replace(base, rows=side_cells, cols=side_cells)


def generate_scaling_series(base: SynthConfig, sizes) -> list[RasterFrame]:
    """Frames approximating each target size with the same generator."""
    return [generate(scaled_config(base, s))[0] for s in sizes]
