"""Gridded input handling: ASCII grids, label records, and the raster frame.

A frame bundles one elevation layer, ``m`` feature bands, optional
training labels, and a validity mask into flat row-major arrays
(row 0 is the top of the grid). All downstream modules index cells as
``row * n_cols + col``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionError, GridFormatError, LabelBoundsError

logger = logging.getLogger(__name__)

HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")

DEFAULT_NODATA = -9999.0

UNLABELED = -1


@dataclass(frozen=True)
class GridHeader:
    ncols: int
    nrows: int
    xllcorner: float
    yllcorner: float
    cellsize: float
    nodata_value: float


@dataclass(frozen=True)
class Layer:
    """One raster band: flat row-major values plus a validity mask."""

    header: GridHeader
    values: np.ndarray  # (nrows*ncols,) float64
    valid: np.ndarray   # (nrows*ncols,) bool

    @property
    def shape(self) -> tuple[int, int]:
        return (self.header.nrows, self.header.ncols)


@dataclass(frozen=True)
class RasterFrame:
    """In-memory study area: elevation, feature bands, labels, validity.

    Immutable once assembled; safe to share across readers.
    """

    n_rows: int
    n_cols: int
    n_bands: int
    elevation: np.ndarray          # (N,) float64
    features: np.ndarray           # (N, n_bands) float64
    labels: np.ndarray | None      # (N,) int8, UNLABELED where absent
    valid_mask: np.ndarray         # (N,) bool

    @property
    def n_cells(self) -> int:
        return self.n_rows * self.n_cols

    def cell_index(self, row: int, col: int) -> int:
        return row * self.n_cols + col


def _parse_header_line(line: str, lineno: int, expected_key: str) -> float:
    parts = line.split()
    if len(parts) != 2:
        raise GridFormatError(
            f"header line {lineno} ({line.strip()!r}): expected '<key> <value>'"
        )
    key, raw = parts
    if key.lower() != expected_key:
        raise GridFormatError(
            f"header line {lineno} ({line.strip()!r}): expected key {expected_key!r}"
        )
    try:
        return float(raw)
    except ValueError as exc:
        raise GridFormatError(
            f"header line {lineno} ({line.strip()!r}): non-numeric value"
        ) from exc


def load_grid(path: str | Path, expected_shape: tuple[int, int] | None = None) -> Layer:
    """Read one ASCII-grid layer.

    The file carries six header lines (ncols, nrows, xllcorner,
    yllcorner, cellsize, NODATA_value) followed by ``nrows`` rows of
    ``ncols`` whitespace-separated values, top row first. Cells equal
    to the NODATA value (or non-finite) are flagged invalid.
    """
    path = Path(path)
    with path.open("r") as fh:
        lines = fh.read().splitlines()
    if len(lines) < 6:
        raise GridFormatError(f"{path}: fewer than six header lines")

    raw = [_parse_header_line(lines[i], i + 1, HEADER_KEYS[i]) for i in range(6)]
    ncols, nrows = raw[0], raw[1]
    if ncols != int(ncols) or nrows != int(nrows) or ncols < 1 or nrows < 1:
        raise GridFormatError(
            f"{path}: ncols/nrows must be positive integers, got {ncols!r}/{nrows!r}"
        )
    header = GridHeader(int(ncols), int(nrows), raw[2], raw[3], raw[4], raw[5])

    data_lines = [ln for ln in lines[6:] if ln.strip()]
    if len(data_lines) != header.nrows:
        raise DimensionError(
            f"{path}: header declares {header.nrows} rows, found {len(data_lines)}"
        )
    rows = []
    for i, ln in enumerate(data_lines):
        toks = ln.split()
        if len(toks) != header.ncols:
            raise DimensionError(
                f"{path}: data row {i} has {len(toks)} values, expected {header.ncols}"
            )
        try:
            rows.append(np.array(toks, dtype=np.float64))
        except ValueError as exc:
            raise GridFormatError(f"{path}: data row {i}: non-numeric value") from exc
    values = np.concatenate(rows) if rows else np.empty(0, dtype=np.float64)

    if expected_shape is not None and (header.nrows, header.ncols) != tuple(expected_shape):
        raise DimensionError(
            f"{path}: shape {(header.nrows, header.ncols)} differs from "
            f"expected {tuple(expected_shape)}"
        )

    valid = np.isfinite(values) & (values != header.nodata_value)
    return Layer(header=header, values=values, valid=valid)


def write_grid(
    path: str | Path,
    values: np.ndarray,
    n_rows: int,
    n_cols: int,
    valid: np.ndarray | None = None,
    nodata_value: float = DEFAULT_NODATA,
    xllcorner: float = 0.0,
    yllcorner: float = 0.0,
    cellsize: float = 1.0,
) -> None:
    """Write one layer as an ASCII grid; re-loading reproduces the values.

    Values are printed with %.17g so float64 round-trips exactly.
    Cells flagged invalid are written as the NODATA value.
    """
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.shape[0] != n_rows * n_cols:
        raise DimensionError(
            f"cannot write grid: {values.shape[0]} values for {n_rows}x{n_cols}"
        )
    out = values.copy()
    if valid is not None:
        out[~np.asarray(valid, dtype=bool)] = nodata_value
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"ncols {n_cols}\n")
        fh.write(f"nrows {n_rows}\n")
        fh.write(f"xllcorner {xllcorner:.17g}\n")
        fh.write(f"yllcorner {yllcorner:.17g}\n")
        fh.write(f"cellsize {cellsize:.17g}\n")
        fh.write(f"NODATA_value {nodata_value:.17g}\n")
        grid = out.reshape(n_rows, n_cols)
        for r in range(n_rows):
            fh.write(" ".join(f"{v:.17g}" for v in grid[r]))
            fh.write("\n")


def read_labels(path: str | Path) -> np.ndarray:
    """Read a ``row,col,label`` CSV into an (k, 3) int array."""
    path = Path(path)
    with path.open("r") as fh:
        lines = [ln.strip() for ln in fh.read().splitlines() if ln.strip()]
    if not lines or lines[0].lower().replace(" ", "") != "row,col,label":
        raise GridFormatError(f"{path}: expected header 'row,col,label'")
    records = []
    for i, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != 3:
            raise GridFormatError(f"{path}: line {i}: expected 3 comma-separated fields")
        try:
            row, col, lab = (int(p) for p in parts)
        except ValueError as exc:
            raise GridFormatError(f"{path}: line {i}: non-integer field") from exc
        if lab not in (0, 1):
            raise GridFormatError(f"{path}: line {i}: label must be 0 or 1, got {lab}")
        records.append((row, col, lab))
    return np.array(records, dtype=np.int64).reshape(-1, 3)


def write_labels(path: str | Path, records: np.ndarray) -> None:
    records = np.asarray(records, dtype=np.int64).reshape(-1, 3)
    with Path(path).open("w") as fh:
        fh.write("row,col,label\n")
        for row, col, lab in records:
            fh.write(f"{row},{col},{lab}\n")


def assemble_frame(
    elevation: Layer,
    feature_layers: Sequence[Layer],
    labels: np.ndarray | None = None,
) -> RasterFrame:
    """Fuse layers into one frame.

    A cell invalid in any layer is invalid overall. Label records on
    invalid cells are dropped (with a warning); records out of bounds
    raise.
    """
    n_rows, n_cols = elevation.shape
    for i, band in enumerate(feature_layers):
        if band.shape != (n_rows, n_cols):
            raise DimensionError(
                f"band {i} shape {band.shape} differs from elevation {(n_rows, n_cols)}"
            )
    n = n_rows * n_cols
    valid = elevation.valid.copy()
    for band in feature_layers:
        valid &= band.valid

    n_bands = len(feature_layers)
    features = np.zeros((n, n_bands), dtype=np.float64)
    for j, band in enumerate(feature_layers):
        features[:, j] = band.values

    label_arr: np.ndarray | None = None
    if labels is not None:
        records = np.asarray(labels, dtype=np.int64).reshape(-1, 3)
        label_arr = np.full(n, UNLABELED, dtype=np.int8)
        dropped = 0
        for row, col, lab in records:
            if not (0 <= row < n_rows and 0 <= col < n_cols):
                raise LabelBoundsError(
                    f"label at (row={row}, col={col}) outside {n_rows}x{n_cols} grid"
                )
            idx = row * n_cols + col
            if not valid[idx]:
                dropped += 1
                continue
            label_arr[idx] = lab
        if dropped:
            logger.warning("dropped %d label(s) on invalid cells", dropped)

    return RasterFrame(
        n_rows=n_rows,
        n_cols=n_cols,
        n_bands=n_bands,
        elevation=elevation.values.copy(),
        features=features,
        labels=label_arr,
        valid_mask=valid,
    )


def frame_from_arrays(
    elevation: np.ndarray,
    features: np.ndarray | None = None,
    labels: np.ndarray | None = None,
    valid_mask: np.ndarray | None = None,
) -> RasterFrame:
    """Build a frame directly from 2-D arrays (test and synthesis path)."""
    elevation = np.asarray(elevation, dtype=np.float64)
    n_rows, n_cols = elevation.shape
    n = n_rows * n_cols
    if features is None:
        features = np.zeros((n, 0), dtype=np.float64)
    else:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim == 2 and features.shape == (n_rows, n_cols):
            features = features.reshape(n, 1)
        else:
            features = features.reshape(n, -1)
    if valid_mask is None:
        valid_mask = np.isfinite(elevation.reshape(-1))
    else:
        valid_mask = np.asarray(valid_mask, dtype=bool).reshape(-1)
    label_arr = None
    if labels is not None:
        label_arr = np.asarray(labels, dtype=np.int8).reshape(-1).copy()
        label_arr[~valid_mask] = UNLABELED
    return RasterFrame(
        n_rows=n_rows,
        n_cols=n_cols,
        n_bands=features.shape[1],
        elevation=elevation.reshape(-1).copy(),
        features=features.copy(),
        labels=label_arr,
        valid_mask=valid_mask.copy(),
    )
