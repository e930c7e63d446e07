"""Class inference: frontier dynamic program plus an exhaustive oracle.

A feasible labeling floods a set of nodes closed under taking parents,
i.e. a union of complete watersheds. The greedy scan flips nodes to
flood in topological order, tracking the cumulative gain of flooding a
node's whole watershed against the best gains attainable inside it;
the top-down reconstruction floods every watershed whose flood-all
branch attained the maximum (ties flood).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import NumericError, OracleSizeError
from .learning import node_log_emissions
from .model import HmtParams, log_joint
from .raster import RasterFrame, write_grid
from .tree import DependencyTree

ORACLE_MAX_NODES = 20

# flood brown / dry green / invalid white, for the rendered map
_COLOR_FLOOD = (139, 90, 43)
_COLOR_DRY = (34, 139, 34)
_COLOR_INVALID = (255, 255, 255)


@dataclass(frozen=True)
class ClassMap:
    """Cell-aligned class labels: 1 flood, 0 dry, -1 invalid cell.

    ``objective`` is the joint log probability of the labeling when one
    was computed (inference results always carry a finite value).
    """

    labels: np.ndarray  # (n_cells,) int8
    objective: float | None = None


def _node_labels_to_map(
    tree: DependencyTree,
    frame: RasterFrame,
    node_labels: np.ndarray,
    params: HmtParams,
) -> ClassMap:
    cells = np.full(frame.n_cells, -1, dtype=np.int8)
    cells[tree.cell_of_node] = node_labels.astype(np.int8)
    cmap = ClassMap(labels=cells, objective=None)
    obj = log_joint(tree, frame, cmap, params)
    if not np.isfinite(obj):
        raise NumericError("inference produced a labeling with non-finite objective")
    return ClassMap(labels=cells, objective=float(obj))


def infer_greedy(tree: DependencyTree, frame: RasterFrame, params: HmtParams) -> ClassMap:
    """Linear-time frontier scan maximizing the joint log probability.

    The returned objective is recomputed from the labeling itself, not
    taken from the scan's internal gains.
    """
    log_e = node_log_emissions(tree, frame, params)
    labels = np.zeros(tree.node_count, dtype=np.int8)
    _kernels.greedy_kernel(
        tree.child, tree.parent_ptr, tree.parent_idx, log_e,
        float(np.log(params.rho)), float(np.log1p(-params.rho)),
        float(np.log(params.pi)), float(np.log1p(-params.pi)),
        labels,
    )
    return _node_labels_to_map(tree, frame, labels, params)


def watershed_mask(tree: DependencyTree, node: int) -> int:
    """Bitmask of ``node`` and everything draining into it."""
    mask = 0
    stack = [node]
    while stack:
        v = stack.pop()
        if mask >> v & 1:
            continue
        mask |= 1 << v
        stack.extend(int(k) for k in tree.parents(v))
    return mask


def enumerate_feasible_masks(tree: DependencyTree) -> list[int]:
    """All parent-closed flood sets, as node bitmasks.

    Recursion: a feasible set within a watershed either floods it whole
    or splits into independent feasible sets of the parent watersheds,
    so the count satisfies ``#(n) = prod_parents #(p) + 1``.
    """
    if tree.node_count > ORACLE_MAX_NODES:
        raise OracleSizeError(
            f"exhaustive enumeration limited to {ORACLE_MAX_NODES} nodes, "
            f"got {tree.node_count}"
        )
    memo: dict[int, list[int]] = {}

    def masks(v: int) -> list[int]:
        if v in memo:
            return memo[v]
        combos = [0]
        for k in tree.parents(v):
            combos = [a | b for a, b in itertools.product(combos, masks(int(k)))]
        out = combos + [watershed_mask(tree, v)]
        memo[v] = out
        return out

    result = [0]
    for r in tree.roots:
        result = [a | b for a, b in itertools.product(result, masks(int(r)))]
    # roots partition the forest, so no deduplication is needed
    return result


def infer_oracle(tree: DependencyTree, frame: RasterFrame, params: HmtParams) -> ClassMap:
    """Exhaustive maximizer over all feasible labelings (small trees only).

    Ties break toward more flooded nodes, then lexicographically
    (largest bitmask).
    """
    masks = enumerate_feasible_masks(tree)
    n = tree.node_count
    log_e = node_log_emissions(tree, frame, params)

    mask_arr = np.array(masks, dtype=np.int64)
    y = (mask_arr[:, None] >> np.arange(n)) & 1  # (K, n)

    gain = log_e[:, 1] - log_e[:, 0]
    counts = tree.parent_counts
    leaf = counts == 0
    lpi, l1mpi = float(np.log(params.pi)), float(np.log1p(-params.pi))
    lrho, l1mrho = float(np.log(params.rho)), float(np.log1p(-params.rho))

    base = float(log_e[:, 0].sum()) + float(leaf.sum()) * l1mpi
    obj = base + y @ gain
    obj += (y[:, leaf] * (lpi - l1mpi)).sum(axis=1)

    nonleaf = np.flatnonzero(~leaf)
    for v in nonleaf:
        q = y[:, tree.parents(int(v))].min(axis=1)
        yv = y[:, v]
        # feasible sets never produce (y=1, q=0)
        obj += q * np.where(yv == 1, lrho, l1mrho)

    flood_counts = y.sum(axis=1)
    best = np.lexsort((mask_arr, flood_counts, obj))[-1]
    return _node_labels_to_map(tree, frame, y[best].astype(np.int8), params)


def render_map(
    classmap: ClassMap,
    frame: RasterFrame,
    path,
    image_path=None,
    nodata_value: float = -9999.0,
) -> None:
    """Write the class raster as an ASCII grid, optionally a PPM image."""
    labels = classmap.labels.astype(np.float64)
    valid = classmap.labels >= 0
    write_grid(
        path, labels, frame.n_rows, frame.n_cols,
        valid=valid, nodata_value=nodata_value,
    )
    if image_path is not None:
        rgb = np.empty((frame.n_cells, 3), dtype=np.uint8)
        rgb[:] = _COLOR_INVALID
        rgb[classmap.labels == 0] = _COLOR_DRY
        rgb[classmap.labels == 1] = _COLOR_FLOOD
        with open(image_path, "wb") as fh:
            fh.write(f"P6\n{frame.n_cols} {frame.n_rows}\n255\n".encode())
            fh.write(rgb.tobytes())
