"""Reverse spatial-dependency tree built by ascending topological insertion.

Cells are inserted in increasing elevation order (ties broken by
row-major cell index, so builds are reproducible). A cell with no
visited neighbor opens a new branch as a leaf; otherwise it attaches to
the rear of each visited neighbor's branch. The result is a forest of
reverse trees: every node has at most one child and possibly several
parents, and edges always run from lower to higher insertion rank.

Node ids coincide with insertion ranks, so the identity permutation is
a topological order with every parent before its child.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import EmptyInputError
from .raster import RasterFrame


@dataclass(frozen=True)
class DependencyTree:
    node_count: int
    child: np.ndarray         # (n,) int64, -1 for roots
    parent_ptr: np.ndarray    # (n+1,) int64 CSR offsets into parent_idx
    parent_idx: np.ndarray    # (E,) int64
    cell_of_node: np.ndarray  # (n,) int64
    node_of_cell: np.ndarray  # (n_cells,) int64, -1 for invalid cells

    def parents(self, node: int) -> np.ndarray:
        return self.parent_idx[self.parent_ptr[node]:self.parent_ptr[node + 1]]

    def siblings(self, node: int) -> np.ndarray:
        c = self.child[node]
        if c == -1:
            return np.empty(0, dtype=np.int64)
        sibs = self.parents(c)
        return sibs[sibs != node]

    def is_leaf(self, node: int) -> bool:
        return self.parent_ptr[node] == self.parent_ptr[node + 1]

    @property
    def parent_counts(self) -> np.ndarray:
        return np.diff(self.parent_ptr)

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.parent_counts == 0)

    @property
    def roots(self) -> np.ndarray:
        return np.flatnonzero(self.child == -1)

    @property
    def topo_order(self) -> np.ndarray:
        return np.arange(self.node_count, dtype=np.int64)


def build_tree(frame: RasterFrame, neighborhood: int = 4) -> DependencyTree:
    """Construct the dependency tree for all valid cells of a frame.

    When masking splits the grid into several connected components each
    yields its own root; traversals treat the result as a forest under
    an implicit super-root that carries no probability terms.

    Attachment goes to the current rear of a neighbor's branch, not to
    the neighbor itself. On fields whose values change abruptly between
    neighbors the rear can sit far from the neighbor, so tree ancestry
    is only guaranteed to refine the monotone-path relation where the
    field is contiguous.
    """
    if neighborhood not in (4, 8):
        raise ValueError(f"neighborhood must be 4 or 8, got {neighborhood}")
    valid_cells = np.flatnonzero(frame.valid_mask)
    if valid_cells.size == 0:
        raise EmptyInputError("cannot build a tree from zero valid cells")

    # stable argsort keeps row-major cell order for equal elevations
    order = np.argsort(frame.elevation[valid_cells], kind="stable")
    cell_of_node = valid_cells[order].astype(np.int64)
    node_of_cell = np.full(frame.n_cells, -1, dtype=np.int64)
    node_of_cell[cell_of_node] = np.arange(cell_of_node.size, dtype=np.int64)

    offsets = _kernels.NEIGH4 if neighborhood == 4 else _kernels.NEIGH8
    child, src, dst, n_edges = _kernels.attach_nodes(
        frame.n_rows, frame.n_cols, cell_of_node, node_of_cell, offsets
    )
    src = src[:n_edges]
    dst = dst[:n_edges]

    # edges are emitted grouped by destination in ascending node order,
    # so the CSR offsets follow from the per-node counts directly
    counts = np.bincount(dst, minlength=cell_of_node.size)
    parent_ptr = np.zeros(cell_of_node.size + 1, dtype=np.int64)
    np.cumsum(counts, out=parent_ptr[1:])

    return DependencyTree(
        node_count=int(cell_of_node.size),
        child=child,
        parent_ptr=parent_ptr,
        parent_idx=src,
        cell_of_node=cell_of_node,
        node_of_cell=node_of_cell,
    )


def topological_iter(tree: DependencyTree, direction: str = "leaf_to_root") -> np.ndarray:
    """Node ids in traversal order; root_to_leaf is the exact reverse."""
    if direction == "leaf_to_root":
        return tree.topo_order
    if direction == "root_to_leaf":
        return tree.topo_order[::-1]
    raise ValueError(f"direction must be 'leaf_to_root' or 'root_to_leaf', got {direction!r}")


def dump_edges(tree: DependencyTree) -> str:
    """CSV edge dump plus a summary line, for golden-file comparisons."""
    lines = ["parent_cell,child_cell"]
    for node in range(tree.node_count):
        child_cell = tree.cell_of_node[node]
        for k in tree.parents(node):
            lines.append(f"{tree.cell_of_node[k]},{child_cell}")
    lines.append(
        f"nodes={tree.node_count} leaves={tree.leaves.size} roots={tree.roots.size}"
    )
    return "\n".join(lines) + "\n"
