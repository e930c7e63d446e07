"""Jitted inner loops.

Everything here is deliberately sequential: attachment order and
topological message order are semantically significant, and keeping one
thread makes runs bit-reproducible. All kernels take flat arrays; the
wrapping modules own validation and error reporting (kernels signal
failure by returning the offending node id, -1 on success).
"""

import numpy as np
from numba import njit

NEIGH4 = np.array([[-1, 0], [0, -1], [0, 1], [1, 0]], dtype=np.int64)
NEIGH8 = np.array(
    [[-1, -1], [-1, 0], [-1, 1], [0, -1], [0, 1], [1, -1], [1, 0], [1, 1]],
    dtype=np.int64,
)


@njit(cache=True)
def attach_nodes(n_rows, n_cols, cell_of_node, node_of_cell, offsets):
    """Ascending insertion of cells into the reverse tree.

    Each new node attaches to the rear of every previously-visited
    neighbor's branch, at most once per rear. Rears are tracked with a
    path-compressed pointer array, so the whole loop is near-linear.

    Returns (child, parent_src, parent_dst, n_edges).
    """
    n = cell_of_node.shape[0]
    child = np.full(n, -1, dtype=np.int64)
    rear = np.arange(n)
    parent_src = np.empty(n, dtype=np.int64)
    parent_dst = np.empty(n, dtype=np.int64)
    n_edges = 0
    n_off = offsets.shape[0]

    for node in range(n):
        cell = cell_of_node[node]
        r = cell // n_cols
        c = cell % n_cols
        for o in range(n_off):
            rr = r + offsets[o, 0]
            cc = c + offsets[o, 1]
            if rr < 0 or rr >= n_rows or cc < 0 or cc >= n_cols:
                continue
            k = node_of_cell[rr * n_cols + cc]
            if k < 0 or k >= node:
                continue  # invalid or not yet visited
            # find the current rear of k's branch, compressing the path
            root = k
            while rear[root] != root:
                root = rear[root]
            while rear[k] != root:
                nxt = rear[k]
                rear[k] = root
                k = nxt
            if root != node:
                child[root] = node
                parent_src[n_edges] = root
                parent_dst[n_edges] = node
                n_edges += 1
                rear[root] = node
    return child, parent_src, parent_dst, n_edges


@njit(cache=True, inline="always")
def _ladd(a, b):
    """log(exp(a) + exp(b)), safe for -inf operands."""
    if a < b:
        a, b = b, a
    if b == -np.inf:
        return a
    return a + np.log1p(np.exp(b - a))


@njit(cache=True, inline="always")
def _l1me(x):
    """log(1 - exp(x)) for x <= 0; tiny positive x (rounding) maps to -inf."""
    if x >= 0.0:
        return -np.inf
    if x > -0.6931471805599453:
        return np.log(-np.expm1(x))
    return np.log1p(-np.exp(x))


@njit(cache=True)
def forward_kernel(parent_ptr, parent_idx, log_e, lrho, l1mrho, lpi, l1mpi,
                   f_in_log, f_out_log, scale_f_log):
    """Leaf-to-root pass filling log f_in / log f_out (stored max 0).

    The sum over parent label configurations is collapsed onto the
    parent product: an all-flood term and a remainder term, keeping the
    per-node cost linear in the parent count. Messages live in the log
    domain so class ratios can drift arbitrarily far along deep chains
    without underflow.
    """
    n = parent_ptr.shape[0] - 1
    for v in range(n):
        lo = parent_ptr[v]
        hi = parent_ptr[v + 1]
        if lo == hi:
            lfr0 = l1mpi
            lfr1 = lpi
        else:
            la1 = 0.0
            lsum = 0.0
            for j in range(lo, hi):
                k = parent_idx[j]
                la1 += f_out_log[k, 1]
                lsum += _ladd(f_out_log[k, 0], f_out_log[k, 1])
            lrem = lsum + _l1me(la1 - lsum)
            lfr1 = lrho + la1
            lfr0 = _ladd(lrem, l1mrho + la1)
        mf = lfr0 if lfr0 > lfr1 else lfr1
        if not np.isfinite(mf):
            return v
        f_in_log[v, 0] = lfr0 - mf
        f_in_log[v, 1] = lfr1 - mf
        lu0 = f_in_log[v, 0] + log_e[v, 0]
        lu1 = f_in_log[v, 1] + log_e[v, 1]
        mu = lu0 if lu0 > lu1 else lu1
        if not np.isfinite(mu):
            return v
        f_out_log[v, 0] = lu0 - mu
        f_out_log[v, 1] = lu1 - mu
        scale_f_log[v] = mf + mu
    return -1


@njit(cache=True)
def backward_kernel(child, parent_ptr, parent_idx, log_e, lrho, l1mrho,
                    f_out_log, g_in_log, g_out_log, scale_g_log):
    """Root-to-leaf pass filling log g_in / log g_out.

    A node's incoming message combines its child's outgoing message
    with the forward messages of its siblings, collapsed the same way
    as the forward pass.
    """
    n = child.shape[0]
    for v in range(n - 1, -1, -1):
        c = child[v]
        if c == -1:
            lgr0 = 0.0
            lgr1 = 0.0
        else:
            lb1 = 0.0
            lss = 0.0
            for j in range(parent_ptr[c], parent_ptr[c + 1]):
                k = parent_idx[j]
                if k == v:
                    continue
                lb1 += f_out_log[k, 1]
                lss += _ladd(f_out_log[k, 0], f_out_log[k, 1])
            lrem = lss + _l1me(lb1 - lss)
            g0 = g_out_log[c, 0]
            g1 = g_out_log[c, 1]
            inner = _ladd(l1mrho + g0, lrho + g1)
            lgr1 = _ladd(lb1 + inner, lrem + g0)
            lgr0 = lss + g0
        mg = lgr0 if lgr0 > lgr1 else lgr1
        if not np.isfinite(mg):
            return v
        g_in_log[v, 0] = lgr0 - mg
        g_in_log[v, 1] = lgr1 - mg
        lu0 = g_in_log[v, 0] + log_e[v, 0]
        lu1 = g_in_log[v, 1] + log_e[v, 1]
        mv = lu0 if lu0 > lu1 else lu1
        if not np.isfinite(mv):
            return v
        g_out_log[v, 0] = lu0 - mv
        g_out_log[v, 1] = lu1 - mv
        scale_g_log[v] = mg + mv
    return -1


@njit(cache=True)
def posterior_kernel(parent_ptr, parent_idx, lrho, l1mrho,
                     f_out_log, g_in_log, g_out_log, node_marginal, pair_marginal):
    """Normalized node and (node, parent-product) marginals.

    Per-node scale factors cancel in the normalizations, so stored
    (max-0) log messages can be combined directly. pair_marginal is
    indexed [node, y_node, parent_product]; rows for leaves stay zero.
    """
    n = parent_ptr.shape[0] - 1
    for v in range(n):
        lt0 = f_out_log[v, 0] + g_in_log[v, 0]
        lt1 = f_out_log[v, 1] + g_in_log[v, 1]
        m = lt0 if lt0 > lt1 else lt1
        if not np.isfinite(m):
            return v
        t0 = np.exp(lt0 - m)
        t1 = np.exp(lt1 - m)
        z = t0 + t1
        node_marginal[v, 0] = t0 / z
        node_marginal[v, 1] = t1 / z
        lo = parent_ptr[v]
        hi = parent_ptr[v + 1]
        if lo == hi:
            continue
        la1 = 0.0
        lsum = 0.0
        for j in range(lo, hi):
            k = parent_idx[j]
            la1 += f_out_log[k, 1]
            lsum += _ladd(f_out_log[k, 0], f_out_log[k, 1])
        lrem = lsum + _l1me(la1 - lsum)
        l11 = la1 + lrho + g_out_log[v, 1]
        l01 = la1 + l1mrho + g_out_log[v, 0]
        l00 = lrem + g_out_log[v, 0]
        mp = l11
        if l01 > mp:
            mp = l01
        if l00 > mp:
            mp = l00
        if not np.isfinite(mp):
            return v
        p11 = np.exp(l11 - mp)
        p01 = np.exp(l01 - mp)
        p00 = np.exp(l00 - mp)
        zp = p11 + p01 + p00
        pair_marginal[v, 1, 1] = p11 / zp
        pair_marginal[v, 0, 1] = p01 / zp
        pair_marginal[v, 0, 0] = p00 / zp
        pair_marginal[v, 1, 0] = 0.0
    return -1


@njit(cache=True)
def greedy_kernel(child, parent_ptr, parent_idx, log_e, log_rho, log_1mrho, log_pi, log_1mpi, labels):
    """Frontier dynamic program: leaf-to-root gain scan, then top-down cut.

    The scan flips nodes to the flood class in topological order; the
    gain of a flip covers the node reward, the transition into the node
    (all parents already flipped), and the transition into the child
    when this node is the last of the child's parents in the order.
    Reconstruction floods the whole watershed of every node where the
    flood-all branch attained the running maximum (ties flood).
    """
    n = child.shape[0]
    g_cur = np.zeros(n, dtype=np.float64)
    g_max = np.zeros(n, dtype=np.float64)
    flood = np.zeros(n, dtype=np.uint8)
    for v in range(n):
        delta = log_e[v, 1] - log_e[v, 0]
        lo = parent_ptr[v]
        hi = parent_ptr[v + 1]
        if lo == hi:
            delta += log_pi - log_1mpi
        else:
            delta += log_rho - log_1mrho
        c = child[v]
        if c != -1:
            last = parent_idx[parent_ptr[c]]
            for j in range(parent_ptr[c], parent_ptr[c + 1]):
                if parent_idx[j] > last:
                    last = parent_idx[j]
            if last == v:
                delta += log_1mrho
        s_cur = delta
        s_max = 0.0
        for j in range(lo, hi):
            k = parent_idx[j]
            s_cur += g_cur[k]
            s_max += g_max[k]
        g_cur[v] = s_cur
        if s_cur >= s_max:
            flood[v] = 1
            g_max[v] = s_cur
        else:
            g_max[v] = s_max
    for v in range(n - 1, -1, -1):
        c = child[v]
        if c != -1 and labels[c] == 1:
            labels[v] = 1
        elif flood[v] == 1:
            labels[v] = 1
        else:
            labels[v] = 0
    return g_max


@njit(cache=True)
def pond_fill(below, start_cell, n_rows, n_cols, use8):
    """Connected spread from one cell through cells flagged below level."""
    n = n_rows * n_cols
    out = np.zeros(n, dtype=np.uint8)
    if not below[start_cell]:
        return out
    queue = np.empty(n, dtype=np.int64)
    queue[0] = start_cell
    out[start_cell] = 1
    head = 0
    tail = 1
    while head < tail:
        cell = queue[head]
        head += 1
        r = cell // n_cols
        c = cell % n_cols
        for dr in range(-1, 2):
            for dc in range(-1, 2):
                if dr == 0 and dc == 0:
                    continue
                if not use8 and dr != 0 and dc != 0:
                    continue
                rr = r + dr
                cc = c + dc
                if rr < 0 or rr >= n_rows or cc < 0 or cc >= n_cols:
                    continue
                ncell = rr * n_cols + cc
                if below[ncell] and out[ncell] == 0:
                    out[ncell] = 1
                    queue[tail] = ncell
                    tail += 1
    return out
