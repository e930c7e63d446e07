"""Parameter estimation by EM with message propagation on the tree.

Messages live in the log domain with a per-node max normalization: the
parent-product collapse needs sums of products, computed here with
stable log-sum and log-diff primitives so class ratios can drift
arbitrarily far along million-node chains without underflow. Per-node
normalizers accumulate separately, keeping the observed-data log
likelihood representable at tens of millions of nodes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import InitializationError, NumericError
from .model import HmtParams, log_emission_field, make_params
from .raster import RasterFrame, UNLABELED
from .tree import DependencyTree

logger = logging.getLogger(__name__)

# Spectral floor on fitted covariances, relative to the data's feature
# variance. It never binds on healthy fits; when a class Gaussian
# collapses onto (near-)identical values it caps the degeneracy while
# keeping the M-step an exact constrained maximizer, so the likelihood
# ascent property survives.
VAR_FLOOR_REL = 1e-10


@dataclass
class MessageTable:
    """Per-node messages, stored as logs normalized to a per-node max of 0.

    The log representation keeps arbitrarily lopsided class ratios
    representable along deep chains; per-node normalizers accumulate in
    ``scale_f_log`` / ``scale_g_log`` (see :func:`cumulative_scales`
    for recovering the unscaled messages). The linear views ``f_in``
    etc. expose the stored messages as non-negative reals with class
    max exactly 1, and ``f_out_log == f_in_log + log_e - (per-node
    constant)`` holds exactly.
    """

    f_in_log: np.ndarray     # (n, 2)
    f_out_log: np.ndarray    # (n, 2)
    g_in_log: np.ndarray     # (n, 2)
    g_out_log: np.ndarray    # (n, 2)
    scale_f_log: np.ndarray  # (n,)
    scale_g_log: np.ndarray  # (n,)

    @property
    def f_in(self) -> np.ndarray:
        return np.exp(self.f_in_log)

    @property
    def f_out(self) -> np.ndarray:
        return np.exp(self.f_out_log)

    @property
    def g_in(self) -> np.ndarray:
        return np.exp(self.g_in_log)

    @property
    def g_out(self) -> np.ndarray:
        return np.exp(self.g_out_log)


@dataclass
class PosteriorTable:
    """Normalized marginals: per-node class, and (class, parent-product).

    ``pair_marginal`` is indexed ``[node, y_node, parent_product]``;
    rows for leaves are all zero (no parents, no pair term).
    """

    node_marginal: np.ndarray  # (n, 2)
    pair_marginal: np.ndarray  # (n, 2, 2)


@dataclass
class EmResult:
    params: HmtParams
    trace: list[tuple[int, float, float, float]]  # (iter, pi, rho, loglik)
    converged: bool = field(default=False)

    @property
    def n_iters(self) -> int:
        return len(self.trace)


def _empty_table(n: int) -> MessageTable:
    return MessageTable(
        f_in_log=np.zeros((n, 2)),
        f_out_log=np.zeros((n, 2)),
        g_in_log=np.zeros((n, 2)),
        g_out_log=np.zeros((n, 2)),
        scale_f_log=np.zeros(n),
        scale_g_log=np.zeros(n),
    )


def node_log_emissions(tree: DependencyTree, frame: RasterFrame, params: HmtParams) -> np.ndarray:
    return log_emission_field(params, frame.features[tree.cell_of_node])


def forward_pass(
    tree: DependencyTree,
    frame: RasterFrame,
    params: HmtParams,
    log_e: np.ndarray | None = None,
    table: MessageTable | None = None,
) -> MessageTable:
    """Leaf-to-root propagation filling the f fields."""
    if log_e is None:
        log_e = node_log_emissions(tree, frame, params)
    if table is None:
        table = _empty_table(tree.node_count)
    bad = _kernels.forward_kernel(
        tree.parent_ptr, tree.parent_idx, log_e,
        float(np.log(params.rho)), float(np.log1p(-params.rho)),
        float(np.log(params.pi)), float(np.log1p(-params.pi)),
        table.f_in_log, table.f_out_log, table.scale_f_log,
    )
    if bad >= 0:
        raise NumericError("forward message left the representable range", node=int(bad))
    return table


def backward_pass(
    tree: DependencyTree,
    frame: RasterFrame,
    params: HmtParams,
    forward: MessageTable,
    log_e: np.ndarray | None = None,
) -> MessageTable:
    """Root-to-leaf propagation filling the g fields of ``forward``."""
    if log_e is None:
        log_e = node_log_emissions(tree, frame, params)
    bad = _kernels.backward_kernel(
        tree.child, tree.parent_ptr, tree.parent_idx, log_e,
        float(np.log(params.rho)), float(np.log1p(-params.rho)),
        forward.f_out_log, forward.g_in_log, forward.g_out_log, forward.scale_g_log,
    )
    if bad >= 0:
        raise NumericError("backward message left the representable range", node=int(bad))
    return forward


def posteriors(
    tree: DependencyTree,
    frame: RasterFrame,
    params: HmtParams,
    messages: MessageTable,
    post: PosteriorTable | None = None,
) -> PosteriorTable:
    """Normalized node and pair marginals from completed messages."""
    n = tree.node_count
    if post is None:
        post = PosteriorTable(
            node_marginal=np.zeros((n, 2)),
            pair_marginal=np.zeros((n, 2, 2)),
        )
    bad = _kernels.posterior_kernel(
        tree.parent_ptr, tree.parent_idx,
        float(np.log(params.rho)), float(np.log1p(-params.rho)),
        messages.f_out_log, messages.g_in_log, messages.g_out_log,
        post.node_marginal, post.pair_marginal,
    )
    if bad >= 0:
        raise NumericError("zero marginal normalizer", node=int(bad))
    return post


def observed_loglik(tree: DependencyTree, messages: MessageTable) -> float:
    """log P(X) from forward scales; components multiply independently."""
    total = float(messages.scale_f_log.sum())
    for r in tree.roots:
        total += float(np.logaddexp(messages.f_out_log[r, 0], messages.f_out_log[r, 1]))
    return total


def cumulative_scales(tree: DependencyTree, messages: MessageTable) -> tuple[np.ndarray, np.ndarray]:
    """Per-node log factors recovering true messages from stored ones.

    ``true_f_out[v] = f_out[v] * exp(fcum[v])`` and likewise for g_out
    with ``gcum``. Intended for validation at small scale; the
    accumulation is a plain Python traversal.
    """
    n = tree.node_count
    fcum = np.zeros(n)
    for v in range(n):
        fcum[v] = messages.scale_f_log[v] + sum(fcum[k] for k in tree.parents(v))
    gcum = np.zeros(n)
    for v in range(n - 1, -1, -1):
        gcum[v] = messages.scale_g_log[v]
        c = tree.child[v]
        if c != -1:
            gcum[v] += gcum[c] + sum(fcum[k] for k in tree.siblings(v))
    return fcum, gcum


def e_step(
    tree: DependencyTree,
    frame: RasterFrame,
    params: HmtParams,
    log_e: np.ndarray | None = None,
    table: MessageTable | None = None,
    post: PosteriorTable | None = None,
) -> tuple[MessageTable, PosteriorTable, float]:
    if log_e is None:
        log_e = node_log_emissions(tree, frame, params)
    table = forward_pass(tree, frame, params, log_e=log_e, table=table)
    backward_pass(tree, frame, params, table, log_e=log_e)
    post = posteriors(tree, frame, params, table, post=post)
    return table, post, observed_loglik(tree, table)


def _eig_floor(sigma: np.ndarray, floor: float) -> np.ndarray:
    """Exact maximizer of the Gaussian M-step objective over Σ ⪰ floor·I."""
    if floor <= 0.0:
        return sigma
    if sigma.shape[0] == 1:
        return np.maximum(sigma, floor)
    vals, vecs = np.linalg.eigh(sigma)
    if vals[0] >= floor:
        return sigma
    return (vecs * np.maximum(vals, floor)) @ vecs.T


def m_step(
    tree: DependencyTree,
    frame: RasterFrame,
    post: PosteriorTable,
    prev_params: HmtParams | None = None,
    var_floor: float = 0.0,
    features: np.ndarray | None = None,
) -> HmtParams:
    """Closed-form parameter updates from the posterior tables.

    The transition probability averages pair marginals over nodes with
    parents; the leaf prior averages node marginals over leaves; the
    Gaussians are posterior-weighted moments (weighted mean, then
    weighted mean of squared deviations about it). A positive
    ``var_floor`` lower-bounds covariance eigenvalues; ``features`` may
    pass precomputed node-aligned features.
    """
    pair = post.pair_marginal
    rho_den = float(pair[:, 1, 1].sum() + pair[:, 0, 1].sum())
    if rho_den > 0.0:
        rho = float(pair[:, 1, 1].sum()) / rho_den
    else:
        rho = prev_params.rho if prev_params is not None else 0.5
        logger.warning("no mass on flooded parent products; rho kept at %g", rho)

    leaves = tree.leaves
    if leaves.size:
        pi = float(post.node_marginal[leaves, 1].mean())
    else:
        pi = prev_params.pi if prev_params is not None else 0.5
        logger.warning("empty leaf set; pi kept at %g", pi)

    x = features if features is not None else frame.features[tree.cell_of_node]
    m = x.shape[1]
    mu = np.zeros((2, m))
    sigma = np.zeros((2, m, m))
    for c in (0, 1):
        w = post.node_marginal[:, c]
        wsum = float(w.sum())
        if wsum <= 0.0:
            if prev_params is None:
                raise NumericError(f"class {c} received zero posterior mass")
            logger.warning("class %d received zero posterior mass; Gaussian kept", c)
            mu[c] = prev_params.mu[c]
            sigma[c] = prev_params.sigma[c]
            continue
        mu[c] = (w[:, None] * x).sum(axis=0) / wsum
        d = x - mu[c]
        sigma[c] = _eig_floor((w[:, None] * d).T @ d / wsum, var_floor)
    return make_params(rho=rho, pi=pi, mu=mu, sigma=sigma)


def initialize_from_samples(
    train_x: np.ndarray,
    train_y: np.ndarray,
    init_pi: float = 0.5,
    init_rho: float = 0.99,
) -> HmtParams:
    """Per-class maximum-likelihood Gaussians from labeled samples."""
    train_x = np.asarray(train_x, dtype=np.float64)
    if train_x.ndim == 1:
        train_x = train_x.reshape(-1, 1)
    train_y = np.asarray(train_y).reshape(-1)
    m = train_x.shape[1]
    mu = np.zeros((2, m))
    sigma = np.zeros((2, m, m))
    for c in (0, 1):
        xc = train_x[train_y == c]
        if xc.shape[0] < m + 1:
            raise InitializationError(
                f"class {c} has {xc.shape[0]} training samples; need at least {m + 1}"
            )
        mu[c] = xc.mean(axis=0)
        d = xc - mu[c]
        sigma[c] = d.T @ d / xc.shape[0]
    return make_params(rho=init_rho, pi=init_pi, mu=mu, sigma=sigma)


def initialize(
    frame: RasterFrame,
    labels: np.ndarray | None = None,
    init_pi: float = 0.5,
    init_rho: float = 0.99,
) -> HmtParams:
    """Initialize from label records (or the frame's own labels)."""
    if labels is not None:
        records = np.asarray(labels, dtype=np.int64).reshape(-1, 3)
        cells = records[:, 0] * frame.n_cols + records[:, 1]
        x = frame.features[cells]
        y = records[:, 2]
    elif frame.labels is not None:
        cells = np.flatnonzero(frame.labels != UNLABELED)
        x = frame.features[cells]
        y = frame.labels[cells]
    else:
        raise InitializationError("no training labels available")
    return initialize_from_samples(x, y, init_pi=init_pi, init_rho=init_rho)


def em_fit(
    tree: DependencyTree,
    frame: RasterFrame,
    train: np.ndarray | tuple[np.ndarray, np.ndarray] | None = None,
    epsilon: float = 1e-5,
    max_iters: int = 100,
    init_pi: float = 0.5,
    init_rho: float = 0.99,
    params0: HmtParams | None = None,
    clamp_labels: bool = False,
) -> EmResult:
    """Iterate message propagation and closed-form updates to convergence.

    Training labels feed the initialization only; they are not clamped
    during the iterations unless ``clamp_labels`` is set, in which case
    labeled nodes have the opposite class's emission zeroed (exact
    conditioning on the observed labels).

    Convergence is the max absolute change across all scalar
    parameters falling to ``epsilon`` or below. The trace records, per
    iteration, the updated pi and rho and the observed-data log
    likelihood of the parameters the iteration started from.
    """
    if params0 is not None:
        params = params0
    elif isinstance(train, tuple):
        params = initialize_from_samples(train[0], train[1], init_pi=init_pi, init_rho=init_rho)
    else:
        params = initialize(frame, train, init_pi=init_pi, init_rho=init_rho)

    clamp_nodes = None
    clamp_classes = None
    if clamp_labels and frame.labels is not None:
        labeled_cells = np.flatnonzero(frame.labels != UNLABELED)
        nodes = tree.node_of_cell[labeled_cells]
        keep = nodes >= 0
        clamp_nodes = nodes[keep]
        clamp_classes = frame.labels[labeled_cells][keep].astype(np.int64)

    # hoist the node-aligned features and reuse all per-iteration
    # buffers; fresh half-gigabyte allocations every iteration would
    # dominate the runtime at large N
    features = frame.features[tree.cell_of_node]
    var_floor = VAR_FLOOR_REL * float(np.mean(features.var(axis=0)))
    log_e = np.empty((tree.node_count, 2))
    table = _empty_table(tree.node_count)
    post = PosteriorTable(
        node_marginal=np.zeros((tree.node_count, 2)),
        pair_marginal=np.zeros((tree.node_count, 2, 2)),
    )

    trace: list[tuple[int, float, float, float]] = []
    converged = False
    for it in range(1, max_iters + 1):
        log_emission_field(params, features, out=log_e)
        if clamp_nodes is not None and clamp_nodes.size:
            log_e[clamp_nodes, 1 - clamp_classes] = -np.inf
        _, _, loglik = e_step(tree, frame, params, log_e=log_e, table=table, post=post)
        new_params = m_step(tree, frame, post, prev_params=params,
                            var_floor=var_floor, features=features)
        delta = float(np.max(np.abs(new_params.flat() - params.flat())))
        params = new_params
        trace.append((it, params.pi, params.rho, loglik))
        if delta <= epsilon:
            converged = True
            break
    if not converged and epsilon >= 0.0:
        logger.warning("EM did not converge in %d iterations", max_iters)
    return EmResult(params=params, trace=trace, converged=converged)


def expected_complete_loglik(
    tree: DependencyTree,
    frame: RasterFrame,
    post: PosteriorTable,
    params: HmtParams,
) -> float:
    """Posterior expectation of the complete-data log likelihood.

    The M-step maximizes this with the posteriors frozen; exposed so
    tests can probe that property directly.
    """
    le = log_emission_field(params, frame.features[tree.cell_of_node])
    total = float((post.node_marginal * le).sum())
    leaves = tree.leaves
    lp = np.array([np.log1p(-params.pi), np.log(params.pi)])
    total += float((post.node_marginal[leaves] * lp).sum())
    pair = post.pair_marginal
    total += float(pair[:, 1, 1].sum()) * float(np.log(params.rho))
    total += float(pair[:, 0, 1].sum()) * float(np.log1p(-params.rho))
    # (y=0, q=0) carries log 1 = 0; (y=1, q=0) has zero posterior mass
    return total
