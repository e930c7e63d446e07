"""Model parameters and probability kernels.

The generative story: each tree node carries a binary class (1 = flood,
0 = dry). Leaf classes follow a Bernoulli prior; a non-leaf class is
conditioned on the product of its parents' classes (any dry parent
forces a dry child; an all-flood parent set floods the child with
probability ``rho``). Features are class-conditional Gaussians.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GridFormatError, NumericError
from .raster import RasterFrame
from .tree import DependencyTree

PROB_FLOOR = 1e-6

COV_JITTER = 1e-6

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class HmtParams:
    """Parameter set: transition rho, leaf prior pi, class Gaussians."""

    rho: float
    pi: float
    mu: np.ndarray     # (2, m)
    sigma: np.ndarray  # (2, m, m)

    @property
    def n_bands(self) -> int:
        return self.mu.shape[1]

    def flat(self) -> np.ndarray:
        """All scalar parameters in one vector (for convergence norms)."""
        return np.concatenate(
            [[self.pi, self.rho], self.mu.reshape(-1), self.sigma.reshape(-1)]
        )


def clamp_prob(p: float) -> float:
    return float(min(max(p, PROB_FLOOR), 1.0 - PROB_FLOOR))


def make_params(rho: float, pi: float, mu, sigma) -> HmtParams:
    """Normalize shapes, clamp probabilities, ensure factorizable covariances."""
    mu = np.asarray(mu, dtype=np.float64).reshape(2, -1)
    m = mu.shape[1]
    sigma = np.asarray(sigma, dtype=np.float64).reshape(2, m, m)
    sigma = np.stack([_ensure_factorizable(sigma[c])[0] for c in (0, 1)])
    return HmtParams(rho=clamp_prob(rho), pi=clamp_prob(pi), mu=mu, sigma=sigma)


def _ensure_factorizable(sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (possibly jittered) covariance and its Cholesky factor.

    One regularization retry: add ``COV_JITTER * mean(diag) * I`` and
    factor again; still failing is a numeric error.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    try:
        return sigma, np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        pass
    scale = float(np.mean(np.diag(sigma)))
    if not np.isfinite(scale) or scale <= 0.0:
        scale = 1.0
    jittered = sigma + COV_JITTER * scale * np.eye(sigma.shape[0])
    try:
        return jittered, np.linalg.cholesky(jittered)
    except np.linalg.LinAlgError as exc:
        raise NumericError("covariance not positive definite after regularization") from exc


def log_emission_field(params: HmtParams, x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """Gaussian log density of every row of ``x`` under both classes -> (n, 2)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    n, m = x.shape
    if m != params.n_bands:
        raise NumericError(f"feature length {m} does not match model bands {params.n_bands}")
    if out is None:
        out = np.empty((n, 2), dtype=np.float64)
    for c in (0, 1):
        sigma, chol = _ensure_factorizable(params.sigma[c])
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        d = x - params.mu[c]
        # triangular solve via inverse of the small factor; m is tiny
        z = d @ np.linalg.inv(chol).T
        quad = np.einsum("ni,ni->n", z, z)
        out[:, c] = -0.5 * (quad + m * LOG_2PI + logdet)
    return out


def log_emission(params: HmtParams, x: np.ndarray, c: int) -> float:
    """Log Gaussian density of one feature vector under class ``c``."""
    return float(log_emission_field(params, np.asarray(x, dtype=np.float64).reshape(1, -1))[0, c])


def log_transition(c_child: int, parent_product: int, params: HmtParams) -> float:
    """Log class-transition probability given the parent product.

    The empty-product convention makes (child=0, product=0) certain;
    (child=1, product=0) is infeasible and returns -inf.
    """
    if parent_product == 0:
        return 0.0 if c_child == 0 else float("-inf")
    return float(np.log(params.rho)) if c_child == 1 else float(np.log1p(-params.rho))


def log_leaf_prior(c: int, params: HmtParams) -> float:
    return float(np.log(params.pi)) if c == 1 else float(np.log1p(-params.pi))


def node_labels(tree: DependencyTree, labels) -> np.ndarray:
    """Accept a ClassMap or a cell-aligned label array; return per-node labels."""
    arr = np.asarray(getattr(labels, "labels", labels))
    return arr.reshape(-1)[tree.cell_of_node].astype(np.int64)


def log_joint(tree: DependencyTree, frame: RasterFrame, labels, params: HmtParams) -> float:
    """Joint log probability of features and a full labeling.

    -inf exactly when the labeling violates the partial-order
    constraint (a flooded node with a dry parent).
    """
    y = node_labels(tree, labels)
    if y.min() < 0 or y.max() > 1:
        raise ValueError("labels must assign 0 or 1 to every node")
    le = log_emission_field(params, frame.features[tree.cell_of_node])
    total = float(le[np.arange(tree.node_count), y].sum())

    counts = tree.parent_counts
    leaf = counts == 0
    n_leaf1 = int(y[leaf].sum())
    total += n_leaf1 * float(np.log(params.pi))
    total += int(leaf.sum() - n_leaf1) * float(np.log1p(-params.pi))

    nonleaf = np.flatnonzero(~leaf)
    if nonleaf.size:
        q = np.minimum.reduceat(y[tree.parent_idx], tree.parent_ptr[nonleaf])
        yn = y[nonleaf]
        if np.any((yn == 1) & (q == 0)):
            return float("-inf")
        n11 = int(((yn == 1) & (q == 1)).sum())
        n01 = int(((yn == 0) & (q == 1)).sum())
        total += n11 * float(np.log(params.rho)) + n01 * float(np.log1p(-params.rho))
    return total


def save_params(params: HmtParams, path: str | Path) -> None:
    """Plain-text key/value dump (pi, rho, mu0, mu1, sigma0, sigma1)."""
    def csv(a: np.ndarray) -> str:
        return ",".join(f"{v:.17g}" for v in np.asarray(a).reshape(-1))

    with Path(path).open("w") as fh:
        fh.write(f"pi {params.pi:.17g}\n")
        fh.write(f"rho {params.rho:.17g}\n")
        fh.write(f"mu0 {csv(params.mu[0])}\n")
        fh.write(f"mu1 {csv(params.mu[1])}\n")
        fh.write(f"sigma0 {csv(params.sigma[0])}\n")
        fh.write(f"sigma1 {csv(params.sigma[1])}\n")


def load_params(path: str | Path) -> HmtParams:
    path = Path(path)
    fields: dict[str, np.ndarray] = {}
    with path.open("r") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split(None, 1)
            if len(parts) != 2:
                raise GridFormatError(f"{path}: line {lineno}: expected '<key> <values>'")
            key, raw = parts[0].lower(), parts[1]
            try:
                fields[key] = np.array([float(t) for t in raw.replace(",", " ").split()])
            except ValueError as exc:
                raise GridFormatError(f"{path}: line {lineno}: non-numeric value") from exc
    required = ("pi", "rho", "mu0", "mu1", "sigma0", "sigma1")
    missing = [k for k in required if k not in fields]
    if missing:
        raise GridFormatError(f"{path}: missing parameter keys: {', '.join(missing)}")
    m = fields["mu0"].size
    if fields["mu1"].size != m or fields["sigma0"].size != m * m or fields["sigma1"].size != m * m:
        raise GridFormatError(f"{path}: inconsistent parameter dimensions")
    return make_params(
        rho=float(fields["rho"][0]),
        pi=float(fields["pi"][0]),
        mu=np.stack([fields["mu0"], fields["mu1"]]),
        sigma=np.stack([fields["sigma0"].reshape(m, m), fields["sigma1"].reshape(m, m)]),
    )
