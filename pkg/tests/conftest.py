import numpy as np
import pytest

import floodtree as ft


def make_frame(elev, features=None, labels=None, valid_mask=None):
    elev = np.asarray(elev, dtype=np.float64)
    if features is None:
        features = np.zeros(elev.shape)
    return ft.frame_from_arrays(elev, features=features, labels=labels, valid_mask=valid_mask)


def random_instance(rng, max_cells=12, masked=False, m=1,
                    rho_range=(0.05, 0.95), pi_range=(0.05, 0.95)):
    """Random small frame + tree + feasible parameters.

    Grid shapes are drawn so the valid-cell count stays at or below
    ``max_cells``; with ``masked`` some cells go invalid, exercising
    multi-component forests.
    """
    while True:
        rows = int(rng.integers(1, 5))
        cols = int(rng.integers(1, 7))
        if 2 <= rows * cols <= max_cells:
            break
    n = rows * cols
    elev = rng.normal(size=(rows, cols))
    valid = None
    if masked and n >= 4:
        valid = np.ones(n, dtype=bool)
        k = int(rng.integers(1, max(2, n // 3)))
        drop = rng.choice(n, size=k, replace=False)
        valid[drop] = False
        if not valid.any():
            valid[0] = True
    mu = np.stack([rng.normal(0, 1, size=m), rng.normal(1.5, 1, size=m)])
    a = rng.normal(size=(m, m))
    sigma = np.stack([a @ a.T + np.eye(m), 0.5 * (a @ a.T) + 1.5 * np.eye(m)])
    y = rng.integers(0, 2, size=n)
    x = mu[y] + rng.normal(0, 1.0, size=(n, m))
    frame = ft.frame_from_arrays(elev, features=x, valid_mask=valid)
    tree = ft.build_tree(frame)
    params = ft.make_params(
        rho=float(rng.uniform(*rho_range)),
        pi=float(rng.uniform(*pi_range)),
        mu=mu,
        sigma=sigma,
    )
    return frame, tree, params


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
