import numpy as np
import pytest

from causalvd.data import CategoryMap, Dataset


def make_dataset(rng, n, J, K, p, outcome_kind="binary", fill=True):
    """Random dataset; with ``fill`` every (a, z) cell gets at least two rows."""
    x = rng.normal(size=(n, p))
    a = rng.integers(1, J + 1, size=n)
    z = rng.integers(1, K + 1, size=n)
    if fill:
        cells = np.array([(i, k) for i in range(1, J + 1) for k in range(1, K + 1)] * 2)
        a[: len(cells)] = cells[:, 0]
        z[: len(cells)] = cells[:, 1]
    if outcome_kind == "binary":
        lin = 0.3 * x.sum(axis=1) + 0.2 * a - 0.3 * z + rng.normal(scale=0.5, size=n)
        y = (rng.random(n) < 1 / (1 + np.exp(-lin))).astype(float)
        # keep both outcomes in every cell so the logistic MLE exists
        for i in range(J):
            for k in range(K):
                idx = np.flatnonzero((a == i + 1) & (z == k + 1))
                y[idx[0]], y[idx[1]] = 0.0, 1.0
    else:
        y = x.sum(axis=1) + 0.5 * a - 0.2 * z + rng.normal(size=n)
    return Dataset(
        y=y, a=a, z=z, x=x, outcome_kind=outcome_kind,
        hospitals=CategoryMap("h", tuple(f"H{j}" for j in range(1, J + 1))),
        groups=CategoryMap("g", tuple(f"G{k}" for k in range(1, K + 1))),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
