import os

import numpy as np
import pytest

from dfdx import gbt


def random_ensemble(rng, n_features, n_trees, depth, n_rows=60, nan_frac=0.0, subsample=1.0):
    """Fit a small ensemble on random data so that covers are genuine."""
    X = rng.normal(size=(n_rows, n_features))
    X = np.round(X, 1)  # repeated values exercise ties
    if nan_frac:
        X[rng.random(X.shape) < nan_frac] = np.nan
    y = rng.normal(size=n_rows) + np.nan_to_num(X[:, 0]) * 2
    hp = gbt.Hyperparams(n_trees=n_trees, max_depth=depth, learning_rate=float(rng.uniform(0.1, 1)),
                         min_child_weight=0.0, l2_leaf_penalty=float(rng.uniform(0, 2)),
                         row_subsample=subsample, rng_seed=int(rng.integers(1 << 30)))
    return gbt.fit(X, y, hp), X


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_collection_modifyitems(config, items):
    if os.environ.get("DFDX_DATA_DIR"):
        return
    skip = pytest.mark.skip(reason="set DFDX_DATA_DIR to run the online-data suite")
    for item in items:
        if "online" in item.keywords:
            item.add_marker(skip)


# acceptance verdict lines, echoed in the terminal summary
VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
