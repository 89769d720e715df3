import itertools
from pathlib import Path

import numpy as np
import pytest

from concrete_autoencoder.dataio import Dataset, SplitSpec, normalize_fit_apply, split

DATA_DIR = Path(__file__).resolve().parent.parent / "data"
MNIST_IMAGES = DATA_DIR / "mnist10k-images-idx3-ubyte.gz"
MNIST_LABELS = DATA_DIR / "mnist10k-labels-idx1-ubyte.gz"

# one mixing matrix shared by every seed of the synthetic task
_MIX = np.random.default_rng(2024).standard_normal((3, 7))


def synthetic_matrix(seed, n=2000, noise=0.01):
    """Three N(0, 1) generators followed by seven noisy linear combinations."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, 3))
    return np.hstack([g, g @ _MIX + noise * rng.standard_normal((n, 7))])


def synthetic_splits(seed, n=2000):
    """72/8/20 split of the synthetic task, min-max scaled on the train rows."""
    train, val, test = split(Dataset(synthetic_matrix(seed, n)), SplitSpec(seed=seed))
    train, val, test, _ = normalize_fit_apply(train, val, test, kind="minmax")
    return train.features, val.features, test.features


def subset_mse(train, test, subset):
    """Least-squares (with intercept) reconstruction error, via numpy's lstsq."""
    subset = list(subset)
    design = np.hstack([train[:, subset], np.ones((len(train), 1))])
    coef = np.linalg.lstsq(design, train, rcond=None)[0]
    pred = np.hstack([test[:, subset], np.ones((len(test), 1))]) @ coef
    return float(np.mean((pred - test) ** 2))


def exhaustive_best(train, test, k):
    """Brute-force oracle: the best k-subset under closed-form least squares."""
    scores = {s: subset_mse(train, test, s)
              for s in itertools.combinations(range(train.shape[1]), k)}
    best = min(scores, key=scores.get)
    return best, scores[best], scores


def mnist_available():
    return MNIST_IMAGES.exists() and MNIST_LABELS.exists()


requires_mnist = pytest.mark.skipif(not mnist_available(), reason="MNIST IDX files not present")


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
