"""Shared fixtures: MNIST IDX discovery and a deterministic digits split.

The MNIST-gated tests look for the four classic IDX files (optionally
gzipped) under $SAFEOPT_MNIST_DIR, falling back to ./data/mnist. When the
files are absent those tests skip with an explicit message instead of
failing; the digits-based analogues next to them always run.
"""

import os
from pathlib import Path

import numpy as np
import pytest

from safeopt.models_data import Dataset, subset

IDX_NAMES = (
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
)


def _resolve_idx(directory: Path, stem: str):
    for cand in (directory / stem, directory / f"{stem}.gz"):
        if cand.is_file():
            return cand
    return None


def find_mnist_dir():
    """Directory holding all four IDX files, or None."""
    candidates = []
    env = os.environ.get("SAFEOPT_MNIST_DIR")
    if env:
        candidates.append(Path(env))
    candidates.append(Path("data") / "mnist")
    for d in candidates:
        if d.is_dir() and all(_resolve_idx(d, s) is not None for s in IDX_NAMES):
            return d
    return None


@pytest.fixture(scope="session")
def mnist_files():
    """Dict of resolved IDX paths, or a skip if the files are not present."""
    d = find_mnist_dir()
    if d is None:
        pytest.skip(
            "MNIST IDX files not found (set SAFEOPT_MNIST_DIR or place the "
            "four train/t10k ubyte files under ./data/mnist)")
    return {stem: _resolve_idx(d, stem) for stem in IDX_NAMES}


@pytest.fixture(scope="session")
def digits_split():
    """Deterministic 1437/360 split of the 8x8 digits set, inputs in [0, 1]."""
    sklearn_datasets = pytest.importorskip("sklearn.datasets")
    bunch = sklearn_datasets.load_digits()
    X = bunch.data / 16.0
    y = bunch.target.astype(np.int64)
    full = Dataset(inputs=X, labels=y, n_classes=10, name="digits")
    perm = np.random.default_rng(0).permutation(len(y))
    train = subset(full, perm[:1437], split="train")
    test = subset(full, perm[1437:], split="test")
    return train, test
