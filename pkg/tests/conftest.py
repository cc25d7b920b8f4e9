"""Shared fixtures: real-dataset discovery and session-scoped corpora."""

import os
from pathlib import Path

import pytest

MNIST_FILES = {
    "train_images": ("train-images-idx3-ubyte", "train-images-idx3-ubyte.gz"),
    "train_labels": ("train-labels-idx1-ubyte", "train-labels-idx1-ubyte.gz"),
    "test_images": ("t10k-images-idx3-ubyte", "t10k-images-idx3-ubyte.gz"),
    "test_labels": ("t10k-labels-idx1-ubyte", "t10k-labels-idx1-ubyte.gz"),
}


def mnist_dir() -> Path | None:
    """Directory holding the official IDX files, if present.

    Looked up in $SPIKECONV_DATA, then ./data/mnist. All four files must
    exist (plain or gzipped).
    """
    candidates = []
    env = os.environ.get("SPIKECONV_DATA")
    if env:
        candidates.append(Path(env))
        candidates.append(Path(env) / "mnist")
    candidates.append(Path("data") / "mnist")
    for root in candidates:
        if not root.is_dir():
            continue
        if all(any((root / n).is_file() for n in names) for names in MNIST_FILES.values()):
            return root
    return None


def mnist_path(root: Path, key: str) -> Path:
    for name in MNIST_FILES[key]:
        if (root / name).is_file():
            return root / name
    raise FileNotFoundError(key)


requires_mnist = pytest.mark.skipif(
    mnist_dir() is None,
    reason="real MNIST IDX files not found (set SPIKECONV_DATA or place them in ./data/mnist)",
)


@pytest.fixture(scope="session")
def mnist_root():
    root = mnist_dir()
    if root is None:
        pytest.skip("real MNIST IDX files not found (set SPIKECONV_DATA or ./data/mnist)")
    return root


REPO_ROOT = Path(__file__).resolve().parent.parent
CONFIG_DIR = REPO_ROOT / "configs"


@pytest.fixture(scope="session")
def desk_run():
    """One trained ten-class desk model, shared across the session.

    Returns (config, model, train, test). Training is seeded, so every
    test sees the same artifact; tests must not mutate it.
    """
    from spikeconv.config import load_config
    from spikeconv.pipeline import build, resolve_dataset, train_all

    cfg = load_config(CONFIG_DIR / "synth_desk.json")
    train, test = resolve_dataset(cfg.dataset, cfg.seed)
    net = build(cfg, input_hw=train.image(0).shape)
    model = train_all(net, train)
    return cfg, model, train, test


@pytest.fixture(scope="session")
def two_class_run():
    """Trained two-class desk model: (config, model, train, test)."""
    from spikeconv.config import load_config
    from spikeconv.pipeline import build, resolve_dataset, train_all

    cfg = load_config(CONFIG_DIR / "synth_two_class.json")
    train, test = resolve_dataset(cfg.dataset, cfg.seed)
    net = build(cfg, input_hw=train.image(0).shape)
    model = train_all(net, train)
    return cfg, model, train, test
