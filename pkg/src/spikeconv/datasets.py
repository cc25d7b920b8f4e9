"""Dataset ingestion: IDX (MNIST-style) files and labeled image folders.

Both loaders produce the same `Dataset` shape: per-sample sources that
decode to grayscale float images on demand, dense integer labels, and a
content digest over the exact bytes that were read, so any corpus change
is visible in run provenance.
"""

from __future__ import annotations

import gzip
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoding import preprocess
from .errors import ConfigError, DataError

__all__ = [
    "Dataset",
    "SplitSpec",
    "load_idx",
    "write_idx",
    "load_folder",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Labeled grayscale samples with deterministic identity.

    `sources` holds one entry per sample: a uint8 raster for IDX data or a
    file path for folder data. `image(i)` decodes to float64 in [0, 1],
    rescaled to `target_height` when set. Labels are dense class indices
    into `class_names`.
    """

    sources: list
    labels: np.ndarray
    class_names: list[str]
    split: str
    digest: str
    target_height: int | None = None

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.sources) != len(self.labels):
            raise DataError(f"{len(self.sources)} sources vs {len(self.labels)} labels")
        k = len(self.class_names)
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= k):
            raise DataError(f"labels must lie in 0..{k - 1}")

    def __len__(self) -> int:
        return len(self.sources)

    def image(self, i: int) -> np.ndarray:
        src = self.sources[i]
        if isinstance(src, Path):
            return preprocess(src.read_bytes(), self.target_height)
        return preprocess(src, self.target_height)

    def subset(self, classes, per_class: int | None = None, seed: int = 0) -> "Dataset":
        """Restrict to the given class names, relabeled densely.

        With `per_class`, a seeded per-class sample of that size is kept
        (deterministic for a given seed). The digest is re-derived from
        the parent digest and the exact selection.
        """
        keep = [self.class_names.index(c) for c in classes]
        remap = {old: new for new, old in enumerate(keep)}
        picked: list[int] = []
        for old in keep:
            idx = np.flatnonzero(self.labels == old)
            if per_class is not None:
                if per_class > idx.size:
                    raise ConfigError(
                        f"class {self.class_names[old]!r} has {idx.size} samples, need {per_class}"
                    )
                rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(old,)))
                idx = np.sort(rng.choice(idx, size=per_class, replace=False))
            picked.extend(int(i) for i in idx)
        h = hashlib.sha256(self.digest.encode())
        h.update(json.dumps([picked, list(classes)]).encode())
        return Dataset(
            sources=[self.sources[i] for i in picked],
            labels=np.array([remap[int(self.labels[i])] for i in picked]),
            class_names=list(classes),
            split=self.split,
            digest=h.hexdigest(),
            target_height=self.target_height,
        )


@dataclass(frozen=True)
class SplitSpec:
    """Per-class train/test split: a fixed count or a fraction, seeded."""

    train_count: int | None = None
    train_fraction: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if (self.train_count is None) == (self.train_fraction is None):
            raise ConfigError("set exactly one of train_count or train_fraction")
        if self.train_count is not None and self.train_count < 1:
            raise ConfigError(f"train_count must be >= 1, got {self.train_count}")
        if self.train_fraction is not None and not (0.0 < self.train_fraction < 1.0):
            raise ConfigError(f"train_fraction must be in (0, 1), got {self.train_fraction}")


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            return gzip.decompress(raw)
        except OSError as e:
            raise DataError(f"corrupt gzip stream in {path}: {e}") from e
    return raw


def _idx_header(buf: bytes, path, magic: int, n_dims: int) -> tuple[tuple[int, ...], int]:
    head = 4 + 4 * n_dims
    if len(buf) < head:
        raise DataError(f"{path}: truncated header, {len(buf)} bytes")
    got = struct.unpack(">I", buf[:4])[0]
    if got != magic:
        raise DataError(f"{path}: magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{n_dims}I", buf[4:head])
    return dims, head


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Parse an IDX image/label file pair (gzipped or plain).

    The format is fully validated: big-endian magics 0x00000803 and
    0x00000801, 32-bit dimension sizes, and exact payload lengths. Image
    and label counts must match. The digest covers the on-disk bytes of
    both files.
    """
    img_raw = _read_bytes(images_path)
    lab_raw = _read_bytes(labels_path)

    (n, rows, cols), off = _idx_header(img_raw, images_path, IDX_IMAGES_MAGIC, 3)
    expect = off + n * rows * cols
    if len(img_raw) != expect:
        raise DataError(
            f"{images_path}: payload is {len(img_raw)} bytes, expected {expect} "
            f"for {n} images of {rows}x{cols}"
        )
    images = np.frombuffer(img_raw, dtype=np.uint8, count=n * rows * cols, offset=off)
    images = images.reshape(n, rows, cols)

    (n_labels,), loff = _idx_header(lab_raw, labels_path, IDX_LABELS_MAGIC, 1)
    if len(lab_raw) != loff + n_labels:
        raise DataError(
            f"{labels_path}: payload is {len(lab_raw)} bytes, expected {loff + n_labels}"
        )
    labels = np.frombuffer(lab_raw, dtype=np.uint8, count=n_labels, offset=loff).astype(np.int64)
    if n_labels != n:
        raise DataError(f"{n} images but {n_labels} labels")

    h = hashlib.sha256()
    h.update(Path(images_path).read_bytes())
    h.update(Path(labels_path).read_bytes())
    k = int(labels.max()) + 1 if n else 0
    return Dataset(
        sources=list(images),
        labels=labels,
        class_names=[str(i) for i in range(k)],
        split=split,
        digest=h.hexdigest(),
    )


def write_idx(images_path, labels_path, images: np.ndarray, labels) -> None:
    """Write a uint8 image stack and labels as a plain IDX file pair."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    labels = np.asarray(labels)
    if images.ndim != 3:
        raise DataError(f"images must be (n, rows, cols), got shape {images.shape}")
    if len(labels) != images.shape[0]:
        raise DataError(f"{images.shape[0]} images vs {len(labels)} labels")
    n, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(labels.astype(np.uint8).tobytes())


def _folder_classes(root: Path) -> list[tuple[str, list[Path]]]:
    classes = sorted(p for p in root.iterdir() if p.is_dir())
    if not classes:
        raise DataError(f"{root}: no class directories")
    out = []
    for cdir in classes:
        files = sorted(p for p in cdir.iterdir() if p.is_file())
        if not files:
            raise ConfigError(f"class directory {cdir} is empty")
        out.append((cdir.name, files))
    return out


def _dataset_from_files(per_class, class_names, split, root, target_height) -> Dataset:
    sources, labels = [], []
    h = hashlib.sha256()
    for label, files in enumerate(per_class):
        for f in sorted(files):
            h.update(str(f.relative_to(root)).encode())
            h.update(hashlib.sha256(f.read_bytes()).digest())
            h.update(bytes([label]))
            sources.append(f)
            labels.append(label)
    return Dataset(
        sources=sources,
        labels=np.array(labels, dtype=np.int64),
        class_names=class_names,
        split=split,
        digest=h.hexdigest(),
        target_height=target_height,
    )


def load_folder(
    root,
    split: SplitSpec | None = None,
    *,
    target_height: int | None = None,
    manifest=None,
) -> tuple[Dataset, Dataset]:
    """Split a directory-per-class image tree into train and test sets.

    The per-class membership is drawn with a seeded generator keyed by
    (seed, class index), so a given spec always produces the same split.
    Alternatively `manifest` names explicit train/test file lists (JSON
    with "train" and "test" arrays of paths relative to root), which
    covers leave-instances-out protocols without bespoke code.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"no such dataset directory: {root}")
    classes = _folder_classes(root)
    names = [c for c, _ in classes]

    if manifest is not None:
        chosen = json.loads(Path(manifest).read_text())
        for key in ("train", "test"):
            if key not in chosen:
                raise ConfigError(f"manifest {manifest} lacks a {key!r} list")
        sets = {k: [root / p for p in chosen[k]] for k in ("train", "test")}
        overlap = set(sets["train"]) & set(sets["test"])
        if overlap:
            raise ConfigError(f"manifest train/test overlap: {sorted(overlap)[:3]}")
        for k, files in sets.items():
            for f in files:
                if not f.is_file():
                    raise DataError(f"manifest {k} file missing: {f}")
        by_class = {name: set(files) for name, files in classes}
        out = []
        for k in ("train", "test"):
            per_class = [[f for f in sets[k] if f in by_class[name]] for name in names]
            if sum(len(p) for p in per_class) != len(sets[k]):
                raise ConfigError(f"manifest {k} names files outside the class tree")
            out.append(_dataset_from_files(per_class, names, k, root, target_height))
        return out[0], out[1]

    if split is None:
        raise ConfigError("load_folder needs a SplitSpec or a manifest")
    train_pc, test_pc = [], []
    for ci, (name, files) in enumerate(classes):
        n = len(files)
        if split.train_count is not None:
            n_train = split.train_count
            if n_train >= n:
                raise ConfigError(
                    f"class {name!r}: train_count {n_train} leaves no test samples of {n}"
                )
        else:
            n_train = min(n - 1, max(1, round(split.train_fraction * n)))
        rng = np.random.default_rng(np.random.SeedSequence(entropy=split.seed, spawn_key=(ci,)))
        order = rng.permutation(n)
        train_pc.append([files[i] for i in sorted(order[:n_train])])
        test_pc.append([files[i] for i in sorted(order[n_train:])])
    return (
        _dataset_from_files(train_pc, names, "train", root, target_height),
        _dataset_from_files(test_pc, names, "test", root, target_height),
    )
