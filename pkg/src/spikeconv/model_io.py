"""Versioned binary model container.

Layout: 8 magic bytes, u32 little-endian version, u64 little-endian
header length, a canonical JSON header (sorted keys, no whitespace), then
the raw tensor payload: float32 little-endian C-order arrays in header
order. Everything influencing bytes is deterministic, so the same seed
yields the same file, byte for byte.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifier import LinearModel
from .config import NetworkConfig, config_to_json, parse_config
from .errors import ModelFormatError, UnsupportedVersionError

__all__ = ["TrainedModel", "save_model", "load_model", "MAGIC", "VERSION"]

MAGIC = b"SPKMODEL"
VERSION = 1


@dataclass
class TrainedModel:
    """Everything a run produced: weights, classifier, provenance.

    `conv_weights` are float32, one tensor per conv layer in network
    order. `provenance` is JSON-safe: seed, dataset digests, per-layer
    training records (iterations, converged, final index, sequence
    counters proving training order), and any warnings. Per-layer
    convergence trajectories ride along as float32 arrays.
    """

    config: NetworkConfig
    conv_weights: list
    classifier: LinearModel | None
    provenance: dict
    trajectories: list = field(default_factory=list)

    def freeze_check(self) -> None:
        for i, w in enumerate(self.conv_weights):
            if w.dtype != np.float32:
                raise ModelFormatError(f"conv weights {i} must be float32, got {w.dtype}")


def _f32(arr) -> np.ndarray:
    return np.ascontiguousarray(arr, dtype=np.float32)


def save_model(model: TrainedModel, path) -> None:
    """Write the container atomically; a failed write leaves no file."""
    model.freeze_check()
    tensors: list[tuple[str, np.ndarray]] = []
    for i, w in enumerate(model.conv_weights):
        tensors.append((f"conv/{i}/weights", _f32(w)))
    for i, t in enumerate(model.trajectories):
        tensors.append((f"trajectory/{i}", _f32(t)))
    clf = model.classifier
    if clf is not None:
        tensors.append(("classifier/weights", _f32(clf.weights)))
        tensors.append(("classifier/bias", _f32(clf.bias)))
        tensors.append(("classifier/feature_mean", _f32(clf.feature_mean)))
        tensors.append(("classifier/feature_scale", _f32(clf.feature_scale)))

    header = {
        "config": json.loads(config_to_json(model.config)),
        "provenance": model.provenance,
        "classifier_classes": None
        if clf is None
        else [int(c) for c in clf.classes],
        "tensors": [
            {"name": name, "shape": list(arr.shape)} for name, arr in tensors
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()

    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", VERSION))
            f.write(struct.pack("<Q", len(blob)))
            f.write(blob)
            for _, arr in tensors:
                f.write(arr.tobytes())
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


def load_model(path) -> TrainedModel:
    """Read and fully validate a container; never yields a partial model."""
    path = Path(path)
    if not path.is_file():
        raise ModelFormatError(f"no such model file: {path}")
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) + 12:
        raise ModelFormatError(f"{path}: {len(raw)} bytes is too short for a model file")
    if raw[: len(MAGIC)] != MAGIC:
        raise ModelFormatError(f"{path}: bad magic {raw[:8]!r}")
    (version,) = struct.unpack_from("<I", raw, len(MAGIC))
    if version != VERSION:
        raise UnsupportedVersionError(
            f"{path}: container version {version}, this build reads {VERSION}"
        )
    (hlen,) = struct.unpack_from("<Q", raw, len(MAGIC) + 4)
    off = len(MAGIC) + 12
    if len(raw) < off + hlen:
        raise ModelFormatError(f"{path}: truncated header ({len(raw)} bytes, need {off + hlen})")
    try:
        header = json.loads(raw[off : off + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"{path}: corrupt header: {e}") from e
    off += hlen
    for key in ("config", "provenance", "tensors"):
        if key not in header:
            raise ModelFormatError(f"{path}: header is missing {key!r}")

    arrays: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(int(s) for s in entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        nbytes = 4 * n
        if len(raw) < off + nbytes:
            raise ModelFormatError(
                f"{path}: truncated tensor {entry['name']!r} "
                f"(file has {len(raw) - off} of {nbytes} bytes)"
            )
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=off).reshape(shape)
        arrays[entry["name"]] = arr
        off += nbytes
    if off != len(raw):
        raise ModelFormatError(f"{path}: {len(raw) - off} trailing bytes after tensor payload")

    config = parse_config(header["config"])
    conv_weights = []
    i = 0
    while f"conv/{i}/weights" in arrays:
        conv_weights.append(arrays[f"conv/{i}/weights"])
        i += 1
    expected = len(config.conv_configs())
    if len(conv_weights) != expected:
        raise ModelFormatError(
            f"{path}: {len(conv_weights)} conv weight tensors for {expected} conv layers"
        )
    for w, (pos, lc) in zip(conv_weights, config.conv_configs()):
        if w.shape[0] != lc.spec.maps or w.shape[2:] != lc.spec.window:
            raise ModelFormatError(
                f"{path}: conv tensor shape {w.shape} does not match layer at position {pos}"
            )
    trajectories = []
    i = 0
    while f"trajectory/{i}" in arrays:
        trajectories.append(arrays[f"trajectory/{i}"])
        i += 1

    classifier = None
    if header.get("classifier_classes") is not None:
        for name in (
            "classifier/weights",
            "classifier/bias",
            "classifier/feature_mean",
            "classifier/feature_scale",
        ):
            if name not in arrays:
                raise ModelFormatError(f"{path}: header lists classes but no {name!r} tensor")
        classifier = LinearModel(
            classes=np.array(header["classifier_classes"], dtype=np.int64),
            weights=arrays["classifier/weights"],
            bias=arrays["classifier/bias"],
            feature_mean=arrays["classifier/feature_mean"],
            feature_scale=arrays["classifier/feature_scale"],
        )
    return TrainedModel(
        config=config,
        conv_weights=conv_weights,
        classifier=classifier,
        provenance=header["provenance"],
        trajectories=trajectories,
    )
