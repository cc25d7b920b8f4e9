"""Run configuration: strict JSON schema, shape inference, round-tripping.

A config names everything a run needs: the DoG front end, the layer
stack, per-conv learning constants, the classifier, the dataset, and one
seed. Parsing is fail-fast: unknown keys are rejected with their path so
a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .classifier import ClassifierParams
from .encoding import DogSpec
from .errors import ConfigError
from .network import ConvSpec, PoolSpec
from .plasticity import StdpParams, WeightInitSpec

__all__ = [
    "ConvLayerConfig",
    "PoolLayerConfig",
    "GlobalPoolConfig",
    "DatasetRef",
    "NetworkConfig",
    "parse_config",
    "config_to_json",
    "load_config",
    "shape_chain",
    "feature_dim",
]


@dataclass(frozen=True)
class ConvLayerConfig:
    spec: ConvSpec
    stdp: StdpParams


@dataclass(frozen=True)
class PoolLayerConfig:
    spec: PoolSpec


@dataclass(frozen=True)
class GlobalPoolConfig:
    pass


@dataclass(frozen=True)
class DatasetRef:
    """Where the samples come from.

    kind "idx": `path` is a directory with the four MNIST-layout files.
    kind "folder": `path` is a directory-per-class tree, split by
    `train_count` or `train_fraction` (seeded by the run seed) or by an
    explicit `manifest` file. kind "synthetic": a locally rendered digit
    corpus with `train_per_class`/`test_per_class`, for runs with no
    dataset on disk.

    `classes` restricts any kind to a class subset (labels re-densified);
    for idx and folder kinds `train_per_class`/`test_per_class` further
    subsample each split, which is how desk-scale profiles of a large
    corpus are expressed.
    """

    kind: str
    path: str | None = None
    train_count: int | None = None
    train_fraction: float | None = None
    manifest: str | None = None
    target_height: int | None = None
    train_per_class: int | None = None
    test_per_class: int | None = None
    classes: tuple | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("idx", "folder", "synthetic"):
            raise ConfigError(f"dataset.kind must be idx, folder or synthetic, got {self.kind!r}")
        if self.kind in ("idx", "folder") and not self.path:
            raise ConfigError(f"dataset.kind {self.kind!r} needs a path")
        if self.kind == "synthetic" and not (self.train_per_class and self.test_per_class):
            raise ConfigError("synthetic dataset needs train_per_class and test_per_class")
        if self.classes is not None:
            cl = tuple(self.classes)
            if len(cl) == 0:
                raise ConfigError("dataset.classes must not be empty")
            if any((not isinstance(c, int)) or c < 0 for c in cl):
                raise ConfigError(f"dataset.classes must be non-negative integers, got {cl}")
            if len(set(cl)) != len(cl):
                raise ConfigError(f"dataset.classes has duplicates: {cl}")
            object.__setattr__(self, "classes", cl)


@dataclass(frozen=True)
class NetworkConfig:
    seed: int
    time_steps: int
    dog: DogSpec
    layers: tuple
    weight_init: WeightInitSpec
    classifier: ClassifierParams
    dataset: DatasetRef

    def __post_init__(self) -> None:
        if self.time_steps < 1:
            raise ConfigError(f"time_steps must be >= 1, got {self.time_steps}")
        if not self.layers:
            raise ConfigError("layer list is empty")
        if not isinstance(self.layers[-1], GlobalPoolConfig):
            raise ConfigError("the last layer must be a global_pool")
        for i, layer in enumerate(self.layers[:-1]):
            if isinstance(layer, GlobalPoolConfig):
                raise ConfigError(f"layer {i}: global_pool may only be the final layer")
        if not any(isinstance(l, ConvLayerConfig) for l in self.layers):
            raise ConfigError("need at least one conv layer")

    def conv_configs(self) -> list[tuple[int, ConvLayerConfig]]:
        """(position in the layer list, conv config) for each conv layer."""
        return [(i, l) for i, l in enumerate(self.layers) if isinstance(l, ConvLayerConfig)]


_REQUIRED = object()


class _Node:
    """One object of the config tree; tracks consumed keys."""

    def __init__(self, data: dict, path: str):
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected an object")
        self.data = data
        self.path = path
        self.seen: set[str] = set()

    def take(self, key: str, default=_REQUIRED):
        self.seen.add(key)
        if key in self.data:
            return self.data[key]
        if default is _REQUIRED:
            raise ConfigError(f"{self.path}: missing required key {key!r}")
        return default

    def child(self, key: str, default=_REQUIRED) -> "_Node | None":
        val = self.take(key, default)
        if val is default and default is not _REQUIRED:
            return None
        return _Node(val, f"{self.path}.{key}")

    def finish(self) -> None:
        unknown = sorted(set(self.data) - self.seen)
        if unknown:
            raise ConfigError(f"{self.path}: unknown key {unknown[0]!r}")


def _window(value, path: str) -> tuple[int, int]:
    if not (isinstance(value, (list, tuple)) and len(value) == 2):
        raise ConfigError(f"{path}: window must be [height, width]")
    return (int(value[0]), int(value[1]))


def _stdp(node: _Node | None) -> StdpParams:
    if node is None:
        return StdpParams()
    p = StdpParams(
        a_plus=float(node.take("a_plus", 0.004)),
        a_minus=float(node.take("a_minus", 0.003)),
        inhibition_radius=node.take("inhibition_radius", None),
        convergence_stop=float(node.take("convergence_stop", 0.01)),
        max_iterations=node.take("max_iterations", None),
    )
    node.finish()
    return p


def _layer(entry, i: int):
    node = _Node(entry, f"layers[{i}]")
    kind = node.take("kind")
    if kind == "conv":
        spec = ConvSpec(
            maps=int(node.take("maps")),
            window=_window(node.take("window"), node.path),
            threshold=float(node.take("threshold")),
        )
        stdp = _stdp(node.child("stdp", None))
        node.finish()
        return ConvLayerConfig(spec=spec, stdp=stdp)
    if kind == "pool":
        spec = PoolSpec(
            window=_window(node.take("window"), node.path),
            stride=int(node.take("stride")),
        )
        node.finish()
        return PoolLayerConfig(spec=spec)
    if kind == "global_pool":
        node.finish()
        return GlobalPoolConfig()
    raise ConfigError(f"layers[{i}]: unknown layer kind {kind!r}")


def parse_config(data: dict) -> NetworkConfig:
    """Validate a config tree; any unknown key anywhere is an error."""
    root = _Node(data, "config")
    try:
        seed = int(root.take("seed", 0))
        time_steps = int(root.take("time_steps", 30))

        dnode = root.child("dog", None)
        if dnode is None:
            dog = DogSpec()
        else:
            dog = DogSpec(
                kernel_size=int(dnode.take("kernel_size", 7)),
                sigma_center=float(dnode.take("sigma_center", 1.0)),
                sigma_surround=float(dnode.take("sigma_surround", 2.0)),
                polarity=dnode.take("polarity", "on_off"),
                firing_threshold=float(dnode.take("firing_threshold", 50.0 / 255.0)),
            )
            dnode.finish()

        raw_layers = root.take("layers")
        if not isinstance(raw_layers, list):
            raise ConfigError("config.layers: expected a list")
        layers = tuple(_layer(e, i) for i, e in enumerate(raw_layers))

        wnode = root.child("weight_init", None)
        if wnode is None:
            weight_init = WeightInitSpec()
        else:
            weight_init = WeightInitSpec(
                mean=float(wnode.take("mean", 0.8)),
                std=float(wnode.take("std", 0.05)),
                seed=wnode.take("seed", None),
            )
            wnode.finish()

        cnode = root.child("classifier", None)
        if cnode is None:
            classifier = ClassifierParams()
        else:
            classifier = ClassifierParams(
                penalty_C=float(cnode.take("penalty_C", 2.4)),
                epochs=int(cnode.take("epochs", 300)),
                learning_rate=float(cnode.take("learning_rate", 0.5)),
                seed=int(cnode.take("seed", 0)),
            )
            cnode.finish()

        dsnode = root.child("dataset")
        raw_classes = dsnode.take("classes", None)
        dataset = DatasetRef(
            kind=dsnode.take("kind"),
            path=dsnode.take("path", None),
            train_count=dsnode.take("train_count", None),
            train_fraction=dsnode.take("train_fraction", None),
            manifest=dsnode.take("manifest", None),
            target_height=dsnode.take("target_height", None),
            train_per_class=dsnode.take("train_per_class", None),
            test_per_class=dsnode.take("test_per_class", None),
            classes=tuple(raw_classes) if raw_classes is not None else None,
        )
        dsnode.finish()

        root.finish()
    except (TypeError, ValueError) as e:
        raise ConfigError(f"malformed config value: {e}") from e
    return NetworkConfig(
        seed=seed,
        time_steps=time_steps,
        dog=dog,
        layers=layers,
        weight_init=weight_init,
        classifier=classifier,
        dataset=dataset,
    )


def load_config(path) -> NetworkConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"no such config file: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    return parse_config(data)


def config_to_json(cfg: NetworkConfig) -> str:
    """Canonical serialization; parse(config_to_json(c)) == c."""
    layers = []
    for layer in cfg.layers:
        if isinstance(layer, ConvLayerConfig):
            layers.append(
                {
                    "kind": "conv",
                    "maps": layer.spec.maps,
                    "window": list(layer.spec.window),
                    "threshold": layer.spec.threshold,
                    "stdp": {
                        "a_plus": layer.stdp.a_plus,
                        "a_minus": layer.stdp.a_minus,
                        "inhibition_radius": layer.stdp.inhibition_radius,
                        "convergence_stop": layer.stdp.convergence_stop,
                        "max_iterations": layer.stdp.max_iterations,
                    },
                }
            )
        elif isinstance(layer, PoolLayerConfig):
            layers.append(
                {
                    "kind": "pool",
                    "window": list(layer.spec.window),
                    "stride": layer.spec.stride,
                }
            )
        else:
            layers.append({"kind": "global_pool"})
    data = {
        "seed": cfg.seed,
        "time_steps": cfg.time_steps,
        "dog": {
            "kernel_size": cfg.dog.kernel_size,
            "sigma_center": cfg.dog.sigma_center,
            "sigma_surround": cfg.dog.sigma_surround,
            "polarity": cfg.dog.polarity,
            "firing_threshold": cfg.dog.firing_threshold,
        },
        "layers": layers,
        "weight_init": {
            "mean": cfg.weight_init.mean,
            "std": cfg.weight_init.std,
            "seed": cfg.weight_init.seed,
        },
        "classifier": {
            "penalty_C": cfg.classifier.penalty_C,
            "epochs": cfg.classifier.epochs,
            "learning_rate": cfg.classifier.learning_rate,
            "seed": cfg.classifier.seed,
        },
        "dataset": {
            "kind": cfg.dataset.kind,
            "path": cfg.dataset.path,
            "train_count": cfg.dataset.train_count,
            "train_fraction": cfg.dataset.train_fraction,
            "manifest": cfg.dataset.manifest,
            "target_height": cfg.dataset.target_height,
            "train_per_class": cfg.dataset.train_per_class,
            "test_per_class": cfg.dataset.test_per_class,
            "classes": list(cfg.dataset.classes) if cfg.dataset.classes is not None else None,
        },
    }
    return json.dumps(data, indent=2, sort_keys=True)


def shape_chain(cfg: NetworkConfig, input_hw: tuple[int, int]) -> list[tuple[str, tuple]]:
    """Spatial extent of every stage, or a ConfigError naming the stage.

    Entries are (stage name, (maps, h, w)); the final global_pool entry is
    (stage name, (feature_dim,)).
    """
    h, w = input_hw
    k = cfg.dog.kernel_size
    if h < k or w < k:
        raise ConfigError(f"input {h}x{w} is smaller than the {k}x{k} DoG kernel")
    chain: list[tuple[str, tuple]] = [("input", (1, h, w))]
    cur = (cfg.dog.n_maps, h - k + 1, w - k + 1)
    chain.append(("dog", cur))
    for i, layer in enumerate(cfg.layers):
        name = f"layers[{i}]"
        c, lh, lw = cur
        if isinstance(layer, ConvLayerConfig):
            kh, kw = layer.spec.window
            if lh < kh or lw < kw:
                raise ConfigError(
                    f"{name} (conv): window {kh}x{kw} does not fit map {lh}x{lw}"
                )
            cur = (layer.spec.maps, lh - kh + 1, lw - kw + 1)
            chain.append((f"{name} conv", cur))
        elif isinstance(layer, PoolLayerConfig):
            ph, pw = layer.spec.window
            s = layer.spec.stride
            if lh < ph or lw < pw:
                raise ConfigError(
                    f"{name} (pool): window {ph}x{pw} does not fit map {lh}x{lw}"
                )
            if s > lh or s > lw:
                raise ConfigError(f"{name} (pool): stride {s} exceeds map {lh}x{lw}")
            cur = (c, (lh - ph) // s + 1, (lw - pw) // s + 1)
            chain.append((f"{name} pool", cur))
        else:
            chain.append((f"{name} global_pool", (c,)))
    return chain


def feature_dim(cfg: NetworkConfig) -> int:
    """Output dimension: the map count of the last conv layer."""
    return cfg.conv_configs()[-1][1].spec.maps
