"""End-to-end orchestration: build, train, evaluate, perturb, inspect.

Layer training is strictly sequential (each conv learns only after the
previous one has converged and frozen), so each layer's input waves are
precomputed through the frozen prefix once per layer when thresholds are
deterministic. With threshold jitter active the prefix is re-run per
presentation instead, keyed by a presentation counter that can never
collide with evaluation keys.

All randomness in a run derives from the single config seed through
namespaced seed sequences; the same config yields byte-identical model
files.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .classifier import (
    ClassifierParams,
    LinearModel,
    single_neuron_accuracy,
    svm_predict,
    svm_train,
)
from .config import (
    ConvLayerConfig,
    DatasetRef,
    GlobalPoolConfig,
    NetworkConfig,
    PoolLayerConfig,
    feature_dim,
    shape_chain,
)
from .datasets import Dataset, SplitSpec, load_folder, load_idx
from .encoding import dog_kernel, encode_image
from .errors import ConfigError, DataError
from .network import ConvLayer, PoolLayer, ThresholdNoise, global_pool_features, run_wave
from .model_io import TrainedModel, save_model
from .plasticity import init_weights, train_layer

__all__ = [
    "MetricsReport",
    "SpikingNetwork",
    "build",
    "resolve_dataset",
    "train_all",
    "extract_features",
    "evaluate",
    "ablate_random_features",
    "randomize_map_weights",
    "noise_sweep",
    "reconstruct_feature",
    "network_from_model",
]

# image-key namespaces for threshold jitter: evaluation keys are dataset
# indices, training keys are presentation counters, test keys sit above
TRAIN_KEY_BASE = 2**32
TEST_KEY_BASE = 2**33
WINIT_KEY = 9001
ABLATE_KEY = 7777


@dataclass
class MetricsReport:
    """Evaluation outcome over one dataset split."""

    accuracy: float
    confusion: np.ndarray
    per_class_accuracy: np.ndarray
    class_names: list[str]
    spike_mean: float
    spike_percentiles: dict[int, float]
    n_samples: int
    timings: dict[str, float] = field(default_factory=dict)
    single_neuron: dict | None = None

    def to_dict(self) -> dict:
        out = {
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "per_class_accuracy": self.per_class_accuracy.tolist(),
            "class_names": self.class_names,
            "spike_mean": self.spike_mean,
            "spike_percentiles": {str(k): v for k, v in self.spike_percentiles.items()},
            "n_samples": self.n_samples,
            "timings": self.timings,
        }
        if self.single_neuron is not None:
            out["single_neuron"] = self.single_neuron
        return out


class SpikingNetwork:
    """Engine layers wired per config, with their shape chain."""

    def __init__(
        self,
        config: NetworkConfig,
        input_hw: tuple[int, int],
        noise: ThresholdNoise | None = None,
    ):
        self.config = config
        self.input_hw = input_hw
        self.noise = noise
        self.chain = shape_chain(config, input_hw)
        self.layers: list = []
        self.conv_positions: list[int] = []
        in_maps = config.dog.n_maps
        for i, layer in enumerate(config.layers):
            if isinstance(layer, ConvLayerConfig):
                self.conv_positions.append(i)
                weights = init_weights(
                    (layer.spec.maps, in_maps) + layer.spec.window,
                    config.weight_init,
                    _winit_rng(config, len(self.conv_positions) - 1),
                )
                self.layers.append(ConvLayer(layer.spec, in_maps, weights))
                in_maps = layer.spec.maps
            elif isinstance(layer, PoolLayerConfig):
                self.layers.append(PoolLayer(layer.spec))

    @property
    def conv_layers(self) -> list[ConvLayer]:
        return [self.layers[p] for p in self.conv_positions]

    def encode(self, image: np.ndarray):
        return encode_image(image, self.config.dog, self.config.time_steps)

    def features(self, wave, noise: ThresholdNoise | None = None, image_key: int = 0):
        """Global-pooled potentials of the final (never-firing) conv layer."""
        result = run_wave(
            self.layers, wave, noise=noise, image_key=image_key, infinite_last_conv=True
        )
        feats = global_pool_features(self.conv_layers[-1])
        spikes = wave.total_spikes() + int(sum(c for c in result.spike_counts if c > 0))
        return feats, spikes


def _winit_rng(config: NetworkConfig, conv_index: int) -> np.random.Generator:
    entropy = config.weight_init.seed if config.weight_init.seed is not None else config.seed
    return np.random.default_rng(
        np.random.SeedSequence(entropy=entropy, spawn_key=(WINIT_KEY, conv_index))
    )


def build(
    config: NetworkConfig,
    input_hw: tuple[int, int] = (28, 28),
    noise: ThresholdNoise | None = None,
) -> SpikingNetwork:
    """Construct the network and verify the whole shape chain."""
    return SpikingNetwork(config, input_hw, noise=noise)


def network_from_model(model: TrainedModel, input_hw: tuple[int, int] | None = None) -> SpikingNetwork:
    """Rebuild the engine from a trained model's exact float32 weights."""
    hw = input_hw if input_hw is not None else tuple(model.provenance.get("input_hw", (28, 28)))
    net = SpikingNetwork(model.config, hw)
    for layer, w in zip(net.conv_layers, model.conv_weights):
        layer.set_weights(np.asarray(w, dtype=np.float64))
    return net


def _desk_subset(train: Dataset, test: Dataset, ref: DatasetRef, seed: int):
    """Apply the ref's class filter and per-class sampling to both splits."""
    if ref.classes is None and ref.train_per_class is None and ref.test_per_class is None:
        return train, test
    classes = (
        list(ref.classes)
        if ref.classes is not None
        else list(range(len(train.class_names)))
    )
    for c in classes:
        if c >= len(train.class_names):
            raise ConfigError(
                f"dataset.classes names class {c} but the data has {len(train.class_names)}"
            )
    return (
        train.subset(classes, per_class=ref.train_per_class, seed=seed),
        test.subset(classes, per_class=ref.test_per_class, seed=seed + 1),
    )


def resolve_dataset(ref: DatasetRef, seed: int) -> tuple[Dataset, Dataset]:
    """Materialize the configured dataset as (train, test)."""
    if ref.kind == "idx":
        from pathlib import Path

        root = Path(ref.path)
        pairs = {}
        for split, img_name, lab_name in (
            ("train", "train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            ("test", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        ):
            img = next((root / (img_name + s) for s in ("", ".gz") if (root / (img_name + s)).is_file()), None)
            lab = next((root / (lab_name + s) for s in ("", ".gz") if (root / (lab_name + s)).is_file()), None)
            if img is None or lab is None:
                raise DataError(f"{root}: missing {img_name}[.gz] or {lab_name}[.gz]")
            pairs[split] = load_idx(img, lab, split=split)
        return _desk_subset(pairs["train"], pairs["test"], ref, seed)
    if ref.kind == "folder":
        if ref.manifest is not None:
            train, test = load_folder(ref.path, manifest=ref.manifest, target_height=ref.target_height)
        else:
            split = SplitSpec(
                train_count=ref.train_count, train_fraction=ref.train_fraction, seed=seed
            )
            train, test = load_folder(ref.path, split, target_height=ref.target_height)
        return _desk_subset(train, test, ref, seed)
    # synthetic: rendered digits, train and test from disjoint seed streams
    import hashlib

    from .synthdata import build_corpus

    digits = list(ref.classes) if ref.classes is not None else list(range(10))
    for d in digits:
        if d > 9:
            raise ConfigError(f"synthetic dataset renders digits 0-9, got class {d}")
    out = []
    for split, n, s in (("train", ref.train_per_class, seed), ("test", ref.test_per_class, seed + 1)):
        images, raw = build_corpus(n, seed=s, classes=digits)
        labels = np.searchsorted(np.array(sorted(digits)), raw)
        digest = hashlib.sha256()
        digest.update(images.tobytes())
        digest.update(labels.tobytes())
        out.append(
            Dataset(
                sources=list(images),
                labels=labels.astype(np.int64),
                class_names=[str(d) for d in sorted(digits)],
                split=split,
                digest=digest.hexdigest(),
            )
        )
    return out[0], out[1]


def _input_waves(network: SpikingNetwork, dataset: Dataset) -> list:
    return [network.encode(dataset.image(i)) for i in range(len(dataset))]


def _prefix_waves(network, waves, position, noise, image_key_base):
    """Input waves of the conv at `position`, run through the frozen prefix."""
    if position == 0:
        return list(waves)
    prefix = network.layers[:position]
    out = []
    for i, wave in enumerate(waves):
        result = run_wave(
            prefix,
            wave,
            noise=noise,
            image_key=image_key_base + i,
            record_outputs={position - 1},
        )
        out.append(result.recorded[position - 1])
    return out


def train_all(
    network: SpikingNetwork,
    train_dataset: Dataset,
    sink=None,
    include_trajectories: bool = True,
    workers: int = 1,
) -> TrainedModel:
    """Train conv layers in order, then the classifier; freeze to float32.

    Each layer trains only after the previous one converged (or hit its
    iteration cap, recorded as a warning). Every sink event carries a
    monotone sequence number; per-layer start/end sequence numbers land in
    provenance, so training order is auditable from the artifact alone.
    """
    if len(train_dataset) == 0:
        raise ConfigError("training dataset is empty")
    config = network.config
    noise = network.noise
    seq = {"n": 0}

    def emit(record: dict) -> int:
        record = {**record, "seq": seq["n"]}
        seq["n"] += 1
        if sink is not None:
            sink(record)
        return record["seq"]

    rng_order = np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(1,)))
    order = rng_order.permutation(len(train_dataset))

    waves0 = _input_waves(network, train_dataset)
    layer_records = []
    warnings = []
    trajectories = []
    for ci, position in enumerate(network.conv_positions):
        layer = network.layers[position]
        cfg = config.layers[position]
        start_seq = emit({"event": "layer_start", "conv_index": ci, "position": position})
        if noise is None or noise.alpha == 0.0:
            waves = _prefix_waves(network, waves0, position, None, 0)
        else:
            prefix = network.layers[:position]

            def waves(idx: int, presentation: int, _prefix=prefix, _pos=position):
                if _pos == 0:
                    return waves0[idx]
                result = run_wave(
                    _prefix,
                    waves0[idx],
                    noise=noise,
                    image_key=TRAIN_KEY_BASE + presentation,
                    record_outputs={_pos - 1},
                )
                return result.recorded[_pos - 1]

        result = train_layer(
            layer,
            waves,
            cfg.stdp,
            order,
            noise=noise,
            conv_index=ci,
            sink=lambda rec: emit(rec),
            image_key_base=TRAIN_KEY_BASE,
        )
        # freeze: quantize to float32 so saved and live weights are the same numbers
        layer.set_weights(layer.weights.astype(np.float32).astype(np.float64))
        end_seq = emit(
            {
                "event": "layer_end",
                "conv_index": ci,
                "position": position,
                "iterations": result.iterations,
                "converged": result.converged,
                "final_index": result.final_index,
            }
        )
        if not result.converged:
            warnings.append(
                f"conv layer {ci} stopped at {result.iterations} iterations "
                f"with convergence index {result.final_index:.4f}"
            )
        layer_records.append(
            {
                "conv_index": ci,
                "position": position,
                "iterations": result.iterations,
                "converged": result.converged,
                "final_index": result.final_index,
                "updates": result.updates,
                "start_seq": start_seq,
                "end_seq": end_seq,
            }
        )
        if include_trajectories:
            trajectories.append(result.trajectory.astype(np.float32))

    emit({"event": "features", "split": "train", "n": len(train_dataset)})
    feats, counts = extract_features(network, train_dataset, noise=noise, key_base=0, workers=workers)
    clf = svm_train(feats, train_dataset.labels, config.classifier)
    clf = LinearModel(
        classes=clf.classes,
        weights=clf.weights.astype(np.float32),
        bias=clf.bias.astype(np.float32),
        feature_mean=clf.feature_mean.astype(np.float32),
        feature_scale=clf.feature_scale.astype(np.float32),
    )
    train_pred, _ = svm_predict(clf, feats)
    train_acc = float((train_pred == train_dataset.labels).mean())
    emit({"event": "classifier", "train_accuracy": train_acc})

    provenance = {
        "seed": config.seed,
        "dataset_digest": train_dataset.digest,
        "class_names": train_dataset.class_names,
        "input_hw": list(network.input_hw),
        "feature_dim": feature_dim(config),
        "noise_alpha": 0.0 if noise is None else noise.alpha,
        "layers": layer_records,
        "warnings": warnings,
        "train_accuracy": train_acc,
        "train_spike_mean": float(np.mean(counts)),
    }
    return TrainedModel(
        config=config,
        conv_weights=[l.weights.astype(np.float32) for l in network.conv_layers],
        classifier=clf,
        provenance=provenance,
        trajectories=trajectories,
    )


def _feature_worker_chunk(args):
    (config, weights, input_hw, images, noise, keys) = args
    net = SpikingNetwork(config, input_hw)
    for layer, w in zip(net.conv_layers, weights):
        layer.set_weights(np.asarray(w, dtype=np.float64))
    feats, counts = [], []
    for img, key in zip(images, keys):
        f, s = net.features(net.encode(img), noise=noise, image_key=key)
        feats.append(f)
        counts.append(s)
    return feats, counts


def extract_features(
    network: SpikingNetwork,
    dataset: Dataset,
    noise: ThresholdNoise | None = None,
    key_base: int = 0,
    workers: int = 1,
):
    """Per-image pooled feature vectors and total spike counts.

    Work is independent per image, so it can fan out over processes; the
    per-image outputs are deterministic and reassembled in dataset order,
    making the result identical for any worker count.
    """
    n = len(dataset)
    if workers > 1 and n >= 4 * workers:
        from concurrent.futures import ProcessPoolExecutor

        weights = [l.weights for l in network.conv_layers]
        chunks = np.array_split(np.arange(n), workers * 4)
        jobs = [
            (
                network.config,
                weights,
                network.input_hw,
                [dataset.image(int(i)) for i in idx],
                noise,
                [key_base + int(i) for i in idx],
            )
            for idx in chunks
            if len(idx)
        ]
        feats: list = [None] * n
        counts = np.zeros(n, dtype=np.int64)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for idx, (fs, cs) in zip(
                (c for c in chunks if len(c)), pool.map(_feature_worker_chunk, jobs)
            ):
                for i, f, c in zip(idx, fs, cs):
                    feats[int(i)] = f
                    counts[int(i)] = c
        return np.stack(feats), counts

    feats = np.empty((n, feature_dim(network.config)))
    counts = np.zeros(n, dtype=np.int64)
    for i in range(n):
        f, s = network.features(network.encode(dataset.image(i)), noise=noise, image_key=key_base + i)
        feats[i] = f
        counts[i] = s
    return feats, counts


def evaluate(
    model: TrainedModel,
    dataset: Dataset,
    train_dataset: Dataset | None = None,
    workers: int = 1,
) -> MetricsReport:
    """Forward the split, classify, and aggregate exact counters.

    With `train_dataset` given, per-dimension (single-neuron) accuracies
    are computed as well. Spike statistics count every spike an image
    causes: input wave plus all conv and pool layers.
    """
    if model.classifier is None:
        raise ConfigError("model has no classifier; train it first")
    net = network_from_model(model)
    alpha = float(model.provenance.get("noise_alpha", 0.0))
    noise = ThresholdNoise(alpha=alpha, seed=model.config.seed) if alpha > 0 else None

    t0 = time.perf_counter()
    feats, counts = extract_features(
        net, dataset, noise=noise, key_base=TEST_KEY_BASE, workers=workers
    )
    t1 = time.perf_counter()
    pred, _ = svm_predict(model.classifier, feats)
    t2 = time.perf_counter()

    labels = dataset.labels
    k = len(dataset.class_names)
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (labels, pred), 1)
    with np.errstate(invalid="ignore"):
        per_class = np.where(
            confusion.sum(axis=1) > 0,
            np.diag(confusion) / np.maximum(confusion.sum(axis=1), 1),
            np.nan,
        )
    accuracy = float(np.trace(confusion) / max(len(dataset), 1))

    single = None
    if train_dataset is not None:
        tr_feats, _ = extract_features(net, train_dataset, noise=noise, key_base=0, workers=workers)
        accs, mean_acc, best_acc = single_neuron_accuracy(
            tr_feats, train_dataset.labels, feats, labels
        )
        single = {"mean": mean_acc, "best": best_acc, "per_dimension": accs.tolist()}

    return MetricsReport(
        accuracy=accuracy,
        confusion=confusion,
        per_class_accuracy=per_class,
        class_names=list(dataset.class_names),
        spike_mean=float(np.mean(counts)) if len(counts) else 0.0,
        spike_percentiles={
            p: float(np.percentile(counts, p)) for p in (50, 90, 99)
        }
        if len(counts)
        else {},
        n_samples=len(dataset),
        timings={"forward_s": t1 - t0, "classify_s": t2 - t1},
        single_neuron=single,
    )


def randomize_map_weights(
    weights: np.ndarray, conv_index: int, seed: int
) -> np.ndarray:
    """Bimodal random tensor preserving each map's active-synapse budget.

    Active means weight > 0.5. The budget is kept as-is for the first
    conv layer and doubled above it (capped at the synapse count); chosen
    synapses get weights near one, the rest near zero.
    """
    out = np.empty_like(weights)
    n_syn = int(np.prod(weights.shape[1:]))
    for m in range(weights.shape[0]):
        active = int((weights[m] > 0.5).sum())
        target = active if conv_index == 0 else min(2 * active, n_syn)
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(ABLATE_KEY, conv_index, m))
        )
        flat = rng.uniform(0.0, 0.1, size=n_syn)
        idx = rng.choice(n_syn, size=target, replace=False)
        flat[idx] = rng.uniform(0.9, 1.0, size=target)
        out[m] = flat.reshape(weights.shape[1:])
    return out


def ablate_random_features(
    model: TrainedModel,
    conv_indices,
    train_dataset: Dataset,
    test_dataset: Dataset,
    workers: int = 1,
) -> MetricsReport:
    """Replace chosen conv layers' learned maps with matched random ones.

    The replacement keeps each map's count of strong synapses (doubled
    above the first layer), then features are re-extracted and the
    classifier retrained before scoring, so the comparison isolates the
    value of the learned features themselves.
    """
    n_convs = len(model.conv_weights)
    conv_indices = sorted(set(int(i) for i in conv_indices))
    for i in conv_indices:
        if not 0 <= i < n_convs:
            raise ConfigError(f"conv index {i} out of range (network has {n_convs})")

    ablated = TrainedModel(
        config=model.config,
        conv_weights=[
            randomize_map_weights(np.asarray(w, dtype=np.float64), i, model.config.seed).astype(
                np.float32
            )
            if i in conv_indices
            else w
            for i, w in enumerate(model.conv_weights)
        ],
        classifier=None,
        provenance=dict(model.provenance),
        trajectories=[],
    )
    net = network_from_model(ablated)
    feats, _ = extract_features(net, train_dataset, key_base=0, workers=workers)
    clf = svm_train(feats, train_dataset.labels, model.config.classifier)
    clf = LinearModel(
        classes=clf.classes,
        weights=clf.weights.astype(np.float32),
        bias=clf.bias.astype(np.float32),
        feature_mean=clf.feature_mean.astype(np.float32),
        feature_scale=clf.feature_scale.astype(np.float32),
    )
    ablated.classifier = clf
    return evaluate(ablated, test_dataset, workers=workers)


def noise_sweep(
    config: NetworkConfig,
    alphas,
    train_dataset: Dataset,
    test_dataset: Dataset,
    sink=None,
    workers: int = 1,
):
    """Full train+test per jitter amplitude; returns [(alpha, report)]."""
    out = []
    for alpha in alphas:
        if not 0.0 <= alpha <= 1.0:
            raise ConfigError(f"noise alpha must be in [0, 1], got {alpha}")
        noise = ThresholdNoise(alpha=float(alpha), seed=config.seed) if alpha > 0 else None
        net = build(config, input_hw=train_dataset.image(0).shape, noise=noise)
        model = train_all(net, train_dataset, sink=sink, workers=workers)
        report = evaluate(model, test_dataset, workers=workers)
        if sink is not None:
            sink({"event": "noise_point", "alpha": float(alpha), "accuracy": report.accuracy})
        out.append((float(alpha), report))
    return out


def reconstruct_feature(model: TrainedModel, conv_index: int, map_index: int) -> np.ndarray:
    """Render what a learned map prefers, as an image patch in [0, 1].

    The map's weights are expanded backward: conv weights combine
    previous-layer fields at their offsets, pooling upsamples fields onto
    its stride grid, and the input stage projects onto the two opposed
    center-surround kernels. Zero weights come out uniform gray.
    """
    convs = model.config.conv_configs()
    if not 0 <= conv_index < len(convs):
        raise ConfigError(f"conv index {conv_index} out of range")
    position = convs[conv_index][0]
    weights = np.asarray(model.conv_weights[conv_index], dtype=np.float64)
    if not 0 <= map_index < weights.shape[0]:
        raise ConfigError(f"map index {map_index} out of range")

    position_to_conv = {p: i for i, (p, _) in enumerate(convs)}

    # field: (maps, h, w) activation over the input of the stage at `position`
    field_ = weights[map_index].copy()  # (in_maps, kh, kw)
    for p in range(position - 1, -1, -1):
        layer = model.config.layers[p]
        if isinstance(layer, PoolLayerConfig):
            ph, pw = layer.spec.window
            s = layer.spec.stride
            c, h, w = field_.shape
            up = np.zeros((c, (h - 1) * s + ph, (w - 1) * s + pw))
            for y in range(h):
                for x in range(w):
                    up[:, y * s : y * s + ph, x * s : x * s + pw] += field_[:, y : y + 1, x : x + 1]
            field_ = up
        else:
            lower = np.asarray(model.conv_weights[position_to_conv[p]], dtype=np.float64)
            field_ = _expand_convolution(field_, lower)
    kernel = dog_kernel(
        model.config.dog.kernel_size,
        model.config.dog.sigma_center,
        model.config.dog.sigma_surround,
    )
    c, h, w = field_.shape
    k = kernel.shape[0]
    img = np.zeros((h + k - 1, w + k - 1))
    for ch in range(c):
        sign = 1.0 if ch == 0 else -1.0
        for y in range(h):
            for x in range(w):
                v = field_[ch, y, x]
                if v != 0.0:
                    img[y : y + k, x : x + k] += sign * v * kernel
    peak = np.max(np.abs(img))
    if peak == 0.0:
        return np.full_like(img, 0.5)
    return 0.5 + img / (2.0 * peak)


def _expand_convolution(field_, weights):
    """Backward-expand a field through conv weights (maps, in, kh, kw)."""
    m, h, w = field_.shape
    _, c_in, kh, kw = weights.shape
    out = np.zeros((c_in, h + kh - 1, w + kw - 1))
    for f in range(m):
        for y in range(h):
            for x in range(w):
                v = field_[f, y, x]
                if v != 0.0:
                    out[:, y : y + kh, x : x + kw] += v * weights[f]
    return out
