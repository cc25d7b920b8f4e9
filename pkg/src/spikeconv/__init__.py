"""spikeconv: event-driven spiking convolutional networks.

Latency-coded input, non-leaky integrate-and-fire convolution layers,
unsupervised STDP feature learning, first-spike pooling, and a linear
SVM readout, all deterministic under a single run seed.
"""

__version__ = "0.1.0"

from .classifier import ClassifierParams, LinearModel, svm_predict, svm_train
from .config import (
    NetworkConfig,
    config_to_json,
    feature_dim,
    load_config,
    parse_config,
    shape_chain,
)
from .datasets import Dataset, SplitSpec, load_folder, load_idx, write_idx
from .encoding import (
    DogSpec,
    SpikeWave,
    dog_filter,
    dog_kernel,
    encode_image,
    latency_encode,
    preprocess,
)
from .errors import (
    ConfigError,
    DataError,
    ModelFormatError,
    SpikeconvError,
    TrainingError,
    UnsupportedVersionError,
)
from .model_io import TrainedModel, load_model, save_model
from .network import (
    ConvLayer,
    ConvSpec,
    PoolLayer,
    PoolSpec,
    ThresholdNoise,
    global_pool_features,
    run_wave,
)
from .pipeline import (
    MetricsReport,
    SpikingNetwork,
    ablate_random_features,
    build,
    evaluate,
    extract_features,
    network_from_model,
    noise_sweep,
    reconstruct_feature,
    resolve_dataset,
    train_all,
)
from .plasticity import StdpParams, WeightInitSpec, init_weights, train_layer

__all__ = [
    "__version__",
    # errors
    "SpikeconvError",
    "ConfigError",
    "DataError",
    "ModelFormatError",
    "UnsupportedVersionError",
    "TrainingError",
    # input coding
    "DogSpec",
    "SpikeWave",
    "preprocess",
    "dog_kernel",
    "dog_filter",
    "latency_encode",
    "encode_image",
    # network engine
    "ConvSpec",
    "PoolSpec",
    "ThresholdNoise",
    "ConvLayer",
    "PoolLayer",
    "run_wave",
    "global_pool_features",
    # plasticity
    "StdpParams",
    "WeightInitSpec",
    "init_weights",
    "train_layer",
    # classifier
    "ClassifierParams",
    "LinearModel",
    "svm_train",
    "svm_predict",
    # configuration
    "NetworkConfig",
    "parse_config",
    "load_config",
    "config_to_json",
    "shape_chain",
    "feature_dim",
    # datasets
    "Dataset",
    "SplitSpec",
    "load_idx",
    "write_idx",
    "load_folder",
    # model container
    "TrainedModel",
    "save_model",
    "load_model",
    # orchestration
    "SpikingNetwork",
    "MetricsReport",
    "build",
    "network_from_model",
    "resolve_dataset",
    "train_all",
    "extract_features",
    "evaluate",
    "ablate_random_features",
    "noise_sweep",
    "reconstruct_feature",
]
