"""Command-line surface: train, eval, reconstruct, ablate, noise-sweep, stats.

Every run writes a `manifest.json` into its output directory recording
the command, the source artifact, the effective seed, wall time, and the
exit status, even when the run fails; the manifest lands atomically so a
crash never leaves a half-written one. Exit codes: 0 ok, 1 usage or
config problems, 2 data or model-format problems, 3 runtime failures.

Relative dataset paths resolve against the current directory first, then
against `$SPIKECONV_DATA` when that is set.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from .config import NetworkConfig, config_to_json, feature_dim, load_config, shape_chain
from .errors import ConfigError, DataError, ModelFormatError, SpikeconvError
from .model_io import TrainedModel, load_model, save_model
from .pipeline import (
    ablate_random_features,
    build,
    evaluate,
    noise_sweep,
    reconstruct_feature,
    resolve_dataset,
    train_all,
)

DATA_ROOT_VAR = "SPIKECONV_DATA"


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; our contract reserves 2 for data."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _atomic_json(path: Path, obj) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


def _resolve_data_path(ref, override: str | None):
    """Apply --data and the data-root environment variable to a dataset ref.

    `--data` replaces the configured path outright. Otherwise a relative
    path that does not exist under the working directory is retried under
    $SPIKECONV_DATA; whichever candidate exists wins, and a path that
    exists nowhere is kept as configured so downstream errors name it.
    """
    if override is not None:
        if ref.kind == "synthetic":
            raise ConfigError("dataset kind 'synthetic' is generated, --data does not apply")
        return dataclasses.replace(ref, path=override)
    if ref.path is None or Path(ref.path).is_absolute() or Path(ref.path).exists():
        return ref
    root = os.environ.get(DATA_ROOT_VAR)
    if root and (Path(root) / ref.path).exists():
        return dataclasses.replace(ref, path=str(Path(root) / ref.path))
    return ref


def _load_config_for_run(args) -> NetworkConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    ref = _resolve_data_path(cfg.dataset, getattr(args, "data", None))
    if ref is not cfg.dataset:
        cfg = dataclasses.replace(cfg, dataset=ref)
    args.effective_seed = cfg.seed
    return cfg


def _datasets_for_model(args, model: TrainedModel):
    args.effective_seed = model.config.seed
    ref = _resolve_data_path(model.config.dataset, args.data)
    return resolve_dataset(ref, model.config.seed)


def _print_report(report) -> None:
    print(f"accuracy {report.accuracy:.4f} over {report.n_samples} samples")
    print(
        f"spikes per image: mean {report.spike_mean:.1f}, "
        f"p50 {report.spike_percentiles[50]:.0f}, p99 {report.spike_percentiles[99]:.0f}"
    )
    if report.single_neuron is not None:
        print(
            f"single-feature readout: mean {report.single_neuron['mean']:.3f}, "
            f"best {report.single_neuron['best']:.3f}"
        )
    worst = np.copy(report.confusion)
    np.fill_diagonal(worst, 0)
    if worst.sum() > 0:
        i, j = np.unravel_index(np.argmax(worst), worst.shape)
        print(
            f"most confused: {report.class_names[i]} read as "
            f"{report.class_names[j]} ({worst[i, j]} times)"
        )


def cmd_train(args) -> None:
    cfg = _load_config_for_run(args)
    train, _ = resolve_dataset(cfg.dataset, cfg.seed)
    out = Path(args.out)
    net = build(cfg, input_hw=train.image(0).shape)

    log_path = out / "train_log.jsonl"
    with log_path.open("w") as log:

        def sink(event: dict) -> None:
            log.write(json.dumps(event) + "\n")
            if event["event"] == "layer_end":
                state = "converged" if event["converged"] else "stopped at cap"
                print(
                    f"conv layer {event['conv_index']}: {state} after "
                    f"{event['iterations']} presentations "
                    f"(convergence index {event['final_index']:.4f})"
                )
            elif event["event"] == "classifier":
                print(f"classifier fit, train accuracy {event['train_accuracy']:.4f}")

        model = train_all(net, train, sink=sink, workers=args.threads)

    save_model(model, out / "model.bin")
    _write_json(
        out / "trajectories.json",
        [
            {"conv_index": rec["conv_index"], "values": [float(v) for v in traj]}
            for rec, traj in zip(model.provenance["layers"], model.trajectories)
        ],
    )
    for w in model.provenance["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    print(f"model written to {out / 'model.bin'}")


def cmd_eval(args) -> None:
    model = load_model(args.model)
    train, test = _datasets_for_model(args, model)
    report = evaluate(model, test, train_dataset=train, workers=args.threads)
    _write_json(Path(args.out) / "report.json", report.to_dict())
    _print_report(report)


def cmd_reconstruct(args) -> None:
    from PIL import Image

    model = load_model(args.model)
    args.effective_seed = model.config.seed
    convs = model.config.conv_configs()
    if not 1 <= args.layer <= len(convs):
        raise ConfigError(
            f"--layer {args.layer} out of range: model has conv layers 1..{len(convs)}"
        )
    conv_index = args.layer - 1
    n_maps = np.asarray(model.conv_weights[conv_index]).shape[0]
    maps = range(n_maps) if args.map is None else [args.map]
    out = Path(args.out)
    width = len(str(n_maps - 1))
    for m in maps:
        img = reconstruct_feature(model, conv_index, m)
        gray = np.round(img * 255.0).astype(np.uint8)
        Image.fromarray(gray, mode="L").save(out / f"layer{args.layer}_map{m:0{width}d}.png")
    print(f"wrote {len(list(maps))} reconstruction(s) to {out}")


def cmd_ablate(args) -> None:
    model = load_model(args.model)
    train, test = _datasets_for_model(args, model)
    indices = _int_list(args.layers, "--layers")
    report = ablate_random_features(model, indices, train, test, workers=args.threads)
    _write_json(
        Path(args.out) / "ablation.json",
        {"randomized_conv_indices": indices, "report": report.to_dict()},
    )
    label = ", ".join(str(i) for i in indices) if indices else "none"
    print(f"randomized conv layers: {label}")
    _print_report(report)


def cmd_noise_sweep(args) -> None:
    cfg = _load_config_for_run(args)
    train, test = resolve_dataset(cfg.dataset, cfg.seed)
    alphas = _float_list(args.alphas, "--alphas")
    points = noise_sweep(cfg, alphas, train, test, workers=args.threads)
    _write_json(
        Path(args.out) / "sweep.json",
        [{"alpha": a, "report": rep.to_dict()} for a, rep in points],
    )
    for a, rep in points:
        print(f"alpha {a:.2f}: accuracy {rep.accuracy:.4f}")


def cmd_stats(args) -> None:
    model = load_model(args.model)
    args.effective_seed = model.config.seed
    cfg = model.config
    prov = model.provenance
    hw = tuple(prov.get("input_hw", (28, 28)))
    chain = [
        {"stage": name, "shape": list(shape)} for name, shape in shape_chain(cfg, hw)
    ]
    layers = []
    for rec, w in zip(prov.get("layers", []), model.conv_weights):
        w = np.asarray(w, dtype=np.float64)
        near_binary = float(np.mean((w <= 0.1) | (w >= 0.9)))
        entry = {**rec, "weight_near_binary_fraction": near_binary}
        layers.append(entry)
    stats = {
        "config": json.loads(config_to_json(cfg)),
        "shape_chain": chain,
        "feature_dim": feature_dim(cfg),
        "layers": layers,
        "classifier_present": model.classifier is not None,
        "train_accuracy": prov.get("train_accuracy"),
        "train_spike_mean": prov.get("train_spike_mean"),
        "warnings": prov.get("warnings", []),
    }
    _write_json(Path(args.out) / "stats.json", stats)
    print("stage shapes: " + " -> ".join(f"{c['stage']} {tuple(c['shape'])}" for c in chain))
    for entry in layers:
        print(
            f"conv layer {entry['conv_index']}: {entry['iterations']} presentations, "
            f"{'converged' if entry['converged'] else 'not converged'}, "
            f"{entry['weight_near_binary_fraction']:.0%} of weights near 0 or 1"
        )
    if stats["train_accuracy"] is not None:
        print(f"train accuracy {stats['train_accuracy']:.4f}")


def _int_list(text: str, flag: str) -> list[int]:
    if not text.strip():
        return []
    try:
        return [int(p) for p in text.split(",")]
    except ValueError:
        raise ConfigError(f"{flag} expects comma-separated integers, got {text!r}")


def _float_list(text: str, flag: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",")]
    except ValueError:
        raise ConfigError(f"{flag} expects comma-separated numbers, got {text!r}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="spikeconv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, threads=True):
        p.add_argument("--out", default=".", help="output directory (default: current)")
        if threads:
            p.add_argument("--threads", type=int, default=1, help="worker process cap")

    p = sub.add_parser("train", help="train features and classifier from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--data", default=None, help="override the dataset path")
    p.add_argument("--threads", type=int, default=1, help="worker process cap")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a trained model on its test split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", default=None, help="override the dataset path")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reconstruct", help="render learned features as images")
    p.add_argument("--model", required=True)
    p.add_argument("--layer", type=int, required=True, help="conv layer number, 1-based")
    p.add_argument("--map", type=int, default=None, help="single map index (default: all)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("ablate", help="score with chosen conv layers randomized")
    p.add_argument("--model", required=True)
    p.add_argument("--layers", required=True, help="comma-separated conv indices, 0-based")
    p.add_argument("--data", default=None, help="override the dataset path")
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("noise-sweep", help="retrain and score across jitter amplitudes")
    p.add_argument("--config", required=True)
    p.add_argument("--alphas", required=True, help="comma-separated amplitudes in [0, 1]")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--data", default=None, help="override the dataset path")
    common(p)
    p.set_defaults(func=cmd_noise_sweep)

    p = sub.add_parser("stats", help="summarize a trained model file")
    p.add_argument("--model", required=True)
    common(p, threads=False)
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        print(f"error: cannot create output directory {out}: {e}", file=sys.stderr)
        return 3

    t0 = time.perf_counter()
    status = 0
    try:
        args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        status = 1
    except (DataError, ModelFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        status = 2
    except SpikeconvError as e:
        print(f"error: {e}", file=sys.stderr)
        status = 3
    except Exception:
        traceback.print_exc()
        status = 3
    finally:
        manifest = {
            "command": args.command,
            "config": getattr(args, "config", None),
            "model": getattr(args, "model", None),
            "seed": getattr(args, "effective_seed", getattr(args, "seed", None)),
            "out_dir": str(out),
            "elapsed_s": round(time.perf_counter() - t0, 3),
            "exit_status": status,
        }
        try:
            _atomic_json(out / "manifest.json", manifest)
        except OSError as e:
            print(f"error: cannot write manifest: {e}", file=sys.stderr)
            status = status or 3
    return status


if __name__ == "__main__":
    sys.exit(main())
