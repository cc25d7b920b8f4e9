"""End to end on the ten-class desk profile: spikes in, labels out.

Trains both conv layers with local plasticity only (no labels touch the
feature path), reads each image out as one pooled potential per map, and
fits the linear classifier on those vectors. Prints the per-class report
and the spike economy. Takes roughly half a minute.
"""

import json
from pathlib import Path

from spikeconv.config import load_config
from spikeconv.pipeline import build, evaluate, resolve_dataset, train_all

ROOT = Path(__file__).parent.parent
OUT = Path(__file__).parent / "out"


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    cfg = load_config(ROOT / "configs" / "synth_desk.json")
    train, test = resolve_dataset(cfg.dataset, cfg.seed)
    print(f"desk profile: {len(train)} train / {len(test)} test rendered digits")

    net = build(cfg, input_hw=train.image(0).shape)
    model = train_all(net, train)
    print(f"feature vector: {model.provenance['feature_dim']} pooled potentials per image")

    report = evaluate(model, test, train_dataset=train)
    print(f"test accuracy {report.accuracy:.3f} over {report.n_samples} images")
    for name, acc in zip(report.class_names, report.per_class_accuracy):
        bar = "#" * int(round(acc * 20))
        print(f"  digit {name}: {acc:.2f} {bar}")
    print(
        f"spikes per image: mean {report.spike_mean:.0f}, "
        f"median {report.spike_percentiles[50]:.0f} "
        "(every neuron fires at most once, so cost stays bounded)"
    )
    if report.single_neuron is not None:
        print(
            f"single best feature alone scores {report.single_neuron['best']:.2f}; "
            "the classifier mostly reads coincidences of a few features"
        )

    (OUT / "desk_report.json").write_text(json.dumps(report.to_dict(), indent=2))
    print(f"full report written to {OUT / 'desk_report.json'}")


if __name__ == "__main__":
    main()
