"""Watching synapses commit: unsupervised feature learning in one layer.

Trains the small two-class profile and narrates the convergence story:
the layer-wide index C = mean w(1-w) starts near 0.16 (weights around
0.8), rises while depressed synapses pass through 0.5, then collapses as
every weight commits to 0 or 1. Learned features are rendered back into
image space under demos/out/features/. About ten seconds.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from spikeconv.config import load_config
from spikeconv.pipeline import build, reconstruct_feature, resolve_dataset, train_all

ROOT = Path(__file__).parent.parent
OUT = Path(__file__).parent / "out" / "features"


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    cfg = load_config(ROOT / "configs" / "synth_two_class.json")
    train, _ = resolve_dataset(cfg.dataset, cfg.seed)
    print(f"training on {len(train)} rendered digits (classes {train.class_names})")

    net = build(cfg, input_hw=train.image(0).shape)
    model = train_all(net, train)

    for rec, traj in zip(model.provenance["layers"], model.trajectories):
        traj = np.asarray(traj, dtype=np.float64)
        state = "converged" if rec["converged"] else "hit the iteration cap"
        print(
            f"conv layer {rec['conv_index']}: start C={traj[0]:.3f}, "
            f"peak {traj.max():.3f}, final {traj[-1]:.4f}; "
            f"{state} after {rec['iterations']} presentations"
        )
        w = np.asarray(model.conv_weights[rec["conv_index"]], dtype=np.float64)
        print(
            f"  weights within 0.1 of 0 or 1: {float(np.mean((w <= 0.1) | (w >= 0.9))):.1%}"
        )

    for ci, w in enumerate(model.conv_weights):
        for m in range(np.asarray(w).shape[0]):
            img = reconstruct_feature(model, ci, m)
            gray = Image.fromarray(np.round(img * 255).astype(np.uint8), mode="L")
            gray = gray.resize((gray.width * 8, gray.height * 8), Image.NEAREST)
            gray.save(OUT / f"conv{ci}_map{m:02d}.png")
    print(f"reconstructions written to {OUT}")
    print("layer-0 maps resemble oriented ink edges; layer-1 maps combine them")


if __name__ == "__main__":
    main()
