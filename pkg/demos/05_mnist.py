"""The real-data recipe: desk-scale MNIST through the command line.

Looks for the four MNIST IDX files (plain or .gz), then runs the same
commands you would type yourself: train on 1000 images per digit, score
on 200 per digit, summarize the model, and render the first-layer
features. Without the files it prints where to put them and exits.
Expect tens of minutes when the data is present.
"""

import os
import sys
from pathlib import Path

from spikeconv.cli import main as cli

ROOT = Path(__file__).parent.parent
OUT = Path(__file__).parent / "out" / "mnist"

FILES = (
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
)


def find_data() -> Path | None:
    roots = []
    env = os.environ.get("SPIKECONV_DATA")
    if env:
        roots += [Path(env), Path(env) / "mnist"]
    roots.append(ROOT / "data" / "mnist")
    for root in roots:
        if all((root / f).exists() or (root / (f + ".gz")).exists() for f in FILES):
            return root
    return None


def main() -> int:
    root = find_data()
    if root is None:
        print("MNIST IDX files not found. Place these four files (plain or .gz):")
        for f in FILES:
            print(f"  {f}")
        print(f"under {ROOT / 'data' / 'mnist'} or a directory named by $SPIKECONV_DATA.")
        return 0

    run = OUT / "run"
    print(f"data found at {root}; training the desk profile (this takes a while)")
    code = cli(
        ["train", "--config", str(ROOT / "configs" / "mnist_desk.json"),
         "--data", str(root), "--out", str(run)]
    )
    if code != 0:
        return code
    code = cli(
        ["eval", "--model", str(run / "model.bin"), "--data", str(root),
         "--out", str(OUT / "eval")]
    )
    if code != 0:
        return code
    cli(["stats", "--model", str(run / "model.bin"), "--out", str(OUT / "stats")])
    cli(
        ["reconstruct", "--model", str(run / "model.bin"), "--layer", "1",
         "--out", str(OUT / "features")]
    )
    print(f"artifacts under {OUT}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
