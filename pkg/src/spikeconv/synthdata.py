"""Rendered-digit corpus for tests and demos when no real dataset is on disk.

Digits 0-9 are drawn with a vector font under seeded geometric jitter
(shift, scale, rotation), giving MNIST-shaped uint8 rasters whose class
structure is genuine but whose provenance is fully local. Not a
benchmark; a deterministic stand-in.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .datasets import write_idx

__all__ = ["render_digit", "build_corpus", "corpus_to_folder", "corpus_to_idx"]

_FONT_CACHE: dict[int, object] = {}


def _font(size: int):
    from PIL import ImageFont

    if size in _FONT_CACHE:
        return _FONT_CACHE[size]
    font = None
    try:
        import matplotlib

        # bold face: stroke widths after downscale land near real pen strokes
        path = Path(matplotlib.get_data_path()) / "fonts" / "ttf" / "DejaVuSans-Bold.ttf"
        if path.is_file():
            font = ImageFont.truetype(str(path), size)
    except ImportError:
        pass
    if font is None:
        font = ImageFont.load_default(size)
    _FONT_CACHE[size] = font
    return font


def render_digit(digit: int, rng: np.random.Generator, size: int = 28) -> np.ndarray:
    """One white-on-black digit raster with seeded pose jitter."""
    from PIL import Image, ImageDraw

    if not 0 <= digit <= 9:
        raise ValueError(f"digit must be 0..9, got {digit}")
    canvas = size * 2
    font_px = int(round(canvas * float(rng.uniform(0.68, 0.92))))
    angle = float(rng.uniform(-22.0, 22.0))
    dx = float(rng.uniform(-3.5, 3.5))
    dy = float(rng.uniform(-3.5, 3.5))

    im = Image.new("L", (canvas, canvas), 0)
    draw = ImageDraw.Draw(im)
    font = _font(font_px)
    text = str(digit)
    left, top, right, bottom = draw.textbbox((0, 0), text, font=font)
    cx = (canvas - (right - left)) / 2 - left
    cy = (canvas - (bottom - top)) / 2 - top
    draw.text((cx, cy), text, fill=255, font=font)
    im = im.rotate(angle, resample=Image.BILINEAR, translate=(dx * 2, dy * 2))
    im = im.resize((size, size), Image.BILINEAR)
    return np.asarray(im, dtype=np.uint8)


def build_corpus(
    n_per_class: int, seed: int = 0, size: int = 28, classes=range(10)
) -> tuple[np.ndarray, np.ndarray]:
    """Class-balanced digit stack: (images uint8 (N, size, size), labels)."""
    images, labels = [], []
    for d in classes:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(d,)))
        for _ in range(n_per_class):
            images.append(render_digit(d, rng, size))
            labels.append(d)
    return np.stack(images), np.array(labels, dtype=np.int64)


def corpus_to_folder(root, n_per_class: int, seed: int = 0, size: int = 28) -> Path:
    """Write the corpus as a directory-per-class PNG tree."""
    from PIL import Image

    root = Path(root)
    images, labels = build_corpus(n_per_class, seed, size)
    for i, (img, lab) in enumerate(zip(images, labels)):
        cdir = root / str(lab)
        cdir.mkdir(parents=True, exist_ok=True)
        Image.fromarray(img, mode="L").save(cdir / f"{i:05d}.png")
    return root


def corpus_to_idx(directory, n_train: int, n_test: int, seed: int = 0, size: int = 28) -> Path:
    """Write the corpus as MNIST-layout IDX files (train/t10k pairs)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for tag, n, s in (("train", n_train, seed), ("t10k", n_test, seed + 1)):
        images, labels = build_corpus(n, s, size)
        write_idx(
            directory / f"{tag}-images-idx3-ubyte",
            directory / f"{tag}-labels-idx1-ubyte",
            images,
            labels,
        )
    return directory
