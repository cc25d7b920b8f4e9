"""Input encoding: grayscale preprocessing, DoG filtering, first-spike latency coding.

The front end converts an image into a `SpikeWave`: a sparse, time-bucketed
set of spikes where stronger local contrast fires earlier. Downstream layers
only ever see spike order, never raw intensities.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import correlate

from .errors import ConfigError, DataError

__all__ = [
    "DogSpec",
    "SpikeWave",
    "preprocess",
    "dog_kernel",
    "dog_filter",
    "latency_encode",
    "encode_image",
]

# Map indices of the two contrast polarities in an on/off response stack.
ON = 0
OFF = 1


@dataclass(frozen=True)
class DogSpec:
    """Difference-of-Gaussians front end parameters.

    `polarity` is "on_off" (bright-center and dark-center cells, two maps)
    or "on" (bright-center only, one map). `firing_threshold` gates which
    contrast cells may spike at all; it is expressed in the same units as
    the normalized [0, 1] intensities.
    """

    kernel_size: int = 7
    sigma_center: float = 1.0
    sigma_surround: float = 2.0
    polarity: str = "on_off"
    firing_threshold: float = 50.0 / 255.0

    def __post_init__(self) -> None:
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise ConfigError(f"DoG kernel_size must be odd and >= 3, got {self.kernel_size}")
        if not (0.0 < self.sigma_center < self.sigma_surround):
            raise ConfigError(
                "DoG sigmas must satisfy 0 < sigma_center < sigma_surround, "
                f"got {self.sigma_center} and {self.sigma_surround}"
            )
        if self.polarity not in ("on_off", "on"):
            raise ConfigError(f"DoG polarity must be 'on_off' or 'on', got {self.polarity!r}")
        if self.firing_threshold < 0:
            raise ConfigError(f"DoG firing_threshold must be >= 0, got {self.firing_threshold}")

    @property
    def n_maps(self) -> int:
        return 2 if self.polarity == "on_off" else 1


class SpikeWave:
    """A per-image set of spikes bucketed into discrete time steps.

    Stored compactly as one int16 event table with columns
    (step, map, y, x), sorted by step, plus per-step offsets. Every neuron
    appears at most once. Within a step, events are kept in (map, y, x)
    order so that equal waves compare equal array-wise.
    """

    __slots__ = ("events", "offsets", "shape", "time_steps")

    def __init__(self, events: np.ndarray, offsets: np.ndarray, shape: tuple[int, int, int], time_steps: int):
        self.events = events
        self.offsets = offsets
        self.shape = shape
        self.time_steps = time_steps

    @classmethod
    def from_step_arrays(
        cls, buckets: list[np.ndarray], shape: tuple[int, int, int], time_steps: int
    ) -> "SpikeWave":
        """Build a wave from per-step (n, 3) arrays of (map, y, x) rows."""
        if len(buckets) != time_steps:
            raise ValueError(f"expected {time_steps} buckets, got {len(buckets)}")
        counts = [0] * time_steps
        rows = []
        for t, b in enumerate(buckets):
            b = np.asarray(b, dtype=np.int16).reshape(-1, 3)
            if b.size:
                # canonical intra-step order
                order = np.lexsort((b[:, 2], b[:, 1], b[:, 0]))
                b = b[order]
            counts[t] = len(b)
            step_col = np.full((len(b), 1), t, dtype=np.int16)
            rows.append(np.hstack([step_col, b]))
        events = np.vstack(rows) if rows else np.zeros((0, 4), dtype=np.int16)
        offsets = np.zeros(time_steps + 1, dtype=np.int32)
        np.cumsum(counts, out=offsets[1:])
        return cls(events.astype(np.int16, copy=False), offsets, shape, time_steps)

    def bucket(self, t: int) -> np.ndarray:
        """(n, 3) view of the (map, y, x) events fired at step t."""
        return self.events[self.offsets[t] : self.offsets[t + 1], 1:4]

    def total_spikes(self) -> int:
        return int(len(self.events))

    def first_spike_steps(self) -> np.ndarray:
        """Dense (maps, H, W) int16 array of spike steps, -1 where silent."""
        out = np.full(self.shape, -1, dtype=np.int16)
        if len(self.events):
            e = self.events
            out[e[:, 1], e[:, 2], e[:, 3]] = e[:, 0]
        return out

    def validate(self) -> None:
        """Check coordinate ranges and the one-spike-per-neuron invariant."""
        e = self.events
        c, h, w = self.shape
        if len(e) == 0:
            return
        if e[:, 0].min() < 0 or e[:, 0].max() >= self.time_steps:
            raise ValueError("spike step out of range")
        if (
            e[:, 1].min() < 0 or e[:, 1].max() >= c
            or e[:, 2].min() < 0 or e[:, 2].max() >= h
            or e[:, 3].min() < 0 or e[:, 3].max() >= w
        ):
            raise ValueError("spike coordinate out of range")
        flat = (e[:, 1].astype(np.int64) * h + e[:, 2]) * w + e[:, 3]
        if len(np.unique(flat)) != len(flat):
            raise ValueError("a neuron spiked more than once")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SpikeWave):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.time_steps == other.time_steps
            and np.array_equal(self.events, other.events)
            and np.array_equal(self.offsets, other.offsets)
        )

    def __repr__(self) -> str:
        return f"SpikeWave(shape={self.shape}, steps={self.time_steps}, spikes={self.total_spikes()})"


def preprocess(image, target_height: int | None = None) -> np.ndarray:
    """Normalize an image to a float64 [0, 1] grayscale array.

    Accepts a numpy array (grayscale or RGB, uint8 or float), encoded image
    bytes, or a PIL image. If `target_height` is given the image is rescaled
    proportionally (bilinear); the output width is round-half-up of the
    scaled width.
    """
    from PIL import Image, UnidentifiedImageError

    if isinstance(image, (bytes, bytearray)):
        try:
            with Image.open(io.BytesIO(image)) as im:
                im.load()
                arr = _pil_to_gray(im)
        except (UnidentifiedImageError, OSError) as exc:
            raise DataError(f"cannot decode image bytes: {exc}") from exc
    elif isinstance(image, Image.Image):
        arr = _pil_to_gray(image)
    else:
        arr = np.asarray(image)
        if arr.ndim == 3:
            if arr.shape[2] not in (3, 4):
                raise DataError(f"expected RGB(A) channels, got shape {arr.shape}")
            rgb = arr[:, :, :3].astype(np.float64)
            arr = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
            if np.issubdtype(np.asarray(image).dtype, np.integer):
                arr = arr / 255.0
        elif arr.ndim == 2:
            if np.issubdtype(arr.dtype, np.integer):
                arr = arr.astype(np.float64) / 255.0
            else:
                arr = arr.astype(np.float64)
        else:
            raise DataError(f"expected a 2-D or 3-D image array, got shape {arr.shape}")
        arr = np.clip(arr, 0.0, 1.0)

    if arr.size == 0:
        raise DataError("empty image")

    if target_height is not None and arr.shape[0] != target_height:
        if target_height < 1:
            raise ConfigError(f"target_height must be >= 1, got {target_height}")
        h, w = arr.shape
        new_w = int(math.floor(w * (target_height / h) + 0.5))
        new_w = max(new_w, 1)
        from PIL import Image as _Image

        im = _Image.fromarray(arr.astype(np.float32), mode="F")
        im = im.resize((new_w, target_height), resample=_Image.Resampling.BILINEAR)
        arr = np.asarray(im, dtype=np.float64)
        arr = np.clip(arr, 0.0, 1.0)
    return arr


def _pil_to_gray(im) -> np.ndarray:
    if im.mode != "L":
        im = im.convert("L")
    return np.asarray(im, dtype=np.float64) / 255.0


def dog_kernel(size: int, sigma_center: float, sigma_surround: float) -> np.ndarray:
    """Difference of two unit-sum Gaussians on a size x size grid, zero-sum.

    After mean subtraction the taps are snapped to multiples of 2^-44 and
    the residual is folded into the center tap. On that grid every partial
    sum is exactly representable, so np.sum(kernel) is exactly 0.0 under
    any summation order. The snap perturbs each tap by < 3e-14, far below
    anything a contrast threshold can see.
    """
    r = (size - 1) // 2
    ax = np.arange(-r, r + 1, dtype=np.float64)
    d2 = ax[:, None] ** 2 + ax[None, :] ** 2
    center = np.exp(-d2 / (2.0 * sigma_center**2))
    surround = np.exp(-d2 / (2.0 * sigma_surround**2))
    k = center / center.sum() - surround / surround.sum()
    k -= k.mean()
    quantum = 2.0**-44
    k = np.round(k / quantum) * quantum
    k[r, r] -= np.sum(k)
    return k


def dog_filter(image: np.ndarray, spec: DogSpec) -> np.ndarray:
    """Rectified contrast maps, shape (n_maps, H-k+1, W-k+1).

    Valid-region correlation only: no padding, each output cell sees a full
    kernel window. The image mean is subtracted before correlating; with a
    zero-sum kernel this is a no-op mathematically but it makes the response
    to any constant image exactly zero in floating point too.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise DataError(f"dog_filter expects a 2-D grayscale array, got shape {img.shape}")
    k = spec.kernel_size
    if img.shape[0] < k or img.shape[1] < k:
        raise DataError(
            f"image {img.shape} is smaller than the {k}x{k} DoG kernel window"
        )
    kernel = dog_kernel(k, spec.sigma_center, spec.sigma_surround)
    centered = img - img.mean()
    resp = correlate(centered, kernel, mode="valid", method="direct")
    on = np.maximum(resp, 0.0)
    if spec.polarity == "on":
        return on[None, :, :]
    off = np.maximum(-resp, 0.0)
    return np.stack([on, off])


def latency_encode(contrasts: np.ndarray, threshold: float, time_steps: int) -> SpikeWave:
    """Turn a contrast stack into a first-spike latency wave.

    Cells with contrast strictly above `threshold` fire exactly once,
    stronger cells earlier. Eligible cells are sorted by contrast
    (descending, ties broken by (map, y, x) ascending) and split into
    equal-size sequential packets of ceil(N / time_steps); packet k fires
    at step k. The relative order is all that matters downstream, so the
    wave is invariant under any positive rescaling of the contrasts that
    preserves the eligible set.
    """
    c = np.asarray(contrasts, dtype=np.float64)
    if c.ndim != 3:
        raise ValueError(f"latency_encode expects (maps, H, W), got shape {c.shape}")
    if time_steps < 1:
        raise ConfigError(f"time_steps must be >= 1, got {time_steps}")
    maps, ys, xs = np.nonzero(c > threshold)
    n = len(maps)
    shape = (int(c.shape[0]), int(c.shape[1]), int(c.shape[2]))
    if n == 0:
        return SpikeWave(
            np.zeros((0, 4), dtype=np.int16),
            np.zeros(time_steps + 1, dtype=np.int32),
            shape,
            time_steps,
        )
    values = c[maps, ys, xs]
    # lexsort: last key is primary. Descending contrast, then map, y, x asc.
    order = np.lexsort((xs, ys, maps, -values))
    packet = -(-n // time_steps)  # ceil
    steps = (np.arange(n) // packet).astype(np.int16)
    events = np.empty((n, 4), dtype=np.int16)
    events[:, 0] = steps
    events[:, 1] = maps[order]
    events[:, 2] = ys[order]
    events[:, 3] = xs[order]
    # canonical (map, y, x) order inside each packet
    resort = np.lexsort((events[:, 3], events[:, 2], events[:, 1], events[:, 0]))
    events = events[resort]
    offsets = np.zeros(time_steps + 1, dtype=np.int32)
    filled = int(steps[-1]) + 1
    counts = np.bincount(steps, minlength=time_steps)
    np.cumsum(counts, out=offsets[1:])
    assert filled <= time_steps
    return SpikeWave(events, offsets, shape, time_steps)


def encode_image(image: np.ndarray, spec: DogSpec, time_steps: int) -> SpikeWave:
    """preprocess-ed image -> DoG contrasts -> latency wave."""
    contrasts = dog_filter(image, spec)
    return latency_encode(contrasts, spec.firing_threshold, time_steps)
