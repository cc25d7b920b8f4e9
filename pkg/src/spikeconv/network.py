"""Event-driven integrate-and-fire convolution and pooling layers.

Neurons are non-leaky: a potential only changes when a presynaptic spike
lands in its window. Per image, each neuron fires at most once; the first
map to fire at a location laterally inhibits every other map there for the
rest of the image. Both states pin the potential to zero and forbid any
further integration, so the engine tracks a single per-location `blocked`
flag, integrates unconditionally until a location blocks, and masks blocked
locations whenever potentials are read back.

Spikes cascade within a time step: the events of input bucket t are
integrated, then threshold crossings fire at step t, then the next layer
sees those spikes at step t. Only relative spike order carries information,
so this choice just removes a constant per-layer latency offset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoding import SpikeWave
from .errors import ConfigError

__all__ = [
    "ConvSpec",
    "PoolSpec",
    "ThresholdNoise",
    "ConvLayer",
    "PoolLayer",
    "FireRecord",
    "RunResult",
    "threshold_field",
    "jitter_threshold",
    "run_wave",
    "global_pool_features",
]


@dataclass(frozen=True)
class ConvSpec:
    """Shape and firing threshold of one convolution layer."""

    maps: int
    window: tuple[int, int]
    threshold: float

    def __post_init__(self) -> None:
        if self.maps < 1:
            raise ConfigError(f"conv layer needs >= 1 map, got {self.maps}")
        kh, kw = self.window
        if kh < 1 or kw < 1:
            raise ConfigError(f"conv window must be positive, got {self.window}")
        if not self.threshold > 0:
            raise ConfigError(f"conv threshold must be > 0, got {self.threshold}")


@dataclass(frozen=True)
class PoolSpec:
    """First-spike max pooling window and stride."""

    window: tuple[int, int]
    stride: int

    def __post_init__(self) -> None:
        h, w = self.window
        if h < 1 or w < 1:
            raise ConfigError(f"pool window must be positive, got {self.window}")
        if self.stride < 1:
            raise ConfigError(f"pool stride must be >= 1, got {self.stride}")


@dataclass(frozen=True)
class ThresholdNoise:
    """Uniform per-neuron, per-image threshold jitter in [-alpha*thr, +alpha*thr].

    Draws are a pure function of (seed, image_key, layer_index, neuron
    position), generated by a counter-based Philox stream, so any single
    neuron's jitter can be reproduced in isolation.
    """

    alpha: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigError(f"threshold noise alpha must be in [0, 1], got {self.alpha}")


def threshold_field(
    noise: ThresholdNoise | None,
    base: float,
    shape: tuple[int, int, int],
    image_key: int,
    layer_index: int,
):
    """Per-neuron thresholds for one image; the exact float `base` when inactive."""
    if noise is None or noise.alpha == 0.0:
        return base
    ss = np.random.SeedSequence(entropy=noise.seed, spawn_key=(image_key, layer_index))
    rng = np.random.Generator(np.random.Philox(ss))
    span = noise.alpha * base
    return base + rng.uniform(-span, span, size=shape)


def jitter_threshold(
    noise: ThresholdNoise | None,
    base: float,
    neuron_index: int,
    image_key: int,
    layer_index: int,
    layer_shape: tuple[int, int, int],
) -> float:
    """Jittered threshold of one neuron (flat index into the layer grid)."""
    field = threshold_field(noise, base, layer_shape, image_key, layer_index)
    if isinstance(field, float):
        return field
    return float(field.reshape(-1)[neuron_index])


class FireRecord:
    """Spikes of one conv layer during one image, with potentials at fire time."""

    __slots__ = ("maps", "ys", "xs", "steps", "potentials")

    def __init__(self) -> None:
        self.maps: list[np.ndarray] = []
        self.ys: list[np.ndarray] = []
        self.xs: list[np.ndarray] = []
        self.steps: list[np.ndarray] = []
        self.potentials: list[np.ndarray] = []

    def append(self, maps, ys, xs, step, potentials) -> None:
        self.maps.append(maps)
        self.ys.append(ys)
        self.xs.append(xs)
        self.steps.append(np.full(len(maps), step, dtype=np.int16))
        self.potentials.append(potentials)

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        if not self.maps:
            z = np.zeros(0, dtype=np.int16)
            return z, z.copy(), z.copy(), z.copy(), np.zeros(0)
        return (
            np.concatenate(self.maps),
            np.concatenate(self.ys),
            np.concatenate(self.xs),
            np.concatenate(self.steps),
            np.concatenate(self.potentials),
        )

    def count(self) -> int:
        return sum(len(m) for m in self.maps)


class ConvLayer:
    """One integrate-and-fire convolution layer with shared per-map weights.

    Weights have shape (maps, in_maps, kh, kw) and are shared by every
    output position of a map (valid region only, stride 1). Call
    `reset(in_shape, ...)` before each image, then `integrate`/`fire`
    per step.
    """

    def __init__(self, spec: ConvSpec, in_maps: int, weights: np.ndarray | None = None):
        self.spec = spec
        self.in_maps = in_maps
        kh, kw = spec.window
        if weights is None:
            weights = np.full((spec.maps, in_maps, kh, kw), 0.5, dtype=np.float64)
        self.set_weights(weights)
        self.potentials: np.ndarray | None = None
        self.blocked: np.ndarray | None = None
        self.fire_record = FireRecord()
        self._threshold: float | np.ndarray = spec.threshold
        self._infinite = False
        self.out_shape: tuple[int, int, int] | None = None

    def set_weights(self, weights: np.ndarray) -> None:
        kh, kw = self.spec.window
        expect = (self.spec.maps, self.in_maps, kh, kw)
        if weights.shape != expect:
            raise ConfigError(f"conv weights shape {weights.shape} != {expect}")
        self.weights = np.ascontiguousarray(weights, dtype=np.float64)
        # correlation orientation flipped once so integration is a block add
        self._wflip = np.ascontiguousarray(self.weights[:, :, ::-1, ::-1])

    def weights_changed(self) -> None:
        """Refresh the flipped view after in-place weight updates."""
        self._wflip = np.ascontiguousarray(self.weights[:, :, ::-1, ::-1])

    def output_shape(self, in_shape: tuple[int, int, int]) -> tuple[int, int, int]:
        c, h, w = in_shape
        kh, kw = self.spec.window
        if c != self.in_maps:
            raise ConfigError(f"conv expects {self.in_maps} input maps, got {c}")
        oh, ow = h - kh + 1, w - kw + 1
        if oh < 1 or ow < 1:
            raise ConfigError(
                f"conv window {self.spec.window} does not fit input {h}x{w}"
            )
        return (self.spec.maps, oh, ow)

    def reset(
        self,
        in_shape: tuple[int, int, int],
        noise: ThresholdNoise | None = None,
        image_key: int = 0,
        layer_index: int = 0,
        infinite_threshold: bool = False,
    ) -> tuple[int, int, int]:
        """Clear all per-image state and size the grids for this input."""
        self.out_shape = self.output_shape(in_shape)
        self.potentials = np.zeros(self.out_shape, dtype=np.float64)
        self.blocked = np.zeros(self.out_shape[1:], dtype=bool)
        self.fire_record = FireRecord()
        self._infinite = infinite_threshold
        self._threshold = (
            np.inf
            if infinite_threshold
            else threshold_field(noise, self.spec.threshold, self.out_shape, image_key, layer_index)
        )
        return self.out_shape

    def integrate(self, events: np.ndarray) -> None:
        """Add each input spike's weight column into the windows it reaches.

        An input spike at (c, y, x) reaches output positions
        (y-kh+1..y, x-kw+1..x) clipped to the grid; the flipped kernel
        block aligned to that clip is added to every map at once.
        """
        if len(events) == 0:
            return
        v = self.potentials
        wf = self._wflip
        kh, kw = self.spec.window
        _, oh, ow = self.out_shape
        for c, y, x in events:
            a = y - kh + 1
            b = y + 1
            ka = 0
            if a < 0:
                ka = -a
                a = 0
            if b > oh:
                b = oh
            l = x - kw + 1
            r = x + 1
            kl = 0
            if l < 0:
                kl = -l
                l = 0
            if r > ow:
                r = ow
            if a >= b or l >= r:
                continue
            v[:, a:b, l:r] += wf[:, c, ka : ka + (b - a), kl : kl + (r - l)]

    def fire(self, step: int) -> np.ndarray:
        """Two-phase threshold resolution for one step.

        Phase one collects every non-blocked neuron at or above threshold.
        Phase two emits exactly one spike per location: the candidate with
        the highest potential, ties to the lowest map index. The winner's
        location blocks (winner fired, other maps laterally inhibited).
        Returns the emitted (map, y, x) events.
        """
        if self._infinite:
            return _EMPTY_EVENTS
        v = self.potentials
        cand = v >= self._threshold
        if not cand.any():
            return _EMPTY_EVENTS
        cand &= ~self.blocked[None, :, :]
        loc = cand.any(axis=0)
        if not loc.any():
            return _EMPTY_EVENTS
        ys, xs = np.nonzero(loc)
        vc = v[:, ys, xs]
        masked = np.where(cand[:, ys, xs], vc, -np.inf)
        # argmax picks the first maximum, i.e. the lowest map index on ties
        winner_map = np.argmax(masked, axis=0).astype(np.int16)
        pots = vc[winner_map, np.arange(len(ys))]
        v[:, ys, xs] = 0.0
        self.blocked[ys, xs] = True
        ys16 = ys.astype(np.int16)
        xs16 = xs.astype(np.int16)
        self.fire_record.append(winner_map, ys16, xs16, step, pots)
        out = np.empty((len(ys), 3), dtype=np.int16)
        out[:, 0] = winner_map
        out[:, 1] = ys16
        out[:, 2] = xs16
        return out

    def final_potentials(self) -> np.ndarray:
        """Accumulated potentials with every blocked location pinned to zero."""
        return np.where(self.blocked[None, :, :], 0.0, self.potentials)


_EMPTY_EVENTS = np.zeros((0, 3), dtype=np.int16)


class PoolLayer:
    """First-spike max pooling: a pooled cell relays the first spike of its window.

    Map-preserving. With stride < window, one afferent can feed several
    pooled cells; each pooled cell still fires at most once per image.
    """

    def __init__(self, spec: PoolSpec):
        self.spec = spec
        self.fired: np.ndarray | None = None
        self.out_shape: tuple[int, int, int] | None = None
        self.spike_count = 0

    def output_shape(self, in_shape: tuple[int, int, int]) -> tuple[int, int, int]:
        c, h, w = in_shape
        ph, pw = self.spec.window
        s = self.spec.stride
        oh = (h - ph) // s + 1
        ow = (w - pw) // s + 1
        if oh < 1 or ow < 1:
            raise ConfigError(f"pool window {self.spec.window} does not fit input {h}x{w}")
        return (c, oh, ow)

    def reset(self, in_shape: tuple[int, int, int]) -> tuple[int, int, int]:
        self.out_shape = self.output_shape(in_shape)
        self.fired = np.zeros(self.out_shape, dtype=bool)
        self.spike_count = 0
        return self.out_shape

    def step(self, events: np.ndarray) -> np.ndarray:
        """Map input spikes to the pooled cells they cover; emit first spikes."""
        if len(events) == 0:
            return _EMPTY_EVENTS
        ph, pw = self.spec.window
        s = self.spec.stride
        c, oh, ow = self.out_shape
        m = events[:, 0].astype(np.int64)
        y = events[:, 1].astype(np.int64)
        x = events[:, 2].astype(np.int64)
        # pooled rows covering input row y: ceil((y-ph+1)/s) .. floor(y/s)
        lo_y = np.maximum(-((ph - 1 - y) // s), 0)
        hi_y = np.minimum(y // s, oh - 1)
        lo_x = np.maximum(-((pw - 1 - x) // s), 0)
        hi_x = np.minimum(x // s, ow - 1)
        ny = hi_y - lo_y + 1
        nx = hi_x - lo_x + 1
        keep = (ny > 0) & (nx > 0)
        if not keep.all():
            m, lo_y, ny, lo_x, nx = m[keep], lo_y[keep], ny[keep], lo_x[keep], nx[keep]
        if len(m) == 0:
            return _EMPTY_EVENTS
        # expand each event to its covered (oy, ox) grid
        idx = np.repeat(np.arange(len(m)), ny)
        oy = lo_y[idx] + _ranges(ny)
        m2 = m[idx]
        lo_x2 = lo_x[idx]
        nx2 = nx[idx]
        idx2 = np.repeat(np.arange(len(oy)), nx2)
        ox = lo_x2[idx2] + _ranges(nx2)
        oy = oy[idx2]
        m3 = m2[idx2]
        flat = (m3 * oh + oy) * ow + ox
        fresh = ~self.fired.reshape(-1)[flat]
        flat = np.unique(flat[fresh])
        if len(flat) == 0:
            return _EMPTY_EVENTS
        self.fired.reshape(-1)[flat] = True
        self.spike_count += len(flat)
        out = np.empty((len(flat), 3), dtype=np.int16)
        out[:, 0] = flat // (oh * ow)
        out[:, 1] = (flat // ow) % oh
        out[:, 2] = flat % ow
        return out


def _ranges(counts: np.ndarray) -> np.ndarray:
    """Concatenated arange(c) for each c in counts: [0..c0-1, 0..c1-1, ...]."""
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    ends = np.cumsum(counts)
    out = np.arange(total, dtype=np.int64)
    out -= np.repeat(ends - counts, counts)
    return out


@dataclass
class RunResult:
    """Per-layer spike counts plus any output waves the caller asked for."""

    spike_counts: list[int]
    recorded: dict[int, SpikeWave]


def run_wave(
    layers: list,
    wave: SpikeWave,
    noise: ThresholdNoise | None = None,
    image_key: int = 0,
    infinite_last_conv: bool = False,
    stop_after: int | None = None,
    record_outputs: tuple[int, ...] = (),
) -> RunResult:
    """Drive one input wave through a layer chain, step by step.

    `layers` is a list of ConvLayer/PoolLayer in feed-forward order. When
    `stop_after` is given, layers past that index stay idle (used while a
    layer is being trained) and report a spike count of -1. With
    `infinite_last_conv` the final conv layer only integrates, never fires;
    its accumulated potentials feed global pooling. Per-layer state (fire
    records, potentials) stays on the layer objects; output waves are
    assembled only for the indices in `record_outputs`.
    """
    active = layers if stop_after is None else layers[: stop_after + 1]
    last_conv = None
    if infinite_last_conv:
        for i in range(len(active) - 1, -1, -1):
            if isinstance(active[i], ConvLayer):
                last_conv = i
                break
    shape = wave.shape
    conv_index = 0
    for i, layer in enumerate(active):
        if isinstance(layer, ConvLayer):
            shape = layer.reset(
                shape,
                noise=noise,
                image_key=image_key,
                layer_index=conv_index,
                infinite_threshold=(i == last_conv),
            )
            conv_index += 1
        else:
            shape = layer.reset(shape)
    out_shapes = [layer.out_shape for layer in active]
    buckets: dict[int, list[np.ndarray]] = {
        i: [_EMPTY_EVENTS] * wave.time_steps for i in record_outputs if i < len(active)
    }
    for t in range(wave.time_steps):
        events = wave.bucket(t)
        for i, layer in enumerate(active):
            if len(events) == 0:
                break
            if isinstance(layer, ConvLayer):
                layer.integrate(events)
                events = layer.fire(t)
            else:
                events = layer.step(events)
            if i in buckets and len(events):
                buckets[i][t] = events
    counts: list[int] = []
    for i in range(len(layers)):
        if i >= len(active):
            counts.append(-1)
        elif isinstance(layers[i], ConvLayer):
            counts.append(layers[i].fire_record.count())
        else:
            counts.append(layers[i].spike_count)
    recorded = {
        i: SpikeWave.from_step_arrays(b, out_shapes[i], wave.time_steps)
        for i, b in buckets.items()
    }
    return RunResult(spike_counts=counts, recorded=recorded)


def global_pool_features(last_conv: ConvLayer) -> np.ndarray:
    """One value per map: the max accumulated potential over all positions.

    Run the wave with `infinite_last_conv=True` first; the layer then never
    fires and its final potentials count weighted early spikes per window.
    """
    v = last_conv.final_potentials()
    return v.reshape(v.shape[0], -1).max(axis=1)
