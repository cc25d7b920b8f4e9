"""Unsupervised plasticity: soft-bound STDP, competition, convergence tracking.

Learning is layer by layer. For each presented image the layer runs its
event-driven forward pass, one winner per map is picked under intra-map
(earliest spike) and inter-map (spatial exclusion) competition, and each
winner's map tensor gets one STDP update over its input window. Exact spike
time differences never matter, only whether a presynaptic neuron fired at
or before the winner.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .network import ConvLayer, ThresholdNoise

__all__ = [
    "StdpParams",
    "WeightInitSpec",
    "WinnerRecord",
    "ConvergenceTracker",
    "TrainLayerResult",
    "stdp_delta",
    "select_winners",
    "apply_stdp",
    "convergence_index",
    "init_weights",
    "resolve_params",
    "train_layer",
]


@dataclass(frozen=True)
class StdpParams:
    """Learning-rule constants for one layer.

    `a_plus` strengthens synapses whose afferent fired at or before the
    winner, `a_minus` weakens the rest. Both scale the soft-bound term
    w(1-w). `inhibition_radius` is the Chebyshev exclusion distance between
    winners of different maps; None means half the conv window, resolved at
    build time. `a_plus = a_minus = 0` is allowed as an explicit
    plasticity-off mode.
    """

    a_plus: float = 0.004
    a_minus: float = 0.003
    inhibition_radius: int | None = None
    convergence_stop: float = 0.01
    max_iterations: int | None = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.a_plus < 1.0 and 0.0 <= self.a_minus < 1.0):
            raise ConfigError(
                f"STDP rates must lie in [0, 1), got a_plus={self.a_plus} a_minus={self.a_minus}"
            )
        if not (self.a_minus < self.a_plus or (self.a_plus == 0.0 and self.a_minus == 0.0)):
            raise ConfigError(
                "depression must be weaker than potentiation (a_minus < a_plus), "
                f"got a_plus={self.a_plus} a_minus={self.a_minus}"
            )
        if self.inhibition_radius is not None and self.inhibition_radius < 0:
            raise ConfigError(f"inhibition_radius must be >= 0, got {self.inhibition_radius}")
        if not (0.0 <= self.convergence_stop <= 0.25):
            raise ConfigError(f"convergence_stop must be in [0, 0.25], got {self.convergence_stop}")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be >= 1, got {self.max_iterations}")


@dataclass(frozen=True)
class WeightInitSpec:
    """Gaussian weight initialization, clamped to [0, 1]."""

    mean: float = 0.8
    std: float = 0.05
    seed: int | None = None  # None -> derived from the run seed per layer

    def __post_init__(self) -> None:
        if not (0.0 <= self.mean <= 1.0):
            raise ConfigError(f"init mean must be in [0, 1], got {self.mean}")
        if self.std < 0:
            raise ConfigError(f"init std must be >= 0, got {self.std}")


@dataclass(frozen=True)
class WinnerRecord:
    """One accepted STDP winner: a map's earliest, strongest spike."""

    map: int
    y: int
    x: int
    step: int
    potential: float


def init_weights(shape: tuple[int, ...], spec: WeightInitSpec, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. N(mean, std) weights clamped to [0, 1], float64."""
    w = rng.normal(spec.mean, spec.std, size=shape) if spec.std > 0 else np.full(shape, spec.mean)
    return np.clip(w, 0.0, 1.0)


def stdp_delta(w, causal, params: StdpParams):
    """Soft-bound weight change: +a_plus*w*(1-w) if causal, else -a_minus*w*(1-w).

    Accepts scalars or arrays. The multiplicative w(1-w) term vanishes at
    both bounds, so updates can never leave [0, 1].
    """
    w = np.asarray(w, dtype=np.float64)
    if np.any(w < 0.0) or np.any(w > 1.0):
        raise ValueError("weights outside [0, 1]")
    coef = np.where(causal, params.a_plus, -params.a_minus)
    out = coef * w * (1.0 - w)
    return float(out) if out.ndim == 0 else out


def select_winners(fire_record, params: StdpParams) -> list[WinnerRecord]:
    """Pick at most one STDP winner per map for the presented image.

    Per map the candidate is its earliest spike (ties: highest potential at
    fire time, then raster order). Candidates are then visited in
    (step asc, potential desc, map asc) order and accepted greedily unless
    an already-accepted winner of another map lies within Chebyshev
    distance <= params.inhibition_radius.
    """
    if params.inhibition_radius is None:
        raise ConfigError("inhibition_radius unresolved; derive it from the conv window first")
    radius = params.inhibition_radius
    maps, ys, xs, steps, pots = fire_record.stacked()
    if len(maps) == 0:
        return []
    order = np.lexsort((xs, ys, -pots, steps))
    candidates: dict[int, WinnerRecord] = {}
    for i in order:
        m = int(maps[i])
        if m not in candidates:
            candidates[m] = WinnerRecord(
                map=m, y=int(ys[i]), x=int(xs[i]), step=int(steps[i]), potential=float(pots[i])
            )
    ranked = sorted(candidates.values(), key=lambda w: (w.step, -w.potential, w.map))
    accepted: list[WinnerRecord] = []
    for cand in ranked:
        blocked = any(
            max(abs(cand.y - a.y), abs(cand.x - a.x)) <= radius for a in accepted
        )
        if not blocked:
            accepted.append(cand)
    return accepted


def apply_stdp(
    weights: np.ndarray,
    winner: WinnerRecord,
    pre_steps: np.ndarray,
    params: StdpParams,
) -> None:
    """One shared-weight update of the winner's map over its input window.

    `weights` is the full layer tensor (maps, in_maps, kh, kw), updated in
    place. `pre_steps` is the dense first-spike-step array of the layer's
    input wave (-1 where silent). A synapse is causal iff its afferent
    spiked at step <= winner.step; silent afferents count as non-causal
    (they would fire later, if ever).
    """
    kh, kw = weights.shape[2], weights.shape[3]
    window = pre_steps[:, winner.y : winner.y + kh, winner.x : winner.x + kw]
    causal = (window >= 0) & (window <= winner.step)
    w = weights[winner.map]
    w += stdp_delta(w, causal, params)


def convergence_index(weights: np.ndarray) -> float:
    """Mean of w(1-w) over all synapses of a layer; 0.25 down to 0."""
    w = weights
    return float(np.sum(w * (1.0 - w)) / w.size)


class ConvergenceTracker:
    """Per-map bookkeeping of the layer convergence index.

    Only maps touched by an update are re-scored, so tracking stays cheap
    at any layer size; `value()` re-reduces the per-map table. `full()`
    recomputes from scratch and must agree within 1e-9.
    """

    def __init__(self, weights: np.ndarray):
        self.n_synapses = weights.size
        self.per_map = np.array([np.sum(m * (1.0 - m)) for m in weights])
        self.history: list[tuple[int, float]] = []

    def update(self, map_index: int, map_weights: np.ndarray) -> None:
        self.per_map[map_index] = np.sum(map_weights * (1.0 - map_weights))

    def value(self) -> float:
        return float(self.per_map.sum() / self.n_synapses)

    def record(self, iteration: int) -> float:
        c = self.value()
        self.history.append((iteration, c))
        return c

    def full(self, weights: np.ndarray) -> float:
        return convergence_index(weights)


@dataclass
class TrainLayerResult:
    """Outcome of training one layer to convergence (or the iteration cap)."""

    iterations: int
    converged: bool
    final_index: float
    tracker: ConvergenceTracker
    updates: int
    spikes_seen: int

    @property
    def trajectory(self) -> np.ndarray:
        return np.array([c for _, c in self.tracker.history])


def resolve_params(params: StdpParams, window: tuple[int, int]) -> StdpParams:
    """Fill the layer-dependent default: inhibition radius = half the window."""
    if params.inhibition_radius is not None:
        return params
    return replace(params, inhibition_radius=max(window) // 2)


def train_layer(
    layer: ConvLayer,
    waves,
    params: StdpParams,
    order: np.ndarray,
    *,
    noise: ThresholdNoise | None = None,
    conv_index: int = 0,
    sink=None,
    image_key_base: int = 0,
) -> TrainLayerResult:
    """Drive one conv layer over its input waves until it converges.

    `waves` maps a dataset index to the layer's input SpikeWave: a list or
    any indexable, or a callable (index, presentation) -> SpikeWave for
    streams that must be regenerated per presentation (jittered prefix
    layers). `order` is the fixed presentation order, cycled for as
    many epochs as needed. Stops when the convergence index drops below
    params.convergence_stop, or after max_iterations presentations
    (default 10x the dataset size), whichever comes first. Presentation
    `it` uses image_key_base + it as the jitter key, so retraining runs
    never reuse noise draws.
    """
    n = len(order)
    if n == 0:
        raise ConfigError("training image stream is empty")
    max_iter = params.max_iterations if params.max_iterations is not None else 10 * n
    params = resolve_params(params, layer.spec.window)
    tracker = ConvergenceTracker(layer.weights)
    updates = 0
    spikes_seen = 0
    converged = False
    it = 0
    fetch = waves if callable(waves) else (lambda idx, _it: waves[idx])
    while it < max_iter:
        wave = fetch(int(order[it % n]), it)
        layer.reset(
            wave.shape,
            noise=noise,
            image_key=image_key_base + it,
            layer_index=conv_index,
        )
        for t in range(wave.time_steps):
            events = wave.bucket(t)
            if len(events) == 0:
                continue
            layer.integrate(events)
            layer.fire(t)
        spikes_seen += layer.fire_record.count()
        winners = select_winners(layer.fire_record, params)
        if winners:
            pre_steps = wave.first_spike_steps()
            for win in winners:
                apply_stdp(layer.weights, win, pre_steps, params)
                tracker.update(win.map, layer.weights[win.map])
            layer.weights_changed()
            updates += len(winners)
        c = tracker.record(it)
        if sink is not None:
            sink(
                {
                    "event": "layer_train",
                    "layer": conv_index,
                    "iteration": it,
                    "convergence": c,
                    "spikes": layer.fire_record.count(),
                    "updates": len(winners),
                }
            )
        it += 1
        if c < params.convergence_stop:
            converged = True
            break
    return TrainLayerResult(
        iterations=it,
        converged=converged,
        final_index=tracker.value(),
        tracker=tracker,
        updates=updates,
        spikes_seen=spikes_seen,
    )
