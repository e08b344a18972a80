"""Current-based leaky integrate-and-fire layers.

A layer keeps three state vectors per neuron: synaptic current ``c``,
membrane voltage ``v`` and the binary spike output ``o``. One timestep is::

    c' = d_c * c + W @ x + b
    v' = d_v * v * (1 - o) + c'
    o' = v' >= v_th

The ``(1 - o)`` gate is the hard reset: a neuron that fired on the previous
step starts integrating from rest. All functions accept arbitrary leading
batch axes on the state and input arrays.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class LIFConfig:
    current_decay: float = 0.5
    voltage_decay: float = 0.75
    threshold: float = 0.5
    surrogate_width: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.current_decay <= 1.0:
            raise ContractError(f"current_decay must lie in [0, 1], got {self.current_decay}")
        if not 0.0 <= self.voltage_decay <= 1.0:
            raise ContractError(f"voltage_decay must lie in [0, 1], got {self.voltage_decay}")
        if not self.threshold > 0:
            raise ContractError(f"threshold must be positive, got {self.threshold}")
        if not self.surrogate_width > 0:
            raise ContractError(f"surrogate_width must be positive, got {self.surrogate_width}")


@dataclass
class LayerParams:
    weights: np.ndarray  # (fan_out, fan_in)
    biases: np.ndarray  # (fan_out,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ContractError(
                f"weights {self.weights.shape} and biases {self.biases.shape} do not describe a layer"
            )
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.biases))):
            raise ContractError("layer parameters must be finite")

    @property
    def fan_in(self) -> int:
        return self.weights.shape[1]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[0]


@dataclass
class LayerState:
    current: np.ndarray
    voltage: np.ndarray
    spikes: np.ndarray

    @classmethod
    def zeros(cls, fan_out: int, batch_shape: tuple[int, ...] = ()) -> "LayerState":
        shape = (*batch_shape, fan_out)
        return cls(np.zeros(shape), np.zeros(shape), np.zeros(shape))


@dataclass
class LayerGradState:
    """Gradients produced by :func:`lif_backward`.

    ``g_current``, ``g_voltage`` and ``g_spikes`` hold the full per-timestep
    histories (leading axis ``T``); ``grad_weights`` and ``grad_biases`` are
    summed over timesteps and batch.
    """

    g_current: np.ndarray
    g_voltage: np.ndarray
    g_spikes: np.ndarray
    grad_weights: np.ndarray
    grad_biases: np.ndarray


def init_layer(fan_in: int, fan_out: int, rng: np.random.Generator) -> LayerParams:
    """Uniform weights in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` and zero biases."""
    if fan_in < 1 or fan_out < 1:
        raise ContractError(f"layer dimensions must be positive, got {fan_in}->{fan_out}")
    bound = 1.0 / np.sqrt(fan_in)
    return LayerParams(rng.uniform(-bound, bound, size=(fan_out, fan_in)), np.zeros(fan_out))


def _is_binary(x: np.ndarray) -> bool:
    return bool(np.all((x == 0) | (x == 1)))


def _step(config: LIFConfig, params: LayerParams, prev: LayerState, input_spikes: np.ndarray) -> LayerState:
    current = config.current_decay * prev.current + input_spikes @ params.weights.T + params.biases
    voltage = config.voltage_decay * prev.voltage * (1.0 - prev.spikes) + current
    spikes = (voltage >= config.threshold).astype(np.float64)
    return LayerState(current, voltage, spikes)


def lif_step(config: LIFConfig, params: LayerParams, prev: LayerState, input_spikes) -> LayerState:
    """Advance one LIF layer by a single timestep.

    Returns a new :class:`LayerState`; ``prev`` is left untouched.
    """
    input_spikes = np.asarray(input_spikes, dtype=np.float64)
    if input_spikes.shape[-1:] != (params.fan_in,):
        raise ContractError(f"input has {input_spikes.shape[-1:]} features, layer expects {params.fan_in}")
    for name in ("current", "voltage", "spikes"):
        arr = getattr(prev, name)
        if arr.shape[-1:] != (params.fan_out,):
            raise ContractError(f"prev.{name} has shape {arr.shape}, layer fan_out is {params.fan_out}")
    if not _is_binary(input_spikes):
        raise ContractError("input spikes must be 0 or 1")
    return _step(config, params, prev, input_spikes)


def rect_surrogate(voltage, config: LIFConfig):
    """Rectangular pseudo-derivative of the threshold.

    ``1/w`` inside the closed window ``|v - v_th| <= w/2``, zero outside.
    Works elementwise on arrays and returns a float for scalar input.
    """
    w = config.surrogate_width
    inside = np.abs(np.asarray(voltage, dtype=np.float64) - config.threshold) <= w / 2
    out = np.where(inside, 1.0 / w, 0.0)
    return float(out) if out.ndim == 0 else out


def simulate_layer(
    config: LIFConfig, params: LayerParams, input_history: np.ndarray, initial: LayerState | None = None
) -> list[LayerState]:
    """Run :func:`lif_step` over the leading time axis of ``input_history``."""
    input_history = np.asarray(input_history, dtype=np.float64)
    state = initial or LayerState.zeros(params.fan_out, input_history.shape[1:-1])
    trace = []
    for x in input_history:
        state = lif_step(config, params, state, x)
        trace.append(state)
    return trace


def lif_backward(
    config: LIFConfig,
    params: LayerParams,
    trace: Sequence[LayerState],
    input_history,
    g_spikes_per_t,
) -> tuple[LayerGradState, np.ndarray]:
    """Backpropagate through a layer's full spike history.

    Walks time backwards with the surrogate standing in for the threshold's
    derivative. The spike gradient at each step receives both the external
    signal and the reset path ``-d_v * v`` into the next step's voltage.

    Args:
        trace: states ``t = 1..T`` as returned by repeated :func:`lif_step`.
        input_history: ``[T, ..., fan_in]`` presynaptic spikes.
        g_spikes_per_t: ``[T, ..., fan_out]`` loss gradient w.r.t. each
            step's spikes, arriving from downstream layers or the decoder.

    Returns:
        The layer gradients and ``[T, ..., fan_in]`` gradients w.r.t. the
        input spikes.
    """
    input_history = np.asarray(input_history, dtype=np.float64)
    g_spikes_per_t = np.asarray(g_spikes_per_t, dtype=np.float64)
    T = len(trace)
    if T == 0:
        raise ContractError("trace is empty")
    voltage = np.stack([s.voltage for s in trace])
    spikes = np.stack([s.spikes for s in trace])
    if voltage.shape[-1] != params.fan_out:
        raise ContractError(f"trace fan_out {voltage.shape[-1]} does not match layer fan_out {params.fan_out}")
    if g_spikes_per_t.shape != voltage.shape:
        raise ContractError(f"g_spikes_per_t shape {g_spikes_per_t.shape} != trace shape {voltage.shape}")
    if input_history.shape != (*voltage.shape[:-1], params.fan_in):
        raise ContractError(
            f"input_history shape {input_history.shape} does not match trace {voltage.shape} and fan_in {params.fan_in}"
        )

    d_c, d_v = config.current_decay, config.voltage_decay
    surrogate = rect_surrogate(voltage, config)
    g_o_all = np.empty_like(voltage)
    g_v_all = np.empty_like(voltage)
    g_c_all = np.empty_like(voltage)
    g_v_next = np.zeros_like(voltage[0])
    g_c_next = np.zeros_like(voltage[0])
    for t in range(T - 1, -1, -1):
        g_o = g_spikes_per_t[t] - d_v * voltage[t] * g_v_next
        g_v = g_o * surrogate[t] + d_v * (1.0 - spikes[t]) * g_v_next
        g_c = g_v + d_c * g_c_next
        g_o_all[t], g_v_all[t], g_c_all[t] = g_o, g_v, g_c
        g_v_next, g_c_next = g_v, g_c

    flat_g = g_c_all.reshape(-1, params.fan_out)
    flat_x = input_history.reshape(-1, params.fan_in)
    grads = LayerGradState(
        g_current=g_c_all,
        g_voltage=g_v_all,
        g_spikes=g_o_all,
        grad_weights=flat_g.T @ flat_x,
        grad_biases=flat_g.sum(axis=0),
    )
    return grads, g_c_all @ params.weights
