"""The population-coded spiking actor: encoder, LIF core, rate decoder.

Observation dimension ``i`` is represented by ``pop_size`` encoder neurons
with Gaussian receptive fields. Their activations drive a deterministic
accumulate-and-fire process that emits binary spikes for ``T`` timesteps.
The spikes propagate through fully connected LIF layers with zero delay
inside a timestep, and the last layer's populations are rate-decoded into
one action component each.

Arrays may carry leading batch axes: ``obs`` is ``[..., obs_dim]`` and every
per-timestep quantity is ``[T, ..., n]``. Parameter gradients are summed
over the batch, so a mean loss should already be folded into ``grad_action``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ContractError
from .optim import AdamState, adam_update
from .snn import LayerParams, LayerState, LIFConfig, _step, init_layer, lif_backward

MIN_DEVIATION = 1e-3
ENCODER_THRESHOLD = 1.0


@dataclass
class EncoderParams:
    means: np.ndarray  # (obs_dim, pop_size)
    deviations: np.ndarray  # (obs_dim, pop_size)

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.deviations = np.asarray(self.deviations, dtype=np.float64)
        if self.means.ndim != 2 or self.means.shape != self.deviations.shape:
            raise ContractError(f"means {self.means.shape} and deviations {self.deviations.shape} must match")
        if not np.all(self.deviations > 0):
            raise ContractError("encoder deviations must be positive")


@dataclass
class DecoderParams:
    weights: np.ndarray  # (act_dim, pop_size)
    biases: np.ndarray  # (act_dim,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ContractError(f"decoder weights {self.weights.shape} / biases {self.biases.shape} mismatch")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.biases))):
            raise ContractError("decoder parameters must be finite")


@dataclass
class PopSANParams:
    encoder: EncoderParams
    layers: list[LayerParams]
    decoder: DecoderParams
    lif: LIFConfig = field(default_factory=LIFConfig)
    timesteps: int = 5
    obs_ranges: np.ndarray | None = None  # (obs_dim, 2); None disables clipping

    def __post_init__(self):
        if self.timesteps < 1:
            raise ContractError(f"timesteps must be >= 1, got {self.timesteps}")
        if not self.layers:
            raise ContractError("at least one spiking layer is required")
        obs_dim, pop = self.encoder.means.shape
        act_dim, dec_pop = self.decoder.weights.shape
        if dec_pop != pop:
            raise ContractError(f"decoder population {dec_pop} != encoder population {pop}")
        if self.layers[0].fan_in != obs_dim * pop:
            raise ContractError(f"first layer fan_in {self.layers[0].fan_in} != obs_dim*pop_size {obs_dim * pop}")
        if self.layers[-1].fan_out != act_dim * pop:
            raise ContractError(f"last layer fan_out {self.layers[-1].fan_out} != act_dim*pop_size {act_dim * pop}")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.fan_out != b.fan_in:
                raise ContractError(f"layer shapes do not compose: {a.fan_out} -> {b.fan_in}")
        if self.obs_ranges is not None:
            self.obs_ranges = np.asarray(self.obs_ranges, dtype=np.float64)
            if self.obs_ranges.shape != (obs_dim, 2) or not np.all(self.obs_ranges[:, 0] < self.obs_ranges[:, 1]):
                raise ContractError("obs_ranges must be (obs_dim, 2) with lo < hi")

    @property
    def obs_dim(self) -> int:
        return self.encoder.means.shape[0]

    @property
    def act_dim(self) -> int:
        return self.decoder.weights.shape[0]

    @property
    def pop_size(self) -> int:
        return self.encoder.means.shape[1]

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(layer.fan_out for layer in self.layers[:-1])

    def tensors(self) -> dict[str, np.ndarray]:
        """Trainable parameters keyed by name."""
        out = {"encoder.means": self.encoder.means, "encoder.deviations": self.encoder.deviations}
        for k, layer in enumerate(self.layers):
            out[f"layers.{k}.weights"] = layer.weights
            out[f"layers.{k}.biases"] = layer.biases
        out["decoder.weights"] = self.decoder.weights
        out["decoder.biases"] = self.decoder.biases
        return out

    def with_tensors(self, tensors: dict[str, np.ndarray]) -> "PopSANParams":
        return replace(
            self,
            encoder=EncoderParams(tensors["encoder.means"], tensors["encoder.deviations"]),
            layers=[
                LayerParams(tensors[f"layers.{k}.weights"], tensors[f"layers.{k}.biases"])
                for k in range(len(self.layers))
            ],
            decoder=DecoderParams(tensors["decoder.weights"], tensors["decoder.biases"]),
        )


@dataclass
class ForwardTrace:
    obs: np.ndarray  # clipped observation actually encoded
    encoder_activation: np.ndarray  # [..., obs_dim, pop]
    encoder_potentials: np.ndarray  # [T, ..., obs_dim, pop], after reset
    encoder_spikes: np.ndarray  # [T, ..., obs_dim, pop]
    layer_states: list[list[LayerState]]  # [layer][t]
    spike_counts: np.ndarray  # [..., act_dim, pop]
    firing_rates: np.ndarray  # [..., act_dim, pop]
    action: np.ndarray  # [..., act_dim]

    @property
    def timesteps(self) -> int:
        return self.encoder_spikes.shape[0]

    def layer_spikes(self, k: int) -> np.ndarray:
        """``[T, ..., n]`` spikes of layer ``k``; ``k = 0`` is the encoder."""
        if k == 0:
            s = self.encoder_spikes
            return s.reshape(*s.shape[:-2], -1)
        return np.stack([state.spikes for state in self.layer_states[k - 1]])


@dataclass
class PopSANGradients:
    means: np.ndarray
    deviations: np.ndarray
    layer_weights: list[np.ndarray]
    layer_biases: list[np.ndarray]
    decoder_weights: np.ndarray
    decoder_biases: np.ndarray

    def tensors(self) -> dict[str, np.ndarray]:
        out = {"encoder.means": self.means, "encoder.deviations": self.deviations}
        for k, (w, b) in enumerate(zip(self.layer_weights, self.layer_biases)):
            out[f"layers.{k}.weights"] = w
            out[f"layers.{k}.biases"] = b
        out["decoder.weights"] = self.decoder_weights
        out["decoder.biases"] = self.decoder_biases
        return out


def init_popsan(
    obs_dim: int,
    act_dim: int,
    pop_size: int = 10,
    hidden_sizes: Sequence[int] = (256, 256),
    timesteps: int = 5,
    lif: LIFConfig | None = None,
    obs_ranges=None,
    seed: int = 0,
) -> PopSANParams:
    """Build an actor with receptive fields tiling each observation range.

    Encoder means sit at the centres of ``pop_size`` equal subintervals of
    ``[lo, hi]`` and every deviation equals the subinterval width.
    """
    if pop_size < 2:
        raise ContractError(f"pop_size must be >= 2, got {pop_size}")
    if obs_ranges is None:
        obs_ranges = np.tile([-1.0, 1.0], (obs_dim, 1))
    obs_ranges = np.asarray(obs_ranges, dtype=np.float64)
    if obs_ranges.shape != (obs_dim, 2):
        raise ContractError(f"obs_ranges must have shape ({obs_dim}, 2), got {obs_ranges.shape}")
    if not (np.all(np.isfinite(obs_ranges)) and np.all(obs_ranges[:, 0] < obs_ranges[:, 1])):
        raise ContractError("obs_ranges must be finite with lo < hi")

    lo, hi = obs_ranges[:, :1], obs_ranges[:, 1:]
    width = (hi - lo) / pop_size
    means = lo + (np.arange(pop_size) + 0.5) * width
    deviations = np.broadcast_to(width, means.shape).copy()

    rng = np.random.default_rng(seed)
    sizes = [obs_dim * pop_size, *hidden_sizes, act_dim * pop_size]
    layers = [init_layer(n_in, n_out, rng) for n_in, n_out in zip(sizes, sizes[1:])]
    bound = 1.0 / np.sqrt(pop_size)
    decoder = DecoderParams(rng.uniform(-bound, bound, size=(act_dim, pop_size)), np.zeros(act_dim))
    return PopSANParams(
        encoder=EncoderParams(means, deviations),
        layers=layers,
        decoder=decoder,
        lif=lif or LIFConfig(),
        timesteps=timesteps,
        obs_ranges=obs_ranges,
    )


def receptive_fields(params: EncoderParams, obs: np.ndarray) -> np.ndarray:
    """Gaussian activation ``exp(-(s - mu)^2 / (2 sigma^2))`` per encoder neuron."""
    diff = obs[..., :, None] - params.means
    return np.exp(-(diff**2) / (2.0 * params.deviations**2))


def encode(params: EncoderParams, obs, T: int, obs_ranges=None):
    """Encode an observation into ``T`` steps of population spikes.

    Each encoder neuron accumulates its activation into a potential and
    fires whenever the potential reaches 1, subtracting 1 on each spike.

    Returns:
        ``(activation, spikes, potentials)`` with shapes
        ``[..., obs_dim, pop]``, ``[T, ..., obs_dim, pop]`` and the same.
    """
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape[-1:] != (params.means.shape[0],):
        raise ContractError(f"observation has {obs.shape[-1:]} dims, encoder expects {params.means.shape[0]}")
    if not np.all(np.isfinite(obs)):
        raise ContractError("observation contains non-finite values")
    if T < 1:
        raise ContractError(f"T must be >= 1, got {T}")
    if obs_ranges is not None:
        obs = np.clip(obs, obs_ranges[:, 0], obs_ranges[:, 1])
    activation = receptive_fields(params, obs)
    potential = np.zeros_like(activation)
    spikes = np.empty((T, *activation.shape))
    potentials = np.empty_like(spikes)
    for t in range(T):
        potential = potential + activation
        fired = (potential >= ENCODER_THRESHOLD).astype(np.float64)
        potential = potential - fired * ENCODER_THRESHOLD
        spikes[t], potentials[t] = fired, potential
    return activation, spikes, potentials


def decode(params: DecoderParams, spike_counts, T: int) -> np.ndarray:
    """Rate-decode output populations: ``a_i = W_d[i] . (sc_i / T) + b_d[i]``."""
    spike_counts = np.asarray(spike_counts, dtype=np.float64)
    act_dim, pop = params.weights.shape
    if spike_counts.shape[-1] == act_dim * pop and spike_counts.shape[-2:] != (act_dim, pop):
        spike_counts = spike_counts.reshape(*spike_counts.shape[:-1], act_dim, pop)
    if spike_counts.shape[-2:] != (act_dim, pop):
        raise ContractError(f"spike counts shape {spike_counts.shape} incompatible with decoder ({act_dim}, {pop})")
    if np.any(spike_counts < 0) or np.any(spike_counts > T):
        raise ContractError(f"spike counts must lie in [0, {T}]")
    rates = spike_counts / T
    return np.einsum("...ij,ij->...i", rates, params.weights) + params.biases


def forward(params: PopSANParams, obs) -> tuple[np.ndarray, ForwardTrace]:
    """Run the actor for ``params.timesteps`` steps and decode an action."""
    T = params.timesteps
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape[-1:] != (params.obs_dim,):
        raise ContractError(f"observation has {obs.shape[-1:]} dims, actor expects {params.obs_dim}")
    if params.obs_ranges is not None:
        obs = np.clip(obs, params.obs_ranges[:, 0], params.obs_ranges[:, 1])
    activation, enc_spikes, enc_potentials = encode(params.encoder, obs, T)

    batch_shape = obs.shape[:-1]
    flat_inputs = enc_spikes.reshape(T, *batch_shape, -1)
    states = [LayerState.zeros(layer.fan_out, batch_shape) for layer in params.layers]
    history: list[list[LayerState]] = [[] for _ in params.layers]
    for t in range(T):
        x = flat_inputs[t]
        for k, layer in enumerate(params.layers):
            states[k] = _step(params.lif, layer, states[k], x)
            history[k].append(states[k])
            x = states[k].spikes

    out_spikes = np.stack([s.spikes for s in history[-1]])
    counts = out_spikes.sum(axis=0).reshape(*batch_shape, params.act_dim, params.pop_size)
    action = decode(params.decoder, counts, T)
    trace = ForwardTrace(
        obs=obs,
        encoder_activation=activation,
        encoder_potentials=enc_potentials,
        encoder_spikes=enc_spikes,
        layer_states=history,
        spike_counts=counts,
        firing_rates=counts / T,
        action=action,
    )
    return action, trace


def encoder_backward(params: EncoderParams, obs: np.ndarray, activation: np.ndarray, grad_activation: np.ndarray):
    """Gradients of the receptive fields w.r.t. their means and deviations.

    ``grad_activation`` is the loss gradient w.r.t. the activations,
    ``[..., obs_dim, pop]``; batch axes are summed.
    """
    diff = obs[..., :, None] - params.means
    g = grad_activation * activation
    sigma2 = params.deviations**2
    g_means = g * diff / sigma2
    g_dev = g * diff**2 / (sigma2 * params.deviations)
    axes = tuple(range(g.ndim - 2))
    return g_means.sum(axis=axes), g_dev.sum(axis=axes)


def backward(params: PopSANParams, trace: ForwardTrace, grad_action) -> PopSANGradients:
    """Analytic gradients of the loss w.r.t. every trainable parameter.

    The decoder follows the linear chain rule; the upstream gradient on the
    output spikes is spread evenly over timesteps because the decoder reads
    a mean firing rate. The spiking layers use :func:`lif_backward`, and the
    encoder treats spike generation as identity (straight-through), so the
    receptive-field gradient is the sum of per-step spike gradients.
    """
    grad_action = np.asarray(grad_action, dtype=np.float64)
    T = trace.timesteps
    if grad_action.shape != trace.action.shape:
        raise ContractError(f"grad_action shape {grad_action.shape} != action shape {trace.action.shape}")
    if len(trace.layer_states) != len(params.layers) or T != params.timesteps:
        raise ContractError("trace was not produced by these parameters")
    if trace.encoder_activation.shape[-2:] != params.encoder.means.shape:
        raise ContractError("trace encoder shape does not match parameters")

    batch_axes = tuple(range(grad_action.ndim - 1))
    g_dec_w = (grad_action[..., :, None] * trace.firing_rates).sum(axis=batch_axes)
    g_dec_b = grad_action.sum(axis=batch_axes) if batch_axes else grad_action.copy()

    batch_shape = grad_action.shape[:-1]
    g_out = (grad_action[..., :, None] * params.decoder.weights / T).reshape(*batch_shape, -1)
    upstream = np.broadcast_to(g_out, (T, *g_out.shape))

    layer_w: list[np.ndarray] = [None] * len(params.layers)
    layer_b: list[np.ndarray] = [None] * len(params.layers)
    for k in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[k]
        inputs = trace.layer_spikes(k)
        grads, upstream = lif_backward(params.lif, layer, trace.layer_states[k], inputs, upstream)
        layer_w[k], layer_b[k] = grads.grad_weights, grads.grad_biases

    g_enc_spikes = upstream.reshape(trace.encoder_spikes.shape)
    g_activation = g_enc_spikes.sum(axis=0)
    g_means, g_dev = encoder_backward(params.encoder, trace.obs, trace.encoder_activation, g_activation)
    return PopSANGradients(g_means, g_dev, layer_w, layer_b, g_dec_w, g_dec_b)


def apply_gradients(
    params: PopSANParams,
    grads: PopSANGradients | dict[str, np.ndarray],
    state: AdamState | None,
    learning_rate: float,
) -> tuple[PopSANParams, AdamState]:
    """Adam step on every trainable tensor; deviations are floored afterwards."""
    if isinstance(grads, PopSANGradients):
        grads = grads.tensors()
    tensors, state = adam_update(params.tensors(), grads, state or AdamState(), learning_rate)
    tensors["encoder.deviations"] = np.maximum(tensors["encoder.deviations"], MIN_DEVIATION)
    return params.with_tensors(tensors), state
