"""Actor wrappers giving the spiking and baseline policies one training interface.

The TD3 loop only calls ``forward``, ``backward``, ``step``, ``tensors`` and
``load_tensors``; swapping the actor class is the sole difference between
a PopSAN run and an ANN-baseline run.
"""
from __future__ import annotations

import copy

import numpy as np

from .. import network
from ..errors import CheckpointError, ContractError
from ..network import PopSANParams
from ..optim import AdamState, adam_update
from ..snn import LIFConfig
from .mlp import MLPParams, init_mlp, mlp_backward, mlp_forward

ACTOR_KINDS = ("spiking", "baseline")


class SpikingActor:
    kind = "spiking"

    def __init__(self, params: PopSANParams):
        self.params = params

    def __call__(self, obs) -> np.ndarray:
        return network.forward(self.params, obs)[0]

    def forward(self, obs):
        return network.forward(self.params, obs)

    def backward(self, trace, grad_action) -> dict[str, np.ndarray]:
        return network.backward(self.params, trace, grad_action).tensors()

    def step(self, grads: dict[str, np.ndarray], state: AdamState | None, lr: float) -> AdamState:
        self.params, state = network.apply_gradients(self.params, grads, state, lr)
        return state

    def tensors(self) -> dict[str, np.ndarray]:
        return self.params.tensors()

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        self.params = self.params.with_tensors(tensors)

    def meta(self) -> dict[str, np.ndarray]:
        lif = self.params.lif
        return {
            "timesteps": np.array(float(self.params.timesteps)),
            "lif": np.array([lif.current_decay, lif.voltage_decay, lif.threshold, lif.surrogate_width]),
            "obs_ranges": self.params.obs_ranges,
            "n_layers": np.array(float(len(self.params.layers))),
        }

    def copy(self) -> "SpikingActor":
        return copy.deepcopy(self)


class BaselineActor:
    """ReLU network with a ``tanh`` output rescaled to the action box."""

    kind = "baseline"

    def __init__(self, params: MLPParams, action_low, action_high):
        self.params = params
        self.action_low = np.asarray(action_low, dtype=np.float64)
        self.action_high = np.asarray(action_high, dtype=np.float64)
        self._center = (self.action_high + self.action_low) / 2
        self._half = (self.action_high - self.action_low) / 2

    def __call__(self, obs) -> np.ndarray:
        return self.forward(obs)[0]

    def forward(self, obs):
        squashed, cache = mlp_forward(self.params, obs)
        return self._center + self._half * squashed, cache

    def backward(self, cache, grad_action) -> dict[str, np.ndarray]:
        grads, _ = mlp_backward(self.params, cache, np.asarray(grad_action) * self._half)
        return grads

    def step(self, grads: dict[str, np.ndarray], state: AdamState | None, lr: float) -> AdamState:
        tensors, state = adam_update(self.params.tensors(), grads, state or AdamState(), lr)
        self.params = self.params.with_tensors(tensors)
        return state

    def tensors(self) -> dict[str, np.ndarray]:
        return self.params.tensors()

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        self.params = self.params.with_tensors(tensors)

    def meta(self) -> dict[str, np.ndarray]:
        return {
            "action_low": self.action_low,
            "action_high": self.action_high,
            "n_layers": np.array(float(len(self.params.weights))),
        }

    def copy(self) -> "BaselineActor":
        return copy.deepcopy(self)


def build_actor(
    kind: str,
    obs_dim: int,
    act_dim: int,
    *,
    obs_ranges,
    action_low,
    action_high,
    seed: int,
    pop_size: int = 10,
    hidden_sizes=(256, 256),
    timesteps: int = 5,
    lif: LIFConfig | None = None,
    baseline_hidden=(256, 256),
):
    if kind == "spiking":
        params = network.init_popsan(
            obs_dim, act_dim, pop_size, hidden_sizes, timesteps, lif or LIFConfig(), obs_ranges, seed
        )
        return SpikingActor(params)
    if kind == "baseline":
        rng = np.random.default_rng(seed)
        return BaselineActor(init_mlp([obs_dim, *baseline_hidden, act_dim], rng, "tanh"), action_low, action_high)
    raise ContractError(f"unknown actor kind {kind!r}; choose from {ACTOR_KINDS}")


def actor_tensors(actor, prefix: str = "actor") -> dict[str, np.ndarray]:
    """Parameters plus the metadata needed to rebuild the actor from a checkpoint."""
    out = {f"{prefix}.{k}": v for k, v in actor.tensors().items()}
    out[f"{prefix}_meta.kind"] = np.array(float(ACTOR_KINDS.index(actor.kind)))
    out.update({f"{prefix}_meta.{k}": v for k, v in actor.meta().items()})
    return out


def actor_from_tensors(tensors: dict[str, np.ndarray], prefix: str = "actor"):
    try:
        kind = ACTOR_KINDS[int(tensors[f"{prefix}_meta.kind"])]
        params = {k[len(prefix) + 1 :]: v for k, v in tensors.items() if k.startswith(prefix + ".")}
        n_layers = int(tensors[f"{prefix}_meta.n_layers"])
        if kind == "spiking":
            lif = LIFConfig(*(float(x) for x in tensors[f"{prefix}_meta.lif"]))
            means = params["encoder.means"]
            template = PopSANParams(
                encoder=network.EncoderParams(means, params["encoder.deviations"]),
                layers=[
                    network.LayerParams(params[f"layers.{k}.weights"], params[f"layers.{k}.biases"])
                    for k in range(n_layers)
                ],
                decoder=network.DecoderParams(params["decoder.weights"], params["decoder.biases"]),
                lif=lif,
                timesteps=int(tensors[f"{prefix}_meta.timesteps"]),
                obs_ranges=tensors[f"{prefix}_meta.obs_ranges"],
            )
            return SpikingActor(template)
        mlp = MLPParams(
            [params[f"layers.{k}.weights"] for k in range(n_layers)],
            [params[f"layers.{k}.biases"] for k in range(n_layers)],
            "tanh",
        )
        return BaselineActor(mlp, tensors[f"{prefix}_meta.action_low"], tensors[f"{prefix}_meta.action_high"])
    except (KeyError, IndexError, ValueError) as exc:
        raise CheckpointError(f"checkpoint does not describe a valid actor: {exc}") from exc
