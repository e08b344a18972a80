"""Fully connected ReLU networks with hand-written backpropagation.

Used for the twin critics and for the conventional (non-spiking) baseline
actor. Hidden layers are rectified; the output is linear or ``tanh``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ..errors import ContractError, TrainingError

OUTPUTS = ("linear", "tanh")


@dataclass
class MLPParams:
    weights: list[np.ndarray]  # each (fan_out, fan_in)
    biases: list[np.ndarray]
    output: str = "linear"

    def __post_init__(self):
        if self.output not in OUTPUTS:
            raise ContractError(f"output activation must be one of {OUTPUTS}, got {self.output!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ContractError("need matching, non-empty weight and bias lists")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ContractError(f"layer {k}: weights {w.shape} / biases {b.shape} mismatch")
        for a, b in zip(self.weights, self.weights[1:]):
            if a.shape[0] != b.shape[1]:
                raise ContractError(f"layer shapes do not compose: {a.shape} -> {b.shape}")

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"layers.{k}.weights"] = w
            out[f"layers.{k}.biases"] = b
        return out

    def with_tensors(self, tensors: dict[str, np.ndarray]) -> "MLPParams":
        n = len(self.weights)
        return replace(
            self,
            weights=[np.asarray(tensors[f"layers.{k}.weights"], dtype=np.float64) for k in range(n)],
            biases=[np.asarray(tensors[f"layers.{k}.biases"], dtype=np.float64) for k in range(n)],
        )


def init_mlp(sizes: Sequence[int], rng: np.random.Generator, output: str = "linear") -> MLPParams:
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` weights and biases."""
    if len(sizes) < 2 or min(sizes) < 1:
        raise ContractError(f"invalid layer sizes {list(sizes)}")
    weights, biases = [], []
    for n_in, n_out in zip(sizes, sizes[1:]):
        bound = 1.0 / np.sqrt(n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(rng.uniform(-bound, bound, size=n_out))
    return MLPParams(weights, biases, output)


def mlp_forward(params: MLPParams, x) -> tuple[np.ndarray, list[np.ndarray]]:
    """Returns the output and the per-layer inputs/pre-activations needed by backward."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (params.weights[0].shape[1],):
        raise ContractError(f"input has {x.shape[-1:]} features, network expects {params.weights[0].shape[1]}")
    cache = []
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = x @ w.T + b
        cache.append(x)
        if k < last:
            x = np.maximum(z, 0.0)
        else:
            x = np.tanh(z) if params.output == "tanh" else z
    cache.append(x)
    return x, cache


def mlp_backward(params: MLPParams, cache: list[np.ndarray], g_out) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Parameter gradients (summed over batch axes) and the input gradient."""
    g = np.asarray(g_out, dtype=np.float64)
    out = cache[-1]
    if params.output == "tanh":
        g = g * (1.0 - out * out)
    grads: dict[str, np.ndarray] = {}
    for k in range(len(params.weights) - 1, -1, -1):
        x = cache[k]
        flat_g = g.reshape(-1, g.shape[-1])
        grads[f"layers.{k}.weights"] = flat_g.T @ x.reshape(-1, x.shape[-1])
        grads[f"layers.{k}.biases"] = flat_g.sum(axis=0)
        g = g @ params.weights[k]
        if k > 0:
            g = g * (x > 0)  # x is the ReLU output of the layer below
    return grads, g


def critic_forward(params: MLPParams, obs, action) -> np.ndarray:
    """Q-value for each ``(obs, action)`` pair; batch axes are preserved."""
    q, _ = mlp_forward(params, np.concatenate([np.asarray(obs, float), np.asarray(action, float)], axis=-1))
    if q.shape[-1] != 1:
        raise ContractError(f"critic must have a single output, got {q.shape[-1]}")
    return q[..., 0]


def critic_backward(params: MLPParams, obs, action, targets) -> tuple[dict[str, np.ndarray], float]:
    """Gradients of ``mean((Q(s, a) - y)^2)`` and the loss itself."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.size == 0:
        raise ContractError("critic batch is empty")
    if not np.all(np.isfinite(targets)):
        raise TrainingError("non-finite critic targets")
    inputs = np.concatenate([np.asarray(obs, float), np.asarray(action, float)], axis=-1)
    q, cache = mlp_forward(params, inputs)
    err = q[..., 0] - targets
    loss = float(np.mean(err * err))
    grads, _ = mlp_backward(params, cache, (2.0 / err.size) * err[..., None])
    return grads, loss


def critic_action_gradient(params: MLPParams, obs, action, g_q) -> np.ndarray:
    """``g_q * dQ/da`` for every sample; used to drive the actor."""
    obs = np.asarray(obs, dtype=np.float64)
    inputs = np.concatenate([obs, np.asarray(action, float)], axis=-1)
    _, cache = mlp_forward(params, inputs)
    _, g_in = mlp_backward(params, cache, np.asarray(g_q, dtype=np.float64)[..., None])
    return g_in[..., obs.shape[-1] :]
