"""Adaptive-moment (Adam) updates over named tensor dictionaries."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, TrainingError

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def tensors(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.step": np.array(float(self.step))}
        out.update({f"{prefix}.m.{k}": a for k, a in self.m.items()})
        out.update({f"{prefix}.v.{k}": a for k, a in self.v.items()})
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray], prefix: str) -> "AdamState":
        state = cls(step=int(tensors[f"{prefix}.step"]))
        for key, arr in tensors.items():
            if key.startswith(f"{prefix}.m."):
                state.m[key[len(prefix) + 3 :]] = arr.copy()
            elif key.startswith(f"{prefix}.v."):
                state.v[key[len(prefix) + 3 :]] = arr.copy()
        return state


def check_finite(grads: dict[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name}")


def adam_update(
    tensors: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam step. Inputs are not modified."""
    if tensors.keys() != grads.keys():
        raise ContractError(f"gradient keys {sorted(grads)} do not match parameters {sorted(tensors)}")
    check_finite(grads)
    step = state.step + 1
    c1 = 1.0 - BETA1**step
    c2 = 1.0 - BETA2**step
    new_tensors, new_m, new_v = {}, {}, {}
    for name, p in tensors.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ContractError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        m = BETA1 * state.m.get(name, 0.0) + (1.0 - BETA1) * g
        v = BETA2 * state.v.get(name, 0.0) + (1.0 - BETA2) * g * g
        new_tensors[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + EPSILON)
        new_m[name], new_v[name] = m, v
    return new_tensors, AdamState(step, new_m, new_v)
