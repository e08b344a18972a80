"""Operation counting and energy estimates for spiking and conventional actors.

Energy is ``sum(mac * e_mac + ac * e_ac)`` over layers. A conventional
fully connected layer costs ``fan_in * fan_out`` multiply-accumulates. In
the spiking actor only the receptive-field encoder and the rate decoder
multiply; every synaptic layer is event driven and costs one accumulate per
presynaptic spike per postsynaptic target. Bias additions are not counted
on either side.

Energies are in picojoules; ``PJ_TO_TABLE_UNITS`` converts to the
``1e-6 mJ`` units conventionally used in comparison tables.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError
from .network import ForwardTrace, PopSANParams

PJ_TO_TABLE_UNITS = 1e-3  # 1 pJ = 1e-9 mJ = 1e-3 x 1e-6 mJ


@dataclass(frozen=True)
class OpCosts:
    e_mac: float = 4.6
    e_ac: float = 0.9

    def __post_init__(self):
        if not (self.e_mac > 0 and self.e_ac > 0):
            raise ContractError("operation energies must be positive")


@dataclass
class LayerFlopProfile:
    name: str
    mac_count: float
    ac_count: float

    def __post_init__(self):
        if self.mac_count < 0 or self.ac_count < 0:
            raise ContractError(f"{self.name}: operation counts must be non-negative")

    def energy(self, costs: OpCosts) -> float:
        return self.mac_count * costs.e_mac + self.ac_count * costs.e_ac


@dataclass
class EnergyReport:
    profiles: list[LayerFlopProfile]
    total_energy: float  # pJ
    baseline_energy: float | None = None  # pJ
    savings_fraction: float | None = None
    costs: OpCosts = field(default_factory=OpCosts)
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "units": "pJ",
            "costs": asdict(self.costs),
            "profiles": [asdict(p) | {"energy": p.energy(self.costs)} for p in self.profiles],
            "total_energy": self.total_energy,
            "baseline_energy": self.baseline_energy,
            "savings_fraction": self.savings_fraction,
            **self.details,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def render_table(self) -> str:
        rows = [f"{'layer':<12}{'MAC':>14}{'AC':>14}{'energy (1e-6 mJ)':>20}"]
        for p in self.profiles:
            rows.append(
                f"{p.name:<12}{p.mac_count:>14.1f}{p.ac_count:>14.1f}"
                f"{p.energy(self.costs) * PJ_TO_TABLE_UNITS:>20.4f}"
            )
        rows.append(f"{'total':<40}{self.total_energy * PJ_TO_TABLE_UNITS:>20.4f}")
        if self.baseline_energy is not None:
            rows.append(f"{'ANN baseline':<40}{self.baseline_energy * PJ_TO_TABLE_UNITS:>20.4f}")
            rows.append(f"{'energy saving':<40}{self.savings_fraction * 100:>19.2f}%")
        return "\n".join(rows)


def count_ann_flops(layer_sizes: Sequence[int]) -> list[LayerFlopProfile]:
    """One MAC per weight of each fully connected layer.

    ``layer_sizes`` lists every width from input to output, so ``[4, 3]`` is
    a single 4->3 layer.
    """
    sizes = list(layer_sizes)
    if len(sizes) < 2:
        raise ContractError("need at least an input and an output width")
    if min(sizes) < 1:
        raise ContractError(f"layer widths must be positive, got {sizes}")
    return [
        LayerFlopProfile(f"fc{k + 1}", n_in * n_out, 0)
        for k, (n_in, n_out) in enumerate(zip(sizes, sizes[1:]))
    ]


def count_snn_acs(trace: ForwardTrace, params: PopSANParams) -> list[LayerFlopProfile]:
    """Per-forward operation counts from recorded spikes.

    A batched trace yields the mean count per observation.
    """
    if len(trace.layer_states) != len(params.layers):
        raise ContractError("trace does not match parameters")
    batch = int(np.prod(trace.obs.shape[:-1], dtype=np.int64))
    profiles = [LayerFlopProfile("encoder", params.obs_dim * params.pop_size, 0)]
    for k, layer in enumerate(params.layers):
        presyn = trace.layer_spikes(k).sum()
        acs = presyn * layer.fan_out / batch
        profiles.append(LayerFlopProfile(f"fc{k + 1}", 0, int(acs) if batch == 1 else float(acs)))
    profiles.append(LayerFlopProfile("decoder", params.act_dim * params.pop_size, 0))
    return profiles


def savings(energy: float, baseline: float) -> float:
    if not baseline > 0:
        raise ContractError(f"baseline energy must be positive, got {baseline}")
    return 1.0 - energy / baseline


def estimate_energy(
    profiles: Sequence[LayerFlopProfile], costs: OpCosts = OpCosts(), baseline: float | None = None
) -> EnergyReport:
    total = float(sum(p.energy(costs) for p in profiles))
    report = EnergyReport(list(profiles), total, costs=costs)
    if baseline is not None:
        report.baseline_energy = float(baseline)
        report.savings_fraction = savings(total, baseline)
    return report


def synaptic_capacity(params: PopSANParams) -> int:
    """Accumulates per timestep if every presynaptic neuron fired."""
    return sum(layer.fan_in * layer.fan_out for layer in params.layers)


def mean_firing_rate(profiles: Sequence[LayerFlopProfile], params: PopSANParams) -> float:
    """Fan-out-weighted presynaptic firing rate implied by the accumulate counts."""
    acs = sum(p.ac_count for p in profiles)
    return acs / (params.timesteps * synaptic_capacity(params))


def break_even_rate(params: PopSANParams, ann_energy: float, costs: OpCosts = OpCosts()) -> float:
    """Firing rate below which the spiking actor spends less than ``ann_energy``.

    The encoder and decoder multiplies are a fixed cost; what remains of the
    ANN budget is divided by the accumulate cost of a fully active network.
    """
    fixed = costs.e_mac * (params.obs_dim + params.act_dim) * params.pop_size
    return (ann_energy - fixed) / (costs.e_ac * params.timesteps * synaptic_capacity(params))
