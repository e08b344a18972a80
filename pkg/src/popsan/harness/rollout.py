"""Episode rollouts and noise-free evaluation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..envs import Env
from ..errors import ContractError
from .replay import Transition


@dataclass
class EpisodeStats:
    episode_return: float
    length: int
    success: bool


@dataclass
class EvalStats:
    mean_reward: float
    mean_episode_length: float
    success_rate: float
    episodes: int

    def as_dict(self) -> dict:
        return {
            "mean_reward": self.mean_reward,
            "mean_episode_length": self.mean_episode_length,
            "success_rate": self.success_rate,
            "episodes": self.episodes,
        }


def rollout(
    env: Env, actor, noise_std=0.0, rng: np.random.Generator | None = None, *, seed: int
) -> tuple[list[Transition], EpisodeStats]:
    """Play one episode from ``env.reset(seed)``.

    Gaussian noise with per-dimension ``noise_std`` is added to the actor's
    action before clamping to the action box. Only successful termination
    is marked ``done`` in the transitions; a horizon cut-off is not terminal.
    """
    spec = env.spec
    noisy = np.any(np.asarray(noise_std) > 0)
    if noisy and rng is None:
        raise ContractError("a random generator is required when noise_std > 0")
    obs = env.reset(seed)
    transitions: list[Transition] = []
    total, success = 0.0, False
    while True:
        action = np.asarray(actor(obs), dtype=np.float64)
        if noisy:
            action = action + rng.normal(0.0, noise_std, size=action.shape)
        action = spec.clip_action(action)
        result = env.step(action)
        transitions.append(Transition(obs, action, result.reward, result.obs, result.success))
        total += result.reward
        success = success or result.success
        obs = result.obs
        if result.done:
            break
    return transitions, EpisodeStats(total, len(transitions), success)


def evaluate(env: Env, actor, episodes: int, seed: int = 0) -> EvalStats:
    """Noise-free rollouts on seeds ``seed, seed + 1, ...``; arithmetic means."""
    if episodes < 1:
        raise ContractError(f"episodes must be >= 1, got {episodes}")
    stats = [rollout(env, actor, seed=seed + i)[1] for i in range(episodes)]
    return EvalStats(
        mean_reward=float(np.mean([s.episode_return for s in stats])),
        mean_episode_length=float(np.mean([s.length for s in stats])),
        success_rate=float(np.mean([s.success for s in stats])),
        episodes=episodes,
    )
