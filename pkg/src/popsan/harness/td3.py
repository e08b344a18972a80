"""Twin-delayed deterministic policy gradient (TD3) around an arbitrary actor.

The actor only has to provide ``forward(obs) -> (action, cache)`` and
``backward(cache, grad_action) -> grads``; the critic's action gradient is
the one and only signal the actor sees.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from ..errors import ContractError, TrainingError
from ..optim import AdamState, adam_update
from .mlp import MLPParams, critic_action_gradient, critic_backward, critic_forward, init_mlp
from .replay import Batch, ReplayBuffer


@dataclass
class TD3Config:
    gamma: float = 0.99
    tau: float = 0.005
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    batch_size: int = 256
    buffer_size: int = 100_000
    exploration_noise: float = 0.1  # fraction of the action half-range
    target_noise: float = 0.2
    target_noise_clip: float = 0.5
    policy_delay: int = 2
    start_steps: int = 1000
    max_env_steps: int = 100_000
    eval_interval: int = 2000
    eval_episodes: int = 10
    critic_hidden: tuple[int, ...] = (256, 256)
    action_penalty: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ContractError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0 < self.tau <= 1:
            raise ContractError(f"tau must lie in (0, 1], got {self.tau}")
        if self.policy_delay < 1:
            raise ContractError(f"policy_delay must be >= 1, got {self.policy_delay}")
        if self.buffer_size <= self.batch_size:
            raise ContractError("buffer_size must exceed batch_size")
        if self.batch_size < 1 or self.max_env_steps < 0 or self.start_steps < 0:
            raise ContractError("batch_size must be positive and step counts non-negative")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def bellman_targets(reward, done, q1_next, q2_next, gamma: float) -> np.ndarray:
    """``r + gamma * (1 - done) * min(Q1', Q2')``."""
    return reward + gamma * (1.0 - done) * np.minimum(q1_next, q2_next)


def polyak(target: dict[str, np.ndarray], online: dict[str, np.ndarray], tau: float) -> dict[str, np.ndarray]:
    return {k: tau * online[k] + (1.0 - tau) * target[k] for k in target}


class Critic:
    def __init__(self, params: MLPParams):
        self.params = params

    def __call__(self, obs, action) -> np.ndarray:
        return critic_forward(self.params, obs, action)

    def tensors(self) -> dict[str, np.ndarray]:
        return self.params.tensors()

    def load_tensors(self, tensors) -> None:
        self.params = self.params.with_tensors(tensors)


class TD3Agent:
    def __init__(self, actor, obs_dim: int, action_low, action_high, config: TD3Config):
        self.config = config
        self.action_low = np.asarray(action_low, dtype=np.float64)
        self.action_high = np.asarray(action_high, dtype=np.float64)
        self.action_scale = (self.action_high - self.action_low) / 2
        act_dim = len(self.action_low)
        rng = np.random.default_rng([config.seed, 7])
        sizes = [obs_dim + act_dim, *config.critic_hidden, 1]
        self.actor = actor
        self.critics = [Critic(init_mlp(sizes, rng)), Critic(init_mlp(sizes, rng))]
        self.actor_target = actor.copy()
        self.critic_targets = [Critic(c.params) for c in self.critics]
        self.actor_opt = AdamState()
        self.critic_opts = [AdamState(), AdamState()]
        self.updates = 0

    def act(self, obs) -> np.ndarray:
        return self.actor(obs)

    def explore(self, obs, rng: np.random.Generator) -> np.ndarray:
        noise = rng.normal(0.0, self.config.exploration_noise * self.action_scale)
        return np.clip(self.act(obs) + noise, self.action_low, self.action_high)

    def critic_targets_for(self, batch: Batch, rng: np.random.Generator) -> np.ndarray:
        cfg = self.config
        noise = rng.normal(0.0, cfg.target_noise * self.action_scale, size=batch.action.shape)
        clip = cfg.target_noise_clip * self.action_scale
        noise = np.clip(noise, -clip, clip)
        next_action = np.clip(self.actor_target(batch.next_obs) + noise, self.action_low, self.action_high)
        q1 = self.critic_targets[0](batch.next_obs, next_action)
        q2 = self.critic_targets[1](batch.next_obs, next_action)
        return bellman_targets(batch.reward, batch.done, q1, q2, cfg.gamma)

    def update(self, buffer: ReplayBuffer, rng: np.random.Generator) -> dict[str, float | None]:
        """One critic step and, every ``policy_delay`` calls, an actor step plus target sync."""
        cfg = self.config
        batch = buffer.sample(cfg.batch_size, rng)
        y = self.critic_targets_for(batch, rng)
        losses = []
        for i, critic in enumerate(self.critics):
            grads, loss = critic_backward(critic.params, batch.obs, batch.action, y)
            tensors, self.critic_opts[i] = adam_update(critic.tensors(), grads, self.critic_opts[i], cfg.critic_lr)
            critic.load_tensors(tensors)
            losses.append(loss)
        self.updates += 1
        critic_loss = float(np.mean(losses))
        if not np.isfinite(critic_loss):
            raise TrainingError(f"critic loss became {critic_loss} at update {self.updates}")

        actor_loss = None
        if self.updates % cfg.policy_delay == 0:
            actor_loss = self.actor_step(batch.obs)
            self.sync_targets()
        return {"critic_loss": critic_loss, "actor_loss": actor_loss}

    def actor_step(self, obs: np.ndarray) -> float:
        """Ascend ``mean Q1(s, pi(s))``.

        Actions outside the box are pulled back by a quadratic penalty; the
        spiking decoder has no squashing and would otherwise drift into
        regions the critic never saw.
        """
        cfg = self.config
        n = len(obs)
        action, cache = self.actor.forward(obs)
        q = self.critics[0](obs, action)
        over = np.maximum(action - self.action_high, 0.0) + np.minimum(action - self.action_low, 0.0)
        loss = float(-np.mean(q) + cfg.action_penalty * np.sum(over**2) / n)
        grad_action = critic_action_gradient(self.critics[0].params, obs, action, -np.ones(n) / n)
        grad_action = grad_action + 2.0 * cfg.action_penalty * over / n
        grads = self.actor.backward(cache, grad_action)
        self.actor_opt = self.actor.step(grads, self.actor_opt, cfg.actor_lr)
        if not np.isfinite(loss):
            raise TrainingError(f"actor loss became {loss} at update {self.updates}")
        return loss

    def sync_targets(self) -> None:
        tau = self.config.tau
        self.actor_target.load_tensors(polyak(self.actor_target.tensors(), self.actor.tensors(), tau))
        for target, online in zip(self.critic_targets, self.critics):
            target.load_tensors(polyak(target.tensors(), online.tensors(), tau))

    # -- checkpoint support -------------------------------------------------------

    def tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {"agent.updates": np.array(float(self.updates))}
        out.update({f"actor_target.{k}": v for k, v in self.actor_target.tensors().items()})
        for i in range(2):
            out.update({f"critic{i}.{k}": v for k, v in self.critics[i].tensors().items()})
            out.update({f"critic{i}_target.{k}": v for k, v in self.critic_targets[i].tensors().items()})
            out.update(self.critic_opts[i].tensors(f"critic{i}_opt"))
        out.update(self.actor_opt.tensors("actor_opt"))
        return out

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        def strip(prefix):
            return {k[len(prefix) + 1 :]: v for k, v in tensors.items() if k.startswith(prefix + ".")}

        self.updates = int(tensors["agent.updates"])
        self.actor_target.load_tensors(strip("actor_target"))
        for i in range(2):
            self.critics[i].load_tensors(strip(f"critic{i}"))
            self.critic_targets[i].load_tensors(strip(f"critic{i}_target"))
            self.critic_opts[i] = AdamState.from_tensors(tensors, f"critic{i}_opt")
        self.actor_opt = AdamState.from_tensors(tensors, "actor_opt")
