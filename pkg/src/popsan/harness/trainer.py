"""Step-by-step TD3 training loop with metrics, checkpoints and resume.

Randomness is derived from ``(seed, step)`` rather than carried in a
generator, so a run resumed from a checkpoint draws exactly the numbers an
uninterrupted run would have drawn.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import checkpoint
from ..config import RunConfig
from ..envs import Env
from ..errors import CheckpointError, ContractError
from .actors import actor_from_tensors, actor_tensors, build_actor
from .replay import ReplayBuffer, Transition
from .rollout import EvalStats, evaluate
from .td3 import TD3Agent

log = logging.getLogger(__name__)

METRIC_FIELDS = (
    "step",
    "episode",
    "phase",
    "mean_reward",
    "mean_episode_length",
    "success_rate",
    "critic_loss",
    "actor_loss",
    "wall_ms",
)


class StartupError(RuntimeError):
    """The run cannot start (unwritable output directory, bad resume file)."""


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def episode_seed(seed: int, episode: int) -> int:
    return _seed(seed, 1, episode)


def eval_seed(seed: int) -> int:
    return _seed(seed, 2) % 2**31


@dataclass
class LoopState:
    step: int = 0
    episode: int = 0
    need_reset: bool = True
    obs: np.ndarray | None = None
    ep_return: float = 0.0
    ep_length: int = 0
    ep_success: bool = False
    window_returns: list[float] = field(default_factory=list)
    window_lengths: list[int] = field(default_factory=list)
    window_successes: list[bool] = field(default_factory=list)
    critic_loss: float | None = None
    actor_loss: float | None = None
    stopped: bool = False

    def tensors(self) -> dict[str, np.ndarray]:
        def opt(x):
            return np.nan if x is None else x

        return {
            "loop.scalars": np.array(
                [self.step, self.episode, self.need_reset, self.ep_return, self.ep_length, self.ep_success,
                 opt(self.critic_loss), opt(self.actor_loss), self.stopped],
                dtype=np.float64,
            ),
            "loop.obs": np.zeros(0) if self.obs is None else self.obs,
            "loop.window": np.array(
                [self.window_returns, self.window_lengths, self.window_successes], dtype=np.float64
            ).reshape(3, -1),
        }

    @classmethod
    def from_tensors(cls, t: dict[str, np.ndarray]) -> "LoopState":
        s = t["loop.scalars"]
        w = t["loop.window"]
        return cls(
            step=int(s[0]),
            episode=int(s[1]),
            need_reset=bool(s[2]),
            obs=None if t["loop.obs"].size == 0 else t["loop.obs"].copy(),
            ep_return=float(s[3]),
            ep_length=int(s[4]),
            ep_success=bool(s[5]),
            critic_loss=None if np.isnan(s[6]) else float(s[6]),
            actor_loss=None if np.isnan(s[7]) else float(s[7]),
            stopped=bool(s[8]),
            window_returns=[float(x) for x in w[0]],
            window_lengths=[int(x) for x in w[1]],
            window_successes=[bool(x) for x in w[2]],
        )


@dataclass
class TrainResult:
    steps: int
    episodes: int
    evaluations: list[tuple[int, EvalStats]]
    final_checkpoint: Path
    stopped_early: bool


class Trainer:
    def __init__(self, config: RunConfig, resume: str | Path | None = None):
        self.config = config
        self.out_dir = Path(config.out_dir)
        self.env = Env(config.env)
        self.eval_env = Env(config.env)
        spec = self.env.spec
        self.td3 = config.td3()
        resume_tensors = self._read_resume(resume) if resume else None
        if resume_tensors is not None:
            actor = actor_from_tensors(resume_tensors)
        else:
            actor = build_actor(
                config.actor,
                spec.obs_dim,
                spec.act_dim,
                obs_ranges=spec.obs_bounds,
                action_low=spec.action_low,
                action_high=spec.action_high,
                seed=config.seed,
                pop_size=config.pop_size,
                hidden_sizes=config.hidden_sizes,
                timesteps=config.timesteps,
                lif=config.lif(),
                baseline_hidden=config.baseline_hidden,
            )
        self.agent = TD3Agent(actor, spec.obs_dim, spec.action_low, spec.action_high, self.td3)
        self.buffer = ReplayBuffer(self.td3.buffer_size, spec.obs_dim, spec.act_dim)
        self.loop = LoopState()
        self.evaluations: list[tuple[int, EvalStats]] = []
        if resume_tensors is not None:
            self._restore(resume_tensors)
        self._t0 = time.perf_counter()

    # -- setup ----------------------------------------------------------------------

    @staticmethod
    def _read_resume(path) -> dict[str, np.ndarray]:
        try:
            tensors = checkpoint.load(path)
        except CheckpointError as exc:
            raise StartupError(str(exc)) from exc
        if "loop.scalars" not in tensors:
            raise StartupError(f"{path} is an actor-only checkpoint and cannot be resumed")
        return tensors

    def _restore(self, tensors: dict[str, np.ndarray]) -> None:
        self.agent.load_tensors(tensors)
        self.buffer = ReplayBuffer.from_tensors(tensors)
        if self.buffer.capacity != self.td3.buffer_size:
            raise StartupError("buffer_size differs from the resumed run")
        self.loop = LoopState.from_tensors(tensors)
        if not self.loop.need_reset:
            self.env.load_state_tensors(tensors)

    def _prepare_output(self) -> None:
        try:
            (self.out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
            (self.out_dir / "config.txt").write_text(self.config.dumps())
        except OSError as exc:
            raise StartupError(f"output directory {self.out_dir} is not writable: {exc}") from exc
        metrics = self.out_dir / "metrics.jsonl"
        if self.loop.step == 0:
            metrics.write_text("")
        elif metrics.exists():
            # drop records a previous attempt wrote past the resume point
            kept = [ln for ln in metrics.read_text().splitlines() if json.loads(ln)["step"] <= self.loop.step]
            metrics.write_text("".join(ln + "\n" for ln in kept))
        self._metrics = open(metrics, "a", encoding="utf-8")

    # -- main loop --------------------------------------------------------------------

    def run(self) -> TrainResult:
        self._prepare_output()
        try:
            if self.loop.step == 0:
                self.save_checkpoint(self.checkpoint_path(0))
            while self.loop.step < self.td3.max_env_steps and not self.loop.stopped:
                self.train_step()
            final = self.out_dir / "final.psan"
            self.save_checkpoint(final)
        finally:
            self._metrics.close()
        return TrainResult(self.loop.step, self.loop.episode, self.evaluations, final, self.loop.stopped)

    def train_step(self) -> None:
        cfg, loop, spec = self.td3, self.loop, self.env.spec
        loop.step += 1
        step = loop.step
        rng = np.random.default_rng([cfg.seed, 3, step])
        if loop.need_reset:
            loop.obs = self.env.reset(episode_seed(cfg.seed, loop.episode))
            loop.need_reset = False
            loop.ep_return, loop.ep_length, loop.ep_success = 0.0, 0, False

        if step <= cfg.start_steps:
            action = rng.uniform(spec.action_low, spec.action_high)
        else:
            action = self.agent.explore(loop.obs, rng)
        result = self.env.step(action)
        self.buffer.add(Transition(loop.obs, action, result.reward, result.obs, result.success))
        loop.obs = result.obs
        loop.ep_return += result.reward
        loop.ep_length += 1
        loop.ep_success = loop.ep_success or result.success
        if result.done:
            loop.window_returns.append(loop.ep_return)
            loop.window_lengths.append(loop.ep_length)
            loop.window_successes.append(loop.ep_success)
            loop.episode += 1
            loop.need_reset = True

        if step > cfg.start_steps and len(self.buffer) >= cfg.batch_size:
            diag = self.agent.update(self.buffer, np.random.default_rng([cfg.seed, 4, step]))
            loop.critic_loss = diag["critic_loss"]
            if diag["actor_loss"] is not None:
                loop.actor_loss = diag["actor_loss"]

        if step % self.config.log_interval == 0:
            self._log_train()
        if step % cfg.eval_interval == 0:
            stats = self.evaluate()
            self.evaluations.append((step, stats))
            self._write_metric("eval", stats.mean_reward, stats.mean_episode_length, stats.success_rate)
            log.info("step %d eval success %.2f reward %.2f", step, stats.success_rate, stats.mean_reward)
            if self.config.target_success > 0 and stats.success_rate >= self.config.target_success:
                loop.stopped = True
        if step % self.config.checkpoint_interval == 0:
            self.save_checkpoint(self.checkpoint_path(step))

    def evaluate(self, episodes: int | None = None) -> EvalStats:
        return evaluate(self.eval_env, self.agent.actor, episodes or self.td3.eval_episodes, eval_seed(self.td3.seed))

    def _log_train(self) -> None:
        loop = self.loop
        if loop.window_returns:
            self._write_metric(
                "train",
                float(np.mean(loop.window_returns)),
                float(np.mean(loop.window_lengths)),
                float(np.mean(loop.window_successes)),
            )
        else:
            self._write_metric("train", None, None, None)
        loop.window_returns, loop.window_lengths, loop.window_successes = [], [], []

    def _write_metric(self, phase, mean_reward, mean_length, success_rate) -> None:
        wall = round((time.perf_counter() - self._t0) * 1000.0, 1) if self.config.record_wall_time else None
        record = dict(
            zip(
                METRIC_FIELDS,
                (self.loop.step, self.loop.episode, phase, mean_reward, mean_length, success_rate,
                 self.loop.critic_loss, self.loop.actor_loss, wall),
            )
        )
        self._metrics.write(json.dumps(record) + "\n")
        self._metrics.flush()

    # -- checkpoints --------------------------------------------------------------------

    def checkpoint_path(self, step: int) -> Path:
        return self.out_dir / "checkpoints" / f"step_{step:08d}.psan"

    def state_tensors(self) -> dict[str, np.ndarray]:
        tensors = actor_tensors(self.agent.actor)
        tensors.update(self.agent.tensors())
        tensors.update(self.buffer.tensors())
        tensors.update(self.loop.tensors())
        if not self.loop.need_reset:
            tensors.update(self.env.state_tensors())
        return tensors

    def save_checkpoint(self, path: Path) -> None:
        checkpoint.save(path, self.state_tensors())


def load_actor(path):
    """Rebuild the actor stored in any checkpoint written by :class:`Trainer`."""
    tensors = checkpoint.load(path)
    if "actor_meta.kind" not in tensors:
        raise CheckpointError(f"{path} holds no actor")
    return actor_from_tensors(tensors)


def train(config: RunConfig, resume=None) -> TrainResult:
    if config.max_env_steps < 0:
        raise ContractError("max_env_steps must be non-negative")
    return Trainer(config, resume).run()
