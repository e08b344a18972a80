"""Command-line entry point: ``popsan {train,eval,energy,inspect}``.

Exit status is 0 on success, 1 for usage or configuration errors and 2 when
a run fails (unreadable checkpoint, diverging loss, unwritable directory).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, energy, network
from .config import load_config
from .envs import ENV_NAMES, Env
from .errors import CheckpointError, ContractError, TrainingError
from .harness.actors import SpikingActor
from .harness.rollout import evaluate
from .harness.trainer import StartupError, load_actor, train

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="popsan", description="Population-coded spiking actors trained with TD3.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train an actor")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", help="checkpoint written by an earlier run")

    p = sub.add_parser("eval", help="evaluate a checkpoint without exploration noise")
    p.add_argument("checkpoint")
    p.add_argument("--env", choices=ENV_NAMES, default="point_reach")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="directory for eval.json")

    p = sub.add_parser("energy", help="estimate per-inference energy of a checkpointed actor")
    p.add_argument("checkpoint")
    p.add_argument("--env", choices=ENV_NAMES, default="planar_pick")
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timesteps", type=int, help="simulate with a different T than the checkpoint")
    p.add_argument("--baseline-hidden", help="comma-separated ANN widths; defaults to the actor's own")
    p.add_argument("--out", help="directory for energy.json and energy.txt")

    p = sub.add_parser("inspect", help="list checkpoint tensors")
    p.add_argument("checkpoint")
    return parser


# -- commands ------------------------------------------------------------------


def cmd_train(args) -> int:
    overrides = list(args.set)
    if args.out:
        overrides.append(f"out_dir={args.out}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    config = load_config(args.config, overrides)
    result = train(config, args.resume)
    print(json.dumps({
        "steps": result.steps,
        "episodes": result.episodes,
        "stopped_early": result.stopped_early,
        "final_checkpoint": str(result.final_checkpoint),
        "last_eval": result.evaluations[-1][1].as_dict() if result.evaluations else None,
    }))
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    actor = load_actor(args.checkpoint)
    stats = evaluate(Env(args.env), actor, args.episodes, args.seed)
    record = {"checkpoint": str(args.checkpoint), "env": args.env, "seed": args.seed, **stats.as_dict()}
    text = json.dumps(record, indent=2)
    if args.out:
        _write(Path(args.out) / "eval.json", text + "\n")
    print(text)
    return EXIT_OK


def collect_observations(env: Env, actor, samples: int, seed: int) -> np.ndarray:
    """Observations visited by the noise-free actor over consecutive seeded episodes."""
    observations = []
    episode = 0
    while len(observations) < samples:
        obs = env.reset(seed + episode)
        while len(observations) < samples:
            observations.append(obs)
            result = env.step(env.spec.clip_action(actor(obs)))
            obs = result.obs
            if result.done:
                break
        episode += 1
    return np.array(observations)


def energy_report(actor, observations: np.ndarray, baseline_hidden=None, costs=energy.OpCosts()):
    """Energy of one actor inference averaged over ``observations``."""
    obs_dim = observations.shape[-1]
    if isinstance(actor, SpikingActor):
        params = actor.params
        _, trace = network.forward(params, observations)
        profiles = energy.count_snn_acs(trace, params)
        hidden = params.hidden_sizes if baseline_hidden is None else tuple(baseline_hidden)
        ann = energy.count_ann_flops([obs_dim, *hidden, params.act_dim])
        ann_energy = energy.estimate_energy(ann, costs).total_energy
        report = energy.estimate_energy(profiles, costs, baseline=ann_energy)
        report.details = {
            "actor": "spiking",
            "timesteps": params.timesteps,
            "samples": len(observations),
            "baseline_sizes": [obs_dim, *hidden, params.act_dim],
            "mean_firing_rate": energy.mean_firing_rate(profiles, params),
            "break_even_rate": energy.break_even_rate(params, ann_energy, costs),
        }
        return report
    sizes = actor.params.sizes
    profiles = energy.count_ann_flops(sizes)
    total = energy.estimate_energy(profiles, costs).total_energy
    report = energy.estimate_energy(profiles, costs, baseline=total)
    report.details = {"actor": "baseline", "samples": len(observations), "baseline_sizes": list(sizes)}
    return report


def cmd_energy(args) -> int:
    if args.samples < 1:
        raise UsageError("--samples must be >= 1")
    hidden = None
    if args.baseline_hidden:
        try:
            hidden = [int(x) for x in args.baseline_hidden.split(",") if x.strip()]
        except ValueError as exc:
            raise UsageError(f"--baseline-hidden: {exc}") from exc
    actor = load_actor(args.checkpoint)
    env = Env(args.env)
    observations = collect_observations(env, actor, args.samples, args.seed)
    if args.timesteps is not None:
        if not isinstance(actor, SpikingActor):
            raise UsageError("--timesteps only applies to spiking checkpoints")
        actor = SpikingActor(dataclasses.replace(actor.params, timesteps=args.timesteps))
    report = energy_report(actor, observations, hidden)
    report.details["env"] = args.env
    report.details["seed"] = args.seed
    if args.out:
        out = Path(args.out)
        _write(out / "energy.json", report.to_json() + "\n")
        _write(out / "energy.txt", report.render_table() + "\n")
    print(report.render_table())
    return EXIT_OK


def cmd_inspect(args) -> int:
    tensors = checkpoint.load(args.checkpoint)
    width = max((len(name) for name in tensors), default=0)
    for name, value in tensors.items():
        print(f"{name:<{width}}  {tuple(value.shape)}")
    return EXIT_OK


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise StartupError(f"cannot write {path}: {exc}") from exc


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "energy": cmd_energy, "inspect": cmd_inspect}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help or a usage error already reported by argparse
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ContractError) as exc:
        print(f"popsan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, TrainingError, StartupError, OSError) as exc:
        print(f"popsan: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
