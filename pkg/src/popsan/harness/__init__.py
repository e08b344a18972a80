"""Actor-critic training harness: critics, replay, TD3, rollouts, trainer."""
