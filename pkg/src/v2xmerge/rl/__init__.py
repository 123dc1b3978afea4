"""Merging policy: reward shaping, beta-policy networks, PPO trainer."""

from .rewards import NeighborKin, RewardConfig, reward_fail, reward_running, reward_success
from .nets import PolicyNet, ValueNet
from .env import MergingEnv, TrainEnvConfig, build_state
from .ppo import (TrainConfig, compute_returns, load_checkpoint, ppo_objective,
                  save_checkpoint, train, value_loss)

__all__ = [
    "NeighborKin", "RewardConfig", "reward_fail", "reward_running", "reward_success",
    "PolicyNet", "ValueNet", "MergingEnv", "TrainEnvConfig", "build_state",
    "TrainConfig", "compute_returns", "ppo_objective", "value_loss", "train",
    "save_checkpoint", "load_checkpoint",
]
