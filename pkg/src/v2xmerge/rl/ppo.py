"""Proximal policy optimisation for the merging controller.

Training loop: collect whole episodes until the buffer holds at least
``buffer_size`` transitions, compute Monte-Carlo returns per trajectory,
use R - V(s) as the advantage, then run a fixed number of minibatch
updates on the clipped surrogate (policy) and squared error (value).
"""

import csv
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .env import MergingEnv, TrainEnvConfig
from .nets import PolicyNet, ValueNet

CHECKPOINT_VERSION = 2


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 600
    buffer_size: int = 4096
    minibatch: int = 256
    updates_per_epoch: int = 10
    gamma: float = 0.99
    clip: float = 0.2
    lr_policy: float = 3e-4
    lr_value: float = 1e-3
    hidden: int = 64
    init_conc: float = 48.0
    conc_min_one: bool = False
    normalize_adv: bool = True
    grad_clip: float = 0.5
    env: TrainEnvConfig = field(default_factory=TrainEnvConfig)


def compute_returns(rewards: Sequence[float], gamma: float) -> np.ndarray:
    """Discounted rewards-to-go of one finished trajectory."""
    out = np.empty(len(rewards), dtype=np.float64)
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def ppo_objective(policy: PolicyNet, states: torch.Tensor, actions: torch.Tensor,
                  logp_old: torch.Tensor, advantages: torch.Tensor,
                  clip: float) -> torch.Tensor:
    """Clipped surrogate objective (to be maximised)."""
    ratio = torch.exp(policy.log_prob(states, actions) - logp_old)
    clipped = torch.clamp(ratio, 1.0 - clip, 1.0 + clip)
    return torch.minimum(ratio * advantages, clipped * advantages).mean()


def value_loss(value: ValueNet, states: torch.Tensor,
               returns: torch.Tensor) -> torch.Tensor:
    return ((returns - value(states)) ** 2).mean()


@dataclass
class EpochStats:
    epoch: int
    episodes: int
    transitions: int
    mean_traj_reward: float
    success_rate: float
    collision_rate: float
    policy_objective: float
    value_loss: float
    wall_s: float = 0.0


class _Batch:
    def __init__(self) -> None:
        self.states: List[np.ndarray] = []
        self.actions: List[np.ndarray] = []
        self.logps: List[float] = []
        self.returns: List[float] = []
        self.traj_rewards: List[float] = []
        self.outcomes: List[str] = []

    def add_trajectory(self, states, actions, logps, rewards, outcome, gamma) -> None:
        rets = compute_returns(rewards, gamma)
        self.states.extend(states)
        self.actions.extend(actions)
        self.logps.extend(logps)
        self.returns.extend(rets.tolist())
        self.traj_rewards.append(float(sum(rewards)))
        self.outcomes.append(outcome)

    def __len__(self) -> int:
        return len(self.states)


def _collect(env: MergingEnv, policy: PolicyNet, gen: torch.Generator,
             seed_rng: np.random.Generator, min_transitions: int,
             gamma: float) -> Tuple[_Batch, int]:
    batch = _Batch()
    episodes = 0
    while len(batch) < min_transitions:
        seed = int(seed_rng.integers(0, 2**31 - 1))
        obs = env.reset(seed)
        trajs: Dict[int, Dict[str, list]] = {}
        done = False
        while not done:
            acting = sorted(obs)
            actions: Dict[int, Tuple[float, float]] = {}
            logps: Dict[int, float] = {}
            if acting:
                st = torch.tensor(np.stack([obs[v] for v in acting]))
                act, lp = policy.sample(st, gen)
                for i, vid in enumerate(acting):
                    actions[vid] = (float(act[i, 0]), float(act[i, 1]))
                    logps[vid] = float(lp[i])
            next_obs, rewards, outcomes, done = env.step(actions)
            for vid in acting:
                tr = trajs.setdefault(vid, {"s": [], "a": [], "lp": [], "r": []})
                tr["s"].append(obs[vid])
                tr["a"].append(np.array(actions[vid], dtype=np.float64))
                tr["lp"].append(logps[vid])
                tr["r"].append(rewards[vid])
                if outcomes[vid] is not None:
                    batch.add_trajectory(tr["s"], tr["a"], tr["lp"], tr["r"],
                                         outcomes[vid], gamma)
                    del trajs[vid]
            obs = next_obs
        episodes += 1
    return batch, episodes


def train(cfg: TrainConfig, trace_path: Optional[str] = None,
          progress: Optional[Callable[[EpochStats], None]] = None
          ) -> Tuple[PolicyNet, ValueNet, List[EpochStats], dict]:
    """Run the full training loop.

    Returns the nets, per-epoch stats, and the end-of-run generator states
    (for the checkpoint). Raises RuntimeError when a loss goes non-finite,
    so callers can report numeric failure instead of writing a broken
    checkpoint.
    """
    t_start = time.monotonic()
    torch.set_num_threads(1)
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    seed_rng = np.random.default_rng(cfg.seed)
    mb_rng = np.random.default_rng(cfg.seed + 1)

    policy = PolicyNet(hidden=cfg.hidden, init_conc=cfg.init_conc,
                       conc_min_one=cfg.conc_min_one)
    value = ValueNet(hidden=cfg.hidden)
    opt_pi = torch.optim.Adam(policy.parameters(), lr=cfg.lr_policy)
    opt_v = torch.optim.Adam(value.parameters(), lr=cfg.lr_value)
    env = MergingEnv(cfg.env)

    stats: List[EpochStats] = []
    writer = None
    trace_file = None
    if trace_path is not None:
        trace_file = open(trace_path, "w", newline="")
        writer = csv.writer(trace_file)
        # wall time stays out of the trace so repeated runs are byte-identical
        writer.writerow(["epoch", "episodes", "transitions", "mean_traj_reward",
                         "success_rate", "collision_rate", "policy_objective",
                         "value_loss"])
    try:
        for epoch in range(cfg.epochs):
            batch, episodes = _collect(env, policy, gen, seed_rng,
                                       cfg.buffer_size, cfg.gamma)
            states = torch.tensor(np.stack(batch.states))
            actions = torch.tensor(np.stack(batch.actions))
            logp_old = torch.tensor(np.array(batch.logps, dtype=np.float64))
            returns = torch.tensor(np.array(batch.returns, dtype=np.float64))
            with torch.no_grad():
                adv = returns - value(states)
            if cfg.normalize_adv:
                adv = (adv - adv.mean()) / (adv.std() + 1e-8)

            n = len(batch)
            last_obj = last_vl = 0.0
            for _ in range(cfg.updates_per_epoch):
                idx = torch.from_numpy(
                    mb_rng.choice(n, size=min(cfg.minibatch, n), replace=False))
                obj = ppo_objective(policy, states[idx], actions[idx],
                                    logp_old[idx], adv[idx], cfg.clip)
                loss_pi = -obj
                opt_pi.zero_grad()
                loss_pi.backward()
                torch.nn.utils.clip_grad_norm_(policy.parameters(), cfg.grad_clip)
                opt_pi.step()

                vl = value_loss(value, states[idx], returns[idx])
                opt_v.zero_grad()
                vl.backward()
                torch.nn.utils.clip_grad_norm_(value.parameters(), cfg.grad_clip)
                opt_v.step()
                last_obj, last_vl = float(obj.detach()), float(vl.detach())
                if not (math.isfinite(last_obj) and math.isfinite(last_vl)):
                    raise RuntimeError("training diverged: non-finite loss")

            succ = sum(1 for o in batch.outcomes if o == "success")
            coll = sum(1 for o in batch.outcomes if o == "collision")
            row = EpochStats(epoch, episodes, n,
                             float(np.mean(batch.traj_rewards)),
                             succ / max(len(batch.outcomes), 1),
                             coll / max(len(batch.outcomes), 1),
                             last_obj, last_vl, time.monotonic() - t_start)
            stats.append(row)
            if writer is not None:
                writer.writerow([row.epoch, row.episodes, row.transitions,
                                 f"{row.mean_traj_reward:.6f}",
                                 f"{row.success_rate:.6f}",
                                 f"{row.collision_rate:.6f}",
                                 f"{row.policy_objective:.6f}",
                                 f"{row.value_loss:.6f}"])
                trace_file.flush()
            if progress is not None:
                progress(row)
    finally:
        if trace_file is not None:
            trace_file.close()
    rng_state = {"torch": gen.get_state(),
                 "episode_seeds": seed_rng.bit_generator.state,
                 "minibatch": mb_rng.bit_generator.state}
    return policy, value, stats, rng_state


def save_checkpoint(path: str, policy: PolicyNet, value: ValueNet,
                    cfg: TrainConfig, rng_state: Optional[dict] = None,
                    wall_s: Optional[float] = None) -> None:
    """Versioned checkpoint: both nets, the full config echo, rng state."""
    from dataclasses import asdict

    torch.save({"version": CHECKPOINT_VERSION,
                "config": asdict(cfg),
                "rng_state": rng_state or {},
                "train_wall_s": wall_s,
                "policy": policy.state_dict(), "value": value.state_dict()}, path)


def load_checkpoint(path: str) -> Tuple[PolicyNet, ValueNet, dict]:
    blob = torch.load(path, weights_only=True)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')!r}")
    cfg = blob["config"]
    policy = PolicyNet(hidden=cfg["hidden"], init_conc=cfg["init_conc"],
                       conc_min_one=cfg["conc_min_one"])
    value = ValueNet(hidden=cfg["hidden"])
    policy.load_state_dict(blob["policy"])
    value.load_state_dict(blob["value"])
    return policy, value, cfg


@dataclass
class EpisodeResult:
    seed: int
    outcomes: Dict[int, str]
    objective: float            # summed over ramp vehicles' merging phases
    all_success: bool


def run_episode(env_cfg: TrainEnvConfig, seed: int,
                policy: Optional[PolicyNet]) -> EpisodeResult:
    """Roll out one episode; policy=None drives the merge with CACC + steering."""
    from ..metrics import trajectory_objective

    if policy is None:
        env_cfg = replace(env_cfg, baseline=True)
    env = MergingEnv(env_cfg)
    obs = env.reset(seed)
    traces: Dict[int, Dict[str, list]] = {}
    done = False
    while not done:
        acting = sorted(obs)
        actions: Dict[int, Tuple[float, float]] = {}
        if policy is not None and acting:
            st = torch.tensor(np.stack([obs[v] for v in acting]))
            act = policy.mean_action(st)
            for i, vid in enumerate(acting):
                actions[vid] = (float(act[i, 0]), float(act[i, 1]))
        obs, _, _, done = env.step(actions)
        for vid, (a, delta, phi, _x) in env.last_rl_motion.items():
            tr = traces.setdefault(vid, {"a": [], "delta": [], "phi": []})
            tr["a"].append(a)
            tr["delta"].append(delta)
            tr["phi"].append(phi)
    objective = sum(
        trajectory_objective(tr["a"], tr["phi"], env_cfg.dt) for tr in traces.values())
    outcomes = dict(env.outcomes)
    ok = bool(outcomes) and all(o == "success" for o in outcomes.values())
    return EpisodeResult(seed, outcomes, objective, ok)


def evaluate(env_cfg: TrainEnvConfig, seeds: Sequence[int],
             policy: Optional[PolicyNet]) -> List[EpisodeResult]:
    return [run_episode(env_cfg, s, policy) for s in seeds]
