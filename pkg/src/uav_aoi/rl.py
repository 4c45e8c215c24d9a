"""Twin-delayed actor-critic training machinery.

One trainer covers both algorithm variants: the actor is either a
deterministic MLP or the diffusion sampler from :mod:`uav_aoi.diffusion`;
everything else (replay, twin critics, target smoothing, delayed policy and
target updates) is identical, so any performance difference between the two
is attributable to the actor alone.

The no-charge ablation is applied at the action interface: the charging
component (last action column) is pinned to -1 on executed actions, on target
actions and inside the actor objective, never by altering the environment.
"""

from __future__ import annotations

import copy
import math
import time
from dataclasses import dataclass, field, fields
from typing import Any, Callable

import numpy as np
import torch
from torch import nn

from .diffusion import DiffusionActor, make_schedule
from .env import UavAoiEnv


class TrainingFault(RuntimeError):
    """A training update produced a non-finite loss."""


@dataclass(frozen=True)
class TrainerConfig:
    """Hyperparameters of the training loop (shared by both actor kinds)."""

    batch_size: int = 128
    learning_rate: float = 3e-4
    gamma: float = 0.99
    rho: float = 0.005
    policy_delay: int = 2
    target_noise_std: float = 0.2
    target_noise_clip: float = 0.5
    explore_noise_std: float = 0.1
    buffer_capacity: int = 1_000_000
    total_env_steps: int = 300_000
    warmup_steps: int = 5_000
    eval_interval: int = 0
    hidden: int = 128
    diffusion_steps: int = 5
    beta_min: float = 1e-4
    beta_max: float = 0.2
    seed: int = 0

    def validate(self) -> None:
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if not (0.0 < self.rho < 1.0):
            raise ValueError(f"rho must be in (0, 1), got {self.rho}")
        if self.policy_delay < 1:
            raise ValueError(f"policy_delay must be >= 1, got {self.policy_delay}")
        if self.batch_size < 1 or self.batch_size > self.buffer_capacity:
            raise ValueError(
                f"batch_size must be in [1, buffer_capacity], got {self.batch_size}")
        for name in ("learning_rate", "buffer_capacity", "hidden", "diffusion_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("total_env_steps", "warmup_steps", "eval_interval",
                     "target_noise_std", "target_noise_clip", "explore_noise_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown TrainerConfig fields: {sorted(unknown)}")
        return cls(**data)


class ReplayBuffer:
    """FIFO ring buffer of transitions with uniform sampling.

    Storage grows lazily up to ``capacity``; once full, each push overwrites
    the oldest transition.
    """

    def __init__(self, obs_dim: int, action_dim: int, capacity: int = 1_000_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.capacity = capacity
        self._allocated = 0
        self._ptr = 0
        self.size = 0
        self._obs = self._next_obs = self._actions = None
        self._rewards = self._dones = None

    def _grow(self, needed: int) -> None:
        new_alloc = min(self.capacity, max(needed, 1024, 2 * self._allocated))
        def resize(arr, width):
            fresh = np.zeros((new_alloc, width) if width else new_alloc,
                             dtype=np.float32)
            if arr is not None:
                fresh[: self._allocated] = arr
            return fresh
        self._obs = resize(self._obs, self.obs_dim)
        self._next_obs = resize(self._next_obs, self.obs_dim)
        self._actions = resize(self._actions, self.action_dim)
        self._rewards = resize(self._rewards, 0)
        self._dones = resize(self._dones, 0)
        self._allocated = new_alloc

    def push(self, obs, action, reward, next_obs, done) -> None:
        obs = np.asarray(obs, dtype=np.float32)
        action = np.asarray(action, dtype=np.float32)
        next_obs = np.asarray(next_obs, dtype=np.float32)
        if obs.shape != (self.obs_dim,) or next_obs.shape != (self.obs_dim,):
            raise ValueError(
                f"observation must have shape ({self.obs_dim},), "
                f"got {obs.shape} / {next_obs.shape}")
        if action.shape != (self.action_dim,):
            raise ValueError(
                f"action must have shape ({self.action_dim},), got {action.shape}")
        if not math.isfinite(float(reward)):
            raise ValueError(f"reward must be finite, got {reward}")
        if self._ptr >= self._allocated:
            self._grow(self._ptr + 1)
        self._obs[self._ptr] = obs
        self._actions[self._ptr] = action
        self._rewards[self._ptr] = reward
        self._next_obs[self._ptr] = next_obs
        self._dones[self._ptr] = float(done)
        self._ptr = (self._ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = rng.integers(0, self.size, size=batch_size)
        return (self._obs[idx], self._actions[idx], self._rewards[idx],
                self._next_obs[idx], self._dones[idx])

    def __len__(self) -> int:
        return self.size


class MLPActor(nn.Module):
    """Deterministic actor: observation -> action in [-1, 1]."""

    def __init__(self, obs_dim: int, action_dim: int, hidden: int = 128):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(obs_dim, hidden), nn.Mish(),
            nn.Linear(hidden, hidden), nn.Mish(),
            nn.Linear(hidden, action_dim), nn.Tanh(),
        )
        self.obs_dim = obs_dim
        self.action_dim = action_dim

    def forward(self, obs: torch.Tensor,
                generator: torch.Generator | None = None) -> torch.Tensor:
        return self.net(obs)


class TwinCritics(nn.Module):
    """Two independent Q-networks over (observation, action)."""

    def __init__(self, obs_dim: int, action_dim: int, hidden: int = 128):
        super().__init__()
        def q_net():
            return nn.Sequential(
                nn.Linear(obs_dim + action_dim, hidden), nn.Mish(),
                nn.Linear(hidden, hidden), nn.Mish(),
                nn.Linear(hidden, 1),
            )
        self.q1_net = q_net()
        self.q2_net = q_net()

    def forward(self, obs: torch.Tensor, action: torch.Tensor):
        x = torch.cat([obs, action], dim=-1)
        return self.q1_net(x), self.q2_net(x)

    def q1(self, obs: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        return self.q1_net(torch.cat([obs, action], dim=-1))


def soft_update(target: nn.Module, online: nn.Module, rho: float) -> None:
    """Polyak step: target <- rho * online + (1 - rho) * target."""
    with torch.no_grad():
        for t_param, o_param in zip(target.parameters(), online.parameters()):
            if t_param.shape != o_param.shape:
                raise ValueError(
                    f"shape mismatch {tuple(t_param.shape)} vs {tuple(o_param.shape)}")
            t_param.mul_(1.0 - rho).add_(o_param, alpha=rho)


def build_actor(actor_kind: str, obs_dim: int, action_dim: int,
                config: TrainerConfig) -> nn.Module:
    if actor_kind == "mlp":
        return MLPActor(obs_dim, action_dim, hidden=config.hidden)
    if actor_kind == "diffusion":
        schedule = make_schedule(config.diffusion_steps, config.beta_min,
                                 config.beta_max)
        return DiffusionActor(obs_dim, action_dim, schedule=schedule,
                              hidden=config.hidden)
    raise ValueError(f"unknown actor kind {actor_kind!r}")


class TD3Trainer:
    """Owns the networks, optimisers, generators and update counters."""

    def __init__(self, obs_dim: int, action_dim: int, config: TrainerConfig,
                 actor_kind: str = "mlp", force_no_charge: bool = False):
        config.validate()
        self.config = config
        self.actor_kind = actor_kind
        self.force_no_charge = force_no_charge
        torch.manual_seed(config.seed)
        self.actor = build_actor(actor_kind, obs_dim, action_dim, config)
        self.critics = TwinCritics(obs_dim, action_dim, hidden=config.hidden)
        self.target_actor = copy.deepcopy(self.actor)
        self.target_critics = copy.deepcopy(self.critics)
        self.actor_opt = torch.optim.Adam(self.actor.parameters(),
                                          lr=config.learning_rate)
        self.critic_opt = torch.optim.Adam(self.critics.parameters(),
                                           lr=config.learning_rate)
        # independent streams: target smoothing noise / online chain / target chain
        self.noise_gen = torch.Generator().manual_seed(config.seed + 1)
        self.chain_gen = torch.Generator().manual_seed(config.seed + 2)
        self.target_chain_gen = torch.Generator().manual_seed(config.seed + 3)
        self.critic_updates = 0
        self.actor_updates = 0

    def _ablate(self, actions: torch.Tensor) -> torch.Tensor:
        if not self.force_no_charge:
            return actions
        pinned = torch.full_like(actions[..., -1:], -1.0)
        return torch.cat([actions[..., :-1], pinned], dim=-1)

    def select_action(self, obs: np.ndarray, rng: np.random.Generator,
                      explore: bool = True) -> np.ndarray:
        with torch.no_grad():
            action = self.actor(torch.as_tensor(obs, dtype=torch.float32),
                                generator=self.chain_gen).numpy()
        if explore and self.config.explore_noise_std > 0:
            action = action + rng.normal(0.0, self.config.explore_noise_std,
                                         size=action.shape)
        action = np.clip(action, -1.0, 1.0)
        if self.force_no_charge:
            action[-1] = -1.0
        return action

    def critic_target(self, rewards: torch.Tensor, next_obs: torch.Tensor,
                      dones: torch.Tensor) -> torch.Tensor:
        """Smoothed min-twin bootstrap target."""
        with torch.no_grad():
            next_action = self.target_actor(next_obs,
                                            generator=self.target_chain_gen)
            noise = torch.randn(next_action.shape, generator=self.noise_gen,
                                dtype=next_action.dtype)
            noise = (noise * self.config.target_noise_std).clamp(
                -self.config.target_noise_clip, self.config.target_noise_clip)
            next_action = (next_action + noise).clamp(-1.0, 1.0)
            next_action = self._ablate(next_action)
            q1, q2 = self.target_critics(next_obs, next_action)
            target_q = torch.minimum(q1, q2).squeeze(-1)
            return rewards + self.config.gamma * (1.0 - dones) * target_q

    def critic_update(self, obs: torch.Tensor, actions: torch.Tensor,
                      targets: torch.Tensor) -> float:
        q1, q2 = self.critics(obs, actions)
        loss = nn.functional.mse_loss(q1.squeeze(-1), targets) \
            + nn.functional.mse_loss(q2.squeeze(-1), targets)
        self.critic_opt.zero_grad()
        loss.backward()
        self.critic_opt.step()
        self.critic_updates += 1
        value = float(loss)
        if not math.isfinite(value):
            raise TrainingFault(f"critic loss became non-finite: {value}")
        return value

    def actor_update(self, obs: torch.Tensor) -> float:
        for param in self.critics.parameters():
            param.requires_grad_(False)
        action = self._ablate(self.actor(obs, generator=self.chain_gen))
        loss = -self.critics.q1(obs, action).mean()
        self.actor_opt.zero_grad()
        loss.backward()
        self.actor_opt.step()
        for param in self.critics.parameters():
            param.requires_grad_(True)
        self.actor_updates += 1
        value = float(loss)
        if not math.isfinite(value):
            raise TrainingFault(f"actor loss became non-finite: {value}")
        return value

    def train_step(self, batch) -> tuple[float, float | None]:
        """One critic update; actor and target updates every policy_delay."""
        obs, actions, rewards, next_obs, dones = (
            torch.as_tensor(part) for part in batch)
        targets = self.critic_target(rewards, next_obs, dones)
        critic_loss = self.critic_update(obs, actions, targets)
        actor_loss = None
        if self.critic_updates % self.config.policy_delay == 0:
            actor_loss = self.actor_update(obs)
            soft_update(self.target_actor, self.actor, self.config.rho)
            soft_update(self.target_critics, self.critics, self.config.rho)
        return critic_loss, actor_loss


@dataclass
class EpisodeRecord:
    """Per-episode training scalars; everything except wall_clock_s is
    deterministic given (config, seed)."""

    episode: int
    env_steps: int
    mean_aoi_per_slot: float
    episode_avg_aoi: float
    episode_return: float
    critic_loss: float
    actor_loss: float
    wall_clock_s: float

    def metric_dict(self) -> dict[str, Any]:
        return {
            "episode": self.episode,
            "env_steps": self.env_steps,
            "mean_aoi_per_slot": self.mean_aoi_per_slot,
            "episode_avg_aoi": self.episode_avg_aoi,
            "return": self.episode_return,
            "critic_loss": self.critic_loss,
            "actor_loss": self.actor_loss,
        }


@dataclass
class TrainResult:
    trainer: TD3Trainer
    buffer: ReplayBuffer | None = None
    metrics: list[EpisodeRecord] = field(default_factory=list)
    eval_records: list[dict] = field(default_factory=list)


def train(env_factory: Callable[[], UavAoiEnv], actor_kind: str,
          trainer_config: TrainerConfig, *, force_no_charge: bool = False,
          episode_sink: Callable[[EpisodeRecord], None] | None = None) -> TrainResult:
    """Run the full training loop and collect per-episode metrics.

    ``env_factory`` must return a freshly seeded environment; calling it twice
    with the same setup must give identical episode streams, which makes the
    whole run reproducible from (env seed, trainer seed).
    """
    trainer_config.validate()
    env = env_factory()
    cfg = trainer_config
    trainer = TD3Trainer(env.obs_dim, env.action_dim, cfg,
                         actor_kind=actor_kind, force_no_charge=force_no_charge)
    buffer = ReplayBuffer(env.obs_dim, env.action_dim, cfg.buffer_capacity)
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult(trainer=trainer, buffer=buffer)

    aoi_clip = env.config.aoi_clip
    obs = env.reset()
    episode = 0
    ep_start = time.perf_counter()
    ep_slots = 0
    ep_return = 0.0
    ep_clipped_aoi = 0.0
    ep_aoi = 0.0
    ep_c_losses: list[float] = []
    ep_a_losses: list[float] = []

    for step_index in range(cfg.total_env_steps):
        if step_index < cfg.warmup_steps:
            action = rng.uniform(-1.0, 1.0, size=env.action_dim)
            if force_no_charge:
                action[-1] = -1.0
        else:
            action = trainer.select_action(obs, rng)
        out = env.step(action)
        buffer.push(obs, action, out.reward, out.observation, out.done)
        obs = out.observation

        ep_slots += 1
        ep_return += out.reward
        ep_clipped_aoi += -out.reward * aoi_clip
        ep_aoi += out.info["mean_aoi"]

        if step_index >= cfg.warmup_steps and len(buffer) >= cfg.batch_size:
            try:
                critic_loss, actor_loss = trainer.train_step(
                    buffer.sample(cfg.batch_size, rng))
            except TrainingFault as fault:
                raise TrainingFault(f"{fault} (env step {step_index})") from fault
            ep_c_losses.append(critic_loss)
            if actor_loss is not None:
                ep_a_losses.append(actor_loss)

        if out.done:
            episode += 1
            record = EpisodeRecord(
                episode=episode,
                env_steps=step_index + 1,
                mean_aoi_per_slot=ep_clipped_aoi / ep_slots,
                episode_avg_aoi=ep_aoi / ep_slots,
                episode_return=ep_return,
                critic_loss=float(np.mean(ep_c_losses)) if ep_c_losses else 0.0,
                actor_loss=float(np.mean(ep_a_losses)) if ep_a_losses else 0.0,
                wall_clock_s=time.perf_counter() - ep_start,
            )
            result.metrics.append(record)
            if episode_sink is not None:
                episode_sink(record)
            if cfg.eval_interval > 0 and episode % cfg.eval_interval == 0:
                result.eval_records.append(
                    _greedy_eval(env_factory, trainer, episode))
            obs = env.reset()
            ep_start = time.perf_counter()
            ep_slots = 0
            ep_return = 0.0
            ep_clipped_aoi = 0.0
            ep_aoi = 0.0
            ep_c_losses = []
            ep_a_losses = []

    return result


def _greedy_eval(env_factory: Callable[[], UavAoiEnv], trainer: TD3Trainer,
                 episode: int) -> dict:
    """One exploration-free episode on a fresh env (diffusion chain still
    stochastic, drawn from a fixed-seed generator)."""
    env = env_factory()
    gen = torch.Generator().manual_seed(trainer.config.seed + 9)
    obs = env.reset()
    total_aoi = 0.0
    slots = 0
    done = False
    while not done:
        with torch.no_grad():
            action = trainer.actor(torch.as_tensor(obs, dtype=torch.float32),
                                   generator=gen).numpy()
        if trainer.force_no_charge:
            action[-1] = -1.0
        out = env.step(action)
        total_aoi += out.info["mean_aoi"]
        slots += 1
        obs = out.observation
        done = out.done
    return {"episode": episode, "eval_avg_aoi": total_aoi / slots}
