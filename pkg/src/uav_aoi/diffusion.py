"""Conditional diffusion action sampler.

The actor is a noise-prediction network conditioned on the observation. To
emit an action it draws Gaussian noise of action dimension and runs a short
reverse denoising chain; every step is reparameterised, so gradients of a
downstream loss flow through the whole chain into the network weights.

Step indices ``k`` are 1-based (k = 1..K) to match the usual variance-schedule
convention; schedule arrays are indexed with ``k - 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn


class ScheduleError(ValueError):
    """Invalid variance-schedule parameters."""


@dataclass(frozen=True)
class DiffusionSchedule:
    """Variance schedule: betas with derived alphas and running products."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def num_steps(self) -> int:
        return len(self.betas)

    def to_dict(self) -> dict:
        return {"betas": [float(b) for b in self.betas]}

    @classmethod
    def from_betas(cls, betas) -> "DiffusionSchedule":
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or len(betas) < 1:
            raise ScheduleError("betas must be a non-empty 1-D sequence")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ScheduleError("every beta must lie in (0, 1)")
        if np.any(np.diff(betas) < 0):
            raise ScheduleError("betas must be non-decreasing")
        alphas = 1.0 - betas
        return cls(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


def make_schedule(num_steps: int, beta_min: float = 1e-4,
                  beta_max: float = 0.2) -> DiffusionSchedule:
    """Linearly spaced betas from beta_min to beta_max over num_steps."""
    if num_steps < 1:
        raise ScheduleError(f"num_steps must be >= 1, got {num_steps}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ScheduleError(
            f"need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})")
    if num_steps == 1:
        betas = np.array([beta_min])
    else:
        betas = np.linspace(beta_min, beta_max, num_steps)
    return DiffusionSchedule.from_betas(betas)


def make_cosine_schedule(num_steps: int, max_beta: float = 0.999,
                         offset: float = 0.008) -> DiffusionSchedule:
    """Cosine alpha-bar schedule (squared-cosine decay), capped at max_beta."""
    if num_steps < 1:
        raise ScheduleError(f"num_steps must be >= 1, got {num_steps}")

    def bar(u: float) -> float:
        return math.cos((u + offset) / (1 + offset) * math.pi / 2) ** 2

    betas = [
        min(1.0 - bar((k + 1) / num_steps) / bar(k / num_steps), max_beta)
        for k in range(num_steps)
    ]
    return DiffusionSchedule.from_betas(np.maximum.accumulate(betas))


def forward_noise(a0, k: int, schedule: DiffusionSchedule, noise):
    """Jump directly to noising step k: sqrt(ab_k) a0 + sqrt(1 - ab_k) noise."""
    ab = float(schedule.alpha_bars[k - 1])
    return math.sqrt(ab) * a0 + math.sqrt(1.0 - ab) * noise


def reverse_step(a_k, k: int, eps_hat, schedule: DiffusionSchedule, z=None):
    """One reverse-chain update given a noise estimate.

    Adds sqrt(beta_k) z only for k > 1; the final step is deterministic.
    Works on torch tensors and numpy arrays alike.
    """
    beta = float(schedule.betas[k - 1])
    alpha = float(schedule.alphas[k - 1])
    ab = float(schedule.alpha_bars[k - 1])
    mean = (a_k - beta / math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(alpha)
    if k == 1 or z is None:
        return mean
    return mean + math.sqrt(beta) * z


class NoisePredictor(nn.Module):
    """Maps (noisy action, step index, observation) to a noise estimate.

    Two mish hidden layers of ``hidden`` units; the step index enters through
    a learned embedding concatenated with action and observation. The output
    layer is tanh, bounding each noise component to (-1, 1).
    """

    def __init__(self, obs_dim: int, action_dim: int, num_steps: int,
                 hidden: int = 128, step_emb_dim: int = 16):
        super().__init__()
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.num_steps = num_steps
        self.step_embedding = nn.Embedding(num_steps, step_emb_dim)
        self.net = nn.Sequential(
            nn.Linear(action_dim + obs_dim + step_emb_dim, hidden),
            nn.Mish(),
            nn.Linear(hidden, hidden),
            nn.Mish(),
            nn.Linear(hidden, action_dim),
            nn.Tanh(),
        )

    def forward(self, noisy_action: torch.Tensor, k: int,
                obs: torch.Tensor) -> torch.Tensor:
        idx = torch.full((noisy_action.shape[0],), k - 1,
                         dtype=torch.long, device=noisy_action.device)
        emb = self.step_embedding(idx)
        return self.net(torch.cat([noisy_action, obs, emb], dim=-1))


@dataclass
class SamplerOutput:
    """Final action plus, optionally, the intermediate chain a_K..a_0."""

    action: torch.Tensor
    chain: list[torch.Tensor] | None = None


class DiffusionActor(nn.Module):
    """Action sampler: Gaussian noise refined through the reverse chain.

    The chain output is tanh-squashed, so emitted actions always lie in
    [-1, 1] and the squashing stays differentiable. The caller provides the
    torch.Generator so that sampling is reproducible; weights are never
    mutated by sampling, making concurrent read-only use safe.
    """

    def __init__(self, obs_dim: int, action_dim: int,
                 schedule: DiffusionSchedule | None = None,
                 hidden: int = 128, step_emb_dim: int = 16):
        super().__init__()
        self.schedule = schedule or make_schedule(5)
        self.denoiser = NoisePredictor(obs_dim, action_dim,
                                       self.schedule.num_steps,
                                       hidden=hidden, step_emb_dim=step_emb_dim)
        self.obs_dim = obs_dim
        self.action_dim = action_dim

    def _randn(self, shape, like: torch.Tensor,
               generator: torch.Generator | None) -> torch.Tensor:
        return torch.randn(shape, generator=generator,
                           dtype=like.dtype, device=like.device)

    def denoise_step(self, a_k: torch.Tensor, k: int, obs: torch.Tensor,
                     generator: torch.Generator | None = None) -> torch.Tensor:
        eps_hat = self.denoiser(a_k, k, obs)
        z = self._randn(a_k.shape, a_k, generator) if k > 1 else None
        return reverse_step(a_k, k, eps_hat, self.schedule, z)

    def forward(self, obs: torch.Tensor,
                generator: torch.Generator | None = None,
                return_chain: bool = False):
        squeeze = obs.dim() == 1
        if squeeze:
            obs = obs.unsqueeze(0)
        a = self._randn((obs.shape[0], self.action_dim), obs, generator)
        chain = [a] if return_chain else None
        for k in range(self.schedule.num_steps, 0, -1):
            a = self.denoise_step(a, k, obs, generator)
            if return_chain:
                chain.append(a)
        action = torch.tanh(a)
        if squeeze:
            action = action.squeeze(0)
            if return_chain:
                chain = [c.squeeze(0) for c in chain]
        if return_chain:
            return SamplerOutput(action=action, chain=chain)
        return action


def sample_action(observation: np.ndarray, actor: DiffusionActor,
                  generator: torch.Generator | None = None,
                  return_chain: bool = False):
    """Numpy-facing wrapper: observation vector in, action vector out."""
    dtype = next(actor.parameters()).dtype
    obs = torch.as_tensor(observation, dtype=dtype)
    with torch.no_grad():
        out = actor(obs, generator=generator, return_chain=return_chain)
    if return_chain:
        return SamplerOutput(action=out.action, chain=out.chain)
    return out.numpy()
