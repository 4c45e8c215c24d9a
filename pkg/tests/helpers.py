"""Shared oracles for the diffusion sampler, used by both the unit tests and
the acceptance suite. Each is written against the public contracts only."""

from __future__ import annotations

import math

import numpy as np
import torch

from uav_aoi.diffusion import (
    DiffusionActor,
    DiffusionSchedule,
    forward_noise,
    reverse_step,
)


def chain_gradient_max_rel_err(actor: DiffusionActor, obs: torch.Tensor,
                               seed: int, coords_per_tensor: int = 2,
                               h: float = 1e-6) -> float:
    """Central finite differences vs autograd through the full sampler.

    The chain noise is replayed identically for every evaluation by reseeding
    the generator. Coordinates are drawn at random from the upper half of each
    tensor's gradient magnitudes, so the relative error is well conditioned.
    """
    weights = torch.linspace(0.5, 1.5, actor.action_dim, dtype=torch.float64)

    def loss() -> torch.Tensor:
        gen = torch.Generator().manual_seed(seed)
        action = actor(obs, generator=gen)
        return (action * weights).sum() + 0.5 * (action ** 2).sum()

    actor.zero_grad()
    loss().backward()

    rng = np.random.default_rng(seed)
    worst = 0.0
    for param in actor.parameters():
        grad = param.grad.reshape(-1)
        flat = param.data.reshape(-1)
        order = torch.argsort(grad.abs(), descending=True)
        top = order[: max(1, len(order) // 2)]
        picks = rng.choice(len(top), size=min(coords_per_tensor, len(top)),
                           replace=False)
        for pick in picks:
            idx = int(top[pick])
            orig = float(flat[idx])
            with torch.no_grad():
                flat[idx] = orig + h
                up = float(loss())
                flat[idx] = orig - h
                down = float(loss())
                flat[idx] = orig
            fd = (up - down) / (2 * h)
            ana = float(grad[idx])
            denom = max(abs(fd), abs(ana), 1e-12)
            worst = max(worst, abs(fd - ana) / denom)
    actor.zero_grad()
    return worst


def denoiser_gradient_max_rel_err(actor: DiffusionActor, obs: torch.Tensor,
                                  seed: int, h: float = 1e-6) -> float:
    """Same check for a single denoiser evaluation instead of the chain."""
    gen = torch.Generator().manual_seed(seed)
    a_k = torch.randn((obs.shape[0], actor.action_dim), generator=gen,
                      dtype=torch.float64)
    weights = torch.linspace(-1.0, 1.0, actor.action_dim, dtype=torch.float64)

    def loss() -> torch.Tensor:
        eps = actor.denoiser(a_k, actor.schedule.num_steps, obs)
        return (eps * weights).sum()

    actor.zero_grad()
    loss().backward()

    rng = np.random.default_rng(seed)
    worst = 0.0
    for param in actor.parameters():
        if param.grad is None or param.grad.abs().max() == 0:
            continue
        grad = param.grad.reshape(-1)
        flat = param.data.reshape(-1)
        idx = int(torch.argmax(grad.abs()))
        extra = int(rng.integers(len(flat)))
        for i in {idx, extra}:
            if abs(float(grad[i])) < 1e-8:
                continue
            orig = float(flat[i])
            with torch.no_grad():
                flat[i] = orig + h
                up = float(loss())
                flat[i] = orig - h
                down = float(loss())
                flat[i] = orig
            fd = (up - down) / (2 * h)
            ana = float(grad[i])
            worst = max(worst, abs(fd - ana) / max(abs(fd), abs(ana), 1e-12))
    actor.zero_grad()
    return worst


def roundtrip_max_err(schedule: DiffusionSchedule, dim: int, seed: int) -> float:
    """Forward-noise to step K, then reverse deterministically with the
    oracle noise implied by the closed-form forward map at every step."""
    rng = np.random.default_rng(seed)
    a0 = rng.uniform(-1, 1, size=dim)
    eps = rng.standard_normal(dim)
    k_top = schedule.num_steps
    a_k = forward_noise(a0, k_top, schedule, eps)
    for k in range(k_top, 0, -1):
        ab = schedule.alpha_bars[k - 1]
        eps_hat = (a_k - math.sqrt(ab) * a0) / math.sqrt(1.0 - ab)
        a_k = reverse_step(a_k, k, eps_hat, schedule, z=None)
    return float(np.max(np.abs(a_k - a0)))


def train_actor_to_quadratic_peak(actor: torch.nn.Module, obs: torch.Tensor,
                                  a_star: torch.Tensor, updates: int = 500,
                                  lr: float = 1e-2, batch: int = 256,
                                  eval_samples: int = 2048,
                                  seed: int = 0) -> float:
    """Single-state convergence oracle.

    Maximises a frozen quadratic critic peaked at ``a_star`` through the
    actor's own sampling path and reports the final L-infinity distance of the
    mean sampled action from the peak. The learning rate drops 5x for the
    last 30% of updates to quiet last-iterate noise from the stochastic chain.
    """
    opt = torch.optim.Adam(actor.parameters(), lr=lr)
    gen = torch.Generator().manual_seed(seed)
    obs_batch = obs.unsqueeze(0).expand(batch, -1)
    for u in range(updates):
        if u == int(0.7 * updates):
            for group in opt.param_groups:
                group["lr"] = lr / 5.0
        action = actor(obs_batch, generator=gen)
        loss = ((action - a_star) ** 2).sum(dim=-1).mean()  # = -Q
        opt.zero_grad()
        loss.backward()
        opt.step()
    with torch.no_grad():
        eval_obs = obs.unsqueeze(0).expand(eval_samples, -1)
        mean_action = actor(eval_obs, generator=gen).mean(dim=0)
    return float((mean_action - a_star).abs().max())
