"""Baseline and ablation policies, plus the policy-kind registry.

Every policy is a pure function of (observation, own rng state): baselines
recover whatever they need (positions, AoI) from the normalised observation
layout and never touch environment internals.
"""

from __future__ import annotations

import enum
from typing import Callable

import numpy as np

from .env import EnvConfig, action_slices

Policy = Callable[[np.ndarray], np.ndarray]


class PolicyKind(str, enum.Enum):
    DTD3 = "dtd3"
    TD3 = "td3"
    NO_CHARGE_DTD3 = "no_charge_dtd3"
    NO_CHARGE_TD3 = "no_charge_td3"
    RANDOM = "random"
    GREEDY_MAX_AOI = "greedy_max_aoi"


LEARNED_KINDS = frozenset({
    PolicyKind.DTD3, PolicyKind.TD3,
    PolicyKind.NO_CHARGE_DTD3, PolicyKind.NO_CHARGE_TD3,
})


def actor_kind_of(kind: PolicyKind) -> str:
    return "diffusion" if kind in (PolicyKind.DTD3, PolicyKind.NO_CHARGE_DTD3) else "mlp"


def forces_no_charge(kind: PolicyKind) -> bool:
    return kind in (PolicyKind.NO_CHARGE_DTD3, PolicyKind.NO_CHARGE_TD3)


def no_charge_wrap(policy: Policy) -> Policy:
    """Copy the wrapped policy's action but force the charging fraction to 0."""

    def wrapped(obs: np.ndarray) -> np.ndarray:
        action = np.array(policy(obs), dtype=np.float64, copy=True)
        action[-1] = -1.0
        return action

    return wrapped


def random_policy(rng: np.random.Generator, action_dim: int) -> Policy:
    """Every component uniform on [-1, 1], drawn from the given generator."""

    def act(obs: np.ndarray) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size=action_dim)

    return act


def greedy_max_aoi(num_devices: int) -> Policy:
    """Fly at full speed toward the stalest device and schedule it.

    Positions and AoI are read back from the observation layout; the velocity
    is a unit vector in normalised coordinates, which equals the real-space
    heading because both axes share one scale. Charging fraction is fixed at
    0.5 (tau_raw = 0).
    """
    n = num_devices
    vel_sl, sched_sl, tau_ix = action_slices(n)

    def act(obs: np.ndarray) -> np.ndarray:
        uav = obs[0:2]
        devices = obs[2:2 + 2 * n].reshape(n, 2)
        aoi = obs[2 + 3 * n:2 + 4 * n]
        target = int(np.argmax(aoi))  # ties resolve to the lowest index
        action = np.zeros(n + 3)
        heading = devices[target] - uav
        dist = float(np.linalg.norm(heading))
        if dist > 1e-12:
            action[vel_sl] = heading / dist
        action[sched_sl] = -1.0
        action[2 + target] = 1.0
        action[tau_ix] = 0.0
        return action

    return act


def make_stateless_policy(kind: PolicyKind, env_config: EnvConfig,
                          rng: np.random.Generator | None = None) -> Policy:
    """Build one of the non-learned policies by name."""
    kind = PolicyKind(kind)
    if kind == PolicyKind.RANDOM:
        if rng is None:
            raise ValueError("random policy needs a generator")
        return random_policy(rng, env_config.action_dim)
    if kind == PolicyKind.GREEDY_MAX_AOI:
        return greedy_max_aoi(env_config.num_devices)
    raise ValueError(f"{kind.value} is a learned policy, not a stateless baseline")
