"""Slot-based simulator of a UAV that charges energy-buffered IoT devices and
collects their data, tracking per-device age of information (AoI).

World model
-----------
Time advances in slots of ``slot_duration_s`` seconds. Each slot the UAV
moves, then broadcasts RF energy for a fraction ``tau`` of the slot (all
devices harvest, scaled by their free-space channel gain), and the single
scheduled device uses the remaining ``(1 - tau)`` window to upload one fixed
size packet. A successful upload resets that device's AoI to 1; every other
AoI increments by one slot. The per-slot reward is the negative clipped mean
AoI, normalised to [-1, -1/aoi_clip].

Action layout (dimension ``num_devices + 3``, all components in [-1, 1]):

    [0:2]    UAV velocity, scaled by ``uav_vmax_mps`` per axis
    [2:2+N]  scheduling scores; argmax picks the uplink device (ties -> lowest index)
    [2+N]    tau_raw; charging fraction tau = (tau_raw + 1) / 2

Observation layout (length ``2 + 4 * num_devices``, components in [-1, 1]):

    [0:2]        UAV xy, mapped from [0, area] to [-1, 1]
    [2:2+2N]     device xy pairs, same mapping
    [2+2N:2+3N]  device energy / battery_capacity_j
    [2+3N:2+4N]  min(aoi, aoi_clip) / aoi_clip
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Any

import numpy as np


class ConfigError(ValueError):
    """A configuration value violates one of the documented bounds."""


class EpisodeOverError(RuntimeError):
    """step() was called on an episode that already reached its last slot."""


@dataclass(frozen=True)
class EnvConfig:
    """Static scenario parameters.

    Defaults give a desk-scale instance where a device directly under the
    UAV refills one full upload cost within a few fully-charging slots, so
    charging policies have a learnable advantage over not charging.
    """

    num_devices: int = 5
    area_side_m: float = 100.0
    uav_altitude_m: float = 10.0
    slot_duration_s: float = 1.0
    episode_slots: int = 200
    uav_vmax_mps: float = 20.0
    channel_ref_gain: float = 1e-3
    noise_power_w: float = 1e-12
    bandwidth_hz: float = 1e6
    wpt_tx_power_w: float = 10.0
    harvest_efficiency: float = 0.8
    uplink_tx_power_w: float = 4e-4
    packet_bits: float = 2e6
    battery_capacity_j: float = 2e-3
    initial_energy_j: float = 4e-4
    aoi_clip: int = 50
    seed: int = 0

    # slots allowed for a co-located device to recharge one full upload cost
    FEASIBILITY_SLOTS = 10

    def validate(self) -> None:
        positive = [
            "num_devices", "area_side_m", "uav_altitude_m", "slot_duration_s",
            "episode_slots", "uav_vmax_mps", "channel_ref_gain", "noise_power_w",
            "bandwidth_hz", "wpt_tx_power_w", "harvest_efficiency",
            "uplink_tx_power_w", "packet_bits", "battery_capacity_j",
            "initial_energy_j", "aoi_clip",
        ]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be strictly positive, got {getattr(self, name)!r}")
        if self.harvest_efficiency > 1.0:
            raise ConfigError(
                f"harvest_efficiency must be <= 1, got {self.harvest_efficiency!r}")
        if self.initial_energy_j > self.battery_capacity_j:
            raise ConfigError(
                "initial_energy_j must be <= battery_capacity_j "
                f"({self.initial_energy_j!r} > {self.battery_capacity_j!r})")
        if int(self.num_devices) != self.num_devices or int(self.episode_slots) != self.episode_slots:
            raise ConfigError("num_devices and episode_slots must be integers")
        # Charge-to-upload feasibility: a device directly under the UAV must
        # recharge one full-slot upload cost within FEASIBILITY_SLOTS slots of
        # uninterrupted charging, otherwise no policy can sustain uploads.
        overhead_gain = channel_gain(
            np.zeros(2), self.uav_altitude_m, np.zeros(2), self.channel_ref_gain)
        per_slot = harvest_amount(
            overhead_gain, self.wpt_tx_power_w, 1.0, self.slot_duration_s,
            self.harvest_efficiency)
        upload_cost = self.uplink_tx_power_w * self.slot_duration_s
        if self.FEASIBILITY_SLOTS * per_slot < upload_cost:
            raise ConfigError(
                "charge-to-upload feasibility violated: "
                f"{self.FEASIBILITY_SLOTS} fully-charging slots under the UAV recharge "
                f"{self.FEASIBILITY_SLOTS * per_slot:.3e} J but one full-slot upload "
                f"costs {upload_cost:.3e} J")

    @property
    def obs_dim(self) -> int:
        return 2 + 4 * self.num_devices

    @property
    def action_dim(self) -> int:
        return self.num_devices + 3

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EnvConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown EnvConfig fields: {sorted(unknown)}")
        return cls(**data)


def action_slices(num_devices: int) -> tuple[slice, slice, int]:
    """(velocity slice, scheduling-score slice, tau index) of the flat action."""
    return slice(0, 2), slice(2, 2 + num_devices), 2 + num_devices


@dataclass
class SlotAction:
    """Decoded continuous action for one slot."""

    vel: np.ndarray           # (2,) in [-1, 1], scaled by uav_vmax_mps
    sched_scores: np.ndarray  # (N,) in [-1, 1], argmax selects uplink device
    tau_raw: float            # in [-1, 1]; tau = (tau_raw + 1) / 2

    @classmethod
    def from_vector(cls, vec: np.ndarray, num_devices: int) -> "SlotAction":
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        if vec.shape[0] != num_devices + 3:
            raise ValueError(
                f"action vector must have length {num_devices + 3}, got {vec.shape[0]}")
        vec = np.clip(vec, -1.0, 1.0)
        v_sl, s_sl, t_ix = action_slices(num_devices)
        return cls(vel=vec[v_sl].copy(), sched_scores=vec[s_sl].copy(), tau_raw=float(vec[t_ix]))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.vel, self.sched_scores, [self.tau_raw]])

    @property
    def tau(self) -> float:
        return (self.tau_raw + 1.0) / 2.0

    @property
    def scheduled_device(self) -> int:
        return int(np.argmax(self.sched_scores))


@dataclass
class EnvState:
    """Mutable per-episode world state."""

    slot_index: int
    uav_xy: np.ndarray     # (2,) metres
    device_xy: np.ndarray  # (N, 2) metres, static within an episode
    energy_j: np.ndarray   # (N,) joules
    aoi: np.ndarray        # (N,) slots, always >= 1

    def copy(self) -> "EnvState":
        return EnvState(
            slot_index=self.slot_index,
            uav_xy=self.uav_xy.copy(),
            device_xy=self.device_xy.copy(),
            energy_j=self.energy_j.copy(),
            aoi=self.aoi.copy(),
        )


@dataclass
class StepOutcome:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict[str, Any] = field(default_factory=dict)


def channel_gain(uav_xy: np.ndarray, altitude: float, device_xy: np.ndarray,
                 ref_gain: float) -> np.ndarray | float:
    """Free-space line-of-sight power gain: ref_gain / (altitude^2 + d_xy^2).

    ``device_xy`` may be (2,) or (N, 2); the result broadcasts accordingly.
    """
    delta = np.asarray(device_xy, dtype=np.float64) - np.asarray(uav_xy, dtype=np.float64)
    sq = np.sum(delta * delta, axis=-1)
    gain = ref_gain / (altitude * altitude + sq)
    return gain if gain.ndim else float(gain)


def harvest_amount(gain: np.ndarray | float, wpt_tx_power_w: float, tau: float,
                   slot_duration_s: float, efficiency: float) -> np.ndarray | float:
    """Energy (J) harvested over a charging window of tau * slot_duration_s."""
    return efficiency * wpt_tx_power_w * gain * tau * slot_duration_s


def upload_attempt(state: EnvState, device_index: int, tau: float,
                   config: EnvConfig) -> tuple[bool, float]:
    """Try to push one packet from the device in the (1 - tau) uplink window.

    Succeeds iff the device can fund the transmit energy and the Shannon rate
    over the window carries the whole packet. Failed attempts abort before
    transmitting and spend nothing.
    """
    window_s = (1.0 - tau) * config.slot_duration_s
    required_j = config.uplink_tx_power_w * window_s
    gain = channel_gain(state.uav_xy, config.uav_altitude_m,
                        state.device_xy[device_index], config.channel_ref_gain)
    snr = config.uplink_tx_power_w * gain / config.noise_power_w
    achievable_bits = config.bandwidth_hz * window_s * math.log2(1.0 + snr)
    success = (state.energy_j[device_index] >= required_j
               and achievable_bits >= config.packet_bits)
    return success, (required_j if success else 0.0)


def observe(state: EnvState, config: EnvConfig) -> np.ndarray:
    """Flatten the state into the normalised layout documented in the module docstring."""
    scale = 2.0 / config.area_side_m
    obs = np.concatenate([
        state.uav_xy * scale - 1.0,
        (state.device_xy * scale - 1.0).reshape(-1),
        state.energy_j / config.battery_capacity_j,
        np.minimum(state.aoi, config.aoi_clip) / config.aoi_clip,
    ])
    return obs.astype(np.float64)


def reset(config: EnvConfig, seed: int) -> tuple[EnvState, np.ndarray]:
    """Fresh episode: devices uniform over the area, full initial buffers, AoI 1."""
    config.validate()
    rng = np.random.default_rng(seed)
    n = config.num_devices
    state = EnvState(
        slot_index=0,
        uav_xy=np.full(2, config.area_side_m / 2.0),
        device_xy=rng.uniform(0.0, config.area_side_m, size=(n, 2)),
        energy_j=np.full(n, config.initial_energy_j),
        aoi=np.ones(n, dtype=np.int64),
    )
    return state, observe(state, config)


def step(state: EnvState, action: np.ndarray | SlotAction,
         config: EnvConfig) -> tuple[EnvState, StepOutcome]:
    """Advance one slot. Returns the successor state and the step outcome.

    Order within the slot: move the UAV, harvest with post-move gains (buffers
    cap at capacity), upload attempt by the argmax-scheduled device, AoI
    update, reward from the post-update clipped mean AoI.

    ``info['harvested_j']`` reports the energy actually stored (after the
    capacity cap), so energy accounting balances exactly.
    """
    if state.slot_index >= config.episode_slots:
        raise EpisodeOverError(
            f"episode already finished at slot {state.slot_index}")
    if not isinstance(action, SlotAction):
        action = SlotAction.from_vector(action, config.num_devices)

    nxt = state.copy()
    nxt.uav_xy = np.clip(
        state.uav_xy + action.vel * config.uav_vmax_mps * config.slot_duration_s,
        0.0, config.area_side_m)

    gains = channel_gain(nxt.uav_xy, config.uav_altitude_m, nxt.device_xy,
                         config.channel_ref_gain)
    raw = harvest_amount(gains, config.wpt_tx_power_w, action.tau,
                         config.slot_duration_s, config.harvest_efficiency)
    stored = np.minimum(raw, config.battery_capacity_j - nxt.energy_j)
    nxt.energy_j += stored

    scheduled = action.scheduled_device
    success, spent = upload_attempt(nxt, scheduled, action.tau, config)
    nxt.energy_j[scheduled] -= spent

    nxt.aoi += 1
    if success:
        nxt.aoi[scheduled] = 1
    nxt.slot_index = state.slot_index + 1

    clipped_mean = float(np.mean(np.minimum(nxt.aoi, config.aoi_clip)))
    reward = -clipped_mean / config.aoi_clip
    outcome = StepOutcome(
        observation=observe(nxt, config),
        reward=reward,
        done=nxt.slot_index >= config.episode_slots,
        info={
            "scheduled_device": scheduled,
            "upload_success": success,
            "harvested_j": stored,
            "energy_spent_j": spent,
            "mean_aoi": float(np.mean(nxt.aoi)),
        },
    )
    return nxt, outcome


class UavAoiEnv:
    """Stateful reset/step wrapper around the pure slot dynamics.

    Each instance owns a seeded generator; without an explicit reset seed,
    successive episodes draw fresh device layouts from that stream, so a
    (config, seed) pair fully determines a whole training run.
    """

    def __init__(self, config: EnvConfig | None = None, seed: int | None = None):
        self.config = config or EnvConfig()
        self.config.validate()
        self._seed_stream = np.random.default_rng(
            self.config.seed if seed is None else seed)
        self.state: EnvState | None = None

    def reset(self, seed: int | None = None) -> np.ndarray:
        episode_seed = int(self._seed_stream.integers(2**63)) if seed is None else seed
        self.state, obs = reset(self.config, episode_seed)
        return obs

    def step(self, action: np.ndarray | SlotAction) -> StepOutcome:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        self.state, outcome = step(self.state, action, self.config)
        return outcome

    @property
    def obs_dim(self) -> int:
        return self.config.obs_dim

    @property
    def action_dim(self) -> int:
        return self.config.action_dim


def replace_config(config: EnvConfig, **overrides: Any) -> EnvConfig:
    """Copy a config with some fields replaced (re-validated)."""
    return replace(config, **overrides)
