"""Checkpoint serialisation: a JSON manifest plus flat numeric arrays.

A checkpoint is a directory holding ``manifest.json`` (actor kind, env and
trainer configuration, variance schedule, code version) and ``arrays.npz``
with every network tensor stored as a named float array. Arrays round-trip
bit-exactly through ``npz``; the manifest alone is enough to rebuild the
networks before loading weights into them.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np
import torch

from . import __version__
from .env import EnvConfig
from .rl import TD3Trainer, TrainerConfig

FORMAT_VERSION = 1

_MODULES = ("actor", "critics", "target_actor", "target_critics")


class CheckpointError(RuntimeError):
    """Checkpoint directory missing, malformed or dimensionally incompatible."""


def save_checkpoint(directory: str | Path, trainer: TD3Trainer,
                    env_config: EnvConfig,
                    extra: dict[str, Any] | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays: dict[str, np.ndarray] = {}
    for module_name in _MODULES:
        module = getattr(trainer, module_name)
        for key, tensor in module.state_dict().items():
            arrays[f"{module_name}.{key}"] = tensor.detach().numpy()
    manifest: dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "code_version": __version__,
        "actor_kind": trainer.actor_kind,
        "force_no_charge": trainer.force_no_charge,
        "env_config": env_config.to_dict(),
        "trainer_config": trainer.config.to_dict(),
        "array_names": sorted(arrays),
    }
    if trainer.actor_kind == "diffusion":
        manifest["schedule"] = trainer.actor.schedule.to_dict()
    if extra:
        manifest.update(extra)
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    np.savez(directory / "arrays.npz", **arrays)
    return directory


def load_checkpoint(directory: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    arrays_path = directory / "arrays.npz"
    if not manifest_path.exists() or not arrays_path.exists():
        raise CheckpointError(f"{directory} is not a checkpoint directory")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format {manifest.get('format_version')!r}")
    with np.load(arrays_path) as data:
        arrays = {name: data[name] for name in data.files}
    missing = set(manifest.get("array_names", [])) - set(arrays)
    if missing:
        raise CheckpointError(f"checkpoint arrays missing: {sorted(missing)}")
    return manifest, arrays


def restore_trainer(directory: str | Path) -> tuple[TD3Trainer, EnvConfig]:
    """Rebuild a trainer (networks + weights) from a checkpoint directory."""
    manifest, arrays = load_checkpoint(directory)
    env_config = EnvConfig.from_dict(manifest["env_config"])
    trainer_config = TrainerConfig.from_dict(manifest["trainer_config"])
    trainer = TD3Trainer(env_config.obs_dim, env_config.action_dim,
                         trainer_config, actor_kind=manifest["actor_kind"],
                         force_no_charge=manifest["force_no_charge"])
    for module_name in _MODULES:
        module = getattr(trainer, module_name)
        state = {}
        prefix = f"{module_name}."
        for key, value in arrays.items():
            if key.startswith(prefix):
                state[key[len(prefix):]] = torch.from_numpy(value.copy())
        try:
            module.load_state_dict(state)
        except RuntimeError as exc:
            raise CheckpointError(f"checkpoint does not fit {module_name}: {exc}")
    return trainer, env_config
