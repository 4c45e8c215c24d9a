"""UAV wireless-power / data-collection simulator with TD3 and a
diffusion-actor TD3 variant for age-of-information minimisation."""

__version__ = "0.1.0"

from .env import EnvConfig, EnvState, SlotAction, StepOutcome, UavAoiEnv

__all__ = [
    "EnvConfig",
    "EnvState",
    "SlotAction",
    "StepOutcome",
    "UavAoiEnv",
    "__version__",
]
