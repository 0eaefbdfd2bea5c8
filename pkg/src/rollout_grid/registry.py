"""Environment registry: names accepted over INIT and by the CLI."""

from __future__ import annotations

from .config import env_config_from_dict
from .core import ScenarioSpec
from .errors import SpawnError
from .lander import LanderScenario
from .tracker import TrackerScenario

_FACTORIES = {
    "lander": LanderScenario,
    "tracker": TrackerScenario,
}


def env_names() -> tuple[str, ...]:
    return tuple(sorted(_FACTORIES))


def make_scenario(env: str, env_config: dict | None = None) -> ScenarioSpec:
    if env not in _FACTORIES:
        raise SpawnError(f"unknown environment {env!r}; known: {env_names()}")
    cfg = env_config_from_dict(env, env_config or {})
    return _FACTORIES[env](cfg).spec()


def scenario_dims(env: str, env_config: dict | None = None) -> tuple[int, int]:
    """(obs_dim, act_dim) for an environment without keeping the instance."""
    spec = make_scenario(env, env_config)
    return spec.obs_dim, spec.act_dim
