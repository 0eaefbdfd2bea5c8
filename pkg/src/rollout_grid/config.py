"""Run configuration: strict JSON parsing into typed dataclasses.

The schema is closed: unknown keys are rejected (with a close-match
suggestion, catching the classic ``n_envs`` typo before a long experiment),
missing keys fall back to defaults, and every value is type- and
range-checked. ``config_to_dict`` echoes a fully-defaulted document for the
run manifest, and parsing that echo yields the identical config.
"""

from __future__ import annotations

import dataclasses
import difflib
import json
import typing

from .cem import CemConfig
from .errors import ParseError, ValidationError
from .lander import LanderEnvConfig
from .tpe import TpeConfig
from .tracker import TrackerEnvConfig

MODES = ("throughput", "bo", "cem")
ENVS = ("lander", "tracker")
TRANSPORTS = ("in-process", "socket")
PAD_MODES = ("busy", "sleep")


@dataclasses.dataclass(frozen=True)
class ThroughputConfig:
    steps: int = 200
    sweep: tuple[int, ...] = ()  # extra n_env values to measure after cfg.n_env
    repeats: int = 1


@dataclasses.dataclass(frozen=True)
class BoConfig:
    n_trials: int = 60
    batch: int = 0  # 0 means "use n_env"
    tpe: TpeConfig = dataclasses.field(default_factory=TpeConfig)


@dataclasses.dataclass(frozen=True)
class RunConfig:
    mode: str
    env: str
    n_env: int = 1
    n_s: int = 1
    seed: int = 0
    transport: str = "in-process"
    output_dir: str = "runs"
    # Worker-side instrumentation: per-substep padding emulating a heavier
    # simulator (busy = spin the CPU, sleep = block), and a random pre-reply
    # delay used to stress the barrier.
    pad_ms: float = 0.0
    pad_mode: str = "sleep"
    step_delay_max_ms: float = 0.0
    lander: LanderEnvConfig = dataclasses.field(default_factory=LanderEnvConfig)
    tracker: TrackerEnvConfig = dataclasses.field(default_factory=TrackerEnvConfig)
    throughput: ThroughputConfig = dataclasses.field(default_factory=ThroughputConfig)
    bo: BoConfig = dataclasses.field(default_factory=BoConfig)
    cem: CemConfig = dataclasses.field(default_factory=CemConfig)

    def env_config(self) -> LanderEnvConfig | TrackerEnvConfig:
        return self.lander if self.env == "lander" else self.tracker


def _check(condition: bool, message: str) -> None:
    if not condition:
        raise ValidationError(message)


def _validate(cfg: RunConfig) -> RunConfig:
    _check(cfg.mode in MODES, f"mode must be one of {MODES}, got {cfg.mode!r}")
    _check(cfg.env in ENVS, f"env must be one of {ENVS}, got {cfg.env!r}")
    _check(cfg.mode != "bo" or cfg.env == "lander", "bo mode optimizes the lander env")
    _check(cfg.mode != "cem" or cfg.env == "tracker", "cem mode trains on the tracker env")
    _check(cfg.n_env >= 1, "n_env must be >= 1")
    _check(cfg.n_s >= 1, "n_s must be >= 1")
    _check(cfg.transport in TRANSPORTS, f"transport must be one of {TRANSPORTS}, got {cfg.transport!r}")
    _check(cfg.pad_ms >= 0, "pad_ms must be >= 0")
    _check(cfg.pad_mode in PAD_MODES, f"pad_mode must be one of {PAD_MODES}, got {cfg.pad_mode!r}")
    _check(cfg.step_delay_max_ms >= 0, "step_delay_max_ms must be >= 0")
    _check(cfg.throughput.steps >= 1, "throughput.steps must be >= 1")
    _check(cfg.throughput.repeats >= 1, "throughput.repeats must be >= 1")
    _check(all(w >= 1 for w in cfg.throughput.sweep), "throughput.sweep entries must be >= 1")
    _check(cfg.bo.n_trials >= 1, "bo.n_trials must be >= 1")
    _check(cfg.bo.batch >= 0, "bo.batch must be >= 0 (0 selects n_env)")
    if cfg.bo.batch:
        _check(cfg.bo.batch <= cfg.n_env, "bo.batch must not exceed n_env")
    for section, obj in (("bo.tpe", cfg.bo.tpe), ("cem", cfg.cem),
                         ("lander", cfg.lander), ("tracker", cfg.tracker)):
        try:
            obj.validate()
        except Exception as exc:
            raise ValidationError(f"{section}: {exc}") from exc
    return cfg


def _coerce(value, ftype, path: str):
    origin = typing.get_origin(ftype)
    if dataclasses.is_dataclass(ftype):
        if not isinstance(value, dict):
            raise ValidationError(f"{path}: expected an object")
        return _build(ftype, value, path)
    if ftype is bool:
        if not isinstance(value, bool):
            raise ValidationError(f"{path}: expected a boolean")
        return value
    if ftype is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(f"{path}: expected an integer")
        return value
    if ftype is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"{path}: expected a number")
        return float(value)
    if ftype is str:
        if not isinstance(value, str):
            raise ValidationError(f"{path}: expected a string")
        return value
    if origin is tuple:
        args = typing.get_args(ftype)
        if not isinstance(value, list):
            raise ValidationError(f"{path}: expected an array")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ValidationError(f"{path}: expected exactly {len(args)} entries")
        return tuple(_coerce(v, t, f"{path}[{i}]") for i, (v, t) in enumerate(zip(value, args)))
    raise ValidationError(f"{path}: unsupported field type {ftype!r}")


def _build(dc_type, d: dict, path: str):
    hints = typing.get_type_hints(dc_type)
    fields = {f.name: f for f in dataclasses.fields(dc_type)}
    unknown = set(d) - set(fields)
    if unknown:
        key = sorted(unknown)[0]
        hint = difflib.get_close_matches(key, fields, n=1)
        suggestion = f"; did you mean {hint[0]!r}?" if hint else ""
        where = f"{path}.{key}" if path else key
        raise ParseError(f"unknown key {where!r}{suggestion}")
    kwargs = {}
    for name, f in fields.items():
        if name in d:
            kwargs[name] = _coerce(d[name], hints[name], f"{path}.{name}" if path else name)
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            where = f"{path}.{name}" if path else name
            raise ParseError(f"missing required key {where!r}")
    return dc_type(**kwargs)


def config_from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ParseError("configuration document must be a JSON object")
    return _validate(_build(RunConfig, d, ""))


def parse_config(text: str) -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return config_from_dict(raw)


def _to_jsonable(value):
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: _to_jsonable(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, tuple):
        return [_to_jsonable(v) for v in value]
    return value


def config_to_dict(cfg: RunConfig) -> dict:
    """Fully-defaulted echo of the configuration, reparseable byte-for-byte."""
    return _to_jsonable(cfg)


def env_config_from_dict(env: str, d: dict) -> LanderEnvConfig | TrackerEnvConfig:
    """Strictly parse one environment section (as shipped in an INIT frame)."""
    if env == "lander":
        cfg = _build(LanderEnvConfig, d, "lander")
    elif env == "tracker":
        cfg = _build(TrackerEnvConfig, d, "tracker")
    else:
        raise ValidationError(f"env must be one of {ENVS}, got {env!r}")
    try:
        cfg.validate()
    except Exception as exc:
        raise ValidationError(f"{env}: {exc}") from exc
    return cfg


def env_config_to_dict(cfg: LanderEnvConfig | TrackerEnvConfig) -> dict:
    return _to_jsonable(cfg)
