"""Run configuration: JSON5 files of flat dotted keys, env overrides, and validation.

A config file may spell keys flat (``"barrier.t": 100``) or nested
(``barrier: {t: 100}``); both flatten to the same dotted key. Any
environment variable ``BARRIERPO_<KEY>`` overrides a key, with ``.`` written
as ``__`` (``BARRIERPO_BARRIER__T=10``).
"""

from __future__ import annotations

import logging
import os
import re
from collections.abc import Callable, Mapping
from dataclasses import asdict, dataclass, fields
from enum import Enum
from pathlib import Path
from typing import Any

import json5

from barrierpo.cmdp import CmdpSpec, validate_spec
from barrierpo.envs import default_spec
from barrierpo.exceptions import ConfigError
from barrierpo.networks import Activation
from barrierpo.optimizer import BarrierConfig
from barrierpo.presets import load_presets

logger = logging.getLogger(__name__)

ENV_PREFIX = "BARRIERPO_"
_CONSTRAINT_KEY = re.compile(r"^constraints\.([A-Za-z0-9_]+)\.(limit|enabled)$")
_ERROR_HINTS = {
    "Unknown environment": "env.name",
    "gamma": "cmdp.gamma",
    "episode_steps": "env.episode_steps",
    "dt=": "env.dt",
}


class RunMode(str, Enum):
    CONSTRAINED = "constrained"
    REWARD_ONLY = "reward_only"
    PENALTY = "penalty"


class CriticDesign(str, Enum):
    MULTI_HEAD = "multi_head"
    SEPARATE = "separate"


@dataclass(frozen=True)
class EnvConfig:
    name: str
    k_c: float
    effort_coef: float


@dataclass(frozen=True)
class NetworkConfig:
    preset: str
    policy_hidden: tuple[int, ...]
    value_hidden: tuple[int, ...]
    cost_hidden: tuple[int, ...]
    activation: Activation
    leaky_slope: float
    init_std: float
    critic_design: CriticDesign


@dataclass(frozen=True)
class RunConfig:
    """A fully resolved run: every default filled in, every invariant checked."""

    seed: int
    iterations: int
    mode: RunMode
    penalty_lambdas: tuple[float, ...]
    output_dir: str
    checkpoint_every: int
    env: EnvConfig
    cmdp: CmdpSpec
    gae_lambda: float
    batch_envs: int
    batch_steps: int
    barrier: BarrierConfig
    network: NetworkConfig

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir)

    def to_flat(self) -> dict[str, Any]:
        flat: dict[str, Any] = {
            "seed": self.seed,
            "iterations": self.iterations,
            "mode": self.mode.value,
            "penalty.lambdas": list(self.penalty_lambdas),
            "output_dir": self.output_dir,
            "checkpoint_every": self.checkpoint_every,
            "env.name": self.env.name,
            "env.k_c": self.env.k_c,
            "env.effort_coef": self.env.effort_coef,
            "env.episode_steps": self.cmdp.episode_steps,
            "env.dt": self.cmdp.dt,
            "cmdp.gamma": self.cmdp.gamma,
            "rollout.gae_lambda": self.gae_lambda,
            "batch.envs": self.batch_envs,
            "batch.steps": self.batch_steps,
        }
        for name, value in asdict(self.barrier).items():
            flat[f"barrier.{name}"] = value
        network = self.network
        flat.update(
            {
                "network.preset": network.preset,
                "network.policy_hidden": list(network.policy_hidden),
                "network.value_hidden": list(network.value_hidden),
                "network.cost_hidden": list(network.cost_hidden),
                "network.activation": network.activation.value,
                "network.leaky_slope": network.leaky_slope,
                "network.init_std": network.init_std,
                "network.critic_design": network.critic_design.value,
            }
        )
        for constraint in sorted(self.cmdp.constraints, key=lambda c: c.id):
            flat[f"constraints.{constraint.name}.limit"] = constraint.limit
            flat[f"constraints.{constraint.name}.enabled"] = constraint.enabled
        return flat

    def to_json5(self) -> str:
        lines = ["{"]
        for key, value in self.to_flat().items():
            lines.append(f"  {json5.dumps(key)}: {json5.dumps(value)},")
        lines.append("}")
        return "\n".join(lines) + "\n"

    def with_overrides(self, overrides: Mapping[str, Any]) -> RunConfig:
        """A copy with some flat keys replaced, re-validated."""
        values = self.to_flat()
        for key in overrides:
            _check_known(key, None, set(values))
        values.update(overrides)
        return config_from_flat(values)


def _as_int(key: str, value: object) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise TypeError(f"{key} must be an integer.")
    return value


def _as_float(key: str, value: object) -> float:
    if isinstance(value, bool) or not isinstance(value, int | float):
        raise TypeError(f"{key} must be a number.")
    return float(value)


def _as_str(key: str, value: object) -> str:
    if not isinstance(value, str):
        raise TypeError(f"{key} must be a string.")
    return value


def _as_bool(key: str, value: object) -> bool:
    if not isinstance(value, bool):
        raise TypeError(f"{key} must be true or false.")
    return value


def _as_widths(key: str, value: object) -> tuple[int, ...]:
    if not isinstance(value, list) or not value:
        raise TypeError(f"{key} must be a non-empty list of layer widths.")
    widths = tuple(_as_int(key, width) for width in value)
    if any(width < 1 for width in widths):
        raise ValueError(f"{key} widths must be positive.")
    return widths


def _as_floats(key: str, value: object) -> tuple[float, ...]:
    if not isinstance(value, list):
        raise TypeError(f"{key} must be a list of numbers.")
    return tuple(_as_float(key, item) for item in value)


def _optional(
    convert: Callable[[str, object], Any],
) -> Callable[[str, object], Any]:
    def wrapped(key: str, value: object) -> Any:
        return None if value is None else convert(key, value)

    return wrapped


_BARRIER_TYPES: dict[str, Callable[[str, object], Any]] = {
    f"barrier.{f.name}": (_as_int if f.type in ("int", int) else _as_float)
    for f in fields(BarrierConfig)
}

_KEY_TYPES: dict[str, Callable[[str, object], Any]] = {
    "seed": _as_int,
    "iterations": _as_int,
    "mode": _as_str,
    "penalty.lambdas": _as_floats,
    "output_dir": _as_str,
    "checkpoint_every": _as_int,
    "env.name": _as_str,
    "env.k_c": _as_float,
    "env.effort_coef": _as_float,
    "env.episode_steps": _optional(_as_int),
    "env.dt": _optional(_as_float),
    "cmdp.gamma": _as_float,
    "rollout.gae_lambda": _as_float,
    "batch.envs": _as_int,
    "batch.steps": _as_int,
    **_BARRIER_TYPES,
    "network.preset": _as_str,
    "network.policy_hidden": _optional(_as_widths),
    "network.value_hidden": _optional(_as_widths),
    "network.cost_hidden": _optional(_as_widths),
    "network.activation": _as_str,
    "network.leaky_slope": _as_float,
    "network.init_std": _optional(_as_float),
    "network.critic_design": _as_str,
}


def known_keys() -> frozenset[str]:
    return frozenset(_KEY_TYPES)


def is_known_key(key: str) -> bool:
    return key in _KEY_TYPES or _CONSTRAINT_KEY.match(key) is not None


def flatten_keys(payload: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    """Flatten nested objects into dotted keys; lists and scalars are leaves."""
    flat: dict[str, Any] = {}
    for key, value in payload.items():
        if not isinstance(key, str):
            raise ConfigError(f"Config keys must be strings, got {key!r}.")
        dotted = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(flatten_keys(value, f"{dotted}."))
        else:
            flat[dotted] = value
    return flat


def locate_key(text: str, key: str) -> int | None:
    """1-based line of the first spelling of ``key`` in ``text``, if any."""
    candidates = [key, key.rsplit(".", 1)[-1]]
    for candidate in candidates:
        pattern = re.compile(rf"""(?:^|[\s{{,])["']?{re.escape(candidate)}["']?\s*:""")
        for number, line in enumerate(text.splitlines(), start=1):
            if pattern.search(line):
                return number
    return None


def _check_known(key: str, text: str | None, extra: set[str] | None = None) -> None:
    if is_known_key(key) or (extra is not None and key in extra):
        return
    raise ConfigError(f"Unknown config key {key!r}.", line=None if text is None else locate_key(text, key))


def env_overrides(environ: Mapping[str, str]) -> dict[str, Any]:
    """Config values taken from ``BARRIERPO_*`` environment variables."""
    overrides: dict[str, Any] = {}
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX) :].lower().replace("__", ".")
        if not is_known_key(key):
            logger.debug("Ignoring %s: no config key %r.", name, key)
            continue
        raw = environ[name]
        try:
            overrides[key] = json5.loads(raw)
        except ValueError:
            overrides[key] = raw
    return overrides


def _resolve_network(values: Mapping[str, Any]) -> NetworkConfig:
    presets = load_presets()
    preset_name = values["network.preset"]
    preset = presets.networks.get(preset_name)
    if preset is None:
        known = ", ".join(sorted(presets.networks))
        raise ValueError(f"network.preset {preset_name!r} is not one of: {known}.")
    try:
        activation = Activation(values["network.activation"])
    except ValueError:
        raise ValueError(
            f"network.activation must be one of: {', '.join(a.value for a in Activation)}."
        ) from None
    try:
        design = CriticDesign(values["network.critic_design"])
    except ValueError:
        raise ValueError(
            f"network.critic_design must be one of: {', '.join(d.value for d in CriticDesign)}."
        ) from None
    init_std = preset.init_std if values["network.init_std"] is None else values["network.init_std"]
    if not init_std > 0:
        raise ValueError("network.init_std must be positive.")
    return NetworkConfig(
        preset=preset_name,
        policy_hidden=values["network.policy_hidden"] or preset.policy_hidden,
        value_hidden=values["network.value_hidden"] or preset.value_hidden,
        cost_hidden=values["network.cost_hidden"] or preset.cost_hidden,
        activation=activation,
        leaky_slope=values["network.leaky_slope"],
        init_std=init_std,
        critic_design=design,
    )


def _resolve_cmdp(values: Mapping[str, Any], constraint_keys: Mapping[str, Any]) -> CmdpSpec:
    spec = default_spec(
        values["env.name"],
        gamma=values["cmdp.gamma"],
        episode_steps=values["env.episode_steps"],
        dt=values["env.dt"],
    )
    limits: dict[str, float] = {}
    enabled: dict[str, bool] = {}
    for key, value in constraint_keys.items():
        match = _CONSTRAINT_KEY.match(key)
        assert match is not None
        name, attribute = match.groups()
        if attribute == "limit":
            limits[name] = _as_float(key, value)
        else:
            enabled[name] = _as_bool(key, value)
    spec = spec.with_overrides(limits=limits, enabled=enabled)
    problems = validate_spec(spec)
    if problems:
        raise ValueError("Invalid constraint setup: " + "; ".join(problems) + ".")
    return spec


def _key_for_error(message: str, keys: Mapping[str, Any]) -> str | None:
    for key in sorted(keys, key=len, reverse=True):
        if key in message:
            return key
    match = re.search(r"BarrierConfig\.(\w+)", message)
    if match:
        return f"barrier.{match.group(1)}"
    for word, key in _ERROR_HINTS.items():
        if word in message:
            return key
    match = re.search(r"constraint '([^']+)'", message) or re.search(r"names: ([\w, ]+)", message)
    if match:
        first = match.group(1).split(",")[0].strip()
        for key in keys:
            if key.startswith(f"constraints.{first}."):
                return key
    return None


def config_from_flat(flat: Mapping[str, Any], *, text: str | None = None) -> RunConfig:
    """Resolve and validate a flat key mapping layered over the preset defaults."""
    values: dict[str, Any] = dict(load_presets().defaults)
    constraint_keys: dict[str, Any] = {}
    for key, value in flat.items():
        _check_known(key, text)
        if _CONSTRAINT_KEY.match(key):
            constraint_keys[key] = value
        else:
            values[key] = value

    def fail(exc: Exception, key: str | None = None) -> ConfigError:
        key = key or _key_for_error(str(exc), {**values, **constraint_keys})
        line = None if text is None or key is None else locate_key(text, key)
        return ConfigError(str(exc), line=line)

    for key, convert in _KEY_TYPES.items():
        try:
            values[key] = convert(key, values.get(key))
        except (TypeError, ValueError) as exc:
            raise fail(exc, key) from exc

    try:
        mode = RunMode(values["mode"])
    except ValueError:
        raise fail(ValueError(f"mode must be one of: {', '.join(m.value for m in RunMode)}."), "mode") from None

    try:
        for key in ("iterations",):
            if values[key] < 0:
                raise ValueError(f"{key} must be zero or positive.")
        for key in ("checkpoint_every", "batch.envs", "batch.steps"):
            if values[key] < 1:
                raise ValueError(f"{key} must be at least 1.")
        if not 0.0 <= values["rollout.gae_lambda"] <= 1.0:
            raise ValueError("rollout.gae_lambda must be between 0 and 1, inclusive.")
        barrier = BarrierConfig(
            **{key.split(".", 1)[1]: values[key] for key in _BARRIER_TYPES}
        )
        network = _resolve_network(values)
        cmdp = _resolve_cmdp(values, constraint_keys)
        lambdas = values["penalty.lambdas"]
        if mode is RunMode.PENALTY and len(lambdas) != cmdp.num_constraints:
            raise ValueError(
                f"penalty.lambdas has {len(lambdas)} entries for {cmdp.num_constraints} "
                "enabled constraints."
            )
    except (TypeError, ValueError) as exc:
        raise fail(exc) from exc

    return RunConfig(
        seed=values["seed"],
        iterations=values["iterations"],
        mode=mode,
        penalty_lambdas=lambdas,
        output_dir=values["output_dir"],
        checkpoint_every=values["checkpoint_every"],
        env=EnvConfig(values["env.name"], values["env.k_c"], values["env.effort_coef"]),
        cmdp=cmdp,
        gae_lambda=values["rollout.gae_lambda"],
        batch_envs=values["batch.envs"],
        batch_steps=values["batch.steps"],
        barrier=barrier,
        network=network,
    )


def parse_config(text: str, *, environ: Mapping[str, str] | None = None) -> RunConfig:
    """Parse JSON5 config text; ``environ`` supplies ``BARRIERPO_*`` overrides."""
    try:
        payload = json5.loads(text) if text.strip() else {}
    except ValueError as exc:
        raise ConfigError(f"Invalid JSON5: {exc}") from exc
    if not isinstance(payload, Mapping):
        raise ConfigError("Config file must contain a JSON5 object.")
    flat = flatten_keys(payload)
    flat.update(env_overrides(environ or {}))
    return config_from_flat(flat, text=text)


def load_config(path: Path | str, *, environ: Mapping[str, str] | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"Cannot read config file {str(path)!r}: {exc.strerror}.") from exc
    return parse_config(text, environ=os.environ if environ is None else environ)


__all__ = [
    "ENV_PREFIX",
    "CriticDesign",
    "EnvConfig",
    "NetworkConfig",
    "RunConfig",
    "RunMode",
    "config_from_flat",
    "env_overrides",
    "flatten_keys",
    "is_known_key",
    "known_keys",
    "load_config",
    "locate_key",
    "parse_config",
]
