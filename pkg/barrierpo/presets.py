"""Load run defaults and network presets from presets.json5.

To add a config key or a network preset, edit presets.json5 only::

    from barrierpo.presets import load_presets

    load_presets().networks["toy"].policy_hidden
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any

import json5

_NETWORK_FIELDS = ("policy_hidden", "value_hidden", "cost_hidden")


@dataclass(frozen=True)
class NetworkPreset:
    policy_hidden: tuple[int, ...]
    value_hidden: tuple[int, ...]
    cost_hidden: tuple[int, ...]
    init_std: float


@dataclass(frozen=True)
class Presets:
    defaults: dict[str, Any]
    networks: dict[str, NetworkPreset]


def _validate_widths(name: str, field: str, value: object) -> tuple[int, ...]:
    if not isinstance(value, list) or not value:
        raise ValueError(f"Network preset {name!r} field {field!r} must be a non-empty list.")
    for width in value:
        if isinstance(width, bool) or not isinstance(width, int) or width < 1:
            raise ValueError(
                f"Network preset {name!r} field {field!r} must contain positive integers."
            )
    return tuple(value)


def _validate_presets_payload(payload: object) -> Presets:
    if not isinstance(payload, dict):
        raise ValueError("barrierpo presets payload must be a JSON object.")

    defaults = payload.get("defaults")
    if not isinstance(defaults, dict):
        raise ValueError("barrierpo presets section 'defaults' must be an object.")
    for key in defaults:
        if not isinstance(key, str):
            raise ValueError(f"barrierpo presets 'defaults' contains non-string key: {key!r}")

    networks = payload.get("networks")
    if not isinstance(networks, dict) or not networks:
        raise ValueError("barrierpo presets section 'networks' must be a non-empty object.")
    validated: dict[str, NetworkPreset] = {}
    for name, entry in networks.items():
        if not isinstance(entry, dict):
            raise ValueError(f"Network preset {name!r} must be an object.")
        widths = {field: _validate_widths(name, field, entry.get(field)) for field in _NETWORK_FIELDS}
        init_std = entry.get("init_std")
        if isinstance(init_std, bool) or not isinstance(init_std, int | float) or init_std <= 0:
            raise ValueError(f"Network preset {name!r} field 'init_std' must be a positive number.")
        validated[name] = NetworkPreset(init_std=float(init_std), **widths)

    preset = defaults.get("network.preset")
    if preset not in validated:
        raise ValueError(f"Default network preset {preset!r} is not defined under 'networks'.")
    return Presets(dict(defaults), validated)


@lru_cache(maxsize=1)
def load_presets() -> Presets:
    # In installed wheels, presets.json5 is bundled into the package directory.
    packaged = Path(__file__).with_name("presets.json5")
    if packaged.is_file():
        return _validate_presets_payload(json5.loads(packaged.read_text(encoding="utf-8")))

    # In editable/source checkouts, fall back to the repository-root file.
    source = Path(__file__).resolve().parents[1] / "presets.json5"
    if source.is_file():
        return _validate_presets_payload(json5.loads(source.read_text(encoding="utf-8")))

    raise FileNotFoundError("Could not locate presets.json5 for barrierpo.presets.")


__all__ = ["NetworkPreset", "Presets", "load_presets"]
