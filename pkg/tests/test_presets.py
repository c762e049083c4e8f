"""Tests for presets.json5 loading and validation."""

from __future__ import annotations

from typing import Any

import pytest

from barrierpo.presets import _validate_presets_payload, load_presets


def _payload(**networks: Any) -> dict[str, Any]:
    toy = {"policy_hidden": [4], "value_hidden": [4], "cost_hidden": [4], "init_std": 1.0}
    return {"defaults": {"network.preset": "toy"}, "networks": {"toy": toy, **networks}}


def test_bundled_presets_load() -> None:
    """The packaged presets define the toy and legged networks."""
    presets = load_presets()
    assert presets.defaults["network.preset"] == "toy"
    assert set(presets.networks) == {"toy", "legged"}
    assert presets.networks["legged"].init_std == 12.0


def test_minimal_payload() -> None:
    presets = _validate_presets_payload(_payload())
    assert presets.networks["toy"].policy_hidden == (4,)


@pytest.mark.parametrize(
    ("payload", "message"),
    [
        ([], "must be a JSON object"),
        ({"networks": {}}, "'defaults' must be an object"),
        ({"defaults": {}, "networks": {}}, "'networks' must be a non-empty object"),
        (_payload(wide={"policy_hidden": [], "value_hidden": [1], "cost_hidden": [1], "init_std": 1}), "non-empty list"),
        (_payload(wide={"policy_hidden": [0], "value_hidden": [1], "cost_hidden": [1], "init_std": 1}), "positive integers"),
        (_payload(wide={"policy_hidden": [1], "value_hidden": [1], "cost_hidden": [1], "init_std": 0}), "init_std"),
        ({"defaults": {"network.preset": "huge"}, "networks": _payload()["networks"]}, "'huge' is not defined"),
    ],
)
def test_invalid_payloads(payload: object, message: str) -> None:
    """Malformed preset files are rejected with a specific message."""
    with pytest.raises(ValueError, match=message):
        _validate_presets_payload(payload)
