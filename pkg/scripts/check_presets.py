"""Validate presets.json5: every network preset and environment must yield a run config."""

from __future__ import annotations

import sys
from pathlib import Path

import json5

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT))

from barrierpo.config import parse_config  # noqa: E402
from barrierpo.envs import ENV_REGISTRY  # noqa: E402
from barrierpo.exceptions import ConfigError  # noqa: E402
from barrierpo.presets import _validate_presets_payload  # noqa: E402

PRESETS_JSON5 = ROOT / "presets.json5"


def main() -> int:
    try:
        presets = _validate_presets_payload(json5.loads(PRESETS_JSON5.read_text(encoding="utf-8")))
    except (OSError, ValueError) as exc:
        print(f"❌ {PRESETS_JSON5.name}: {exc}", file=sys.stderr)
        return 1

    failures: list[str] = []
    for preset in sorted(presets.networks):
        for env_name in sorted(ENV_REGISTRY):
            text = f'{{"network.preset": "{preset}", "env.name": "{env_name}"}}'
            try:
                parse_config(text, environ={})
            except ConfigError as exc:
                failures.append(f"preset {preset!r} with env {env_name!r}: {exc}")

    if failures:
        print("❌ Presets that do not produce a valid run config:", file=sys.stderr)
        for failure in failures:
            print(f"  - {failure}", file=sys.stderr)
        return 1

    print(
        f"✅ {len(presets.defaults)} defaults and {len(presets.networks)} network presets "
        f"are valid for {len(ENV_REGISTRY)} environments"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
