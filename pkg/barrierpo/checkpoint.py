"""Trainer checkpoints: everything needed to continue a run bit for bit.

Layout (little-endian): magic ``BPOT``, ``<H`` version, ``<Q`` completed
iterations, then length-prefixed (``<Q``) sections in fixed order: config
JSON5 text, RNG states (JSON), policy, value net and cost critic blobs (see
``barrierpo.networks.encode_network``; the cost section is empty when the
run has no cost critic), optimizer states (JSON).
"""

from __future__ import annotations

import json
import logging
import struct
from pathlib import Path
from typing import Any

from barrierpo.config import RunConfig, parse_config
from barrierpo.critics import Adam
from barrierpo.exceptions import CheckpointError
from barrierpo.networks import (
    GaussianPolicy,
    MultiHeadCostValueNet,
    SeparateCostValueNets,
    ValueNet,
    decode_network,
    encode_network,
)
from barrierpo.trainer import Trainer

logger = logging.getLogger(__name__)

TRAINER_MAGIC = b"BPOT"
TRAINER_VERSION = 1
_SECTIONS = 6


def _adam_payload(adam: Adam | None) -> dict[str, Any] | None:
    if adam is None:
        return None
    state = adam.state_dict()
    state["m"] = state["m"].tolist()
    state["v"] = state["v"].tolist()
    return state


def encode_checkpoint(trainer: Trainer) -> bytes:
    rng_states = {
        "shuffle": trainer.shuffle_rng.bit_generator.state,
        "pool": trainer.pool.rng_states(),
    }
    optimizers = {"value": _adam_payload(trainer.value_opt), "cost": _adam_payload(trainer.cost_opt)}
    sections = [
        trainer.config.to_json5().encode("utf-8"),
        json.dumps(rng_states, sort_keys=True).encode("utf-8"),
        encode_network(trainer.policy),
        encode_network(trainer.value_net),
        b"" if trainer.cost_critic is None else encode_network(trainer.cost_critic),  # type: ignore[arg-type]
        json.dumps(optimizers, sort_keys=True).encode("utf-8"),
    ]
    parts = [TRAINER_MAGIC, struct.pack("<HQ", TRAINER_VERSION, trainer.iteration)]
    for section in sections:
        parts.append(struct.pack("<Q", len(section)))
        parts.append(section)
    return b"".join(parts)


def _split_sections(payload: bytes) -> tuple[int, list[bytes]]:
    if payload[:4] != TRAINER_MAGIC:
        raise CheckpointError("Checkpoint does not start with the expected magic bytes.")
    try:
        version, iteration = struct.unpack_from("<HQ", payload, 4)
        offset = 4 + struct.calcsize("<HQ")
        if version != TRAINER_VERSION:
            raise CheckpointError(f"Unsupported checkpoint version {version}.")
        sections: list[bytes] = []
        for _ in range(_SECTIONS):
            (size,) = struct.unpack_from("<Q", payload, offset)
            offset += 8
            if offset + size > len(payload):
                raise CheckpointError("Checkpoint is truncated.")
            sections.append(payload[offset : offset + size])
            offset += size
    except struct.error as exc:
        raise CheckpointError("Checkpoint is truncated.") from exc
    if offset != len(payload):
        raise CheckpointError("Checkpoint has trailing bytes.")
    return iteration, sections


def decode_checkpoint(payload: bytes, *, config: RunConfig | None = None) -> Trainer:
    """Rebuild a trainer; ``config`` may replace the stored one (e.g. a longer run)."""
    iteration, sections = _split_sections(payload)
    stored = parse_config(sections[0].decode("utf-8"), environ={})
    config = config or stored
    if config.with_overrides({"iterations": stored.iterations, "output_dir": stored.output_dir}) != stored:
        raise CheckpointError("Checkpoint was written by a run with a different configuration.")

    trainer = Trainer(config)
    rng_states = json.loads(sections[1].decode("utf-8"))
    trainer.shuffle_rng.bit_generator.state = rng_states["shuffle"]
    trainer.pool.restore_rng_states(rng_states["pool"])

    policy = decode_network(sections[2])
    value_net = decode_network(sections[3])
    if not isinstance(policy, GaussianPolicy) or not isinstance(value_net, ValueNet):
        raise CheckpointError("Checkpoint network sections are out of order.")
    trainer.policy = policy
    trainer.value_net = value_net
    if sections[4]:
        cost_critic = decode_network(sections[4])
        if not isinstance(cost_critic, MultiHeadCostValueNet | SeparateCostValueNets):
            raise CheckpointError("Checkpoint cost critic section holds another network kind.")
        trainer.cost_critic = cost_critic
    elif trainer.cost_critic is not None:
        raise CheckpointError("Checkpoint has no cost critic but the run needs one.")

    optimizers = json.loads(sections[5].decode("utf-8"))
    trainer.value_opt = Adam.from_state_dict(optimizers["value"])
    if optimizers["cost"] is not None:
        trainer.cost_opt = Adam.from_state_dict(optimizers["cost"])
    trainer.iteration = iteration
    return trainer


def write_checkpoint(path: Path, trainer: Trainer) -> None:
    """Write atomically: a partial file never replaces a good checkpoint."""
    path.parent.mkdir(parents=True, exist_ok=True)
    staging = path.with_suffix(path.suffix + ".tmp")
    staging.write_bytes(encode_checkpoint(trainer))
    staging.replace(path)


def read_checkpoint(path: Path, *, config: RunConfig | None = None) -> Trainer:
    """Read a checkpoint file; a run directory stands for its latest checkpoint."""
    if path.is_dir():
        latest = latest_checkpoint(path)
        if latest is None:
            raise CheckpointError(f"No checkpoints found under {str(path)!r}.")
        logger.info("Using latest checkpoint %s.", latest)
        path = latest
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"Cannot read checkpoint {str(path)!r}: {exc.strerror}.") from exc
    return decode_checkpoint(payload, config=config)


def checkpoint_path(directory: Path, iteration: int) -> Path:
    return directory / "checkpoints" / f"checkpoint_{iteration:06d}.bpo"


def latest_checkpoint(directory: Path) -> Path | None:
    candidates = sorted((directory / "checkpoints").glob("checkpoint_*.bpo"))
    return candidates[-1] if candidates else None


__all__ = [
    "checkpoint_path",
    "decode_checkpoint",
    "encode_checkpoint",
    "latest_checkpoint",
    "read_checkpoint",
    "write_checkpoint",
]
