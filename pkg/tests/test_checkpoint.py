"""Tests for trainer checkpoints."""

from __future__ import annotations

from collections.abc import Callable
from pathlib import Path

import numpy as np
import pytest

from barrierpo.checkpoint import (
    checkpoint_path,
    decode_checkpoint,
    encode_checkpoint,
    latest_checkpoint,
    read_checkpoint,
    write_checkpoint,
)
from barrierpo.config import RunConfig
from barrierpo.exceptions import CheckpointError
from barrierpo.trainer import Trainer

MakeConfig = Callable[..., RunConfig]


class TestResume:
    """A restored trainer continues exactly like the unbroken run."""

    def test_resume_matches_unbroken_run(self, tiny_config: RunConfig) -> None:
        """Rewards and every network match the run that never stopped."""
        unbroken = Trainer(tiny_config)
        expected = unbroken.run()

        first = Trainer(tiny_config)
        head = first.run(1)
        restored = decode_checkpoint(encode_checkpoint(first))
        assert restored.iteration == 1
        tail = restored.run()

        resumed = head + tail
        assert [r.mean_reward for r in resumed] == [r.mean_reward for r in expected]
        np.testing.assert_array_equal(restored.policy.flat(), unbroken.policy.flat())
        np.testing.assert_array_equal(restored.value_net.flat(), unbroken.value_net.flat())
        assert restored.cost_critic is not None and unbroken.cost_critic is not None
        np.testing.assert_array_equal(restored.cost_critic.flat(), unbroken.cost_critic.flat())

    def test_resume_without_cost_critic(self, make_config: MakeConfig) -> None:
        """Runs with no critic-backed constraint store an empty critic section."""
        config = make_config(constraints__speed__enabled=False, constraints__effort__enabled=False)
        trainer = Trainer(config)
        trainer.run(1)
        restored = decode_checkpoint(encode_checkpoint(trainer))
        assert restored.cost_critic is None
        np.testing.assert_array_equal(restored.policy.flat(), trainer.policy.flat())

    def test_longer_run_may_resume(self, tiny_config: RunConfig) -> None:
        """Only the iteration count differs, so the checkpoint is accepted."""
        trainer = Trainer(tiny_config)
        trainer.run(1)
        longer = tiny_config.with_overrides({"iterations": 5})
        restored = decode_checkpoint(encode_checkpoint(trainer), config=longer)
        assert len(restored.run()) == 4

    def test_changed_config_is_rejected(self, tiny_config: RunConfig) -> None:
        """Any other config change makes the checkpoint unusable."""
        payload = encode_checkpoint(Trainer(tiny_config))
        with pytest.raises(CheckpointError, match="different configuration"):
            decode_checkpoint(payload, config=tiny_config.with_overrides({"barrier.t": 10.0}))


class TestCorruptCheckpoints:
    def test_bad_magic(self, tiny_config: RunConfig) -> None:
        """Payloads from another format are refused."""
        payload = encode_checkpoint(Trainer(tiny_config))
        with pytest.raises(CheckpointError, match="magic"):
            decode_checkpoint(b"XXXX" + payload[4:])

    def test_truncated(self, tiny_config: RunConfig) -> None:
        """A cut-off section is reported as truncation."""
        payload = encode_checkpoint(Trainer(tiny_config))
        with pytest.raises(CheckpointError, match="truncated"):
            decode_checkpoint(payload[:-5])

    def test_trailing_bytes(self, tiny_config: RunConfig) -> None:
        payload = encode_checkpoint(Trainer(tiny_config))
        with pytest.raises(CheckpointError, match="trailing"):
            decode_checkpoint(payload + b"\x00")

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(CheckpointError, match="Cannot read checkpoint"):
            read_checkpoint(tmp_path / "nope.bpo")


class TestCheckpointFiles:
    def test_write_then_read(self, tiny_config: RunConfig, tmp_path: Path) -> None:
        """Writes go through a temporary file that is renamed into place."""
        trainer = Trainer(tiny_config)
        trainer.run(2)
        path = checkpoint_path(tmp_path, trainer.iteration)
        write_checkpoint(path, trainer)
        assert path.name == "checkpoint_000002.bpo"
        assert not path.with_suffix(".bpo.tmp").exists()
        assert read_checkpoint(path).iteration == 2

    def test_latest_checkpoint(self, tiny_config: RunConfig, tmp_path: Path) -> None:
        """Checkpoints sort by iteration, not by write order."""
        assert latest_checkpoint(tmp_path) is None
        trainer = Trainer(tiny_config)
        for iteration in (2, 10, 4):
            write_checkpoint(checkpoint_path(tmp_path, iteration), trainer)
        latest = latest_checkpoint(tmp_path)
        assert latest is not None
        assert latest.name == "checkpoint_000010.bpo"

    def test_run_directory_reads_latest(self, tiny_config: RunConfig, tmp_path: Path) -> None:
        """A directory argument resolves to its newest checkpoint."""
        trainer = Trainer(tiny_config)
        write_checkpoint(checkpoint_path(tmp_path, 0), trainer)
        trainer.run(2)
        write_checkpoint(checkpoint_path(tmp_path, 2), trainer)
        assert read_checkpoint(tmp_path).iteration == 2

    def test_run_directory_without_checkpoints(self, tmp_path: Path) -> None:
        """An empty run directory is a checkpoint error."""
        with pytest.raises(CheckpointError, match="No checkpoints found"):
            read_checkpoint(tmp_path)
