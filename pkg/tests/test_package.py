"""Tests for the package's lazy public exports."""

from __future__ import annotations

import pytest

import barrierpo


def test_every_public_name_resolves() -> None:
    """Every name in __all__ imports lazily."""
    for name in barrierpo.__all__:
        assert getattr(barrierpo, name) is not None


def test_exports_come_from_their_modules() -> None:
    from barrierpo.trainer import Trainer

    assert barrierpo.Trainer is Trainer


def test_unknown_attribute() -> None:
    """Unknown names raise AttributeError."""
    with pytest.raises(AttributeError, match="has no attribute 'Solver'"):
        _ = barrierpo.Solver  # type: ignore[attr-defined]


def test_dir_lists_exports() -> None:
    assert set(barrierpo.__all__) <= set(dir(barrierpo))


def test_version_is_a_string() -> None:
    assert isinstance(barrierpo.__version__, str)
