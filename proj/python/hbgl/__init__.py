# SPDX-License-Identifier: Apache-2.0
"""Hierarchy-guided label embeddings and level-wise decoding.

Configs are plain dicts in the same shape as the CLI's JSON configs.
"""

from __future__ import annotations

import json
from typing import Any

from ._hbgl import (
    Classifier as _Classifier,
    ConfigError,
    Error,
    Hierarchy,
    IndexError,
    NumericError,
    ParseError,
    ShapeError,
    ValidationError,
    __version__,
    packed_attention_mask,
    sha256_hex,
)
from . import _hbgl

__all__ = [
    "Classifier",
    "ConfigError",
    "Error",
    "Hierarchy",
    "IndexError",
    "NumericError",
    "ParseError",
    "ShapeError",
    "ValidationError",
    "__version__",
    "f1",
    "generate_synthetic",
    "packed_attention_mask",
    "preset",
    "run_experiment",
    "sha256_hex",
    "validate_config",
]


def preset(name: str = "default") -> dict[str, Any]:
    return json.loads(_hbgl.preset(name))


def validate_config(config: dict[str, Any]) -> dict[str, Any]:
    """Strict parse; returns the completed config or raises ConfigError."""
    return json.loads(_hbgl.validate_config(json.dumps(config)))


def generate_synthetic(config: dict[str, Any]) -> dict[str, Any]:
    return json.loads(_hbgl.generate_synthetic(json.dumps(config)))


def run_experiment(
    config: dict[str, Any],
    *,
    flat_baseline: bool = True,
    random_init: bool = True,
    check_invariants: bool = False,
) -> dict[str, Any]:
    return json.loads(
        _hbgl.run_experiment(json.dumps(config), flat_baseline, random_init, check_invariants)
    )


def f1(
    hierarchy: Hierarchy,
    pred: list[list[str]],
    gold: list[list[str]],
    *,
    observed_only: bool = False,
) -> dict[str, Any]:
    return json.loads(_hbgl.f1(hierarchy, pred, gold, observed_only))


class Classifier:
    """Trained encoder + label table with its vocabulary."""

    def __init__(self, impl: _Classifier):
        self._impl = impl

    @classmethod
    def train(cls, config: dict[str, Any]) -> "Classifier":
        return cls(_Classifier.train(json.dumps(config)))

    @classmethod
    def load(cls, path: str) -> "Classifier":
        return cls(_Classifier.load(str(path)))

    def save(self, path: str) -> None:
        self._impl.save(str(path))

    @property
    def hierarchy(self) -> Hierarchy:
        return self._impl.hierarchy

    def predict(self, text: str, threshold: float = 0.5, cached: bool = True) -> list[str]:
        return self._impl.predict(text, threshold, cached)
