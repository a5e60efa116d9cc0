"""Experiment configuration: JSON file plus command-line overrides, validated up front.

Schema (every key optional; defaults shown)::

    {
      "model":    {"kind": "rank_one"},      # or {"kind": "polymer", "block": 2},
                                             #    {"kind": "matrix_valued", "fiber": [[..]]},
                                             #    {"kind": "alloy", "profile": {"0": 1.0, "1": 0.2}}
      "disorder": {"density": "uniform", "M": 4.0},
      "d": 1,
      "L": 128,                  # big-box half-width (wegner, minami, spectrum, gradcheck, ...)
      "ladder": [4, 8, 16, 32],  # ell ladder for wegner/minami, L ladder otherwise
      "E": -4.0, "Eprime": 4.0,
      "I": [-2.0, 2.0], "J": [-2.0, 2.0],
      "alpha": 0.5, "beta": 3.0, "q": 3.0, "C": 1.0, "K": null, "c": 2.0,
      "rank": null,              # override m_k
      "trials": 10000, "seed": 0, "workers": null,
      "strict": false, "out": "results"
    }
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .model_builder import DisorderSpec, ModelError, ModelSpec


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    model: dict = field(default_factory=lambda: {"kind": "rank_one"})
    disorder: dict = field(default_factory=lambda: {"density": "uniform", "M": 4.0})
    d: int = 1
    L: int = 128
    ladder: list = field(default_factory=lambda: [4, 8, 16, 32])
    E: float = -4.0
    Eprime: float = 4.0
    I: list = field(default_factory=lambda: [-2.0, 2.0])
    J: list = field(default_factory=lambda: [-2.0, 2.0])
    alpha: float = 0.5
    beta: float = 3.0
    q: float = 3.0
    C: float = 1.0
    K: float | None = None
    c: float = 2.0
    rank: int | None = None
    trials: int = 10000
    seed: int = 0
    workers: int | None = None
    strict: bool = False
    out: str = "results"

    @classmethod
    def load(cls, path: str | Path | None, overrides: dict[str, Any] | None = None) -> "ExperimentConfig":
        data: dict[str, Any] = {}
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(f"config file not found: {p}")
            try:
                data = json.loads(p.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"invalid JSON in {p}: {exc}") from exc
            if not isinstance(data, dict):
                raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def model_spec(self) -> ModelSpec:
        try:
            return ModelSpec.from_dict(self.model)
        except (ModelError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid model: {exc}") from exc

    def disorder_spec(self) -> DisorderSpec:
        try:
            return DisorderSpec(**self.disorder)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid disorder: {exc}") from exc

    def validate(self, command: str | None = None) -> None:
        """Check general ranges, then the preconditions of ``command``."""
        self.model_spec()
        self.disorder_spec()
        if self.d < 1:
            raise ConfigError(f"d = {self.d} < 1")
        if self.L < 1:
            raise ConfigError(f"L = {self.L} < 1")
        if self.trials < 1:
            raise ConfigError(f"trials = {self.trials} < 1")
        if self.workers is not None and self.workers < 1:
            raise ConfigError(f"workers = {self.workers} < 1")
        for name in ("I", "J"):
            iv = getattr(self, name)
            if len(iv) != 2 or iv[0] > iv[1]:
                raise ConfigError(f"{name} must be [lo, hi] with lo <= hi")
        if command in ("wegner", "minami", "decorrelate", "independence", "multiplicity"):
            lad = list(self.ladder)
            if len(lad) < 3 or any(b <= a for a, b in zip(lad, lad[1:])):
                raise ConfigError("ladder needs >= 3 strictly increasing sizes")
        if command in ("wegner", "minami") and max(self.ladder) > self.L:
            raise ConfigError(f"ell = {max(self.ladder)} > L = {self.L}")
        if command in ("decorrelate", "independence") and not 0 < self.alpha < 1:
            raise ConfigError(f"alpha = {self.alpha} not in (0, 1)")
        if command in ("decorrelate", "independence", "jacobian") and self.strict:
            if abs(self.E - self.Eprime) <= 4 * self.d:
                raise ConfigError(
                    f"|E-E'| = {abs(self.E - self.Eprime)} <= 4d = {4 * self.d}: outside the theorem's regime"
                )
        if command == "multiplicity" and self.q <= 2 * self.d:
            raise ConfigError(f"q = {self.q} <= 2d = {2 * self.d}: outside lemma hypothesis")
        if command == "alloy-check" and self.model_spec().kind != "alloy":
            raise ConfigError("alloy-check needs an alloy model")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)
