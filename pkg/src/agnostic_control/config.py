"""Experiment configuration shared by the simulator, harness and CLI."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidArgument


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce a Monte Carlo run.

    ``dt``, ``q0_star`` and ``q_rare`` default to values derived from the
    other fields when left as ``None``.
    """

    T: float = 1.0
    q0: float = 1.0
    dt: float | None = None
    n_paths: int = 10_000
    root_seed: int = 0
    eps: float = 0.05
    eps0: float = 0.05
    A: float = 40.0
    A1: float = 20.0
    c0: float = 0.1
    q_big: float = 25.0
    q0_star: float | None = None
    q_rare: float | None = None
    C0: float = 3.0
    m0: int = 1
    gamma: float = 1.0
    workers: int = 1
    chunk_size: int = field(default=4096, compare=False)

    def __post_init__(self):
        if self.dt is None:
            object.__setattr__(self, "dt", 1e-3 * self.T)
        if self.q0_star is None:
            object.__setattr__(self, "q0_star", max(4.0, 2.5 * abs(self.q0)))
        if self.q_rare is None:
            object.__setattr__(self, "q_rare", 4.0 * abs(self.q0) if self.q0 else 4.0)
        self.validate()

    def validate(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise InvalidArgument(f"T must be positive, got {self.T}")
        if not self.dt > 0:
            raise InvalidArgument(f"dt must be positive, got {self.dt}")
        if self.n_paths < 1:
            raise InvalidArgument(f"n_paths must be >= 1, got {self.n_paths}")
        if not 0 < self.eps < 1:
            raise InvalidArgument(f"eps must lie in (0, 1), got {self.eps}")
        if not 0 < self.eps0 < 1:
            raise InvalidArgument(f"eps0 must lie in (0, 1), got {self.eps0}")
        if not self.gamma > 0:
            raise InvalidArgument(f"gamma must be positive, got {self.gamma}")
        if not self.q0_star > max(1.0, 2 * abs(self.q0)):
            raise InvalidArgument(
                f"q0_star must exceed max(1, 2|q0|) = {max(1.0, 2 * abs(self.q0))}, "
                f"got {self.q0_star}"
            )
        if self.A <= 0 or self.A1 <= 0:
            raise InvalidArgument("A and A1 must be positive")
        if self.workers < 1:
            raise InvalidArgument("workers must be >= 1")

    @property
    def n_steps(self) -> int:
        return steps_for(self.T, self.dt)

    def replace(self, **changes) -> "ExperimentConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        # derived defaults must be recomputed when their inputs move
        if "T" in changes and "dt" not in changes:
            changes.setdefault("dt", 1e-3 * changes["T"])
        if "q0" in changes:
            changes.setdefault("q0_star", None)
            changes.setdefault("q_rare", None)
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidArgument(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def steps_for(horizon: float, dt: float) -> int:
    """Number of grid steps covering ``horizon``, tolerant to float noise."""
    return max(1, math.ceil(horizon / dt - 1e-9))
