"""Bounded mixed integer/float hyperparameter spaces and neighbourhood moves."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import numpy as np

INTEGER = "integer"
FLOAT = "float"

KEY_DECIMALS = 6


@dataclass(frozen=True)
class ParamSpec:
    """One tunable parameter with inclusive bounds.

    ``open_lower`` marks ranges such as ``(0, 1]``: values are kept strictly
    above ``lower`` by nudging to the next representable float.
    """

    name: str
    kind: str
    lower: float
    upper: float
    open_lower: bool = False

    def __post_init__(self):
        if self.kind not in (INTEGER, FLOAT):
            raise ValueError(f"{self.name}: unknown kind {self.kind!r}")
        if not self.lower < self.upper:
            raise ValueError(f"{self.name}: lower ({self.lower}) must be < upper ({self.upper})")
        if self.kind == INTEGER:
            if float(self.lower) != math.floor(self.lower) or float(self.upper) != math.floor(self.upper):
                raise ValueError(f"{self.name}: integer bounds must be whole numbers")
            if self.open_lower:
                raise ValueError(f"{self.name}: open lower bound is only meaningful for floats")

    @property
    def floor(self) -> float:
        if self.open_lower:
            return float(np.nextafter(self.lower, self.upper))
        return self.lower

    def clamp(self, value: float) -> float | int:
        if self.kind == INTEGER:
            return int(min(max(value, self.lower), self.upper))
        return float(min(max(value, self.floor), self.upper))

    def contains(self, value: float) -> bool:
        if self.kind == INTEGER and value != int(value):
            return False
        if self.open_lower:
            return self.lower < value <= self.upper
        return self.lower <= value <= self.upper

    def to_dict(self) -> dict[str, Any]:
        d = {"name": self.name, "kind": self.kind, "lower": self.lower, "upper": self.upper}
        if self.open_lower:
            d["open_lower"] = True
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ParamSpec":
        kind = d["kind"]
        lower, upper = d["lower"], d["upper"]
        if kind == INTEGER:
            if float(lower) != math.floor(lower) or float(upper) != math.floor(upper):
                raise ValueError(f"{d['name']}: integer bounds must be whole numbers")
            lower, upper = int(lower), int(upper)
        else:
            lower, upper = float(lower), float(upper)
        return cls(d["name"], kind, lower, upper, bool(d.get("open_lower", False)))


@dataclass(frozen=True)
class ParamSpace:
    specs: tuple[ParamSpec, ...]

    def __post_init__(self):
        if len(self.specs) < 1:
            raise ValueError("a parameter space needs at least one spec")
        names = [s.name for s in self.specs]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ValueError(f"duplicate parameter names: {dupes}")

    def __len__(self) -> int:
        return len(self.specs)

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.specs]

    def to_list(self) -> list[dict[str, Any]]:
        return [s.to_dict() for s in self.specs]

    @classmethod
    def from_list(cls, items: Iterable[dict[str, Any]]) -> "ParamSpace":
        return define_space([ParamSpec.from_dict(d) for d in items])


@dataclass(frozen=True)
class Solution:
    """A concrete assignment of values, aligned with ``ParamSpace.specs``."""

    values: tuple

    def as_dict(self, space: ParamSpace) -> dict[str, float | int]:
        return dict(zip(space.names, self.values))

    def __len__(self) -> int:
        return len(self.values)


def define_space(specs: Sequence[ParamSpec]) -> ParamSpace:
    if not specs:
        raise ValueError("specs must be non-empty")
    return ParamSpace(tuple(specs))


def default_space() -> ParamSpace:
    """The eight boosted-tree hyperparameters with their experimental ranges."""
    return define_space([
        ParamSpec("n_estimators", INTEGER, 1, 50),
        ParamSpec("max_depth", INTEGER, 1, 50),
        ParamSpec("max_delta_step", INTEGER, 1, 50),
        ParamSpec("n_parallel_trees", INTEGER, 1, 50),
        ParamSpec("learning_rate", FLOAT, 0.0, 1.0, open_lower=True),
        ParamSpec("l1", FLOAT, 0.0, 1.0, open_lower=True),
        ParamSpec("l2", FLOAT, 0.0, 1.0, open_lower=True),
        ParamSpec("gamma", FLOAT, 0.0, 50.0, open_lower=True),
    ])


def validate_solution(space: ParamSpace, s: Solution) -> None:
    if len(s.values) != len(space):
        raise ValueError(f"solution has {len(s.values)} values, space has {len(space)}")
    for spec, v in zip(space.specs, s.values):
        if not spec.contains(v):
            raise ValueError(f"{spec.name}={v!r} outside its bounds [{spec.lower}, {spec.upper}]")


def sample_initial(space: ParamSpace, rng: np.random.Generator) -> Solution:
    values = []
    for spec in space.specs:
        if spec.kind == INTEGER:
            values.append(int(rng.integers(spec.lower, spec.upper + 1)))
        else:
            values.append(spec.clamp(rng.uniform(spec.lower, spec.upper)))
    return Solution(tuple(values))


def perturb(space: ParamSpace, current: Solution, rng: np.random.Generator) -> Solution:
    """Move exactly one uniformly chosen coordinate.

    Floats take a standard-normal step scaled by a tenth of their range;
    integers step by +1 or -1. Both are clamped to bounds.
    """
    i = int(rng.integers(len(space)))
    spec = space.specs[i]
    if spec.kind == INTEGER:
        step = 1 if rng.random() < 0.5 else -1
        new = spec.clamp(current.values[i] + step)
    else:
        scale = (spec.upper - spec.lower) / 10.0
        new = spec.clamp(current.values[i] + rng.standard_normal() * scale)
    values = list(current.values)
    values[i] = new
    return Solution(tuple(values))


def solution_key(space: ParamSpace, s: Solution) -> tuple:
    return tuple(
        int(v) if spec.kind == INTEGER else round(float(v), KEY_DECIMALS)
        for spec, v in zip(space.specs, s.values)
    )
