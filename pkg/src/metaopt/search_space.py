"""Hyperparameter space definition, validation, sampling and trust regions.

Everything here is an immutable value type: operations return new objects and
never mutate their inputs, so spaces and configs are freely shareable.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .errors import DegenerateRegion, InvalidConfig

INTEGER_RANGE = "integer-range"
REAL_RANGE = "real-range"
CATEGORICAL = "categorical"

_KINDS = (INTEGER_RANGE, REAL_RANGE, CATEGORICAL)


@dataclass(frozen=True)
class ParamSpec:
    """One tunable parameter: an inclusive numeric range or a finite choice list."""

    name: str
    kind: str
    low: float | None = None
    high: float | None = None
    scale: str = "linear"
    choices: tuple = ()

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if not self.choices:
                raise ValueError(f"{self.name}: categorical needs choices")
            if len(set(self.choices)) != len(self.choices):
                raise ValueError(f"{self.name}: duplicate choices")
        else:
            if self.low is None or self.high is None:
                raise ValueError(f"{self.name}: range needs low and high")
            if self.low > self.high:
                raise ValueError(f"{self.name}: low {self.low} > high {self.high}")
            if self.scale not in ("linear", "log"):
                raise ValueError(f"{self.name}: bad scale {self.scale!r}")
            if self.scale == "log" and self.low <= 0:
                raise ValueError(f"{self.name}: log scale requires low > 0")

    def to_json_dict(self) -> dict:
        if self.kind == CATEGORICAL:
            return {"name": self.name, "kind": self.kind, "choices": list(self.choices)}
        out = {"name": self.name, "kind": self.kind, "low": self.low, "high": self.high}
        if self.kind == REAL_RANGE:
            out["scale"] = self.scale
        return out

    @staticmethod
    def from_json_dict(doc: dict) -> "ParamSpec":
        return ParamSpec(
            name=doc["name"],
            kind=doc["kind"],
            low=doc.get("low"),
            high=doc.get("high"),
            scale=doc.get("scale", "linear"),
            choices=tuple(doc.get("choices", ())),
        )


@dataclass(frozen=True)
class SearchSpace:
    params: tuple[ParamSpec, ...]

    def __post_init__(self):
        if not self.params:
            raise ValueError("search space is empty")
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        object.__setattr__(self, "params", tuple(self.params))

    def __getitem__(self, name: str) -> ParamSpec:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    def to_json_list(self) -> list[dict]:
        return [p.to_json_dict() for p in self.params]

    @staticmethod
    def from_json_list(docs: list[dict]) -> "SearchSpace":
        return SearchSpace(tuple(ParamSpec.from_json_dict(d) for d in docs))


@dataclass(frozen=True)
class HyperparamConfig:
    """A point in a search space: one value per parameter name."""

    assignments: dict

    def __getitem__(self, name: str):
        return self.assignments[name]

    def to_json_dict(self) -> dict:
        return dict(self.assignments)

    @staticmethod
    def from_json_dict(doc: dict) -> "HyperparamConfig":
        return HyperparamConfig(dict(doc))


@dataclass(frozen=True)
class Violation:
    param: str | None
    reason: str

    def __str__(self) -> str:
        return f"{self.param}: {self.reason}" if self.param else self.reason


@dataclass(frozen=True)
class ValidationVerdict:
    ok: bool
    violations: tuple[Violation, ...] = ()

    def __bool__(self) -> bool:
        return self.ok


def _is_int(value) -> bool:
    return isinstance(value, (int, np.integer)) and not isinstance(value, bool)


def _is_number(value) -> bool:
    return isinstance(value, (int, float, np.integer, np.floating)) and not isinstance(
        value, bool
    )


def validate_config(space: SearchSpace, config: HyperparamConfig) -> ValidationVerdict:
    """Check a configuration against a space; violations are data, not errors.

    Accepts iff every parameter is present exactly once, correctly typed and
    inside its bounds or choice list. Unknown parameters are violations too.
    """
    violations: list[Violation] = []
    assignments = config.assignments
    for extra in sorted(set(assignments) - set(space.names)):
        violations.append(Violation(extra, "unknown parameter"))
    for spec in space.params:
        if spec.name not in assignments:
            violations.append(Violation(spec.name, "missing parameter"))
            continue
        value = assignments[spec.name]
        if spec.kind == INTEGER_RANGE:
            if not _is_int(value):
                violations.append(Violation(spec.name, f"expected integer, got {value!r}"))
            elif not (spec.low <= value <= spec.high):
                violations.append(
                    Violation(spec.name, f"{value} outside [{spec.low}, {spec.high}]")
                )
        elif spec.kind == REAL_RANGE:
            if not _is_number(value):
                violations.append(Violation(spec.name, f"expected number, got {value!r}"))
            elif not (spec.low <= float(value) <= spec.high):
                violations.append(
                    Violation(spec.name, f"{value} outside [{spec.low}, {spec.high}]")
                )
        else:
            matched = any(
                type(value) is type(c) and value == c
                or (_is_number(value) and _is_number(c)
                    and not isinstance(value, bool) and value == c)
                for c in spec.choices
            )
            if not matched:
                violations.append(
                    Violation(spec.name, f"{value!r} not among {list(spec.choices)}")
                )
    return ValidationVerdict(ok=not violations, violations=tuple(violations))


def sample_uniform(space: SearchSpace, seed: int) -> HyperparamConfig:
    """Independent uniform draw per parameter; log ranges are uniform in log-domain."""
    rng = np.random.default_rng(seed)
    assignments = {}
    for spec in space.params:
        if spec.kind == INTEGER_RANGE:
            assignments[spec.name] = int(rng.integers(int(spec.low), int(spec.high) + 1))
        elif spec.kind == REAL_RANGE:
            if spec.scale == "log":
                assignments[spec.name] = float(
                    math.exp(rng.uniform(math.log(spec.low), math.log(spec.high)))
                )
            else:
                assignments[spec.name] = float(rng.uniform(spec.low, spec.high))
        else:
            assignments[spec.name] = spec.choices[int(rng.integers(0, len(spec.choices)))]
    return HyperparamConfig(assignments)


@dataclass(frozen=True)
class TrustRegion:
    """A shrunken neighborhood of the incumbent used to constrain proposals."""

    center: HyperparamConfig
    numeric_radius_fraction: float = 0.25
    categorical_policy: str = "any"

    def __post_init__(self):
        if not (0.0 < self.numeric_radius_fraction <= 1.0):
            raise ValueError("numeric_radius_fraction must be in (0, 1]")
        if self.categorical_policy not in ("center-only", "any"):
            raise ValueError(f"bad categorical_policy {self.categorical_policy!r}")


def apply_trust_region(space: SearchSpace, region: TrustRegion) -> SearchSpace:
    """Shrink numeric ranges to a band around the center, clipped to the space.

    The band is center +- r * original width (log-domain width for log-scaled
    parameters). Integer bounds round inward so the region never widens past
    the real-valued band. Categorical choices collapse to the center under the
    center-only policy.
    """
    verdict = validate_config(space, region.center)
    if not verdict:
        raise InvalidConfig(
            "trust-region center invalid: "
            + "; ".join(str(v) for v in verdict.violations)
        )
    r = region.numeric_radius_fraction
    out: list[ParamSpec] = []
    for spec in space.params:
        c = region.center[spec.name]
        if spec.kind == CATEGORICAL:
            if region.categorical_policy == "center-only":
                out.append(ParamSpec(spec.name, CATEGORICAL, choices=(c,)))
            else:
                out.append(spec)
            continue
        if spec.kind == REAL_RANGE and spec.scale == "log":
            width = math.log(spec.high) - math.log(spec.low)
            lo_log = math.log(c) - r * width
            hi_log = math.log(c) + r * width
            # keep the original floats when the band does not actually cut them
            lo = spec.low if lo_log <= math.log(spec.low) else math.exp(lo_log)
            hi = spec.high if hi_log >= math.log(spec.high) else math.exp(hi_log)
            out.append(ParamSpec(spec.name, REAL_RANGE, low=lo, high=hi, scale="log"))
            continue
        width = spec.high - spec.low
        lo = max(spec.low, c - r * width)
        hi = min(spec.high, c + r * width)
        if spec.kind == INTEGER_RANGE:
            lo_i, hi_i = math.ceil(lo), math.floor(hi)
            if lo_i > hi_i:
                raise DegenerateRegion(f"{spec.name}: empty integer range [{lo}, {hi}]")
            out.append(ParamSpec(spec.name, INTEGER_RANGE, low=lo_i, high=hi_i))
        else:
            if lo > hi:
                raise DegenerateRegion(f"{spec.name}: empty range [{lo}, {hi}]")
            out.append(ParamSpec(spec.name, REAL_RANGE, low=lo, high=hi, scale="linear"))
    return SearchSpace(tuple(out))


def default_bilstm_space() -> SearchSpace:
    """The eight-parameter forecaster space with the stock bounds.

    Ranges are the tightest simple intervals that admit every configuration
    the framework's own fixtures and defaults use.
    """
    return SearchSpace(
        (
            ParamSpec("lag", INTEGER_RANGE, low=3, high=96),
            ParamSpec("hidden_size", INTEGER_RANGE, low=8, high=256),
            ParamSpec("num_layers", INTEGER_RANGE, low=1, high=6),
            ParamSpec("dropout", REAL_RANGE, low=0.0, high=0.6, scale="linear"),
            ParamSpec("lr", REAL_RANGE, low=1e-5, high=1e-2, scale="log"),
            ParamSpec("batch_size", CATEGORICAL, choices=(16, 32, 64, 128, 256)),
            ParamSpec("epochs", INTEGER_RANGE, low=5, high=200),
            ParamSpec(
                "optimizer", CATEGORICAL,
                choices=("Adam", "AdamW", "Adamax", "RMSprop", "SGD"),
            ),
        )
    )
