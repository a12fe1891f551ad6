"""Recourse domain types: actions, feasibility, uncertainty sets and costs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

FREE, INCREASE, DECREASE = "free", "increase", "decrease"
_DIRECTION_ALIASES = {
    "free": FREE,
    "increase": INCREASE,
    "increase-only": INCREASE,
    "decrease": DECREASE,
    "decrease-only": DECREASE,
}


class NotFound:
    """Sentinel returned when no (robust) recourse action exists or was found."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NotFound"

    def __bool__(self):
        return False


NOT_FOUND = NotFound()


@dataclass(frozen=True)
class RecourseAction:
    """``do(X_I = x_I + theta)``; ``theta`` has one entry per intervened feature."""

    intervened: tuple
    theta: np.ndarray
    info: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        idx = tuple(int(i) for i in self.intervened)
        theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        if len(idx) != theta.size:
            raise ValueError(f"theta has {theta.size} entries for {len(idx)} intervened features")
        if len(set(idx)) != len(idx):
            raise ValueError("duplicate intervened features")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta must be finite")
        object.__setattr__(self, "intervened", idx)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_full(cls, intervened: Sequence[int], theta_full) -> "RecourseAction":
        theta_full = np.asarray(theta_full, dtype=np.float64)
        idx = tuple(int(i) for i in intervened)
        return cls(idx, theta_full[list(idx)] if idx else np.zeros(0))

    def full_theta(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        if self.intervened:
            out[list(self.intervened)] = self.theta
        return out

    @property
    def cost(self) -> float:
        return float(np.abs(self.theta).sum())


@dataclass(frozen=True)
class FeatureConstraint:
    name: str
    actionable: bool = True
    direction: str = FREE
    lower: float = -np.inf
    upper: float = np.inf

    def __post_init__(self):
        d = _DIRECTION_ALIASES.get(str(self.direction).lower())
        if d is None:
            raise ValueError(f"feature {self.name!r}: unknown direction {self.direction!r}")
        object.__setattr__(self, "direction", d)
        lo = -np.inf if self.lower is None else float(self.lower)
        hi = np.inf if self.upper is None else float(self.upper)
        if lo > hi:
            raise ValueError(f"feature {self.name!r}: lower bound {lo} exceeds upper bound {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)


@dataclass(frozen=True)
class FeasibilitySpec:
    """Per-feature actionability, direction and box bounds on post-action values.

    The admissible set for ``theta_i`` is an interval containing 0, so any
    feasible action stays feasible when scaled by ``t`` in (0, 1).
    """

    features: tuple

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))

    @property
    def n(self) -> int:
        return len(self.features)

    @property
    def names(self):
        return [f.name for f in self.features]

    @property
    def actionable(self) -> np.ndarray:
        return np.array([f.actionable for f in self.features], dtype=bool)

    @property
    def mask(self) -> np.ndarray:
        return self.actionable.astype(np.float64)

    @classmethod
    def all_free(cls, n: int, names: Sequence[str] | None = None) -> "FeasibilitySpec":
        names = names or [f"x{i + 1}" for i in range(n)]
        return cls(tuple(FeatureConstraint(nm) for nm in names))

    @classmethod
    def from_mask(cls, mask, names: Sequence[str] | None = None) -> "FeasibilitySpec":
        mask = np.asarray(mask, dtype=bool)
        names = names or [f"x{i + 1}" for i in range(mask.size)]
        return cls(tuple(FeatureConstraint(nm, bool(m)) for nm, m in zip(names, mask)))

    def theta_bounds(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Interval ``[lo, hi]`` for each ``theta_i`` at individual ``x``.

        Unactionable features get ``[0, 0]``.  A bound already violated by
        ``x`` is relaxed to 0 so that the null action always stays feasible.
        """
        x = np.asarray(x, dtype=np.float64)
        lo = np.empty(self.n)
        hi = np.empty(self.n)
        for i, f in enumerate(self.features):
            if not f.actionable:
                lo[i] = hi[i] = 0.0
                continue
            a = min(0.0, f.lower - x[i])
            b = max(0.0, f.upper - x[i])
            if f.direction == INCREASE:
                a = 0.0
            elif f.direction == DECREASE:
                b = 0.0
            lo[i], hi[i] = a, b
        return lo, hi

    def project(self, x, theta_full):
        lo, hi = self.theta_bounds(x)
        return np.clip(theta_full, lo, hi)

    def is_feasible(self, x, theta_full, tol: float = 0.0) -> bool:
        lo, hi = self.theta_bounds(x)
        t = np.asarray(theta_full, dtype=np.float64)
        return bool(np.all(t >= lo - tol) and np.all(t <= hi + tol))

    def to_records(self):
        def enc(v):
            return None if not np.isfinite(v) else float(v)

        return [
            {"name": f.name, "actionable": f.actionable, "direction": f.direction,
             "min": enc(f.lower), "max": enc(f.upper)}
            for f in self.features
        ]

    @classmethod
    def from_records(cls, records) -> "FeasibilitySpec":
        return cls(tuple(
            FeatureConstraint(r["name"], bool(r.get("actionable", True)), r.get("direction", FREE),
                              r.get("min"), r.get("max"))
            for r in records
        ))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_records(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "FeasibilitySpec":
        with open(path) as fh:
            return cls.from_records(json.load(fh))

    def standardized(self, mean, std) -> "FeasibilitySpec":
        """Express the box bounds in standardized units."""
        out = []
        for f, m, s in zip(self.features, mean, std):
            out.append(FeatureConstraint(f.name, f.actionable, f.direction,
                                         (f.lower - m) / s, (f.upper - m) / s))
        return FeasibilitySpec(tuple(out))


@dataclass(frozen=True)
class UncertaintySpec:
    """L2 ball of radius ``epsilon`` over additive interventions."""

    epsilon: float = 0.0
    norm: str = "l2"

    def __post_init__(self):
        if self.norm.lower() != "l2":
            raise ValueError(f"unsupported uncertainty norm {self.norm!r}")
        if not (self.epsilon >= 0 and np.isfinite(self.epsilon)):
            raise ValueError("epsilon must be a finite nonnegative number")
        object.__setattr__(self, "epsilon", float(self.epsilon))

    def project(self, delta):
        """Radial projection of (a batch of) ``delta`` onto the ball."""
        delta = np.asarray(delta, dtype=np.float64)
        r = np.linalg.norm(delta, axis=-1, keepdims=True)
        scale = np.where(r > self.epsilon, self.epsilon / np.where(r > 0, r, 1.0), 1.0)
        return delta * scale

    def dual_norm(self, v) -> float:
        return float(np.linalg.norm(v))


@dataclass(frozen=True)
class CostFn:
    """Cost of an action as a (weighted) p-norm of ``theta``; default plain L1."""

    p: float = 1.0
    weights: tuple | None = None

    def __call__(self, theta) -> float:
        t = np.abs(np.asarray(theta, dtype=np.float64))
        if self.weights is not None:
            t = t * np.asarray(self.weights)
        if self.p == 1.0:
            return float(t.sum())
        return float((t ** self.p).sum() ** (1.0 / self.p))

    @property
    def is_l1(self) -> bool:
        return self.p == 1.0
