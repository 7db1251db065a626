"""Scaled three-species reaction model with one quadratic nonlinearity.

    x' = k x - x y
    y' = k3 (z - y)
    z' = k5 (x - z)

Everything downstream takes a :class:`Params` triple and states given as
length-3 sequences or arrays. 3x3 matrices are plain ``numpy`` arrays.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "OriginalParams",
    "Params",
    "State",
    "Regime",
    "scale_from_original",
    "original_vector_field",
    "vector_field",
    "jacobian",
    "second_additive_compound",
    "equilibria",
    "interior_equilibrium",
    "classify_regime",
    "hopf_tolerance",
    "jacobian_sign_pattern",
]


@dataclass(frozen=True)
class OriginalParams:
    """Unscaled rate constants and outer-reactant concentration ``A``."""

    k1: float
    k2: float
    k3: float
    k4: float
    k5: float
    A: float

    def __post_init__(self):
        for name in ("k1", "k2", "k3", "k4", "k5"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive finite number, got {v!r}")
        if not (math.isfinite(self.A) and self.A >= 0):
            raise ValueError(f"A must be nonnegative, got {self.A!r}")

    @property
    def k(self) -> float:
        return self.k1 * self.A - self.k4


@dataclass(frozen=True)
class Params:
    """Scaled parameters. ``k`` may have either sign; ``k3``, ``k5`` > 0."""

    k: float
    k3: float
    k5: float

    def __post_init__(self):
        if not math.isfinite(self.k):
            raise ValueError(f"k must be finite, got {self.k!r}")
        for name in ("k3", "k5"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive finite number, got {v!r}")

    @property
    def k_hopf(self) -> float:
        return self.k3 + self.k5

    def as_array(self) -> np.ndarray:
        return np.array([self.k, self.k3, self.k5], dtype=float)

    def to_dict(self) -> dict:
        return {"k": self.k, "k3": self.k3, "k5": self.k5}


@dataclass(frozen=True)
class State:
    """A point of the closed nonnegative octant."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        for name in ("x", "y", "z"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v!r}")

    def __iter__(self):
        return iter((self.x, self.y, self.z))

    def __array__(self, dtype=None, copy=None):
        return np.array([self.x, self.y, self.z], dtype=dtype or float)


class Regime(enum.Enum):
    GLOBAL_DECAY = "GlobalDecay"
    STABLE_INTERIOR = "StableInterior"
    OSCILLATORY = "Oscillatory"
    HOPF_BOUNDARY = "HopfBoundary"


def _xyz(s) -> tuple[float, float, float]:
    x, y, z = np.asarray(s, dtype=float)
    return float(x), float(y), float(z)


def scale_from_original(op: OriginalParams) -> tuple[Params, tuple[float, float, float]]:
    """Return scaled parameters and the factors ``(a, b, c)`` with x = a * x_scaled etc.

    The factors solve ``k2 b = 1``, ``k5 c = k3 b`` and ``k4 a = k5 c``.
    """
    b = 1.0 / op.k2
    c = op.k3 * b / op.k5
    a = op.k5 * c / op.k4
    return Params(op.k, op.k3, op.k5), (a, b, c)


def original_vector_field(op: OriginalParams, s) -> np.ndarray:
    """Right-hand side of the unscaled system."""
    x, y, z = _xyz(s)
    k = op.k
    return np.array([k * x - op.k2 * x * y, op.k5 * z - op.k3 * y, op.k4 * x - op.k5 * z])


def vector_field(p: Params, s) -> np.ndarray:
    x, y, z = _xyz(s)
    return np.array([p.k * x - x * y, p.k3 * (z - y), p.k5 * (x - z)])


def jacobian(p: Params, s) -> np.ndarray:
    x, y, _ = _xyz(s)
    return np.array(
        [
            [p.k - y, -x, 0.0],
            [0.0, -p.k3, p.k3],
            [p.k5, 0.0, -p.k5],
        ]
    )


def second_additive_compound(p: Params, s) -> np.ndarray:
    """Second additive compound of the Jacobian.

    Row/column order follows the index pairs (1,2), (1,3), (2,3).
    """
    x, y, _ = _xyz(s)
    return np.array(
        [
            [p.k - y - p.k3, p.k3, 0.0],
            [0.0, p.k - y - p.k5, -x],
            [-p.k5, 0.0, -(p.k3 + p.k5)],
        ]
    )


def interior_equilibrium(p: Params) -> np.ndarray:
    if p.k <= 0:
        raise ValueError(f"no interior equilibrium for k={p.k} <= 0")
    return np.full(3, p.k)


def equilibria(p: Params) -> list[State]:
    if p.k <= 0:
        return [State(0.0, 0.0, 0.0)]
    return [State(0.0, 0.0, 0.0), State(p.k, p.k, p.k)]


def hopf_tolerance(p: Params) -> float:
    return 1e-9 * (p.k3 + p.k5)


def classify_regime(p: Params, tol: float | None = None) -> Regime:
    """Which asymptotic regime ``p`` falls into; ``tol`` widens the Hopf boundary."""
    if tol is None:
        tol = hopf_tolerance(p)
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    kh = p.k3 + p.k5
    if abs(p.k - kh) <= tol:
        return Regime.HOPF_BOUNDARY
    if p.k <= 0:
        return Regime.GLOBAL_DECAY
    if p.k < kh:
        return Regime.STABLE_INTERIOR
    return Regime.OSCILLATORY


def jacobian_sign_pattern(p: Params, s) -> np.ndarray:
    """Signs of the off-diagonal Jacobian entries (diagonal set to 0).

    At interior points this is the single loop x -> z -> y -| x: two
    positive couplings and one negative one.
    """
    j = np.sign(jacobian(p, s))
    np.fill_diagonal(j, 0.0)
    return j
