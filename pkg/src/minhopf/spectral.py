"""Closed-form eigenanalysis of 3x3 matrices and equilibrium stability."""
from __future__ import annotations

import cmath
import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .model import Params, interior_equilibrium, jacobian, vector_field

__all__ = [
    "CubicCoeffs",
    "SpectrumTag",
    "Spectrum",
    "Stability",
    "EquilibriumStability",
    "NotAnEquilibrium",
    "RegimeMismatch",
    "char_poly",
    "cubic_roots",
    "eigvals3",
    "routh_hurwitz_stable",
    "classify_equilibrium",
    "hopf_point",
    "stable_eigenvector_at_E",
]

_SQRT3 = math.sqrt(3.0)


class NotAnEquilibrium(ValueError):
    pass


class RegimeMismatch(ValueError):
    """Raised when an operation is asked for outside the parameter regime it needs."""


class CubicCoeffs(NamedTuple):
    """Monic cubic ``lam**3 + c2*lam**2 + c1*lam + c0``."""

    c2: float
    c1: float
    c0: float

    def __call__(self, lam):
        return ((lam + self.c2) * lam + self.c1) * lam + self.c0

    def derivative(self, lam):
        return (3.0 * lam + 2.0 * self.c2) * lam + self.c1


class SpectrumTag(enum.Enum):
    ALL_NEGATIVE = "AllNegativeRealParts"
    HAS_POSITIVE = "HasPositiveRealPart"
    MARGINAL = "Marginal"


class Stability(enum.Enum):
    STABLE = "Stable"
    UNSTABLE = "Unstable"
    MARGINAL = "Marginal"


@dataclass(frozen=True)
class Spectrum:
    roots: tuple[complex, complex, complex]
    tag: SpectrumTag

    @property
    def max_real(self) -> float:
        return max(r.real for r in self.roots)

    @property
    def spectral_radius(self) -> float:
        return max(abs(r) for r in self.roots)

    def real_roots(self) -> list[float]:
        return [r.real for r in self.roots if r.imag == 0.0]

    def as_array(self) -> np.ndarray:
        return np.array(self.roots, dtype=complex)


def char_poly(m) -> CubicCoeffs:
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    minors = (
        m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        + m[0, 0] * m[2, 2] - m[0, 2] * m[2, 0]
        + m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1]
    )
    det = (
        m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
        - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
        + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0])
    )
    return CubicCoeffs(float(-tr), float(minors), float(-det))


def _polish(c: CubicCoeffs, r, steps: int = 5):
    # Newton on the cubic; a step is kept only if it lowers the residual.
    best, best_res = r, abs(c(r))
    for _ in range(steps):
        if best_res == 0.0:
            break
        d = c.derivative(best)
        if d == 0:
            break
        cand = best - c(best) / d
        res = abs(c(cand))
        if res >= best_res:
            break
        best, best_res = cand, res
    return best


def _real_cubic_root(c: CubicCoeffs) -> float:
    """One real root of the monic cubic (Cardano, cancellation-free form)."""
    a = c.c2 / 3.0
    p = c.c1 - c.c2 * a
    q = 2.0 * a**3 - a * c.c1 + c.c0
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    if disc >= 0.0:
        s = math.sqrt(disc)
        u = -math.copysign(1.0, q) * np.cbrt(abs(q) / 2.0 + s)
        t = u - p / (3.0 * u) if u != 0.0 else 0.0
    else:
        r = 2.0 * math.sqrt(-p / 3.0)
        phi = math.acos(max(-1.0, min(1.0, 3.0 * q / (p * r))))
        t = r * math.cos(phi / 3.0)
    return float(t - a)


def cubic_roots(c: CubicCoeffs) -> Spectrum:
    """Roots of a monic cubic by the discriminant method, Newton-polished.

    Three real roots come from the trigonometric form; otherwise one real
    root is taken from Cardano and the conjugate pair from the deflated
    quadratic.
    """
    c = CubicCoeffs(*(float(v) for v in c))
    if not all(math.isfinite(v) for v in c):
        raise ValueError(f"non-finite cubic coefficients {c}")
    a = c.c2 / 3.0
    p = c.c1 - c.c2 * a
    q = 2.0 * a**3 - a * c.c1 + c.c0
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    scale = max(1.0, abs(c.c2), abs(c.c1) ** 0.5, abs(c.c0) ** (1.0 / 3.0))

    if disc < -1e-30 * scale**6 and p < 0.0:
        r = 2.0 * math.sqrt(-p / 3.0)
        phi = math.acos(max(-1.0, min(1.0, 3.0 * q / (p * r))))
        roots = [r * math.cos((phi - 2.0 * math.pi * j) / 3.0) - a for j in range(3)]
        roots = [float(_polish(c, x)) for x in roots]
        roots.sort()
        out = tuple(complex(x, 0.0) for x in roots)
    else:
        r0 = float(_polish(c, _real_cubic_root(c)))
        # deflate: lam^2 + b lam + g
        b = c.c2 + r0
        g = -c.c0 / r0 if abs(r0) > 1.0 else c.c1 + r0 * b
        d = b * b - 4.0 * g
        if d >= 0.0:
            sq = math.sqrt(d)
            w = -0.5 * (b + math.copysign(sq, b))
            r1 = w
            r2 = g / w if w != 0.0 else 0.0
            r1, r2 = float(_polish(c, r1)), float(_polish(c, r2))
            out = tuple(complex(x, 0.0) for x in sorted([r0, r1, r2]))
        else:
            z = complex(-0.5 * b, 0.5 * math.sqrt(-d))
            z = complex(_polish(c, z))
            z = complex(z.real, abs(z.imag))
            out = (complex(r0, 0.0), z, z.conjugate())
    return Spectrum(out, _tag(out))


def _tag(roots) -> SpectrumTag:
    rho = max(abs(r) for r in roots)
    thresh = 1e-9 * max(1.0, rho)
    mx = max(r.real for r in roots)
    if abs(mx) <= thresh:
        return SpectrumTag.MARGINAL
    if mx > 0:
        return SpectrumTag.HAS_POSITIVE
    return SpectrumTag.ALL_NEGATIVE


def eigvals3(m) -> Spectrum:
    return cubic_roots(char_poly(m))


def routh_hurwitz_stable(c: CubicCoeffs) -> bool:
    """All roots in the open left half plane iff c2 > 0, c0 > 0 and c2 c1 > c0."""
    return c.c2 > 0 and c.c0 > 0 and c.c2 * c.c1 > c.c0


@dataclass(frozen=True)
class EquilibriumStability:
    stability: Stability
    spectrum: Spectrum
    coeffs: CubicCoeffs
    routh_hurwitz: bool
    agrees: bool


def classify_equilibrium(p: Params, e, residual_tol: float = 1e-10) -> EquilibriumStability:
    e = np.asarray(e, dtype=float)
    res = float(np.max(np.abs(vector_field(p, e))))
    if res >= residual_tol:
        raise NotAnEquilibrium(f"{e.tolist()} is not an equilibrium of {p} (residual {res:.3g})")
    coeffs = char_poly(jacobian(p, e))
    sp = cubic_roots(coeffs)
    stability = {
        SpectrumTag.ALL_NEGATIVE: Stability.STABLE,
        SpectrumTag.HAS_POSITIVE: Stability.UNSTABLE,
        SpectrumTag.MARGINAL: Stability.MARGINAL,
    }[sp.tag]
    rh = routh_hurwitz_stable(coeffs)
    agrees = True if stability is Stability.MARGINAL else (rh == (stability is Stability.STABLE))
    return EquilibriumStability(stability, sp, coeffs, rh, agrees)


def hopf_point(k3: float, k5: float) -> tuple[float, float]:
    """Critical ``k`` and the frequency of the marginal pair at E."""
    if not (k3 > 0 and k5 > 0):
        raise ValueError("k3 and k5 must be positive")
    return k3 + k5, math.sqrt(k3 * k5)


def _null_vector(m: np.ndarray) -> np.ndarray:
    # cross product of the two most independent rows
    best = None
    for i, j in ((0, 1), (0, 2), (1, 2)):
        v = np.cross(m[i], m[j])
        if best is None or np.linalg.norm(v) > np.linalg.norm(best):
            best = v
    return best / np.linalg.norm(best)


def stable_eigenvector_at_E(p: Params) -> tuple[float, np.ndarray]:
    """The negative real eigenvalue at E and its unit eigenvector, x-component > 0."""
    if not p.k > p.k3 + p.k5:
        raise RegimeMismatch(f"need k > k3 + k5 for a one-dimensional stable manifold, got {p}")
    j = jacobian(p, interior_equilibrium(p))
    sp = eigvals3(j)
    real_neg = [r.real for r in sp.roots if r.imag == 0.0 and r.real < 0.0]
    if len(real_neg) != 1:
        raise RegimeMismatch(f"expected exactly one negative real eigenvalue at E, got {sp.roots}")
    lam = real_neg[0]
    v = _null_vector(j - lam * np.eye(3))
    if v[0] < 0:
        v = -v
    return lam, v
