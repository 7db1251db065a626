"""Compound-matrix Bendixson certificate ruling out periodic orbits for 0 < k < k3 + k5.

With the weight A(p) = diag((1 - 2 eps)/x, (1 - eps)/x, -1/k5), the matrix
B = A_f A^-1 + A Df^[2] A^-1 has a max-norm logarithmic measure that depends
on the state only through x. Its long-time average is negative whenever the
average of x (which is k) satisfies k / (1 - 2 eps) < k3 + k5.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .globaldyn import _pmap, attractor_bound, persistence_floor
from .integrate import IntegratorConfig, integrate, time_average
from .model import Params
from .spectral import RegimeMismatch

__all__ = [
    "CertificateConfig",
    "Certificate",
    "NotApplicable",
    "b_matrix",
    "lozinskii_max_norm",
    "mu_b",
    "auto_epsilon",
    "q2_bar",
]


class NotApplicable(RegimeMismatch):
    """The certificate cannot be attempted for these parameters."""


def b_matrix(p: Params, s, epsilon: float) -> np.ndarray:
    x = float(np.asarray(s, dtype=float)[0])
    if not x > 0:
        raise ValueError(f"B(p) needs x > 0, got x={x}")
    if not 0 < epsilon < 0.5:
        raise ValueError(f"epsilon must lie in (0, 1/2), got {epsilon}")
    e = epsilon
    return np.array(
        [
            [-p.k3, p.k3 * (1 - 2 * e) / (1 - e), 0.0],
            [0.0, -p.k5, p.k5 * (1 - e)],
            [x / (1 - 2 * e), 0.0, -(p.k3 + p.k5)],
        ]
    )


def lozinskii_max_norm(m) -> float:
    """Logarithmic norm induced by the max norm: max_i (m_ii + sum_{j != i} |m_ij|)."""
    m = np.asarray(m, dtype=float)
    off = np.abs(m).sum(axis=1) - np.abs(np.diag(m))
    return float(np.max(np.diag(m) + off))


def mu_b(p: Params, x, epsilon: float):
    """Closed form of lozinskii_max_norm(b_matrix(p, (x, ., .), epsilon)), vectorized in x."""
    e = epsilon
    const = max(-e * p.k3 / (1 - e), -e * p.k5)
    return np.maximum(const, np.asarray(x, dtype=float) / (1 - 2 * e) - (p.k3 + p.k5))


def auto_epsilon(p: Params) -> float:
    """Half of the largest feasible epsilon, capped at 1/4."""
    kh = p.k3 + p.k5
    if not 0 < p.k < kh:
        raise NotApplicable(f"certificate needs 0 < k < k3 + k5, got {p}")
    eps = min(0.25, (1 - p.k / kh) / 2 * 0.5)
    return min(max(eps, 1e-6), 0.5 - 1e-6)


@dataclass(frozen=True)
class CertificateConfig:
    epsilon: float | None = None  # None selects auto_epsilon
    horizon: float = 2000.0
    grid_n: int = 4
    margin_floor: float = 1e-3
    eta: float | None = None  # lower corner of the start grid; None estimates it


@dataclass
class Certificate:
    params: Params
    epsilon: float
    horizon: float
    n_starts: int
    q2_bar: float
    per_start: np.ndarray = field(repr=False)
    margin: float
    passed: bool
    applicable: bool = True
    reason: str = ""

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "epsilon": self.epsilon,
            "horizon": self.horizon,
            "n_starts": self.n_starts,
            "q2_bar": self.q2_bar,
            "margin": self.margin,
            "pass": self.passed,
        }


def _not_applicable(p: Params, cc: CertificateConfig, reason: str) -> Certificate:
    return Certificate(p, cc.epsilon or math.nan, cc.horizon, 0, math.nan, np.empty(0), math.nan, False, False, reason)


def q2_bar(
    p: Params,
    cc: CertificateConfig | None = None,
    cfg: IntegratorConfig | None = None,
    jobs: int | None = None,
) -> Certificate:
    """Sup over a start grid in [eta, M]^3 of the tail average of mu(B(phi(t))) over [T/2, T].

    Returns a certificate with ``applicable=False`` outside 0 < k < k3 + k5 or
    when ``k / (1 - 2 eps) < k3 + k5`` fails for the chosen epsilon.
    """
    cc = cc or CertificateConfig()
    kh = p.k3 + p.k5
    if not 0 < p.k < kh:
        return _not_applicable(p, cc, f"needs 0 < k < k3 + k5 = {kh:g}, got k = {p.k:g}")
    eps = auto_epsilon(p) if cc.epsilon is None else cc.epsilon
    if not (0 < eps < 0.5 and p.k / (1 - 2 * eps) < kh):
        return _not_applicable(p, cc, f"epsilon={eps:g} violates k/(1-2 eps) < k3 + k5")
    cfg = cfg or IntegratorConfig()
    eta = cc.eta if cc.eta is not None else persistence_floor(p, jobs=jobs, cfg=cfg)
    M = attractor_bound(p)
    g = np.linspace(eta, M, cc.grid_n)
    starts = np.array(np.meshgrid(g, g, g, indexing="ij")).reshape(3, -1).T
    T = cc.horizon

    def work(s):
        traj = integrate(p, s, T, cfg)
        return time_average(traj, lambda ys: mu_b(p, ys[:, 0], eps), (T / 2, T))

    per_start = np.array(_pmap(work, starts, jobs))
    q = float(np.max(per_start))
    return Certificate(p, eps, T, len(starts), q, per_start, -q, bool(q < -cc.margin_floor))
