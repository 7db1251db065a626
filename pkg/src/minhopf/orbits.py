"""Periodic orbits in the oscillatory regime via a Poincare return map.

The section is the plane ``y = k`` crossed with ``y' > 0``. It contains E
and every periodic orbit crosses it, because the time average of ``y`` over a
period equals ``k``.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.stats import qmc

from .integrate import (
    EventSpec,
    IntegrationError,
    IntegratorConfig,
    Trajectory,
    integral,
    integrate,
    integrate_variational,
    integrate_with_events,
    RISING,
)
from .model import Params, vector_field
from .spectral import RegimeMismatch, Stability, eigvals3

log = logging.getLogger(__name__)

__all__ = [
    "PoincareSection",
    "ReturnResult",
    "PeriodicOrbit",
    "Floquet",
    "NoReturn",
    "NewtonFailure",
    "ORBIT_CONFIG",
    "return_map",
    "find_periodic_orbit",
    "floquet_multipliers",
    "orbit_census",
    "orbit_samples",
]

# orbit work runs tighter than the default so that the return map is smooth
# well below the 1e-11 Newton target
ORBIT_CONFIG = IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14)


class NoReturn(IntegrationError):
    """No section crossing within the horizon."""


class NewtonFailure(RuntimeError):
    pass


def _require_oscillatory(p: Params) -> None:
    if not p.k > p.k3 + p.k5:
        raise RegimeMismatch(f"periodic orbits need k > k3 + k5, got {p}")


@dataclass(frozen=True)
class PoincareSection:
    k: float
    transversal_tol: float = 1e-10

    @classmethod
    def for_params(cls, p: Params) -> "PoincareSection":
        return cls(p.k)

    def g(self, s):
        return np.asarray(s)[..., 1] - self.k

    def event(self, terminal: bool = True) -> EventSpec:
        return EventSpec.coordinate(1, self.k, RISING, terminal)

    def to_chart(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return np.array([s[0], s[2]])

    def from_chart(self, u) -> np.ndarray:
        return np.array([u[0], self.k, u[1]], dtype=float)


class ReturnResult(NamedTuple):
    point: np.ndarray  # state on the section
    time: float
    monodromy: np.ndarray | None  # fundamental matrix over the segment
    trajectory: Trajectory


def _default_horizon(p: Params) -> float:
    return 50.0 * 2.0 * math.pi / math.sqrt(p.k3 * p.k5) + 50.0 / min(p.k3, p.k5)


def return_map(
    p: Params,
    section: PoincareSection | None,
    s,
    cfg: IntegratorConfig | None = None,
    variational: bool = True,
    horizon: float | None = None,
) -> ReturnResult:
    """Next rising crossing of the section after ``s`` (the start itself is not counted)."""
    _require_oscillatory(p)
    section = section or PoincareSection.for_params(p)
    cfg = cfg or ORBIT_CONFIG
    s = np.asarray(s, dtype=float)
    if not np.all(s > 0):
        raise ValueError(f"return map needs a strictly interior start, got {s.tolist()}")
    horizon = horizon or _default_horizon(p)
    ev = section.event(terminal=True)
    if variational:
        traj, _, events = integrate_variational(p, s, horizon, cfg, events=[ev])
    else:
        traj, events = integrate_with_events(p, s, horizon, cfg, events=[ev])
    if not events:
        raise NoReturn(f"no rising crossing of y={section.k} within t={horizon:g} from {s.tolist()}")
    e = events[0]
    speed = p.k3 * (e.state[2] - e.state[1])
    if abs(speed) <= section.transversal_tol:
        raise NoReturn(f"tangential crossing at {e.state.tolist()} (y'={speed:.3g})")
    point = e.state.copy()
    point[1] = section.k
    mono = e.full[3:].reshape(3, 3) if variational else None
    return ReturnResult(point, e.t, mono, traj)


def section_jacobian(p: Params, section: PoincareSection, point, monodromy) -> np.ndarray:
    """Derivative of the return map in (x, z) chart coordinates."""
    f = vector_field(p, point)
    full = monodromy - np.outer(f, monodromy[1]) / f[1]
    return full[np.ix_([0, 2], [0, 2])]


def _fd_section_jacobian(p, section, u, cfg, rel=1e-6) -> np.ndarray:
    jac = np.empty((2, 2))
    for j in range(2):
        h = rel * max(1.0, abs(u[j]))
        up, um = u.copy(), u.copy()
        up[j] += h
        um[j] -= h
        fp = section.to_chart(return_map(p, section, section.from_chart(up), cfg, variational=False).point)
        fm = section.to_chart(return_map(p, section, section.from_chart(um), cfg, variational=False).point)
        jac[:, j] = (fp - fm) / (2 * h)
    return jac


@dataclass(frozen=True)
class Floquet:
    multipliers: np.ndarray  # three complex numbers, trivial one first
    monodromy: np.ndarray
    det: float
    liouville: float  # exp of the integrated trace of Df over one period

    @property
    def trivial(self) -> complex:
        return complex(self.multipliers[0])

    @property
    def nontrivial(self) -> np.ndarray:
        return self.multipliers[1:]

    @property
    def liouville_abs_error(self) -> float:
        return abs(self.det - self.liouville)

    @property
    def liouville_rel_error(self) -> float:
        return self.liouville_abs_error / abs(self.liouville)

    @property
    def product_abs_error(self) -> float:
        return abs(complex(np.prod(self.multipliers)) - self.liouville)


@dataclass
class PeriodicOrbit:
    params: Params
    section_point: np.ndarray  # (x*, z*) with y* = k
    period: float
    multipliers: np.ndarray
    stability: Stability
    residual: float  # |P(u*) - u*| in chart coordinates
    closure: float  # |phi(T, s*) - s*|
    newton_iterations: int = 0
    warmup_iterations: int = 0
    floquet: Floquet | None = None
    min_component: float = math.nan
    section_jacobian: np.ndarray | None = field(default=None, repr=False)

    @property
    def state(self) -> np.ndarray:
        return np.array([self.section_point[0], self.params.k, self.section_point[1]])

    @property
    def max_nontrivial_modulus(self) -> float:
        return float(np.max(np.abs(self.multipliers[1:])))

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "section_point": [float(self.section_point[0]), float(self.params.k), float(self.section_point[1])],
            "period": float(self.period),
            "multipliers": [[float(m.real), float(m.imag)] for m in self.multipliers],
            "stability": self.stability.value,
        }


def _order_multipliers(mult) -> np.ndarray:
    mult = np.asarray(mult, dtype=complex)
    i = int(np.argmin(np.abs(mult - 1.0)))
    rest = [m for j, m in enumerate(mult) if j != i]
    rest.sort(key=lambda m: -abs(m))
    return np.array([mult[i], *rest])


def _stability(mult: np.ndarray, tol: float = 1e-6) -> Stability:
    r = float(np.max(np.abs(mult[1:])))
    if r < 1.0 - tol:
        return Stability.STABLE
    if r > 1.0 + tol:
        return Stability.UNSTABLE
    return Stability.MARGINAL


def floquet_multipliers(p: Params, orbit: PeriodicOrbit | tuple, cfg: IntegratorConfig | None = None) -> Floquet:
    """Eigenvalues of the full-period monodromy matrix plus the Liouville cross-check.

    ``orbit`` is a :class:`PeriodicOrbit` or a ``(state, period)`` pair.
    """
    cfg = cfg or ORBIT_CONFIG
    if isinstance(orbit, PeriodicOrbit):
        s, period = orbit.state, orbit.period
    else:
        s, period = np.asarray(orbit[0], dtype=float), float(orbit[1])
    traj, phi = integrate_variational(p, s, period, cfg)
    closure = float(np.linalg.norm(traj.final - s))
    if closure > 1e-9:
        log.warning("orbit closes only to %.3g", closure)
    spectrum = eigvals3(phi)
    mult = _order_multipliers(spectrum.roots)
    trace_int = (p.k - p.k3 - p.k5) * period - integral(traj, "y")
    return Floquet(mult, phi, float(np.linalg.det(phi)), math.exp(trace_int))


def _default_guess(p: Params, cfg: IntegratorConfig) -> np.ndarray:
    from .globaldyn import unstable_eigenvector_origin

    v = unstable_eigenvector_origin(p)
    t_escape = math.log(1e7) / p.k
    traj = integrate(p, 1e-7 * v, t_escape + 20.0 * 2.0 * math.pi / math.sqrt(p.k3 * p.k5), cfg)
    return traj.final


def find_periodic_orbit(
    p: Params,
    initial_guess=None,
    cfg: IntegratorConfig | None = None,
    section: PoincareSection | None = None,
    warmup: int = 200,
    warmup_tol: float = 1e-8,
    newton_tol: float = 1e-11,
    max_newton: int = 20,
) -> PeriodicOrbit:
    """Warm up by iterating the return map, then Newton on ``P(u) - u`` in (x, z).

    The Newton Jacobian comes from the variational monodromy projected onto
    the section; central differences are used if that integration fails.
    """
    _require_oscillatory(p)
    cfg = cfg or ORBIT_CONFIG
    section = section or PoincareSection.for_params(p)
    s = _default_guess(p, cfg) if initial_guess is None else np.asarray(initial_guess, dtype=float)

    r = return_map(p, section, s, cfg, variational=False)
    u = section.to_chart(r.point)
    n_warm = 0
    for n_warm in range(1, warmup + 1):
        r = return_map(p, section, section.from_chart(u), cfg, variational=False)
        u_next = section.to_chart(r.point)
        d = float(np.linalg.norm(u_next - u))
        u = u_next
        if d < warmup_tol * max(1.0, float(np.linalg.norm(u))):
            break

    best = None
    for it in range(max_newton + 1):
        try:
            r = return_map(p, section, section.from_chart(u), cfg, variational=True)
            jac = section_jacobian(p, section, r.point, r.monodromy)
        except IntegrationError:
            r = return_map(p, section, section.from_chart(u), cfg, variational=False)
            jac = _fd_section_jacobian(p, section, u, cfg)
        disp = section.to_chart(r.point) - u
        res = float(np.linalg.norm(disp))
        if best is None or res < best[0]:
            best = (res, u.copy(), r, jac, it)
        if res < newton_tol:
            break
        m = jac - np.eye(2)
        if abs(np.linalg.det(m)) < 1e-12:
            raise NewtonFailure(f"degenerate section Jacobian at {u.tolist()}")
        step = np.linalg.solve(m, -disp)
        if not np.all(np.isfinite(step)) or np.linalg.norm(step) > 0.5 * max(1.0, np.linalg.norm(u)):
            raise NewtonFailure(f"Newton step diverged at {u.tolist()}")
        u = u + step
    res, u, r, jac, it = best
    if res >= newton_tol:
        raise NewtonFailure(f"Newton stalled at residual {res:.3g} (target {newton_tol:g})")

    s_star = section.from_chart(u)
    closure = float(np.linalg.norm(r.point - s_star))
    flo = floquet_multipliers(p, (s_star, r.time), cfg)
    mins = float(np.min(r.trajectory.states))
    return PeriodicOrbit(
        params=p,
        section_point=u,
        period=float(r.time),
        multipliers=flo.multipliers,
        stability=_stability(flo.multipliers),
        residual=res,
        closure=closure,
        newton_iterations=it,
        warmup_iterations=n_warm,
        floquet=flo,
        min_component=mins,
        section_jacobian=jac,
    )


def orbit_samples(p: Params, orbit: PeriodicOrbit, n: int = 1000, cfg: IntegratorConfig | None = None):
    """``n`` states at uniform phase over one period, starting at the section point."""
    traj = integrate(p, orbit.state, orbit.period, cfg or ORBIT_CONFIG)
    t = orbit.period * np.arange(n) / n
    return t, traj(t), traj


def census_seeds(p: Params, n_starts: int, lo: float, hi: float, seed: int = 0) -> np.ndarray:
    sob = qmc.Sobol(d=3, scramble=True, seed=seed)
    pts = sob.random_base2(max(0, math.ceil(math.log2(max(n_starts, 1)))))[:n_starts]
    return qmc.scale(pts, [lo] * 3, [hi] * 3)


def orbit_census(
    p: Params,
    n_starts: int = 50,
    cfg: IntegratorConfig | None = None,
    seed: int = 0,
    eta: float | None = None,
    jobs: int | None = None,
    cluster_tol: float = 1e-6,
) -> list[PeriodicOrbit]:
    """Locate orbits from low-discrepancy seeds in [eta, M]^3 and cluster the results.

    Seeds reach the section by the flow itself (the first rising crossing).
    Failures are logged and skipped. The count is evidence, not proof.
    """
    _require_oscillatory(p)
    from .globaldyn import attractor_bound, persistence_floor

    cfg = cfg or ORBIT_CONFIG
    if eta is None:
        eta = persistence_floor(p, jobs=jobs)
    seeds = census_seeds(p, n_starts, eta, attractor_bound(p), seed)

    def work(s):
        try:
            return find_periodic_orbit(p, s, cfg)
        except (IntegrationError, NewtonFailure, ValueError) as exc:
            log.info("census seed %s failed: %s", np.asarray(s).tolist(), exc)
            return None

    jobs = jobs or int(os.environ.get("HOPF_VERIFIER_JOBS", 0)) or os.cpu_count() or 1
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            found = list(ex.map(work, seeds))
    else:
        found = [work(s) for s in seeds]

    distinct: list[PeriodicOrbit] = []
    for orb in found:
        if orb is None:
            continue
        for rep in distinct:
            if (
                np.linalg.norm(orb.section_point - rep.section_point) < cluster_tol
                and abs(orb.period - rep.period) < cluster_tol
            ):
                break
        else:
            distinct.append(orb)
    return distinct
