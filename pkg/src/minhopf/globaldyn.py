"""Global structure of the flow: attractor bound, invariant boxes, persistence, manifolds."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .integrate import (
    FALLING,
    EventSpec,
    IntegrationError,
    IntegratorConfig,
    Trajectory,
    concat,
    integrate,
    integrate_with_events,
)
from .model import Params, interior_equilibrium
from .reports import Check, VerificationReport
from .spectral import RegimeMismatch, stable_eigenvector_at_E

__all__ = [
    "TrivialAttractor",
    "InvalidBox",
    "InvariantBox",
    "ManifoldBranch",
    "UnstableManifold",
    "attractor_bound",
    "invariant_box_default",
    "box_contains",
    "box_margin",
    "sample_box",
    "verify_forward_invariance",
    "ratio_floors",
    "ratio_liminf_check",
    "persistence_floor",
    "default_persistence_grid",
    "verify_absorption",
    "unstable_eigenvector_origin",
    "trace_unstable_manifold_origin",
    "trace_stable_manifold_E",
    "MANIFOLD_CONFIG",
]

MANIFOLD_CONFIG = IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14)


class TrivialAttractor(ValueError):
    """For k <= 0 the global attractor is the origin alone."""


class InvalidBox(ValueError):
    pass


def _jobs(jobs: int | None) -> int:
    return jobs or int(os.environ.get("HOPF_VERIFIER_JOBS", 0)) or os.cpu_count() or 1


def _pmap(fn: Callable, items: Iterable, jobs: int | None) -> list:
    items = list(items)
    n = _jobs(jobs)
    if n > 1 and len(items) > 1:
        with ThreadPoolExecutor(n) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def _require_positive_k(p: Params) -> None:
    if p.k <= 0:
        raise TrivialAttractor(f"k={p.k} <= 0: the attractor is {{0}}")


def attractor_bound(p: Params) -> float:
    """M = k (k + k5)(k + k3) / (k3 k5); the attractor lies in [0, M]^3."""
    _require_positive_k(p)
    return p.k * (p.k + p.k5) * (p.k + p.k3) / (p.k3 * p.k5)


@dataclass(frozen=True)
class InvariantBox:
    """{x = 0, or z/x >= sigma and y/x >= rho} intersected with [0, K]^3."""

    params: Params
    sigma: float
    rho: float
    K: float

    def __post_init__(self):
        p = self.params
        if p.k <= 0:
            raise InvalidBox("invariant boxes need k > 0")
        smax = p.k5 / (p.k + p.k5)
        if not 0 < self.sigma <= smax:
            raise InvalidBox(f"sigma={self.sigma} outside (0, {smax}]")
        rmax = p.k3 * self.sigma / (p.k + p.k3)
        if not 0 < self.rho <= rmax * (1 + 1e-15):
            raise InvalidBox(f"rho={self.rho} outside (0, {rmax}]")
        kmin = p.k / self.rho
        if not self.K >= kmin * (1 - 1e-15):
            raise InvalidBox(f"K={self.K} below k/rho={kmin}")

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "rho": self.rho, "K": self.K}


def invariant_box_default(p: Params) -> InvariantBox:
    _require_positive_k(p)
    sigma = p.k5 / (p.k + p.k5)
    rho = p.k3 * sigma / (p.k + p.k3)
    return InvariantBox(p, sigma, rho, p.k / rho)


def box_margin(b: InvariantBox, states) -> np.ndarray:
    """Smallest signed slack of the defining inequalities; >= 0 inside the box."""
    s = np.atleast_2d(np.asarray(states, dtype=float))
    x, y, z = s[:, 0], s[:, 1], s[:, 2]
    caps = np.minimum.reduce([b.K - x, b.K - y, b.K - z, x, y, z])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.minimum(z / x - b.sigma, y / x - b.rho)
    ratios = np.where(x > 0, ratios, np.inf)
    return np.minimum(caps, ratios)


def box_contains(b: InvariantBox, s, slack: float = 0.0) -> bool:
    return bool(box_margin(b, s)[0] >= -slack)


def sample_box(b: InvariantBox, n: int, rng: np.random.Generator, boundary_fraction: float = 0.5,
               rel: float = 1e-3) -> np.ndarray:
    """Uniform-ish interior points plus a share placed within ``rel`` of a face.

    Faces: z = sigma x, y = rho x, x = K, y = K, z = K and x = 0.
    """
    K, sig, rho = b.K, b.sigma, b.rho
    n_b = int(round(boundary_fraction * n))
    x = rng.uniform(0.0, K, n)
    x[x == 0.0] = K / 2
    z = rng.uniform(sig * x, K)
    y = rng.uniform(rho * x, K)
    pts = np.column_stack([x, y, z])
    face = rng.integers(0, 6, n_b)
    u = rng.uniform(0.0, rel, n_b)
    u[::7] = 0.0  # some points exactly on a face
    for j in range(n_b):
        xx, yy, zz = pts[j]
        f = face[j]
        if f == 0:
            zz = min(sig * xx * (1 + u[j]), K)
        elif f == 1:
            yy = min(rho * xx * (1 + u[j]), K)
        elif f == 2:
            xx = K * (1 - u[j])
            zz = max(zz, sig * xx)
            yy = max(yy, rho * xx)
        elif f == 3:
            yy = K * (1 - u[j])
        elif f == 4:
            zz = K * (1 - u[j])
        else:
            xx = 0.0
        pts[j] = (xx, yy, zz)
    return pts


def verify_forward_invariance(
    p: Params,
    b: InvariantBox,
    n_samples: int = 1000,
    t_check: float = 50.0,
    cfg: IntegratorConfig | None = None,
    seed: int = 0,
    slack: float = 1e-9,
    per_step: int = 4,
    jobs: int | None = None,
) -> Check:
    """Integrate sampled box points and track the worst membership margin on a dense grid."""
    if b.params != p:
        raise InvalidBox("box was built for different parameters")
    cfg = cfg or IntegratorConfig()
    pts = sample_box(b, n_samples, np.random.default_rng(seed))
    start_margin = float(np.min(box_margin(b, pts)))

    def work(s):
        traj = integrate(p, s, t_check, cfg)
        _, ys = traj.sample(per_step)
        m = box_margin(b, ys)
        i = int(np.argmin(m))
        return float(m[i]), ys[i]

    res = _pmap(work, pts, jobs)
    margins = np.array([r[0] for r in res])
    worst = int(np.argmin(margins))
    return Check(
        "forward_invariance",
        bool(margins[worst] >= -slack),
        measured=float(margins[worst]),
        bound=0.0,
        tolerance=slack,
        params=p.to_dict(),
        detail={
            "box": b.to_dict(),
            "n_samples": n_samples,
            "t_check": t_check,
            "worst_start": pts[worst],
            "min_start_margin": start_margin,
        },
    )


def ratio_floors(p: Params) -> tuple[float, float]:
    """Eventual lower bounds for z/x and y/x."""
    _require_positive_k(p)
    zx = p.k5 / (p.k + p.k5)
    return zx, p.k3 * zx / (p.k + p.k3)


@dataclass(frozen=True)
class RatioCheck:
    zx_inf: float
    yx_inf: float
    zx_floor: float
    yx_floor: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.zx_inf >= self.zx_floor - self.tolerance and self.yx_inf >= self.yx_floor - self.tolerance


def ratio_liminf_check(p: Params, s0, horizon: float = 400.0, cfg: IntegratorConfig | None = None,
                       tolerance: float = 1e-6) -> RatioCheck:
    s0 = np.asarray(s0, dtype=float)
    if not s0[0] > 0:
        raise ValueError("ratio check needs x(0) > 0")
    zf, yf = ratio_floors(p)
    traj = integrate(p, s0, horizon, cfg or IntegratorConfig())
    t, s = traj.sample(4)
    tail = t >= horizon / 2
    x = s[tail, 0]
    return RatioCheck(float(np.min(s[tail, 2] / x)), float(np.min(s[tail, 1] / x)), zf, yf, tolerance)


def default_persistence_grid(n: int = 5, lo: float = 0.1, hi: float = 10.0) -> np.ndarray:
    g = np.linspace(lo, hi, n)
    return np.array(np.meshgrid(g, g, g, indexing="ij")).reshape(3, -1).T


def persistence_floor(
    p: Params,
    start_grid=None,
    horizon: float = 400.0,
    cfg: IntegratorConfig | None = None,
    jobs: int | None = None,
) -> float:
    """min over starts of inf over [horizon/2, horizon] of min(x, y, z)."""
    _require_positive_k(p)
    grid = default_persistence_grid() if start_grid is None else np.atleast_2d(np.asarray(start_grid, float))
    if np.any(grid <= 0):
        raise ValueError("persistence starts must be strictly interior (x, y, z > 0)")
    cfg = cfg or IntegratorConfig()

    def work(s):
        traj = integrate(p, s, horizon, cfg)
        t, ys = traj.sample(4)
        return float(np.min(ys[t >= horizon / 2]))

    return float(min(_pmap(work, grid, jobs)))


def verify_absorption(
    p: Params,
    n_starts: int = 100,
    box_factor: float = 10.0,
    horizon: float = 200.0,
    cfg: IntegratorConfig | None = None,
    seed: int = 0,
    slack: float = 1e-6,
    jobs: int | None = None,
) -> Check:
    """Random starts in [0, box_factor M]^3 must end up inside [0, M + slack]^3 for good."""
    M = attractor_bound(p)
    rng = np.random.default_rng(seed)
    starts = rng.uniform(0.0, box_factor * M, (n_starts, 3))
    cfg = cfg or IntegratorConfig()

    def work(s):
        traj = integrate(p, s, horizon, cfg)
        t, ys = traj.sample(4)
        outside = np.nonzero(np.max(ys, axis=1) > M + slack)[0]
        t_in = 0.0 if outside.size == 0 else float(t[min(outside[-1] + 1, len(t) - 1)])
        return t_in, float(np.max(ys[len(t) // 2 :]))

    res = _pmap(work, starts, jobs)
    t_entry = max(r[0] for r in res)
    tail_max = max(r[1] for r in res)
    return Check(
        "attractor_absorption",
        bool(t_entry < horizon / 2 and tail_max <= M + slack),
        measured=tail_max,
        bound=M,
        tolerance=slack,
        params=p.to_dict(),
        detail={"n_starts": n_starts, "start_box": box_factor * M, "horizon": horizon, "latest_entry_time": t_entry},
    )


def unstable_eigenvector_origin(p: Params) -> np.ndarray:
    """Positive unit eigenvector of Df(0) for the eigenvalue k."""
    _require_positive_k(p)
    v = np.array([1.0, p.k3 * p.k5 / ((p.k3 + p.k) * (p.k5 + p.k)), p.k5 / (p.k5 + p.k)])
    return v / np.linalg.norm(v)


@dataclass
class UnstableManifold:
    trajectory: Trajectory
    limit: str  # "equilibrium" or "periodic_orbit"
    tail_distance: float  # distance to E, or last return-map displacement
    section_point: np.ndarray | None = None
    period_estimate: float | None = None
    tail_start: float = 0.0


def trace_unstable_manifold_origin(
    p: Params,
    delta: float = 1e-7,
    cfg: IntegratorConfig | None = None,
    settle_tol: float = 1e-6,
    max_horizon: float = 20000.0,
    chunk: float = 50.0,
) -> UnstableManifold:
    """Follow the branch of the origin's unstable manifold that enters the octant.

    Stops once the tail is within ``settle_tol`` of E (0 < k < k3 + k5) or
    successive section returns differ by less than ``settle_tol`` (k > k3 + k5).
    """
    _require_positive_k(p)
    if not 0 < delta <= 1e-6:
        raise ValueError("delta must lie in (0, 1e-6]")
    cfg = cfg or IntegratorConfig()
    v = unstable_eigenvector_origin(p)
    oscillatory = p.k > p.k3 + p.k5 + 1e-9 * (p.k3 + p.k5)
    t_escape = math.log(1.0 / delta) / p.k
    pieces = [integrate(p, delta * v, t_escape, cfg)]
    t = pieces[-1].t1
    if not oscillatory:
        e = interior_equilibrium(p)
        while t < max_horizon:
            tr = integrate(p, pieces[-1].final, t + chunk, cfg, t0=t)
            pieces.append(tr)
            t = tr.t1
            d = float(np.linalg.norm(tr.final - e))
            if d < settle_tol:
                return UnstableManifold(concat(pieces), "equilibrium", d, tail_start=tr.t0)
        raise IntegrationError(f"unstable manifold of 0 did not settle by t={max_horizon:g}")

    ev = EventSpec.coordinate(1, p.k, "rising", terminal=True)
    prev = None
    while t < max_horizon:
        tr, evs = integrate_with_events(p, pieces[-1].final, max_horizon, cfg, [ev], t0=t)
        pieces.append(tr)
        t = tr.t1
        if not evs:
            break
        point = evs[0].state
        if prev is not None:
            d = float(np.linalg.norm(point - prev[0]))
            if d < settle_tol:
                return UnstableManifold(
                    concat(pieces), "periodic_orbit", d, point.copy(), evs[0].t - prev[1], tail_start=prev[1]
                )
        prev = (point, evs[0].t)
    raise IntegrationError(f"unstable manifold of 0 did not settle by t={max_horizon:g}")


@dataclass
class ManifoldBranch:
    """One half of the stable manifold of E, stored in forward time.

    ``t`` starts at 0 on the boundary face and ends at the E-side offset point.
    """

    label: str
    t: np.ndarray
    states: np.ndarray
    endpoint: np.ndarray
    reverse_trajectory: Trajectory
    audit: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v["pass"] for v in self.audit.values())

    def to_csv(self, fh=None):
        from .integrate import write_csv

        return write_csv(fh, self.t, self.states)


def _monotone_audit(states: np.ndarray, signs: Sequence[int], slack: float) -> dict:
    d = np.diff(states, axis=0)
    worst = float(min(np.min(sgn * d[:, i]) for i, sgn in enumerate(signs)))
    net = [float(sgn * (states[-1, i] - states[0, i])) for i, sgn in enumerate(signs)]
    return {"pass": worst >= -slack and min(net) > 0, "worst": worst, "net": net, "slack": slack}


def _box_audit(states, lo, hi, slack) -> dict:
    below = np.max(np.asarray(lo)[None, :] - states)
    above = np.max(states - np.asarray(hi)[None, :])
    worst = float(max(below, above))
    return {"pass": worst <= slack, "worst": worst, "slack": slack}


def trace_stable_manifold_E(
    p: Params,
    delta: float | None = None,
    cfg: IntegratorConfig | None = None,
    slack: float = 1e-9,
    max_time: float = 500.0,
    converge_tol: float = 1e-8,
) -> tuple[ManifoldBranch, ManifoldBranch]:
    """Both halves of the one-dimensional stable manifold of E, by reverse-time integration.

    ``E - delta v`` runs backward to the face y = 0 (the branch called p_u),
    ``E + delta v`` runs backward to the face z = 0 (p_l). Each branch is
    audited for monotonicity, box containment, its endpoint, and forward
    convergence: the forward flow from the endpoint must come within
    ``converge_tol`` of E.
    """
    if not p.k > p.k3 + p.k5:
        raise RegimeMismatch(f"stable manifold of E is one-dimensional only for k > k3 + k5, got {p}")
    if delta is None:
        delta = 1e-7 * p.k
    if not 0 < delta <= 1e-6:
        raise ValueError("delta must lie in (0, 1e-6]")
    cfg = cfg or MANIFOLD_CONFIG
    lam, v = stable_eigenvector_at_E(p)
    e = interior_equilibrium(p)
    k = p.k
    inf = math.inf

    def branch(label, start, face):
        ev = EventSpec.coordinate(face, 0.0, FALLING, terminal=True)
        traj, evs = integrate_with_events(p, start, max_time, cfg, [ev], reverse=True)
        if not evs:
            raise IntegrationError(f"branch {label} did not reach the face {'xyz'[face]}=0 by t={max_time:g}")
        tau, ys = traj.sample(4)
        t_fwd = (traj.t1 - tau)[::-1]
        states = ys[::-1].copy()
        end = evs[0].state.copy()
        end[face] = 0.0
        states[0] = end
        return ManifoldBranch(label, t_fwd, states, end, traj)

    pu = branch("p_u", e - delta * v, 1)
    pl = branch("p_l", e + delta * v, 2)

    eu, el = pu.endpoint, pl.endpoint
    pu.audit["monotone"] = _monotone_audit(pu.states, (1, 1, -1), slack)
    pu.audit["box"] = _box_audit(pu.states, (0, 0, k), (k, k, inf), slack)
    pu.audit["endpoint"] = {
        "pass": bool(eu[1] == 0.0 and 0 < eu[0] < k < eu[2]),
        "value": eu,
    }
    pl.audit["monotone"] = _monotone_audit(pl.states, (-1, -1, 1), slack)
    pl.audit["box"] = _box_audit(pl.states, (k, k, 0), (inf, inf, k), slack)
    pl.audit["endpoint"] = {
        "pass": bool(el[2] == 0.0 and el[0] > k and el[1] > k),
        "value": el,
    }
    settle = math.log(delta / converge_tol) / abs(lam) if delta > converge_tol else 0.0
    for br in (pu, pl):
        fwd = integrate(p, br.endpoint, br.t[-1] + settle + 5.0 / abs(lam), cfg)
        _, ys = fwd.sample(8)
        dist = float(np.min(np.linalg.norm(ys - e, axis=1)))
        br.audit["forward_convergence"] = {"pass": dist < converge_tol, "min_distance": dist, "tol": converge_tol}
        br.audit["e_end_offset"] = {"pass": True, "distance": float(np.linalg.norm(br.states[-1] - e))}
    return pu, pl


def manifold_report(p: Params, pu: ManifoldBranch, pl: ManifoldBranch) -> VerificationReport:
    rep = VerificationReport()
    for br in (pu, pl):
        for name, a in br.audit.items():
            if name == "e_end_offset":
                continue
            rep.add(
                Check(
                    f"stable_manifold_{br.label}_{name}",
                    bool(a["pass"]),
                    measured=a.get("worst", a.get("min_distance", a.get("value"))),
                    bound=a.get("tol"),
                    tolerance=a.get("slack", a.get("tol")),
                    params=p.to_dict(),
                )
            )
    return rep
