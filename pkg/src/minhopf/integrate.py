"""Adaptive Dormand-Prince integration of the model with dense output and events.

The stepping itself lives in the compiled kernel :mod:`minhopf._dp5`; this
module wraps it with trajectories, event location, the variational system and
time averages.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.optimize import brentq

from . import _dp5
from .model import Params

__all__ = [
    "IntegratorConfig",
    "IntegrationError",
    "StepLimitExceeded",
    "StepSizeUnderflow",
    "Diagnostics",
    "Trajectory",
    "EventSpec",
    "Event",
    "integrate",
    "integrate_with_events",
    "integrate_variational",
    "time_average",
    "integral",
    "write_csv",
    "concat",
]

RISING = "rising"
FALLING = "falling"
BOTH = "both"


class IntegrationError(RuntimeError):
    pass


class StepLimitExceeded(IntegrationError):
    pass


class StepSizeUnderflow(IntegrationError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_step: float = math.inf
    max_steps: int = 5_000_000

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")

    def with_(self, **kw) -> "IntegratorConfig":
        return replace(self, **kw)


@dataclass
class Diagnostics:
    n_steps: int = 0
    n_rejected: int = 0
    n_clamped: int = 0
    min_pre_clamp: float = math.inf

    def merge(self, other: "Diagnostics") -> None:
        self.n_steps += other.n_steps
        self.n_rejected += other.n_rejected
        self.n_clamped += other.n_clamped
        self.min_pre_clamp = min(self.min_pre_clamp, other.min_pre_clamp)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class Trajectory:
    """Accepted steps of one integration plus the quartic dense output per step.

    ``y`` has 3 columns for the plain flow and 12 for the variational flow
    (state followed by the row-major fundamental matrix).
    """

    def __init__(self, t, y, dense, diagnostics: Diagnostics | None = None):
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        dense = np.asarray(dense, dtype=float)
        if t.ndim != 1 or y.shape[0] != t.shape[0] or dense.shape[0] != max(t.shape[0] - 1, 0):
            raise ValueError("inconsistent trajectory arrays")
        if t.shape[0] > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("timestamps must be strictly increasing")
        self.t = _freeze(t)
        self.y = _freeze(y)
        self.dense = _freeze(dense)
        self.diagnostics = diagnostics or Diagnostics()

    def __len__(self) -> int:
        return self.t.shape[0]

    def __repr__(self) -> str:
        return f"Trajectory(t=[{self.t0:g}, {self.t1:g}], nodes={len(self)}, dim={self.dim})"

    @property
    def dim(self) -> int:
        return self.y.shape[1]

    @property
    def t0(self) -> float:
        return float(self.t[0])

    @property
    def t1(self) -> float:
        return float(self.t[-1])

    @property
    def states(self) -> np.ndarray:
        return self.y[:, :3]

    @property
    def final(self) -> np.ndarray:
        return self.y[-1, :3].copy()

    def fundamental(self, i: int = -1) -> np.ndarray:
        if self.dim != 12:
            raise ValueError("trajectory carries no fundamental matrix")
        return self.y[i, 3:].reshape(3, 3).copy()

    def _locate(self, t):
        n = len(self.t)
        i = np.clip(np.searchsorted(self.t, t, side="right") - 1, 0, max(n - 2, 0))
        h = self.t[np.minimum(i + 1, n - 1)] - self.t[i]
        with np.errstate(invalid="ignore", divide="ignore"):
            theta = np.where(h > 0, (t - self.t[i]) / np.where(h > 0, h, 1.0), 0.0)
        return i, theta

    def __call__(self, t, full: bool = False) -> np.ndarray:
        """Interpolated state(s) at time(s) ``t``; node times return stored samples."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        if np.any(t < self.t[0]) or np.any(t > self.t[-1]):
            raise ValueError(f"t outside trajectory range [{self.t0}, {self.t1}]")
        cols = slice(None) if full else slice(0, 3)
        if len(self.t) == 1:
            out = np.repeat(self.y[:1, cols], t.shape[0], axis=0)
        else:
            i, theta = self._locate(t)
            out = self._eval(i, theta)[:, cols]
            at_end = t == self.t[-1]
            out[at_end] = self.y[-1, cols]
        return out[0] if scalar else out

    def _eval(self, i, theta) -> np.ndarray:
        d = self.dense[i]
        th = np.asarray(theta)[:, None]
        poly = d[:, 3]
        for j in (2, 1, 0):
            poly = poly * th + d[:, j]
        return self.y[i] + poly * th

    def sample(self, per_step: int = 4) -> tuple[np.ndarray, np.ndarray]:
        """Nodes plus ``per_step - 1`` interior dense-output points in every step."""
        if len(self.t) == 1 or per_step <= 1:
            return self.t.copy(), self.states.copy()
        m = len(self.t) - 1
        theta = np.arange(per_step) / per_step
        i = np.repeat(np.arange(m), per_step)
        th = np.tile(theta, m)
        h = np.diff(self.t)
        ts = self.t[i] + th * h[i]
        ys = self._eval(i, th)[:, :3]
        return np.r_[ts, self.t[-1]], np.vstack([ys, self.y[-1:, :3]])

    def to_csv(self, fh=None, per_step: int = 1) -> str | None:
        t, s = self.sample(per_step)
        return write_csv(fh, t, s)


def write_csv(fh, t, states) -> str | None:
    """``t,x,y,z`` rows with 17 significant digits; returns text when ``fh`` is None."""
    data = np.column_stack([np.asarray(t, dtype=float), np.asarray(states, dtype=float)[:, :3]])
    buf = io.StringIO()
    buf.write("t,x,y,z\n")
    for row in data:
        buf.write(",".join(format(v, ".17g") for v in row))
        buf.write("\n")
    text = buf.getvalue()
    if fh is None:
        return text
    if isinstance(fh, (str, bytes)) or hasattr(fh, "__fspath__"):
        with open(fh, "w", newline="\n", encoding="utf-8") as f:
            f.write(text)
    else:
        fh.write(text)
    return None


@dataclass(frozen=True)
class EventSpec:
    """Scalar event function on states.

    ``g`` must accept an array of shape ``(..., 3)`` and return the matching
    leading shape, so it can be applied to all nodes of a step at once.
    """

    g: Callable[[np.ndarray], np.ndarray]
    direction: str = BOTH
    terminal: bool = False

    def __post_init__(self):
        if self.direction not in (RISING, FALLING, BOTH):
            raise ValueError(f"direction must be rising, falling or both, got {self.direction!r}")

    @classmethod
    def coordinate(cls, index: int, level: float = 0.0, direction: str = BOTH, terminal: bool = False):
        """Event ``s[index] - level``."""

        def g(s, _i=index, _c=level):
            return np.asarray(s)[..., _i] - _c

        return cls(g, direction, terminal)


class Event(NamedTuple):
    t: float
    state: np.ndarray
    index: int
    full: np.ndarray  # state plus fundamental matrix when integrating the variational flow


_CAP0 = 512
_CAP_MAX = 65536


def _check_status(status, t, cfg):
    if status == _dp5.STATUS_UNDERFLOW:
        raise StepSizeUnderflow(f"step size underflow at t={t:.17g}")
    if status == _dp5.STATUS_NONFINITE:
        raise IntegrationError(f"non-finite state at t={t:.17g}")


def _run_segment(kind, par, sign, y0, t0, t1, cfg: IntegratorConfig, clamp, h=0.0):
    """Integrate exactly to ``t1`` and return (ts, ys, dense, h_next, diag)."""
    ts, ys, ds = [np.array([t0])], [y0[None, :]], []
    diag = Diagnostics()
    y, t = y0, t0
    cap = _CAP0
    while True:
        room = cfg.max_steps - diag.n_steps
        if room <= 0:
            raise StepLimitExceeded(f"max_steps={cfg.max_steps} exhausted at t={t:.17g}")
        status, n, tt, yy, dd, h, nrej, ncl, mn = _dp5.solve(
            kind, par, sign, y, t, t1, h, cfg.rel_tol, cfg.abs_tol, cfg.max_step, min(cap, room), clamp
        )
        diag.merge(Diagnostics(n, nrej, ncl, mn))
        if n:
            ts.append(tt[1 : n + 1])
            ys.append(yy[1 : n + 1])
            ds.append(dd[:n])
            t, y = tt[n], yy[n].copy()
        _check_status(status, t, cfg)
        if status == _dp5.STATUS_DONE:
            break
        cap = min(2 * cap, _CAP_MAX)
    n = y0.shape[0]
    dense = np.concatenate(ds) if ds else np.empty((0, 4, n))
    return np.concatenate(ts), np.concatenate(ys), dense, h, diag


def _point(kind, par, sign, y0, t0, t1, cfg, clamp):
    if t1 <= t0:
        return y0.copy(), np.array([t0]), y0[None, :], np.empty((0, 4, y0.shape[0]))
    ts, ys, ds, _, _ = _run_segment(kind, par, sign, y0, t0, t1, cfg, clamp, h=t1 - t0)
    return ys[-1].copy(), ts, ys, ds


def _crossings(gv: np.ndarray, direction: str) -> np.ndarray:
    a, b = gv[:-1], gv[1:]
    rising = (a < 0) & (b >= 0)
    falling = (a > 0) & (b <= 0)
    if direction == RISING:
        mask = rising
    elif direction == FALLING:
        mask = falling
    else:
        mask = rising | falling
    return np.nonzero(mask)[0]


def _localize(kind, par, sign, ev: EventSpec, ts, ys, ds, i, cfg, clamp, tol=1e-13):
    """Root of ``g`` inside step ``i``; the state is re-integrated from node ``i``."""
    h = ts[i + 1] - ts[i]
    yi, di = ys[i], ds[i]

    def interp(th):
        poly = di[3]
        for j in (2, 1, 0):
            poly = poly * th + di[j]
        return yi + poly * th

    def gth(th):
        return float(ev.g(interp(th)[:3]))

    g0, g1 = gth(0.0), float(ev.g(ys[i + 1][:3]))
    if g0 == 0.0:
        th = 0.0
    elif np.sign(g0) == np.sign(gth(1.0)):
        # interpolant disagrees with node sign; fall back to secant on nodes
        th = g0 / (g0 - g1)
    else:
        th = brentq(gth, 0.0, 1.0, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=200)
    t_star = ts[i] + th * h
    seg = _point(kind, par, sign, yi, ts[i], t_star, cfg, clamp)
    gv = float(ev.g(seg[0][:3]))
    dth = 1e-6
    for _ in range(4):
        if abs(gv) < tol:
            break
        lo, hi = max(th - dth, 0.0), min(th + dth, 1.0)
        slope = (gth(hi) - gth(lo)) / ((hi - lo) * h)
        if slope == 0.0:
            break
        t_star = t_star - gv / slope
        t_star = min(max(t_star, ts[i]), ts[i + 1])
        th = (t_star - ts[i]) / h
        seg = _point(kind, par, sign, yi, ts[i], t_star, cfg, clamp)
        gv = float(ev.g(seg[0][:3]))
    return t_star, seg


def _integrate(
    kind,
    p: Params,
    y0,
    t_end,
    cfg: IntegratorConfig,
    events: Sequence[EventSpec] = (),
    t0: float = 0.0,
    sign: float = 1.0,
    clamp: bool | None = None,
):
    if clamp is None:
        clamp = sign > 0
    y0 = np.array(y0, dtype=float)
    if not np.all(np.isfinite(y0)):
        raise ValueError("initial state must be finite")
    if t_end < t0:
        raise ValueError("t_end must not precede t0")
    par = p.as_array()
    if t_end == t0:
        return Trajectory([t0], y0[None, :], np.empty((0, 4, y0.shape[0]))), []

    g_prev = None
    if events:
        g_prev = []
        for ev in events:
            g = float(ev.g(y0[:3]))
            # a start exactly on a section is not reported as a crossing
            g_prev.append(0.0 if abs(g) <= 1e-14 * max(1.0, float(np.max(np.abs(y0[:3])))) else g)

    ts_all, ys_all, ds_all = [np.array([t0])], [y0[None, :]], []
    found: list[Event] = []
    diag = Diagnostics()
    t, y, h = t0, y0, 0.0
    cap = _CAP0
    done = False
    while not done:
        room = cfg.max_steps - diag.n_steps
        if room <= 0:
            raise StepLimitExceeded(f"max_steps={cfg.max_steps} exhausted at t={t:.17g}")
        status, n, tt, yy, dd, h, nrej, ncl, mn = _dp5.solve(
            kind, par, sign, y, t, t_end, h, cfg.rel_tol, cfg.abs_tol, cfg.max_step, min(cap, room), clamp
        )
        diag.merge(Diagnostics(n, nrej, ncl, mn))
        cap = min(2 * cap, _CAP_MAX)
        tt, yy, dd = tt[: n + 1], yy[: n + 1], dd[:n]
        if events and n:
            hits = []
            for e_idx, ev in enumerate(events):
                gv = np.asarray(ev.g(yy[:, :3]), dtype=float)
                gv[0] = g_prev[e_idx]
                g_prev[e_idx] = gv[-1]
                for i in _crossings(gv, ev.direction):
                    hits.append((i, e_idx))
            hits.sort()
            stop_at = None
            for i, e_idx in hits:
                ev = events[e_idx]
                if stop_at is not None and i > stop_at[0]:
                    break
                t_star, seg = _localize(kind, par, sign, ev, tt, yy, dd, i, cfg, clamp)
                found.append(Event(float(t_star), seg[0][:3].copy(), e_idx, seg[0].copy()))
                if ev.terminal and (stop_at is None or t_star < stop_at[1]):
                    stop_at = (i, t_star, seg)
            if stop_at is not None:
                i, t_star, seg = stop_at
                found = [e for e in found if e.t <= t_star]
                found.sort(key=lambda e: e.t)
                _, seg_t, seg_y, seg_d = seg
                ts_all.append(np.r_[tt[1 : i + 1], seg_t[1:]])
                ys_all.append(np.vstack([yy[1 : i + 1], seg_y[1:]]))
                ds_all.append(np.concatenate([dd[:i], seg_d]))
                break
        if n:
            ts_all.append(tt[1:])
            ys_all.append(yy[1:])
            ds_all.append(dd)
            t, y = tt[n], yy[n].copy()
        _check_status(status, t, cfg)
        done = status == _dp5.STATUS_DONE
    found.sort(key=lambda e: e.t)
    ts = np.concatenate(ts_all)
    ys = np.concatenate(ys_all)
    ds = np.concatenate(ds_all) if ds_all else np.empty((0, 4, y0.shape[0]))
    # a localized terminal point can coincide with the node before it
    keep = np.r_[True, np.diff(ts) > 0]
    if not keep.all():
        idx = np.nonzero(keep)[0]
        ts, ys = ts[idx], ys[idx]
        ds = ds[idx[1:] - 1]
    return Trajectory(ts, ys, ds, diag), found


def integrate(p: Params, s0, t_end: float, cfg: IntegratorConfig | None = None, t0: float = 0.0) -> Trajectory:
    """Integrate the model from ``s0`` over ``[t0, t_end]``.

    Roundoff excursions below zero are clamped to zero; the trajectory's
    diagnostics record how many and the most negative pre-clamp value.
    """
    traj, _ = _integrate(0, p, s0, t_end, cfg or IntegratorConfig(), t0=t0)
    return traj


def integrate_with_events(
    p: Params,
    s0,
    t_end: float,
    cfg: IntegratorConfig | None = None,
    events: Sequence[EventSpec] = (),
    t0: float = 0.0,
    reverse: bool = False,
) -> tuple[Trajectory, list[Event]]:
    """Integrate and report every matching sign change of each event function.

    With ``reverse=True`` the reversed field ``-f`` is integrated (time still
    increases); no clamping is applied in that case since backward orbits may
    leave the octant.
    """
    return _integrate(0, p, s0, t_end, cfg or IntegratorConfig(), events, t0, -1.0 if reverse else 1.0)


def integrate_variational(
    p: Params,
    s0,
    t_end: float,
    cfg: IntegratorConfig | None = None,
    events: Sequence[EventSpec] = (),
    t0: float = 0.0,
) -> tuple[Trajectory, np.ndarray] | tuple[Trajectory, np.ndarray, list[Event]]:
    """Integrate the state with its fundamental matrix, Phi' = Df Phi, Phi(t0) = I.

    Returns ``(trajectory, Phi(t_end))``; when ``events`` are given the list
    of events is appended and the run may stop early on a terminal event.
    """
    y0 = np.r_[np.asarray(s0, dtype=float), np.eye(3).ravel()]
    traj, found = _integrate(1, p, y0, t_end, cfg or IntegratorConfig(), events, t0)
    phi = traj.fundamental(-1)
    if events:
        return traj, phi, found
    return traj, phi


def _component_integral(traj: Trajectory, comp: int, a: float, b: float) -> float:
    """Exact integral of the piecewise-quartic interpolant over [a, b]."""
    t, y, d = traj.t, traj.y[:, comp], traj.dense[:, :, comp]
    if len(t) == 1:
        return 0.0
    h = np.diff(t)
    lo = np.clip((a - t[:-1]) / h, 0.0, 1.0)
    hi = np.clip((b - t[:-1]) / h, 0.0, 1.0)
    sel = hi > lo
    lo, hi, hs, yi, di = lo[sel], hi[sel], h[sel], y[:-1][sel], d[sel]
    acc = yi * (hi - lo)
    for j in range(4):
        acc = acc + di[:, j] * (hi ** (j + 2) - lo ** (j + 2)) / (j + 2)
    return float(np.sum(hs * acc))


def _callable_integral(traj: Trajectory, fn, a: float, b: float, per_step: int = 8) -> float:
    t = traj.t
    i0 = int(np.searchsorted(t, a, side="right"))
    i1 = int(np.searchsorted(t, b, side="left"))
    nodes = np.r_[a, t[i0:i1], b]
    nodes = nodes[np.r_[True, np.diff(nodes) > 0]]
    frac = np.arange(per_step) / per_step
    grid = (nodes[:-1, None] + frac[None, :] * np.diff(nodes)[:, None]).ravel()
    grid = np.r_[grid, b]
    vals = np.asarray(fn(traj(grid)), dtype=float)
    return float(np.trapezoid(vals, grid)) if hasattr(np, "trapezoid") else float(np.trapz(vals, grid))


_COMPONENTS = {"x": 0, "y": 1, "z": 2}


def integral(traj: Trajectory, component, window: tuple[float, float] | None = None) -> float:
    """Integral of a component (index or ``'x'/'y'/'z'``) or of ``fn(states)`` over a window.

    Components are integrated exactly on the dense-output polynomials;
    callables use composite trapezoids on 8 dense points per step.
    """
    a, b = (traj.t0, traj.t1) if window is None else (float(window[0]), float(window[1]))
    if not (traj.t0 <= a <= b <= traj.t1):
        raise ValueError(f"window [{a}, {b}] outside trajectory range [{traj.t0}, {traj.t1}]")
    if callable(component):
        return _callable_integral(traj, component, a, b)
    comp = _COMPONENTS.get(component, component)
    return _component_integral(traj, int(comp), a, b)


def time_average(traj: Trajectory, component, window: tuple[float, float] | None = None) -> float:
    a, b = (traj.t0, traj.t1) if window is None else (float(window[0]), float(window[1]))
    if not b > a:
        raise ValueError("empty averaging window")
    return integral(traj, component, (a, b)) / (b - a)


def concat(trajs: Sequence[Trajectory]) -> Trajectory:
    """Join trajectories whose end and start nodes coincide."""
    trajs = [tr for tr in trajs if tr is not None]
    if not trajs:
        raise ValueError("nothing to concatenate")
    ts, ys, ds = [trajs[0].t], [trajs[0].y], [trajs[0].dense]
    diag = Diagnostics()
    diag.merge(trajs[0].diagnostics)
    for prev, tr in zip(trajs, trajs[1:]):
        if tr.t0 != prev.t1:
            raise ValueError(f"gap between trajectories at t={prev.t1} / {tr.t0}")
        ts.append(tr.t[1:])
        ys.append(tr.y[1:])
        ds.append(tr.dense)
        diag.merge(tr.diagnostics)
    return Trajectory(np.concatenate(ts), np.concatenate(ys), np.concatenate(ds), diag)
