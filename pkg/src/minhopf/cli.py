"""Command-line front end.

Exit codes: 0 success, 1 a verification check failed, 2 bad configuration or
parameters outside the command's regime, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bendixson import CertificateConfig, q2_bar
from .globaldyn import (
    attractor_bound,
    invariant_box_default,
    manifold_report,
    persistence_floor,
    ratio_liminf_check,
    trace_stable_manifold_E,
    trace_unstable_manifold_origin,
    verify_absorption,
    verify_forward_invariance,
)
from .integrate import IntegrationError, IntegratorConfig, integrate, time_average, write_csv
from .model import (
    OriginalParams,
    Params,
    Regime,
    classify_regime,
    equilibria,
    interior_equilibrium,
    jacobian,
    scale_from_original,
)
from .orbits import NewtonFailure, find_periodic_orbit, orbit_census, orbit_samples
from .reports import Check, VerificationReport, dumps
from .spectral import RegimeMismatch, classify_equilibrium, eigvals3, hopf_point

log = logging.getLogger("minhopf")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# --- configuration -----------------------------------------------------------

def read_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; dashes in keys become underscores."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_").lstrip("_")] = value
    return out


def params_from_args(a) -> Params:
    original = [a.k1, a.k2, a.k4, a.A]
    if a.k is not None and any(v is not None for v in original):
        raise ConfigError("give either --k (scaled) or --k1/--k2/--k4/--A (original), not both")
    if a.k3 is None or a.k5 is None:
        raise ConfigError("--k3 and --k5 are required")
    try:
        if a.k is not None:
            return Params(a.k, a.k3, a.k5)
        if all(v is not None for v in original):
            p, _ = scale_from_original(OriginalParams(a.k1, a.k2, a.k3, a.k4, a.k5, a.A))
            return p
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError("parameters missing: give --k, or all of --k1 --k2 --k4 --A")


def integrator_from_args(a) -> IntegratorConfig:
    try:
        return IntegratorConfig(rel_tol=a.rtol, abs_tol=a.atol)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def jobs_from_args(a) -> int:
    if a.jobs:
        return a.jobs
    env = os.environ.get("HOPF_VERIFIER_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"HOPF_VERIFIER_JOBS={env!r} is not an integer") from exc
    return os.cpu_count() or 1


def _emit(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)


def _outdir(a) -> Path:
    d = Path(a.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


# --- commands ----------------------------------------------------------------

def cmd_simulate(a) -> int:
    p = params_from_args(a)
    cfg = integrator_from_args(a)
    s0 = np.array([a.x0, a.y0, a.z0], dtype=float)
    if np.any(s0 < 0) or not np.all(np.isfinite(s0)):
        raise ConfigError("initial state must be finite and nonnegative")
    if not a.t_end > 0:
        raise ConfigError("--t-end must be positive")
    traj = integrate(p, s0, a.t_end, cfg)
    out = _outdir(a)
    traj.to_csv(out / "trajectory.csv", per_step=a.per_step)
    window = (a.t_end * (1 - a.tail_fraction), a.t_end)
    summary = {
        "params": p.to_dict(),
        "regime": classify_regime(p).value,
        "initial_state": s0,
        "t_end": a.t_end,
        "final_state": traj.final,
        "tail_window": list(window),
        "tail_averages": {c: time_average(traj, c, window) for c in "xyz"},
        "n_steps": traj.diagnostics.n_steps,
        "n_clamped": traj.diagnostics.n_clamped,
        "min_pre_clamp": traj.diagnostics.min_pre_clamp,
    }
    text = dumps(summary)
    _emit(text, out / "summary.json")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_equilibria(a) -> int:
    p = params_from_args(a)
    rows = []
    for e in equilibria(p):
        st = classify_equilibrium(p, np.asarray(e))
        rows.append(
            {
                "state": list(e),
                "stability": st.stability.value,
                "eigenvalues": list(st.spectrum.roots),
                "routh_hurwitz_stable": st.routh_hurwitz,
                "agrees": st.agrees,
            }
        )
    kh, om = hopf_point(p.k3, p.k5)
    doc = {"params": p.to_dict(), "regime": classify_regime(p).value, "hopf_k": kh, "hopf_omega": om, "equilibria": rows}
    _emit(dumps(doc), Path(a.json) if a.json else None)
    return EXIT_OK


def _check_decay(p, starts, T, cfg, tol=1e-6) -> Check:
    finals = [float(np.linalg.norm(integrate(p, s, T, cfg).final)) for s in starts]
    return Check("decay_to_origin", max(finals) < tol, max(finals), 0.0, tol, p.to_dict(),
                 detail={"horizon": T, "n_starts": len(starts)})


def _check_converge_E(p, starts, T, cfg, tol=1e-6) -> Check:
    e = interior_equilibrium(p)
    d = [float(np.linalg.norm(integrate(p, s, T, cfg).final - e)) for s in starts]
    return Check("convergence_to_E", max(d) < tol, max(d), 0.0, tol, p.to_dict(),
                 detail={"horizon": T, "n_starts": len(starts)})


def _check_equilibrium(p, name, e, expect) -> Check:
    st = classify_equilibrium(p, e)
    return Check(name, st.stability.value == expect and st.agrees, st.stability.value, expect, None, p.to_dict(),
                 detail={"eigenvalues": list(st.spectrum.roots), "routh_hurwitz_stable": st.routh_hurwitz})


def _time_average_checks(p, starts, cfg, T=2000.0, tol=1e-3) -> Check:
    worst = 0.0
    for s in starts:
        tr = integrate(p, s, T, cfg)
        worst = max(worst, max(abs(time_average(tr, c, (T / 2, T)) - p.k) for c in "xyz"))
    return Check("time_average_tail", worst < tol, worst, 0.0, tol, p.to_dict(), detail={"horizon": T})


def build_verify_report(p: Params, a) -> VerificationReport:
    cfg = integrator_from_args(a)
    jobs = jobs_from_args(a)
    rng = np.random.default_rng(a.seed)
    regime = classify_regime(p)
    rep = VerificationReport(meta={"params": p.to_dict(), "regime": regime.value, "seed": a.seed})
    starts = rng.uniform(0.05, 10.0, (a.starts, 3))

    def add(check: Check, seconds: float | None = None):
        if a.timing:
            check.runtime_seconds = seconds
        rep.add(check)

    def timed(fn, *args, **kw):
        t0 = time.perf_counter()
        out = fn(*args, **kw)
        dt = time.perf_counter() - t0
        if isinstance(out, Check):
            add(out, dt)
        elif isinstance(out, VerificationReport):
            for c in out.checks:
                add(c, dt)
        return out

    if regime is Regime.GLOBAL_DECAY:
        timed(_check_decay, p, starts, 200.0, cfg)
        return rep

    M = attractor_bound(p)
    box = invariant_box_default(p)
    add(Check("extremal_box_K_equals_M", abs(box.K - M) <= 1e-12 * M, box.K, M, 1e-12, p.to_dict()))
    timed(verify_absorption, p, n_starts=a.absorption_starts, cfg=cfg, seed=a.seed, jobs=jobs)
    timed(verify_forward_invariance, p, box, n_samples=a.samples, cfg=cfg, seed=a.seed, jobs=jobs)
    eta = persistence_floor(p, cfg=cfg, jobs=jobs)
    add(Check("persistence_floor", eta > 1e-9, eta, 0.0, 1e-9, p.to_dict()))
    rc = ratio_liminf_check(p, starts[0], cfg=cfg)
    add(Check("ratio_liminf", rc.passed, [rc.zx_inf, rc.yx_inf], [rc.zx_floor, rc.yx_floor], rc.tolerance, p.to_dict()))

    if regime is Regime.HOPF_BOUNDARY:
        kh, om = hopf_point(p.k3, p.k5)
        spectrum = eigvals3(jacobian(p, interior_equilibrium(p)))
        im = max(abs(r.imag) for r in spectrum.roots)
        ok = abs(spectrum.max_real) < 1e-8 and abs(im - om) < 1e-8
        add(Check("hopf_marginal_pair", ok, [spectrum.max_real, im], [0.0, om], 1e-8, p.to_dict()))
        return rep

    e = interior_equilibrium(p)
    add(_check_equilibrium(p, "origin_unstable", np.zeros(3), "Unstable"))
    if regime is Regime.STABLE_INTERIOR:
        add(_check_equilibrium(p, "E_stable", e, "Stable"))
        timed(_check_converge_E, p, starts, 1000.0, cfg)
        timed(_time_average_checks, p, starts[:2], cfg)
        um = trace_unstable_manifold_origin(p, cfg=cfg)
        add(Check("unstable_manifold_origin_reaches_E", um.limit == "equilibrium" and um.tail_distance < 1e-6,
                  um.tail_distance, 0.0, 1e-6, p.to_dict()))
        cert = q2_bar(p, CertificateConfig(eta=eta), cfg, jobs=jobs)
        add(Check("bendixson_certificate", cert.passed, cert.q2_bar, -1e-3, None, p.to_dict(),
                  detail={"epsilon": cert.epsilon, "horizon": cert.horizon, "n_starts": cert.n_starts}))
        return rep

    # oscillatory
    add(_check_equilibrium(p, "E_unstable", e, "Unstable"))
    cert = q2_bar(p)
    add(Check("bendixson_not_applicable", not cert.applicable, cert.reason, None, None, p.to_dict()))
    pu, pl = trace_stable_manifold_E(p)
    for c in manifold_report(p, pu, pl).checks:
        add(c)
    orb = find_periodic_orbit(p)
    fl = orb.floquet
    add(Check("orbit_closure", orb.closure < 1e-9, orb.closure, 0.0, 1e-9, p.to_dict(),
              detail={"period": orb.period, "section_point": orb.section_point}))
    add(Check("floquet_trivial_multiplier", abs(fl.trivial - 1) < 1e-6, abs(fl.trivial - 1), 0.0, 1e-6, p.to_dict()))
    add(Check("orbit_stable", orb.max_nontrivial_modulus < 1.0, orb.max_nontrivial_modulus, 1.0, None, p.to_dict(),
              detail={"multipliers": list(orb.multipliers)}))
    add(Check("floquet_liouville", fl.liouville_abs_error < 1e-6, fl.liouville_abs_error, 0.0, 1e-6, p.to_dict(),
              detail={"relative_error": fl.liouville_rel_error}))
    _, ys, traj = orbit_samples(p, orb)
    avg = [time_average(traj, c) for c in "xyz"]
    dev = max(abs(v - p.k) for v in avg)
    add(Check("orbit_time_average", dev < 1e-6, dev, 0.0, 1e-6, p.to_dict(), detail={"averages": avg}))
    census = orbit_census(p, a.census_starts, seed=a.seed, eta=eta, jobs=jobs)
    add(Check("orbit_census", len(census) >= 1, len(census), None, None, p.to_dict(),
              detail={"n_starts": a.census_starts, "note": "count is numerical evidence only"}))
    um = trace_unstable_manifold_origin(p, cfg=cfg)
    tail = um.trajectory.sample(4)
    sel = tail[0] >= um.tail_start
    dmin = float(np.min(np.linalg.norm(tail[1][sel] - e, axis=1)))
    gap = float(np.linalg.norm(um.section_point - orb.state))
    add(Check("unstable_manifold_origin_to_orbit", um.limit == "periodic_orbit" and gap < 1e-4 and dmin > 0.1,
              [gap, dmin], [1e-4, 0.1], None, p.to_dict()))
    return rep


def cmd_verify(a) -> int:
    p = params_from_args(a)
    rep = build_verify_report(p, a)
    _emit(dumps(rep.to_dict()), Path(a.json) if a.json else None)
    for c in rep.failed():
        log.error("check failed: %s (measured %s)", c.check_name, c.measured)
    return EXIT_OK if rep.passed else EXIT_FAIL


SWEEP_COLUMNS = ["k", "regime", "max_re_eig_E", "orbit_period", "orbit_amplitude_x", "census_count", "error"]


def _sweep_row(p: Params, census_starts: int, seed: int) -> dict:
    row = {"k": p.k, "regime": classify_regime(p).value, "max_re_eig_E": "", "orbit_period": "",
           "orbit_amplitude_x": "", "census_count": "", "error": ""}
    try:
        if p.k > 0:
            row["max_re_eig_E"] = eigvals3(jacobian(p, interior_equilibrium(p))).max_real
        if classify_regime(p) is Regime.OSCILLATORY:
            orb = find_periodic_orbit(p)
            _, ys, _ = orbit_samples(p, orb)
            row["orbit_period"] = orb.period
            row["orbit_amplitude_x"] = float(ys[:, 0].max() - ys[:, 0].min())
            if census_starts:
                row["census_count"] = len(orbit_census(p, census_starts, seed=seed, jobs=1))
    except (IntegrationError, NewtonFailure, RegimeMismatch, ValueError) as exc:
        row["error"] = f"{type(exc).__name__}: {exc}".replace(",", ";").replace("\n", " ")
    return row


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def cmd_sweep(a) -> int:
    if a.k_step <= 0 or a.k_max < a.k_min:
        raise ConfigError("need k_step > 0 and k_max >= k_min")
    if a.k3 is None or a.k5 is None:
        raise ConfigError("--k3 and --k5 are required")
    n = int(math.floor((a.k_max - a.k_min) / a.k_step + 1e-9)) + 1
    ks = [a.k_min + i * a.k_step for i in range(n)]
    try:
        ps = [Params(k, a.k3, a.k5) for k in ks]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    jobs = jobs_from_args(a)

    def work(p):
        return _sweep_row(p, a.census_starts, a.seed)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            rows = list(ex.map(work, ps))
    else:
        rows = [work(p) for p in ps]
    lines = [",".join(SWEEP_COLUMNS)] + [",".join(_fmt(r[c]) for c in SWEEP_COLUMNS) for r in rows]
    _emit("\n".join(lines) + "\n", Path(a.csv) if a.csv else None)
    return EXIT_OK


def cmd_manifold(a) -> int:
    p = params_from_args(a)
    if not p.k > p.k3 + p.k5:
        raise RegimeMismatch(
            f"the stable manifold of E is one-dimensional only for k > k3 + k5 = {p.k3 + p.k5:g}; got k = {p.k:g}"
        )
    pu, pl = trace_stable_manifold_E(p)
    out = _outdir(a)
    pu.to_csv(out / "p_u.csv")
    pl.to_csv(out / "p_l.csv")
    doc = {
        "params": p.to_dict(),
        "p_u": {"endpoint": pu.endpoint, "audit": pu.audit, "pass": pu.passed},
        "p_l": {"endpoint": pl.endpoint, "audit": pl.audit, "pass": pl.passed},
    }
    text = dumps(doc)
    _emit(text, out / "manifold.json")
    sys.stdout.write(text)
    return EXIT_OK if pu.passed and pl.passed else EXIT_FAIL


def cmd_orbit(a) -> int:
    p = params_from_args(a)
    orb = find_periodic_orbit(p)
    out = _outdir(a)
    t, ys, _ = orbit_samples(p, orb, n=1000)
    write_csv(out / "orbit.csv", t, ys)
    doc = orb.to_dict()
    if a.census_starts:
        doc["census_count"] = len(orbit_census(p, a.census_starts, seed=a.seed, jobs=jobs_from_args(a)))
    text = dumps(doc)
    _emit(text, out / "orbit.json")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_bendixson(a) -> int:
    p = params_from_args(a)
    cert = q2_bar(p, CertificateConfig(epsilon=a.epsilon, horizon=a.horizon, grid_n=a.grid),
                  integrator_from_args(a), jobs=jobs_from_args(a))
    doc = cert.to_dict()
    if not cert.applicable:
        doc["applicable"] = False
        doc["reason"] = cert.reason
    _emit(dumps(doc), Path(a.json) if a.json else None)
    if not cert.applicable:
        return EXIT_CONFIG
    return EXIT_OK if cert.passed else EXIT_FAIL


# --- parser ------------------------------------------------------------------

def _common(sp: argparse.ArgumentParser, params: bool = True) -> None:
    sp.add_argument("--config", help="key=value file; command-line flags override it")
    if params:
        g = sp.add_argument_group("parameters (scaled, or original rate constants)")
        g.add_argument("--k", type=float)
        g.add_argument("--k1", type=float)
        g.add_argument("--k2", type=float)
        g.add_argument("--k4", type=float)
        g.add_argument("--A", type=float)
    sp.add_argument("--k3", type=float)
    sp.add_argument("--k5", type=float)
    sp.add_argument("--rtol", type=float, default=1e-10)
    sp.add_argument("--atol", type=float, default=1e-12)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--jobs", type=int, default=0, help="worker threads (default: $HOPF_VERIFIER_JOBS or all cores)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="minhopf", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    ap.subcommands = sub.choices

    sp = sub.add_parser("simulate", help="integrate one trajectory, write CSV and summary JSON")
    _common(sp)
    sp.add_argument("--x0", type=float, default=1.0)
    sp.add_argument("--y0", type=float, default=1.0)
    sp.add_argument("--z0", type=float, default=1.0)
    sp.add_argument("--t-end", type=float, default=100.0)
    sp.add_argument("--tail-fraction", type=float, default=0.5)
    sp.add_argument("--per-step", type=int, default=1, help="dense-output points per accepted step in the CSV")
    sp.add_argument("--out", default=".")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("equilibria", help="equilibria, their spectra and the regime")
    _common(sp)
    sp.add_argument("--json")
    sp.set_defaults(func=cmd_equilibria)

    sp = sub.add_parser("verify", help="run the regime-appropriate verification suite")
    _common(sp)
    sp.add_argument("--json", help="write the report here instead of stdout")
    sp.add_argument("--starts", type=int, default=10)
    sp.add_argument("--samples", type=int, default=1000, help="invariance samples")
    sp.add_argument("--absorption-starts", type=int, default=100)
    sp.add_argument("--census-starts", type=int, default=50)
    sp.add_argument("--timing", action="store_true", help="record runtimes (makes output non-reproducible)")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("sweep", help="bifurcation table over a k range")
    _common(sp, params=False)
    sp.add_argument("--k-min", type=float, required=False, default=1.5)
    sp.add_argument("--k-max", type=float, required=False, default=3.0)
    sp.add_argument("--k-step", type=float, default=0.05)
    sp.add_argument("--census-starts", type=int, default=8)
    sp.add_argument("--csv", help="write the table here instead of stdout")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("manifold", help="stable manifold branches of E (k > k3 + k5)")
    _common(sp)
    sp.add_argument("--out", default=".")
    sp.set_defaults(func=cmd_manifold)

    sp = sub.add_parser("orbit", help="locate the periodic orbit and its Floquet multipliers")
    _common(sp)
    sp.add_argument("--census-starts", type=int, default=0)
    sp.add_argument("--out", default=".")
    sp.set_defaults(func=cmd_orbit)

    sp = sub.add_parser("bendixson", help="compound-matrix certificate excluding periodic orbits")
    _common(sp)
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--horizon", type=float, default=2000.0)
    sp.add_argument("--grid", type=int, default=4)
    sp.add_argument("--json")
    sp.set_defaults(func=cmd_bendixson)
    return ap


def parse_args(argv=None) -> argparse.Namespace:
    ap = build_parser()
    a = ap.parse_args(argv)
    if getattr(a, "config", None):
        try:
            values = read_config_file(a.config)
        except OSError as exc:
            raise ConfigError(f"cannot read config {a.config}: {exc}") from exc
        sp = ap.subcommands[a.command]
        known = {act.dest for act in sp._actions}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        sp.set_defaults(**values)
        a = ap.parse_args(argv)
    return a


def main(argv=None) -> int:
    try:
        a = parse_args(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # argparse errors
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return a.func(a)
    except (ConfigError, RegimeMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, NewtonFailure) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
