"""Acceptance criteria at their stated tolerances.

Each test records one PASS/FAIL line, printed in the terminal summary.
"""
import math
import time

import numpy as np
import pytest

from minhopf.bendixson import CertificateConfig, b_matrix, lozinskii_max_norm, mu_b, q2_bar
from minhopf.cli import main
from minhopf.globaldyn import (
    attractor_bound,
    invariant_box_default,
    persistence_floor,
    trace_stable_manifold_E,
    trace_unstable_manifold_origin,
    verify_absorption,
    verify_forward_invariance,
)
from minhopf.integrate import IntegratorConfig, integrate, time_average
from minhopf.model import Params, interior_equilibrium, jacobian, second_additive_compound
from minhopf.orbits import ORBIT_CONFIG, find_periodic_orbit, orbit_census
from minhopf.spectral import eigvals3

pytestmark = pytest.mark.acceptance

P1 = Params(1.0, 1.0, 1.0)
P3 = Params(3.0, 1.0, 1.0)


def _draw_triple(rng, regime):
    k3, k5 = rng.uniform(0.5, 2.0, 2)
    kh = k3 + k5
    if regime == "a":
        # strictly negative: at k = 0 the decay is algebraic and cannot reach 1e-6 by T = 200
        k = rng.uniform(-2.0, -0.1)
    elif regime == "b":
        k = kh * rng.uniform(0.1, 0.8)
    else:
        k = kh * rng.uniform(1.1, 1.8)
    return Params(k, k3, k5)


def test_c01_regime_fidelity(record_criterion):
    rng = np.random.default_rng(20240601)
    cfg = IntegratorConfig()
    n_triples, n_starts = 200, 10
    worst = {"a": 0.0, "b": 0.0, "c": 0.0}
    fails = {"a": 0, "b": 0, "c": 0}
    t0 = time.perf_counter()
    for regime, tol in (("a", 1e-6), ("b", 1e-6), ("c", 1e-9)):
        for _ in range(n_triples):
            p = _draw_triple(rng, regime)
            for s in rng.uniform(0.1, 10.0, (n_starts, 3)):
                if regime == "a":
                    m = float(np.linalg.norm(integrate(p, s, 200.0, cfg).final))
                elif regime == "b":
                    m = float(np.linalg.norm(integrate(p, s, 1000.0, cfg).final - interior_equilibrium(p)))
                else:
                    # settle onto the attractor, then close the orbit by Newton on the return map
                    late = integrate(p, s, 200.0, cfg).final
                    try:
                        m = find_periodic_orbit(p, late, warmup=20).residual
                    except Exception:  # counted as a failure below
                        m = math.inf
                worst[regime] = max(worst[regime], m)
                fails[regime] += m >= tol
    elapsed = time.perf_counter() - t0
    ok = sum(fails.values()) == 0 and elapsed < 120.0
    record_criterion(
        1, ok,
        f"worst a={worst['a']:.2e} b={worst['b']:.2e} c={worst['c']:.2e}, "
        f"failures {fails}, {elapsed:.1f}s",
    )
    assert sum(fails.values()) == 0, fails
    assert elapsed < 120.0


def test_c02_time_average_identity(record_criterion):
    T = 2000.0
    s0 = np.array([2.0, 0.5, 1.5])
    tail_dev, period_dev = {}, {}
    for k in (0.5, 1.0, 3.0, 5.0):
        p = Params(k, 1.0, 1.0)
        traj = integrate(p, s0, T)
        tail_dev[k] = max(abs(time_average(traj, c, (T / 2, T)) - k) for c in "xyz")
        if k > 2.0:
            orb = find_periodic_orbit(p)
            one = integrate(p, orb.state, orb.period, ORBIT_CONFIG)
            period_dev[k] = max(abs(time_average(one, c) - k) for c in "xyz")
    ok_tail = all(v <= 1e-3 for v in tail_dev.values())
    ok_period = all(v <= 1e-6 for v in period_dev.values())
    record_criterion(
        2, ok_tail and ok_period,
        "tail " + " ".join(f"k={k:g}:{v:.1e}" for k, v in tail_dev.items())
        + " | period " + " ".join(f"k={k:g}:{v:.1e}" for k, v in period_dev.items()),
    )
    assert ok_period, period_dev
    assert ok_tail, tail_dev


def test_c03_attractor_bound(record_criterion):
    assert attractor_bound(P3) == 48.0
    chk = verify_absorption(P3, n_starts=100, box_factor=10.0, slack=1e-6, seed=3)
    record_criterion(3, chk.passed, f"tail max {chk.measured:.6f} <= 48 + 1e-6, "
                                    f"latest entry t={chk.detail['latest_entry_time']:.2f}")
    assert chk.passed


def test_c04_invariant_box(record_criterion):
    b = invariant_box_default(P3)
    assert (b.sigma, b.rho, b.K) == (0.25, 0.0625, 48.0)
    chk = verify_forward_invariance(P3, b, n_samples=1000, t_check=50.0, slack=1e-9, seed=4)
    rng = np.random.default_rng(44)
    worst_rel = 0.0
    for _ in range(100):
        p = Params(rng.uniform(0.05, 10), rng.uniform(0.1, 5), rng.uniform(0.1, 5))
        M = attractor_bound(p)
        worst_rel = max(worst_rel, abs(invariant_box_default(p).K - M) / M)
    ok = chk.passed and worst_rel <= 1e-12
    record_criterion(4, ok, f"worst margin {chk.measured:.2e} (>= -1e-9), max |K-M|/M {worst_rel:.1e}")
    assert chk.passed
    assert worst_rel <= 1e-12


def test_c05_persistence(record_criterion):
    eta3 = persistence_floor(P3)
    eta1 = persistence_floor(P1)
    ok = eta3 > 0 and abs(eta1 - 1.0) <= 1e-4
    record_criterion(5, ok, f"eta(3,1,1)={eta3:.6g}, eta(1,1,1)={eta1:.10f}")
    assert eta3 > 0
    assert abs(eta1 - 1.0) <= 1e-4


def test_c06_stable_manifold(record_criterion):
    pu, pl = trace_stable_manifold_E(P3, slack=1e-9, converge_tol=1e-8)
    eu, el = pu.endpoint, pl.endpoint
    ends = (eu[1] == 0 and 0 < eu[0] < 3 < eu[2]) and (el[2] == 0 and el[0] > 3 and el[1] > 3)
    ok = pu.passed and pl.passed and ends
    dist = max(pu.audit["forward_convergence"]["min_distance"], pl.audit["forward_convergence"]["min_distance"])
    record_criterion(
        6, ok,
        f"p_u end {np.round(eu, 6).tolist()}, p_l end {np.round(el, 6).tolist()}, terminal distance {dist:.1e}",
    )
    for br in (pu, pl):
        for name, a in br.audit.items():
            assert a["pass"], (br.label, name, a)
    assert ends


def _bisect_crossing(k3, k5, lo, hi, tol=1e-12):
    def g(k):
        p = Params(k, k3, k5)
        return eigvals3(jacobian(p, interior_equilibrium(p))).max_real

    glo = g(lo)
    assert glo < 0 < g(hi)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if g(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_c07_hopf_threshold(record_criterion):
    rng = np.random.default_rng(7)
    worst_k = worst_w = 0.0
    for _ in range(20):
        k3, k5 = rng.uniform(0.2, 5.0, 2)
        kh = k3 + k5
        kc = _bisect_crossing(k3, k5, 0.5 * kh, 1.5 * kh)
        p = Params(kc, k3, k5)
        im = max(abs(r.imag) for r in eigvals3(jacobian(p, interior_equilibrium(p))).roots)
        worst_k = max(worst_k, abs(kc - kh))
        worst_w = max(worst_w, abs(im - math.sqrt(k3 * k5)))
    ok = worst_k <= 1e-8 and worst_w <= 1e-8
    record_criterion(7, ok, f"max |k_c - (k3+k5)| {worst_k:.1e}, max ||Im| - sqrt(k3 k5)| {worst_w:.1e}")
    assert ok


def test_c08_orbit_quality(record_criterion):
    orb = find_periodic_orbit(P3)
    fl = orb.floquet
    near = find_periodic_orbit(Params(2.05, 1.0, 1.0))
    rel = abs(near.period - 2 * math.pi) / (2 * math.pi)
    ok = (
        abs(fl.trivial - 1) <= 1e-6
        and orb.max_nontrivial_modulus < 1
        and fl.liouville_abs_error <= 1e-6
        and rel <= 0.1
    )
    record_criterion(
        8, ok,
        f"|m0-1| {abs(fl.trivial - 1):.1e}, max|m| {orb.max_nontrivial_modulus:.6f}, "
        f"liouville {fl.liouville_abs_error:.1e}, period(2.05)={near.period:.4f} ({rel:.1%} from 2pi)",
    )
    assert ok


def test_c09_bendixson(record_criterion):
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(500):
        p = Params(rng.uniform(-5, 10), rng.uniform(0.1, 5), rng.uniform(0.1, 5))
        s = rng.uniform(1e-3, 50, 3)
        e = rng.uniform(1e-3, 0.499)
        worst = max(worst, abs(float(mu_b(p, s[0], e)) - lozinskii_max_norm(b_matrix(p, s, e))))
    cert = q2_bar(P1, CertificateConfig(epsilon=0.125))
    na = q2_bar(P3)
    ok = worst <= 1e-12 and cert.applicable and cert.q2_bar <= -0.1 and not na.applicable
    record_criterion(9, ok, f"closed form err {worst:.1e}, q2bar(1,1,1)={cert.q2_bar:.6f}, "
                            f"k=3 applicable={na.applicable}")
    assert ok


def test_c10_compound_spectrum(record_criterion):
    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(200):
        p = Params(rng.uniform(-5, 10), rng.uniform(0.1, 5), rng.uniform(0.1, 5))
        s = rng.uniform(0, 50, 3)
        lam = eigvals3(jacobian(p, s)).as_array()
        sums = [lam[0] + lam[1], lam[0] + lam[2], lam[1] + lam[2]]
        for mu in eigvals3(second_additive_compound(p, s)).as_array():
            worst = max(worst, min(abs(mu - x) for x in sums))
    record_criterion(10, worst <= 1e-8, f"max mismatch {worst:.1e}")
    assert worst <= 1e-8


def test_c11_unstable_manifold_connection(record_criterion):
    census = orbit_census(P3, n_starts=50)
    assert len(census) >= 1
    orb = census[0]
    um = trace_unstable_manifold_origin(P3)
    gap = float(np.linalg.norm(um.section_point - orb.state))
    t, ys = um.trajectory.sample(4)
    tail = ys[t >= um.tail_start]
    dmin = float(np.min(np.linalg.norm(tail - interior_equilibrium(P3), axis=1)))
    ok = um.limit == "periodic_orbit" and gap <= 1e-4 and dmin > 0.1
    record_criterion(11, ok, f"omega-limit gap {gap:.1e}, min distance to E on tail {dmin:.3f}, "
                             f"census orbits {len(census)}")
    assert ok


def test_c12_determinism(record_criterion, tmp_path, capsys):
    paths = [tmp_path / "a.json", tmp_path / "b.json"]
    codes = [main(["verify", "--k", "3", "--k3", "1", "--k5", "1", "--seed", "0", "--json", str(q)]) for q in paths]
    capsys.readouterr()
    same = paths[0].read_bytes() == paths[1].read_bytes()
    record_criterion(12, same, f"exit codes {codes}, byte-identical={same}")
    assert same
