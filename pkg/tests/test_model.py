import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from minhopf.model import (
    OriginalParams,
    Params,
    Regime,
    State,
    classify_regime,
    equilibria,
    hopf_tolerance,
    interior_equilibrium,
    jacobian,
    jacobian_sign_pattern,
    original_vector_field,
    scale_from_original,
    second_additive_compound,
    vector_field,
)

from .conftest import interior_states, params, rates


def compound_from_definition(j):
    """Second additive compound of a general 3x3 matrix, pairs (1,2), (1,3), (2,3)."""
    a = j
    return np.array(
        [
            [a[0, 0] + a[1, 1], a[1, 2], -a[0, 2]],
            [a[2, 1], a[0, 0] + a[2, 2], a[0, 1]],
            [-a[2, 0], a[1, 0], a[1, 1] + a[2, 2]],
        ]
    )


def fd_jacobian(f, s, h=1e-6):
    s = np.asarray(s, dtype=float)
    out = np.empty((3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = h * max(1.0, abs(s[j]))
        out[:, j] = (f(s + e) - f(s - e)) / (2 * e[j])
    return out


class TestValidation:
    @pytest.mark.parametrize("bad", [0.0, -1.0, math.nan, math.inf])
    def test_rates_must_be_positive(self, bad):
        with pytest.raises(ValueError):
            Params(1.0, bad, 1.0)
        with pytest.raises(ValueError):
            Params(1.0, 1.0, bad)

    def test_k_any_sign_but_finite(self):
        Params(-3.0, 1, 1)
        Params(0.0, 1, 1)
        with pytest.raises(ValueError):
            Params(math.nan, 1, 1)

    def test_state_nonnegative(self):
        assert np.array_equal(np.asarray(State(1, 2, 3)), [1, 2, 3])
        assert list(State(0, 0, 0)) == [0, 0, 0]
        with pytest.raises(ValueError):
            State(-1e-12, 0, 0)

    def test_original_params(self):
        op = OriginalParams(2.0, 1.0, 1.0, 0.5, 1.0, 3.0)
        assert op.k == pytest.approx(5.5)
        with pytest.raises(ValueError):
            OriginalParams(1, 1, 1, 1, 1, -1)
        with pytest.raises(ValueError):
            OriginalParams(1, 0, 1, 1, 1, 1)


@given(
    st.floats(0.1, 5), st.floats(0.1, 5), st.floats(0.1, 5), st.floats(0.1, 5), st.floats(0.1, 5),
    st.floats(0, 5), interior_states(),
)
def test_scaling_conjugates_original_field(k1, k2, k3, k4, k5, A, u):
    # x = a X, y = b Y, z = c Z maps the scaled flow onto the original one
    op = OriginalParams(k1, k2, k3, k4, k5, A)
    p, (a, b, c) = scale_from_original(op)
    scale = np.array([a, b, c])
    lhs = original_vector_field(op, scale * u) / scale
    assert np.allclose(lhs, vector_field(p, u), rtol=1e-12, atol=1e-12)
    assert p.k == pytest.approx(k1 * A - k4)


@given(params(), interior_states())
def test_jacobian_matches_finite_differences(p, s):
    fd = fd_jacobian(lambda u: vector_field(p, u), s)
    assert np.allclose(jacobian(p, s), fd, rtol=1e-7, atol=1e-7)


@given(params(), interior_states())
def test_second_compound_matches_definition(p, s):
    assert np.allclose(second_additive_compound(p, s), compound_from_definition(jacobian(p, s)), atol=0)


@given(params(), interior_states())
def test_second_compound_spectrum_is_pairwise_sums(p, s):
    lam = np.linalg.eigvals(jacobian(p, s))
    sums = np.sort_complex(np.array([lam[0] + lam[1], lam[0] + lam[2], lam[1] + lam[2]]))
    mu = np.sort_complex(np.linalg.eigvals(second_additive_compound(p, s)))
    scale = max(1.0, np.max(np.abs(lam)))
    # match as multisets; sorting is fragile for conjugate pairs, so pair greedily
    left = list(sums)
    for m in mu:
        i = int(np.argmin([abs(m - x) for x in left]))
        assert abs(m - left.pop(i)) < 1e-8 * scale


@given(params(k_lo=0.01))
def test_equilibria_are_zeros(p):
    for e in equilibria(p):
        assert np.allclose(vector_field(p, np.asarray(e)), 0, atol=1e-12)
    assert np.array_equal(interior_equilibrium(p), [p.k] * 3)


def test_no_interior_equilibrium_for_nonpositive_k():
    p = Params(-1, 1, 1)
    assert [tuple(e) for e in equilibria(p)] == [(0.0, 0.0, 0.0)]
    with pytest.raises(ValueError):
        interior_equilibrium(p)


@given(params())
def test_regime_partition(p):
    r = classify_regime(p)
    kh = p.k3 + p.k5
    if abs(p.k - kh) <= hopf_tolerance(p):
        assert r is Regime.HOPF_BOUNDARY
    elif p.k <= 0:
        assert r is Regime.GLOBAL_DECAY
    elif p.k < kh:
        assert r is Regime.STABLE_INTERIOR
    else:
        assert r is Regime.OSCILLATORY


@given(rates, rates)
def test_hopf_boundary_exact(k3, k5):
    p = Params(k3 + k5, k3, k5)
    assert classify_regime(p) is Regime.HOPF_BOUNDARY
    assert classify_regime(Params(k3 + k5 + 1e-3, k3, k5), tol=1e-2) is Regime.HOPF_BOUNDARY
    with pytest.raises(ValueError):
        classify_regime(p, tol=-1)


@given(params(), interior_states())
def test_sign_pattern_is_a_single_negative_loop(p, s):
    j = jacobian_sign_pattern(p, s)
    expected = np.array([[0, -1, 0], [0, 0, 1], [1, 0, 0]])
    assert np.array_equal(j, expected)
