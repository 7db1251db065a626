"""Compiled Dormand-Prince 5(4) stepper for the model and its variational system.

kind 0 integrates the 3-dimensional field, kind 1 the 12-dimensional system
(state, row-major fundamental matrix). ``sign`` = -1 integrates the reversed
field. Dense output per step is stored as ``D`` with
``y(t_i + theta h) = y_i + sum_j D[j] theta**(j + 1)``.
"""
import numpy as np
from numba import njit

C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
A = np.array(
    [
        [0.0, 0.0, 0.0, 0.0, 0.0],
        [1 / 5, 0.0, 0.0, 0.0, 0.0],
        [3 / 40, 9 / 40, 0.0, 0.0, 0.0],
        [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0],
        [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0],
        [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    ]
)
B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
P = np.array(
    [
        [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)

STATUS_DONE = 0
STATUS_FULL = 1
STATUS_UNDERFLOW = 2
STATUS_NONFINITE = 3

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0


@njit(cache=True, nogil=True)
def rhs(kind, par, sign, y, out):
    k = par[0]
    k3 = par[1]
    k5 = par[2]
    x = y[0]
    yy = y[1]
    z = y[2]
    out[0] = sign * (k * x - x * yy)
    out[1] = sign * (k3 * (z - yy))
    out[2] = sign * (k5 * (x - z))
    if kind == 1:
        j00 = k - yy
        j01 = -x
        for c in range(3):
            f0 = y[3 + c]
            f1 = y[6 + c]
            f2 = y[9 + c]
            out[3 + c] = sign * (j00 * f0 + j01 * f1)
            out[6 + c] = sign * (k3 * (f2 - f1))
            out[9 + c] = sign * (k5 * (f0 - f2))


@njit(cache=True, nogil=True)
def _rms(v, scale):
    s = 0.0
    for i in range(v.shape[0]):
        r = v[i] / scale[i]
        s += r * r
    return np.sqrt(s / v.shape[0])


@njit(cache=True, nogil=True)
def initial_step(kind, par, sign, y0, f0, span, max_step, rtol, atol):
    n = y0.shape[0]
    scale = np.empty(n)
    for i in range(n):
        scale[i] = atol + abs(y0[i]) * rtol
    d0 = _rms(y0, scale)
    d1 = _rms(f0, scale)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, span)
    y1 = y0 + h0 * f0
    f1 = np.empty(n)
    rhs(kind, par, sign, y1, f1)
    d2 = _rms(f1 - f0, scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 5.0)
    return min(100.0 * h0, h1, span, max_step)


@njit(cache=True, nogil=True)
def solve(kind, par, sign, y0, t0, t_end, h, rtol, atol, max_step, capacity, clamp):
    """Advance from ``t0`` towards ``t_end`` for at most ``capacity`` accepted steps.

    Returns (status, n_acc, ts, ys, dense, h_next, n_rej, n_clamped, min_pre_clamp).
    ``ts``/``ys`` hold ``n_acc + 1`` nodes, ``dense`` holds ``n_acc`` steps.
    """
    n = y0.shape[0]
    ts = np.empty(capacity + 1)
    ys = np.empty((capacity + 1, n))
    dense = np.empty((capacity, 4, n))
    ts[0] = t0
    ys[0] = y0
    K = np.empty((7, n))
    y = y0.copy()
    f = np.empty(n)
    rhs(kind, par, sign, y, f)
    t = t0
    n_acc = 0
    n_rej = 0
    n_clamped = 0
    min_pre = np.inf
    tmp = np.empty(n)
    y_new = np.empty(n)
    scale = np.empty(n)
    err = np.empty(n)
    status = STATUS_FULL
    if h <= 0.0:
        h = initial_step(kind, par, sign, y, f, t_end - t, max_step, rtol, atol)
    while n_acc < capacity:
        if t >= t_end:
            status = STATUS_DONE
            break
        min_h = 10.0 * np.abs(np.nextafter(t, np.inf) - t)
        h = min(h, max_step)
        if h < min_h:
            status = STATUS_UNDERFLOW
            break
        rejected = False
        while True:
            last = False
            if t + h >= t_end:
                h = t_end - t
                last = True
            for i in range(n):
                K[0, i] = f[i]
            for s in range(1, 6):
                for i in range(n):
                    acc = 0.0
                    for j in range(s):
                        acc += A[s, j] * K[j, i]
                    tmp[i] = y[i] + h * acc
                rhs(kind, par, sign, tmp, K[s])
            for i in range(n):
                acc = 0.0
                for j in range(6):
                    acc += B[j] * K[j, i]
                y_new[i] = y[i] + h * acc
            rhs(kind, par, sign, y_new, K[6])
            finite = True
            for i in range(n):
                acc = 0.0
                for j in range(7):
                    acc += E[j] * K[j, i]
                err[i] = h * acc
                scale[i] = atol + max(abs(y[i]), abs(y_new[i])) * rtol
                if not np.isfinite(y_new[i]):
                    finite = False
            if not finite:
                h *= MIN_FACTOR
                n_rej += 1
                rejected = True
                if h < min_h:
                    break
                continue
            en = _rms(err, scale)
            if en < 1.0:
                if en == 0.0:
                    factor = MAX_FACTOR
                else:
                    factor = min(MAX_FACTOR, SAFETY * en ** (-0.2))
                if rejected:
                    factor = min(1.0, factor)
                break
            h *= max(MIN_FACTOR, SAFETY * en ** (-0.2))
            n_rej += 1
            rejected = True
            if h < min_h:
                break
        if h < min_h:
            status = STATUS_UNDERFLOW if finite else STATUS_NONFINITE
            break
        for jj in range(4):
            for i in range(n):
                acc = 0.0
                for s in range(7):
                    acc += K[s, i] * P[s, jj]
                dense[n_acc, jj, i] = h * acc
        t_new = t_end if last else t + h
        if clamp:
            changed = False
            for i in range(3):
                v = y_new[i]
                if v < min_pre:
                    min_pre = v
                if v < 0.0:
                    y_new[i] = 0.0
                    n_clamped += 1
                    changed = True
            if changed:
                rhs(kind, par, sign, y_new, K[6])
        else:
            for i in range(3):
                if y_new[i] < min_pre:
                    min_pre = y_new[i]
        for i in range(n):
            y[i] = y_new[i]
            f[i] = K[6, i]
        t = t_new
        n_acc += 1
        ts[n_acc] = t
        ys[n_acc] = y
        h = h * factor
        if last:
            status = STATUS_DONE
            break
    return status, n_acc, ts, ys, dense, h, n_rej, n_clamped, min_pre
