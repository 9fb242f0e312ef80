"""Compiled Dormand-Prince 8(5,3) integrator with 7th-order dense output.

Step-size control and interpolant follow Hairer's DOP853 as arranged in
SciPy; the Butcher tableau is taken from SciPy so both share one source.
The integrator stores the dense-output coefficients of every accepted step.
"""

import math

import numpy as np
from numba import njit
from scipy.integrate._ivp import dop853_coefficients as _dc

from ._kernels import aug_rhs, fixed_control_rhs, net_rhs, sundman_rhs

A = np.ascontiguousarray(_dc.A, dtype=np.float64)
B = np.ascontiguousarray(_dc.B, dtype=np.float64)
C = np.ascontiguousarray(_dc.C, dtype=np.float64)
E3 = np.ascontiguousarray(_dc.E3, dtype=np.float64)
E5 = np.ascontiguousarray(_dc.E5, dtype=np.float64)
D = np.ascontiguousarray(_dc.D, dtype=np.float64)
N_STAGES = _dc.N_STAGES
N_EXT = _dc.N_STAGES_EXTENDED
POWER = _dc.INTERPOLATOR_POWER

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
EXPONENT = -1.0 / 8.0

# integrator status codes
DONE = 0
EVENT_BOX = 1
EVENT_CROSS = 2
RHS_FAILED = -1
STEP_UNDERFLOW = -2
MAX_STEPS = -3


# vector field selectors
FIELD_TIME = 0
FIELD_SUNDMAN = 1
FIELD_FIXED = 2
FIELD_NET = 3


@njit(cache=True)
def fun(kind, t, y, prm, out):
    if kind == FIELD_TIME:
        return aug_rhs(t, y, prm, out)
    if kind == FIELD_SUNDMAN:
        return sundman_rhs(t, y, prm, out)
    if kind == FIELD_FIXED:
        return fixed_control_rhs(t, y, prm, out)
    return net_rhs(t, y, prm, out)


@njit(cache=True)
def _rms(v, scale):
    acc = 0.0
    for i in range(v.shape[0]):
        q = v[i] / scale[i]
        acc += q * q
    return math.sqrt(acc / v.shape[0])


@njit(cache=True)
def _out_of_box(y, box):
    # box = [active, a_min, a_max, inc_max]
    if box[0] == 0.0:
        return False
    e2 = y[1] * y[1] + y[2] * y[2]
    if e2 >= 1.0:
        return True
    a = y[0] / (1.0 - e2)
    if a < box[1] or a > box[2]:
        return True
    inc = 2.0 * math.atan(math.sqrt(y[3] * y[3] + y[4] * y[4]))
    return inc > box[3]


@njit(cache=True)
def _initial_step(kind, t0, y0, f0, direction, prm, rtol, atol, max_step):
    n = y0.shape[0]
    scale = atol + np.abs(y0) * rtol
    d0 = _rms(y0, scale)
    d1 = _rms(f0, scale)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, max_step)
    y1 = y0 + h0 * direction * f0
    f1 = np.empty(n)
    if fun(kind, t0 + h0 * direction, y1, prm, f1) != 0:
        return h0 * 1e-3
    d2 = _rms(f1 - f0, scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 8.0)
    return min(100.0 * h0, h1, max_step)


@njit(cache=True)
def integrate(kind, t0, y0, t_end, prm, rtol, atol, max_step, max_steps,
              box, cross_idx, cross_val):
    """Integrate y' = fun(kind, t, y) from t0 toward t_end (either direction).

    Stops after the first accepted step that leaves ``box`` or brings
    y[cross_idx] across ``cross_val`` (cross_idx < 0 disables it).
    Returns (status, n_steps, ts, ys, F, nfev); ts/ys hold n_steps + 1 nodes
    and F[i] the interpolant coefficients of step i.
    """
    n = y0.shape[0]
    direction = 1.0 if t_end >= t0 else -1.0
    cap = 256
    ts = np.empty(cap)
    ys = np.empty((cap, n))
    F = np.empty((cap, POWER, n))
    ts[0] = t0
    ys[0] = y0
    n_steps = 0
    nfev = 0

    if t_end == t0:
        return DONE, 0, ts[:1].copy(), ys[:1].copy(), F[:0].copy(), nfev

    K = np.zeros((N_EXT, n))
    f = np.empty(n)
    if fun(kind, t0, y0, prm, f) != 0:
        return RHS_FAILED, 0, ts[:1].copy(), ys[:1].copy(), F[:0].copy(), 1
    nfev += 1
    h_abs = _initial_step(kind, t0, y0, f, direction, prm, rtol, atol, max_step)
    nfev += 1
    t = t0
    y = y0.copy()
    status = DONE
    finished = False
    cross_sign = 0.0
    if cross_idx >= 0:
        cross_sign = y0[cross_idx] - cross_val

    while not finished:
        if n_steps >= max_steps:
            status = MAX_STEPS
            break
        min_step = 10.0 * abs(np.nextafter(t, direction * np.inf) - t)
        if h_abs > max_step:
            h_abs = max_step
        if h_abs < min_step:
            h_abs = min_step

        step_accepted = False
        step_rejected = False
        rhs_bad = False
        y_new = y
        f_new = f
        h = 0.0
        while not step_accepted:
            if h_abs < min_step:
                status = STEP_UNDERFLOW
                break
            h = h_abs * direction
            t_new = t + h
            if direction * (t_new - t_end) > 0.0:
                t_new = t_end
            h = t_new - t
            h_abs = abs(h)

            K[0] = f
            bad = False
            for s in range(1, N_STAGES):
                dy = np.zeros(n)
                for j in range(s):
                    a = A[s, j]
                    if a != 0.0:
                        dy += a * K[j]
                if fun(kind, t + C[s] * h, y + h * dy, prm, K[s]) != 0:
                    bad = True
                    break
            nfev += N_STAGES - 1
            if not bad:
                acc = np.zeros(n)
                for j in range(N_STAGES):
                    if B[j] != 0.0:
                        acc += B[j] * K[j]
                y_new = y + h * acc
                f_new = np.empty(n)
                if fun(kind, t_new, y_new, prm, f_new) != 0:
                    bad = True
                nfev += 1
                if not bad:
                    K[N_STAGES] = f_new
            if bad:
                # shrink into the valid region before declaring failure
                h_abs *= 0.25
                step_rejected = True
                if h_abs < min_step:
                    rhs_bad = True
                    status = RHS_FAILED
                    break
                continue

            scale = atol + np.maximum(np.abs(y), np.abs(y_new)) * rtol
            err5 = np.zeros(n)
            err3 = np.zeros(n)
            for j in range(N_STAGES + 1):
                err5 += E5[j] * K[j]
                err3 += E3[j] * K[j]
            e5 = 0.0
            e3 = 0.0
            for i in range(n):
                q5 = err5[i] / scale[i]
                q3 = err3[i] / scale[i]
                e5 += q5 * q5
                e3 += q3 * q3
            if e5 == 0.0 and e3 == 0.0:
                err = 0.0
            else:
                err = h_abs * e5 / math.sqrt((e5 + 0.01 * e3) * n)

            if err < 1.0:
                if err == 0.0:
                    factor = MAX_FACTOR
                else:
                    factor = min(MAX_FACTOR, SAFETY * err ** EXPONENT)
                if step_rejected:
                    factor = min(1.0, factor)
                h_abs *= factor
                step_accepted = True
            else:
                h_abs *= max(MIN_FACTOR, SAFETY * err ** EXPONENT)
                step_rejected = True

        if not step_accepted:
            if rhs_bad:
                status = RHS_FAILED
            break

        # dense output for the accepted step
        for s in range(N_STAGES + 1, N_EXT):
            dy = np.zeros(n)
            for j in range(s):
                a = A[s, j]
                if a != 0.0:
                    dy += a * K[j]
            if fun(kind, t + C[s] * h, y + h * dy, prm, K[s]) != 0:
                # interpolation stages are inside the accepted step; treat as failure
                status = RHS_FAILED
                finished = True
                break
        nfev += N_EXT - N_STAGES - 1
        if finished:
            break

        if n_steps + 1 >= cap:
            cap *= 2
            ts2 = np.empty(cap)
            ys2 = np.empty((cap, n))
            F2 = np.empty((cap, POWER, n))
            ts2[:n_steps + 1] = ts[:n_steps + 1]
            ys2[:n_steps + 1] = ys[:n_steps + 1]
            F2[:n_steps] = F[:n_steps]
            ts, ys, F = ts2, ys2, F2

        delta = y_new - y
        F[n_steps, 0] = delta
        F[n_steps, 1] = h * f - delta
        F[n_steps, 2] = 2.0 * delta - h * (f_new + f)
        for r in range(POWER - 3):
            acc = np.zeros(n)
            for j in range(N_EXT):
                if D[r, j] != 0.0:
                    acc += D[r, j] * K[j]
            F[n_steps, 3 + r] = h * acc

        n_steps += 1
        t = t_new
        y = y_new
        f = f_new
        ts[n_steps] = t
        ys[n_steps] = y

        if _out_of_box(y, box):
            status = EVENT_BOX
            break
        if cross_idx >= 0:
            sgn = y[cross_idx] - cross_val
            if sgn == 0.0 or (sgn > 0.0) != (cross_sign > 0.0):
                status = EVENT_CROSS
                break
        if direction * (t - t_end) >= 0.0:
            finished = True

    return (status, n_steps, ts[:n_steps + 1].copy(), ys[:n_steps + 1].copy(),
            F[:n_steps].copy(), nfev)


@njit(cache=True)
def dense_eval(ts, ys, F, tq, direction):
    """Evaluate the piecewise interpolant at sorted-or-not query points tq."""
    nq = tq.shape[0]
    n = ys.shape[1]
    n_steps = ts.shape[0] - 1
    out = np.empty((nq, n))
    for qi in range(nq):
        t = tq[qi]
        if n_steps == 0:
            out[qi] = ys[0]
            continue
        # binary search for the step containing t
        lo = 0
        hi = n_steps - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if direction * (t - ts[mid]) >= 0.0:
                lo = mid
            else:
                hi = mid - 1
        i = lo
        h = ts[i + 1] - ts[i]
        x = (t - ts[i]) / h
        y = np.zeros(n)
        for r in range(POWER - 1, -1, -1):
            y += F[i, r]
            # reversed index parity decides the multiplier, as in Hairer's CONTD8
            if (POWER - 1 - r) % 2 == 0:
                y *= x
            else:
                y *= 1.0 - x
        out[qi] = y + ys[i]
    return out
