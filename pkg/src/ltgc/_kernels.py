"""Compiled scalar kernels for the equinoctial dynamics and the optimal field.

Every vector field here has the signature ``fun(t, y, prm, out) -> int`` and
returns a nonzero status on a domain violation, so the integrator can stop
cleanly without raising from compiled code.

Augmented state layout (14):  p f g h k L m | lp lf lg lh lk lL lm
Sundman layout (15):           augmented state + elapsed time t
"""

import math

import numpy as np
from numba import njit

DEGENERATE_NORM = 1e-14

# rhs status codes
OK = 0
BAD_GEOMETRY = 1  # p <= 0, w <= 0 or m <= 0
NOT_ELLIPTIC = 2  # 1 - f^2 - g^2 <= 0


@njit(cache=True)
def geometry_ok(p, f, g, L, m):
    if p <= 0.0 or m <= 0.0:
        return False
    w = 1.0 + f * math.cos(L) + g * math.sin(L)
    return w > 0.0


@njit(cache=True)
def bmat(p, f, g, h, k, L, mu):
    sL = math.sin(L)
    cL = math.cos(L)
    w = 1.0 + f * cL + g * sL
    s2 = 1.0 + h * h + k * k
    hk = h * sL - k * cL
    q = math.sqrt(p / mu)
    B = np.zeros((6, 3))
    B[0, 1] = q * 2.0 * p / w
    B[1, 0] = q * sL
    B[1, 1] = q * ((1.0 + w) * cL + f) / w
    B[1, 2] = -q * g * hk / w
    B[2, 0] = -q * cL
    B[2, 1] = q * ((1.0 + w) * sL + g) / w
    B[2, 2] = q * f * hk / w
    B[3, 2] = q * s2 * cL / (2.0 * w)
    B[4, 2] = q * s2 * sL / (2.0 * w)
    B[5, 2] = q * hk / w
    return B


@njit(cache=True)
def dvec6(p, f, g, L, mu):
    w = 1.0 + f * math.cos(L) + g * math.sin(L)
    return math.sqrt(mu / (p * p * p)) * w * w


# --- partial derivatives of B, one per costate equation ---------------------

@njit(cache=True)
def dB_dp(p, f, g, h, k, L, mu):
    sL = math.sin(L)
    cL = math.cos(L)
    w = 1.0 + f * cL + g * sL
    s2 = 1.0 + h * h + k * k
    hk = h * sL - k * cL
    q = 1.0 / (2.0 * math.sqrt(mu * p))
    M = np.zeros((6, 3))
    M[0, 1] = 6.0 * p / w
    M[1, 0] = sL
    M[1, 1] = ((1.0 + w) * cL + f) / w
    M[1, 2] = -g * hk / w
    M[2, 0] = -cL
    M[2, 1] = ((1.0 + w) * sL + g) / w
    M[2, 2] = f * hk / w
    M[3, 2] = s2 * cL / (2.0 * w)
    M[4, 2] = s2 * sL / (2.0 * w)
    M[5, 2] = hk / w
    return M * q


@njit(cache=True)
def dB_df(p, f, g, h, k, L, mu):
    sL = math.sin(L)
    cL = math.cos(L)
    w = 1.0 + f * cL + g * sL
    s2 = 1.0 + h * h + k * k
    hk = h * sL - k * cL
    q = math.sqrt(p / mu) / (w * w)
    M = np.zeros((6, 3))
    M[0, 1] = -2.0 * p * cL
    M[1, 1] = w - (cL + f) * cL
    M[1, 2] = g * cL * hk
    M[2, 1] = -(sL + g) * cL
    M[2, 2] = (w - f * cL) * hk
    M[3, 2] = -0.5 * s2 * cL * cL
    M[4, 2] = -0.5 * s2 * sL * cL
    M[5, 2] = -hk * cL
    return M * q


@njit(cache=True)
def dB_dg(p, f, g, h, k, L, mu):
    sL = math.sin(L)
    cL = math.cos(L)
    w = 1.0 + f * cL + g * sL
    s2 = 1.0 + h * h + k * k
    hk = h * sL - k * cL
    q = math.sqrt(p / mu) / (w * w)
    M = np.zeros((6, 3))
    M[0, 1] = -2.0 * p * sL
    M[1, 1] = -(cL + f) * sL
    M[1, 2] = -(w - g * sL) * hk
    M[2, 1] = w - (sL + g) * sL
    M[2, 2] = -f * sL * hk
    M[3, 2] = -0.5 * s2 * cL * sL
    M[4, 2] = -0.5 * s2 * sL * sL
    M[5, 2] = -hk * sL
    return M * q


@njit(cache=True)
def dB_dh(p, f, g, h, k, L, mu):
    sL = math.sin(L)
    cL = math.cos(L)
    w = 1.0 + f * cL + g * sL
    q = math.sqrt(p / mu) / w
    M = np.zeros((6, 3))
    M[1, 2] = -g * sL
    M[2, 2] = f * sL
    M[3, 2] = h * cL
    M[4, 2] = h * sL
    M[5, 2] = sL
    return M * q


@njit(cache=True)
def dB_dk(p, f, g, h, k, L, mu):
    sL = math.sin(L)
    cL = math.cos(L)
    w = 1.0 + f * cL + g * sL
    q = math.sqrt(p / mu) / w
    M = np.zeros((6, 3))
    M[1, 2] = g * cL
    M[2, 2] = -f * cL
    M[3, 2] = k * cL
    M[4, 2] = k * sL
    M[5, 2] = -cL
    return M * q


@njit(cache=True)
def dB_dL(p, f, g, h, k, L, mu):
    sL = math.sin(L)
    cL = math.cos(L)
    w = 1.0 + f * cL + g * sL
    wL = g * cL - f * sL
    s2 = 1.0 + h * h + k * k
    phi = (w * h + wL * k) * cL + (w * k - wL * h) * sL
    q = math.sqrt(p / mu) / (w * w)
    M = np.zeros((6, 3))
    M[0, 1] = -2.0 * p * wL
    M[1, 0] = w * w * cL
    M[1, 1] = -(1.0 + w) * w * sL - wL * (cL + f)
    # sign differs from the printed matrix; -dH/dL finite differences confirm it
    M[1, 2] = -phi * g
    M[2, 0] = w * w * sL
    M[2, 1] = (1.0 + w) * w * cL - wL * (sL + g)
    M[2, 2] = phi * f
    M[3, 2] = -0.5 * s2 * (w * sL + wL * cL)
    M[4, 2] = 0.5 * s2 * (w * cL - wL * sL)
    M[5, 2] = phi
    return M * q


@njit(cache=True)
def lam_M_i(lam, M, i0, i1, i2):
    acc = 0.0
    for r in range(6):
        acc += lam[r] * (M[r, 0] * i0 + M[r, 1] * i1 + M[r, 2] * i2)
    return acc


# --- costate equations -------------------------------------------------------

@njit(cache=True)
def lamdot_p(p, f, g, h, k, L, mu, lam, coef, i0, i1, i2):
    w = 1.0 + f * math.cos(L) + g * math.sin(L)
    return (-coef * lam_M_i(lam, dB_dp(p, f, g, h, k, L, mu), i0, i1, i2)
            + 1.5 * w * w * lam[5] * math.sqrt(mu / p ** 5))


@njit(cache=True)
def lamdot_f(p, f, g, h, k, L, mu, lam, coef, i0, i1, i2):
    cL = math.cos(L)
    w = 1.0 + f * cL + g * math.sin(L)
    return (-coef * lam_M_i(lam, dB_df(p, f, g, h, k, L, mu), i0, i1, i2)
            - 2.0 * lam[5] * w * math.sqrt(mu / p ** 3) * cL)


@njit(cache=True)
def lamdot_g(p, f, g, h, k, L, mu, lam, coef, i0, i1, i2):
    sL = math.sin(L)
    w = 1.0 + f * math.cos(L) + g * sL
    return (-coef * lam_M_i(lam, dB_dg(p, f, g, h, k, L, mu), i0, i1, i2)
            - 2.0 * lam[5] * w * math.sqrt(mu / p ** 3) * sL)


@njit(cache=True)
def lamdot_h(p, f, g, h, k, L, mu, lam, coef, i0, i1, i2):
    return -coef * lam_M_i(lam, dB_dh(p, f, g, h, k, L, mu), i0, i1, i2)


@njit(cache=True)
def lamdot_k(p, f, g, h, k, L, mu, lam, coef, i0, i1, i2):
    return -coef * lam_M_i(lam, dB_dk(p, f, g, h, k, L, mu), i0, i1, i2)


@njit(cache=True)
def lamdot_L(p, f, g, h, k, L, mu, lam, coef, i0, i1, i2):
    sL = math.sin(L)
    cL = math.cos(L)
    w = 1.0 + f * cL + g * sL
    wL = g * cL - f * sL
    return (-coef * lam_M_i(lam, dB_dL(p, f, g, h, k, L, mu), i0, i1, i2)
            - 2.0 * w * math.sqrt(mu / p ** 3) * lam[5] * wL)


@njit(cache=True)
def lamdot_m(p, f, g, h, k, L, m, mu, lam, c1, u, i0, i1, i2):
    # -dH/dm for an arbitrary direction; equals -(c1 u/m^2)|B^T lam| at the optimum
    B = bmat(p, f, g, h, k, L, mu)
    return c1 * u / (m * m) * lam_M_i(lam, B, i0, i1, i2)


@njit(cache=True)
def costate_rhs(y, u, i0, i1, i2, c1, mu, out):
    p, f, g, h, k, L, m = y[0], y[1], y[2], y[3], y[4], y[5], y[6]
    lam = y[7:13]
    coef = c1 * u / m
    out[0] = lamdot_p(p, f, g, h, k, L, mu, lam, coef, i0, i1, i2)
    out[1] = lamdot_f(p, f, g, h, k, L, mu, lam, coef, i0, i1, i2)
    out[2] = lamdot_g(p, f, g, h, k, L, mu, lam, coef, i0, i1, i2)
    out[3] = lamdot_h(p, f, g, h, k, L, mu, lam, coef, i0, i1, i2)
    out[4] = lamdot_k(p, f, g, h, k, L, mu, lam, coef, i0, i1, i2)
    out[5] = lamdot_L(p, f, g, h, k, L, mu, lam, coef, i0, i1, i2)
    out[6] = lamdot_m(p, f, g, h, k, L, m, mu, lam, c1, u, i0, i1, i2)


# --- optimal control ---------------------------------------------------------

@njit(cache=True)
def throttle(sf, eps):
    if eps == 0.0:
        if sf < 0.0:
            return 1.0
        if sf > 0.0:
            return 0.0
        return 0.5
    r = math.sqrt(4.0 * eps * eps + sf * sf)
    if sf >= 0.0:
        return 2.0 * eps / (2.0 * eps + sf + r)
    # same expression, rearranged to avoid cancellation in sf + r
    return (r - sf) / (r - sf + 2.0 * eps)


@njit(cache=True)
def optimal_control(y, c1, c2, mu, eps):
    """Return (u, i0, i1, i2, sf, degenerate) for augmented state y."""
    B = bmat(y[0], y[1], y[2], y[3], y[4], y[5], mu)
    b0 = 0.0
    b1 = 0.0
    b2 = 0.0
    for r in range(6):
        b0 += B[r, 0] * y[7 + r]
        b1 += B[r, 1] * y[7 + r]
        b2 += B[r, 2] * y[7 + r]
    nb = math.sqrt(b0 * b0 + b1 * b1 + b2 * b2)
    m = y[6]
    if nb < DEGENERATE_NORM:
        sf = 1.0 - c2 * y[13]
        return throttle(sf, eps), 0.0, 1.0, 0.0, sf, True
    sf = 1.0 - c1 / m * nb - c2 * y[13]
    return throttle(sf, eps), -b0 / nb, -b1 / nb, -b2 / nb, sf, False


@njit(cache=True)
def hamiltonian(y, u, i0, i1, i2, c1, c2, mu, eps):
    p, f, g, h, k, L, m = y[0], y[1], y[2], y[3], y[4], y[5], y[6]
    B = bmat(p, f, g, h, k, L, mu)
    lam = y[7:13]
    H = (c1 * u / m * lam_M_i(lam, B, i0, i1, i2) + y[12] * dvec6(p, f, g, L, mu)
         - c2 * y[13] * u + u)
    if eps > 0.0:
        H -= eps * math.log(u * (1.0 - u))
    return H


@njit(cache=True)
def state_rhs(y, u, i0, i1, i2, c1, c2, mu, out):
    p, f, g, h, k, L, m = y[0], y[1], y[2], y[3], y[4], y[5], y[6]
    B = bmat(p, f, g, h, k, L, mu)
    coef = c1 * u / m
    for r in range(6):
        out[r] = coef * (B[r, 0] * i0 + B[r, 1] * i1 + B[r, 2] * i2)
    out[5] += dvec6(p, f, g, L, mu)
    out[6] = -c2 * u


# --- vector fields for the integrator ----------------------------------------

@njit(cache=True)
def aug_rhs(t, y, prm, out):
    """Closed-loop optimal field in time. prm = [c1, c2, mu, eps]."""
    c1, c2, mu, eps = prm[0], prm[1], prm[2], prm[3]
    if not geometry_ok(y[0], y[1], y[2], y[5], y[6]):
        return BAD_GEOMETRY
    u, i0, i1, i2, sf, degenerate = optimal_control(y, c1, c2, mu, eps)
    state_rhs(y, u, i0, i1, i2, c1, c2, mu, out)
    co = np.empty(7)
    costate_rhs(y, u, i0, i1, i2, c1, mu, co)
    for j in range(7):
        out[7 + j] = co[j]
    return OK


@njit(cache=True)
def sundman_factor(y, mu):
    e2 = y[1] * y[1] + y[2] * y[2]
    if e2 >= 1.0:
        return -1.0
    a = y[0] / (1.0 - e2)
    r = y[0] / (1.0 + y[1] * math.cos(y[5]) + y[2] * math.sin(y[5]))
    return math.sqrt(a / mu) * r


@njit(cache=True)
def sundman_rhs(t, y, prm, out):
    """Optimal field in the Sundman anomaly; out[14] = dt/dtheta_s."""
    status = aug_rhs(t, y, prm, out)
    if status != OK:
        return status
    fac = sundman_factor(y, prm[2])
    if fac <= 0.0:
        return NOT_ELLIPTIC
    for j in range(14):
        out[j] *= fac
    out[14] = fac
    return OK


@njit(cache=True)
def fixed_control_rhs(t, y, prm, out):
    """State-only field with a frozen control. prm = [c1, c2, mu, u, ir, it, in]."""
    if not geometry_ok(y[0], y[1], y[2], y[5], y[6]):
        return BAD_GEOMETRY
    state_rhs(y, prm[3], prm[4], prm[5], prm[6], prm[0], prm[1], prm[2], out)
    return OK


# --- network-in-the-loop field ----------------------------------------------
# prm layout: [c1, c2, mu, eps, head, grad_scale, lm_offset, degenerate_count,
#              n_layers, dims[0..n_layers], weights...]
# head 0 = value network (controls from its input gradient), 1 = policy network.
NET_HEADER = 9


@njit(cache=True)
def softplus(z):
    if z > 0.0:
        return z + math.log1p(math.exp(-z))
    return math.log1p(math.exp(z))


@njit(cache=True)
def sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@njit(cache=True)
def mlp_forward(prm, x, want_grad):
    """Evaluate the packed network on input x.

    Returns (raw_output, input_gradient_of_output_0). Hidden layers are softplus,
    the last layer is affine; head activations are applied by the caller.
    """
    nl = int(prm[8])
    dims = np.empty(nl + 1, dtype=np.int64)
    for i in range(nl + 1):
        dims[i] = int(prm[NET_HEADER + i])
    off = NET_HEADER + nl + 1
    a = x.copy()
    zs = []
    offs = []
    for layer in range(nl):
        n_in = dims[layer]
        n_out = dims[layer + 1]
        W = prm[off:off + n_out * n_in].reshape((n_out, n_in))
        offs.append(off)
        off += n_out * n_in
        b = prm[off:off + n_out]
        off += n_out
        z = W @ a + b
        if layer < nl - 1:
            zs.append(z)
            a = np.empty(n_out)
            for j in range(n_out):
                a[j] = softplus(z[j])
        else:
            a = z
    grad = np.zeros(dims[0])
    if want_grad:
        n_in = dims[nl - 1]
        W = prm[offs[nl - 1]:offs[nl - 1] + dims[nl] * n_in].reshape((dims[nl], n_in))
        gvec = W[0, :].copy()
        for layer in range(nl - 2, -1, -1):
            z = zs[layer]
            for j in range(z.shape[0]):
                gvec[j] *= sigmoid(z[j])
            n_in = dims[layer]
            n_out = dims[layer + 1]
            W = prm[offs[layer]:offs[layer] + n_out * n_in].reshape((n_out, n_in))
            gvec = W.T @ gvec
        grad = gvec
    return a, grad


@njit(cache=True)
def net_control(y, prm):
    """Controls (u, i0, i1, i2, ok) commanded by the packed network at state y."""
    c1, c2, mu, eps = prm[0], prm[1], prm[2], prm[3]
    x = y[:7].copy()
    if prm[4] == 1.0:
        out, _ = mlp_forward(prm, x, False)
        u = sigmoid(out[0])
        nd = math.sqrt(out[1] * out[1] + out[2] * out[2] + out[3] * out[3])
        if nd < DEGENERATE_NORM:
            return 0.0, 0.0, 1.0, 0.0, False
        return u, out[1] / nd, out[2] / nd, out[3] / nd, True
    _, grad = mlp_forward(prm, x, True)
    aug = np.empty(14)
    for j in range(7):
        aug[j] = y[j]
    for j in range(7):
        aug[7 + j] = prm[5] * grad[j]
    aug[13] += prm[6]
    u, i0, i1, i2, sf, degenerate = optimal_control(aug, c1, c2, mu, eps)
    if degenerate:
        return 0.0, 0.0, 1.0, 0.0, False
    return u, i0, i1, i2, True


@njit(cache=True)
def net_rhs(t, y, prm, out):
    if not geometry_ok(y[0], y[1], y[2], y[5], y[6]):
        return BAD_GEOMETRY
    u, i0, i1, i2, ok = net_control(y, prm)
    if not ok:
        prm[7] += 1.0
        u = 0.0
    state_rhs(y, u, i0, i1, i2, prm[0], prm[1], prm[2], out)
    return OK
