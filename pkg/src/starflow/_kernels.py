"""JIT-compiled field evaluation and Dormand-Prince 5(4) integration.

Every field is passed to the kernels as the flat tuple
``(kind, par, coef, comp, exps, sign)``; see :mod:`starflow.fields`.
The variational system is stored row-major in ``y[3:12]``.
"""
import numpy as np
from numba import njit

KIND_LIN = 0
KIND_CYC = 1
KIND_LOR = 2
KIND_POLY = 3

OK = 0
UNDERFLOW = 1
NONFINITE = 2
MAXSTEPS = 3
NOCROSS = 4

# Dormand-Prince tableau
C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
A71, A73, A74, A75, A76 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
E1, E3, E4, E5, E6, E7 = (71 / 57600, -71 / 16695, 71 / 1920,
                          -17253 / 339200, 22 / 525, -1 / 40)
# continuous extension
D1, D3, D4 = -12715105075 / 11282082432, 87487479700 / 32700410799, -10690763975 / 1880347072
D5, D6, D7 = 701980252875 / 199316789632, -1453857185 / 822651844, 69997945 / 29380423


@njit(cache=True)
def vf(kind, par, coef, comp, exps, x, out):
    if kind == KIND_LIN:
        out[0] = par[0] * x[0]
        out[1] = par[1] * x[1]
        out[2] = par[2] * x[2]
    elif kind == KIND_CYC:
        r2 = x[0] * x[0] + x[1] * x[1]
        out[0] = -x[1] + x[0] * (1.0 - r2)
        out[1] = x[0] + x[1] * (1.0 - r2)
        out[2] = -x[2]
    elif kind == KIND_LOR:
        s, r, b = par[0], par[1], par[2]
        out[0] = s * (x[1] - x[0])
        out[1] = x[0] * (r - x[2]) - x[1]
        out[2] = x[0] * x[1] - b * x[2]
    else:
        out[0] = 0.0
        out[1] = 0.0
        out[2] = 0.0
        for k in range(coef.shape[0]):
            out[comp[k]] += (coef[k] * x[0] ** exps[k, 0] * x[1] ** exps[k, 1]
                             * x[2] ** exps[k, 2])


@njit(cache=True)
def jac(kind, par, coef, comp, exps, x, J):
    for i in range(3):
        for j in range(3):
            J[i, j] = 0.0
    if kind == KIND_LIN:
        J[0, 0] = par[0]
        J[1, 1] = par[1]
        J[2, 2] = par[2]
    elif kind == KIND_CYC:
        X, Y = x[0], x[1]
        r2 = X * X + Y * Y
        J[0, 0] = 1.0 - r2 - 2.0 * X * X
        J[0, 1] = -1.0 - 2.0 * X * Y
        J[1, 0] = 1.0 - 2.0 * X * Y
        J[1, 1] = 1.0 - r2 - 2.0 * Y * Y
        J[2, 2] = -1.0
    elif kind == KIND_LOR:
        s, r, b = par[0], par[1], par[2]
        J[0, 0] = -s
        J[0, 1] = s
        J[1, 0] = r - x[2]
        J[1, 1] = -1.0
        J[1, 2] = -x[0]
        J[2, 0] = x[1]
        J[2, 1] = x[0]
        J[2, 2] = -b
    else:
        for k in range(coef.shape[0]):
            for v in range(3):
                e = exps[k, v]
                if e == 0:
                    continue
                term = coef[k] * e
                for w in range(3):
                    if w == v:
                        term *= x[w] ** (e - 1)
                    else:
                        term *= x[w] ** exps[k, w]
                J[comp[k], v] += term


@njit(cache=True)
def rhs(kind, par, coef, comp, exps, sign, y, out, J):
    vf(kind, par, coef, comp, exps, y, out)
    out[0] *= sign
    out[1] *= sign
    out[2] *= sign
    if y.shape[0] == 12:
        jac(kind, par, coef, comp, exps, y, J)
        for i in range(3):
            for j in range(3):
                acc = 0.0
                for k in range(3):
                    acc += J[i, k] * y[3 + 3 * k + j]
                out[3 + 3 * i + j] = sign * acc


@njit(cache=True)
def _err_norm(y, yn, err, rtol, atol):
    acc = 0.0
    for i in range(y.shape[0]):
        sc = atol + rtol * max(abs(y[i]), abs(yn[i]))
        acc += (err[i] / sc) ** 2
    return np.sqrt(acc / y.shape[0])


@njit(cache=True)
def _dp_step(kind, par, coef, comp, exps, sign, y, h, K, J, tmp, yn, err):
    """One Dormand-Prince attempt; K[0] must already hold f(y). Fills K[1..6]."""
    n = y.shape[0]
    for i in range(n):
        tmp[i] = y[i] + h * A21 * K[0, i]
    rhs(kind, par, coef, comp, exps, sign, tmp, K[1], J)
    for i in range(n):
        tmp[i] = y[i] + h * (A31 * K[0, i] + A32 * K[1, i])
    rhs(kind, par, coef, comp, exps, sign, tmp, K[2], J)
    for i in range(n):
        tmp[i] = y[i] + h * (A41 * K[0, i] + A42 * K[1, i] + A43 * K[2, i])
    rhs(kind, par, coef, comp, exps, sign, tmp, K[3], J)
    for i in range(n):
        tmp[i] = y[i] + h * (A51 * K[0, i] + A52 * K[1, i] + A53 * K[2, i] + A54 * K[3, i])
    rhs(kind, par, coef, comp, exps, sign, tmp, K[4], J)
    for i in range(n):
        tmp[i] = y[i] + h * (A61 * K[0, i] + A62 * K[1, i] + A63 * K[2, i]
                             + A64 * K[3, i] + A65 * K[4, i])
    rhs(kind, par, coef, comp, exps, sign, tmp, K[5], J)
    for i in range(n):
        yn[i] = y[i] + h * (A71 * K[0, i] + A73 * K[2, i] + A74 * K[3, i]
                            + A75 * K[4, i] + A76 * K[5, i])
    rhs(kind, par, coef, comp, exps, sign, yn, K[6], J)
    for i in range(n):
        err[i] = h * (E1 * K[0, i] + E3 * K[2, i] + E4 * K[3, i] + E5 * K[4, i]
                      + E6 * K[5, i] + E7 * K[6, i])


@njit(cache=True)
def _finite(v):
    for i in range(v.shape[0]):
        if not np.isfinite(v[i]):
            return False
    return True


@njit(cache=True)
def initial_step(kind, par, coef, comp, exps, sign, y, rtol, atol):
    n = y.shape[0]
    f0 = np.empty(n)
    J = np.empty((3, 3))
    rhs(kind, par, coef, comp, exps, sign, y, f0, J)
    d0 = 0.0
    d1 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(y[i])
        d0 += (y[i] / sc) ** 2
        d1 += (f0[i] / sc) ** 2
    d0 = np.sqrt(d0 / n)
    d1 = np.sqrt(d1 / n)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    y1 = y + h0 * f0
    f1 = np.empty(n)
    rhs(kind, par, coef, comp, exps, sign, y1, f1, J)
    d2 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(y[i])
        d2 += ((f1[i] - f0[i]) / sc) ** 2
    d2 = np.sqrt(d2 / n) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100.0 * h0, h1)


@njit(cache=True)
def _factor(e):
    if e == 0.0:
        return 10.0
    return min(10.0, max(0.2, 0.9 * e ** -0.2))


@njit(cache=True)
def advance(kind, par, coef, comp, exps, sign, y0, t_end, rtol, atol, h, max_steps):
    """Integrate from 0 to t_end >= 0, landing exactly on t_end.

    Returns (y, h_next, status, t_reached, nsteps).
    """
    n = y0.shape[0]
    y = y0.copy()
    if t_end == 0.0:
        return y, h, OK, 0.0, 0
    K = np.empty((7, n))
    J = np.empty((3, 3))
    tmp = np.empty(n)
    yn = np.empty(n)
    err = np.empty(n)
    if h <= 0.0:
        h = initial_step(kind, par, coef, comp, exps, sign, y, rtol, atol)
    rhs(kind, par, coef, comp, exps, sign, y, K[0], J)
    t = 0.0
    steps = 0
    h_keep = h
    while t < t_end:
        if steps >= max_steps:
            return y, h, MAXSTEPS, t, steps
        last = False
        hh = h
        if t + hh >= t_end:
            hh = t_end - t
            last = True
        if hh < 1e-14 * max(1.0, abs(t)):
            if last:
                break
            return y, h, UNDERFLOW, t, steps
        _dp_step(kind, par, coef, comp, exps, sign, y, hh, K, J, tmp, yn, err)
        steps += 1
        if not _finite(yn):
            h = hh * 0.2
            if h < 1e-14 * max(1.0, abs(t)):
                return y, h, NONFINITE, t, steps
            continue
        e = _err_norm(y, yn, err, rtol, atol)
        if e <= 1.0:
            t = t_end if last else t + hh
            y[:] = yn
            K[0, :] = K[6, :]
            if not last:
                h = hh * _factor(e)
            else:
                h_keep = max(h, hh)
        else:
            h = hh * max(0.2, 0.9 * e ** -0.2)
    return y, h_keep if t >= t_end else h, OK, t, steps


@njit(cache=True)
def sample(kind, par, coef, comp, exps, sign, y0, dt, nsamp, rtol, atol, max_steps):
    """States at times k*dt, k = 0..nsamp. Returns (array, status, last_index)."""
    n = y0.shape[0]
    out = np.empty((nsamp + 1, n))
    out[0] = y0
    y = y0.copy()
    h = -1.0
    for k in range(nsamp):
        y, h, st, tr, ns = advance(kind, par, coef, comp, exps, sign, y, dt, rtol, atol,
                                   h, max_steps)
        if st != OK:
            return out[: k + 1], st, k
        out[k + 1] = y
    return out, OK, nsamp


@njit(cache=True)
def _dense(y, yn, K, h, th, out):
    t1 = 1.0 - th
    for i in range(y.shape[0]):
        r2 = yn[i] - y[i]
        r3 = h * K[0, i] - r2
        r4 = r2 - h * K[6, i] - r3
        r5 = h * (D1 * K[0, i] + D3 * K[2, i] + D4 * K[3, i] + D5 * K[4, i]
                  + D6 * K[5, i] + D7 * K[6, i])
        out[i] = y[i] + th * (r2 + t1 * (r3 + th * (r4 + t1 * r5)))


@njit(cache=True)
def _g(y, c, nrm):
    return (y[0] - c[0]) * nrm[0] + (y[1] - c[1]) * nrm[1] + (y[2] - c[2]) * nrm[2]


@njit(cache=True)
def _dist(y, c):
    return np.sqrt((y[0] - c[0]) ** 2 + (y[1] - c[1]) ** 2 + (y[2] - c[2]) ** 2)


@njit(cache=True)
def dense_probe(kind, par, coef, comp, exps, sign, y0, h, thetas):
    """Take one forced step of size h and evaluate the continuous extension."""
    n = y0.shape[0]
    K = np.empty((7, n))
    J = np.empty((3, 3))
    tmp = np.empty(n)
    yn = np.empty(n)
    err = np.empty(n)
    rhs(kind, par, coef, comp, exps, sign, y0, K[0], J)
    _dp_step(kind, par, coef, comp, exps, sign, y0, h, K, J, tmp, yn, err)
    out = np.empty((thetas.shape[0], n))
    for k in range(thetas.shape[0]):
        _dense(y0, yn, K, h, thetas[k], out[k])
    return out


@njit(cache=True)
def cross(kind, par, coef, comp, exps, sign, y0, t_max, c, nrm, radius, rtol, atol, max_steps):
    """First upward crossing of the plane (y - c).nrm = 0 with |y - c| <= radius.

    Returns (t, y, status).
    """
    n = y0.shape[0]
    y = y0.copy()
    K = np.empty((7, n))
    J = np.empty((3, 3))
    tmp = np.empty(n)
    yn = np.empty(n)
    err = np.empty(n)
    yd = np.empty(n)
    h = initial_step(kind, par, coef, comp, exps, sign, y, rtol, atol)
    rhs(kind, par, coef, comp, exps, sign, y, K[0], J)
    t = 0.0
    g0 = _g(y, c, nrm)
    steps = 0
    while t < t_max:
        if steps >= max_steps:
            return t, y, MAXSTEPS
        hh = min(h, t_max - t)
        if hh < 1e-14 * max(1.0, t):
            break
        _dp_step(kind, par, coef, comp, exps, sign, y, hh, K, J, tmp, yn, err)
        steps += 1
        if not _finite(yn):
            return t, y, NONFINITE
        e = _err_norm(y, yn, err, rtol, atol)
        if e > 1.0:
            h = hh * max(0.2, 0.9 * e ** -0.2)
            continue
        g1 = _g(yn, c, nrm)
        if g0 < 0.0 <= g1:
            # Illinois regula falsi on the continuous extension
            a, b = 0.0, 1.0
            ga, gb = g0, g1
            side = 0
            th = 1.0
            for it in range(200):
                th = (a * gb - b * ga) / (gb - ga)
                _dense(y, yn, K, hh, th, yd)
                gt = _g(yd, c, nrm)
                if gt == 0.0 or (b - a) * hh < 1e-16:
                    break
                if (gt < 0.0) == (ga < 0.0):
                    a, ga = th, gt
                    if side == -1:
                        gb *= 0.5
                    side = -1
                else:
                    b, gb = th, gt
                    if side == 1:
                        ga *= 0.5
                    side = 1
                if abs(gt) < 1e-15 * (1.0 + _dist(yd, c)):
                    break
            _dense(y, yn, K, hh, th, yd)
            if _dist(yd, c) <= radius:
                return t + th * hh, yd, OK
        t += hh
        y[:] = yn
        K[0, :] = K[6, :]
        g0 = g1
        h = hh * _factor(e)
    return t, y, NOCROSS


@njit(cache=True)
def speeds(kind, par, coef, comp, exps, pts):
    out = np.empty(pts.shape[0])
    v = np.empty(3)
    for i in range(pts.shape[0]):
        vf(kind, par, coef, comp, exps, pts[i], v)
        out[i] = np.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    return out
