"""Compiled recursions behind the public filters and smoothers.

All arrays are float64 and C-contiguous. Matrices here are tiny (state and
measurement dimensions of a handful), so products are written as plain loops;
BLAS dispatch costs more than the arithmetic at these sizes.
"""

import math

import numpy as np
from numba import njit

from alssm.errors import NumericalError

# residual second moments are floored here so that E[lambda] stays finite
U_FLOOR = 1e-24
JITTER = 1e-12


@njit(cache=True)
def _mm(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


@njit(cache=True)
def _mmt(a, b):
    """a @ b.T"""
    n, k = a.shape
    m = b.shape[0]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[j, t]
            out[i, j] = s
    return out


@njit(cache=True)
def _mv(a, x):
    n, k = a.shape
    out = np.zeros(n)
    for i in range(n):
        s = 0.0
        for t in range(k):
            s += a[i, t] * x[t]
        out[i] = s
    return out


@njit(cache=True)
def _sym(P):
    n = P.shape[0]
    out = np.empty_like(P)
    for i in range(n):
        for j in range(n):
            out[i, j] = 0.5 * (P[i, j] + P[j, i])
    return out


@njit(cache=True)
def _chol(S):
    n = S.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        d = S[j, j]
        for t in range(j):
            d -= L[j, t] * L[j, t]
        if not d > 0.0:
            return L, False
        L[j, j] = math.sqrt(d)
        for i in range(j + 1, n):
            s = S[i, j]
            for t in range(j):
                s -= L[i, t] * L[j, t]
            L[i, j] = s / L[j, j]
    return L, True


@njit(cache=True)
def chol_solve(S, B):
    """S^{-1} B for symmetric positive-definite S, retrying once with jitter."""
    L, ok = _chol(S)
    if not ok:
        n = S.shape[0]
        scale = 0.0
        for i in range(n):
            scale += abs(S[i, i])
        Sj = S.copy()
        for i in range(n):
            Sj[i, i] += JITTER * (1.0 + scale / n)
        L, ok = _chol(Sj)
        if not ok:
            raise NumericalError("matrix is not positive definite even after jitter")
    n, m = B.shape
    X = np.empty((n, m))
    for c in range(m):
        z = np.empty(n)
        for i in range(n):
            s = B[i, c]
            for t in range(i):
                s -= L[i, t] * z[t]
            z[i] = s / L[i, i]
        for i in range(n - 1, -1, -1):
            s = z[i]
            for t in range(i + 1, n):
                s -= L[t, i] * X[t, c]
            X[i, c] = s / L[i, i]
    return X


@njit(cache=True)
def predict(A, b, Q, x, P):
    xn = _mv(A, x) + b
    Pn = _sym(_mmt(_mm(A, P), A) + Q)
    return xn, Pn


@njit(cache=True)
def update(x, P, C, y, m, r):
    """Measurement update with noise mean ``m`` and diagonal variances ``r``.

    Returns posterior mean, Joseph-form covariance, gain and innovation.
    """
    nx = x.shape[0]
    ny = y.shape[0]
    PCt = _mmt(P, C)
    S = _mm(C, PCt)
    for i in range(ny):
        S[i, i] += r[i]
    K = chol_solve(S, PCt.T.copy()).T.copy()
    innov = y - _mv(C, x) - m
    xn = x + _mv(K, innov)
    IKC = -_mm(K, C)
    for i in range(nx):
        IKC[i, i] += 1.0
    KR = K.copy()
    for j in range(ny):
        for i in range(nx):
            KR[i, j] *= r[j]
    Pn = _sym(_mmt(_mm(IKC, P), IKC) + _mmt(KR, K))
    return xn, Pn, K, innov


@njit(cache=True)
def forward(A, b, Q, C, pi1, S1, y, m, r):
    """Kalman forward pass with per-step noise mean ``m[k]`` and variances ``r[k]``.

    The first step updates the prior ``(pi1, S1)`` against ``y[0]``.
    """
    T, ny = y.shape
    nx = pi1.shape[0]
    xp = np.empty((T, nx))
    Pp = np.empty((T, nx, nx))
    xf = np.empty((T, nx))
    Pf = np.empty((T, nx, nx))
    for k in range(T):
        if k == 0:
            xp[0] = pi1
            Pp[0] = S1
        else:
            xk, Pk = predict(A, b, Q, xf[k - 1], Pf[k - 1])
            xp[k] = xk
            Pp[k] = Pk
        xn, Pn, _, _ = update(xp[k], Pp[k], C, y[k], m[k], r[k])
        xf[k] = xn
        Pf[k] = Pn
    return xp, Pp, xf, Pf


@njit(cache=True)
def rts(A, xp, Pp, xf, Pf):
    T, nx = xf.shape
    xs = np.empty((T, nx))
    Ps = np.empty((T, nx, nx))
    L = np.zeros((max(T - 1, 0), nx, nx))
    xs[T - 1] = xf[T - 1]
    Ps[T - 1] = Pf[T - 1]
    for k in range(T - 2, -1, -1):
        # L = Pf A^T Pp^{-1}  ->  L^T = Pp^{-1} A Pf
        Lk = chol_solve(Pp[k + 1], _mm(A, Pf[k])).T.copy()
        L[k] = Lk
        xs[k] = xf[k] + _mv(Lk, xs[k + 1] - xp[k + 1])
        Ps[k] = _sym(Pf[k] + _mmt(_mm(Lk, Ps[k + 1] - Pp[k + 1]), Lk))
    return xs, Ps, L


@njit(cache=True)
def effective_noise(e_lam, mu, p, sigma):
    ny = mu.shape[0]
    m = np.empty(ny)
    r = np.empty(ny)
    for i in range(ny):
        w = e_lam[i] * p[i] * (1.0 - p[i])
        r[i] = sigma[i] * sigma[i] / w
        m[i] = mu[i] + (0.5 - p[i]) * sigma[i] / w
    return m, r


@njit(cache=True)
def residual_moment(y, C, x, P, mu):
    """E[(y - C x - mu)^2] per component under x ~ N(x, P)."""
    ny = y.shape[0]
    Cx = _mv(C, x)
    CP = _mm(C, P)
    u = np.empty(ny)
    for i in range(ny):
        d = y[i] - Cx[i] - mu[i]
        v = 0.0
        for t in range(C.shape[1]):
            v += CP[i, t] * C[i, t]
        u[i] = max(d * d + v, U_FLOOR)
    return u


@njit(cache=True)
def lambda_mean(u, p, sigma):
    ny = u.shape[0]
    e = np.empty(ny)
    for i in range(ny):
        e[i] = sigma[i] / (2.0 * p[i] * (1.0 - p[i]) * math.sqrt(u[i]))
    return e


@njit(cache=True)
def _traj_delta(xa, Pa, xb, Pb):
    dx = 0.0
    dP = 0.0
    nx_ = 0.0
    nP = 0.0
    for k in range(xa.shape[0]):
        for i in range(xa.shape[1]):
            d = xa[k, i] - xb[k, i]
            dx += d * d
            nx_ += xa[k, i] * xa[k, i]
            for j in range(xa.shape[1]):
                e = Pa[k, i, j] - Pb[k, i, j]
                dP += e * e
                nP += Pa[k, i, j] * Pa[k, i, j]
    return math.sqrt(dx) + math.sqrt(dP), 1.0 + math.sqrt(nx_) + math.sqrt(nP)


@njit(cache=True)
def al_smoother(A, b, Q, C, pi1, S1, y, mu, p, sigma, e0, tol, max_iters):
    """Variational AL smoother: alternate forward-backward passes with latent-scale updates."""
    T, ny = y.shape
    e_lam = e0.copy()
    m = np.empty((T, ny))
    r = np.empty((T, ny))
    u = np.empty((T, ny))
    converged = False
    n_iter = 0
    xs_prev = np.empty((0, pi1.shape[0]))
    Ps_prev = np.empty((0, pi1.shape[0], pi1.shape[0]))
    for it in range(max_iters):
        for k in range(T):
            mk, rk = effective_noise(e_lam[k], mu, p, sigma)
            m[k] = mk
            r[k] = rk
        xp, Pp, xf, Pf = forward(A, b, Q, C, pi1, S1, y, m, r)
        xs, Ps, L = rts(A, xp, Pp, xf, Pf)
        for k in range(T):
            u[k] = residual_moment(y[k], C, xs[k], Ps[k], mu)
            e_lam[k] = lambda_mean(u[k], p, sigma)
        n_iter = it + 1
        if it > 0:
            delta, scale = _traj_delta(xs, Ps, xs_prev, Ps_prev)
            if delta < tol * scale:
                converged = True
                break
        xs_prev = xs
        Ps_prev = Ps
    return xs, Ps, L, xp, Pp, xf, Pf, e_lam, u, n_iter, converged


@njit(cache=True)
def fast_al_filter(A, b, Q, C, pi1, S1, y, mu, p, sigma, lam_init, tol, max_iters):
    T, ny = y.shape
    nx = pi1.shape[0]
    xp = np.empty((T, nx))
    Pp = np.empty((T, nx, nx))
    xf = np.empty((T, nx))
    Pf = np.empty((T, nx, nx))
    e_out = np.empty((T, ny))
    u_out = np.empty((T, ny))
    iters = np.zeros(T, dtype=np.int64)
    conv = np.zeros(T, dtype=np.bool_)
    for k in range(T):
        if k == 0:
            xk = pi1.copy()
            Pk = S1.copy()
        else:
            xk, Pk = predict(A, b, Q, xf[k - 1], Pf[k - 1])
        xp[k] = xk
        Pp[k] = Pk
        e_lam = np.full(ny, lam_init)
        x_prev = xk
        P_prev = Pk
        x = xk
        P = Pk
        u = np.empty(ny)
        for j in range(max_iters):
            m, r = effective_noise(e_lam, mu, p, sigma)
            x, P, _, _ = update(xk, Pk, C, y[k], m, r)
            u = residual_moment(y[k], C, x, P, mu)
            e_lam = lambda_mean(u, p, sigma)
            iters[k] = j + 1
            dx = 0.0
            dP = 0.0
            nxx = 0.0
            nP = 0.0
            for i in range(nx):
                dx += (x[i] - x_prev[i]) ** 2
                nxx += x[i] * x[i]
                for t in range(nx):
                    dP += (P[i, t] - P_prev[i, t]) ** 2
                    nP += P[i, t] * P[i, t]
            if math.sqrt(dx) + math.sqrt(dP) < tol * (1.0 + math.sqrt(nxx) + math.sqrt(nP)):
                conv[k] = True
                break
            x_prev = x
            P_prev = P
        xf[k] = x
        Pf[k] = P
        e_out[k] = e_lam
        u_out[k] = u
    return xp, Pp, xf, Pf, e_out, u_out, iters, conv


@njit(cache=True)
def exact_al_filter(A, b, Q, C, pi1, S1, y, mu, p, sigma, lam_init, tol, max_iters):
    """Run the smoother on every growing prefix, warm-starting the latent scales."""
    T, ny = y.shape
    nx = pi1.shape[0]
    xf = np.empty((T, nx))
    Pf = np.empty((T, nx, nx))
    iters = np.zeros(T, dtype=np.int64)
    conv = np.zeros(T, dtype=np.bool_)
    e_prev = np.full((T, ny), lam_init)
    for k in range(T):
        e0 = np.full((k + 1, ny), lam_init)
        e0[:k] = e_prev[:k]
        res = al_smoother(A, b, Q, C, pi1, S1, y[: k + 1].copy(), mu, p, sigma, e0, tol, max_iters)
        xs = res[0]
        Ps = res[1]
        xf[k] = xs[k]
        Pf[k] = Ps[k]
        e_prev[: k + 1] = res[7]
        iters[k] = res[9]
        conv[k] = res[10]
    return xf, Pf, e_prev, iters, conv


@njit(cache=True)
def adaptive_filter(A, b, Q, C, pi1, S1, y, m, n_win, base_var, floor):
    """Innovation-windowed noise-variance estimation on top of a Kalman filter."""
    T, ny = y.shape
    nx = pi1.shape[0]
    xp = np.empty((T, nx))
    Pp = np.empty((T, nx, nx))
    xf = np.empty((T, nx))
    Pf = np.empty((T, nx, nx))
    r_out = np.empty((T, ny))
    d = np.empty((T, ny))
    for k in range(T):
        if k == 0:
            xk = pi1.copy()
            Pk = S1.copy()
        else:
            xk, Pk = predict(A, b, Q, xf[k - 1], Pf[k - 1])
        xp[k] = xk
        Pp[k] = Pk
        CPC = _mmt(_mm(C, Pk), C)
        r = np.empty(ny)
        for i in range(ny):
            if k < n_win:
                r[i] = base_var
            else:
                s = 0.0
                for j in range(1, n_win + 1):
                    s += d[k - j, i] * d[k - j, i]
                r[i] = max(s / n_win - CPC[i, i], floor)
        x, P, _, innov = update(xk, Pk, C, y[k], m, r)
        d[k] = innov
        xf[k] = x
        Pf[k] = P
        r_out[k] = r
    return xp, Pp, xf, Pf, r_out


# --------------------------------------------------------------------------
# scalar-state, scalar-measurement specializations (no per-step allocation)


@njit(cache=True)
def _smoother_1d_pass(a, b, q, c, pi1, s1, y, mu, p, sigma, e_lam, xp, Pp, xf, Pf, xs, Ps, L):
    T = y.shape[0]
    kappa = p * (1.0 - p)
    for k in range(T):
        if k == 0:
            xk = pi1
            Pk = s1
        else:
            xk = a * xf[k - 1] + b
            Pk = a * a * Pf[k - 1] + q
        xp[k] = xk
        Pp[k] = Pk
        w = e_lam[k] * kappa
        r = sigma * sigma / w
        m = mu + (0.5 - p) * sigma / w
        S = c * c * Pk + r
        if not S > 0.0:
            raise NumericalError("innovation variance is not positive")
        g = Pk * c / S
        xf[k] = xk + g * (y[k] - c * xk - m)
        one = 1.0 - g * c
        Pf[k] = one * one * Pk + g * g * r
    xs[T - 1] = xf[T - 1]
    Ps[T - 1] = Pf[T - 1]
    for k in range(T - 2, -1, -1):
        if not Pp[k + 1] > 0.0:
            raise NumericalError("predicted variance is not positive")
        l = Pf[k] * a / Pp[k + 1]
        L[k] = l
        xs[k] = xf[k] + l * (xs[k + 1] - xp[k + 1])
        Ps[k] = Pf[k] + l * l * (Ps[k + 1] - Pp[k + 1])


@njit(cache=True)
def al_smoother_1d(a, b, q, c, pi1, s1, y, mu, p, sigma, e0, tol, max_iters):
    T = y.shape[0]
    e_lam = e0.copy()
    u = np.empty(T)
    xp = np.empty(T)
    Pp = np.empty(T)
    xf = np.empty(T)
    Pf = np.empty(T)
    xs = np.empty(T)
    Ps = np.empty(T)
    xs_prev = np.empty(T)
    Ps_prev = np.empty(T)
    L = np.zeros(max(T - 1, 0))
    kappa = p * (1.0 - p)
    converged = False
    n_iter = 0
    for it in range(max_iters):
        _smoother_1d_pass(a, b, q, c, pi1, s1, y, mu, p, sigma, e_lam, xp, Pp, xf, Pf, xs, Ps, L)
        dx = 0.0
        dP = 0.0
        nx_ = 0.0
        nP = 0.0
        for k in range(T):
            d = y[k] - c * xs[k] - mu
            uk = max(d * d + c * c * Ps[k], U_FLOOR)
            u[k] = uk
            e_lam[k] = sigma / (2.0 * kappa * math.sqrt(uk))
            ddx = xs[k] - xs_prev[k]
            ddP = Ps[k] - Ps_prev[k]
            dx += ddx * ddx
            dP += ddP * ddP
            nx_ += xs[k] * xs[k]
            nP += Ps[k] * Ps[k]
            xs_prev[k] = xs[k]
            Ps_prev[k] = Ps[k]
        n_iter = it + 1
        if it > 0 and math.sqrt(dx) + math.sqrt(dP) < tol * (1.0 + math.sqrt(nx_) + math.sqrt(nP)):
            converged = True
            break
    return xs, Ps, L, xp, Pp, xf, Pf, e_lam, u, n_iter, converged


@njit(cache=True)
def exact_al_filter_1d(a, b, q, c, pi1, s1, y, mu, p, sigma, lam_init, tol, max_iters):
    T = y.shape[0]
    xf = np.empty(T)
    Pf = np.empty(T)
    iters = np.zeros(T, dtype=np.int64)
    conv = np.zeros(T, dtype=np.bool_)
    e_prev = np.full(T, lam_init)
    for k in range(T):
        e0 = e_prev[: k + 1].copy()
        e0[k] = lam_init
        res = al_smoother_1d(a, b, q, c, pi1, s1, y[: k + 1], mu, p, sigma, e0, tol, max_iters)
        xf[k] = res[0][k]
        Pf[k] = res[1][k]
        e_prev[: k + 1] = res[7]
        iters[k] = res[9]
        conv[k] = res[10]
    return xf, Pf, e_prev, iters, conv


@njit(cache=True)
def fast_al_filter_1d(a, b, q, c, pi1, s1, y, mu, p, sigma, lam_init, tol, max_iters):
    T = y.shape[0]
    xp = np.empty(T)
    Pp = np.empty(T)
    xf = np.empty(T)
    Pf = np.empty(T)
    e_out = np.empty(T)
    u_out = np.empty(T)
    iters = np.zeros(T, dtype=np.int64)
    conv = np.zeros(T, dtype=np.bool_)
    kappa = p * (1.0 - p)
    for k in range(T):
        if k == 0:
            xk = pi1
            Pk = s1
        else:
            xk = a * xf[k - 1] + b
            Pk = a * Pf[k - 1] * a + q
        xp[k] = xk
        Pp[k] = Pk
        e_lam = lam_init
        x_prev = xk
        P_prev = Pk
        x = xk
        P = Pk
        u = 0.0
        for j in range(max_iters):
            w = e_lam * kappa
            r = sigma * sigma / w
            m = mu + (0.5 - p) * sigma / w
            S = c * Pk * c + r
            if not S > 0.0:
                raise NumericalError("innovation variance is not positive")
            K = Pk * c / S
            x = xk + K * (y[k] - c * xk - m)
            P = Pk - K * c * Pk
            d = y[k] - c * x - mu
            u = max(d * d + c * P * c, U_FLOOR)
            e_lam = sigma / (2.0 * kappa * math.sqrt(u))
            iters[k] = j + 1
            if abs(x - x_prev) + abs(P - P_prev) < tol * (1.0 + abs(x) + abs(P)):
                conv[k] = True
                break
            x_prev = x
            P_prev = P
        xf[k] = x
        Pf[k] = P
        e_out[k] = e_lam
        u_out[k] = u
    return xp, Pp, xf, Pf, e_out, u_out, iters, conv
