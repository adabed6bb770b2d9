"""Compiled inner loop for run_path.

Walks a foliation cell by cell in the branch representation. Amplitudes
are carried as log-magnitudes plus a sign parity (the Euler scheme can flip
signs); phases never affect branch weights.

``mutation`` removes one term for mutation testing of the check suite:
0 none, 1 the lam^2 drift, 2 the noise term, 3 the measure change
(the <N> shift between dW and dB and inside the nonlinear step).
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _normalize(logmag, w):
    mx = logmag[0]
    for b in range(1, logmag.shape[0]):
        if logmag[b] > mx:
            mx = logmag[b]
    s = 0.0
    for b in range(logmag.shape[0]):
        w[b] = np.exp(2.0 * (logmag[b] - mx))
        s += w[b]
    for b in range(logmag.shape[0]):
        w[b] /= s
    return 2.0 * mx + np.log(s)


@njit(cache=True)
def _var_integral(N, row, w, dx):
    B, T, L = N.shape
    tot = 0.0
    for i in range(L):
        m = 0.0
        m2 = 0.0
        for b in range(B):
            v = N[b, row, i]
            m += w[b] * v
            m2 += w[b] * v * v
        var = m2 - m * m
        if var < 0.0:
            var = 0.0
        tot += var * dx
    return tot


@njit(cache=True)
def integrate(N, order, noise, logmag0, lam, domega, dx, nonlinear, euler,
              eps, stop, start_level, record_steps, record_grids, mutation):
    B, T, L = N.shape
    S = order.shape[0]
    logmag = logmag0.copy()
    parity = np.zeros(B, np.int64)
    w = np.empty(B)

    level_var = np.full(T + 1, np.nan)
    level_lognorm = np.full(T + 1, np.nan)
    level_w = np.full((T + 1, B), np.nan)
    rowcount = np.zeros(T, np.int64)

    ns = S if record_steps else 0
    st_dW = np.empty(ns)
    st_dB = np.empty(ns)
    st_lognorm = np.empty(ns)
    st_meanN = np.empty(ns)
    st_var = np.empty(ns)
    ng_t = T if record_grids else 0
    ng_l = L if record_grids else 0
    g_dW = np.full((ng_t, ng_l), np.nan)
    g_dB = np.full((ng_t, ng_l), np.nan)
    g_meanN = np.full((ng_t, ng_l), np.nan)

    lognorm = _normalize(logmag, w)
    if nonlinear:
        for b in range(B):
            logmag[b] -= 0.5 * lognorm
        lognorm = 0.0
    level_var[0] = _var_integral(N, 0, w, dx)
    level_lognorm[0] = lognorm
    for b in range(B):
        level_w[0, b] = w[b]

    collapse_step = -1
    outcome = -1
    done = 0
    for k in range(S):
        i = order[k, 0]
        t = order[k, 1]
        m = 0.0
        for b in range(B):
            m += w[b] * N[b, t, i]
        lam_k = lam if t >= start_level else 0.0
        if mutation == 3:
            m_eff = 0.0
        else:
            m_eff = m
        if nonlinear:
            dB = noise[t, i]
            dW = dB + 2.0 * lam_k * m_eff * domega
        else:
            dW = noise[t, i]
            dB = dW - 2.0 * lam_k * m * domega
        if lam_k != 0.0:
            for b in range(B):
                if nonlinear:
                    d = N[b, t, i] - m_eff
                    noise_term = lam_k * d * dB
                else:
                    d = N[b, t, i]
                    noise_term = lam_k * d * dW
                drift = lam_k * lam_k * d * d * domega
                if mutation == 1:
                    drift = 0.0
                elif mutation == 2:
                    noise_term = 0.0
                if euler:
                    fac = 1.0 - 0.5 * drift + noise_term
                    if fac < 0.0:
                        parity[b] ^= 1
                        fac = -fac
                    logmag[b] += np.log(fac)
                else:
                    logmag[b] += -drift + noise_term
            lognorm = _normalize(logmag, w)
            if nonlinear:
                for b in range(B):
                    logmag[b] -= 0.5 * lognorm
                lognorm = 0.0
        if record_steps:
            st_dW[k] = dW
            st_dB[k] = dB
            st_lognorm[k] = lognorm
            st_meanN[k] = m
            row = t + 1 if t + 1 < T else T - 1
            st_var[k] = _var_integral(N, row, w, dx)
        if record_grids:
            g_dW[t, i] = dW
            g_dB[t, i] = dB
            g_meanN[t, i] = m
        rowcount[t] += 1
        if rowcount[t] == L:
            lvl = t + 1
            row = lvl if lvl < T else T - 1
            level_var[lvl] = _var_integral(N, row, w, dx)
            level_lognorm[lvl] = lognorm
            for b in range(B):
                level_w[lvl, b] = w[b]
        done = k + 1
        if collapse_step < 0:
            best = 0
            for b in range(1, B):
                if w[b] > w[best]:
                    best = b
            if w[best] > 1.0 - eps:
                collapse_step = k
                outcome = best
                if stop:
                    break
    return (logmag, parity, level_var, level_lognorm, level_w, collapse_step, outcome, done,
            st_dW, st_dB, st_lognorm, st_meanN, st_var, g_dW, g_dB, g_meanN)


@njit(cache=True)
def grow_random_foliation(L, T, slope, u):
    """Maximal chain picking uniformly among allowed advances; u holds L*T uniforms."""
    h = np.zeros(L, np.int64)
    ok = np.zeros(L, np.bool_)
    choices = np.empty(L, np.int64)
    order = np.empty((L * T, 2), np.int64)
    for j in range(L):
        ok[j] = _allowed(h, j, L, T, slope)
    for k in range(L * T):
        n = 0
        for j in range(L):
            if ok[j]:
                choices[n] = j
                n += 1
        i = choices[min(int(u[k] * n), n - 1)]
        order[k, 0] = i
        order[k, 1] = h[i]
        h[i] += 1
        for j in range(max(i - 1, 0), min(i + 2, L)):
            ok[j] = _allowed(h, j, L, T, slope)
    return order


@njit(cache=True)
def _allowed(h, j, L, T, slope):
    if h[j] >= T:
        return False
    nh = h[j] + 1
    if j > 0 and nh - h[j - 1] > slope:
        return False
    if j < L - 1 and nh - h[j + 1] > slope:
        return False
    return True
