# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Must agree with ``_pykernels`` to ~1e-12."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, fabs, INFINITY, isfinite

cnp.import_array()

cdef double _E = 2.718281828459045
cdef double _INV_E = 0.36787944117144233


cdef inline double _w_guess(double x) nogil:
    cdef double p, l1
    if x < -0.25:
        p = -sqrt(2.0 * (1.0 + _E * x))
        return -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    l1 = log(-x)
    return l1 - log(-l1)


cdef inline double _w_bisect(double x) nogil:
    cdef double lo = -2.0, hi = -1.0, mid
    cdef int i
    while lo * exp(lo) <= x:
        lo *= 2.0
    for i in range(200):
        mid = 0.5 * (lo + hi)
        if mid * exp(mid) > x:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * fabs(mid):
            break
    return 0.5 * (lo + hi)


cdef inline double _lambertw_m1(double x, double tol, int max_iter) nogil:
    cdef double w, ew, f, wp1, step
    cdef int i
    if x <= -_INV_E:
        return -1.0
    if x >= 0.0:
        return -INFINITY
    w = _w_guess(x)
    for i in range(max_iter):
        ew = exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        if wp1 == 0.0:
            break
        step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w -= step
        if fabs(step) <= 1e-15 * fabs(w):
            break
    if not isfinite(w) or w > -1.0 or fabs(w * exp(w) - x) > tol:
        return _w_bisect(x)
    return w


def lambertw_m1(x, double tol=1e-12, int max_iter=64):
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    out = np.empty(xv.shape[0], dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(xv.shape[0]):
            ov[i] = _lambertw_m1(xv[i], tol, max_iter)
    return out.reshape(np.shape(x))


def grid_log_posterior(double[:, ::1] cand, double obs_lon, double obs_lat,
                       double eps, double[:, ::1] servers, cnp.uint8_t[::1] is_rsu,
                       double sat_logit, Py_ssize_t agent, double temp,
                       double[::1] log_prior, bint use_phys=True, bint use_mig=True):
    cdef Py_ssize_t k, j, K = cand.shape[0], S = servers.shape[0]
    out = np.empty(K, dtype=np.float64)
    cdef double[::1] lp = out
    cdef double dx, dy, d, m, s, agent_logit, logit, top = -INFINITY, total = 0.0
    cdef bint degenerate = False
    with nogil:
        for k in range(K):
            lp[k] = log_prior[k]
            if use_phys:
                dx = cand[k, 0] - obs_lon
                dy = cand[k, 1] - obs_lat
                d = sqrt(dx * dx + dy * dy)
                if d > 0.0:
                    lp[k] += log(d) - eps * d
                else:
                    lp[k] = -INFINITY
            if use_mig and S > 0:
                m = -INFINITY
                agent_logit = 0.0
                for j in range(S):
                    if is_rsu[j]:
                        dx = cand[k, 0] - servers[j, 0]
                        dy = cand[k, 1] - servers[j, 1]
                        logit = -sqrt(dx * dx + dy * dy) / temp
                    else:
                        logit = sat_logit
                    if j == agent:
                        agent_logit = logit
                    if logit > m:
                        m = logit
                s = 0.0
                for j in range(S):
                    if is_rsu[j]:
                        dx = cand[k, 0] - servers[j, 0]
                        dy = cand[k, 1] - servers[j, 1]
                        logit = -sqrt(dx * dx + dy * dy) / temp
                    else:
                        logit = sat_logit
                    s += exp(logit - m)
                lp[k] += agent_logit - m - log(s)
            if lp[k] > top:
                top = lp[k]
        if top == -INFINITY:
            degenerate = True
        else:
            for k in range(K):
                lp[k] = exp(lp[k] - top)
                total += lp[k]
            for k in range(K):
                lp[k] /= total
    return out, degenerate


def gae(double[::1] rewards, double[::1] values, cnp.uint8_t[::1] dones,
        double gamma, double lam):
    cdef Py_ssize_t t, T = rewards.shape[0]
    out = np.empty(T, dtype=np.float64)
    cdef double[::1] adv = out
    cdef double running = 0.0, nonterminal, delta
    with nogil:
        for t in range(T - 1, -1, -1):
            nonterminal = 0.0 if dones[t] else 1.0
            delta = rewards[t] + gamma * values[t + 1] * nonterminal - values[t]
            running = delta + gamma * lam * nonterminal * running
            adv[t] = running
    return out
