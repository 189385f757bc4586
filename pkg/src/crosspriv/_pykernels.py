"""Pure numpy versions of the compiled kernels in ``_ckernels.pyx``."""
import numpy as np

_INV_E = np.exp(-1.0)


def _w_bisect(x):
    lo, hi = -2.0, -1.0
    while lo * np.exp(lo) <= x:
        lo *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid * np.exp(mid) > x:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * abs(mid):
            break
    return 0.5 * (lo + hi)


def lambertw_m1(x, tol=1e-12, max_iter=64):
    x = np.asarray(x, dtype=np.float64)
    flat = x.ravel()
    out = np.empty_like(flat)
    low = flat <= -_INV_E
    top = flat >= 0.0
    out[low] = -1.0
    out[top] = -np.inf
    live = ~(low | top)
    xs = flat[live]
    near_branch = xs < -0.25
    with np.errstate(invalid="ignore", divide="ignore"):
        p = -np.sqrt(2.0 * (1.0 + np.e * xs))
        l1 = np.log(-xs)
        w = np.where(
            near_branch,
            -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p**3,
            l1 - np.log(-l1),
        )
        active = np.ones(w.shape, dtype=bool)
        for _ in range(max_iter):
            if not active.any():
                break
            wa = w[active]
            ew = np.exp(wa)
            f = wa * ew - xs[active]
            wp1 = wa + 1.0
            step = f / (ew * wp1 - (wa + 2.0) * f / (2.0 * wp1))
            step = np.where(wp1 == 0.0, 0.0, step)
            w[active] = wa - step
            done = (np.abs(step) <= 1e-15 * np.abs(w[active])) | (wp1 == 0.0)
            idx = np.flatnonzero(active)
            active[idx[done]] = False
        bad = ~np.isfinite(w) | (w > -1.0) | (np.abs(w * np.exp(w) - xs) > tol)
    for i in np.flatnonzero(bad):
        w[i] = _w_bisect(xs[i])
    out[live] = w
    return out.reshape(x.shape)


def grid_log_posterior(cand, obs_lon, obs_lat, eps, servers, is_rsu, sat_logit,
                       agent, temp, log_prior, use_phys=True, use_mig=True):
    lp = np.array(log_prior, dtype=np.float64, copy=True)
    with np.errstate(divide="ignore"):
        if use_phys:
            d = np.hypot(cand[:, 0] - obs_lon, cand[:, 1] - obs_lat)
            phys = np.where(d > 0.0, np.log(np.where(d > 0, d, 1.0)) - eps * d, -np.inf)
            lp = lp + phys
        if use_mig and len(servers):
            rsu = np.asarray(is_rsu, dtype=bool)
            dist = np.hypot(cand[:, None, 0] - servers[None, :, 0],
                            cand[:, None, 1] - servers[None, :, 1])
            logits = np.where(rsu[None, :], -dist / temp, sat_logit)
            m = logits.max(axis=1)
            lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
            lp = lp + logits[:, agent] - lse
    top = lp.max() if lp.size else -np.inf
    if top == -np.inf:
        return lp, True
    p = np.exp(lp - top)
    return p / p.sum(), False


def gae(rewards, values, dones, gamma, lam):
    T = len(rewards)
    adv = np.empty(T, dtype=np.float64)
    running = 0.0
    for t in range(T - 1, -1, -1):
        nonterminal = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * values[t + 1] * nonterminal - values[t]
        running = delta + gamma * lam * nonterminal * running
        adv[t] = running
    return adv
