"""Kernel dispatch: compiled extension when available, numpy otherwise.

Set ``CROSSPRIV_PURE_PYTHON=1`` to force the numpy path. ``BACKEND`` names
the implementation that was selected at import.
"""
import os

import numpy as np

from . import _pykernels

_c = None
if os.environ.get("CROSSPRIV_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as _c
    except ImportError:
        _c = None

BACKEND = "cython" if _c is not None else "python"
_impl = _c if _c is not None else _pykernels


def lambertw_m1(x, tol=1e-12, max_iter=64):
    """Lower branch W_{-1} of the Lambert W function on [-1/e, 0)."""
    return _impl.lambertw_m1(np.asarray(x, dtype=np.float64), tol, max_iter)


def grid_log_posterior(cand, obs_lon, obs_lat, eps, servers, is_rsu, sat_logit,
                       agent, temp, log_prior, use_phys=True, use_mig=True):
    """Normalized posterior over candidate cells, computed in log space.

    Returns ``(probs, degenerate)``; when every numerator is zero the log
    numerators are returned unnormalized and ``degenerate`` is True.
    """
    return _impl.grid_log_posterior(
        np.ascontiguousarray(cand, dtype=np.float64),
        float(obs_lon), float(obs_lat), float(eps),
        np.ascontiguousarray(servers, dtype=np.float64).reshape(-1, 2),
        np.ascontiguousarray(is_rsu, dtype=np.uint8),
        float(sat_logit), int(agent), float(temp),
        np.ascontiguousarray(log_prior, dtype=np.float64),
        bool(use_phys), bool(use_mig),
    )


def gae(rewards, values, dones, gamma, lam):
    return _impl.gae(
        np.ascontiguousarray(rewards, dtype=np.float64),
        np.ascontiguousarray(values, dtype=np.float64),
        np.ascontiguousarray(dones, dtype=np.uint8),
        float(gamma), float(lam),
    )


def implementations():
    """Every importable backend, keyed by name (used by tests and benchmarks)."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
