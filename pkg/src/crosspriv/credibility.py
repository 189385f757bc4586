"""Privacy-metric credibility: sweep a fixed hybrid-action intensity through the adversary.

Level ``k`` of ``L`` perturbs by ``r = r_max * k / (L - 1)`` and hosts the
agent on the RSU whose distance rank from the true position is
``round(k / (L - 1) * (N - 1))``: level 0 keeps the agent on the nearest
RSU, the top level on the farthest. Each level reports the cross-reality
entropy, the single-sided ablations (report-only, agent-only) and the
cross-reality attacker's confidence.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import spearmanr

from .adversary import attacker_confidence, compute_posterior, cross_reality_entropy, prior
from .env import Env
from .geo import PolarOffset, apply_polar_offset


@dataclass(frozen=True)
class IntensityLevel:
    level: int
    intensity: float
    radius: float
    server_rank: int
    entropy_cross: float
    entropy_physical: float
    entropy_virtual: float
    confidence: float
    confidence_physical: float


def intensity_schedule(levels: int, r_max: float, n_rsus: int):
    if levels < 2:
        raise ValueError("an intensity sweep needs at least two levels")
    return [(k / (levels - 1), r_max * (k / (levels - 1)), int(round(k / (levels - 1) * (n_rsus - 1))))
            for k in range(levels)]


def evaluate_level(env: Env, level: int, intensity: float, radius: float, rank: int, seed: int = 0,
                   stride: int = 1) -> IntensityLevel:
    sc = env.scenario
    rsu_ids = np.flatnonzero(sc.server_is_rsu.astype(bool))
    rsu_xy = sc.server_xy[rsu_ids]
    rng = np.random.default_rng(seed)
    adv = env.adversary
    eps = adv.eps_for(radius)
    acc = {k: [] for k in ("ec", "ep", "ev", "c", "cp")}
    for t in range(0, sc.horizon, stride):
        for v in sc.vehicles:
            pos = v.trajectory[t].pos
            theta = rng.uniform(0.0, 2 * math.pi) % (2 * math.pi)
            report = apply_polar_offset(pos, PolarOffset(radius, theta))
            order = np.argsort(np.hypot(rsu_xy[:, 0] - pos.lon, rsu_xy[:, 1] - pos.lat), kind="stable")
            agent = int(rsu_ids[order[rank]])
            active = env.grid.active_set(report)
            pri = prior(active)
            cross = compute_posterior(active, pri, report, agent, adv, sc, eps=eps)
            phys = compute_posterior(active, pri, report, agent, adv, sc, eps=eps, use_mig=False)
            virt = compute_posterior(active, pri, report, agent, adv, sc, eps=eps, use_phys=False)
            acc["ec"].append(cross_reality_entropy(cross))
            acc["ep"].append(cross_reality_entropy(phys))
            acc["ev"].append(cross_reality_entropy(virt))
            acc["c"].append(attacker_confidence(cross))
            acc["cp"].append(attacker_confidence(phys))
    m = {k: float(np.mean(v)) for k, v in acc.items()}
    return IntensityLevel(level, intensity, radius, rank, m["ec"], m["ep"], m["ev"], m["c"], m["cp"])


def intensity_sweep(env: Env, levels: int = 10, seed: int = 0, stride: int = 1):
    n_rsus = int(env.scenario.server_is_rsu.sum())
    return [evaluate_level(env, k, x, r, rank, seed, stride)
            for k, (x, r, rank) in enumerate(intensity_schedule(levels, env.r_max, n_rsus))]


def credibility_report(rows) -> dict:
    """Spearman correlations of each entropy variant against the cross-reality attacker's confidence."""
    conf = [r.confidence for r in rows]

    def rho(xs):
        if np.ptp(xs) == 0 or np.ptp(conf) == 0:
            return 0.0
        return float(spearmanr(xs, conf)[0])

    return {"spearman_cross": rho([r.entropy_cross for r in rows]),
            "spearman_physical": rho([r.entropy_physical for r in rows]),
            "spearman_virtual": rho([r.entropy_virtual for r in rows]),
            "levels": [asdict(r) for r in rows]}
