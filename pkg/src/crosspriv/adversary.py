"""Bayesian cross-reality inference attack and the location-entropy metric.

The adversary fuses two observations of a vehicle: the perturbed position it
reports (physical side) and the edge server hosting its agent (virtual side).
Both are treated as conditionally independent given the true cell.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from . import kernels
from .geo import GeoPoint, planar_laplace_pdf
from .world import KM_PER_DEGREE

PRIOR_KINDS = ("uniform", "motion")
EPS_MODES = ("informed", "static")


@dataclass(frozen=True)
class AdversaryModel:
    """Attack parameters. Distances and temperatures are in coordinate degrees.

    ``eps_mode="informed"`` lets the attacker know the executed radius ``r`` and
    centre its ring likelihood on it (``eps = 1/max(r, radius_floor)``);
    ``"static"`` always uses ``eps_assumed``.
    """
    eps_assumed: float = 1.0 / 0.015
    server_affinity_temp: float = 0.01
    prior_kind: str = "uniform"
    motion_sigma: float = 0.005
    motion_step: float = 0.0034
    eps_mode: str = "informed"
    radius_floor: float = 0.00025
    sat_offset: float = 0.05

    def __post_init__(self):
        if not self.eps_assumed > 0:
            raise ValueError("eps_assumed must be positive")
        if not self.server_affinity_temp > 0:
            raise ValueError("server_affinity_temp must be positive")
        if self.prior_kind not in PRIOR_KINDS:
            raise ValueError(f"prior_kind must be one of {PRIOR_KINDS}")
        if self.eps_mode not in EPS_MODES:
            raise ValueError(f"eps_mode must be one of {EPS_MODES}")
        if self.motion_sigma < 0 or self.motion_step < 0 or not self.radius_floor > 0:
            raise ValueError("motion_sigma/motion_step must be >= 0 and radius_floor > 0")

    def eps_for(self, executed_radius: float | None) -> float:
        if self.eps_mode == "static" or executed_radius is None:
            return self.eps_assumed
        return 1.0 / max(executed_radius, self.radius_floor)

    @property
    def sat_logit(self) -> float:
        return -self.sat_offset / self.server_affinity_temp


@dataclass(frozen=True)
class ActiveSet:
    ij: np.ndarray   # (K, 2) integer grid indices
    xy: np.ndarray   # (K, 2) lon/lat cell centres

    def __len__(self):
        return len(self.xy)


class CandidateGrid:
    """Uniform lon/lat grid; the active set is every cell centre near the report."""

    def __init__(self, origin: GeoPoint, cell: float = 0.005, radius: float = 0.05):
        if not cell > 0 or radius < cell:
            raise ValueError("need cell > 0 and radius >= cell")
        self.origin = origin
        self.cell = cell
        self.radius = radius
        span = int(math.ceil(radius / cell)) + 1
        di, dj = np.meshgrid(np.arange(-span, span + 1), np.arange(-span, span + 1), indexing="ij")
        self._offsets = np.stack([di.ravel(), dj.ravel()], axis=1)

    def center(self, ij):
        ij = np.asarray(ij, dtype=np.float64)
        return np.stack([self.origin.lon + (ij[..., 0] + 0.5) * self.cell,
                         self.origin.lat + (ij[..., 1] + 0.5) * self.cell], axis=-1)

    def index_of(self, lon, lat):
        return (np.floor((np.asarray(lon) - self.origin.lon) / self.cell).astype(np.int64),
                np.floor((np.asarray(lat) - self.origin.lat) / self.cell).astype(np.int64))

    def active_set(self, observed: GeoPoint) -> ActiveSet:
        i0, j0 = self.index_of(observed.lon, observed.lat)
        ij = self._offsets + np.array([i0, j0])
        xy = self.center(ij)
        keep = np.hypot(xy[:, 0] - observed.lon, xy[:, 1] - observed.lat) <= self.radius
        return ActiveSet(ij[keep], xy[keep])


@dataclass(frozen=True)
class PosteriorDistribution:
    probs: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        p = self.probs
        if p.ndim != 1 or p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("posterior must be a non-empty normalized distribution")


def _xy(candidates):
    if isinstance(candidates, ActiveSet):
        return candidates.xy
    if isinstance(candidates, GeoPoint):
        return np.array([[candidates.lon, candidates.lat]])
    return np.asarray(candidates, dtype=np.float64).reshape(-1, 2)


def perturb_likelihood(candidates, observed: GeoPoint, model: AdversaryModel, eps: float | None = None):
    """Report likelihood per candidate, normalized over the active set."""
    xy = _xy(candidates)
    d = np.hypot(xy[:, 0] - observed.lon, xy[:, 1] - observed.lat)
    lik = np.atleast_1d(planar_laplace_pdf(model.eps_assumed if eps is None else eps, d))
    total = lik.sum()
    return lik / total if total > 0 else np.full(len(xy), 1.0 / len(xy))


def migration_likelihood(candidates, agent_server: int, scenario, model: AdversaryModel):
    """P(agent on ``agent_server`` | vehicle at candidate): softmax of -distance/temp over servers."""
    xy = _xy(candidates)
    srv = scenario.server_xy
    rsu = scenario.server_is_rsu.astype(bool)
    dist = np.hypot(xy[:, None, 0] - srv[None, :, 0], xy[:, None, 1] - srv[None, :, 1])
    logits = np.where(rsu[None, :], -dist / model.server_affinity_temp, model.sat_logit)
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return p[:, agent_server]


class EmpiricalMigrationModel:
    """Frequency estimate of P(agent server | cell) with additive smoothing.

    Drop-in alternative to the softmax likelihood, learned from observed
    (true cell, agent server) pairs.
    """

    def __init__(self, grid: CandidateGrid, n_servers: int, smoothing: float = 1.0):
        self.grid = grid
        self.n_servers = n_servers
        self.smoothing = smoothing
        self.counts = defaultdict(lambda: np.zeros(n_servers))

    def observe(self, true_pos: GeoPoint, agent_server: int):
        i, j = self.grid.index_of(true_pos.lon, true_pos.lat)
        self.counts[(int(i), int(j))][agent_server] += 1.0

    def likelihood(self, active: ActiveSet, agent_server: int):
        out = np.empty(len(active))
        for k, (i, j) in enumerate(active.ij):
            c = self.counts.get((int(i), int(j)))
            c = np.zeros(self.n_servers) if c is None else c
            out[k] = (c[agent_server] + self.smoothing) / (c.sum() + self.smoothing * self.n_servers)
        return out


def prior(active: ActiveSet, prev=None, heading: float = 0.0, model: AdversaryModel | None = None,
          grid: CandidateGrid | None = None):
    """Prior mass over the active set.

    ``prev`` is ``(prev_active, prev_probs)``; the motion prior moves it one
    slot along ``heading`` and blurs it with an isotropic Gaussian.
    Falls back to uniform when no previous mass reaches the active set.
    """
    K = len(active)
    uniform = np.full(K, 1.0 / K)
    if model is None or model.prior_kind == "uniform" or prev is None:
        return uniform
    prev_active, prev_probs = prev
    lat = float(np.mean(prev_active.xy[:, 1]))
    shift = np.array([model.motion_step * math.cos(heading) / max(math.cos(math.radians(lat)), 1e-9),
                      model.motion_step * math.sin(heading)])
    moved = prev_active.xy + shift
    if model.motion_sigma == 0.0:
        if grid is None:
            raise ValueError("a zero-width motion prior needs the candidate grid")
        mi, mj = grid.index_of(moved[:, 0], moved[:, 1])
        lookup = {(int(a), int(b)): k for k, (a, b) in enumerate(active.ij)}
        out = np.zeros(K)
        for a, b, p in zip(mi, mj, prev_probs):
            k = lookup.get((int(a), int(b)))
            if k is not None:
                out[k] += p
    else:
        d2 = ((active.xy[:, None, :] - moved[None, :, :]) ** 2).sum(axis=2)
        out = np.exp(-0.5 * d2 / model.motion_sigma ** 2) @ prev_probs
    total = out.sum()
    return out / total if total > 0 and np.isfinite(total) else uniform


def compute_posterior(active, prior_probs, observed: GeoPoint, agent_server: int,
                      model: AdversaryModel, scenario, eps: float | None = None,
                      use_phys: bool = True, use_mig: bool = True,
                      migration_override=None) -> PosteriorDistribution:
    """Normalized product of report likelihood, migration likelihood and prior.

    ``use_phys``/``use_mig`` drop a term for the single-sided ablations;
    ``migration_override`` replaces the softmax term with given per-cell values.
    Falls back to the prior (flagged degenerate) when every numerator vanishes.
    """
    xy = _xy(active)
    prior_probs = np.asarray(prior_probs, dtype=np.float64)
    with np.errstate(divide="ignore"):
        log_prior = np.log(prior_probs)
        if migration_override is not None:
            log_prior = log_prior + np.log(np.asarray(migration_override, dtype=np.float64))
            use_mig = False
    probs, degenerate = kernels.grid_log_posterior(
        xy, observed.lon, observed.lat, model.eps_assumed if eps is None else eps,
        scenario.server_xy, scenario.server_is_rsu, model.sat_logit, agent_server,
        model.server_affinity_temp, log_prior, use_phys, use_mig)
    if degenerate:
        return PosteriorDistribution(prior_probs / prior_probs.sum(), True)
    return PosteriorDistribution(probs, False)


def cross_reality_entropy(post) -> float:
    p = post.probs if isinstance(post, PosteriorDistribution) else np.asarray(post, dtype=np.float64)
    nz = p[p > 0]
    return float(max(0.0, -(nz * np.log2(nz)).sum()))


def attacker_confidence(post) -> float:
    p = post.probs if isinstance(post, PosteriorDistribution) else np.asarray(post, dtype=np.float64)
    return float(p.max())


def step_from_speed(speed_kmh: float, slot_seconds: float) -> float:
    """Degrees travelled in one slot at ``speed_kmh`` (for ``motion_step``)."""
    return speed_kmh * slot_seconds / 3600.0 / KM_PER_DEGREE
