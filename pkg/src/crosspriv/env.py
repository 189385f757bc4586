"""The privacy/latency MDP: state assembly, hybrid actions, rewards, step logs."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .adversary import (AdversaryModel, CandidateGrid, attacker_confidence, compute_posterior,
                        cross_reality_entropy, prior)
from .geo import GeoPoint, PolarOffset, apply_polar_offset, haversine_km, included_angle, wrap_angle
from .radio import qos_loss, total_latency
from .world import Scenario, VehicleSnapshot, connected_server


class ActionError(ValueError):
    """An action that cannot be projected (invalid server index or wrong shape)."""


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RewardWeights:
    w_entropy: float = 1.0
    w_latency: float = 0.5
    w_qos: float = 0.5
    w1: float = 1.0
    w2: float = 0.5
    w3: float = 0.5
    w4: float = 0.3
    w5: float = 0.2
    q_max: float | None = None

    def __post_init__(self):
        for k in ("w_entropy", "w_latency", "w_qos", "w1", "w2", "w3", "w4", "w5"):
            if getattr(self, k) < 0:
                raise ConfigError(f"reward weight {k} must be >= 0")
        if self.q_max is not None and not self.q_max > 0:
            raise ConfigError("q_max must be positive")


def q_max_for(r_max: float, at: GeoPoint) -> float:
    """QoS loss of a report displaced by ``r_max`` degrees northward from ``at``."""
    q = qos_loss(at, GeoPoint(at.lon, min(90.0, at.lat + r_max)))
    if not q > 0:
        raise ConfigError("q_max evaluates to zero; r_max must be positive")
    return q


@dataclass(frozen=True)
class HybridAction:
    radius: np.ndarray
    theta: np.ndarray
    servers: np.ndarray

    @classmethod
    def of(cls, radius, theta, servers):
        return cls(np.atleast_1d(np.asarray(radius, dtype=np.float64)),
                   np.atleast_1d(np.asarray(theta, dtype=np.float64)),
                   np.atleast_1d(np.asarray(servers)))


def action_violations(action: HybridAction, r_max: float, n_servers: int) -> int:
    """Per-vehicle constraint breaches on an executed action (r range, theta range, server validity)."""
    bad = 0
    for r, th, e in zip(action.radius, action.theta, action.servers):
        bad += int(not (0.0 <= r <= r_max))
        bad += int(not (0.0 <= th < 2 * math.pi))
        bad += int(not (float(e) == int(e) and 0 <= int(e) < n_servers))
    return bad


@dataclass
class StepOutcome:
    t: int
    entropy: np.ndarray
    confidence: np.ndarray
    latency: np.ndarray
    latency_parts: list
    qos: np.ndarray
    qos_normalized: np.ndarray
    dist_to_agent: np.ndarray
    included_angle: np.ndarray
    utility: np.ndarray
    reward: float = 0.0
    executed: HybridAction | None = None
    snapshots: list = field(default_factory=list)


def utility(outcome: StepOutcome, weights: RewardWeights):
    return (weights.w_entropy * np.asarray(outcome.entropy) - weights.w_latency * np.asarray(outcome.latency)
            - weights.w_qos * np.asarray(outcome.qos))


def reward_manual(outcome: StepOutcome, weights: RewardWeights) -> float:
    return float(np.mean(utility(outcome, weights)))


def reward_llm(outcome: StepOutcome, weights: RewardWeights) -> float:
    if weights.q_max is None or not weights.q_max > 0:
        raise ConfigError("the refined reward needs a positive q_max")
    q_hat = np.asarray(outcome.qos) / weights.q_max
    per = (weights.w1 * np.asarray(outcome.entropy)
           - weights.w2 * np.log1p(np.asarray(outcome.latency))
           - weights.w3 * q_hat
           - weights.w4 * np.log1p(np.asarray(outcome.dist_to_agent))
           + weights.w5 * np.asarray(outcome.included_angle))
    return float(np.mean(per))


REWARD_FUNCTIONS = {"manual": reward_manual, "llm_refined": reward_llm}


def episode_objective(utilities) -> float:
    """Mean utility over slots and vehicles; ``utilities`` is (T, M) or a list of outcomes."""
    if len(utilities) and isinstance(utilities[0], StepOutcome):
        utilities = [o.utility for o in utilities]
    u = np.asarray(utilities, dtype=np.float64)
    if u.size == 0:
        raise ValueError("empty episode")
    return float(u.mean())


class Env:
    """One pass over the scenario's traces is an episode of ``scenario.horizon`` steps."""

    def __init__(self, scenario: Scenario, adversary: AdversaryModel | None = None,
                 grid: CandidateGrid | None = None, reward: str = "llm_refined",
                 weights: RewardWeights | None = None, seed: int = 0, log=None):
        if reward not in REWARD_FUNCTIONS:
            raise ConfigError(f"unknown reward function {reward!r}; choose from {sorted(REWARD_FUNCTIONS)}")
        self.scenario = scenario
        self.adversary = adversary or AdversaryModel()
        bbox = scenario.bbox
        if bbox is None:
            raise ConfigError("the environment needs a scenario bounding box for state normalization")
        self.grid = grid or CandidateGrid(GeoPoint(bbox.lon_min, bbox.lat_min))
        weights = weights or RewardWeights()
        if weights.q_max is None:
            weights = replace(weights, q_max=q_max_for(self.r_max, bbox.center))
        self.weights = weights
        self.reward_name = reward
        self.reward_fn = REWARD_FUNCTIONS[reward]
        self.log = log
        self.violations = 0
        self.episode = -1
        self.rng = np.random.default_rng(seed)
        self._seed = seed
        self.t = 0

    # ------------------------------------------------------------------ layout
    @property
    def r_max(self) -> float:
        return self.scenario.radio.max_radius

    @property
    def n_vehicles(self) -> int:
        return self.scenario.n_vehicles

    @property
    def n_servers(self) -> int:
        return self.scenario.n_servers

    @property
    def state_dim(self) -> int:
        return 7 * self.n_vehicles

    @property
    def horizon(self) -> int:
        return self.scenario.horizon

    def _server_norm(self, idx):
        s = self.scenario.servers[idx]
        if not s.is_rsu:
            return (1.0, 1.0)
        return self.scenario.bbox.normalize(s.position.lon, s.position.lat)

    def state(self) -> np.ndarray:
        out = np.empty(self.state_dim)
        t = min(self.t, self.horizon - 1)
        for m, v in enumerate(self.scenario.vehicles):
            p = v.trajectory[t]
            x, y = self.scenario.bbox.normalize(p.pos.lon, p.pos.lat)
            out[7 * m:7 * m + 7] = (x, y, p.heading / (2 * math.pi), *self._server_norm(self.connected[m]),
                                    *self._server_norm(self.prev_agent[m]))
        return out

    # ---------------------------------------------------------------- dynamics
    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._seed = seed
        self.rng = np.random.default_rng(self._seed)
        self.episode += 1
        self.t = 0
        servers = self.scenario.servers
        self.connected = [connected_server(v.trajectory[0].pos, servers) for v in self.scenario.vehicles]
        self.prev_agent = list(self.connected)
        self._prev_post = [None] * self.n_vehicles
        return self.state()

    def project(self, action: HybridAction) -> HybridAction:
        M = self.n_vehicles
        if not (len(action.radius) == len(action.theta) == len(action.servers) == M):
            raise ActionError(f"action must cover {M} vehicles")
        servers = np.asarray(action.servers)
        if not np.all(np.isfinite(servers.astype(np.float64))) or np.any(servers != np.round(servers)):
            raise ActionError(f"non-integer server index in {servers.tolist()}")
        servers = servers.astype(np.int64)
        if np.any(servers < 0) or np.any(servers >= self.n_servers):
            raise ActionError(f"server index out of range 0..{self.n_servers - 1}: {servers.tolist()}")
        if not (np.all(np.isfinite(action.radius)) and np.all(np.isfinite(action.theta))):
            raise ActionError("non-finite perturbation in action")
        r = np.clip(action.radius, 0.0, self.r_max)
        theta = np.array([wrap_angle(float(x)) for x in action.theta])
        self.violations += int(np.sum(r != action.radius)) + int(np.sum(theta != action.theta))
        return HybridAction(r, theta, servers)

    def evaluate_slot(self, t, snaps, executed, prev_posts=None) -> StepOutcome:
        """Entropy, latency and QoS for one slot from raw per-vehicle state."""
        sc = self.scenario
        M = len(snaps)
        fields = {k: np.empty(M) for k in ("entropy", "confidence", "latency", "qos", "qos_normalized",
                                             "dist_to_agent", "included_angle")}
        parts, posts = [], []
        for m, snap in enumerate(snaps):
            v = sc.vehicles[m]
            r = float(executed.radius[m])
            active = self.grid.active_set(snap.perturbed_pos)
            prev = prev_posts[m] if prev_posts is not None else None
            pri = prior(active, prev, snap.heading, self.adversary, self.grid)
            post = compute_posterior(active, pri, snap.perturbed_pos, snap.cur_agent_server,
                                     self.adversary, sc, eps=self.adversary.eps_for(r))
            posts.append((active, post.probs))
            lat = total_latency(v, snap, sc.traffic, sc)
            agent = sc.servers[snap.cur_agent_server]
            if agent.is_rsu:
                d = haversine_km(snap.true_pos, agent.position)
                ang, _ = included_angle(snap.true_pos, agent.position, float(executed.theta[m]))
            else:
                d, ang = sc.radio.sat_distance_km, math.pi / 2
            q = qos_loss(snap.true_pos, snap.perturbed_pos)
            fields["entropy"][m] = cross_reality_entropy(post)
            fields["confidence"][m] = attacker_confidence(post)
            fields["latency"][m] = lat.total
            fields["qos"][m] = q
            fields["qos_normalized"][m] = q / self.weights.q_max
            fields["dist_to_agent"][m] = d
            fields["included_angle"][m] = ang
            parts.append(lat)
        out = StepOutcome(t=t, latency_parts=parts, utility=np.zeros(M), executed=executed,
                          snapshots=list(snaps), **fields)
        out.utility = utility(out, self.weights)
        out.reward = self.reward_fn(out, self.weights)
        return out, posts

    def step(self, action: HybridAction):
        if self.t >= self.horizon:
            raise RuntimeError("episode finished; call reset()")
        executed = self.project(action)
        sc = self.scenario
        snaps = []
        for m, v in enumerate(sc.vehicles):
            p = v.trajectory[self.t]
            rep = apply_polar_offset(p.pos, PolarOffset(float(executed.radius[m]), float(executed.theta[m])))
            snaps.append(VehicleSnapshot(p.pos, p.heading, self.connected[m], self.prev_agent[m],
                                         int(executed.servers[m]), rep))
        outcome, posts = self.evaluate_slot(self.t, snaps, executed, self._prev_post)
        if self.adversary.prior_kind == "motion":
            self._prev_post = posts
        if self.log is not None:
            self.log.write(json.dumps(step_record(self.episode, outcome)) + "\n")
        self.prev_agent = [int(e) for e in executed.servers]
        self.t += 1
        done = self.t >= self.horizon
        if not done:
            self.connected = [connected_server(v.trajectory[self.t].pos, sc.servers) for v in sc.vehicles]
        return self.state(), outcome.reward, outcome, done


def step_record(episode: int, outcome: StepOutcome) -> dict:
    """JSON-serialisable record with the raw slot state and every outcome field."""
    ex = outcome.executed
    return {
        "episode": episode,
        "t": outcome.t,
        "true_pos": [[s.true_pos.lon, s.true_pos.lat] for s in outcome.snapshots],
        "perturbed_pos": [[s.perturbed_pos.lon, s.perturbed_pos.lat] for s in outcome.snapshots],
        "heading": [s.heading for s in outcome.snapshots],
        "connected": [s.connected_server for s in outcome.snapshots],
        "prev_agent": [s.prev_agent_server for s in outcome.snapshots],
        "radius": ex.radius.tolist(),
        "theta": ex.theta.tolist(),
        "agent": [int(e) for e in ex.servers],
        "entropy": outcome.entropy.tolist(),
        "confidence": outcome.confidence.tolist(),
        "latency": outcome.latency.tolist(),
        "latency_parts": [p.as_dict() for p in outcome.latency_parts],
        "qos": outcome.qos.tolist(),
        "qos_normalized": outcome.qos_normalized.tolist(),
        "dist_to_agent": outcome.dist_to_agent.tolist(),
        "included_angle": outcome.included_angle.tolist(),
        "utility": outcome.utility.tolist(),
        "reward": outcome.reward,
    }


def replay(env: Env, records):
    """Recompute outcomes from logged raw state; yields ``(record, recomputed_record)`` pairs."""
    prev_posts, last_episode = None, None
    for rec in records:
        if rec["episode"] != last_episode:
            prev_posts, last_episode = None, rec["episode"]
        snaps = [VehicleSnapshot(GeoPoint(*tp), h, c, pa, a, GeoPoint(*pp))
                 for tp, pp, h, c, pa, a in zip(rec["true_pos"], rec["perturbed_pos"], rec["heading"],
                                                rec["connected"], rec["prev_agent"], rec["agent"])]
        executed = HybridAction.of(rec["radius"], rec["theta"], rec["agent"])
        outcome, posts = env.evaluate_slot(rec["t"], snaps, executed, prev_posts)
        if env.adversary.prior_kind == "motion":
            prev_posts = posts
        yield rec, json.loads(json.dumps(step_record(rec["episode"], outcome)))
