"""PPO training for the hybrid diffusion policy, plus the Geo-I and relaxed-PPO baselines."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .env import Env, HybridAction, action_violations, episode_objective
from .geo import sample_planar_laplace_batch
from .policy import HybridPolicy, RelaxedPolicy, make_schedule
from .tensor import Adam, Tensor, as_tensor, clip_grad_norm, maximum, minimum


class TrainingDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    value_coef: float = 0.5
    ent_start: float = 0.01
    ent_end: float = 0.001
    ent_horizon: int = 200
    aux_start: float = 0.1
    aux_end: float = 0.0
    aux_horizon: int = 200
    lr: float = 1e-4
    epochs: int = 10
    minibatch: int = 64
    iterations: int = 200
    grad_clip: float = 0.5
    denoise_steps: int = 5
    beta_start: float = 1e-4
    beta_end: float = 0.2
    hidden: tuple = (128, 128)
    init_log_std: float = -0.5
    normalize_advantages: bool = True
    value_norm: bool = True
    random_start: bool = False
    eval_episodes: int = 3
    eval_deterministic: bool = True

    def __post_init__(self):
        for k in ("gamma", "lam", "clip"):
            if not 0.0 <= getattr(self, k) <= 1.0:
                raise ValueError(f"{k} must lie in [0, 1]")
        if self.ent_end > self.ent_start or self.aux_end > self.aux_start:
            raise ValueError("annealed coefficients must not increase")
        if min(self.ent_end, self.aux_end, self.value_coef) < 0:
            raise ValueError("loss coefficients must be non-negative")
        if self.epochs < 1 or self.minibatch < 1 or self.iterations < 0 or self.denoise_steps < 1:
            raise ValueError("epochs, minibatch and denoise_steps must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


def linear_schedule(start: float, end: float, horizon: int, iteration: int) -> float:
    """Linear ramp from ``start`` (iteration 0) to ``end`` (iteration ``horizon - 1`` and after)."""
    if horizon <= 1:
        return end
    frac = max(iteration, 0) / (horizon - 1)
    if frac >= 1.0:
        return end
    return start + (end - start) * frac


# ---------------------------------------------------------------- losses
def compute_gae(rewards, values, dones, gamma, lam):
    """Return ``(advantages, returns)``; ``values`` carries the bootstrap value as its last entry."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones)
    if values.shape != (len(rewards) + 1,) or dones.shape != rewards.shape:
        raise ValueError(f"need len(values) == len(rewards) + 1 == len(dones) + 1, got "
                         f"{len(values)}, {len(rewards)}, {len(dones)}")
    adv = kernels.gae(rewards, values, dones.astype(np.uint8), gamma, lam)
    return adv, adv + values[:-1]


def importance_ratio(logprob_new, logprob_old):
    return (as_tensor(logprob_new) - np.asarray(logprob_old, dtype=np.float64)).exp()


def ppo_clip_loss(ratios, advantages, clip):
    ratios = as_tensor(ratios)
    adv = np.asarray(advantages, dtype=np.float64)
    return -minimum(ratios * adv, ratios.clip(1.0 - clip, 1.0 + clip) * adv).mean()


def value_loss(values_new, values_old, returns, clip):
    v = as_tensor(values_new)
    v_old = np.asarray(values_old, dtype=np.float64)
    ret = np.asarray(returns, dtype=np.float64)
    v_clip = (v - v_old).clip(-clip, clip) + v_old
    a, b = v - ret, v_clip - ret
    return maximum(a * a, b * b).mean() * 0.5


def entropy_loss(log_tables, c_ent):
    """``-c_ent`` times the mean categorical entropy; ``log_tables`` holds log-probabilities (..., K)."""
    logp = as_tensor(log_tables)
    ent = -(logp.exp() * logp).sum(axis=-1)
    return ent.mean() * (-c_ent)


def onehot_servers(servers, n_servers):
    servers = np.asarray(servers, dtype=np.int64)
    out = np.zeros(servers.shape + (n_servers,))
    np.put_along_axis(out, servers[..., None], 1.0, axis=-1)
    return out.reshape(servers.shape[0], -1) if servers.ndim > 1 else out.reshape(-1)


def _check_onehot(x0, n_servers):
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 2 or x0.shape[1] % n_servers:
        raise ValueError(f"one-hot targets must be (B, M*{n_servers}), got {x0.shape}")
    blocks = x0.reshape(x0.shape[0], -1, n_servers)
    if not (np.all((blocks == 0) | (blocks == 1)) and np.all(blocks.sum(axis=-1) == 1)):
        raise ValueError("malformed one-hot target: each vehicle block needs exactly one 1")
    return x0


def aux_diffusion_loss(recon, x0, advantages, n_servers):
    """Mean L1 reconstruction error over samples with positive advantage (0 when there are none)."""
    x0 = _check_onehot(x0, n_servers)
    adv = np.asarray(advantages, dtype=np.float64)
    keep = np.flatnonzero(adv > 0)
    if keep.size == 0:
        return Tensor(0.0)
    recon = as_tensor(recon)
    return (recon[keep] - x0[keep]).abs().sum(axis=-1).mean()


def total_loss(l_ppo, l_value, l_ent, l_aux, value_coef, aux_coef):
    return as_tensor(l_ppo) + as_tensor(l_value) * value_coef + as_tensor(l_ent) + as_tensor(l_aux) * aux_coef


# ---------------------------------------------------------------- rollouts
class PolicyController:
    """Drives an environment from a learned policy."""

    def __init__(self, policy, deterministic=False):
        self.policy = policy
        self.deterministic = deterministic

    def decide(self, state, env, rng):
        d = self.policy.act(state, rng, deterministic=self.deterministic)
        return HybridAction(d.radius, d.theta, d.servers), d

    def observe(self, action, outcome):
        pass


class RandomController:
    def decide(self, state, env, rng):
        M = env.n_vehicles
        return HybridAction(rng.uniform(0.0, env.r_max, M), rng.uniform(0.0, 2 * math.pi, M) % (2 * math.pi),
                            rng.integers(0, env.n_servers, M)), None

    def observe(self, action, outcome):
        pass


class GeoIController:
    """Planar-Laplace reports and greedy agent placement by running-mean latency.

    Each vehicle tries every unvisited server once (in id order) before
    committing to the lowest observed mean. Sampled radii are logged raw and
    executed clamped to ``r_max``.
    """

    def __init__(self, eps, n_vehicles, n_servers):
        if not eps > 0:
            raise ValueError("eps must be positive")
        self.eps = eps
        self.lat_sum = np.zeros((n_vehicles, n_servers))
        self.lat_count = np.zeros((n_vehicles, n_servers), dtype=np.int64)
        self.raw_radii = []

    def choose_servers(self):
        out = np.empty(self.lat_sum.shape[0], dtype=np.int64)
        for m in range(len(out)):
            unvisited = np.flatnonzero(self.lat_count[m] == 0)
            if unvisited.size:
                out[m] = unvisited[0]
            else:
                out[m] = int(np.argmin(self.lat_sum[m] / self.lat_count[m]))
        return out

    def decide(self, state, env, rng):
        r, theta = sample_planar_laplace_batch(self.eps, env.n_vehicles, rng)
        self.raw_radii.extend(r.tolist())
        return HybridAction(np.minimum(r, env.r_max), theta, self.choose_servers()), None

    def observe(self, action, outcome):
        for m, e in enumerate(action.servers):
            self.lat_sum[m, e] += outcome.latency[m]
            self.lat_count[m, e] += 1


@dataclass
class Rollout:
    states: np.ndarray
    z: np.ndarray
    servers: np.ndarray
    x_start: np.ndarray | None
    logprob: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    outcomes: list
    violations: int


def run_episode(env: Env, controller, rng, seed=None) -> Rollout:
    """Play one full episode; learned controllers also record what PPO needs."""
    state = env.reset(seed)
    states, zs, servers, starts, lps, vals, rewards, dones, outcomes = ([] for _ in range(9))
    bad = 0
    done = False
    while not done:
        action, d = controller.decide(state, env, rng)
        bad += action_violations(action, env.r_max, env.n_servers)
        next_state, reward, outcome, done = env.step(action)
        controller.observe(outcome.executed, outcome)
        bad += action_violations(outcome.executed, env.r_max, env.n_servers)
        bad += sum(int(v < 0) for p in outcome.latency_parts for v in p.as_dict().values())
        states.append(state)
        if d is not None:
            zs.append(d.z)
            servers.append(d.servers)
            starts.append(d.x_start)
            lps.append(d.logprob)
            vals.append(d.value)
        rewards.append(reward)
        dones.append(done)
        outcomes.append(outcome)
        state = next_state
    x_start = np.array(starts) if starts and starts[0] is not None else None
    return Rollout(np.array(states), np.array(zs), np.array(servers), x_start, np.array(lps),
                   np.array(vals), np.array(rewards), np.array(dones), outcomes, bad)


def episode_summary(roll: Rollout) -> dict:
    outs = roll.outcomes
    return {
        "objective": episode_objective(outs),
        "mean_reward": float(np.mean(roll.rewards)),
        "mean_entropy_bits": float(np.mean([o.entropy for o in outs])),
        "mean_confidence": float(np.mean([o.confidence for o in outs])),
        "mean_latency_s": float(np.mean([o.latency for o in outs])),
        "mean_qos": float(np.mean([o.qos for o in outs])),
        "mean_radius": float(np.mean([o.executed.radius for o in outs])),
        "violations": int(roll.violations),
        "slots": len(outs),
    }


# ---------------------------------------------------------------- training
def build_policy(kind, env: Env, cfg: TrainConfig, seed: int):
    if kind == "lhdppo":
        sched = make_schedule(cfg.denoise_steps, cfg.beta_start, cfg.beta_end)
        return HybridPolicy(env.state_dim, env.n_vehicles, env.n_servers, env.r_max, sched,
                            cfg.hidden, cfg.init_log_std, seed, cfg.random_start)
    if kind == "ppo_relaxed":
        return RelaxedPolicy(env.state_dim, env.n_vehicles, env.n_servers, env.r_max,
                             cfg.hidden, cfg.init_log_std, seed)
    raise ValueError(f"unknown policy kind {kind!r}")


def _finite(name, x, iteration):
    v = float(x.data) if isinstance(x, Tensor) else float(x)
    if not math.isfinite(v):
        raise TrainingDivergence(f"iteration {iteration}: non-finite {name} loss ({v})")
    return v


class ValueNormalizer:
    """Debiased running mean/std of return targets; the critic learns in normalized units."""

    def __init__(self, decay=0.9, enabled=True):
        self.decay = decay
        self.enabled = enabled
        self.m1 = self.m2 = self.weight = 0.0

    @property
    def mean(self):
        return self.m1 / self.weight if self.enabled and self.weight else 0.0

    @property
    def std(self):
        if not (self.enabled and self.weight):
            return 1.0
        return math.sqrt(max(self.m2 / self.weight - self.mean ** 2, 1e-4))

    def update(self, targets):
        if not self.enabled:
            return
        d = self.decay
        self.m1 = d * self.m1 + (1 - d) * float(np.mean(targets))
        self.m2 = d * self.m2 + (1 - d) * float(np.mean(np.square(targets)))
        self.weight = d * self.weight + (1 - d)

    def normalize(self, x):
        return (np.asarray(x) - self.mean) / self.std

    def denormalize(self, x):
        return np.asarray(x) * self.std + self.mean


def ppo_update(policy, opt: Adam, roll: Rollout, adv, v_target, v_old, cfg: TrainConfig, iteration, rng,
               record=None):
    """E epochs of shuffled minibatch steps on the combined objective; returns mean loss parts.

    Gradient norms are clipped per parameter group (each actor head, the critic)
    so large early value errors cannot throttle the actor updates.
    """
    groups = {}
    for name, p in opt.params.items():
        groups.setdefault(name.split(".")[0], {})[name] = p
    c_ent = linear_schedule(cfg.ent_start, cfg.ent_end, cfg.ent_horizon, iteration)
    c_aux = linear_schedule(cfg.aux_start, cfg.aux_end, cfg.aux_horizon, iteration)
    n = len(roll.rewards)
    onehot = onehot_servers(roll.servers, policy.n_servers) if policy.has_discrete_head else None
    sums = {"ppo": 0.0, "value": 0.0, "entropy": 0.0, "aux": 0.0, "total": 0.0, "grad_norm": 0.0}
    count = 0
    for _epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.minibatch):
            idx = order[lo:lo + cfg.minibatch]
            xs = None if roll.x_start is None else roll.x_start[idx]
            lp, table, v, recon = policy.evaluate(roll.states[idx], roll.z[idx], roll.servers[idx], xs)
            ratio = importance_ratio(lp, roll.logprob[idx])
            a = adv[idx]
            if cfg.normalize_advantages and len(idx) > 1:
                a = (a - a.mean()) / (a.std() + 1e-8)
            if record is not None:
                record.append((ratio.data.copy(), a.copy()))
            l_ppo = ppo_clip_loss(ratio, a, cfg.clip)
            l_v = value_loss(v, v_old[idx], v_target[idx], cfg.clip)
            if policy.has_discrete_head:
                l_ent = entropy_loss(table, c_ent)
                l_aux = aux_diffusion_loss(recon, onehot[idx], adv[idx], policy.n_servers)
            else:
                l_ent, l_aux = Tensor(0.0), Tensor(0.0)
            loss = total_loss(l_ppo, l_v, l_ent, l_aux, cfg.value_coef, c_aux)
            for name, part in (("ppo", l_ppo), ("value", l_v), ("entropy", l_ent), ("aux", l_aux), ("total", loss)):
                sums[name] += _finite(name, part, iteration)
            opt.zero_grad()
            loss.backward()
            norms = [clip_grad_norm(g, cfg.grad_clip) for g in groups.values()]
            sums["grad_norm"] += _finite("gradient", math.sqrt(sum(x * x for x in norms)), iteration)
            opt.step()
            count += 1
    out = {f"loss_{k}" if k != "grad_norm" else k: v / count for k, v in sums.items()}
    out.update(c_ent=c_ent, c_aux=c_aux)
    return out


@dataclass
class TrainResult:
    policy: object
    metrics: list
    optimizer: Adam
    value_normalizer: ValueNormalizer


def _write(log, record):
    if log is not None:
        log.write(json.dumps(record, sort_keys=True) + "\n")
        log.flush()


def train(env_factory, cfg: TrainConfig, kind: str = "lhdppo", seed: int = 0, log=None,
          iterations: int | None = None, on_iteration=None, log_every: int = 1) -> TrainResult:
    """Alternate one-episode rollouts with PPO updates.

    ``log`` (a text stream) receives one JSON record per iteration. Every
    random draw comes from streams derived from ``seed``.
    """
    env = env_factory()
    ss = np.random.SeedSequence(seed)
    init_seed, act_ss, batch_ss = ss.spawn(3)
    policy = build_policy(kind, env, cfg, int(init_seed.generate_state(1)[0]))
    act_rng = np.random.default_rng(act_ss)
    batch_rng = np.random.default_rng(batch_ss)
    opt = Adam(policy.parameters(), lr=cfg.lr)
    vnorm = ValueNormalizer(enabled=cfg.value_norm)
    metrics = []
    n_iter = cfg.iterations if iterations is None else iterations
    for it in range(n_iter):
        roll = run_episode(env, PolicyController(policy), act_rng, seed=seed)
        values = np.append(vnorm.denormalize(roll.values), 0.0)
        adv, ret = compute_gae(roll.rewards, values, roll.dones, cfg.gamma, cfg.lam)
        vnorm.update(ret)
        v_old = vnorm.normalize(values[:-1])
        parts = ppo_update(policy, opt, roll, adv, vnorm.normalize(ret), v_old, cfg, it, batch_rng)
        rec = {"kind": kind, "seed": seed, "iteration": it, **episode_summary(roll), **parts}
        metrics.append(rec)
        if it % log_every == 0 or it == n_iter - 1:
            _write(log, rec)
        if on_iteration is not None:
            on_iteration(rec, policy)
    return TrainResult(policy, metrics, opt, vnorm)


def evaluate(env: Env, controller, episodes: int, seed: int = 0, log=None, label: str = ""):
    """Run ``episodes`` episodes without learning; returns per-episode summaries."""
    rng = np.random.default_rng(seed)
    out = []
    for ep in range(episodes):
        roll = run_episode(env, controller, rng, seed=seed + ep)
        rec = {"policy": label, "episode": ep, **episode_summary(roll)}
        out.append(rec)
        _write(log, rec)
    return out


def geo_i_eps(r_max: float) -> float:
    """Budget whose mean radius 2/eps sits at half the action range."""
    return 4.0 / r_max


def baseline_geo_i(env: Env, eps: float | None = None, episodes: int = 1, seed: int = 0, log=None):
    """Geo-I metric log: per-episode summaries plus the raw sampled radii."""
    ctl = GeoIController(geo_i_eps(env.r_max) if eps is None else eps, env.n_vehicles, env.n_servers)
    summaries = evaluate(env, ctl, episodes, seed, log, "geo_i")
    return {"episodes": summaries, "radii": np.array(ctl.raw_radii), "controller": ctl}


def baseline_ppo_relaxed(env_factory, cfg: TrainConfig, seed: int = 0, log=None, iterations=None):
    return train(env_factory, cfg, kind="ppo_relaxed", seed=seed, log=log, iterations=iterations)


def config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["hidden"] = list(cfg.hidden)
    return d
