"""Double-chain diffusion actors and the value critic.

Both actors run the reverse diffusion chain in mean-only mode from a fixed
start, so the chain is a deterministic function of the state. Randomness
comes only from the final Gaussian (perturbation) and categorical
(migration) distributions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geo import TWO_PI
from .tensor import Mlp, Tensor, as_tensor, concat, no_grad, parameter

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class DiffusionSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.betas)


def make_schedule(steps: int, beta_start: float = 1e-4, beta_end: float = 0.2) -> DiffusionSchedule:
    if steps < 1:
        raise ValueError("need at least one denoising step")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, steps)
    alphas = 1.0 - betas
    return DiffusionSchedule(betas, alphas, np.cumprod(alphas))


class DenoisingHead:
    """Noise-prediction MLP over ``[x_u, state, u/U]``."""

    def __init__(self, out_dim, state_dim, schedule: DiffusionSchedule, hidden, rng, out_scale=1.0):
        self.out_dim = out_dim
        self.state_dim = state_dim
        self.schedule = schedule
        self.net = Mlp([out_dim + state_dim + 1, *hidden, out_dim], rng, out_scale=out_scale)

    def parameters(self, prefix=""):
        return self.net.parameters(prefix)


def denoise_chain(head: DenoisingHead, state, schedule: DiffusionSchedule | None = None, x_start=None):
    """Run ``x_{u-1} = (x_u - beta_u / sqrt(1 - abar_u) * eps(x_u, s, u)) / sqrt(alpha_u)`` for u = U..1."""
    schedule = schedule or head.schedule
    state = as_tensor(state)
    squeeze = state.ndim == 1
    if squeeze:
        state = state.reshape(1, -1)
    if state.shape[-1] != head.state_dim:
        raise ValueError(f"expected state width {head.state_dim}, got {state.shape[-1]}")
    batch = state.shape[0]
    x = Tensor(np.zeros((batch, head.out_dim))) if x_start is None else as_tensor(x_start).reshape(batch, -1)
    U = schedule.steps
    for u in range(U, 0, -1):
        beta, alpha, abar = schedule.betas[u - 1], schedule.alphas[u - 1], schedule.alpha_bars[u - 1]
        step = Tensor(np.full((batch, 1), u / U))
        eps = head.net(concat([x, state, step], axis=-1))
        x = (x - eps * (beta / math.sqrt(1.0 - abar))) * (1.0 / math.sqrt(alpha))
    return x.reshape(-1) if squeeze else x


def gaussian_logprob(z, mu, log_std):
    """Diagonal Gaussian log-density summed over the last axis."""
    z, mu, log_std = as_tensor(z), as_tensor(mu), as_tensor(log_std)
    scaled = (z - mu) * (-log_std).exp()
    per_dim = scaled * scaled * -0.5 - log_std - 0.5 * LOG_2PI
    return per_dim.sum(axis=-1)


def squash(z, r_max):
    """Map pre-squash ``(z_r, z_theta)`` pairs to ``(r, theta)`` inside the action box."""
    z = np.asarray(z, dtype=np.float64).reshape(-1, 2)
    r = np.clip(r_max * 0.5 * (1.0 + np.tanh(z[:, 0])), 0.0, r_max)
    theta = np.mod(z[:, 1], TWO_PI)
    theta[theta >= TWO_PI] = 0.0
    return r, theta


class ContinuousHead(DenoisingHead):
    def __init__(self, n_vehicles, state_dim, schedule, hidden, rng, init_log_std=-0.5):
        super().__init__(2 * n_vehicles, state_dim, schedule, hidden, rng)
        self.log_std = parameter(np.full(2 * n_vehicles, init_log_std))

    def parameters(self, prefix=""):
        out = super().parameters(prefix)
        out[f"{prefix}log_std"] = self.log_std
        return out


class DiscreteHead(DenoisingHead):
    def __init__(self, n_vehicles, n_servers, state_dim, schedule, hidden, rng):
        super().__init__(n_vehicles * n_servers, state_dim, schedule, hidden, rng)
        self.n_vehicles = n_vehicles
        self.n_servers = n_servers


class Critic:
    def __init__(self, state_dim, hidden, rng):
        self.net = Mlp([state_dim, *hidden, 1], rng)

    def __call__(self, state):
        state = as_tensor(state)
        out = self.net(state.reshape(1, -1) if state.ndim == 1 else state)
        return out.reshape(-1)

    def parameters(self, prefix=""):
        return self.net.parameters(prefix)


def continuous_sample_logprob(head: ContinuousHead, state, schedule, rng, r_max, x_start=None):
    """Sample ``z ~ N(mu, diag(exp(2 log_std)))``; return ``((r, theta), z, logprob)``."""
    with no_grad():
        mu = denoise_chain(head, state, schedule, x_start).data.reshape(-1)
    std = np.exp(head.log_std.data)
    z = mu + std * rng.standard_normal(mu.shape)
    logprob = float(gaussian_logprob(z, mu, head.log_std.data).data)
    return squash(z, r_max), z, logprob


def sample_categorical(probs, rng):
    """One draw per row of ``probs`` by inverse CDF."""
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    idx = (cdf <= u[:, None]).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def discrete_sample_logprob(head: DiscreteHead, state, schedule, rng, x_start=None):
    """Sample one server per vehicle; return ``(servers, logprob, probs)``."""
    with no_grad():
        logits = denoise_chain(head, state, schedule, x_start).data.reshape(head.n_vehicles, head.n_servers)
    logp = logits - logits.max(axis=1, keepdims=True)
    logp -= np.log(np.exp(logp).sum(axis=1, keepdims=True))
    probs = np.exp(logp)
    servers = sample_categorical(probs, rng)
    return servers, float(logp[np.arange(head.n_vehicles), servers].sum()), probs


def hybrid_logprob(cont_logprob, disc_logprob):
    return cont_logprob + disc_logprob


@dataclass
class Decision:
    """What a policy chose for one slot, plus what PPO needs to replay it."""
    radius: np.ndarray
    theta: np.ndarray
    servers: np.ndarray
    z: np.ndarray | None = None
    logprob: float = 0.0
    value: float = 0.0
    probs: np.ndarray | None = None
    x_start: np.ndarray | None = None


class HybridPolicy:
    """Two diffusion actors (perturbation, migration) and a critic sharing one state encoding."""

    kind = "lhdppo"

    def __init__(self, state_dim, n_vehicles, n_servers, r_max, schedule: DiffusionSchedule,
                 hidden=(128, 128), init_log_std=-0.5, seed=0, random_start=False):
        rng = np.random.default_rng(seed)
        self.state_dim = state_dim
        self.n_vehicles = n_vehicles
        self.n_servers = n_servers
        self.r_max = r_max
        self.schedule = schedule
        self.hidden = tuple(hidden)
        self.random_start = random_start
        self.cont = ContinuousHead(n_vehicles, state_dim, schedule, hidden, rng, init_log_std)
        self.disc = DiscreteHead(n_vehicles, n_servers, state_dim, schedule, hidden, rng)
        self.critic = Critic(state_dim, hidden, rng)

    has_discrete_head = True

    def parameters(self):
        out = {}
        out.update(self.cont.parameters("cont."))
        out.update(self.disc.parameters("disc."))
        out.update(self.critic.parameters("critic."))
        return out

    def value(self, state) -> float:
        with no_grad():
            return float(self.critic(state).data[0])

    def act(self, state, rng, deterministic=False) -> Decision:
        xs_c = xs_d = None
        if self.random_start:
            xs_c = rng.standard_normal(self.cont.out_dim)
            xs_d = rng.standard_normal(self.disc.out_dim)
        if deterministic:
            with no_grad():
                mu = denoise_chain(self.cont, state, self.schedule, xs_c).data.reshape(-1)
                logits = denoise_chain(self.disc, state, self.schedule, xs_d).data.reshape(
                    self.n_vehicles, self.n_servers)
            r, theta = squash(mu, self.r_max)
            servers = np.argmax(logits, axis=1)
            return Decision(r, theta, servers, z=mu, value=self.value(state))
        (r, theta), z, lp_c = continuous_sample_logprob(self.cont, state, self.schedule, rng, self.r_max, xs_c)
        servers, lp_d, probs = discrete_sample_logprob(self.disc, state, self.schedule, rng, xs_d)
        x_start = None if xs_c is None else np.concatenate([xs_c, xs_d])
        return Decision(r, theta, servers, z=z, logprob=hybrid_logprob(lp_c, lp_d),
                        value=self.value(state), probs=probs, x_start=x_start)

    def _starts(self, x_start, batch):
        if x_start is None:
            return None, None
        x_start = np.asarray(x_start).reshape(batch, -1)
        return x_start[:, :self.cont.out_dim], x_start[:, self.cont.out_dim:]

    def evaluate(self, states, z, servers, x_start=None):
        """Recompute ``(hybrid logprob, log-prob table, value, discrete chain output)`` under current parameters."""
        if z is None:
            raise ValueError("stored pre-squash samples are required to evaluate log-probabilities")
        states = np.atleast_2d(states)
        batch = states.shape[0]
        xs_c, xs_d = self._starts(x_start, batch)
        mu = denoise_chain(self.cont, states, self.schedule, xs_c)
        lp_c = gaussian_logprob(np.asarray(z).reshape(batch, -1), mu, self.cont.log_std)
        recon = denoise_chain(self.disc, states, self.schedule, xs_d)
        table = recon.reshape(batch, self.n_vehicles, self.n_servers).log_softmax(axis=-1)
        lp_d = table.take_last(np.asarray(servers).reshape(batch, self.n_vehicles)).sum(axis=-1)
        return hybrid_logprob(lp_c, lp_d), table, self.critic(states), recon

    def reconstruct(self, states, x_start=None):
        """Discrete chain output used by the auxiliary reconstruction loss."""
        states = np.atleast_2d(states)
        _, xs_d = self._starts(x_start, states.shape[0])
        return denoise_chain(self.disc, states, self.schedule, xs_d)

    def config(self):
        return {"kind": self.kind, "state_dim": self.state_dim, "n_vehicles": self.n_vehicles,
                "n_servers": self.n_servers, "r_max": self.r_max, "hidden": list(self.hidden),
                "steps": self.schedule.steps, "betas": self.schedule.betas.tolist(),
                "random_start": self.random_start}


def relaxed_to_index(y, n_servers):
    """Round a relaxed server coordinate in ``[0, n-1]``; exact midpoints go to the lower index."""
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, n_servers - 1)
    return np.clip(np.ceil(y - 0.5), 0, n_servers - 1).astype(np.int64)


class RelaxedPolicy:
    """Plain Gaussian PPO actor over ``(z_r, z_theta, z_server)`` per vehicle; no diffusion."""

    kind = "ppo_relaxed"
    has_discrete_head = False

    def __init__(self, state_dim, n_vehicles, n_servers, r_max, hidden=(128, 128), init_log_std=-0.5, seed=0):
        rng = np.random.default_rng(seed)
        self.state_dim = state_dim
        self.n_vehicles = n_vehicles
        self.n_servers = n_servers
        self.r_max = r_max
        self.hidden = tuple(hidden)
        self.actor = Mlp([state_dim, *hidden, 3 * n_vehicles], rng)
        self.log_std = parameter(np.full(3 * n_vehicles, init_log_std))
        self.critic = Critic(state_dim, hidden, rng)

    def parameters(self):
        out = self.actor.parameters("actor.")
        out["actor.log_std"] = self.log_std
        out.update(self.critic.parameters("critic."))
        return out

    def value(self, state) -> float:
        with no_grad():
            return float(self.critic(state).data[0])

    def _mean(self, states):
        states = as_tensor(states)
        return self.actor(states.reshape(1, -1) if states.ndim == 1 else states)

    def to_action(self, z):
        z = np.asarray(z).reshape(self.n_vehicles, 3)
        r, theta = squash(z[:, :2], self.r_max)
        y = (self.n_servers - 1) * 0.5 * (1.0 + np.tanh(z[:, 2]))
        return r, theta, relaxed_to_index(y, self.n_servers)

    def act(self, state, rng, deterministic=False) -> Decision:
        with no_grad():
            mu = self._mean(state).data.reshape(-1)
        std = np.exp(self.log_std.data)
        z = mu if deterministic else mu + std * rng.standard_normal(mu.shape)
        lp = float(gaussian_logprob(z, mu, self.log_std.data).data)
        r, theta, servers = self.to_action(z)
        return Decision(r, theta, servers, z=z, logprob=lp, value=self.value(state))

    def evaluate(self, states, z, servers=None, x_start=None):
        if z is None:
            raise ValueError("stored pre-squash samples are required to evaluate log-probabilities")
        states = np.atleast_2d(states)
        mu = self._mean(states)
        lp = gaussian_logprob(np.asarray(z).reshape(states.shape[0], -1), mu, self.log_std)
        return lp, None, self.critic(states), None

    def config(self):
        return {"kind": self.kind, "state_dim": self.state_dim, "n_vehicles": self.n_vehicles,
                "n_servers": self.n_servers, "r_max": self.r_max, "hidden": list(self.hidden)}


def policy_state(policy):
    return {k: p.data.copy() for k, p in policy.parameters().items()}


def load_policy_state(policy, arrays):
    params = policy.parameters()
    missing = set(params) - set(arrays)
    if missing:
        raise ValueError(f"checkpoint lacks parameters {sorted(missing)}")
    for k, p in params.items():
        if arrays[k].shape != p.data.shape:
            raise ValueError(f"parameter {k}: shape {arrays[k].shape} != {p.data.shape}")
        p.data = np.array(arrays[k], dtype=np.float64)
