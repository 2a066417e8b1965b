"""Soft actor-critic learners for the protagonist and the adversary.

The protagonist learns its temperature (the usual SAC dual update on
``log beta``). The adversary's temperature is imposed from outside, either by
the curriculum or a fixed value, unless it is also put in learned mode (RARL).
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .nncore import (
    AdamState, DimensionError, MLPSpec, adam_step, backward, forward_with_cache,
    gaussian_head_sample, head_backward, head_forward, init_params,
)


@dataclass(frozen=True)
class SACConfig:
    gamma: float = 0.99
    tau: float = 0.005
    batch: int = 256
    warmup_transitions: int = 3000
    replay_capacity: int = 1_000_000
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    lr_temperature: float = 3e-4
    log_std_min: float = -20.0
    log_std_max: float = 2.0
    horizon: int = 1000
    hidden: tuple = (64, 64)
    init_temperature: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("sac.gamma must lie in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("sac.tau must lie in (0, 1]")
        for name in ("lr_actor", "lr_critic", "lr_temperature", "init_temperature"):
            if not getattr(self, name) > 0:
                raise ValueError(f"sac.{name} must be > 0")
        if self.batch < 1 or self.warmup_transitions < 0 or self.replay_capacity < 1:
            raise ValueError("sac.batch, sac.warmup_transitions and sac.replay_capacity must be positive")
        if (self.log_std_min, self.log_std_max) != (-20.0, 2.0):
            # the head clamps to the fixed range in nncore
            raise ValueError("sac.log_std_min/max are fixed at -20 / 2")


class WarmupError(RuntimeError):
    pass


class TemperatureModeError(RuntimeError):
    pass


@dataclass
class Batch:
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    terminal: np.ndarray

    def __len__(self):
        return len(self.reward)


class ReplayBuffer:
    """Fixed-capacity ring of transitions."""

    def __init__(self, obs_dim: int, act_dim: int, capacity: int):
        self.capacity = int(capacity)
        self.obs = np.zeros((self.capacity, obs_dim))
        self.action = np.zeros((self.capacity, act_dim))
        self.reward = np.zeros(self.capacity)
        self.next_obs = np.zeros((self.capacity, obs_dim))
        self.terminal = np.zeros(self.capacity, dtype=bool)
        self.cursor = 0
        self.size = 0

    def push(self, obs, action, reward, next_obs, terminal):
        i = self.cursor
        self.obs[i] = obs
        self.action[i] = action
        self.reward[i] = reward
        self.next_obs[i] = next_obs
        self.terminal[i] = terminal
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def ordered_indices(self) -> np.ndarray:
        """Storage indices from oldest to newest."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self.cursor) % self.capacity

    def sample(self, rng: np.random.Generator, batch: int) -> Batch:
        idx = rng.integers(0, self.size, size=batch)
        return Batch(self.obs[idx], self.action[idx], self.reward[idx], self.next_obs[idx], self.terminal[idx])


def soft_target(reward, terminal, q_next_min, logp_next, temp, gamma):
    """Entropy-regularised Bellman target."""
    if np.any(np.asarray(temp) < 0):
        raise ValueError("temperature must be >= 0")
    return reward + (1.0 - np.asarray(terminal, dtype=np.float64)) * gamma * (q_next_min - temp * logp_next)


# --------------------------------------------------------------------------
# loss functions as pure functions of flat parameters (used for gradient checks)


def critic_loss_and_grad(spec: MLPSpec, q_params: tuple, obs, action, target):
    """Sum over the twin critics of the mean squared error to ``target``."""
    x = np.concatenate([obs, action], axis=1)
    n = x.shape[0]
    loss = 0.0
    grads = []
    for p in q_params:
        q, cache = forward_with_cache(spec, p, x)
        err = q[:, 0] - target
        loss += float(np.mean(err * err))
        g, _ = backward(spec, p, cache, (2.0 / n) * err[:, None])
        grads.append(g)
    return loss, tuple(grads)


def actor_loss_and_grad(actor_spec: MLPSpec, actor_params, critic_spec: MLPSpec, q_params: tuple,
                        obs, noise, temp: float):
    """Loss ``mean(temp * log pi(a|s) - min_i Q_i(s, a))`` with ``a`` reparameterised by ``noise``.

    Returns ``(loss, grad, log_prob)``.
    """
    n = obs.shape[0]
    raw, a_cache = forward_with_cache(actor_spec, actor_params, obs)
    hs = head_forward(raw, noise)
    x = np.concatenate([obs, hs.action], axis=1)
    qs, caches = [], []
    for p in q_params:
        q, c = forward_with_cache(critic_spec, p, x)
        qs.append(q[:, 0])
        caches.append(c)
    q_stack = np.stack(qs)
    pick = np.argmin(q_stack, axis=0)
    q_min = q_stack[pick, np.arange(n)]
    loss = float(np.mean(temp * hs.log_prob - q_min))

    d_action = np.zeros_like(hs.action)
    obs_dim = obs.shape[1]
    for i, p in enumerate(q_params):
        up = np.where(pick == i, -1.0 / n, 0.0)[:, None]
        if not up.any():
            continue
        _, d_in = backward(critic_spec, p, caches[i], up)
        d_action += d_in[:, obs_dim:]
    d_logp = np.full(n, temp / n)
    d_raw = head_backward(hs, d_action, d_logp)
    grad, _ = backward(actor_spec, actor_params, a_cache, d_raw)
    return loss, grad, hs.log_prob


def temperature_grad(log_temp: float, log_prob, target_entropy: float) -> float:
    """d/d(log temp) of ``-log_temp * mean(log_prob + target_entropy)``."""
    return -float(np.mean(np.asarray(log_prob) + target_entropy))


# --------------------------------------------------------------------------


class SACAgent:
    """Tanh-Gaussian actor, twin critics with Polyak targets, and a temperature."""

    def __init__(self, obs_dim: int, act_dim: int, cfg: SACConfig, rng: np.random.Generator,
                 temperature_mode: str = "learned", temperature: float | None = None,
                 target_entropy: float | None = None, activation: str = "relu"):
        if temperature_mode not in ("learned", "imposed"):
            raise ValueError(f"unknown temperature mode {temperature_mode!r}")
        self.cfg = cfg
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.actor_spec = MLPSpec(obs_dim, cfg.hidden, 2 * act_dim, activation)
        self.critic_spec = MLPSpec(obs_dim + act_dim, cfg.hidden, 1, activation)
        self.actor = init_params(self.actor_spec, rng)
        self.critics = [init_params(self.critic_spec, rng) for _ in range(2)]
        self.targets = [c.copy() for c in self.critics]
        self.actor_opt = AdamState.zeros(self.actor_spec.n_params, lr=cfg.lr_actor)
        self.critic_opts = [AdamState.zeros(self.critic_spec.n_params, lr=cfg.lr_critic) for _ in range(2)]
        self.temperature_mode = temperature_mode
        self.target_entropy = -float(act_dim) if target_entropy is None else float(target_entropy)
        t0 = cfg.init_temperature if temperature is None else temperature
        if t0 < 0:
            raise ValueError("temperature must be >= 0")
        self.log_temp = float(np.log(t0)) if temperature_mode == "learned" else 0.0
        self._imposed = float(t0)
        self.temp_opt = AdamState.zeros(1, lr=cfg.lr_temperature)
        self.updates = 0

    # temperature --------------------------------------------------------

    @property
    def temperature(self) -> float:
        if self.temperature_mode == "learned":
            return float(np.exp(self.log_temp))
        return self._imposed

    def set_imposed_temperature(self, alpha: float):
        if self.temperature_mode != "imposed":
            raise TemperatureModeError("agent learns its own temperature")
        if not alpha >= 0:
            raise ValueError(f"imposed temperature must be >= 0, got {alpha}")
        self._imposed = float(alpha)

    # acting -------------------------------------------------------------

    def policy_params(self, obs):
        """Mean and unclamped log-std for one observation or a batch."""
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape[-1] != self.obs_dim:
            raise DimensionError(f"observation width {obs.shape[-1]}, expected {self.obs_dim}", layer=0)
        raw, _ = forward_with_cache(self.actor_spec, self.actor, obs)
        if obs.ndim == 1:
            raw = raw[0]
        return raw[..., :self.act_dim], raw[..., self.act_dim:]

    def act(self, obs, deterministic: bool = False, noise=None) -> np.ndarray:
        mean, log_std = self.policy_params(obs)
        if deterministic:
            return np.tanh(mean)
        action, _ = gaussian_head_sample(mean, log_std, noise)
        return action

    # updates ------------------------------------------------------------

    def _check_batch(self, batch: Batch, buffer_size: int | None):
        if buffer_size is not None and buffer_size < self.cfg.warmup_transitions:
            raise WarmupError(f"replay holds {buffer_size} transitions, warmup needs {self.cfg.warmup_transitions}")
        if batch.obs.shape[1] != self.obs_dim or batch.action.shape[1] != self.act_dim:
            raise DimensionError("batch does not match the agent's dimensions")

    def critic_update(self, batch: Batch, rng: np.random.Generator, buffer_size: int | None = None) -> float:
        self._check_batch(batch, buffer_size)
        n = len(batch)
        raw, _ = forward_with_cache(self.actor_spec, self.actor, batch.next_obs)
        hs = head_forward(raw, rng.standard_normal((n, self.act_dim)))
        xn = np.concatenate([batch.next_obs, hs.action], axis=1)
        q_next = np.minimum(*(forward_with_cache(self.critic_spec, t, xn)[0][:, 0] for t in self.targets))
        y = soft_target(batch.reward, batch.terminal, q_next, hs.log_prob, self.temperature, self.cfg.gamma)
        loss, grads = critic_loss_and_grad(self.critic_spec, tuple(self.critics), batch.obs, batch.action, y)
        for i in range(2):
            self.critic_opts[i], self.critics[i] = adam_step(self.critic_opts[i], self.critics[i], grads[i])
        self.polyak()
        return loss

    def polyak(self, tau: float | None = None):
        tau = self.cfg.tau if tau is None else tau
        for t, c in zip(self.targets, self.critics):
            t *= 1.0 - tau
            t += tau * c

    def actor_update(self, batch: Batch, rng: np.random.Generator, buffer_size: int | None = None):
        """Returns ``(loss, log_prob)``; the log-probs feed the temperature update."""
        self._check_batch(batch, buffer_size)
        noise = rng.standard_normal((len(batch), self.act_dim))
        loss, grad, logp = actor_loss_and_grad(self.actor_spec, self.actor, self.critic_spec,
                                               tuple(self.critics), batch.obs, noise, self.temperature)
        self.actor_opt, self.actor = adam_step(self.actor_opt, self.actor, grad)
        return loss, logp

    def temperature_update(self, log_prob) -> float:
        if self.temperature_mode != "learned":
            raise TemperatureModeError("temperature is imposed; nothing to learn")
        g = temperature_grad(self.log_temp, log_prob, self.target_entropy)
        self.temp_opt, new = adam_step(self.temp_opt, np.array([self.log_temp]), np.array([g]))
        self.log_temp = float(new[0])
        return self.temperature

    def update(self, buffer: ReplayBuffer, rng: np.random.Generator) -> dict:
        """One critic, actor and (if learned) temperature step on a fresh minibatch."""
        batch = buffer.sample(rng, self.cfg.batch)
        q_loss = self.critic_update(batch, rng, buffer.size)
        pi_loss, logp = self.actor_update(batch, rng, buffer.size)
        if self.temperature_mode == "learned":
            self.temperature_update(logp)
        self.updates += 1
        return {"critic_loss": q_loss, "actor_loss": pi_loss, "entropy": -float(np.mean(logp))}

    # persistence --------------------------------------------------------

    def state_dict(self) -> dict:
        """Flat named arrays covering every learned quantity and optimiser moment."""
        out = {"actor": self.actor}
        for i in range(2):
            out[f"critic{i}"] = self.critics[i]
            out[f"target{i}"] = self.targets[i]
        for name, opt in [("actor_opt", self.actor_opt), ("critic0_opt", self.critic_opts[0]),
                          ("critic1_opt", self.critic_opts[1]), ("temp_opt", self.temp_opt)]:
            out[f"{name}.m"] = opt.m
            out[f"{name}.v"] = opt.v
            out[f"{name}.step"] = np.array([float(opt.step)])
        out["temperature"] = np.array([self.log_temp, self._imposed, self.target_entropy,
                                       1.0 if self.temperature_mode == "learned" else 0.0])
        out["dims"] = np.array([float(self.obs_dim), float(self.act_dim), *map(float, self.cfg.hidden)])
        return out

    def load_state_dict(self, state: dict):
        dims = state["dims"]
        if int(dims[0]) != self.obs_dim or int(dims[1]) != self.act_dim \
                or tuple(int(h) for h in dims[2:]) != self.cfg.hidden:
            raise DimensionError(f"checkpoint dims {dims.tolist()} do not match agent "
                                 f"({self.obs_dim}, {self.act_dim}, {self.cfg.hidden})")
        self.actor = state["actor"].copy()
        self.critics = [state["critic0"].copy(), state["critic1"].copy()]
        self.targets = [state["target0"].copy(), state["target1"].copy()]

        def opt(name, like):
            return AdamState(m=state[f"{name}.m"].copy(), v=state[f"{name}.v"].copy(),
                             step=int(state[f"{name}.step"][0]), lr=like.lr)

        self.actor_opt = opt("actor_opt", self.actor_opt)
        self.critic_opts = [opt("critic0_opt", self.critic_opts[0]), opt("critic1_opt", self.critic_opts[1])]
        self.temp_opt = opt("temp_opt", self.temp_opt)
        log_temp, imposed, target_entropy, learned = state["temperature"]
        self.log_temp, self._imposed, self.target_entropy = float(log_temp), float(imposed), float(target_entropy)
        self.temperature_mode = "learned" if learned > 0.5 else "imposed"
        return self

    def config_dict(self) -> dict:
        return asdict(self.cfg)
