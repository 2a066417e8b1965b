"""One-dimensional move-to-origin task used as a SAC smoke test.

State ``x`` in [-1, 1], action ``a`` in [-1, 1], ``x' = clip(x + 0.1 a)``,
reward ``-|x'|``, 20 steps, ``x0 ~ U(-1, 1)``.

Optimal mean return: with ``u = 10 |x0|`` the best return is
``-0.1 * sum_{t=1}^{floor(u)} (u - t)``; integrating over ``u ~ U(0, 10)``
piecewise on ``[k, k+1)`` gives ``k^2 / 2`` per piece, so the expectation is
``-0.01 * sum_{k=0}^{9} k^2 / 2 = -1.425``.
"""
from __future__ import annotations

import numpy as np

from .agents import ReplayBuffer, SACAgent, SACConfig

STEP = 0.1
HORIZON = 20
OPTIMAL_MEAN_RETURN = -1.425


class MoveToOrigin:
    obs_dim = 1
    act_dim = 1

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.x = rng.uniform(-1.0, 1.0)
        self.t = 0
        return np.array([self.x])

    def step(self, action):
        a = float(np.clip(np.ravel(action)[0], -1.0, 1.0))
        self.x = float(np.clip(self.x + STEP * a, -1.0, 1.0))
        self.t += 1
        return np.array([self.x]), -abs(self.x), self.t >= HORIZON


def optimal_return(x0: float) -> float:
    """Return of the bang-bang policy that lands exactly on the origin."""
    x, total = abs(x0), 0.0
    for _ in range(HORIZON):
        x = max(x - STEP, 0.0)
        total -= x
    return total


def evaluate(agent: SACAgent, episodes: int, seed: int = 12345) -> float:
    rng = np.random.Generator(np.random.Philox(seed))
    env = MoveToOrigin()
    total = 0.0
    for _ in range(episodes):
        obs, done = env.reset(rng), False
        while not done:
            obs, r, done = env.step(agent.act(obs, deterministic=True))
            total += r
    return total / episodes


def train_toy(steps: int, seed: int = 0, cfg: SACConfig | None = None, eval_every: int = 2500,
              eval_episodes: int = 200, stop_at: float | None = None):
    """Train a learned-temperature SAC agent; returns ``(agent, [(step, mean_return), ...])``.

    With ``stop_at`` set, training ends at the first evaluation whose mean
    return reaches it.
    """
    cfg = cfg or SACConfig(warmup_transitions=1000)
    rng = np.random.Generator(np.random.Philox(seed))
    env = MoveToOrigin()
    agent = SACAgent(1, 1, cfg, rng)
    buf = ReplayBuffer(1, 1, min(cfg.replay_capacity, steps + 1))
    obs = env.reset(rng)
    history = []
    for t in range(1, steps + 1):
        if buf.size < cfg.warmup_transitions:
            action = rng.uniform(-1.0, 1.0, size=1)
        else:
            action = agent.act(obs, noise=rng.standard_normal(1))
        nxt, r, trunc = env.step(action)
        # time-limit truncation is not a terminal state
        buf.push(obs, action, r, nxt, False)
        obs = env.reset(rng) if trunc else nxt
        if buf.size >= cfg.warmup_transitions:
            agent.update(buf, rng)
        if t % eval_every == 0:
            score = evaluate(agent, eval_episodes)
            history.append((t, score))
            if stop_at is not None and score >= stop_at:
                break
    return agent, history
