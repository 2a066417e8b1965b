"""Training loops for Hi-QARL and its baselines, the unseen-maze benchmark, and probes."""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from ._accel import njit, pick
from .agents import ReplayBuffer, SACAgent, SACConfig
from .curriculum import (
    CurriculumConfig, GammaParams, PerfBuffer, curriculum_step, gamma_kl, gamma_mean, gamma_sample,
)
from .env import (
    ADV_ACTION_DIM, ADV_OBS_DIM, NAV_ACTION_DIM, NAV_OBS_DIM, ROBOT_LENGTH, Arena, ArenaLayout,
    DynamicsConfig, LayoutError, aabb_distance, boxes_overlap,
)
from .nncore import LOG_STD_MAX, LOG_STD_MIN, log1m_tanh2

METRIC_FIELDS = ("episode", "kind", "seed", "success", "steps", "return_p", "return_a", "alpha", "beta",
                 "adv_entropy", "curriculum_k", "curriculum_theta")
BENCH_ALPHA = 1e-3
STATIC_BOX_SIZE = 0.5
GRID_RES = 0.1


class AlgorithmKind(str, enum.Enum):
    HIQARL = "hiqarl"
    RARL = "rarl"
    STATIC = "static"
    RANDOM = "random"


@dataclass(frozen=True)
class EnvConfig:
    layout: ArenaLayout = field(default_factory=ArenaLayout)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 200_000
    env: EnvConfig = field(default_factory=EnvConfig)
    sac: SACConfig = field(default_factory=SACConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    probe_states: int = 512

    def __post_init__(self):
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if self.probe_states < 100:
            raise ValueError("probe_states must be >= 100")


@dataclass
class EpisodeResult:
    success: bool
    steps: int
    obstacle_collisions: int
    wall_collisions: int
    return_protagonist: float
    return_adversary: float
    sampled_alpha: float | None = None


@dataclass
class TrainResult:
    protagonist: SACAgent
    adversary: SACAgent | None
    records: list
    curriculum_trace: list
    omega: GammaParams | None
    steps: int


def make_rng(seed: int) -> np.random.Generator:
    """The run's single generator: Philox, a counter-based bit generator."""
    return np.random.Generator(np.random.Philox(int(seed)))


# --------------------------------------------------------------------------
# probes


def probe_states(layout: ArenaLayout, n: int = 512, seed: int = 7) -> np.ndarray:
    """Fixed set of adversary observations spread over the arena."""
    rng = make_rng(seed)
    bx0, by0, bx1, by1 = layout.bounds
    out = np.empty((n, ADV_OBS_DIM))
    for i in range(n):
        s = rng.uniform(0.0, layout.track_length)
        c = layout.track_point(s)
        robot = np.array([rng.uniform(bx0 + 0.5, bx1 - 0.5), rng.uniform(by0 + 0.5, by1 - 0.5)])
        out[i, :2] = c
        out[i, 2] = rng.uniform(-1.0, 1.0)
        out[i, 3:5] = robot - c
        out[i, 5:7] = rng.uniform(-1.0, 1.0, size=2)
    return out


def adversary_entropy_probe(adversary: SACAgent, states: np.ndarray, samples: int = 64, seed: int = 0) -> float:
    """Mean differential entropy of the squashed policy over ``states``.

    Gaussian entropy of the pre-squash variable plus a Monte Carlo estimate of
    E[log(1 - tanh(u)^2)], the log-Jacobian of the squash.
    """
    states = np.asarray(states, dtype=np.float64)
    if states.shape[0] < 100:
        raise ValueError("entropy probe needs at least 100 states")
    mean, log_std = adversary.policy_params(states)
    ls = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    gauss = np.sum(0.5 * math.log(2.0 * math.pi * math.e) + ls, axis=1)
    eps = make_rng(seed).standard_normal((samples,) + mean.shape)
    u = mean[None] + np.exp(ls)[None] * eps
    jac = np.mean(np.sum(log1m_tanh2(u), axis=2), axis=0)
    return float(np.mean(gauss + jac))


# --------------------------------------------------------------------------
# training


def train(kind, seed: int, cfg: TrainConfig, on_record: Callable[[dict], None] | None = None,
          on_curriculum: Callable[[dict], None] | None = None) -> TrainResult:
    """Run one training job; every stochastic choice flows from one seeded generator.

    ``on_record`` receives each per-episode metrics record as it is produced,
    ``on_curriculum`` each curriculum trace entry.
    """
    kind = AlgorithmKind(kind)
    rng = make_rng(seed)
    sac = cfg.sac
    layout, dyn = cfg.env.layout, cfg.env.dynamics
    arena = Arena(layout, dyn)
    probes = probe_states(layout, cfg.probe_states)

    prot = SACAgent(NAV_OBS_DIM, NAV_ACTION_DIM, sac, rng, temperature_mode="learned")
    prot_buf = ReplayBuffer(NAV_OBS_DIM, NAV_ACTION_DIM, min(sac.replay_capacity, max(cfg.total_steps, 1)))
    adv = adv_buf = None
    if kind is AlgorithmKind.HIQARL:
        adv = SACAgent(ADV_OBS_DIM, ADV_ACTION_DIM, sac, rng, temperature_mode="imposed",
                       temperature=gamma_mean(cfg.curriculum.initial))
    elif kind is AlgorithmKind.RARL:
        adv = SACAgent(ADV_OBS_DIM, ADV_ACTION_DIM, sac, rng, temperature_mode="learned")
    if adv is not None:
        adv_buf = ReplayBuffer(ADV_OBS_DIM, ADV_ACTION_DIM, min(sac.replay_capacity, max(cfg.total_steps, 1)))

    omega = cfg.curriculum.initial if kind is AlgorithmKind.HIQARL else None
    perf = PerfBuffer(cfg.curriculum.perf_window)
    records, trace = [], []
    step = 0
    episode = 0
    while step < cfg.total_steps:
        ep_seed = int(rng.integers(0, 2 ** 31 - 1))
        obstacle_s = None
        alpha = None
        if kind is AlgorithmKind.STATIC:
            obstacle_s = float(rng.uniform(0.0, layout.track_length))
        elif kind is AlgorithmKind.HIQARL:
            alpha = gamma_sample(omega, rng)
            adv.set_imposed_temperature(alpha)
        _, _, nav_obs, adv_obs = arena.reset(ep_seed, obstacle_s=obstacle_s)
        ret_p = ret_a = 0.0
        n_obs = n_wall = 0
        clean, reached = True, False
        ep_steps = 0
        while step < cfg.total_steps:
            if prot_buf.size < sac.warmup_transitions:
                a_nav = rng.uniform(-1.0, 1.0, size=NAV_ACTION_DIM)
            else:
                a_nav = prot.act(nav_obs, noise=rng.standard_normal(NAV_ACTION_DIM))
            if kind is AlgorithmKind.STATIC:
                a_adv = np.zeros(ADV_ACTION_DIM)
            elif kind is AlgorithmKind.RANDOM or adv_buf.size < sac.warmup_transitions:
                a_adv = rng.uniform(-1.0, 1.0, size=ADV_ACTION_DIM)
            else:
                a_adv = adv.act(adv_obs, noise=rng.standard_normal(ADV_ACTION_DIM))
            out = arena.step(a_nav, a_adv)
            step += 1
            ep_steps += 1
            # the horizon is a time limit, so transitions keep bootstrapping
            prot_buf.push(nav_obs, a_nav, out.nav_reward, out.nav_obs, False)
            if adv is not None:
                adv_buf.push(adv_obs, a_adv, out.adv_reward, out.adv_obs, False)
            nav_obs, adv_obs = out.nav_obs, out.adv_obs
            ret_p += out.nav_reward
            ret_a += out.adv_reward
            n_obs += out.collisions.obstacle
            n_wall += out.collisions.wall
            if out.collisions.obstacle and not reached:
                clean = False
            if not reached and arena.distance_to_target() <= layout.target_radius:
                reached = True
            if prot_buf.size >= sac.warmup_transitions:
                prot.update(prot_buf, rng)
            if adv is not None and adv_buf.size >= sac.warmup_transitions:
                adv.update(adv_buf, rng)
            if out.terminal:
                break
        if not arena.done:
            break  # step budget ran out mid-episode
        res = EpisodeResult(success=reached and clean, steps=ep_steps, obstacle_collisions=n_obs,
                            wall_collisions=n_wall, return_protagonist=ret_p, return_adversary=ret_a,
                            sampled_alpha=alpha)
        rec = {
            "episode": episode, "kind": kind.value, "seed": int(seed), "success": bool(res.success),
            "steps": res.steps, "return_p": ret_p, "return_a": ret_a,
            "alpha": alpha if kind is AlgorithmKind.HIQARL else (adv.temperature if adv is not None else None),
            "beta": prot.temperature,
            "adv_entropy": adversary_entropy_probe(adv, probes) if adv is not None else None,
            "curriculum_k": omega.k if omega is not None else None,
            "curriculum_theta": omega.theta if omega is not None else None,
        }
        records.append(rec)
        if on_record is not None:
            on_record(rec)
        episode += 1
        if kind is AlgorithmKind.HIQARL:
            perf.append(alpha, ret_p)
            if episode % cfg.curriculum.update_every == 0 and len(perf) >= min(10, cfg.curriculum.perf_window):
                upd = curriculum_step(omega, cfg.curriculum, perf)
                entry = {
                    "episode": episode, "step": step, "accepted": upd.accepted,
                    "k_old": omega.k, "theta_old": omega.theta, "k": upd.params.k, "theta": upd.params.theta,
                    "mean_alpha": gamma_mean(upd.params), "t": upd.t, "kl_step": upd.kl_step,
                    "estimate": upd.estimate, "current_estimate": upd.current_estimate,
                    "xi": cfg.curriculum.xi, "epsilon": cfg.curriculum.epsilon,
                    "kl_to_target": gamma_kl(upd.params, cfg.curriculum.target),
                }
                trace.append(entry)
                if on_curriculum is not None:
                    on_curriculum(entry)
                omega = upd.params
    return TrainResult(prot, adv, records, trace, omega, step)


def train_fixed_alpha_adversary(alpha: float, seed: int, steps: int, cfg: TrainConfig | None = None) -> SACAgent:
    """Train only the adversary at a fixed imposed temperature against a frozen, untrained protagonist."""
    cfg = cfg or TrainConfig()
    rng = make_rng(seed)
    arena = Arena(cfg.env.layout, cfg.env.dynamics)
    prot = SACAgent(NAV_OBS_DIM, NAV_ACTION_DIM, cfg.sac, rng)
    adv = SACAgent(ADV_OBS_DIM, ADV_ACTION_DIM, cfg.sac, rng, temperature_mode="imposed", temperature=alpha)
    buf = ReplayBuffer(ADV_OBS_DIM, ADV_ACTION_DIM, max(steps, 1))
    step = 0
    while step < steps:
        _, _, nav_obs, adv_obs = arena.reset(int(rng.integers(0, 2 ** 31 - 1)))
        while step < steps:
            a_nav = prot.act(nav_obs, noise=rng.standard_normal(NAV_ACTION_DIM))
            if buf.size < cfg.sac.warmup_transitions:
                a_adv = rng.uniform(-1.0, 1.0, size=ADV_ACTION_DIM)
            else:
                a_adv = adv.act(adv_obs, noise=rng.standard_normal(ADV_ACTION_DIM))
            out = arena.step(a_nav, a_adv)
            step += 1
            buf.push(adv_obs, a_adv, out.adv_reward, out.adv_obs, False)
            nav_obs, adv_obs = out.nav_obs, out.adv_obs
            if buf.size >= cfg.sac.warmup_transitions:
                adv.update(buf, rng)
            if out.terminal:
                break
    return adv


# --------------------------------------------------------------------------
# randomized mazes


def _bfs_kernel(free, start_i, start_j, goal_i, goal_j):
    ni, nj = free.shape
    if not free[start_i, start_j] or not free[goal_i, goal_j]:
        return False
    seen = np.zeros((ni, nj), dtype=np.bool_)
    queue = np.empty(ni * nj, dtype=np.int64)
    head = 0
    tail = 0
    queue[tail] = start_i * nj + start_j
    tail += 1
    seen[start_i, start_j] = True
    while head < tail:
        c = queue[head]
        head += 1
        i = c // nj
        j = c % nj
        if i == goal_i and j == goal_j:
            return True
        for d in range(4):
            a = i + (1 if d == 0 else (-1 if d == 1 else 0))
            b = j + (1 if d == 2 else (-1 if d == 3 else 0))
            if 0 <= a < ni and 0 <= b < nj and free[a, b] and not seen[a, b]:
                seen[a, b] = True
                queue[tail] = a * nj + b
                tail += 1
    return False


def _bfs_numpy(free, start_i, start_j, goal_i, goal_j):
    if not free[start_i, start_j] or not free[goal_i, goal_j]:
        return False
    reach = np.zeros_like(free)
    reach[start_i, start_j] = True
    while True:
        grown = reach.copy()
        grown[1:, :] |= reach[:-1, :]
        grown[:-1, :] |= reach[1:, :]
        grown[:, 1:] |= reach[:, :-1]
        grown[:, :-1] |= reach[:, 1:]
        grown &= free
        if grown[goal_i, goal_j]:
            return True
        if np.array_equal(grown, reach):
            return False
        reach = grown


_bfs = pick(njit(_bfs_kernel), _bfs_numpy)


def occupancy_grid(layout: ArenaLayout, res: float = GRID_RES, inflate: float = ROBOT_LENGTH / 2) -> tuple:
    """Free-cell mask over the arena; boxes and walls are inflated by the robot's half-length.

    The obstacle's whole swept region counts as occupied.
    """
    bx0, by0, bx1, by1 = layout.bounds
    xs = np.arange(bx0 + res / 2, bx1, res)
    ys = np.arange(by0 + res / 2, by1, res)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    free = (gx >= bx0 + inflate) & (gx <= bx1 - inflate) & (gy >= by0 + inflate) & (gy <= by1 - inflate)
    for b in (layout.swept_obstacle_box(), *layout.static_boxes):
        free &= ~((gx > b[0] - inflate) & (gx < b[2] + inflate) & (gy > b[1] - inflate) & (gy < b[3] + inflate))
    return free, xs, ys


def path_exists(layout: ArenaLayout, res: float = GRID_RES) -> bool:
    free, xs, ys = occupancy_grid(layout, res)
    sx0, sy0, sx1, sy1 = layout.spawn[:4]
    si = int(np.argmin(np.abs(xs - 0.5 * (sx0 + sx1))))
    sj = int(np.argmin(np.abs(ys - 0.5 * (sy0 + sy1))))
    gi = int(np.argmin(np.abs(xs - layout.target[0])))
    gj = int(np.argmin(np.abs(ys - layout.target[1])))
    return bool(_bfs(free, si, sj, gi, gj))


class MazeGenerationError(RuntimeError):
    pass


def randomize_maze(seed: int, base: ArenaLayout | None = None, n_boxes: int = 2, max_tries: int = 10_000) -> ArenaLayout:
    """Training layout plus ``n_boxes`` random 0.5 m boxes that keep the task solvable."""
    base = base or ArenaLayout()
    rng = make_rng(seed)
    bx0, by0, bx1, by1 = base.bounds
    half = STATIC_BOX_SIZE / 2
    sx0, sy0, sx1, sy1 = base.spawn[:4]
    spawn_box = (sx0 - ROBOT_LENGTH, sy0 - ROBOT_LENGTH, sx1 + ROBOT_LENGTH, sy1 + ROBOT_LENGTH)
    swept = base.swept_obstacle_box()
    for _ in range(max_tries):
        boxes = []
        for _ in range(n_boxes):
            cx = rng.uniform(bx0 + half, bx1 - half)
            cy = rng.uniform(by0 + half, by1 - half)
            boxes.append((cx - half, cy - half, cx + half, cy + half))
        ok = all(
            not boxes_overlap(b, spawn_box) and not boxes_overlap(b, swept)
            and aabb_distance(base.target, b)[0] > base.target_radius
            for b in boxes
        )
        if not ok:
            continue
        try:
            layout = replace(base, static_boxes=tuple(base.static_boxes) + tuple(boxes))
        except LayoutError:
            continue
        if path_exists(layout):
            return layout
    raise MazeGenerationError(f"no feasible layout after {max_tries} tries (seed {seed})")


# --------------------------------------------------------------------------
# evaluation


@dataclass
class RobustnessReport:
    per_seed: list
    episodes: int
    labels: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_seed)) if self.per_seed else float("nan")

    @property
    def std(self) -> float:
        return float(np.std(self.per_seed)) if self.per_seed else float("nan")

    @property
    def seeds(self) -> int:
        return len(self.per_seed)

    def to_dict(self) -> dict:
        return {"per_seed": [float(v) for v in self.per_seed], "labels": list(self.labels), "mean": self.mean,
                "std": self.std, "episodes": self.episodes, "seeds": self.seeds}


def run_eval_episode(protagonist: SACAgent, adversary: SACAgent | None, layout: ArenaLayout, seed: int,
                     dyn: DynamicsConfig | None = None, alpha: float = BENCH_ALPHA) -> EpisodeResult:
    """Deterministic-policy episode; stops as soon as the outcome is decided."""
    arena = Arena(layout, dyn)
    if adversary is not None:
        if protagonist.obs_dim != NAV_OBS_DIM or adversary.obs_dim != ADV_OBS_DIM:
            raise ValueError("checkpoint observation dims do not match the arena")
        if adversary.temperature_mode == "imposed":
            adversary.set_imposed_temperature(alpha)
    elif protagonist.obs_dim != NAV_OBS_DIM:
        raise ValueError("protagonist observation dims do not match the arena")
    _, _, nav_obs, adv_obs = arena.reset(seed)
    ret_p = ret_a = 0.0
    n_obs = n_wall = 0
    success = False
    steps = 0
    zero = np.zeros(ADV_ACTION_DIM)
    if arena.distance_to_target() <= layout.target_radius:
        return EpisodeResult(True, 0, 0, 0, 0.0, 0.0, alpha if adversary is not None else None)
    while not arena.done:
        a_nav = protagonist.act(nav_obs, deterministic=True)
        a_adv = adversary.act(adv_obs, deterministic=True) if adversary is not None else zero
        out = arena.step(a_nav, a_adv)
        steps += 1
        ret_p += out.nav_reward
        ret_a += out.adv_reward
        n_obs += out.collisions.obstacle
        n_wall += out.collisions.wall
        nav_obs, adv_obs = out.nav_obs, out.adv_obs
        if out.collisions.obstacle:
            break
        if arena.distance_to_target() <= layout.target_radius:
            success = True
            break
    return EpisodeResult(success, steps, n_obs, n_wall, ret_p, ret_a, alpha if adversary is not None else None)


def episode_seed(layout_seed: int, episode: int) -> int:
    return (int(layout_seed) * 1_000_003 + int(episode)) % (2 ** 31 - 1)


def evaluate(protagonist: SACAgent, adversary: SACAgent | None, layouts: Iterable[ArenaLayout], episodes: int,
             dyn: DynamicsConfig | None = None, layout_ids: list | None = None):
    """Success fraction per layout plus the flat per-episode results."""
    fractions, rows = [], []
    layouts = list(layouts)
    ids = layout_ids if layout_ids is not None else list(range(len(layouts)))
    for lid, layout in zip(ids, layouts):
        wins = 0
        for e in range(episodes):
            r = run_eval_episode(protagonist, adversary, layout, episode_seed(lid, e), dyn)
            wins += r.success
            rows.append((lid, e, r))
        fractions.append(wins / episodes if episodes else 0.0)
    return RobustnessReport(fractions, episodes * len(layouts), labels=ids), rows


def write_jsonl(path, records: Iterable[dict]):
    with open(path, "a", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=False) + "\n")
