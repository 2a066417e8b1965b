import json
import math

import numpy as np
import pytest
from scipy import ndimage, stats
from shapely.geometry import Point, box as shp_box

from hiqarl import bench
from hiqarl.agents import SACAgent, SACConfig
from hiqarl.bench import (
    METRIC_FIELDS, EnvConfig, RobustnessReport, TrainConfig, adversary_entropy_probe, evaluate,
    occupancy_grid, path_exists, probe_states, randomize_maze, run_eval_episode, train,
)
from hiqarl.curriculum import CurriculumConfig, gamma_logpdf, GammaParams
from hiqarl.env import ADV_OBS_DIM, NAV_OBS_DIM, Arena, ArenaLayout, DynamicsConfig, boxes_overlap

TINY_SAC = SACConfig(hidden=(8, 8), batch=16, warmup_transitions=150)


def tiny_cfg(steps, horizon=50, warmup=150, **cur):
    sac = SACConfig(hidden=(8, 8), batch=16, warmup_transitions=warmup)
    return TrainConfig(total_steps=steps, env=EnvConfig(dynamics=DynamicsConfig(horizon=horizon)), sac=sac,
                       curriculum=CurriculumConfig(**cur) if cur else CurriculumConfig(), probe_states=100)


class Recorder(Arena):
    log = []

    def step(self, nav_action, adv_action):
        out = super().step(nav_action, adv_action)
        Recorder.log.append((np.ravel(adv_action)[0], out.obstacle.lateral_velocity))
        return out


@pytest.fixture
def recorder(monkeypatch):
    Recorder.log = []
    monkeypatch.setattr(bench, "Arena", Recorder)
    return Recorder.log


def test_static_obstacle_never_moves(recorder):
    res = train("static", 0, tiny_cfg(400))
    assert res.adversary is None
    assert all(a == 0.0 and v == 0.0 for a, v in recorder)
    assert all(r["alpha"] is None and r["adv_entropy"] is None for r in res.records)


def test_random_adversary_is_uniform(recorder):
    # warmup longer than the run: no learning, only the action streams matter
    train("random", 1, tiny_cfg(10_000, horizon=1000, warmup=20_000))
    acts = np.array([a for a, _ in recorder])
    assert acts.size == 10_000
    assert stats.kstest(acts, stats.uniform(loc=-1, scale=2).cdf).pvalue > 0.01


def test_hiqarl_alphas_positive_and_plausible():
    res = train("hiqarl", 2, tiny_cfg(1200, horizon=50, perf_window=10, update_every=2, epsilon=0.5))
    assert res.records
    for r in res.records:
        assert r["alpha"] > 0
        omega = GammaParams(r["curriculum_k"], r["curriculum_theta"])
        # the draw sits well inside its own distribution's bulk
        lo, hi = stats.gamma(omega.k, scale=omega.theta).ppf([1e-7, 1 - 1e-7])
        assert lo <= r["alpha"] <= hi
        assert np.isfinite(gamma_logpdf(r["alpha"], omega))
    assert res.curriculum_trace
    for e in res.curriculum_trace:
        assert e["kl_step"] <= e["epsilon"] + 1e-9


def test_rarl_adversary_learns_its_temperature():
    res = train("rarl", 3, tiny_cfg(600))
    temps = [r["alpha"] for r in res.records]
    assert res.adversary.temperature_mode == "learned"
    assert len(set(temps)) > 1


def test_records_have_exact_fields_and_replay_bitwise():
    def run():
        lines = []
        train("hiqarl", 5, tiny_cfg(500, perf_window=10, update_every=2),
              on_record=lambda r: lines.append(json.dumps(r)))
        return lines

    a, b = run(), run()
    assert a == b
    for line in a:
        assert tuple(json.loads(line)) == METRIC_FIELDS


def test_budget_bounds_steps():
    res = train("static", 0, tiny_cfg(175))
    assert res.steps == 175
    assert len(res.records) == 3  # the partial fourth episode is not recorded
    assert all(r["steps"] <= 50 for r in res.records)


# --- mazes --------------------------------------------------------------


def bfs_oracle(layout, res=0.1, inflate=0.3):
    """Cell-by-cell occupancy from shapely, components from scipy labelling."""
    bx0, by0, bx1, by1 = layout.bounds
    xs = np.arange(bx0 + res / 2, bx1, res)
    ys = np.arange(by0 + res / 2, by1, res)
    inner = shp_box(bx0 + inflate, by0 + inflate, bx1 - inflate, by1 - inflate)
    blocked = [shp_box(*b).buffer(inflate, cap_style="square", join_style="mitre")
               for b in (layout.swept_obstacle_box(), *layout.static_boxes)]
    free = np.zeros((xs.size, ys.size), dtype=bool)
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            p = Point(x, y)
            free[i, j] = inner.covers(p) and not any(b.contains(p) for b in blocked)
    labels, _ = ndimage.label(free)
    sx0, sy0, sx1, sy1 = layout.spawn[:4]
    s = (int(np.argmin(np.abs(xs - (sx0 + sx1) / 2))), int(np.argmin(np.abs(ys - (sy0 + sy1) / 2))))
    g = (int(np.argmin(np.abs(xs - layout.target[0]))), int(np.argmin(np.abs(ys - layout.target[1]))))
    return labels[s] != 0 and labels[s] == labels[g]


def test_maze_determinism():
    assert randomize_maze(7) == randomize_maze(7)
    assert randomize_maze(7) != randomize_maze(8)


def test_thousand_mazes_feasible_and_clear_of_target():
    base = ArenaLayout()
    for seed in range(1000):
        lay = randomize_maze(seed)
        assert len(lay.static_boxes) == 2
        assert path_exists(lay)
        for b in lay.static_boxes:
            assert b[2] - b[0] == pytest.approx(0.5) and b[3] - b[1] == pytest.approx(0.5)
            assert shp_box(*b).distance(Point(*base.target)) > base.target_radius
            assert not boxes_overlap(b, base.swept_obstacle_box())


def test_bfs_matches_oracle():
    walls = ArenaLayout(static_boxes=((-1.0, -3.0, -0.5, 2.9),))
    assert path_exists(walls) == bfs_oracle(walls)
    blocked = ArenaLayout(static_boxes=((-1.0, -3.0, -0.5, 0.0), (-1.0, 0.0, -0.5, 3.0)))
    assert not path_exists(blocked) and not bfs_oracle(blocked)
    for seed in range(15):
        lay = randomize_maze(seed)
        assert path_exists(lay) == bfs_oracle(lay)


def test_bfs_kernels_agree():
    rng = np.random.default_rng(0)
    nb = bench.njit(bench._bfs_kernel)
    for _ in range(200):
        free = rng.random((30, 20)) < 0.6
        args = (free, *rng.integers(0, 20, 2), *rng.integers(0, 20, 2))
        assert bool(nb(*args)) == bool(bench._bfs_numpy(*args))


def test_occupancy_blocks_walls_and_swept_track():
    free, xs, ys = occupancy_grid(ArenaLayout())
    i0 = int(np.argmin(np.abs(xs)))
    j0 = int(np.argmin(np.abs(ys)))
    assert not free[i0, j0] and not free[0, j0]


def test_maze_rejection_failure():
    cramped = ArenaLayout(bounds=(-5, -3, 5, 3), static_boxes=((-2.0, -3.0, -1.5, 3.0),))
    with pytest.raises(bench.MazeGenerationError):
        randomize_maze(0, base=cramped, max_tries=50)


# --- evaluation ---------------------------------------------------------


def zero_agent(obs_dim, act_dim):
    ag = SACAgent(obs_dim, act_dim, TINY_SAC, np.random.default_rng(0))
    ag.actor[:] = 0.0
    return ag


def test_degenerate_success_when_spawning_on_target():
    lay = ArenaLayout(target=(-4.0, 0.0), spawn=(-4.2, -0.2, -3.8, 0.2, 0.0, 0.0))
    report, rows = evaluate(zero_agent(NAV_OBS_DIM, 3), None, [lay], 5)
    assert report.mean == 1.0 and report.per_seed == [1.0]


def test_zero_policy_never_succeeds():
    report, rows = evaluate(zero_agent(NAV_OBS_DIM, 3), zero_agent(ADV_OBS_DIM, 1),
                            [randomize_maze(0), randomize_maze(1)], 2, dyn=DynamicsConfig(horizon=200))
    assert report.mean == 0.0 and len(rows) == 4
    assert all(r.steps == 200 for _, _, r in rows)


def test_report_statistics_recompute():
    r = RobustnessReport([0.2, 0.5, 0.9, 0.4], episodes=40)
    d = r.to_dict()
    assert d["mean"] == pytest.approx(np.mean(d["per_seed"]))
    assert d["std"] == pytest.approx(math.sqrt(np.mean((np.array(d["per_seed"]) - d["mean"]) ** 2)))
    assert d["seeds"] == 4


def test_eval_dimension_mismatch():
    with pytest.raises(ValueError):
        run_eval_episode(zero_agent(5, 3), None, ArenaLayout(), 0)


# --- entropy probe ------------------------------------------------------


def probe_agent(log_std):
    ag = zero_agent(ADV_OBS_DIM, 1)
    ag.actor[-1] = log_std  # bias of the log-std output
    return ag


def test_probe_at_max_log_std_vs_reference():
    states = probe_states(ArenaLayout(), 128)
    est = adversary_entropy_probe(probe_agent(2.0), states)
    # 1e6-sample reference: Gaussian entropy at sigma = e^2 plus E[log(1 - tanh(u)^2)]
    u = np.random.default_rng(123).normal(scale=math.exp(2.0), size=1_000_000)
    jac = 2 * (math.log(2) - np.abs(u) - np.log1p(np.exp(-2 * np.abs(u))))
    ref = 0.5 * math.log(2 * math.pi * math.e) + 2.0 + jac.mean()
    # the probe draws 64 x 128 samples; allow four of its standard errors
    se = jac.std() / math.sqrt(64 * 128)
    assert abs(est - ref) <= 4 * se
    assert est < 0.5 * math.log(2 * math.pi * math.e) + 2.0


def test_probe_near_deterministic_is_very_negative():
    assert adversary_entropy_probe(probe_agent(-20.0), probe_states(ArenaLayout(), 128)) < -15


def test_probe_stable_across_state_resamples():
    # bootstrap over the default probe set with a full-size network
    ag = SACAgent(ADV_OBS_DIM, 1, SACConfig(), np.random.default_rng(4))
    states = probe_states(ArenaLayout())
    rng = np.random.default_rng(0)
    n = len(states)
    vals = [adversary_entropy_probe(ag, states[rng.integers(0, n, n)]) for _ in range(100)]
    assert np.std(vals) <= 0.05


def test_probe_needs_enough_states():
    with pytest.raises(ValueError):
        adversary_entropy_probe(probe_agent(0.0), probe_states(ArenaLayout(), 128)[:50])
