import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hiqarl import checkpoint
from hiqarl.cli import EXIT_CHECKPOINT, EXIT_CONFIG, EXIT_IO, main, read_metrics, rolling_mean
from hiqarl.config import ConfigError, config_to_dict, parse_config

TINY = """\
algo: {algo}
seed: {seed}
total_steps: {steps}
env:
  horizon: 40
sac:
  hidden: [8, 8]
  batch: 16
  warmup_transitions: 100
curriculum:
  perf_window: 10
  update_every: 2
probe_states: 100
"""


def write_cfg(tmp_path, algo="static", seed=7, steps=300, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(TINY.format(algo=algo, seed=seed, steps=steps))
    return p


def run_train(tmp_path, out, **kw):
    return main(["train", "--config", str(write_cfg(tmp_path, **kw)), "--out", str(out)])


# --- train --------------------------------------------------------------


def test_missing_config_exits_2(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG
    assert "nope.yaml" in capsys.readouterr().err


def test_bad_arguments_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == EXIT_CONFIG


def test_train_twice_is_bitwise_identical(tmp_path):
    assert run_train(tmp_path, tmp_path / "a") == 0
    assert run_train(tmp_path, tmp_path / "b") == 0
    for name in ("metrics.jsonl", "protagonist.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_hiqarl_train_writes_adversary_and_trace(tmp_path):
    assert run_train(tmp_path, tmp_path / "h", algo="hiqarl", steps=600) == 0
    header, recs = read_metrics(tmp_path / "h" / "metrics.jsonl")
    assert header["config"]["algo"] == "hiqarl" and len(recs) == 15
    assert (tmp_path / "h" / "adversary.ckpt").exists()
    trace = [json.loads(x) for x in (tmp_path / "h" / "curriculum.jsonl").read_text().splitlines()]
    assert trace and all(e["kl_step"] <= e["epsilon"] + 1e-9 for e in trace)


def test_zero_steps_header_only(tmp_path):
    assert run_train(tmp_path, tmp_path / "z", steps=0) == 0
    lines = (tmp_path / "z" / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 1 and "header" in json.loads(lines[0])
    header, _ = checkpoint.load(tmp_path / "z" / "protagonist.ckpt")
    assert header["step"] == 0


def test_existing_output_needs_force(tmp_path):
    assert run_train(tmp_path, tmp_path / "o", steps=0) == 0
    assert run_train(tmp_path, tmp_path / "o", steps=0) == EXIT_IO
    cfg = write_cfg(tmp_path, steps=0)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o"), "--force"]) == 0


def test_cli_overrides_algo_and_seed(tmp_path):
    cfg = write_cfg(tmp_path, steps=0)
    assert main(["train", "--config", str(cfg), "--algo", "random", "--seed", "3", "--out", str(tmp_path / "r")]) == 0
    header, _ = read_metrics(tmp_path / "r" / "metrics.jsonl")
    assert header["config"]["algo"] == "random" and header["config"]["seed"] == 3


# --- bench --------------------------------------------------------------


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("trained")
    assert run_train(d, d / "run", algo="rarl", steps=300) == 0
    return d / "run"


def test_bench_single_layout_std_zero(trained, tmp_path):
    assert main(["bench", "--protagonist", str(trained / "protagonist.ckpt"), "--episodes", "1",
                 "--layout-seeds", "1", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "robustness_report.json").read_text())
    assert rep["std"] == 0.0 and rep["seeds"] == 1 and rep["episodes"] == 1


def test_bench_report_matches_episode_csv(trained, tmp_path):
    assert main(["bench", "--protagonist", str(trained / "protagonist.ckpt"), "--adversary",
                 str(trained / "adversary.ckpt"), "--episodes", "3", "--layout-seeds", "2",
                 "--layout-offset", "40", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "robustness_report.json").read_text())
    with open(tmp_path / "episodes.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6 and {int(r["layout_seed"]) for r in rows} == {40, 41}
    per = [np.mean([int(r["success"]) for r in rows if int(r["layout_seed"]) == s]) for s in (40, 41)]
    assert rep["per_seed"] == pytest.approx(per)
    assert rep["mean"] == pytest.approx(np.mean([int(r["success"]) for r in rows]))


def test_bench_corrupted_checkpoint_exits_4(trained, tmp_path):
    blob = bytearray((trained / "protagonist.ckpt").read_bytes())
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(blob[:-3]))
    assert main(["bench", "--protagonist", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CHECKPOINT
    blob[0:4] = b"XXXX"
    bad.write_bytes(bytes(blob))
    assert main(["bench", "--protagonist", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CHECKPOINT


def test_bench_swapped_roles_exit_4(trained, tmp_path):
    assert main(["bench", "--protagonist", str(trained / "adversary.ckpt"),
                 "--out", str(tmp_path)]) == EXIT_CHECKPOINT


def test_bench_missing_checkpoint_exit_3(tmp_path):
    assert main(["bench", "--protagonist", str(tmp_path / "none.ckpt"), "--out", str(tmp_path)]) == EXIT_IO


# --- plotdata -----------------------------------------------------------


def test_rolling_mean_examples():
    assert rolling_mean([0, 1, 2, 3], 3).tolist() == [0, 0.5, 1, 2]
    v = np.random.default_rng(0).normal(size=50)
    assert np.array_equal(rolling_mean(v, 1), v)
    assert np.allclose(rolling_mean(np.full(20, 4.2), 7), 4.2)


def test_plotdata_end_to_end(trained, tmp_path):
    out = tmp_path / "s.csv"
    assert main(["plotdata", "--metrics", str(trained / "metrics.jsonl"), "--series", "success",
                 "--window", "1", "--out", str(out)]) == 0
    _, recs = read_metrics(trained / "metrics.jsonl")
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["episode", "success"]
    assert [float(r[1]) for r in rows[1:]] == [float(r["success"]) for r in recs]


def test_plotdata_skips_null_series(tmp_path):
    assert run_train(tmp_path, tmp_path / "s", steps=200) == 0
    out = tmp_path / "a.csv"
    assert main(["plotdata", "--metrics", str(tmp_path / "s" / "metrics.jsonl"), "--series", "alpha",
                 "--out", str(out)]) == 0
    assert out.read_text().splitlines() == ["episode,alpha"]


def test_plotdata_unknown_series(trained, tmp_path):
    assert main(["plotdata", "--metrics", str(trained / "metrics.jsonl"), "--series", "bogus",
                 "--out", str(tmp_path / "x.csv")]) == EXIT_CONFIG


# --- config -------------------------------------------------------------


def test_unknown_key_reports_line():
    text = "algo: static\nseed: 1\nsac:\n  hiden: [8]\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(text, "x.yaml")
    assert exc.value.line == 4 and "hiden" in str(exc.value) and str(exc.value).startswith("x.yaml:4:")


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError) as exc:
        parse_config("algo: static\nseed: 1\nseed: 2\n")
    assert exc.value.line == 3


@pytest.mark.parametrize("text", [
    "algo: static\nseed: true\n",
    "algo: static\nseed: 1.5\n",
    "algo: nope\nseed: 1\n",
    "seed: 1\n",
    "algo: static\nseed: 1\ntotal_steps: -5\n",
    "algo: static\nseed: 1\ncurriculum:\n  epsilon: 0\n",
    "algo: static\nseed: 1\ncurriculum:\n  target: {k: 1}\n",
    "algo: static\nseed: 1\nenv:\n  bounds: [1, 1, 0, 0]\n",
    "algo: [static\n",
    "",
])
def test_bad_configs_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_config_round_trips_through_dict():
    import yaml

    cfg = parse_config(TINY.format(algo="hiqarl", seed=2, steps=10))
    again = parse_config(yaml.safe_dump(config_to_dict(cfg)))
    assert config_to_dict(again) == config_to_dict(cfg)


# --- checkpoints --------------------------------------------------------

floats64 = st.floats(allow_nan=True, allow_infinity=True, width=64)


@settings(max_examples=100, deadline=None)
@given(st.dictionaries(st.text(min_size=1, max_size=8), st.lists(floats64, max_size=30), max_size=5),
       st.integers(0, 2**31 - 1), st.integers(0, 10**9))
def test_checkpoint_round_trip_is_bitwise(segments, seed, step):
    arrays = {k: np.array(v, dtype=np.float64) for k, v in segments.items()}
    header, back = checkpoint.decode(checkpoint.encode(arrays, "hiqarl", seed, step))
    assert header["seed"] == seed and header["step"] == step
    assert list(back) == list(arrays)
    for k in arrays:
        assert back[k].tobytes() == arrays[k].tobytes()


def test_checkpoint_rejects_inconsistent_blobs():
    good = checkpoint.encode({"a": np.arange(3.0)}, "static", 0, 0)
    for bad in (good[:-8], good + b"\0" * 8, b"HQCK", good[:4] + b"\xff\xff\xff\x00" + good[8:]):
        with pytest.raises(checkpoint.CheckpointError):
            checkpoint.decode(bad)


# --- numba switch -------------------------------------------------------


def test_numpy_fallback_matches_numba(tmp_path):
    """Same training run with and without numba gives matching metrics."""
    cfg = write_cfg(tmp_path, algo="rarl", steps=250)
    outs = {}
    for flag in ("0", "1"):
        env = dict(os.environ, HIQARL_DISABLE_NUMBA=flag)
        code = ("import sys, hiqarl._accel as a; from hiqarl.cli import main;"
                "print(a.USE_NUMBA); sys.exit(main(sys.argv[1:]))")
        res = subprocess.run([sys.executable, "-c", code, "train", "--config", str(cfg),
                              "--out", str(tmp_path / flag)], env=env, capture_output=True, text=True)
        assert res.returncode == 0, res.stderr
        assert res.stdout.split()[0] == ("True" if flag == "0" else "False")
        outs[flag] = read_metrics(tmp_path / flag / "metrics.jsonl")[1]
    assert len(outs["0"]) == len(outs["1"])
    for a, b in zip(outs["0"], outs["1"]):
        assert a["success"] == b["success"] and a["steps"] == b["steps"]
        assert a["return_p"] == pytest.approx(b["return_p"], rel=1e-6, abs=1e-6)
