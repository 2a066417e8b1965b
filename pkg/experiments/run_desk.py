"""Desk-scale comparison: train every algorithm on every seed, then benchmark.

Resumable: finished runs (checkpoints present) are skipped. Everything lands
under ``--results`` and is read back by the acceptance suite.

    python3 experiments/run_desk.py --results results
"""
import argparse
import json
import os
import sys
import time
from pathlib import Path

os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("NUMBA_NUM_THREADS", "1")

import numpy as np
import yaml

from hiqarl import cli
from hiqarl.bench import TrainConfig, adversary_entropy_probe, probe_states, train_fixed_alpha_adversary
from hiqarl.config import load_config

HERE = Path(__file__).resolve().parent
KINDS = ("static", "random", "rarl", "hiqarl")
XI_FRACTION = 0.6
XI_WINDOW = 10
EVAL_LAYOUT_OFFSET = 10_000  # training never sees these maze seeds
FIXED_ALPHAS = (1.0, 0.01)


def log(msg):
    print(time.strftime("%H:%M:%S"), msg, flush=True)


def static_xi(run_dir: Path) -> float:
    _, records = cli.read_metrics(run_dir / "metrics.jsonl")
    tail = [r["return_p"] for r in records[-XI_WINDOW:]]
    return XI_FRACTION * float(np.mean(tail))


def run_config(base: Path, out: Path, xi=None, steps=None) -> Path:
    tree = yaml.safe_load(base.read_text())
    if xi is not None:
        tree.setdefault("curriculum", {})["xi"] = float(xi)
    if steps is not None:
        tree["total_steps"] = int(steps)
    path = out / "config.yaml"
    out.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(tree, sort_keys=False))
    return path


def train_all(results: Path, base: Path, seeds, steps):
    for seed in seeds:
        for kind in KINDS:
            out = results / "runs" / f"{kind}_s{seed}"
            if (out / "protagonist.ckpt").exists():
                continue
            xi = static_xi(results / "runs" / f"static_s{seed}") if kind == "hiqarl" else None
            cfg = run_config(base, out, xi=xi, steps=steps)
            log(f"train {kind} seed {seed}" + (f" xi={xi:.1f}" if xi is not None else ""))
            t0 = time.time()
            code = cli.main(["train", "--config", str(cfg), "--algo", kind, "--seed", str(seed),
                             "--out", str(out), "--force"])
            if code:
                sys.exit(f"training {kind} seed {seed} failed with exit code {code}")
            (out / "wallclock.json").write_text(json.dumps({"seconds": time.time() - t0}))


def bench_all(results: Path, seeds, layouts, episodes):
    for seed in seeds:
        adv = results / "runs" / f"hiqarl_s{seed}" / "adversary.ckpt"
        for kind in KINDS:
            out = results / "bench" / f"{kind}_s{seed}"
            if (out / "robustness_report.json").exists():
                continue
            log(f"bench {kind} seed {seed}")
            code = cli.main(["bench", "--protagonist", str(results / "runs" / f"{kind}_s{seed}" / "protagonist.ckpt"),
                             "--adversary", str(adv), "--episodes", str(episodes), "--layout-seeds", str(layouts),
                             "--layout-offset", str(EVAL_LAYOUT_OFFSET), "--out", str(out), "--force"])
            if code:
                sys.exit(f"bench {kind} seed {seed} failed with exit code {code}")


def fixed_alpha_all(results: Path, base: Path, seeds, steps):
    path = results / "fixed_alpha.json"
    done = json.loads(path.read_text()) if path.exists() else []
    have = {(d["alpha"], d["seed"]) for d in done}
    cfg = load_config(base, algo="static", seed=0).train
    states = probe_states(cfg.env.layout, cfg.probe_states)
    for alpha in FIXED_ALPHAS:
        for seed in seeds:
            if (alpha, seed) in have:
                continue
            log(f"fixed-alpha adversary alpha={alpha} seed {seed}")
            adv = train_fixed_alpha_adversary(alpha, seed, steps, TrainConfig(env=cfg.env, sac=cfg.sac))
            done.append({"alpha": alpha, "seed": seed, "steps": steps,
                         "entropy": adversary_entropy_probe(adv, states)})
            path.write_text(json.dumps(done, indent=1))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--results", default="results")
    ap.add_argument("--config", default=str(HERE / "desk.yaml"))
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--steps", type=int, default=None, help="override total_steps of the config")
    ap.add_argument("--layouts", type=int, default=20)
    ap.add_argument("--episodes", type=int, default=100, help="episodes per layout")
    ap.add_argument("--fixed-alpha-steps", type=int, default=20_000)
    args = ap.parse_args(argv)
    results, base = Path(args.results), Path(args.config)
    seeds = range(args.seeds)
    train_all(results, base, seeds, args.steps)
    bench_all(results, seeds, args.layouts, args.episodes)
    fixed_alpha_all(results, base, seeds, args.fixed_alpha_steps)
    log("all done")


if __name__ == "__main__":
    main()
