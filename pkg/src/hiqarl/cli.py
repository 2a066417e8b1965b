"""Command-line entry points: ``hiqarl train | bench | plotdata``.

Exit codes: 0 success, 2 bad config or arguments, 3 IO failure or an output
that already exists (pass ``--force``), 4 unusable checkpoint.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .bench import METRIC_FIELDS, AlgorithmKind, evaluate, randomize_maze, train
from .config import ConfigError, config_to_dict, load_config
from .env import ADV_OBS_DIM, NAV_OBS_DIM, LayoutError

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_CHECKPOINT = 0, 2, 3, 4
SERIES = {"success": "success", "entropy": "adv_entropy", "alpha": "alpha"}
EPISODE_COLUMNS = ("layout_seed", "episode", "success", "steps", "obstacle_collisions", "wall_collisions",
                   "return_p", "return_a")


class _Fail(Exception):
    def __init__(self, code, msg):
        super().__init__(msg)
        self.code = code


def _err(msg):
    print(f"hiqarl: {msg}", file=sys.stderr)


def _claim(paths, force):
    """Refuse to clobber existing outputs unless forced."""
    taken = [p for p in paths if p.exists()]
    if taken and not force:
        raise _Fail(EXIT_IO, f"{taken[0]} exists (use --force to overwrite)")
    for p in taken:
        p.unlink()


def cmd_train(args) -> int:
    try:
        cfg = load_config(args.config, algo=args.algo, seed=args.seed)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    out = Path(args.out if args.out is not None else (cfg.out_dir or "."))
    metrics = out / "metrics.jsonl"
    cur_path = out / "curriculum.jsonl"
    ckpts = [out / "protagonist.ckpt"]
    if cfg.algo in (AlgorithmKind.HIQARL, AlgorithmKind.RARL):
        ckpts.append(out / "adversary.ckpt")
    try:
        out.mkdir(parents=True, exist_ok=True)
        _claim([metrics, cur_path, *ckpts], args.force)
        header = {"header": {"format": "hiqarl-metrics", "version": 1, "fields": list(METRIC_FIELDS),
                             "config": config_to_dict(cfg)}}
        with open(metrics, "w", encoding="utf-8") as mf, open(cur_path, "w", encoding="utf-8") as cf:
            mf.write(json.dumps(header) + "\n")
            mf.flush()

            def on_record(rec):
                mf.write(json.dumps(rec) + "\n")
                mf.flush()

            def on_curriculum(entry):
                cf.write(json.dumps(entry) + "\n")
                cf.flush()

            res = train(cfg.algo, cfg.seed, cfg.train, on_record, on_curriculum)
        algo = cfg.algo.value
        checkpoint.save_agent(ckpts[0], res.protagonist, algo, cfg.seed, res.steps, "protagonist")
        if res.adversary is not None:
            checkpoint.save_agent(ckpts[1], res.adversary, algo, cfg.seed, res.steps, "adversary")
    except _Fail:
        raise
    except OSError as exc:
        _err(f"IO failure: {exc}")
        return EXIT_IO
    return EXIT_OK


def _load(path, role, obs_dim):
    try:
        header, agent = checkpoint.load_agent(path)
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot read {path}: {exc.strerror}") from None
    except checkpoint.CheckpointError as exc:
        raise _Fail(EXIT_CHECKPOINT, f"{path}: {exc}") from None
    if agent.obs_dim != obs_dim:
        raise _Fail(EXIT_CHECKPOINT, f"{path}: {role} checkpoint has obs_dim {agent.obs_dim}, expected {obs_dim}")
    return header, agent


def cmd_bench(args) -> int:
    if args.episodes < 1 or args.layout_seeds < 1:
        _err("--episodes and --layout-seeds must be >= 1")
        return EXIT_CONFIG
    _, prot = _load(args.protagonist, "protagonist", NAV_OBS_DIM)
    adv = _load(args.adversary, "adversary", ADV_OBS_DIM)[1] if args.adversary else None
    out = Path(args.out)
    report_path, csv_path = out / "robustness_report.json", out / "episodes.csv"
    try:
        out.mkdir(parents=True, exist_ok=True)
        _claim([report_path, csv_path], args.force)
    except OSError as exc:
        _err(f"IO failure: {exc}")
        return EXIT_IO
    ids = list(range(args.layout_offset, args.layout_offset + args.layout_seeds))
    try:
        layouts = [randomize_maze(s) for s in ids]
    except LayoutError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    report, rows = evaluate(prot, adv, layouts, args.episodes, layout_ids=ids)
    try:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(EPISODE_COLUMNS)
            for lid, ep, r in rows:
                w.writerow([lid, ep, int(r.success), r.steps, r.obstacle_collisions, r.wall_collisions,
                            repr(r.return_protagonist), repr(r.return_adversary)])
        report_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        _err(f"IO failure: {exc}")
        return EXIT_IO
    print(f"success {report.mean:.4f} +/- {report.std:.4f} over {report.seeds} layouts")
    return EXIT_OK


def read_metrics(path) -> tuple[dict | None, list]:
    header, records = None, []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{i}: malformed JSON ({exc.msg})") from None
            if "header" in obj:
                header = obj["header"]
            else:
                records.append(obj)
    return header, records


def rolling_mean(values, window: int) -> np.ndarray:
    """Trailing mean; the first ``window - 1`` points average what is available."""
    v = np.asarray(values, dtype=np.float64)
    if window < 1:
        raise ValueError("window must be >= 1")
    if v.size == 0:
        return v
    # direct window means rather than cumsum differences: window 1 must copy exactly
    padded = np.concatenate([np.full(window - 1, np.nan), v])
    return np.nanmean(np.lib.stride_tricks.sliding_window_view(padded, window), axis=1)


def cmd_plotdata(args) -> int:
    if args.series not in SERIES:
        _err(f"unknown series {args.series!r}; choose from {sorted(SERIES)}")
        return EXIT_CONFIG
    if args.window < 1:
        _err("--window must be >= 1")
        return EXIT_CONFIG
    try:
        _, records = read_metrics(args.metrics)
    except OSError as exc:
        _err(f"cannot read {args.metrics}: {exc.strerror}")
        return EXIT_IO
    except ValueError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    key = SERIES[args.series]
    pts = [(r["episode"], float(r[key])) for r in records if r.get(key) is not None]
    out = Path(args.out)
    _claim([out], args.force)
    smooth = rolling_mean([v for _, v in pts], args.window)
    try:
        with open(out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(("episode", args.series))
            for (ep, _), v in zip(pts, smooth):
                w.writerow((ep, repr(float(v))))
    except OSError as exc:
        _err(f"IO failure: {exc}")
        return EXIT_IO
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _err(message)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hiqarl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train one agent pair and write metrics + checkpoints")
    t.add_argument("--config", required=True)
    t.add_argument("--algo", choices=[k.value for k in AlgorithmKind])
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--force", action="store_true")
    t.set_defaults(fn=cmd_train)

    b = sub.add_parser("bench", help="evaluate a protagonist on randomized mazes")
    b.add_argument("--protagonist", required=True)
    b.add_argument("--adversary")
    b.add_argument("--episodes", type=int, default=100)
    b.add_argument("--layout-seeds", type=int, default=20)
    b.add_argument("--layout-offset", type=int, default=0)
    b.add_argument("--out", required=True)
    b.add_argument("--force", action="store_true")
    b.set_defaults(fn=cmd_bench)

    d = sub.add_parser("plotdata", help="rolling-mean CSV of one metrics series")
    d.add_argument("--metrics", required=True)
    d.add_argument("--series", required=True)
    d.add_argument("--window", type=int, default=1)
    d.add_argument("--out", required=True)
    d.add_argument("--force", action="store_true")
    d.set_defaults(fn=cmd_plotdata)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except _Fail as exc:
        _err(str(exc))
        return exc.code


if __name__ == "__main__":
    raise SystemExit(main())
