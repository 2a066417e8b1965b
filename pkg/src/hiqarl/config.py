"""Run configuration: strict YAML with line-anchored errors.

Top-level keys are ``algo``, ``seed``, ``total_steps``, ``env``, ``sac``,
``curriculum`` and optionally ``out_dir``. Any key outside the schema is an
error reported with its line number.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

import yaml

from .agents import SACConfig
from .bench import AlgorithmKind, EnvConfig, TrainConfig
from .curriculum import CurriculumConfig, GammaParams
from .env import ArenaLayout, DynamicsConfig, LayoutError

LAYOUT_KEYS = {f.name for f in fields(ArenaLayout)}
DYNAMICS_KEYS = {f.name for f in fields(DynamicsConfig)}
SAC_KEYS = {f.name for f in fields(SACConfig)}
CURRICULUM_KEYS = {"target", "initial", "xi", "epsilon", "perf_window", "update_every"}
TOP_KEYS = {"algo", "seed", "total_steps", "env", "sac", "curriculum", "out_dir", "probe_states"}


class ConfigError(ValueError):
    def __init__(self, msg, line=None, source="<config>"):
        self.line = line
        self.source = source
        loc = f"{source}:{line}" if line is not None else source
        super().__init__(f"{loc}: {msg}")


@dataclass(frozen=True)
class RunConfig:
    algo: AlgorithmKind
    seed: int
    train: TrainConfig
    out_dir: str | None = None

    @property
    def total_steps(self):
        return self.train.total_steps


def _int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise TypeError(f"expected an integer, got {v!r}")
    return v


def _float(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeError(f"expected a number, got {v!r}")
    return float(v)


def _to_python(node, source):
    """Compose tree -> (value, line) pairs, keeping line numbers for every mapping key."""
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = k.value
            if key in out:
                raise ConfigError(f"duplicate key {key!r}", k.start_mark.line + 1, source)
            out[key] = (_to_python(v, source), k.start_mark.line + 1)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_plain(_to_python(v, source)) for v in node.value]
    return yaml.safe_load(yaml.serialize(node))


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(val) for k, (val, _) in v.items()}
    return v


def _section(tree, name, allowed, source, line):
    if not isinstance(tree, dict):
        raise ConfigError(f"{name} must be a mapping", line, source)
    for key, (_, kline) in tree.items():
        if key not in allowed:
            raise ConfigError(f"unknown key {name + '.' if name else ''}{key}", kline, source)
    return tree


def _gamma(tree, name, source, line):
    t = _section(tree, name, {"k", "theta"}, source, line)
    try:
        return GammaParams(_float(t["k"][0]), _float(t["theta"][0]))
    except KeyError as exc:
        raise ConfigError(f"{name} needs key {exc.args[0]}", line, source) from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), line, source) from None


def parse_config(text: str, source: str = "<config>", algo=None, seed=None) -> RunConfig:
    """Parse config text. ``algo``/``seed`` given here override the file and make those keys optional."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None, source) from None
    if node is None:
        raise ConfigError("empty config", 1, source)
    tree = _section(_to_python(node, source), "", TOP_KEYS, source, 1)

    def get(tree, key, default, cast):
        if key not in tree:
            return default
        val, kline = tree[key]
        try:
            out = cast(val)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {exc}", kline, source) from None
        return out

    for required, given in (("algo", algo), ("seed", seed)):
        if required not in tree and given is None:
            raise ConfigError(f"missing required key {required}", 1, source)
    algo_val, algo_line = (algo, None) if algo is not None else tree["algo"]
    try:
        algo = AlgorithmKind(algo_val)
    except ValueError:
        raise ConfigError(f"algo must be one of {[k.value for k in AlgorithmKind]}", algo_line, source) from None
    seed = int(seed) if seed is not None else get(tree, "seed", 0, _int)
    total_steps = get(tree, "total_steps", 200_000, _int)
    if total_steps < 0:
        raise ConfigError("total_steps must be >= 0", tree["total_steps"][1], source)

    env_tree, env_line = tree.get("env", ({}, 1))
    env_tree = _section(env_tree, "env", LAYOUT_KEYS | DYNAMICS_KEYS, source, env_line)
    try:
        layout_kw = {k: _plain(v) for k, (v, _) in env_tree.items() if k in LAYOUT_KEYS}
        dyn_kw = {k: v for k, (v, _) in env_tree.items() if k in DYNAMICS_KEYS}
        layout = ArenaLayout(**layout_kw)
        dyn = DynamicsConfig(**dyn_kw)
    except (LayoutError, TypeError, ValueError) as exc:
        raise ConfigError(f"env: {exc}", env_line, source) from None

    sac_tree, sac_line = tree.get("sac", ({}, 1))
    sac_tree = _section(sac_tree, "sac", SAC_KEYS, source, sac_line)
    try:
        sac = SACConfig(**{k: (tuple(v) if isinstance(v, list) else v) for k, (v, _) in sac_tree.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), sac_line, source) from None

    cur_tree, cur_line = tree.get("curriculum", ({}, 1))
    cur_tree = _section(cur_tree, "curriculum", CURRICULUM_KEYS, source, cur_line)
    kw = {}
    for g in ("target", "initial"):
        if g in cur_tree:
            kw[g] = _gamma(cur_tree[g][0], f"curriculum.{g}", source, cur_tree[g][1])
    for key, cast in (("xi", _float), ("epsilon", _float), ("perf_window", _int), ("update_every", _int)):
        if key in cur_tree:
            kw[key] = get(cur_tree, key, None, cast)
    try:
        cur = CurriculumConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc), cur_line, source) from None

    probes = get(tree, "probe_states", 512, _int)
    try:
        train = TrainConfig(total_steps=total_steps, env=EnvConfig(layout, dyn), sac=sac, curriculum=cur,
                            probe_states=probes)
    except ValueError as exc:
        raise ConfigError(str(exc), 1, source) from None
    out_dir = get(tree, "out_dir", None, str)
    return RunConfig(algo=algo, seed=seed, train=train, out_dir=out_dir)


def load_config(path, algo=None, seed=None) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(p)) from None
    return parse_config(text, str(p), algo=algo, seed=seed)


def config_to_dict(cfg: RunConfig) -> dict:
    """Plain-dict view of a parsed config, suitable for JSON."""
    t = cfg.train
    env = t.env.layout.to_dict()
    env.update({f.name: getattr(t.env.dynamics, f.name) for f in fields(DynamicsConfig)})
    sac = {f.name: getattr(t.sac, f.name) for f in fields(SACConfig)}
    sac["hidden"] = list(sac["hidden"])
    c = t.curriculum
    cur = {"target": {"k": c.target.k, "theta": c.target.theta},
           "initial": {"k": c.initial.k, "theta": c.initial.theta},
           "xi": c.xi, "epsilon": c.epsilon, "perf_window": c.perf_window, "update_every": c.update_every}
    out = {"algo": cfg.algo.value, "seed": cfg.seed, "total_steps": t.total_steps, "env": env, "sac": sac,
           "curriculum": cur, "probe_states": t.probe_states}
    if cfg.out_dir is not None:
        out["out_dir"] = cfg.out_dir
    assert all(math.isfinite(v) for v in (c.xi, c.epsilon))
    return out
