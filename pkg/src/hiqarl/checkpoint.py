"""Binary checkpoint format.

Layout::

    b"HQCK"                       4-byte magic
    uint32 little-endian          header length in bytes
    header                        UTF-8 JSON: format_version, algo, seed, step,
                                  meta, manifest = [{name, offset, length}, ...]
    payload                       little-endian float64, offsets/lengths in elements

Manifest entries must tile the payload exactly, in order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"HQCK"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(segments: dict, algo: str, seed: int, step: int, meta: dict | None = None) -> bytes:
    manifest, offset, chunks = [], 0, []
    for name, arr in segments.items():
        a = np.ascontiguousarray(np.asarray(arr, dtype="<f8").ravel())
        manifest.append({"name": name, "offset": offset, "length": int(a.size)})
        offset += int(a.size)
        chunks.append(a.tobytes())
    header = {"format_version": FORMAT_VERSION, "algo": algo, "seed": int(seed), "step": int(step),
              "meta": meta or {}, "manifest": manifest}
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<I", len(hb)) + hb + b"".join(chunks)


def decode(blob: bytes) -> tuple[dict, dict]:
    """Returns ``(header, segments)``; raises :class:`CheckpointError` on any inconsistency."""
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", blob[4:8])
    if 8 + hlen > len(blob):
        raise CheckpointError("truncated header")
    try:
        header = json.loads(blob[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable header: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format_version {header.get('format_version')!r}")
    payload = blob[8 + hlen:]
    if len(payload) % 8:
        raise CheckpointError("payload is not a whole number of float64 values")
    data = np.frombuffer(payload, dtype="<f8")
    expect = 0
    segments = {}
    for entry in header.get("manifest", []):
        off, length = int(entry["offset"]), int(entry["length"])
        if off != expect or length < 0:
            raise CheckpointError(f"manifest entry {entry['name']!r} does not tile the payload")
        segments[entry["name"]] = data[off:off + length].astype(np.float64)
        expect = off + length
    if expect != data.size:
        raise CheckpointError(f"manifest covers {expect} values, payload holds {data.size}")
    return header, segments


def save(path, segments: dict, algo: str, seed: int, step: int, meta: dict | None = None):
    Path(path).write_bytes(encode(segments, algo, seed, step, meta))


def load(path) -> tuple[dict, dict]:
    return decode(Path(path).read_bytes())


def save_agent(path, agent, algo: str, seed: int, step: int, role: str):
    from dataclasses import asdict

    meta = {"role": role, "obs_dim": agent.obs_dim, "act_dim": agent.act_dim, "sac": asdict(agent.cfg)}
    save(path, agent.state_dict(), algo, seed, step, meta)


def load_agent(path):
    """Rebuild a :class:`~hiqarl.agents.SACAgent` from a checkpoint file."""
    from .agents import SACAgent, SACConfig
    from .nncore import DimensionError

    header, seg = load(path)
    meta = header.get("meta", {})
    try:
        cfg = SACConfig(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in meta["sac"].items()})
        agent = SACAgent(int(meta["obs_dim"]), int(meta["act_dim"]), cfg, np.random.default_rng(0))
        agent.load_state_dict(seg)
    except (KeyError, TypeError, ValueError, DimensionError) as exc:
        raise CheckpointError(f"checkpoint does not describe an agent: {exc}") from None
    for name in ("actor", "critic0", "critic1", "target0", "target1"):
        spec = agent.actor_spec if name == "actor" else agent.critic_spec
        if seg[name].size != spec.n_params:
            raise CheckpointError(f"segment {name!r} has {seg[name].size} values, expected {spec.n_params}")
    return header, agent
