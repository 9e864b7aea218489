"""Bit-exact checkpoints of a seeded run in the float64 array container.

Everything mutable is stored: parameters with Adam state, the value target
copy, posterior factors, the sampled output layer, the replay buffer, every
random stream, the runner and environment state, and the metrics written so
far. Integers that may exceed 2**53 (stream keys and counters) are split into
16-bit chunks so the float64 container holds them exactly.
"""

from __future__ import annotations

import numpy as np

from .agent import Episode, ReplayBuffer
from .config import dump_config, parse_config
from .experiment import SeedRun
from .latent_model import SampledModel
from .nnet import load_arrays, save_arrays
from .posterior import PosteriorState

STREAMS = ("init", "sample", "posterior", "act", "eval")
_STORES = ("ae", "fm", "tm", "vn")


def _int_to_chunks(v: int, n_chunks: int = 8) -> list[float]:
    if v < 0:
        raise ValueError("only non-negative integers are chunked")
    out = [float((v >> (16 * i)) & 0xFFFF) for i in range(n_chunks)]
    if v >> (16 * n_chunks):
        raise OverflowError("integer too large for checkpoint chunking")
    return out


def _chunks_to_int(chunks) -> int:
    return sum(int(c) << (16 * i) for i, c in enumerate(chunks))


def _text_to_array(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float64)


def _array_to_text(arr: np.ndarray) -> str:
    return arr.astype(np.uint8).tobytes().decode("utf-8")


def _buffer_arrays(buf: ReplayBuffer) -> dict[str, np.ndarray]:
    eps = buf.episodes
    out = {
        "buffer/capacity": np.array([float(buf.capacity)]),
        "buffer/lengths": np.array([float(ep.length) for ep in eps]),
        "buffer/closed": np.array([float(ep.closed) for ep in eps]),
    }
    if eps:
        out["buffer/states"] = np.concatenate([ep.states_array() for ep in eps])
        out["buffer/actions"] = np.concatenate([np.asarray(ep.actions, dtype=np.float64) for ep in eps])
        out["buffer/rewards"] = np.concatenate([np.asarray(ep.rewards, dtype=np.float64) for ep in eps])
        out["buffer/dones"] = np.concatenate([np.asarray(ep.dones, dtype=np.float64) for ep in eps])
    return out


def _restore_buffer(arrays) -> ReplayBuffer:
    buf = ReplayBuffer(int(arrays["buffer/capacity"][0]))
    lengths = arrays["buffer/lengths"].astype(np.int64)
    closed = arrays["buffer/closed"]
    s_pos = t_pos = 0
    for n, c in zip(lengths, closed):
        states = arrays["buffer/states"][s_pos : s_pos + n + 1]
        ep = Episode(states[0])
        ep.states = [row.copy() for row in states]
        ep.actions = [int(a) for a in arrays["buffer/actions"][t_pos : t_pos + n]]
        ep.rewards = [float(r) for r in arrays["buffer/rewards"][t_pos : t_pos + n]]
        ep.dones = [int(d) for d in arrays["buffer/dones"][t_pos : t_pos + n]]
        if c:
            ep.close()
        buf.episodes.append(ep)
        buf.total += int(n)
        s_pos += n + 1
        t_pos += n
    return buf


def checkpoint_arrays(sr: SeedRun) -> dict[str, np.ndarray]:
    agent, runner = sr.agent, sr.runner
    out: dict[str, np.ndarray] = {
        "meta/config": _text_to_array(dump_config(sr.cfg)),
        "meta/seed": np.array(_int_to_chunks(sr.seed & (2**64 - 1))),
    }
    for name in _STORES:
        out.update(getattr(agent, name).store.to_arrays(name))
    for k, v in agent.vn.target.items():
        out[f"vn_target/{k}"] = v
    out["vn/updates"] = np.array([float(agent.vn.updates)])
    ps = agent.posterior
    out["posterior/chol_latent"] = ps.chol_latent
    out["posterior/chol_reward"] = ps.chol_reward
    out["posterior/mean"] = ps.mean
    out["posterior/n"] = np.array([float(ps.n)])
    shares_mean = agent.sampled.W is agent.fm.W
    out["sampled/shares_mean"] = np.array([float(shares_mean)])
    if not shares_mean:
        out["sampled/W"] = agent.sampled.W
    out["sampled/model_id"] = np.array([float(agent.sampled.model_id)])
    out["agent/model_id"] = np.array([float(agent.model_id)])
    out["agent/losses"] = np.array([agent.losses[k] for k in ("ae", "fw", "term", "value")])
    for name, stream in agent.streams.items():
        out[f"rng/{name}"] = np.array([c for v in stream.state() for c in _int_to_chunks(v)])
    out.update(_buffer_arrays(agent.buffer))
    out["runner/t"] = np.array([float(runner.t)])
    out["runner/obs"] = np.asarray(runner.obs, dtype=np.float64)
    out["runner/h"] = runner.h
    out["runner/episode_return"] = np.array([runner.episode_return])
    out["runner/episodes"] = np.array([float(runner.episodes)])
    out["env/state"] = runner.env.get_state()
    out["metrics/pending_returns"] = np.array(sr.pending_returns, dtype=np.float64)
    out["metrics/rows"] = _text_to_array("".join(r + "\n" for r in sr.rows))
    return out


def save_checkpoint(sr: SeedRun, path) -> None:
    save_arrays(path, checkpoint_arrays(sr))


def restore(arrays) -> SeedRun:
    cfg = parse_config(_array_to_text(arrays["meta/config"]), "<checkpoint>")
    seed = _chunks_to_int(arrays["meta/seed"])
    sr = SeedRun.start(cfg, seed)
    agent, runner = sr.agent, sr.runner
    for name in _STORES:
        getattr(agent, name).store.load_arrays(arrays, name)
    for k in agent.vn.target:
        agent.vn.target[k][...] = arrays[f"vn_target/{k}"]
    agent.vn.updates = int(arrays["vn/updates"][0])
    agent.posterior = PosteriorState(
        chol_latent=arrays["posterior/chol_latent"].copy(),
        chol_reward=arrays["posterior/chol_reward"].copy(),
        mean=arrays["posterior/mean"].copy(),
        n=int(arrays["posterior/n"][0]),
    )
    model_id = int(arrays["sampled/model_id"][0])
    W = agent.fm.W if arrays["sampled/shares_mean"][0] else arrays["sampled/W"].copy()
    agent.sampled = SampledModel(W=W, model=agent.fm, model_id=model_id)
    agent.model_id = int(arrays["agent/model_id"][0])
    agent.losses = dict(zip(("ae", "fw", "term", "value"), (float(v) for v in arrays["agent/losses"])))
    for name in STREAMS:
        chunks = arrays[f"rng/{name}"].reshape(4, -1)
        state = [_chunks_to_int(c) for c in chunks]
        stream = getattr(agent, f"{name}_rng")
        stream.__init__(*state)
    agent.buffer = _restore_buffer(arrays)
    runner.t = int(arrays["runner/t"][0])
    runner.obs = arrays["runner/obs"].copy()
    runner.h = arrays["runner/h"].copy()
    runner.episode_return = float(arrays["runner/episode_return"][0])
    runner.episodes = int(arrays["runner/episodes"][0])
    runner.env.set_state(arrays["env/state"])
    sr.pending_returns = [float(v) for v in arrays["metrics/pending_returns"]]
    rows = _array_to_text(arrays["metrics/rows"])
    sr.rows = [r for r in rows.split("\n") if r]
    return sr


def load_checkpoint(path) -> SeedRun:
    return restore(load_arrays(path))
