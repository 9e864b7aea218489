"""Seeded experiment runs: metrics CSVs, evaluation, summaries, rollout export.

Metrics CSV columns (one header row, then one row per eval interval, strictly
step-ordered; floats are written with ``repr`` so reruns compare byte-for-byte):

    step          environment steps taken so far
    train_return  mean return of training episodes finished in the interval (nan if none)
    eval_return   mean greedy return over ``run.eval_episodes`` fresh episodes
    loss_ae, loss_fw, loss_term, loss_value
                  losses from the most recent update cycle (nan before the first)
    trace_sigma_s trace of the shared latent-row posterior covariance
    model_id      number of update cycles completed (id of the sampled model in use)

Evaluation episodes do not count toward the step budget.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import os
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .agent import Agent, Runner
from .config import RunConfig, dump_config
from .envs import Env
from .latent_model import forward_step

CSV_COLUMNS = (
    "step",
    "train_return",
    "eval_return",
    "loss_ae",
    "loss_fw",
    "loss_term",
    "loss_value",
    "trace_sigma_s",
    "model_id",
)
SUMMARY_COLUMNS = ("seed", "final_eval_return")
OUT_DIR_ENV = "PSDRL_OUT_DIR"


def metrics_path(out_dir, seed: int) -> Path:
    return Path(out_dir) / f"metrics_seed{seed}.csv"


def checkpoint_path(out_dir, seed: int) -> Path:
    return Path(out_dir) / f"checkpoint_seed{seed}.psdrl"


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def format_row(row: dict) -> str:
    return ",".join(_fmt(row[c]) for c in CSV_COLUMNS)


def evaluate(agent: Agent, env: Env, episodes: int, policy: Callable | None = None) -> float:
    """Mean undiscounted return of ``episodes`` greedy episodes on a copy of ``env``.

    ``policy`` optionally replaces the agent's greedy policy; it maps an
    observation to an action. The buffer, parameters and training streams
    are untouched; any randomness comes from ``agent.eval_rng``.
    """
    env = copy.deepcopy(env)
    total = 0.0
    for _ in range(episodes):
        obs = env.reset()
        h = np.zeros(agent.model_cfg.gru_hidden)
        done = 0
        while not done:
            if policy is None:
                a, h = agent.policy(obs, h, eps=0.0)
            else:
                a = int(policy(obs))
            r, obs, done = env.step(a)
            total += r
    return total / episodes


@dataclass
class SeedRun:
    """Everything needed to continue one seed: agent, runner, and the metrics so far."""

    cfg: RunConfig
    seed: int
    agent: Agent
    runner: Runner
    pending_returns: list = field(default_factory=list)
    rows: list = field(default_factory=list)

    @classmethod
    def start(cls, cfg: RunConfig, seed: int) -> "SeedRun":
        env = cfg.make_env()
        agent = Agent(cfg.model_config(env), cfg.agent_config(), seed)
        return cls(cfg, seed, agent, Runner(agent, env))

    @property
    def t(self) -> int:
        return self.runner.t

    @property
    def done(self) -> bool:
        return self.runner.t >= self.cfg.run.steps

    def advance(self) -> dict | None:
        """Run to the next eval boundary (or the end) and return the new metrics row."""
        interval = self.cfg.eval_interval
        target = min((self.runner.t // interval + 1) * interval, self.cfg.run.steps)
        while self.runner.t < target:
            rec = self.runner.step()
            if rec.episode_return is not None:
                self.pending_returns.append(rec.episode_return)
        agent = self.agent
        row = {
            "step": self.runner.t,
            "train_return": float(np.mean(self.pending_returns)) if self.pending_returns else float("nan"),
            "eval_return": evaluate(agent, self.runner.env, self.cfg.run.eval_episodes),
            "loss_ae": agent.losses["ae"],
            "loss_fw": agent.losses["fw"],
            "loss_term": agent.losses["term"],
            "loss_value": agent.losses["value"],
            "trace_sigma_s": agent.posterior.trace_latent,
            "model_id": agent.model_id,
        }
        self.pending_returns = []
        self.rows.append(format_row(row))
        return row

    def csv_text(self) -> str:
        return ",".join(CSV_COLUMNS) + "\n" + "".join(r + "\n" for r in self.rows)


def run_seed(
    cfg: RunConfig,
    seed: int,
    out_dir,
    resume=None,
    stop_at: int | None = None,
    progress: Callable[[int, dict], None] | None = None,
) -> SeedRun:
    """Run (or resume) one seed, flushing the metrics CSV after every row.

    Checkpoints are written every ``run.checkpoint_every`` steps (rounded to
    eval boundaries), when ``stop_at`` is reached, and at the end.
    """
    from .checkpoint import load_checkpoint, save_checkpoint

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sr = load_checkpoint(resume) if resume is not None else SeedRun.start(cfg, seed)
    path = metrics_path(out_dir, sr.seed)
    ckpt = checkpoint_path(out_dir, sr.seed)
    every = sr.cfg.run.checkpoint_every
    with open(path, "w", newline="") as fh:
        fh.write(sr.csv_text())
        fh.flush()
        try:
            while not sr.done:
                before = sr.t
                row = sr.advance()
                fh.write(sr.rows[-1] + "\n")
                fh.flush()
                if progress is not None:
                    progress(sr.seed, row)
                if stop_at is not None and sr.t >= stop_at:
                    save_checkpoint(sr, ckpt)
                    return sr
                if every and sr.t // every > before // every:
                    save_checkpoint(sr, ckpt)
        finally:
            fh.flush()
    save_checkpoint(sr, ckpt)
    return sr


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        rec = {c: float(r[c]) for c in CSV_COLUMNS}
        rec["step"] = int(r["step"])
        rec["model_id"] = int(r["model_id"])
        out.append(rec)
    return out


def summarize(final_returns: dict[int, float]) -> str:
    """Summary CSV text: per-seed final eval return then median and mean rows."""
    buf = io.StringIO()
    buf.write(",".join(SUMMARY_COLUMNS) + "\n")
    values = [final_returns[s] for s in sorted(final_returns)]
    for s in sorted(final_returns):
        buf.write(f"{s},{_fmt(final_returns[s])}\n")
    buf.write(f"median,{_fmt(statistics.median(values))}\n")
    buf.write(f"mean,{_fmt(statistics.fmean(values))}\n")
    return buf.getvalue()


def resolve_out_dir(cfg: RunConfig, override=None) -> Path:
    env_dir = os.environ.get(OUT_DIR_ENV)
    if override is not None:
        return Path(override)
    if env_dir:
        return Path(env_dir)
    return Path(cfg.run.out_dir)


def run_experiment(cfg: RunConfig, out_dir=None, progress=None) -> int:
    """Run every seed in ``cfg.run.seeds``; returns a process exit status."""
    out = resolve_out_dir(cfg, out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "mode": cfg.run.mode,
        "seeds": list(cfg.run.seeds),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "config": dump_config(cfg),
        "seed_seconds": {},
    }
    finals = {}
    for seed in cfg.run.seeds:
        t0 = time.perf_counter()
        sr = run_seed(cfg, seed, out, progress=progress)
        manifest["seed_seconds"][str(seed)] = time.perf_counter() - t0
        finals[seed] = read_metrics(metrics_path(out, seed))[-1]["eval_return"] if sr.rows else float("nan")
    (out / "summary.csv").write_text(summarize(finals))
    manifest["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return 0


# ------------------------------------------------------------ rollout export


def write_pgm(path, image: np.ndarray) -> None:
    """Binary (P5) 8-bit graymap; values are clipped to [0, 1] before quantization."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if img.ndim == 1:
        img = img[None]
    data = np.rint(img * 255.0).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary graymap")
    width, height = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(height, width).astype(np.float64) / 255.0


def dump_rollout(agent: Agent, env: Env, horizon: int, out_dir, actions=None) -> list[float]:
    """Export true vs decoded open-loop predictions of the sampled model from ``env``'s current state.

    Writes ``step{t:03d}_true.pgm``, ``_pred.pgm`` and ``_err.pgm`` per step
    plus ``rollout.csv`` with per-step reconstruction MSE. Actions come from
    ``actions`` if given, else from the agent's greedy policy on the true
    observations. Returns the per-step MSEs.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env = copy.deepcopy(env)
    if getattr(env, "_done", True):
        env.reset()
    shape = env.spec.image_shape or (1, env.spec.obs_dim)
    obs = env.observe(env.state)
    z_pred = agent.ae.encode(obs)
    h_pol = np.zeros(agent.model_cfg.gru_hidden)
    h_model = np.zeros(agent.model_cfg.gru_hidden)
    mses = []
    for t in range(horizon):
        if actions is not None:
            a = int(actions[t])
        else:
            a, h_pol = agent.policy(obs, h_pol, eps=0.0)
        z_pred, _, h_model = forward_step(agent.sampled, z_pred, a, h_model)
        _, obs, done = env.step(a)
        pred = agent.ae.decode(z_pred)
        err = np.abs(obs - pred)
        mses.append(float(np.mean((obs - pred) ** 2)))
        for tag, img in (("true", obs), ("pred", pred), ("err", err)):
            write_pgm(out / f"step{t:03d}_{tag}.pgm", img.reshape(shape))
        if done:
            break
    lines = ["step,mse"] + [f"{t},{m!r}" for t, m in enumerate(mses)]
    (out / "rollout.csv").write_text("\n".join(lines) + "\n")
    return mses
