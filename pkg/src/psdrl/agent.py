"""Agent loop: replay buffer, periodic update cycle, and environment interaction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .latent_model import (
    Autoencoder,
    Batch,
    ForwardModel,
    ModelConfig,
    SampledModel,
    TerminationModel,
    train_autoencoder,
    train_forward,
    train_termination,
)
from .numkernel import RandomStream
from .planner import ValueNet, greedy_action, train_value
from .posterior import PosteriorState, build_design, posterior_update, sample_weights

MODES = ("psdrl", "eps-exploit", "eps-explore", "fresh-value")


@dataclass
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    done: int


class Episode:
    """One episode stored as ``length + 1`` states plus per-step action, reward, flag."""

    __slots__ = ("states", "actions", "rewards", "dones", "closed", "_states_arr")

    def __init__(self, first_state: np.ndarray):
        self.states = [np.asarray(first_state, dtype=np.float64)]
        self.actions: list[int] = []
        self.rewards: list[float] = []
        self.dones: list[int] = []
        self.closed = False
        self._states_arr = None

    @property
    def length(self) -> int:
        return len(self.actions)

    def append(self, tr: Transition) -> None:
        self.states.append(np.asarray(tr.s_next, dtype=np.float64))
        self.actions.append(int(tr.a))
        self.rewards.append(float(tr.r))
        self.dones.append(int(tr.done))
        self._states_arr = None

    def close(self) -> None:
        self.closed = True
        self.states_array()
        self.actions = np.array(self.actions, dtype=np.int64)
        self.rewards = np.array(self.rewards)
        self.dones = np.array(self.dones, dtype=np.float64)

    def states_array(self) -> np.ndarray:
        if self._states_arr is None:
            self._states_arr = np.stack(self.states)
        return self._states_arr


class ReplayBuffer:
    """FIFO over transitions with whole-episode eviction.

    The episode currently being collected is stored too (``closed`` False)
    and is eligible for sampling.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.episodes: list[Episode] = []
        self.total = 0

    def __len__(self) -> int:
        return self.total

    @property
    def n_complete(self) -> int:
        return sum(ep.closed for ep in self.episodes)

    def push(self, tr: Transition) -> None:
        if not self.episodes or self.episodes[-1].closed:
            self.episodes.append(Episode(tr.s))
        ep = self.episodes[-1]
        ep.append(tr)
        self.total += 1
        if tr.done:
            ep.close()
        while self.total > self.capacity:
            if len(self.episodes) == 1:
                raise ValueError("a single episode exceeds the buffer capacity")
            self.total -= self.episodes.pop(0).length

    def sample(self, batch_size: int, seq_len: int, rng: RandomStream) -> Batch:
        """``batch_size`` episodes uniformly with replacement, each cut at a uniform start.

        The start is drawn from ``0 .. max(len - seq_len, 0)``; sequences shorter
        than ``seq_len`` are zero-padded and masked.
        """
        if self.total == 0:
            raise ValueError("cannot sample from an empty buffer")
        eligible = [ep for ep in self.episodes if ep.length > 0]
        ep_ids = rng.integers(len(eligible), size=batch_size)
        u = rng.uniform(batch_size)
        obs_dim = eligible[0].states[0].shape[0]
        obs = np.zeros((batch_size, seq_len, obs_dim))
        next_obs = np.zeros((batch_size, seq_len, obs_dim))
        actions = np.zeros((batch_size, seq_len), dtype=np.int64)
        rewards = np.zeros((batch_size, seq_len))
        dones = np.zeros((batch_size, seq_len))
        mask = np.zeros((batch_size, seq_len), dtype=bool)
        for i, (e, ui) in enumerate(zip(ep_ids, u)):
            ep = eligible[e]
            n_starts = max(ep.length - seq_len, 0) + 1
            start = min(int(ui * n_starts), n_starts - 1)
            n = min(seq_len, ep.length - start)
            states = ep.states_array()
            obs[i, :n] = states[start : start + n]
            next_obs[i, :n] = states[start + 1 : start + n + 1]
            actions[i, :n] = ep.actions[start : start + n]
            rewards[i, :n] = ep.rewards[start : start + n]
            dones[i, :n] = ep.dones[start : start + n]
            mask[i, :n] = True
        return Batch(obs, actions, rewards, next_obs, dones, mask)


def buffer_sample(buf: ReplayBuffer, batch_size: int, seq_len: int, rng: RandomStream) -> Batch:
    return buf.sample(batch_size, seq_len, rng)


@dataclass
class Schedule:
    m_early: int = 250
    m_late: int = 1000
    early_cutoff: int = 100_000

    def __post_init__(self):
        if min(self.m_early, self.m_late, self.early_cutoff) <= 0:
            raise ValueError("schedule entries must be positive")
        if self.m_early > self.m_late:
            raise ValueError("m_early must not exceed m_late")

    def period(self, t: int) -> int:
        return self.m_early if t < self.early_cutoff else self.m_late

    def due(self, t: int) -> bool:
        return t % self.period(t) == 0


@dataclass
class AgentConfig:
    mode: str = "psdrl"
    gamma: float = 0.99
    policy_noise: float = 1e-3
    batch_size: int = 125
    seq_len: int = 250
    capacity: int = 100_000
    ae_iterations: int = 3
    fw_iterations: int = 3
    term_iterations: int = 3
    value_iterations: int = 3
    fw_horizon: int = 4
    term_horizon: int = 4
    value_horizon: int = 1
    lr_ae: float = 1e-4
    lr_fw: float = 1e-4
    lr_term: float = 1e-4
    lr_value: float = 1e-4
    target_update_frequency: int = 4
    prior_var_latent: float = 1e3
    prior_var_reward: float = 1e3
    noise_var: float = 1.0
    schedule: Schedule = None
    eps_final: float = 0.01
    eps_anneal_steps: int = 50_000
    fresh_value_multiplier: int = 4

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.schedule is None:
            self.schedule = Schedule()

    @property
    def samples_posterior(self) -> bool:
        return self.mode in ("psdrl", "fresh-value")


class Agent:
    """Model components, posterior, replay buffer and the random streams they draw from."""

    def __init__(self, model_cfg: ModelConfig, cfg: AgentConfig, seed: int):
        self.model_cfg = model_cfg
        self.cfg = cfg
        root = RandomStream(seed)
        self.init_rng = root.split()
        self.sample_rng = root.split()
        self.posterior_rng = root.split()
        self.act_rng = root.split()
        self.eval_rng = root.split()
        self.ae = Autoencoder(model_cfg, self.init_rng)
        self.fm = ForwardModel(model_cfg, self.init_rng)
        self.tm = TerminationModel(model_cfg, self.init_rng)
        self.vn = ValueNet(model_cfg, self.init_rng, cfg.target_update_frequency)
        self.buffer = ReplayBuffer(cfg.capacity)
        self.posterior = PosteriorState.prior(
            model_cfg.output_dim, model_cfg.feature_dim, cfg.prior_var_latent, cfg.prior_var_reward
        )
        self.model_id = 0
        self.losses = {"ae": float("nan"), "fw": float("nan"), "term": float("nan"), "value": float("nan")}
        self.sampled = self._next_model()

    @property
    def streams(self) -> dict[str, RandomStream]:
        return {
            "init": self.init_rng,
            "sample": self.sample_rng,
            "posterior": self.posterior_rng,
            "act": self.act_rng,
            "eval": self.eval_rng,
        }

    def _next_model(self) -> SampledModel:
        if self.cfg.samples_posterior:
            return sample_weights(self.posterior, self.posterior_rng, self.fm, self.model_id)
        return SampledModel(W=self.fm.W, model=self.fm, model_id=self.model_id)

    def _batch(self) -> Batch:
        return self.buffer.sample(self.cfg.batch_size, self.cfg.seq_len, self.sample_rng)

    def update_cycle(self) -> bool:
        """Train models, refresh the posterior, resample, plan. Skipped until an episode completes."""
        if self.buffer.n_complete == 0:
            return False
        c = self.cfg
        self.losses["ae"] = float(np.mean([train_autoencoder(self.ae, self._batch(), c.lr_ae) for _ in range(c.ae_iterations)]))
        self.losses["fw"] = float(
            np.mean([train_forward(self.fm, self.ae, self._batch(), c.lr_fw, c.fw_horizon) for _ in range(c.fw_iterations)])
        )
        self.losses["term"] = float(
            np.mean(
                [train_termination(self.tm, self.ae, self._batch(), c.lr_term, c.term_horizon) for _ in range(c.term_iterations)]
            )
        )
        if c.samples_posterior:
            phi, targets = build_design(self.buffer, self.ae, self.fm)
            self.posterior = posterior_update(phi, targets, c.prior_var_latent, c.prior_var_reward, c.noise_var)
        self.model_id += 1
        self.sampled = self._next_model()

        iterations = c.value_iterations
        if c.mode == "fresh-value":
            self.vn.reinitialize(self.init_rng)
            iterations *= c.fresh_value_multiplier
        self.losses["value"] = train_value(
            self.vn, self.ae, self._batch, self.sampled, self.tm, c.gamma, iterations, c.lr_value, c.value_horizon
        )
        return True

    def epsilon(self, t: int) -> float:
        """Policy noise at step ``t``: fixed for posterior sampling, linearly annealed otherwise."""
        c = self.cfg
        if c.samples_posterior:
            return c.policy_noise
        frac = min(t / max(c.eps_anneal_steps, 1), 1.0)
        return 1.0 + (c.eps_final - 1.0) * frac

    def policy(self, obs: np.ndarray, h: np.ndarray, t: int = 0, eps: float | None = None):
        """Action and carried hidden state for one observation."""
        eps = self.epsilon(t) if eps is None else eps
        z = self.ae.encode(obs)
        return greedy_action(self.sampled, self.tm, self.vn, z, h, eps, self.act_rng, self.cfg.gamma)


@dataclass
class StepRecord:
    step: int
    action: int
    reward: float
    done: int
    hidden: np.ndarray
    model_id: int
    updated: bool
    episode_return: float | None = None


class Runner:
    """Environment loop state: step counter, current observation and hidden state."""

    def __init__(self, agent: Agent, env):
        self.agent = agent
        self.env = env
        self.t = 0
        self.obs = env.reset()
        self.h = np.zeros(agent.model_cfg.gru_hidden)
        self.episode_return = 0.0
        self.episodes = 0

    def step(self) -> StepRecord:
        agent, t = self.agent, self.t
        updated = agent.update_cycle() if agent.cfg.schedule.due(t) else False
        h = self.h
        a, h_next = agent.policy(self.obs, h, t)
        r, obs_next, done = self.env.step(a)
        agent.buffer.push(Transition(self.obs, a, r, obs_next, done))
        self.episode_return += r
        record = StepRecord(t, a, r, done, h, agent.model_id, updated)
        if done:
            record.episode_return = self.episode_return
            self.episodes += 1
            self.episode_return = 0.0
            self.obs = self.env.reset()
            self.h = np.zeros_like(h)
        else:
            self.obs = obs_next
            self.h = h_next
        self.t += 1
        return record


def run(env, agent: Agent, total_steps: int) -> Iterator[StepRecord]:
    """Interact for ``total_steps`` steps, yielding one record per step."""
    runner = Runner(agent, env)
    while runner.t < total_steps:
        yield runner.step()
