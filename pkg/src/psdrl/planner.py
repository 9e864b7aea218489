"""Continual fitted value iteration against a sampled model, and the one-step-return policy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .latent_model import Autoencoder, Batch, ModelConfig, SampledModel, TerminationModel, encode_sequences, forward_step
from .nnet import MLP, NetSpec, ParamStore, adam_update, squared_error
from .numkernel import RandomStream

GAMMA = 0.99
TARGET_UPDATE_FREQUENCY = 4
POLICY_NOISE = 1e-3
VALUE_ITERATIONS = 3
TERMINATION_THRESHOLD = 0.5


class ValueNet:
    """``V(z, h)`` with a periodically refreshed target copy."""

    def __init__(self, cfg: ModelConfig, rng: RandomStream | None = None, target_update_frequency: int = TARGET_UPDATE_FREQUENCY):
        self.cfg = cfg
        self.store = ParamStore()
        n_hidden = cfg.value_layers - 1
        sizes = [cfg.latent_dim + cfg.gru_hidden] + [cfg.value_hidden] * n_hidden + [1]
        self.net = MLP(self.store, "value", NetSpec(sizes, [cfg.value_activation] * n_hidden + ["linear"]), rng)
        self.target = self.store.snapshot()
        self.target_update_frequency = target_update_frequency
        self.updates = 0

    def __call__(self, z: np.ndarray, h: np.ndarray, use_target: bool = False) -> np.ndarray:
        x = np.concatenate([np.asarray(z, dtype=np.float64), np.asarray(h, dtype=np.float64)], axis=-1)
        return self.net(x, self.target if use_target else None)[..., 0]

    def refresh_target(self) -> None:
        for k, v in self.store.values.items():
            self.target[k][...] = v

    def reinitialize(self, rng: RandomStream) -> None:
        """Fresh weights, fresh optimizer state, target synced."""
        self.net.reinit(rng)
        self.store.reset_optimizer()
        self.store.zero_grad()
        self.refresh_target()
        self.updates = 0


def value(vn: ValueNet, z: np.ndarray, h: np.ndarray, use_target: bool = False):
    out = vn(z, h, use_target)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class ActionOutcomes:
    """Per-action predictions, each with leading axis ``n_actions``."""

    z_next: np.ndarray
    reward: np.ndarray
    h_next: np.ndarray
    next_value: np.ndarray
    score: np.ndarray


def action_outcomes(
    sampled: SampledModel,
    term: TerminationModel,
    vn: ValueNet,
    z: np.ndarray,
    h: np.ndarray,
    gamma: float,
    use_target: bool,
) -> ActionOutcomes:
    """Batched evaluation of ``r_hat + gamma * v_hat`` for every action.

    ``z``/``h`` are ``(B, .)``; outputs are ``(A, B, ...)``.
    """
    n_actions = sampled.model.n_actions
    B = z.shape[0]
    zz = np.tile(z, (n_actions, 1))
    hh = np.tile(h, (n_actions, 1))
    acts = np.repeat(np.arange(n_actions), B)
    z_next, r_hat, h_next = forward_step(sampled, zz, acts, hh)
    live = term(z_next) < TERMINATION_THRESHOLD
    v_hat = np.where(live, vn(z_next, h_next, use_target), 0.0)
    score = r_hat + gamma * v_hat
    return ActionOutcomes(
        z_next=z_next.reshape(n_actions, B, -1),
        reward=r_hat.reshape(n_actions, B),
        h_next=h_next.reshape(n_actions, B, -1),
        next_value=v_hat.reshape(n_actions, B),
        score=score.reshape(n_actions, B),
    )


def bellman_target(sampled, term, vn, z, h, gamma: float = GAMMA, use_target: bool = True):
    """``max_a [r_hat^a + gamma * v_hat^a]`` with absorbing successors valued at zero.

    Accepts a single ``(z, h)`` pair or a batch; returns ``(best, outcomes)``.
    """
    z = np.asarray(z, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z, h = z[None], h[None]
    out = action_outcomes(sampled, term, vn, z, h, gamma, use_target)
    best = out.score.max(axis=0)
    if single:
        return float(best[0]), out
    return best, out


def greedy_action(
    sampled: SampledModel,
    term: TerminationModel,
    vn: ValueNet,
    z: np.ndarray,
    h: np.ndarray,
    eps_hat: float = POLICY_NOISE,
    rng: RandomStream | None = None,
    gamma: float = GAMMA,
):
    """Pick an action for a single state and return it with the matching next hidden state.

    Scores use the online value parameters. With probability ``eps_hat`` the
    action is uniform instead. Ties go to the lowest action id.
    """
    out = action_outcomes(sampled, term, vn, np.asarray(z)[None], np.asarray(h)[None], gamma, use_target=False)
    n_actions = out.score.shape[0]
    if eps_hat > 0.0 and rng.uniform() < eps_hat:
        a = rng.integers(n_actions)
    else:
        a = int(np.argmax(out.score[:, 0]))
    return a, out.h_next[a, 0].copy()


def rollout_hidden(sampled: SampledModel, z: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Hidden states ``h_{i,t}`` obtained by running the model along stored actions from zero."""
    fm = sampled.model
    B, L = actions.shape
    hs = np.zeros((B, L, fm.cfg.gru_hidden))
    h = np.zeros((B, fm.cfg.gru_hidden))
    for t in range(L):
        hs[:, t] = h
        if t + 1 < L:
            h, _ = fm.recurrent(z[:, t], actions[:, t], h)
    return hs


def train_value(
    vn: ValueNet,
    ae: Autoencoder,
    sample_batch: Callable[[], Batch],
    sampled: SampledModel,
    term: TerminationModel,
    gamma: float = GAMMA,
    iterations: int = VALUE_ITERATIONS,
    lr: float = 1e-4,
    horizon: int = 1,
) -> float:
    """``iterations * L / horizon`` regression steps of ``V`` onto constant one-step targets.

    Every iteration draws a fresh batch; the target copy is refreshed every
    ``vn.target_update_frequency`` gradient updates.
    """
    losses = []
    freq = vn.target_update_frequency
    for _ in range(iterations):
        batch = sample_batch()
        B, L = batch.shape
        z = encode_sequences(ae, batch.obs)
        hs = rollout_hidden(sampled, z, batch.actions)
        starts = [s for s in range(0, L, horizon) if batch.mask[:, s : s + horizon].any()]
        i = 0
        while i < len(starts):
            # the target copy is fixed until the next refresh, so targets for
            # every slice up to that point can be computed in one pass
            group = starts[i : i + freq - vn.updates % freq]
            rows = [batch.mask[:, s : s + horizon] for s in group]
            zz = [z[:, s : s + horizon][m] for s, m in zip(group, rows)]
            hh = [hs[:, s : s + horizon][m] for s, m in zip(group, rows)]
            targets, _ = bellman_target(sampled, term, vn, np.concatenate(zz), np.concatenate(hh), gamma, use_target=True)
            offset = 0
            for zi, hi in zip(zz, hh):
                target = targets[offset : offset + len(zi)]
                offset += len(zi)
                pred, cache = vn.net.forward(np.concatenate([zi, hi], axis=-1))
                loss, dy = squared_error(pred, target[:, None])
                vn.net.backward(cache, dy)
                adam_update(vn.store, lr)
                vn.updates += 1
                if vn.updates % freq == 0:
                    vn.refresh_target()
                losses.append(loss)
            i += len(group)
    return float(np.mean(losses)) if losses else 0.0
