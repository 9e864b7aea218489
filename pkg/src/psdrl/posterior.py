"""Neural-linear posterior over the forward model's output layer.

Each output row ``j`` of ``W`` gets an independent Gaussian posterior with
prior ``N(0, s_j^2 I)`` and likelihood ``N(t_j | Phi w_j, noise^2 I)``:

    precision_j = s_j^-2 I + noise^-2 Phi^T Phi
    mean_j      = noise^-2 precision_j^-1 Phi^T t_j

The covariance depends on ``j`` only through its prior variance, so one
factor is shared by every latent row and another serves the reward row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .latent_model import Autoencoder, ForwardModel, SampledModel, one_hot
from .numkernel import RandomStream, chol_of_inverse, cholesky, mvn_sample, solve_chol

PRIOR_VAR_LATENT = 1e3
PRIOR_VAR_REWARD = 1e3
NOISE_VAR = 1.0


@dataclass
class PosteriorState:
    chol_latent: np.ndarray  # (k, k) lower factor of the latent-row covariance
    chol_reward: np.ndarray  # (k, k) lower factor of the reward-row covariance
    mean: np.ndarray  # (d_z + 1, k) row means
    n: int = 0

    @property
    def latent_dim(self) -> int:
        return self.mean.shape[0] - 1

    def row_chol(self, j: int) -> np.ndarray:
        return self.chol_reward if j == self.latent_dim else self.chol_latent

    @property
    def trace_latent(self) -> float:
        return float(np.sum(self.chol_latent * self.chol_latent))

    @classmethod
    def prior(cls, output_dim: int, k: int, prior_var_latent=PRIOR_VAR_LATENT, prior_var_reward=PRIOR_VAR_REWARD):
        return cls(
            chol_latent=np.sqrt(prior_var_latent) * np.eye(k),
            chol_reward=np.sqrt(prior_var_reward) * np.eye(k),
            mean=np.zeros((output_dim, k)),
            n=0,
        )


def build_design(buffer, ae: Autoencoder, fm: ForwardModel):
    """Replay every stored episode from ``h = 0`` through the current encoder and trunk.

    Returns ``(Phi, T)``: one row per stored transition, ordered by episode
    insertion then time. Targets are the current encoding of the true next
    state followed by the reward.
    """
    episodes = buffer.episodes
    if not episodes or buffer.total == 0:
        raise ValueError("cannot build a design matrix from an empty buffer")
    lengths = np.array([ep.length for ep in episodes])
    n_ep, t_max = len(episodes), int(lengths.max())
    obs_dim = fm.cfg.obs_dim
    states = np.zeros((n_ep, t_max + 1, obs_dim))
    actions = np.zeros((n_ep, t_max), dtype=np.int64)
    rewards = np.zeros((n_ep, t_max))
    for e, ep in enumerate(episodes):
        n = ep.length
        states[e, : n + 1] = ep.states_array()
        actions[e, :n] = ep.actions[:n]
        rewards[e, :n] = ep.rewards[:n]
    z = ae.encode(states.reshape(-1, obs_dim)).reshape(n_ep, t_max + 1, -1)
    mask = np.arange(t_max)[None, :] < lengths[:, None]

    k = fm.cfg.feature_dim
    phi = np.empty((n_ep, t_max, k))
    h = np.zeros((n_ep, fm.cfg.gru_hidden))
    ones = np.ones((n_ep, 1))
    for t in range(t_max):
        oh = one_hot(actions[:, t], fm.n_actions)
        h, _ = fm.gru.step(np.concatenate([z[:, t], oh], axis=-1), h)
        feats = fm.trunk(np.concatenate([h, z[:, t], oh], axis=-1))
        phi[:, t] = np.concatenate([feats, ones], axis=-1)
    targets = np.concatenate([z[:, 1:], rewards[..., None]], axis=-1)
    return phi[mask], targets[mask]


def posterior_update(
    phi: np.ndarray,
    targets: np.ndarray,
    prior_var_latent: float = PRIOR_VAR_LATENT,
    prior_var_reward: float = PRIOR_VAR_REWARD,
    noise_var: float = NOISE_VAR,
) -> PosteriorState:
    if prior_var_latent <= 0 or prior_var_reward <= 0 or noise_var <= 0:
        raise ValueError("prior and noise variances must be positive")
    phi = np.asarray(phi, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if phi.ndim != 2 or targets.ndim != 2 or phi.shape[0] != targets.shape[0]:
        raise ValueError(f"design {phi.shape} and targets {targets.shape} disagree")
    k = phi.shape[1]
    gram = (phi.T @ phi) / noise_var
    proj = (phi.T @ targets) / noise_var  # (k, d_z + 1)
    eye = np.eye(k)

    prec_chol_latent = cholesky(eye / prior_var_latent + gram)
    prec_chol_reward = cholesky(eye / prior_var_reward + gram)
    d_z = targets.shape[1] - 1
    mean = np.empty((d_z + 1, k))
    mean[:d_z] = solve_chol(prec_chol_latent, proj[:, :d_z]).T
    mean[d_z] = solve_chol(prec_chol_reward, proj[:, d_z])
    return PosteriorState(
        chol_latent=chol_of_inverse(prec_chol_latent),
        chol_reward=chol_of_inverse(prec_chol_reward),
        mean=mean,
        n=phi.shape[0],
    )


def sample_weights(ps: PosteriorState, rng: RandomStream, model: ForwardModel, model_id: int = 0) -> SampledModel:
    """Draw every row ``w_j ~ N(mean_j, Sigma_j)`` with consecutive draws from ``rng``."""
    rows = [mvn_sample(ps.mean[j], ps.row_chol(j), rng) for j in range(ps.mean.shape[0])]
    return SampledModel(W=np.stack(rows), model=model, model_id=model_id)
