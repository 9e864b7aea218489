"""Latent transition model: autoencoder, recurrent forward model, termination model.

The forward model's prediction is exactly ``W @ phi`` where ``phi`` is the
trunk output with a constant 1 appended, so ``W`` carries the output bias and
can be swapped for a posterior draw without touching the trunk.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nnet import GRU, MLP, NetSpec, ParamStore, adam_update, squared_error
from .numkernel import RandomStream


@dataclass
class ModelConfig:
    obs_dim: int
    n_actions: int
    latent_dim: int = 1536
    encoder_layers: int = 4
    decoder_layers: int = 4
    ae_hidden: int = 1536
    ae_activation: str = "relu"
    latent_activation: str = "tanh"
    gru_hidden: int = 756
    fw_layers: int = 5
    fw_hidden: int = 2292
    fw_activation: str = "tanh"
    term_layers: int = 4
    term_hidden: int = 1536
    term_activation: str = "tanh"
    value_layers: int = 5
    value_hidden: int = 2292
    value_activation: str = "tanh"

    @property
    def feature_dim(self) -> int:
        """Width of phi including the constant feature."""
        return self.fw_hidden + 1

    @property
    def output_dim(self) -> int:
        return self.latent_dim + 1


def _stack(n_in: int, hidden: int, n_layers: int, n_out: int, act: str, out_act: str) -> NetSpec:
    sizes = [n_in] + [hidden] * (n_layers - 1) + [n_out]
    return NetSpec(sizes, [act] * (n_layers - 1) + [out_act])


def one_hot(actions, n_actions: int) -> np.ndarray:
    actions = np.asarray(actions, dtype=np.int64)
    if np.any(actions < 0) or np.any(actions >= n_actions):
        raise ValueError(f"action id out of range [0, {n_actions})")
    return np.eye(n_actions)[actions]


class Autoencoder:
    def __init__(self, cfg: ModelConfig, rng: RandomStream | None = None):
        self.cfg = cfg
        self.store = ParamStore()
        self.encoder = MLP(
            self.store,
            "enc",
            _stack(cfg.obs_dim, cfg.ae_hidden, cfg.encoder_layers, cfg.latent_dim, cfg.ae_activation, cfg.latent_activation),
            rng,
        )
        self.decoder = MLP(
            self.store,
            "dec",
            _stack(cfg.latent_dim, cfg.ae_hidden, cfg.decoder_layers, cfg.obs_dim, cfg.ae_activation, "linear"),
            rng,
        )

    def encode(self, s: np.ndarray) -> np.ndarray:
        return self.encoder(s)

    def decode(self, z: np.ndarray) -> np.ndarray:
        return self.decoder(z)


class ForwardModel:
    """GRU over ``(z, one_hot(a))`` followed by a feature trunk and linear output ``W``."""

    def __init__(self, cfg: ModelConfig, rng: RandomStream | None = None):
        self.cfg = cfg
        self.store = ParamStore()
        self.n_actions = cfg.n_actions
        self.gru = GRU(self.store, "gru", cfg.latent_dim + cfg.n_actions, cfg.gru_hidden, rng)
        trunk_in = cfg.gru_hidden + cfg.latent_dim + cfg.n_actions
        n_hidden_layers = cfg.fw_layers - 1
        if n_hidden_layers < 1:
            raise ValueError("forward model needs at least one feature layer")
        sizes = [trunk_in] + [cfg.fw_hidden] * n_hidden_layers
        self.trunk = MLP(self.store, "trunk", NetSpec(sizes, [cfg.fw_activation] * n_hidden_layers), rng)
        self.store.add("W", np.zeros((cfg.output_dim, cfg.feature_dim)))
        if rng is not None:
            limit = np.sqrt(6.0 / (cfg.feature_dim + cfg.output_dim))
            self.store.values["W"][...] = (2.0 * rng.uniform((cfg.output_dim, cfg.feature_dim)) - 1.0) * limit

    @property
    def W(self) -> np.ndarray:
        return self.store.values["W"]

    def recurrent(self, z: np.ndarray, a, h: np.ndarray):
        x = np.concatenate([z, one_hot(a, self.n_actions)], axis=-1)
        return self.gru.step(x, h)

    def features(self, z: np.ndarray, a, h: np.ndarray):
        """Returns ``(phi, h_next)`` with the constant feature appended to ``phi``."""
        z, h, single = _as_batch(z, h)
        a = np.broadcast_to(np.asarray(a, dtype=np.int64), (z.shape[0],))
        oh = one_hot(a, self.n_actions)
        h_next, _ = self.gru.step(np.concatenate([z, oh], axis=-1), h)
        phi = self.trunk(np.concatenate([h_next, z, oh], axis=-1))
        phi = np.concatenate([phi, np.ones((phi.shape[0], 1))], axis=-1)
        if single:
            return phi[0], h_next[0]
        return phi, h_next


@dataclass
class SampledModel:
    """A drawn output layer bound to the forward model whose trunk it was drawn against."""

    W: np.ndarray
    model: ForwardModel
    model_id: int = 0


def _as_batch(z, h):
    z = np.asarray(z, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z, h = z[None], h[None]
    return z, h, single


def forward_step(model, z: np.ndarray, a, h: np.ndarray):
    """``(z_next, r_hat, h_next) = f(z, a, h)`` for a forward or sampled model."""
    if isinstance(model, SampledModel):
        fm, W = model.model, model.W
    else:
        fm, W = model, model.W
    z_arr = np.asarray(z)
    phi, h_next = fm.features(z, a, h)
    y = phi @ W.T
    d = fm.cfg.latent_dim
    if z_arr.ndim == 1:
        return y[:d], float(y[d]), h_next
    return y[:, :d], y[:, d], h_next


class TerminationModel:
    def __init__(self, cfg: ModelConfig, rng: RandomStream | None = None):
        self.cfg = cfg
        self.store = ParamStore()
        self.net = MLP(
            self.store,
            "term",
            _stack(cfg.latent_dim, cfg.term_hidden, cfg.term_layers, 1, cfg.term_activation, "sigmoid"),
            rng,
        )

    def __call__(self, z: np.ndarray) -> np.ndarray:
        out = self.net(z)
        return out[..., 0]


# ------------------------------------------------------------------- training


@dataclass
class Batch:
    """``B`` sequences of ``L`` transitions; padding rows have ``mask == False``."""

    obs: np.ndarray  # (B, L, obs_dim)
    actions: np.ndarray  # (B, L) int
    rewards: np.ndarray  # (B, L)
    next_obs: np.ndarray  # (B, L, obs_dim)
    dones: np.ndarray  # (B, L)
    mask: np.ndarray  # (B, L) bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape


def encode_sequences(ae: Autoencoder, obs: np.ndarray) -> np.ndarray:
    B, L, D = obs.shape
    return ae.encode(obs.reshape(B * L, D)).reshape(B, L, -1)


def autoencoder_loss_and_grad(ae: Autoencoder, obs: np.ndarray) -> float:
    z, enc_cache = ae.encoder.forward(obs)
    recon, dec_cache = ae.decoder.forward(z)
    loss, dy = squared_error(recon, obs)
    dz = ae.decoder.backward(dec_cache, dy)
    ae.encoder.backward(enc_cache, dz)
    return loss


def train_autoencoder(ae: Autoencoder, batch: Batch, lr: float) -> float:
    """``B`` Adam updates, each on the valid observations of one sequence."""
    losses = []
    for i in range(batch.mask.shape[0]):
        obs = batch.obs[i][batch.mask[i]]
        if obs.shape[0] == 0:
            continue
        losses.append(autoencoder_loss_and_grad(ae, obs))
        adam_update(ae.store, lr)
    return float(np.mean(losses)) if losses else 0.0


def forward_window_loss_and_grad(fm: ForwardModel, z, oh, targets, mask, h0):
    """Forward/backward over one truncation window.

    ``z`` (B, l, dz), ``oh`` (B, l, A), ``targets`` (B, l, dz+1), ``mask`` (B, l).
    Accumulates gradients into ``fm.store`` and returns ``(loss, h_last)``.
    """
    W = fm.W
    count = int(mask.sum())
    h = h0
    caches = []
    total = 0.0
    ones = np.ones((z.shape[0], 1))
    for t in range(z.shape[1]):
        h_next, gcache = fm.gru.step(np.concatenate([z[:, t], oh[:, t]], axis=-1), h)
        phi, tcache = fm.trunk.forward(np.concatenate([h_next, z[:, t], oh[:, t]], axis=-1))
        phi1 = np.concatenate([phi, ones], axis=-1)
        diff = (phi1 @ W.T - targets[:, t]) * mask[:, t, None]
        total += float(np.sum(diff * diff))
        caches.append((gcache, tcache, phi1, diff))
        h = h_next
    if count == 0:
        return 0.0, h
    grads = fm.store.grads
    dh_carry = np.zeros_like(h0)
    n_h = fm.cfg.gru_hidden
    for gcache, tcache, phi1, diff in reversed(caches):
        dy = 2.0 * diff / count
        grads["W"] += dy.T @ phi1
        dphi = (dy @ W)[:, :-1]
        dtrunk_in = fm.trunk.backward(tcache, dphi)
        _, dh_carry = fm.gru.backward(gcache, dtrunk_in[:, :n_h] + dh_carry)
    return total / count, h


def train_forward(fm: ForwardModel, ae: Autoencoder, batch: Batch, lr: float, horizon: int = 4) -> float:
    """``L / l`` truncated-BPTT updates; hidden state carried (detached) across windows."""
    B, L = batch.shape
    z = encode_sequences(ae, batch.obs)
    z_next = encode_sequences(ae, batch.next_obs)
    targets = np.concatenate([z_next, batch.rewards[..., None]], axis=-1)
    oh = one_hot(batch.actions, fm.n_actions)
    h = np.zeros((B, fm.cfg.gru_hidden))
    losses = []
    for start in range(0, L, horizon):
        sl = slice(start, min(start + horizon, L))
        m = batch.mask[:, sl]
        if not m.any():
            break
        loss, h = forward_window_loss_and_grad(fm, z[:, sl], oh[:, sl], targets[:, sl], m, h)
        adam_update(fm.store, lr)
        losses.append(loss)
    return float(np.mean(losses)) if losses else 0.0


def termination_loss_and_grad(tm: TerminationModel, z_next: np.ndarray, dones: np.ndarray, mask: np.ndarray) -> float:
    pred, cache = tm.net.forward(z_next)
    loss, dy = squared_error(pred, dones[:, None], mask)
    tm.net.backward(cache, dy)
    return loss


def train_termination(tm: TerminationModel, ae: Autoencoder, batch: Batch, lr: float, horizon: int = 4) -> float:
    """Regress ``omega(z_{t+1})`` onto the absorbing flag, ``L / l`` updates of ``B x l`` samples."""
    B, L = batch.shape
    z_next = encode_sequences(ae, batch.next_obs)
    losses = []
    for start in range(0, L, horizon):
        sl = slice(start, min(start + horizon, L))
        m = batch.mask[:, sl]
        if not m.any():
            break
        zz = z_next[:, sl].reshape(-1, z_next.shape[-1])
        losses.append(termination_loss_and_grad(tm, zz, batch.dones[:, sl].reshape(-1), m.reshape(-1)))
        adam_update(tm.store, lr)
    return float(np.mean(losses)) if losses else 0.0
