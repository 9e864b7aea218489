"""Minimal trainable-network engine with hand-derived gradients.

Everything works on batches: inputs are ``(batch, features)`` arrays and
dense weights are stored as ``(fan_in, fan_out)`` so a layer computes
``act(x @ W + b)``.

GRU convention (gate columns ordered update, reset, candidate)::

    z  = sigmoid(x Wx_z + h Uzr_z + b_z)
    r  = sigmoid(x Wx_r + h Uzr_r + b_r)
    n  = tanh(x Wx_n + (r * h) Un + b_n)
    h' = (1 - z) * h + z * n
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numkernel import RandomStream

ACTIVATIONS = ("tanh", "relu", "sigmoid", "linear")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
DEFAULT_LR = 1e-4


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def activate(pre: np.ndarray, act: str) -> np.ndarray:
    if act == "tanh":
        return np.tanh(pre)
    if act == "relu":
        return np.maximum(pre, 0.0)
    if act == "sigmoid":
        return sigmoid(pre)
    if act == "linear":
        return pre
    raise ValueError(f"unknown activation {act!r}")


def activation_grad(pre: np.ndarray, out: np.ndarray, act: str, dout: np.ndarray) -> np.ndarray:
    """Backpropagate ``dout`` through the activation."""
    if act == "tanh":
        return dout * (1.0 - out * out)
    if act == "relu":
        return dout * (pre > 0.0)
    if act == "sigmoid":
        return dout * out * (1.0 - out)
    if act == "linear":
        return dout
    raise ValueError(f"unknown activation {act!r}")


class ParamStore:
    """Named parameter arrays with gradient and Adam moment buffers.

    Each buffer kind is one contiguous vector and the named arrays are views
    into it, so optimizer steps run over a single array. Callers must modify
    parameters in place; rebinding a dict entry detaches it from the store.
    """

    def __init__(self):
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.flat: dict[str, np.ndarray] = {k: np.zeros(0) for k in ("values", "grads", "adam_m", "adam_v")}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.values:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=np.float64)
        self.values[name] = value
        self.grads[name] = np.zeros_like(value)
        self.adam_m[name] = np.zeros_like(value)
        self.adam_v[name] = np.zeros_like(value)
        self._pack()
        return self.values[name]

    def _pack(self) -> None:
        for kind in self.flat:
            arrays = getattr(self, kind)
            flat = np.concatenate([a.ravel() for a in arrays.values()])
            offset = 0
            for k, a in arrays.items():
                arrays[k] = flat[offset : offset + a.size].reshape(a.shape)
                offset += a.size
            self.flat[kind] = flat

    def __getstate__(self):
        # copying breaks the view relation, so only the named arrays are kept
        state = self.__dict__.copy()
        del state["flat"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self.flat = {k: np.zeros(0) for k in ("values", "grads", "adam_m", "adam_v")}
        self._pack()

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def names(self) -> list[str]:
        return list(self.values)

    def zero_grad(self) -> None:
        self.flat["grads"].fill(0.0)

    def reset_optimizer(self) -> None:
        self.flat["adam_m"].fill(0.0)
        self.flat["adam_v"].fill(0.0)
        self.step = 0

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.values.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for k, v in values.items():
            self.values[k][...] = v

    def num_params(self) -> int:
        return sum(v.size for v in self.values.values())

    def to_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}/adam_step": np.array([float(self.step)])}
        for k in self.values:
            out[f"{prefix}/values/{k}"] = self.values[k]
            out[f"{prefix}/adam_m/{k}"] = self.adam_m[k]
            out[f"{prefix}/adam_v/{k}"] = self.adam_v[k]
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray], prefix: str) -> None:
        self.step = int(arrays[f"{prefix}/adam_step"][0])
        for k in self.values:
            self.values[k][...] = arrays[f"{prefix}/values/{k}"]
            self.adam_m[k][...] = arrays[f"{prefix}/adam_m/{k}"]
            self.adam_v[k][...] = arrays[f"{prefix}/adam_v/{k}"]
            self.grads[k].fill(0.0)


def adam_update(
    store: ParamStore,
    lr: float = DEFAULT_LR,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> None:
    """One bias-corrected Adam step over every entry; zeroes the gradients."""
    store.step += 1
    c1 = 1.0 - beta1**store.step
    c2 = 1.0 - beta2**store.step
    flat = store.flat
    g, m, v = flat["grads"], flat["adam_m"], flat["adam_v"]
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    flat["values"] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    g.fill(0.0)


def glorot_uniform(rng: RandomStream, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return (2.0 * rng.uniform((fan_in, fan_out)) - 1.0) * limit


# ---------------------------------------------------------------- dense layers


def dense_forward(W: np.ndarray, b: np.ndarray, x: np.ndarray, act: str):
    """``y = act(x @ W + b)``; the cache keeps input, pre-activation and output."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != W.shape[0]:
        raise ValueError(f"input width {x.shape[-1]} does not match weight rows {W.shape[0]}")
    pre = x @ W + b
    y = activate(pre, act)
    return y, (x, pre, y)


def dense_backward(W: np.ndarray, cache, act: str, dy: np.ndarray):
    """Returns ``(dW, db, dx)``."""
    x, pre, y = cache
    dpre = activation_grad(pre, y, act, dy)
    return x.T @ dpre, dpre.sum(axis=0), dpre @ W.T


@dataclass
class NetSpec:
    sizes: list[int]
    activations: list[str]
    recurrent_hidden: int = 0

    def __post_init__(self):
        if len(self.sizes) < 2:
            raise ValueError("a network needs at least input and output sizes")
        if len(self.activations) != len(self.sizes) - 1:
            raise ValueError("one activation per layer required")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        if any(s < 1 for s in self.sizes):
            raise ValueError("layer sizes must be positive")


class MLP:
    """Stack of dense layers whose parameters live in a shared ParamStore."""

    def __init__(self, store: ParamStore, prefix: str, spec: NetSpec, rng: RandomStream | None = None):
        self.store = store
        self.prefix = prefix
        self.spec = spec
        self.names = []
        for i, (fi, fo) in enumerate(zip(spec.sizes[:-1], spec.sizes[1:])):
            w_name, b_name = f"{prefix}/{i}/W", f"{prefix}/{i}/b"
            w = glorot_uniform(rng, fi, fo) if rng is not None else np.zeros((fi, fo))
            store.add(w_name, w)
            store.add(b_name, np.zeros(fo))
            self.names.append((w_name, b_name))

    @property
    def in_size(self) -> int:
        return self.spec.sizes[0]

    @property
    def out_size(self) -> int:
        return self.spec.sizes[-1]

    def reinit(self, rng: RandomStream) -> None:
        for (w_name, b_name), fi, fo in zip(self.names, self.spec.sizes[:-1], self.spec.sizes[1:]):
            self.store.values[w_name][...] = glorot_uniform(rng, fi, fo)
            self.store.values[b_name][...] = 0.0

    def forward(self, x: np.ndarray, params: dict[str, np.ndarray] | None = None):
        params = self.store.values if params is None else params
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_size:
            raise ValueError(f"{self.prefix}: expected input width {self.in_size}, got {x.shape[-1]}")
        caches = []
        for (w_name, b_name), act in zip(self.names, self.spec.activations):
            x, cache = dense_forward(params[w_name], params[b_name], x, act)
            caches.append(cache)
        return x, caches

    def __call__(self, x: np.ndarray, params: dict[str, np.ndarray] | None = None) -> np.ndarray:
        params = self.store.values if params is None else params
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_size:
            raise ValueError(f"{self.prefix}: expected input width {self.in_size}, got {x.shape[-1]}")
        for (w_name, b_name), act in zip(self.names, self.spec.activations):
            x = activate(x @ params[w_name] + params[b_name], act)
        return x

    def backward(self, caches, dy: np.ndarray) -> np.ndarray:
        """Accumulates parameter gradients into the store; returns d(input)."""
        values, grads = self.store.values, self.store.grads
        for (w_name, b_name), act, cache in zip(
            reversed(self.names), reversed(self.spec.activations), reversed(caches)
        ):
            dW, db, dy = dense_backward(values[w_name], cache, act, dy)
            grads[w_name] += dW
            grads[b_name] += db
        return dy


# ------------------------------------------------------------------------ GRU


class GRU:
    def __init__(self, store: ParamStore, prefix: str, n_in: int, n_hidden: int, rng: RandomStream | None = None):
        self.store = store
        self.prefix = prefix
        self.n_in = n_in
        self.n_hidden = n_hidden
        self.wx, self.uzr, self.un, self.b = (f"{prefix}/{s}" for s in ("Wx", "Uzr", "Un", "b"))
        store.add(self.wx, np.zeros((n_in, 3 * n_hidden)))
        store.add(self.uzr, np.zeros((n_hidden, 2 * n_hidden)))
        store.add(self.un, np.zeros((n_hidden, n_hidden)))
        store.add(self.b, np.zeros(3 * n_hidden))
        if rng is not None:
            self.reinit(rng)

    def reinit(self, rng: RandomStream) -> None:
        n = self.n_hidden
        v = self.store.values
        v[self.wx][...] = np.concatenate([glorot_uniform(rng, self.n_in, n) for _ in range(3)], axis=1)
        v[self.uzr][...] = np.concatenate([glorot_uniform(rng, n, n) for _ in range(2)], axis=1)
        v[self.un][...] = glorot_uniform(rng, n, n)
        v[self.b][...] = 0.0

    def step(self, x: np.ndarray, h: np.ndarray, params: dict[str, np.ndarray] | None = None):
        """One recurrent step; returns ``(h_next, cache)``."""
        p = self.store.values if params is None else params
        if x.shape[-1] != self.n_in or h.shape[-1] != self.n_hidden:
            raise ValueError(
                f"{self.prefix}: expected x width {self.n_in} and h width {self.n_hidden}, "
                f"got {x.shape[-1]} and {h.shape[-1]}"
            )
        n = self.n_hidden
        gx = x @ p[self.wx] + p[self.b]
        zr = sigmoid(gx[..., : 2 * n] + h @ p[self.uzr])
        z, r = zr[..., :n], zr[..., n:]
        rh = r * h
        cand = np.tanh(gx[..., 2 * n :] + rh @ p[self.un])
        h_next = h + z * (cand - h)
        return h_next, (x, h, z, r, rh, cand)

    def backward(self, cache, dh_next: np.ndarray):
        """Accumulates parameter gradients; returns ``(dx, dh)``."""
        x, h, z, r, rh, cand = cache
        v, g = self.store.values, self.store.grads
        dz = dh_next * (cand - h)
        dh = dh_next * (1.0 - z)
        dcand_pre = dh_next * z * (1.0 - cand * cand)
        drh = dcand_pre @ v[self.un].T
        dr = drh * h
        dh += drh * r
        dzr_pre = np.concatenate([dz * z * (1.0 - z), dr * r * (1.0 - r)], axis=-1)
        dgates = np.concatenate([dzr_pre, dcand_pre], axis=-1)
        g[self.wx] += x.T @ dgates
        g[self.b] += dgates.sum(axis=0)
        g[self.uzr] += h.T @ dzr_pre
        g[self.un] += rh.T @ dcand_pre
        dx = dgates @ v[self.wx].T
        dh += dzr_pre @ v[self.uzr].T
        return dx, dh


def gru_step(gru: GRU, x: np.ndarray, h: np.ndarray):
    return gru.step(x, h)


# --------------------------------------------------------------------- losses


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean over batch and elements; returns ``(loss, d loss / d pred)``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    count = diff.size
    return float(np.sum(diff * diff) / count), 2.0 * diff / count


def squared_error(pred: np.ndarray, target: np.ndarray, mask: np.ndarray | None = None):
    """Squared norm per sample averaged over valid samples.

    ``pred``/``target`` are ``(n, d)``; ``mask`` is a length-``n`` boolean
    vector. Masked rows contribute neither loss nor gradient.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    if mask is not None:
        diff = diff * mask[:, None]
        count = int(mask.sum())
    else:
        count = diff.shape[0]
    if count == 0:
        return 0.0, np.zeros_like(diff)
    return float(np.sum(diff * diff) / count), 2.0 * diff / count


# -------------------------------------------------------------- serialization

MAGIC = b"PSDRLPS\x00"
FORMAT_VERSION = 1


def save_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    """Write named float64 arrays to the versioned binary container.

    Layout: magic (8 bytes), version (u32), entry count (u32), then per entry
    name length (u32), UTF-8 name, ndim (u32), shape (u64 each), and the
    values as little-endian float64 in row-major order.
    """
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_arrays(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a parameter container (bad magic)")
    version, count = struct.unpack_from("<II", data, 8)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    pos = 16
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos : pos + n].decode("utf-8")
        pos += n
        (ndim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", data, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    if pos != len(data):
        raise ValueError(f"{path}: trailing bytes in container")
    return out
