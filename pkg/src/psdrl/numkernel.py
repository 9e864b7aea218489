"""Deterministic numeric primitives.

Dense SPD factorization, triangular solves, multivariate-normal sampling and
the counter-based random stream that every stochastic component draws from.

Random stream definition (bit-exact):

    key      = mix64(seed XOR mix64(stream_id + G))
    bits[i]  = mix64(key + (counter + i + 1) * G)          (mod 2**64)
    uniform  = ((bits >> 11) + 0.5) * 2**-53                in (0, 1)

with ``G = 0x9E3779B97F4A7C15`` and ``mix64`` the SplitMix64 finalizer.
Normals are Box-Muller pairs over consecutive uniforms ``(u1, u2)``:
``sqrt(-2 ln u1) * cos(2 pi u2)`` then ``sqrt(-2 ln u1) * sin(2 pi u2)``.
An odd-sized request discards the trailing sine so that every call consumes
an even number of uniforms.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


class NonSPDError(ValueError):
    """Raised when a matrix is not symmetric positive definite."""


class DimensionError(ValueError):
    pass


def mix64(x: int) -> int:
    """SplitMix64 finalizer on a Python int (wraps to 64 bits)."""
    x &= MASK64
    x = ((x ^ (x >> 30)) * _M1) & MASK64
    x = ((x ^ (x >> 27)) * _M2) & MASK64
    return x ^ (x >> 31)


def _mix64_array(x: np.ndarray) -> np.ndarray:
    x = (x ^ (x >> np.uint64(30))) * np.uint64(_M1)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(_M2)
    return x ^ (x >> np.uint64(31))


class RandomStream:
    """Counter-based random stream.

    Identical ``(seed, stream_id)`` pairs yield identical sequences. A stream
    is single-owner: hand out children with :meth:`split` instead of sharing.
    """

    __slots__ = ("seed", "stream_id", "counter", "n_children", "_key")

    def __init__(self, seed: int, stream_id: int = 0, counter: int = 0, n_children: int = 0):
        self.seed = int(seed) & MASK64
        self.stream_id = int(stream_id) & MASK64
        self.counter = int(counter)
        self.n_children = int(n_children)
        self._key = mix64(self.seed ^ mix64(self.stream_id + GOLDEN))

    def bits(self, n: int) -> np.ndarray:
        ctr = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        return _mix64_array(np.uint64(self._key) + ctr * np.uint64(GOLDEN))

    def uniform(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        u = ((self.bits(n) >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
        if size is None:
            return float(u[0])
        return u.reshape(size)

    def normal(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        radius = np.sqrt(-2.0 * np.log(u[0::2]))
        angle = 2.0 * np.pi * u[1::2]
        out = np.empty(2 * pairs)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        out = out[:n]
        if size is None:
            return float(out[0])
        return out.reshape(size)

    def integers(self, high: int, size=None):
        """Uniform integers in ``[0, high)``."""
        if high < 1:
            raise ValueError("high must be >= 1")
        u = self.uniform(size)
        if size is None:
            return min(int(u * high), high - 1)
        return np.minimum((u * high).astype(np.int64), high - 1)

    def split(self) -> "RandomStream":
        self.n_children += 1
        child_id = mix64((self.stream_id * 0xD1B54A32D192ED03 + self.n_children * GOLDEN) ^ 0x5851F42D4C957F2D)
        return RandomStream(self.seed, child_id)

    def state(self) -> tuple[int, int, int, int]:
        return (self.seed, self.stream_id, self.counter, self.n_children)

    @classmethod
    def from_state(cls, state) -> "RandomStream":
        return cls(*(int(v) for v in state))

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, stream_id={self.stream_id:#x}, counter={self.counter})"


def _check_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains non-finite entries")


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == a``. No jitter is added."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"cholesky needs a square matrix, got shape {a.shape}")
    _check_finite(a, "matrix")
    scale = max(float(np.max(np.abs(a))), 1e-300) if a.size else 1.0
    if a.size and float(np.max(np.abs(a - a.T))) > 1e-10 * scale:
        raise NonSPDError("matrix is not symmetric")
    try:
        low = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NonSPDError(str(exc)) from None
    if a.size and not np.all(np.diag(low) > 0.0):
        raise NonSPDError("non-positive pivot")
    return low


def solve_chol(low: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``(L L^T) x = b`` given the Cholesky factor ``L``."""
    low = np.asarray(low, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != low.shape[0]:
        raise DimensionError(f"factor has {low.shape[0]} rows but rhs has {b.shape[0]}")
    return cho_solve((low, True), b, check_finite=False)


def chol_of_inverse(low: np.ndarray) -> np.ndarray:
    """Cholesky factor of ``(L L^T)^-1`` built from triangular solves."""
    eye = np.eye(low.shape[0])
    inv_low = solve_triangular(low, eye, lower=True, check_finite=False)
    cov = inv_low.T @ inv_low
    return cholesky(0.5 * (cov + cov.T))


def mvn_sample(mean: np.ndarray, cov_chol: np.ndarray, rng: RandomStream) -> np.ndarray:
    """Draw ``mean + cov_chol @ eps`` with ``eps`` standard normal from ``rng``."""
    mean = np.asarray(mean, dtype=np.float64)
    cov_chol = np.asarray(cov_chol, dtype=np.float64)
    if cov_chol.ndim != 2 or cov_chol.shape[0] != cov_chol.shape[1]:
        raise DimensionError("covariance factor must be square")
    if mean.shape != (cov_chol.shape[0],):
        raise DimensionError(f"mean has shape {mean.shape}, factor is {cov_chol.shape}")
    eps = rng.normal(mean.shape[0])
    return mean + cov_chol @ eps
