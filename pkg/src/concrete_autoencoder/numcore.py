"""Dense float64 helpers, a counter-based SplitMix64 generator, and the
elementary stochastic kernels (uniform, Gumbel, softmax).

Matrices are plain 2-D ``numpy.float64`` arrays.  The generator produces
its stream in vectorized blocks, so a block of ``n`` draws is bit-identical
to ``n`` single draws on any platform.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError, ParameterError, ShapeError

_MASK64 = (1 << 64) - 1
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_TWO_M52 = 2.0 ** -52


def as_matrix(x, name="matrix"):
    """Return ``x`` as a finite, 2-D float64 array (no copy when possible)."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericalError(f"{name} contains NaN or Inf")
    return a


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    if not np.all(np.isfinite(out)):
        raise NumericalError("matrix product overflowed")
    return out


def _splitmix(states):
    z = states
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """SplitMix64 stream: draw ``i`` is ``mix(seed + i * gamma)``.

    Single-owner; hand independent children to other threads via :meth:`spawn`.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._state = np.uint64(self.seed & _MASK64)
        self._counter = 0

    def __repr__(self):
        return f"Rng(seed={self.seed}, drawn={self._counter})"

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            return _splitmix(self._state + idx * _GAMMA)

    def uniform(self, size=None):
        """Uniform draws strictly inside (0, 1).

        Uses the top 52 bits plus a half-ulp offset, so the smallest value is
        2**-53 and the largest 1 - 2**-53; both are exact doubles.
        """
        n = 1 if size is None else int(np.prod(size))
        bits = self.next_u64(n) >> np.uint64(12)
        u = (bits.astype(np.float64) + 0.5) * _TWO_M52
        return float(u[0]) if size is None else u.reshape(size)

    def gumbel(self, size=None):
        u = self.uniform(size)
        return -np.log(-np.log(u))

    def permutation(self, n: int) -> np.ndarray:
        keys = self.next_u64(n)
        return np.argsort(keys, kind="stable")

    def choice(self, n: int, size: int) -> np.ndarray:
        """``size`` distinct indices from ``range(n)``, in draw order."""
        if size > n:
            raise ParameterError(f"cannot choose {size} distinct items from {n}")
        return self.permutation(n)[:size]

    def spawn(self, key: int) -> "Rng":
        """Deterministic child generator; distinct keys give distinct streams."""
        mixed = _splitmix(np.array([(self.seed ^ (int(key) * 0x2545F4914F6CDD1D)) & _MASK64],
                                   dtype=np.uint64))
        return Rng(int(mixed[0]))


def sample_uniform(rng: Rng, size=None):
    return rng.uniform(size)


def gumbel_from_uniform(u):
    return -np.log(-np.log(u))


def sample_gumbel(rng: Rng, size=None):
    return rng.gumbel(size)


def softmax(logits, temperature=1.0, axis=-1):
    """Tempered softmax ``exp(z/T) / sum exp(z/T)`` along ``axis``."""
    if not temperature > 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))
