"""Concrete selector layer.

Each of the ``k`` nodes owns a positive weight vector over the ``d`` input
features.  In training a node emits ``x @ m`` where ``m`` is a relaxed
one-hot sample ``softmax((log alpha + g) / T)``; at test time it emits the
single feature with the largest weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .numcore import Rng, softmax

ALPHA_INIT_RANGE = (1e-3, 1e-2)
ALPHA_FLOOR = 1e-12
SCHEDULE_KINDS = ("exponential", "constant_high", "constant_low", "abrupt")


@dataclass
class SelectorParams:
    alpha: np.ndarray  # (k, d), strictly positive

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.alpha.ndim != 2:
            raise ShapeError(f"alpha must be (k, d), got {self.alpha.shape}")
        k, d = self.alpha.shape
        if k < 1 or d < k:
            raise ParameterError(f"need 1 <= k <= d, got k={k}, d={d}")
        if not np.all(self.alpha > 0):
            raise ParameterError("alpha entries must be strictly positive")

    @property
    def k(self):
        return self.alpha.shape[0]

    @property
    def d(self):
        return self.alpha.shape[1]

    def project(self):
        """Clamp entries back above the positivity floor after an update."""
        np.maximum(self.alpha, ALPHA_FLOOR, out=self.alpha)


def init_alpha(k: int, d: int, rng: Rng) -> SelectorParams:
    if not 1 <= k <= d:
        raise ParameterError(f"need 1 <= k <= d, got k={k}, d={d}")
    lo, hi = ALPHA_INIT_RANGE
    return SelectorParams(lo + (hi - lo) * rng.uniform((k, d)))


@dataclass(frozen=True)
class AnnealSchedule:
    """Temperature schedule over ``epochs`` (B) epochs.

    ``exponential`` is the geometric decay from ``t0`` to ``tb``; the other
    kinds exist for ablations: fixed at ``t0``, fixed at ``tb``, and ``t0``
    until ``B/2`` followed by an abrupt drop to ``tb``.
    """

    t0: float = 10.0
    tb: float = 0.01
    epochs: int = 300
    kind: str = "exponential"

    def __post_init__(self):
        if not (self.t0 >= self.tb > 0):
            raise ParameterError(f"need t0 >= tb > 0, got t0={self.t0}, tb={self.tb}")
        if self.epochs < 1:
            raise ParameterError(f"schedule needs at least one epoch, got {self.epochs}")
        if self.kind not in SCHEDULE_KINDS:
            raise ParameterError(f"unknown schedule kind {self.kind!r}")


def temperature(schedule: AnnealSchedule, epoch) -> float:
    """Temperature at ``epoch``; held at the final value once ``epoch > B``."""
    if epoch < 0:
        raise ParameterError(f"epoch must be >= 0, got {epoch}")
    b = min(epoch, schedule.epochs)
    if schedule.kind == "constant_high":
        return float(schedule.t0)
    if schedule.kind == "constant_low":
        return float(schedule.tb)
    if schedule.kind == "abrupt":
        return float(schedule.t0 if b < schedule.epochs / 2 else schedule.tb)
    if b == schedule.epochs:
        return float(schedule.tb)
    return float(schedule.t0 * (schedule.tb / schedule.t0) ** (b / schedule.epochs))


@dataclass
class ConcreteSampleBatch:
    m: np.ndarray  # (k, d), rows on the simplex
    gumbel: np.ndarray  # (k, d), the noise that produced m
    temperature: float


def concrete_sample(params: SelectorParams, temp: float, rng: Rng | None = None,
                    gumbel=None, draws: int | None = None) -> ConcreteSampleBatch:
    """One relaxed one-hot vector per node.

    Pass ``gumbel`` to reuse frozen noise (gradient checks, replay);
    otherwise fresh noise is drawn from ``rng``.  With ``draws`` set, ``m``
    and the noise gain a leading axis of that many independent samples.
    """
    if not temp > 0:
        raise ParameterError(f"temperature must be positive, got {temp}")
    shape = params.alpha.shape if draws is None else (int(draws), *params.alpha.shape)
    if gumbel is None:
        if rng is None:
            raise ParameterError("need an rng or explicit gumbel noise")
        gumbel = rng.gumbel(shape)
    gumbel = np.asarray(gumbel, dtype=np.float64)
    if gumbel.shape != shape:
        raise ShapeError(f"noise {gumbel.shape} does not match expected {shape}")
    m = softmax(np.log(params.alpha) + gumbel, temp, axis=-1)
    return ConcreteSampleBatch(m, gumbel, float(temp))


def selector_forward_train(x, sample: ConcreteSampleBatch):
    """Soft selection ``X @ m.T`` (column i is node i's convex combination)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != sample.m.shape[1]:
        raise ShapeError(f"data {x.shape} vs selector over {sample.m.shape[1]} features")
    return x @ sample.m.T


def selected_indices(params: SelectorParams) -> np.ndarray:
    # np.argmax returns the first maximum: lowest index wins ties
    return np.argmax(params.alpha, axis=1)


def selector_forward_test(x, params: SelectorParams):
    """Hard selection: ``(X[:, idx], idx)`` with ``idx`` the per-node argmax."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.d:
        raise ShapeError(f"data {x.shape} vs selector over {params.d} features")
    idx = selected_indices(params)
    return x[:, idx], idx


def duplicate_selections(indices):
    """Feature indices picked by more than one node, ascending."""
    values, counts = np.unique(np.asarray(indices), return_counts=True)
    return [int(v) for v in values[counts > 1]]


def selector_backward(x, sample: ConcreteSampleBatch, params: SelectorParams, upstream):
    """Gradients of the loss w.r.t. ``alpha`` and ``x``.

    ``upstream`` is dL/d(X @ m.T), shape ``(n, k)``.  Returns
    ``(grad_alpha, grad_log_alpha, grad_x)``.
    """
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (x.shape[0], sample.m.shape[0]):
        raise ShapeError(f"upstream {upstream.shape} vs output ({x.shape[0]}, {sample.m.shape[0]})")
    m = sample.m
    grad_m = upstream.T @ x  # (k, d)
    # softmax Jacobian-vector product, row by row
    grad_z = m * (grad_m - np.sum(grad_m * m, axis=1, keepdims=True))
    grad_log_alpha = grad_z / sample.temperature
    grad_alpha = grad_log_alpha / params.alpha
    grad_x = upstream @ m
    return grad_alpha, grad_log_alpha, grad_x


def max_probability(sample: ConcreteSampleBatch) -> float:
    """Mean over nodes (and draws) of the largest entry of each sample."""
    return float(np.mean(np.max(sample.m, axis=-1)))


def mean_max_probability(params: SelectorParams, temp: float, rng: Rng, n_samples: int = 1,
                         gumbel=None) -> float:
    """Monte Carlo estimate of the mean-max statistic over ``n_samples`` draws.

    ``gumbel`` (shape ``(n_samples, k, d)``) replaces the random noise.
    """
    if n_samples < 1:
        raise ParameterError(f"n_samples must be >= 1, got {n_samples}")
    return max_probability(concrete_sample(params, temp, rng, gumbel=gumbel, draws=n_samples))


def feature_groups(params: SelectorParams, top_t: int):
    """For each node, the ``top_t`` feature indices by descending weight."""
    if not 1 <= top_t <= params.d:
        raise ParameterError(f"top_t must be in [1, {params.d}], got {top_t}")
    order = np.argsort(-params.alpha, axis=1, kind="stable")
    return order[:, :top_t]
