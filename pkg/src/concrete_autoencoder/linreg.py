"""Closed-form multi-output least squares with an intercept."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

log = logging.getLogger(__name__)

RIDGE_FALLBACK = 1e-8
_RCOND = 1e-12


@dataclass
class LinearMap:
    weights: np.ndarray  # (p, q)
    bias: np.ndarray  # (q,)
    ridge_used: bool = False

    def predict(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.weights.shape[0]:
            raise ShapeError(f"input {x.shape} vs map from {self.weights.shape[0]} features")
        return x @ self.weights + self.bias


def fit_least_squares(x, y) -> LinearMap:
    """Minimize ``||x W + b - y||_F`` through the centered normal equations.

    Near-singular systems (condition number above 1e12, e.g. duplicated or
    constant columns) are solved with a ridge of 1e-8 and flagged.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ShapeError(f"cannot regress {y.shape} on {x.shape}")
    x_mean = x.mean(axis=0)
    y_mean = y.mean(axis=0)
    xc = x - x_mean
    gram = xc.T @ xc
    rhs = xc.T @ (y - y_mean)
    eig = np.linalg.eigvalsh(gram)
    ridge = eig[0] <= _RCOND * max(eig[-1], 1.0)
    if ridge:
        log.debug("least squares system is singular; using ridge %g", RIDGE_FALLBACK)
        gram = gram + RIDGE_FALLBACK * np.eye(gram.shape[0])
    w = np.linalg.solve(gram, rhs)
    return LinearMap(w, y_mean - x_mean @ w, ridge)
