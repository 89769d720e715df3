"""Feed-forward decoder machinery with hand-written backprop and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ParameterError, ShapeError
from .numcore import Rng, log_softmax, softmax

LEAKY_SLOPE = 0.2
ACTIVATIONS = ("identity", "leaky_relu")


@dataclass
class DenseLayer:
    weights: np.ndarray  # (in_dim, out_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str = "identity"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weights.ndim != 2 or self.weights.shape[1] != self.bias.shape[0]:
            raise ShapeError(
                f"weights {self.weights.shape} incompatible with bias {self.bias.shape}")
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self):
        return self.weights.shape[0]

    @property
    def out_dim(self):
        return self.weights.shape[1]


@dataclass(frozen=True)
class DecoderSpec:
    """Layer widths of a decoder; ``hidden_sizes=()`` is a linear map."""

    hidden_sizes: tuple = ()
    output_dim: int = 1
    dropout: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if any(h < 1 for h in self.hidden_sizes) or self.output_dim < 1:
            raise ParameterError(f"decoder sizes must be >= 1: {self}")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError(f"dropout must be in [0, 1), got {self.dropout}")

    @classmethod
    def parse(cls, text, output_dim):
        """Parse ``linear`` or ``hidden:<n>[,<n>...]``."""
        text = text.strip()
        if text == "linear":
            return cls((), output_dim)
        if text.startswith("hidden:"):
            try:
                sizes = tuple(int(s) for s in text[len("hidden:"):].split(",") if s)
            except ValueError:
                raise ParameterError(f"bad decoder description {text!r}") from None
            return cls(sizes, output_dim)
        raise ParameterError(f"decoder must be 'linear' or 'hidden:<n>[,<n>]', got {text!r}")

    def describe(self):
        if not self.hidden_sizes:
            return "linear"
        return "hidden:" + ",".join(str(h) for h in self.hidden_sizes)


def init_layers(spec: DecoderSpec, input_dim: int, rng: Rng) -> list:
    """Glorot-uniform weights, zero biases; hidden layers use leaky ReLU."""
    sizes = [input_dim, *spec.hidden_sizes, spec.output_dim]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = (2.0 * rng.uniform((fan_in, fan_out)) - 1.0) * limit
        act = "identity" if i == len(sizes) - 2 else "leaky_relu"
        layers.append(DenseLayer(w, np.zeros(fan_out), act))
    return layers


def _activate(z, activation):
    if activation == "leaky_relu":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    return z


def _activation_grad(z, activation):
    if activation == "leaky_relu":
        return np.where(z > 0, 1.0, LEAKY_SLOPE)
    return np.ones_like(z)


@dataclass
class ForwardCache:
    inputs: list = field(default_factory=list)  # input to each layer
    preacts: list = field(default_factory=list)
    masks: list = field(default_factory=list)  # dropout masks (None when off)


def decoder_forward(layers, x, cache: ForwardCache | None = None, dropout=0.0, rng=None):
    """Apply the layer stack row-wise.

    Dropout (inverted scaling) is applied to hidden outputs only when both
    ``dropout > 0`` and an ``rng`` are given, i.e. during training.
    """
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 2:
        raise ShapeError(f"decoder input must be 2-D, got {h.shape}")
    for i, layer in enumerate(layers):
        if h.shape[1] != layer.in_dim:
            raise ShapeError(f"layer {i} expects {layer.in_dim} inputs, got shape {h.shape}")
        z = h @ layer.weights + layer.bias
        if cache is not None:
            cache.inputs.append(h)
            cache.preacts.append(z)
        h = _activate(z, layer.activation)
        mask = None
        if dropout > 0 and rng is not None and i < len(layers) - 1:
            mask = (rng.uniform(h.shape) >= dropout) / (1.0 - dropout)
            h = h * mask
        if cache is not None:
            cache.masks.append(mask)
    return h


def decoder_backward(layers, cache: ForwardCache, grad_out):
    """Return ``([(dW, db), ...], d_input)`` for upstream gradient ``grad_out``."""
    grads = [None] * len(layers)
    g = grad_out
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        if cache.masks[i] is not None:
            g = g * cache.masks[i]
        g = g * _activation_grad(cache.preacts[i], layer.activation)
        grads[i] = (cache.inputs[i].T @ g, g.sum(axis=0))
        g = g @ layer.weights.T
    return grads, g


def mse_loss(predicted, target):
    """Per-entry mean squared error and its gradient w.r.t. ``predicted``."""
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if predicted.shape != target.shape:
        raise ShapeError(f"prediction {predicted.shape} vs target {target.shape}")
    diff = predicted - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


def cross_entropy_loss(logits, labels):
    """Mean softmax cross-entropy over rows and its gradient w.r.t. ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"{n} rows of logits but labels have shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise DataError(f"labels must lie in [0, {c}), got range "
                        f"[{labels.min()}, {labels.max()}]")
    labels = labels.astype(np.intp)
    rows = np.arange(n)
    loss = -float(np.mean(log_softmax(logits)[rows, labels]))
    grad = softmax(logits)
    grad[rows, labels] -= 1.0
    return loss, grad / n


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)


def adam_step(state: AdamState, params, grads):
    """In-place bias-corrected Adam update of every array in ``params``."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameter arrays but {len(grads)} gradients")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"parameter {p.shape} vs gradient {np.shape(g)}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
    return params


def layer_params(layers):
    """Flat parameter list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
    out = []
    for layer in layers:
        out.extend((layer.weights, layer.bias))
    return out


def flatten_layer_grads(grads):
    out = []
    for dw, db in grads:
        out.extend((dw, db))
    return out


def grad_check(loss_fn, params, h=1e-5, masks=None):
    """Largest ``|analytic - numeric| / max(1, |analytic|)`` over all entries.

    ``loss_fn(params)`` must return ``(loss, grads)`` with ``grads`` shaped like
    ``params`` and must be deterministic.  ``masks`` (optional, one boolean
    array per parameter) selects which entries to probe.
    """
    _, analytic = loss_fn(params)
    worst = 0.0
    for idx, p in enumerate(params):
        a = np.asarray(analytic[idx], dtype=np.float64)
        for pos in np.ndindex(p.shape):
            if masks is not None and not masks[idx][pos]:
                continue
            orig = p[pos]
            p[pos] = orig + h
            up, _ = loss_fn(params)
            p[pos] = orig - h
            down, _ = loss_fn(params)
            p[pos] = orig
            numeric = (up - down) / (2.0 * h)
            err = abs(a[pos] - numeric) / max(1.0, abs(a[pos]))
            worst = max(worst, err)
    return worst
