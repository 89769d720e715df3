"""The concrete autoencoder: selector + decoder, training, selection, imputation."""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ModeError, ParameterError, ShapeError, TrainingDivergenceError
from .linreg import fit_least_squares
from .numcore import Rng
from .selector import (
    AnnealSchedule,
    ConcreteSampleBatch,
    SelectorParams,
    concrete_sample,
    duplicate_selections,
    init_alpha,
    max_probability,
    selector_backward,
    selector_forward_test,
    selector_forward_train,
    temperature,
)

log = logging.getLogger(__name__)

MODES = ("unsupervised", "supervised")
PARAMETRIZATIONS = ("direct", "log")
ABLATION_KINDS = {
    "const_high": "constant_high",
    "const_low": "constant_low",
    "exp": "exponential",
    "abrupt": "abrupt",
}


@dataclass
class TrainConfig:
    k: int
    schedule: AnnealSchedule = field(default_factory=AnnealSchedule)
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int | None = None  # None -> 3 * schedule.epochs
    stop_threshold: float = 0.99
    hidden_sizes: tuple | None = None  # None -> linear (unsup) or (3k/2,) (sup)
    mode: str = "unsupervised"
    seed: int = 0
    dropout: float = 0.0
    refit_val: bool = False  # validation loss from a least-squares refit
    parametrization: str = "direct"  # Adam on alpha itself, or on log(alpha)

    def __post_init__(self):
        if self.k < 1:
            raise ParameterError(f"k must be >= 1, got {self.k}")
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0 < self.stop_threshold <= 1:
            raise ParameterError(f"stop_threshold must be in (0, 1], got {self.stop_threshold}")
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ParameterError("learning_rate must be positive and batch_size >= 1")
        if self.parametrization not in PARAMETRIZATIONS:
            raise ParameterError(f"parametrization must be one of {PARAMETRIZATIONS}, "
                                 f"got {self.parametrization!r}")
        if self.max_epochs is not None and self.max_epochs < 1:
            raise ParameterError(f"max_epochs must be >= 1, got {self.max_epochs}")

    @property
    def epoch_limit(self):
        return self.max_epochs if self.max_epochs is not None else 3 * self.schedule.epochs

    def decoder_hidden(self):
        if self.hidden_sizes is not None:
            return tuple(self.hidden_sizes)
        if self.mode == "supervised":
            return (max(1, 3 * self.k // 2),)
        return ()


@dataclass
class CaeModel:
    selector: SelectorParams
    layers: list
    mode: str = "unsupervised"
    feature_names: list | None = None
    n_classes: int | None = None
    normalization: dict | None = None

    @property
    def k(self):
        return self.selector.k

    @property
    def d(self):
        return self.selector.d

    @property
    def decoder_spec(self):
        hidden = tuple(layer.out_dim for layer in self.layers[:-1])
        return nn.DecoderSpec(hidden, self.layers[-1].out_dim)

    def parameters(self):
        """``[alpha, W0, b0, W1, b1, ...]`` as live views."""
        return [self.selector.alpha, *nn.layer_params(self.layers)]

    def selected_indices(self):
        return selector_forward_test(np.zeros((0, self.d)), self.selector)[1]


@dataclass
class EpochRecord:
    epoch: int
    temperature: float
    mean_max_prob: float
    train_loss: float
    val_loss: float


@dataclass
class TrainReport:
    records: list = field(default_factory=list)
    stop_reason: str = ""
    initial_alpha: np.ndarray | None = None
    selected: list = field(default_factory=list)
    duplicates: list = field(default_factory=list)

    CSV_HEADER = ("epoch", "temperature", "mean_max_prob", "train_loss", "val_loss")

    @property
    def final(self) -> EpochRecord:
        return self.records[-1]

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(self.CSV_HEADER)
            for r in self.records:
                w.writerow([r.epoch] + [f"{getattr(r, c):.6g}" for c in self.CSV_HEADER[1:]])


def loss_and_gradients(model: CaeModel, x, target, sample: ConcreteSampleBatch,
                       dropout=0.0, rng=None):
    """Training-mode loss and gradients for ``model.parameters()``.

    ``target`` is the data itself (unsupervised) or class labels (supervised).
    Returns ``(loss, grads, grad_log_alpha)``.
    """
    xs = selector_forward_train(x, sample)
    cache = nn.ForwardCache()
    out = nn.decoder_forward(model.layers, xs, cache, dropout=dropout, rng=rng)
    if model.mode == "supervised":
        loss, grad_out = nn.cross_entropy_loss(out, target)
    else:
        loss, grad_out = nn.mse_loss(out, target)
    layer_grads, grad_xs = nn.decoder_backward(model.layers, cache, grad_out)
    grad_alpha, grad_log_alpha, _ = selector_backward(x, sample, model.selector, grad_xs)
    return loss, [grad_alpha, *nn.flatten_layer_grads(layer_grads)], grad_log_alpha


def _test_mode_loss(model, x, target):
    xs, _ = selector_forward_test(x, model.selector)
    out = nn.decoder_forward(model.layers, xs)
    if model.mode == "supervised":
        return nn.cross_entropy_loss(out, target)[0]
    return nn.mse_loss(out, target)[0]


def _refit_loss(model, x_train, x_val):
    idx = model.selected_indices()
    lin = fit_least_squares(x_train[:, idx], x_train)
    return nn.mse_loss(lin.predict(x_val[:, idx]), x_val)[0]


def _check_labels(y, x, name):
    if y is None:
        raise ParameterError(f"supervised mode needs {name}")
    y = np.asarray(y)
    if y.shape != (x.shape[0],):
        raise ShapeError(f"{name} shape {y.shape} does not match {x.shape[0]} rows")
    return y.astype(np.intp)


def train(x_train, x_val, config: TrainConfig, y_train=None, y_val=None,
          feature_names=None, n_classes=None, callback=None):
    """Fit a concrete autoencoder; returns ``(model, report)``.

    Epochs are numbered from 1.  Each minibatch draws one Gumbel sample per
    node, so all rows of the batch see the same soft selection.  Training
    stops once the epoch's mean-max statistic exceeds
    ``config.stop_threshold`` or after ``config.epoch_limit`` epochs.
    ``callback(record, model)`` runs after every epoch.
    """
    x_train = np.asarray(x_train, dtype=np.float64)
    n, d = x_train.shape
    if config.k > d:
        raise ParameterError(f"cannot select k={config.k} of d={d} features")
    x_val = None if x_val is None or len(x_val) == 0 else np.asarray(x_val, dtype=np.float64)
    if x_val is not None and x_val.shape[1] != d:
        raise ShapeError(f"validation data has {x_val.shape[1]} columns, expected {d}")
    supervised = config.mode == "supervised"
    if supervised:
        y_train = _check_labels(y_train, x_train, "training labels")
        if x_val is not None:
            y_val = _check_labels(y_val, x_val, "validation labels")
        if n_classes is None:
            n_classes = int(max(y_train.max(), -1 if y_val is None else y_val.max())) + 1
        out_dim = n_classes
    else:
        n_classes = None
        out_dim = d

    root = Rng(config.seed)
    selector = init_alpha(config.k, d, root.spawn(0))
    spec = nn.DecoderSpec(config.decoder_hidden(), out_dim, config.dropout)
    layers = nn.init_layers(spec, config.k, root.spawn(1))
    model = CaeModel(selector, layers, config.mode,
                     list(feature_names) if feature_names is not None else None, n_classes)
    report = TrainReport(initial_alpha=selector.alpha.copy())
    rng = root.spawn(2)
    adam = nn.AdamState(learning_rate=config.learning_rate)
    params = model.parameters()
    log_alpha = None
    if config.parametrization == "log":
        log_alpha = np.log(selector.alpha)
        params[0] = log_alpha

    for epoch in range(1, config.epoch_limit + 1):
        temp = temperature(config.schedule, epoch)
        order = rng.permutation(n)
        loss_sum = 0.0
        mmp_sum = 0.0
        batches = 0
        for start in range(0, n, config.batch_size):
            rows = order[start:start + config.batch_size]
            xb = x_train[rows]
            target = y_train[rows] if supervised else xb
            sample = concrete_sample(selector, temp, rng)
            loss, grads, grad_log_alpha = loss_and_gradients(model, xb, target, sample,
                                                             dropout=config.dropout, rng=rng)
            if not np.isfinite(loss):
                raise TrainingDivergenceError(epoch)
            if log_alpha is not None:
                grads[0] = grad_log_alpha
            nn.adam_step(adam, params, grads)
            if log_alpha is not None:
                np.exp(log_alpha, out=selector.alpha)
            selector.project()
            loss_sum += loss * len(rows)
            mmp_sum += max_probability(sample)
            batches += 1
        train_loss = loss_sum / n
        if x_val is None:
            val_loss = float("nan")
        elif config.refit_val and not supervised:
            val_loss = _refit_loss(model, x_train, x_val)
        else:
            val_loss = _test_mode_loss(model, x_val, y_val if supervised else x_val)
        if not np.isfinite(train_loss) or not all(np.all(np.isfinite(p)) for p in params):
            raise TrainingDivergenceError(epoch)
        record = EpochRecord(epoch, temp, mmp_sum / batches, train_loss, val_loss)
        report.records.append(record)
        log.debug("epoch %d T=%.4g mmp=%.4f train=%.6g val=%.6g", epoch, temp,
                  record.mean_max_prob, train_loss, val_loss)
        if callback is not None:
            callback(record, model)
        if record.mean_max_prob > config.stop_threshold:
            report.stop_reason = "converged"
            break
    else:
        report.stop_reason = "max_epochs"

    report.selected = [int(i) for i in model.selected_indices()]
    report.duplicates = duplicate_selections(report.selected)
    if report.duplicates:
        log.warning("several nodes selected the same feature(s): %s", report.duplicates)
    return model, report


def _check_width(model, x, width, what):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != width:
        raise ShapeError(f"{what} must have {width} columns, got shape {x.shape}")
    return x


def select_features(model: CaeModel, x):
    """Hard selection of the model's ``k`` features: ``(x_S, indices)``."""
    x = _check_width(model, x, model.d, "input")
    return selector_forward_test(x, model.selector)


def impute(model: CaeModel, x_selected):
    """Reconstruct all ``d`` features from the ``k`` selected ones."""
    if model.mode != "unsupervised":
        raise ModeError("imputation needs an unsupervised (reconstruction) model")
    x_selected = _check_width(model, x_selected, model.k, "selected features")
    return nn.decoder_forward(model.layers, x_selected)


def predict_labels(model: CaeModel, x):
    """Class predictions of a supervised model in test (argmax) mode."""
    if model.mode != "supervised":
        raise ModeError("label prediction needs a supervised model")
    xs, _ = select_features(model, x)
    return np.argmax(nn.decoder_forward(model.layers, xs), axis=1)


def reconstruct_train_mode(model: CaeModel, x, sample: ConcreteSampleBatch):
    return nn.decoder_forward(model.layers, selector_forward_train(x, sample))


def schedule_ablation(x_train, x_val, config: TrainConfig, kinds=None, **train_kwargs):
    """Train once per annealing schedule; returns ``{name: (model, report)}``.

    Names are ``const_high``, ``const_low``, ``exp`` and ``abrupt``.  Every
    run uses the same seed and so starts from the same ``alpha``.
    """
    results = {}
    for name in kinds or ABLATION_KINDS:
        schedule = dataclasses.replace(config.schedule, kind=ABLATION_KINDS[name])
        cfg = dataclasses.replace(config, schedule=schedule)
        log.info("ablation run %s", name)
        results[name] = train(x_train, x_val, cfg, **train_kwargs)
    return results
