"""Reconstruction metrics, decoder refits, the PCA bound and a linear probe."""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .cae import TrainConfig, train
from .errors import DataError, ParameterError, RankError, ShapeError
from .linreg import LinearMap, fit_least_squares
from .numcore import Rng

log = logging.getLogger(__name__)

METHODS = ("cae", "pca", "variance-filter", "random-selection")
REFIT_EPOCHS = 200


@dataclass
class EvalResult:
    method: str
    k: int
    reconstruction_mse: float
    probe_accuracy: float | None = None
    indices: list = field(default_factory=list)
    runtime_s: float = 0.0


def reconstruction_error(x_true, x_hat):
    """Per-entry mean squared error ``sum((x - x_hat)**2) / (n * d)``."""
    x_true = np.asarray(x_true, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x_true.shape != x_hat.shape:
        raise ShapeError(f"{x_true.shape} vs {x_hat.shape}")
    return float(np.mean((x_true - x_hat) ** 2))


def hidden_size_candidates(k):
    """``[4k/9, 2k/3, k, 3k/2]`` floored to integers (at least 1)."""
    return [max(1, (4 * k) // 9), max(1, (2 * k) // 3), k, max(1, (3 * k) // 2)]


@dataclass
class RefitResult:
    hidden_size: int | None  # None -> closed-form linear map
    val_mse: float
    model: object  # LinearMap or list of DenseLayer
    ridge_used: bool = False

    def predict(self, x):
        if isinstance(self.model, LinearMap):
            return self.model.predict(x)
        return nn.decoder_forward(self.model, x)


def train_decoder(x_in, y, hidden_sizes, epochs=REFIT_EPOCHS, learning_rate=1e-3,
                  batch_size=256, seed=0, x_val=None, y_val=None, patience=None):
    """Fresh MSE-trained network; optional early stopping on validation loss."""
    rng = Rng(seed)
    layers = nn.init_layers(nn.DecoderSpec(tuple(hidden_sizes), y.shape[1]), x_in.shape[1],
                            rng.spawn(0))
    params = nn.layer_params(layers)
    adam = nn.AdamState(learning_rate=learning_rate)
    best, best_params, stale = np.inf, None, 0
    for _ in range(epochs):
        order = rng.permutation(len(x_in))
        for start in range(0, len(x_in), batch_size):
            rows = order[start:start + batch_size]
            cache = nn.ForwardCache()
            out = nn.decoder_forward(layers, x_in[rows], cache)
            _, g = nn.mse_loss(out, y[rows])
            grads, _ = nn.decoder_backward(layers, cache, g)
            nn.adam_step(adam, params, nn.flatten_layer_grads(grads))
        if patience is not None and x_val is not None:
            val = reconstruction_error(y_val, nn.decoder_forward(layers, x_val))
            if val < best:
                best, best_params, stale = val, [p.copy() for p in params], 0
            else:
                stale += 1
                if stale >= patience:
                    break
    if best_params is not None:
        for p, saved in zip(params, best_params):
            p[...] = saved
    return layers


def refit_decoder(train_s, train_x, val_s, val_x, hidden_size_candidates=(None,),
                  epochs=REFIT_EPOCHS, seed=0, patience=None):
    """Fit one reconstruction model per candidate; keep the best on validation.

    A candidate of ``None`` (or 0) is the closed-form least-squares map; an
    integer is a one-hidden-layer network trained for ``epochs`` epochs.
    Ties on validation error go to the smaller model.
    """
    candidates = list(hidden_size_candidates)
    if not candidates:
        raise ParameterError("need at least one decoder candidate")
    train_s, train_x = np.asarray(train_s, float), np.asarray(train_x, float)
    val_s, val_x = np.asarray(val_s, float), np.asarray(val_x, float)
    results = []
    for h in candidates:
        if not h:
            lin = fit_least_squares(train_s, train_x)
            if lin.ridge_used:
                log.warning("least-squares refit was singular; ridge fallback applied")
            res = RefitResult(None, 0.0, lin, lin.ridge_used)
        else:
            layers = train_decoder(train_s, train_x, (h,), epochs=epochs, seed=seed,
                                   x_val=val_s, y_val=val_x, patience=patience)
            res = RefitResult(int(h), 0.0, layers)
        res.val_mse = reconstruction_error(val_x, res.predict(val_s))
        results.append(res)
    # min() keeps the first of equal keys; size 0 stands for the linear map
    return min(results, key=lambda r: (r.val_mse, r.hidden_size or 0))


@dataclass
class ClassifierRefit:
    hidden_size: int | None  # None -> softmax regression
    val_accuracy: float
    layers: list

    def predict(self, x):
        return np.argmax(nn.decoder_forward(self.layers, np.asarray(x, dtype=np.float64)), axis=1)


def train_classifier(x_in, labels, n_classes, hidden_sizes, epochs=REFIT_EPOCHS,
                     learning_rate=1e-3, batch_size=256, seed=0):
    """Fresh softmax-output network trained on cross-entropy with Adam."""
    rng = Rng(seed)
    layers = nn.init_layers(nn.DecoderSpec(tuple(hidden_sizes), n_classes), x_in.shape[1],
                            rng.spawn(0))
    params = nn.layer_params(layers)
    adam = nn.AdamState(learning_rate=learning_rate)
    for _ in range(epochs):
        order = rng.permutation(len(x_in))
        for start in range(0, len(x_in), batch_size):
            rows = order[start:start + batch_size]
            cache = nn.ForwardCache()
            out = nn.decoder_forward(layers, x_in[rows], cache)
            _, g = nn.cross_entropy_loss(out, labels[rows])
            grads, _ = nn.decoder_backward(layers, cache, g)
            nn.adam_step(adam, params, nn.flatten_layer_grads(grads))
    return layers


def refit_classifier(train_s, train_labels, val_s, val_labels, hidden_size_candidates,
                     epochs=REFIT_EPOCHS, seed=0):
    """Retrain a classifier head per hidden size; keep the best validation accuracy.

    Candidates of ``None``/0 mean no hidden layer.  Ties go to the smaller net.
    """
    candidates = list(hidden_size_candidates)
    if not candidates:
        raise ParameterError("need at least one classifier candidate")
    train_s = np.asarray(train_s, dtype=np.float64)
    train_labels = np.asarray(train_labels).astype(np.intp)
    val_labels = np.asarray(val_labels).astype(np.intp)
    n_classes = int(max(train_labels.max(), val_labels.max())) + 1
    results = []
    for h in candidates:
        hidden = (int(h),) if h else ()
        layers = train_classifier(train_s, train_labels, n_classes, hidden, epochs=epochs,
                                  seed=seed)
        res = ClassifierRefit(int(h) if h else None, 0.0, layers)
        res.val_accuracy = float(np.mean(res.predict(val_s) == val_labels))
        results.append(res)
    return min(results, key=lambda r: (-r.val_accuracy, r.hidden_size or 0))


# -- PCA -------------------------------------------------------------------

@dataclass
class PcaModel:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (k, d), orthonormal rows
    eigenvalues: np.ndarray  # (k,), of the covariance, descending

    @property
    def k(self):
        return self.components.shape[0]

    def transform(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components.T


def _top_eigenvectors(gram, k, tol=1e-10, max_iter=1000, seed=0):
    """Power iteration with deflation against already-found vectors.

    Each iterate is re-orthogonalized against the earlier eigenvectors, so
    the returned columns are orthonormal regardless of convergence.
    """
    m = gram.shape[0]
    rng = Rng(seed)
    vecs = np.zeros((m, k))
    vals = np.zeros(k)
    scale = max(np.trace(gram), 1e-300)
    for i in range(k):
        v = rng.uniform(m) - 0.5
        basis = vecs[:, :i]
        for _ in range(2):
            v -= basis @ (basis.T @ v)
        v /= np.linalg.norm(v)
        for _ in range(max_iter):
            w = gram @ v
            w -= basis @ (basis.T @ w)
            norm = np.linalg.norm(w)
            if norm <= 1e-14 * scale:
                raise RankError(f"data rank is below k={k} (component {i} has zero variance)")
            w /= norm
            w -= basis @ (basis.T @ w)
            w /= np.linalg.norm(w)
            done = np.linalg.norm(w - v) < tol
            v = w
            if done:
                break
        vecs[:, i] = v
        vals[i] = v @ gram @ v
    return vals, vecs


def pca_fit(x_train, k, tol=1e-10, max_iter=1000, seed=0) -> PcaModel:
    """Top-``k`` principal axes from whichever Gram matrix is smaller."""
    x = np.asarray(x_train, dtype=np.float64)
    n, d = x.shape
    if not 1 <= k <= min(n, d):
        raise RankError(f"k={k} exceeds min(n, d)={min(n, d)}")
    mean = x.mean(axis=0)
    xc = x - mean
    if d <= n:
        vals, vecs = _top_eigenvectors(xc.T @ xc, k, tol, max_iter, seed)
        components = vecs.T
    else:
        vals, vecs = _top_eigenvectors(xc @ xc.T, k, tol, max_iter, seed)
        components = (xc.T @ vecs / np.sqrt(vals)).T
        # QR removes rounding drift; the sign flip keeps each axis's direction
        q, r = np.linalg.qr(components.T)
        components = (q * np.where(np.diag(r) < 0, -1.0, 1.0)).T
    return PcaModel(mean, components, vals / max(n - 1, 1))


def pca_reconstruct(model: PcaModel, x):
    x = np.asarray(x, dtype=np.float64)
    return model.mean + model.transform(x) @ model.components


# -- linear probe ----------------------------------------------------------

def train_probe(train_s, train_labels, n_classes=None, epochs=200, learning_rate=1e-2,
                batch_size=256, seed=0):
    """Multinomial logistic regression fitted by Adam on cross-entropy."""
    train_s = np.asarray(train_s, dtype=np.float64)
    labels = np.asarray(train_labels).astype(np.intp)
    if len(np.unique(labels)) < 2:
        raise DataError("probe needs at least two classes in the training labels")
    c = int(labels.max()) + 1 if n_classes is None else n_classes
    rng = Rng(seed)
    layer = nn.DenseLayer(np.zeros((train_s.shape[1], c)), np.zeros(c))
    params = nn.layer_params([layer])
    adam = nn.AdamState(learning_rate=learning_rate)
    for _ in range(epochs):
        order = rng.permutation(len(train_s))
        for start in range(0, len(train_s), batch_size):
            rows = order[start:start + batch_size]
            cache = nn.ForwardCache()
            out = nn.decoder_forward([layer], train_s[rows], cache)
            _, g = nn.cross_entropy_loss(out, labels[rows])
            grads, _ = nn.decoder_backward([layer], cache, g)
            nn.adam_step(adam, params, nn.flatten_layer_grads(grads))
    return layer


def probe_accuracy(train_s, train_labels, test_s, test_labels, **kwargs):
    """Test accuracy of a softmax linear probe trained on ``train_s``."""
    test_labels = np.asarray(test_labels).astype(np.intp)
    n_classes = int(max(np.max(train_labels), np.max(test_labels))) + 1
    layer = train_probe(train_s, train_labels, n_classes=n_classes, **kwargs)
    pred = np.argmax(nn.decoder_forward([layer], np.asarray(test_s, dtype=np.float64)), axis=1)
    return float(np.mean(pred == test_labels))


# -- method comparison -----------------------------------------------------

def variance_filter(x_train, k):
    """The ``k`` highest-variance columns (ties to the lower index)."""
    return np.argsort(-np.var(x_train, axis=0), kind="stable")[:k]


def random_selection(d, k, seed):
    return np.sort(Rng(seed).choice(d, k))


def _selection_mse(train_x, test_x, idx):
    lin = fit_least_squares(train_x[:, idx], train_x)
    return reconstruction_error(test_x, lin.predict(test_x[:, idx]))


def compare(methods, train_set, val_set, test_set, k, config: TrainConfig | None = None,
            seed=0, random_seeds=10, probe=True, probe_epochs=200):
    """Run each method on shared splits and return results sorted by MSE.

    The three splits are :class:`~.dataio.Dataset` objects.  Every
    feature-selecting method is scored through a closed-form linear refit
    on the training split; ``random-selection`` reports the mean MSE over
    ``random_seeds`` draws (indices of the first draw).  Probe accuracies
    are computed when labels are present and ``probe`` is true.
    """
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ParameterError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
    xtr, xva, xte = train_set.features, val_set.features, test_set.features
    ytr, yte = train_set.labels, test_set.labels
    with_labels = probe and ytr is not None and yte is not None
    results = []
    for method in methods:
        started = time.perf_counter()
        accuracy = None
        if method == "pca":
            pca = pca_fit(xtr, k, seed=seed)
            mse = reconstruction_error(xte, pca_reconstruct(pca, xte))
            idx = []
            if with_labels:
                accuracy = probe_accuracy(pca.transform(xtr), ytr, pca.transform(xte),
                                          yte, epochs=probe_epochs, seed=seed)
        else:
            if method == "cae":
                cfg = config or TrainConfig(k=k, seed=seed)
                cfg = dataclasses.replace(cfg, k=k, mode="unsupervised")
                _, report = train(xtr, xva, cfg)
                idx = np.array(report.selected)
                mse = _selection_mse(xtr, xte, idx)
            elif method == "variance-filter":
                idx = variance_filter(xtr, k)
                mse = _selection_mse(xtr, xte, idx)
            else:
                draws = [random_selection(xtr.shape[1], k, seed + s) for s in range(random_seeds)]
                idx = draws[0]
                mse = float(np.mean([_selection_mse(xtr, xte, s) for s in draws]))
            if with_labels:
                accuracy = probe_accuracy(xtr[:, idx], ytr, xte[:, idx], yte,
                                          epochs=probe_epochs, seed=seed)
        results.append(EvalResult(method, k, mse, accuracy, [int(i) for i in idx],
                                  time.perf_counter() - started))
    results.sort(key=lambda r: r.reconstruction_mse)
    return results


RESULTS_HEADER = ("method", "k", "recon_mse", "probe_accuracy", "runtime_s", "indices")


def write_results_csv(path, results):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        for r in results:
            acc = "" if r.probe_accuracy is None else f"{r.probe_accuracy:.6g}"
            w.writerow([r.method, r.k, f"{r.reconstruction_mse:.6g}", acc,
                        f"{r.runtime_s:.3f}", ";".join(str(i) for i in r.indices)])
