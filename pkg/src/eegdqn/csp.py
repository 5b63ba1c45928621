"""One-versus-rest common spatial patterns and a softmax-regression sanity baseline.

For each class ``i`` the filters maximize the Rayleigh quotient
``w' S_i w / w' (S_i + S_rest) w``, which orders filters exactly like the
``S_i / S_rest`` ratio while keeping eigenvalues in ``[0, 1]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConstantSignalError,
    InsufficientDataError,
    InvalidParameterError,
)
from .features import FeatureTensor
from .mathcore import SHRINKAGE, covariance, generalized_eigh

__all__ = [
    "CspOvrModel",
    "CspSpaceEpochs",
    "LinearBaseline",
    "class_covariances",
    "fit_csp_ovr",
    "csp_space_transform",
    "csp_logvar_features",
    "fit_linear_baseline",
    "predict_baseline",
]


@dataclass(frozen=True)
class CspOvrModel:
    n_classes: int
    m: int
    filters: np.ndarray  # n_classes x m x channels; rows are w'
    eigenvalues: np.ndarray  # n_classes x m, descending per class
    n_channels: int
    trace_normalized: bool = True
    shrinkage: float = SHRINKAGE

    @property
    def stacked_filters(self):
        """``(n_classes * m) x channels``, class-major then rank."""
        return self.filters.reshape(-1, self.n_channels)

    def component_provenance(self):
        return [(c, r) for c in range(self.n_classes) for r in range(self.m)]


@dataclass
class CspSpaceEpochs:
    data: np.ndarray  # trials x components x time
    labels: np.ndarray
    sample_rate_hz: float
    provenance: list = field(default_factory=list)


def _trial_covs(data, normalize_trace):
    return np.stack([covariance(trial, normalize_trace=normalize_trace) for trial in data])


def class_covariances(epochs, normalize_trace=True):
    """Per-class ``(S_class, S_rest)`` pairs from mean trial covariances."""
    covs = _trial_covs(epochs.data, normalize_trace)
    labels = epochs.labels
    out = []
    for k in range(epochs.n_classes):
        own, rest = labels == k, labels != k
        if own.sum() < 2:
            raise InsufficientDataError(f"class {k} has {own.sum()} trials; need >= 2")
        if rest.sum() < 1:
            raise InsufficientDataError("one-versus-rest needs at least two classes")
        out.append((covs[own].mean(axis=0), covs[rest].mean(axis=0)))
    return out


def fit_csp_ovr(epochs, m, normalize_trace=True, shrinkage=SHRINKAGE):
    """Fit ``n_classes`` banks of ``m`` spatial filters, one per target class.

    Each bank holds the top-``m`` generalized eigenvectors of
    ``(S_class, S_class + S_rest)``; rows satisfy ``w' (S_class + S_rest) w = 1``
    for the shrinkage-regularized composite.
    """
    if not 1 <= m <= epochs.n_channels:
        raise InvalidParameterError(f"m must lie in [1, {epochs.n_channels}], got {m}")
    if epochs.n_classes < 2:
        raise InsufficientDataError("one-versus-rest needs at least two classes")
    filters, eigvals = [], []
    for s_class, s_rest in class_covariances(epochs, normalize_trace):
        dec = generalized_eigh(s_class, s_class + s_rest, shrinkage=shrinkage)
        filters.append(dec.eigenvectors[:, :m].T)
        eigvals.append(dec.eigenvalues[:m])
    return CspOvrModel(epochs.n_classes, m, np.stack(filters), np.stack(eigvals),
                       epochs.n_channels, normalize_trace, shrinkage)


def csp_space_transform(model, epochs):
    """Project every trial through all filter banks, keeping the time axis."""
    data = np.asarray(epochs if isinstance(epochs, np.ndarray) else epochs.data, dtype=np.float64)
    if data.ndim != 3 or data.shape[1] != model.n_channels:
        raise InvalidParameterError(
            f"expected trials x {model.n_channels} x time, got shape {data.shape}"
        )
    out = np.einsum("kc,nct->nkt", model.stacked_filters, data)
    labels = epochs.labels.copy() if hasattr(epochs, "labels") else None
    fs = getattr(epochs, "sample_rate_hz", None)
    return CspSpaceEpochs(out, labels, fs, model.component_provenance())


def csp_logvar_features(csp_epochs):
    """``log(var_k / sum_j var_j)`` per component; the classic CSP feature."""
    var = csp_epochs.data.var(axis=2, ddof=1)
    total = var.sum(axis=1, keepdims=True)
    if np.any(total <= 0):
        raise ConstantSignalError("a trial has zero total component variance")
    names = [f"logvar:c{c}r{r}" for c, r in csp_epochs.provenance] or \
        [f"logvar:{k}" for k in range(var.shape[1])]
    return FeatureTensor("flat_1d", np.log(var / total), csp_epochs.labels, names)


@dataclass(frozen=True)
class LinearBaseline:
    weights: np.ndarray  # features x classes
    bias: np.ndarray
    mean: np.ndarray
    scale: np.ndarray


def _design_matrix(features):
    X = features.data if isinstance(features, FeatureTensor) else features
    X = np.asarray(X, dtype=np.float64)
    return X.reshape(len(X), -1)


def fit_linear_baseline(features, labels=None, l2=1e-3, iterations=500, lr=0.1):
    """Multinomial logistic regression by full-batch gradient descent.

    Inputs are standardized with training statistics; weights start at zero so
    the fit is deterministic. The L2 penalty skips the bias.
    """
    X = _design_matrix(features)
    y = np.asarray(features.labels if labels is None else labels)
    classes = np.unique(y)
    if len(classes) < 2:
        raise InsufficientDataError("baseline needs at least two classes")
    k = int(y.max()) + 1
    mean = X.mean(axis=0)
    scale = np.maximum(X.std(axis=0), 1e-12)
    Z = (X - mean) / scale
    W = np.zeros((Z.shape[1], k))
    b = np.zeros(k)
    Y = np.eye(k)[y]
    n = len(Z)
    for _ in range(iterations):
        logits = Z @ W + b
        logits -= logits.max(axis=1, keepdims=True)
        P = np.exp(logits)
        P /= P.sum(axis=1, keepdims=True)
        G = (P - Y) / n
        W -= lr * (Z.T @ G + l2 * W)
        b -= lr * G.sum(axis=0)
    return LinearBaseline(W, b, mean, scale)


def predict_baseline(model, features):
    X = _design_matrix(features)
    return np.argmax(((X - model.mean) / model.scale) @ model.weights + model.bias, axis=1)
