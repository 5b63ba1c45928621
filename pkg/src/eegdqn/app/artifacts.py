"""Save and load fitted pipeline state as ``.npz`` artifacts."""
from __future__ import annotations

import numpy as np

from ..csp import CspOvrModel
from ..errors import FormatError
from ..features import FeatureTensor, NormalizerState
from ..qnet import QNetworkParams, QNetworkSpec
from .container import load_artifact, save_artifact

__all__ = [
    "save_csp_model", "load_csp_model",
    "save_normalizer", "load_normalizer",
    "save_features", "load_features",
    "save_qnet", "load_qnet",
    "save_split", "load_split",
]


def save_csp_model(path, model):
    save_artifact(path, "csp_model", {"filters": model.filters, "eigenvalues": model.eigenvalues},
                  {"n_classes": model.n_classes, "m": model.m, "n_channels": model.n_channels,
                   "trace_normalized": model.trace_normalized, "shrinkage": model.shrinkage})


def load_csp_model(path):
    arrays, meta = load_artifact(path, "csp_model")
    return CspOvrModel(meta["n_classes"], meta["m"], arrays["filters"], arrays["eigenvalues"],
                       meta["n_channels"], meta["trace_normalized"], meta["shrinkage"])


def save_normalizer(path, state):
    arrays = {k: getattr(state, k) for k in ("lo", "hi", "mean", "std")
              if getattr(state, k) is not None}
    save_artifact(path, "normalizer", arrays, {"kind": state.kind})


def load_normalizer(path):
    arrays, meta = load_artifact(path, "normalizer")
    return NormalizerState(meta["kind"], **arrays)


def save_features(path, tensors):
    """``tensors`` maps a split name (``train``, ``test``) to a :class:`FeatureTensor`."""
    arrays, meta = {}, {}
    for name, t in tensors.items():
        arrays[f"{name}_data"] = t.data
        arrays[f"{name}_labels"] = t.labels
        meta[name] = {"layout": t.layout, "feature_names": list(t.feature_names)}
    save_artifact(path, "features", arrays, meta)


def load_features(path):
    arrays, meta = load_artifact(path, "features")
    return {name: FeatureTensor(m["layout"], arrays[f"{name}_data"], arrays[f"{name}_labels"],
                                m["feature_names"]) for name, m in meta.items()}


def save_qnet(path, spec, params, extra=None):
    arrays = {f"w:{k}": v for k, v in params.weights.items()}
    arrays["running_mean"] = params.running_mean
    arrays["running_var"] = params.running_var
    save_artifact(path, "qnet", arrays,
                  {"spec": spec.to_dict(), "step": params.step, "extra": extra or {}})


def load_qnet(path):
    """Return ``(spec, params, extra)``; optimizer moments are not stored."""
    arrays, meta = load_artifact(path, "qnet")
    try:
        spec = QNetworkSpec(**meta["spec"])
    except TypeError as exc:
        raise FormatError(f"{path}: bad network spec ({exc})") from None
    weights = {k[2:]: v for k, v in arrays.items() if k.startswith("w:")}
    params = QNetworkParams(weights, arrays["running_mean"], arrays["running_var"],
                            step=int(meta["step"]))
    return spec, params, meta.get("extra", {})


def save_split(path, train_idx, test_idx, seed):
    save_artifact(path, "split", {"train": np.asarray(train_idx), "test": np.asarray(test_idx)},
                  {"seed": seed})


def load_split(path):
    arrays, _ = load_artifact(path, "split")
    return arrays["train"].astype(np.int64), arrays["test"].astype(np.int64)
