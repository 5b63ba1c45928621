"""End-to-end pipeline: filter, crop, split, CSP, features, normalizer, DQN, metrics.

All randomness flows from ``config.seed`` through named :class:`Rng` streams.
Every fitted object (CSP filters, normalizer, network) only sees training
indices.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import shutil
import tempfile
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from ..csp import csp_space_transform, fit_csp_ovr
from ..dsp import crop_epochs, design_butterworth_bandpass, filter_epochs
from ..errors import EegDqnError
from ..features import WelchParams, apply_normalizer, assemble_1d, assemble_2d, fit_normalizer
from ..mathcore import Rng
from ..qnet import QNetworkSpec, init_params, reshape_features
from ..rl import (ClassificationEnv, DqnHyper, EpsilonSchedule, RewardStructure, dqn_train,
                  evaluate_reward_accuracy, greedy_policy)
from .container import load_dataset
from .metrics import compute_metrics, summarize_folds
from .splits import kfold_indices, stratified_split
from .synthetic import generate_synthetic

__all__ = [
    "REPORT_SCHEMA_VERSION", "REWARD_ACCURACY_FORMULA", "StageError", "FoldResult",
    "load_epochs", "preprocess", "fit_features", "build_spec", "train_agent", "evaluate_agent",
    "fit_and_evaluate", "run_pipeline", "build_report", "write_report", "report_json",
    "folds_csv", "CSV_COLUMNS",
]

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
REWARD_ACCURACY_FORMULA = "clamp(mean greedy episode return / (n_test * r_correct), 0, 1)"
CSV_COLUMNS = ["fold", "n_train", "n_test", "accuracy", "precision_macro", "recall_macro",
               "f1_macro", "reward_based_accuracy"]


class StageError(EegDqnError):
    """A pipeline stage failed; ``stage`` names it and ``__cause__`` holds the error."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def stage(name):
    try:
        yield
    except StageError:
        raise
    except (EegDqnError, ValueError, ArithmeticError, IndexError, OSError) as exc:
        raise StageError(name, exc) from exc


def load_epochs(config):
    """Dataset from ``dataset.path`` or the synthetic generator."""
    ds = config.dataset
    if ds["path"] is not None:
        return load_dataset(ds["path"])
    return generate_synthetic(**ds["synthetic"])


def preprocess(config, epochs):
    """Band-pass every trial, then crop to the configured window."""
    pre = config.preprocessing
    lo, hi = pre["band"]
    filt = design_butterworth_bandpass(lo, hi, epochs.sample_rate_hz, pre["order"])
    out = filter_epochs(filt, epochs)
    start, stop = pre["window"]
    length = out.n_samples / out.sample_rate_hz
    if start > 0 or (stop is not None and stop < length):
        out = crop_epochs(out, start, length if stop is None else stop)
    return out


def welch_params(config):
    f = config.features
    return WelchParams(nfft=f["nfft"], overlap=f["overlap"], window=f["window"],
                       averaging=f["averaging"])


def _assemble(config, csp_epochs):
    f = config.features
    bands = tuple(tuple(b) for b in f["bands"])
    if f["layout"] == "grid_2d":
        return assemble_2d(csp_epochs, bands=bands, welch=welch_params(config))
    names = [f"csp{c}.{r}" for c, r in csp_epochs.provenance]
    bad = [i for i in f["psd_channels"] if i >= len(names)]
    if bad:
        raise ValueError(f"psd_channels {bad} out of range for {len(names)} CSP components")
    view = SimpleNamespace(data=csp_epochs.data, labels=csp_epochs.labels,
                           sample_rate_hz=csp_epochs.sample_rate_hz, channel_names=names)
    return assemble_1d(view, [names[i] for i in f["psd_channels"]], bands, welch_params(config))


def fit_features(config, epochs, train_idx, test_idx):
    """Fit CSP and the normalizer on the training trials; transform both splits.

    Returns ``(csp_model, normalizer, train_features, test_features)``.
    """
    train, test = epochs.subset(train_idx), epochs.subset(test_idx)
    with stage("csp"):
        model = fit_csp_ovr(train, config.csp["m"], config.csp["normalize_trace"],
                            config.csp["shrinkage"])
        ctr, cte = csp_space_transform(model, train), csp_space_transform(model, test)
    with stage("features"):
        ftr, fte = _assemble(config, ctr), _assemble(config, cte)
    with stage("normalizer"):
        norm = fit_normalizer(ftr, config.features["normalizer"])
        ftr, fte = apply_normalizer(norm, ftr), apply_normalizer(norm, fte)
    return model, norm, ftr, fte


def build_spec(config, features, n_classes):
    shape = reshape_features(features).shape
    return QNetworkSpec(shape[1], shape[2], n_classes, **config.qnet)


def _hyper(config):
    rl = config.rl
    return DqnHyper(gamma=rl["gamma"], lr0=rl["lr0"], decay=rl["decay"],
                    batch_size=rl["batch_size"], warmup=rl["warmup"],
                    target_sync=rl["target_sync"], replay_capacity=rl["replay_capacity"],
                    huber_delta=rl["huber_delta"], clip_norm=rl["clip_norm"])


def rewards_of(config):
    return RewardStructure(*config.rl["reward"])


def _env(config, features, n_classes):
    obs = reshape_features(features)
    return ClassificationEnv(obs, features.labels, n_classes, rewards_of(config))


def train_agent(config, train_features, n_classes, rng):
    """Build and train a Q-network; returns ``(spec, params, training_log)``."""
    spec = build_spec(config, train_features, n_classes)
    params = init_params(spec, rng.spawn("init"))
    rl = config.rl
    schedule = EpsilonSchedule(rl["epsilon_start"], rl["epsilon_end"], config.tau)
    tlog = dqn_train(_env(config, train_features, n_classes), params, spec, schedule,
                     rl["intervals"], _hyper(config), rng.spawn("train"))
    return spec, params, tlog


def evaluate_agent(config, spec, params, test_features, n_classes, rng):
    """Test-set metrics plus reward-based accuracy over greedy episodes."""
    policy = greedy_policy(params, spec)
    obs = reshape_features(test_features)
    pred = np.array([policy(x) for x in obs], dtype=np.int64)
    metrics = compute_metrics(test_features.labels, pred, n_classes)
    env = _env(config, test_features, n_classes)
    metrics["reward_based_accuracy"] = evaluate_reward_accuracy(
        env, policy, config.eval["episodes"], rng.spawn("eval"))
    return metrics, pred


@dataclass
class FoldResult:
    fold: object
    train_idx: np.ndarray
    test_idx: np.ndarray
    metrics: dict
    training: list
    refused_steps: int
    csp_model: object = None
    normalizer: object = None
    spec: object = None
    params: object = None
    extra: dict = field(default_factory=dict)

    def row(self):
        m = self.metrics
        return {"fold": self.fold, "n_train": len(self.train_idx), "n_test": len(self.test_idx),
                **{k: m[k] for k in CSV_COLUMNS[3:]}}


def fit_and_evaluate(config, epochs, train_idx, test_idx, rng, fold="holdout"):
    """Refit every stage on ``train_idx`` and score on ``test_idx``."""
    n_classes = epochs.n_classes
    model, norm, ftr, fte = fit_features(config, epochs, train_idx, test_idx)
    with stage("train"):
        spec, params, tlog = train_agent(config, ftr, n_classes, rng)
    with stage("eval"):
        metrics, _ = evaluate_agent(config, spec, params, fte, n_classes, rng)
    return FoldResult(fold, np.asarray(train_idx), np.asarray(test_idx), metrics,
                      tlog.interval_summary(), len(tlog.refused_steps), model, norm, spec, params)


def run_pipeline(config, out_dir=None):
    """Run the configured experiment; returns the report dict (and writes it if ``out_dir``)."""
    t0 = time.perf_counter()
    root = Rng(config.seed)
    with stage("load"):
        epochs = load_epochs(config)
    with stage("preprocess"):
        epochs = preprocess(config, epochs)
    with stage("split"):
        train_idx, test_idx = stratified_split(epochs.labels, config.eval["test_fraction"],
                                               root.spawn("split"))
    holdout = fit_and_evaluate(config, epochs, train_idx, test_idx, root.spawn("holdout"))
    folds = []
    if config.eval["folds"]:
        with stage("split"):
            parts = kfold_indices(epochs.labels, config.eval["folds"], root.spawn("kfold"))
        every = np.arange(epochs.n_trials)
        for k, test in enumerate(parts):
            train = np.setdiff1d(every, test)
            log.info("fold %d/%d", k + 1, len(parts))
            folds.append(fit_and_evaluate(config, epochs, train, test,
                                          root.spawn(f"fold{k}"), fold=k))
    report = build_report(config, holdout, folds, time.perf_counter() - t0)
    if out_dir is not None:
        write_report(out_dir, report, holdout)
    return report


def _holdout_section(result):
    if result is None:
        return None
    m = result.metrics
    return {
        "n_train": len(result.train_idx),
        "n_test": len(result.test_idx),
        **{k: m[k] for k in ("accuracy", "precision_macro", "recall_macro", "f1_macro",
                             "reward_based_accuracy", "confusion_matrix", "support",
                             "precision_per_class", "recall_per_class", "f1_per_class")},
        "training": result.training,
        "refused_steps": result.refused_steps,
    }


def build_report(config, holdout, folds, runtime_s):
    """Report dict; ``holdout`` may be ``None`` for k-fold-only runs."""
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "seed": config.seed,
        "reward_structure": list(config.rl["reward"]),
        "reward_based_accuracy_formula": REWARD_ACCURACY_FORMULA,
        "holdout": _holdout_section(holdout),
        "folds": [f.row() | {"confusion_matrix": f.metrics["confusion_matrix"]} for f in folds],
        "fold_summary": summarize_folds([f.metrics for f in folds]),
        "config": config.to_dict(),
        # the only field allowed to differ between identical runs
        "timestamp": {"utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
                      "runtime_s": round(runtime_s, 3)},
    }


def report_json(report):
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=True) + "\n"


def folds_csv(report):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    rows = report["folds"] or [{"fold": "holdout", **report["holdout"]}]
    for row in rows:
        w.writerow({k: row[k] for k in CSV_COLUMNS})
    return buf.getvalue()


def write_report(out_dir, report, holdout=None):
    """Write ``report.json``, ``folds.csv`` and fitted artifacts atomically.

    Files are staged in a temporary directory and moved into place only once
    all of them have been written, so a failure leaves no partial outputs.
    """
    from .artifacts import save_csp_model, save_normalizer, save_qnet

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".partial-", dir=out))
    try:
        (tmp / "report.json").write_text(report_json(report))
        (tmp / "folds.csv").write_text(folds_csv(report))
        if holdout is not None:
            save_csp_model(tmp / "csp_model.npz", holdout.csp_model)
            save_normalizer(tmp / "normalizer.npz", holdout.normalizer)
            save_qnet(tmp / "qnet.npz", holdout.spec, holdout.params)
        for f in tmp.iterdir():
            f.replace(out / f.name)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    return out
