"""Command-line interface.

Staged verbs share a working directory (``--out``), each reading the previous
stage's files from it unless ``--input`` points elsewhere::

    synth       -> dataset.mieg
    preprocess  -> preprocessed.mieg
    csp-fit     -> split.npz, csp_model.npz
    features    -> features.npz, normalizer.npz
    train       -> qnet.npz, training.csv
    eval        -> metrics.json
    crossval    -> report.json, folds.csv  (k-fold only)
    report      -> report.json, folds.csv and fitted artifacts (full run)
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from ..errors import EegDqnError
from ..mathcore import Rng
from . import artifacts as art
from .config import default_config, load_config
from .container import load_dataset, save_dataset
from .pipeline import (StageError, build_report, evaluate_agent, fit_and_evaluate, fit_features,
                       load_epochs, preprocess, report_json, run_pipeline, stage, train_agent,
                       write_report)
from .splits import kfold_indices, stratified_split

log = logging.getLogger("eegdqn")

VERBS = ("synth", "preprocess", "csp-fit", "features", "train", "eval", "crossval", "report")


def _pair(text):
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two numbers like 1,0; got {text!r}") from None
    return a, b


def _intervals(text):
    try:
        vals = [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers like 3000,400,400; got {text!r}") from None
    return vals


def _u64(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="eegdqn", description="CSP + DQN motor-imagery EEG pipeline")
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", help="YAML run configuration (defaults apply when omitted)")
    p.add_argument("--seed", type=_u64, help="overrides the config seed")
    p.add_argument("--out", default=".", help="working / output directory (default: .)")
    p.add_argument("--input", help="input file for the verb (default: previous stage's output)")
    p.add_argument("--reward", type=_pair, metavar="R_C,R_I", help="reward structure override")
    p.add_argument("--intervals", type=_intervals, metavar="A,B,C",
                   help="training interval lengths override")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def _config(args):
    cfg = load_config(args.config) if args.config else default_config()
    return cfg.with_overrides(seed=args.seed, reward=args.reward, intervals=args.intervals)


def _in(args, out, default):
    return Path(args.input) if args.input else out / default


def _atomic(path, write):
    """Run ``write(tmp_path)`` then move the result over ``path``."""
    tmp = path.with_name(f".partial-{path.name}")
    try:
        write(tmp)
        tmp.replace(path)
    finally:
        if tmp.exists():
            tmp.unlink()


def cmd_synth(cfg, args, out):
    with stage("load"):
        epochs = load_epochs(cfg)
    _atomic(out / "dataset.mieg", lambda p: save_dataset(p, epochs))
    return f"wrote {out / 'dataset.mieg'} ({epochs.n_trials} trials)"


def cmd_preprocess(cfg, args, out):
    with stage("load"):
        epochs = load_dataset(_in(args, out, "dataset.mieg"))
    with stage("preprocess"):
        epochs = preprocess(cfg, epochs)
    _atomic(out / "preprocessed.mieg", lambda p: save_dataset(p, epochs))
    return f"wrote {out / 'preprocessed.mieg'}"


def _split(cfg, epochs):
    with stage("split"):
        return stratified_split(epochs.labels, cfg.eval["test_fraction"],
                                Rng(cfg.seed).spawn("split"))


def cmd_csp_fit(cfg, args, out):
    with stage("load"):
        epochs = load_dataset(_in(args, out, "preprocessed.mieg"))
    train, test = _split(cfg, epochs)
    model, _, _, _ = fit_features(cfg, epochs, train, test)
    _atomic(out / "split.npz", lambda p: art.save_split(p, train, test, cfg.seed))
    _atomic(out / "csp_model.npz", lambda p: art.save_csp_model(p, model))
    return f"wrote {out / 'csp_model.npz'} ({model.n_classes} x {model.m} filters)"


def cmd_features(cfg, args, out):
    with stage("load"):
        epochs = load_dataset(_in(args, out, "preprocessed.mieg"))
        train, test = art.load_split(out / "split.npz") if (out / "split.npz").exists() \
            else _split(cfg, epochs)
    _, norm, ftr, fte = fit_features(cfg, epochs, train, test)
    _atomic(out / "features.npz", lambda p: art.save_features(p, {"train": ftr, "test": fte}))
    _atomic(out / "normalizer.npz", lambda p: art.save_normalizer(p, norm))
    return f"wrote {out / 'features.npz'} (train {ftr.data.shape}, test {fte.data.shape})"


def _n_classes(tensors):
    return int(max(t.labels.max() for t in tensors.values())) + 1


def cmd_train(cfg, args, out):
    with stage("load"):
        tensors = art.load_features(_in(args, out, "features.npz"))
    with stage("train"):
        spec, params, tlog = train_agent(cfg, tensors["train"], _n_classes(tensors),
                                         Rng(cfg.seed).spawn("holdout"))
    _atomic(out / "qnet.npz", lambda p: art.save_qnet(p, spec, params,
                                                      {"n_classes": spec.n_actions}))

    def write_log(p):
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "interval", "epsilon", "reward", "loss"])
            for r in tlog.records:
                w.writerow([r.step, r.interval, repr(r.epsilon), repr(r.reward),
                            "" if r.loss is None else repr(r.loss)])
    _atomic(out / "training.csv", write_log)
    return f"wrote {out / 'qnet.npz'} after {tlog.env_steps} steps"


def cmd_eval(cfg, args, out):
    with stage("load"):
        tensors = art.load_features(_in(args, out, "features.npz"))
        spec, params, _ = art.load_qnet(out / "qnet.npz")
    with stage("eval"):
        metrics, _ = evaluate_agent(cfg, spec, params, tensors["test"], spec.n_actions,
                                    Rng(cfg.seed).spawn("holdout"))
    metrics["reward_structure"] = list(cfg.rl["reward"])
    text = json.dumps(metrics, indent=2, sort_keys=True) + "\n"
    _atomic(out / "metrics.json", lambda p: p.write_text(text))
    return (f"accuracy {metrics['accuracy']:.4f}  macro F1 {metrics['f1_macro']:.4f}  "
            f"reward-based accuracy {metrics['reward_based_accuracy']:.4f}")


def cmd_crossval(cfg, args, out):
    t0 = time.perf_counter()
    if not cfg.eval["folds"]:
        cfg = cfg.with_overrides()
        cfg.eval["folds"] = 10
    root = Rng(cfg.seed)
    with stage("load"):
        epochs = load_epochs(cfg) if not args.input else load_dataset(args.input)
    with stage("preprocess"):
        epochs = preprocess(cfg, epochs)
    with stage("split"):
        parts = kfold_indices(epochs.labels, cfg.eval["folds"], root.spawn("kfold"))
    every = np.arange(epochs.n_trials)
    folds = [fit_and_evaluate(cfg, epochs, np.setdiff1d(every, test), test,
                              root.spawn(f"fold{k}"), fold=k) for k, test in enumerate(parts)]
    report = build_report(cfg, None, folds, time.perf_counter() - t0)
    write_report(out, report)
    s = report["fold_summary"]["accuracy"]
    return f"{len(folds)}-fold accuracy {s['mean']:.4f} +/- {s['std']:.4f}"


def cmd_report(cfg, args, out):
    if args.input:
        cfg = cfg.with_overrides()
        cfg.dataset["path"] = args.input
    report = run_pipeline(cfg, out)
    h = report["holdout"]
    return (f"wrote {out / 'report.json'}: accuracy {h['accuracy']:.4f}, "
            f"reward-based accuracy {h['reward_based_accuracy']:.4f}")


COMMANDS = {
    "synth": cmd_synth, "preprocess": cmd_preprocess, "csp-fit": cmd_csp_fit,
    "features": cmd_features, "train": cmd_train, "eval": cmd_eval,
    "crossval": cmd_crossval, "report": cmd_report,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        print(COMMANDS[args.verb](cfg, args, out))
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (EegDqnError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
