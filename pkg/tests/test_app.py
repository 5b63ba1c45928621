import csv
import io
import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eegdqn.app import artifacts as art
from eegdqn.app import splits
from eegdqn.app.cli import main
from eegdqn.app.config import config_from_dict, default_config, load_config, parse_config
from eegdqn.app.container import (HEADER_SIZE, dataset_nbytes, decode_dataset, encode_dataset,
                                  load_dataset, save_dataset)
from eegdqn.app.metrics import compute_metrics, confusion_matrix, summarize_folds
from eegdqn.app.pipeline import (CSV_COLUMNS, StageError, fit_features, folds_csv, report_json,
                                 run_pipeline)
from eegdqn.app.synthetic import class_channels, class_frequencies, generate_synthetic
from eegdqn.csp import csp_logvar_features, csp_space_transform, fit_csp_ovr, fit_linear_baseline
from eegdqn.csp import predict_baseline
from eegdqn.dsp import EpochSet
from eegdqn.errors import ConfigError, FormatError, InsufficientDataError, InvalidParameterError
from eegdqn.features import WelchParams, band_power
from eegdqn.mathcore import Rng
from eegdqn.qnet import QNetworkSpec, init_params
from oracles import confusion_oracle, metrics_oracle

# a configuration small enough to run the whole pipeline in about a second
SMALL = {
    "dataset": {"synthetic": {"trials_per_class": 10}},
    "qnet": {"conv1_filters": 8, "conv1_kernel": 3, "conv2_filters": 4, "conv2_kernel": 3,
             "lstm_units": 4, "dense_units": [6]},
    "rl": {"intervals": [200, 40, 40], "warmup": 20, "batch_size": 8},
    "eval": {"episodes": 2},
}


def small_config(**sections):
    d = json.loads(json.dumps(SMALL))
    for k, v in sections.items():
        d.setdefault(k, {}).update(v)
    return config_from_dict(d)


def random_epochs(n=4, c=3, s=10, k=2, seed=0):
    g = np.random.default_rng(seed)
    data = g.standard_normal((n, c, s)).astype(np.float32).astype(np.float64)
    return EpochSet(data, g.integers(k, size=n), 250.0, n_classes=k)


class TestContainer:
    def test_round_trip(self, tmp_path):
        ep = random_epochs()
        save_dataset(tmp_path / "d.mieg", ep)
        back = load_dataset(tmp_path / "d.mieg")
        np.testing.assert_array_equal(back.data, ep.data)
        np.testing.assert_array_equal(back.labels, ep.labels)
        assert back.sample_rate_hz == 250.0 and back.n_classes == 2

    def test_truncated(self):
        buf = encode_dataset(random_epochs())
        with pytest.raises(FormatError, match=f"expected {len(buf)}.*got {len(buf) - 1}"):
            decode_dataset(buf[:-1])

    def test_size_arithmetic(self):
        assert HEADER_SIZE == 28
        assert dataset_nbytes(287, 22, 1000) == 287 * 22 * 1000 * 4 + 287 * 2 + 28

    def test_header_layout(self):
        buf = encode_dataset(random_epochs(n=5, c=3, s=7, k=4))
        assert buf[:4] == b"MIEG"
        assert struct.unpack_from("<IIIIfI", buf, 4) == (1, 5, 3, 7, 250.0, 4)

    @pytest.mark.parametrize("offset,value", [(0, b"XIEG"), (4, struct.pack("<I", 2))])
    def test_bad_magic_and_version(self, offset, value):
        buf = bytearray(encode_dataset(random_epochs()))
        buf[offset:offset + len(value)] = value
        with pytest.raises(FormatError) as exc:
            decode_dataset(bytes(buf))
        assert exc.value.offset == offset

    def test_label_out_of_range(self):
        buf = bytearray(encode_dataset(random_epochs()))
        buf[HEADER_SIZE:HEADER_SIZE + 2] = struct.pack("<H", 9)
        with pytest.raises(FormatError, match="label"):
            decode_dataset(bytes(buf))


class TestArtifacts:
    def test_qnet_round_trip(self, tmp_path):
        spec = QNetworkSpec.tiny()
        p = init_params(spec, Rng(0))
        art.save_qnet(tmp_path / "q.npz", spec, p, {"note": 1})
        spec2, p2, extra = art.load_qnet(tmp_path / "q.npz")
        assert spec2 == spec and extra == {"note": 1}
        for k in p.weights:
            np.testing.assert_array_equal(p.weights[k], p2.weights[k])

    def test_csp_and_split(self, tmp_path):
        ep = generate_synthetic(trials_per_class=5, samples=200)
        m = fit_csp_ovr(ep, 2)
        art.save_csp_model(tmp_path / "c.npz", m)
        np.testing.assert_array_equal(art.load_csp_model(tmp_path / "c.npz").filters, m.filters)
        art.save_split(tmp_path / "s.npz", [0, 2], [1], 3)
        tr, te = art.load_split(tmp_path / "s.npz")
        assert tr.tolist() == [0, 2] and te.tolist() == [1]

    def test_wrong_kind(self, tmp_path):
        art.save_split(tmp_path / "s.npz", [0], [1], 0)
        with pytest.raises(FormatError):
            art.load_csp_model(tmp_path / "s.npz")


class TestSynthetic:
    def test_deterministic(self):
        a = generate_synthetic(trials_per_class=3, seed=5)
        b = generate_synthetic(trials_per_class=3, seed=5)
        np.testing.assert_array_equal(a.data, b.data)
        assert a.metadata["generator"]["seed"] == 5

    def test_invalid(self):
        with pytest.raises(InvalidParameterError):
            generate_synthetic(trials_per_class=0)
        with pytest.raises(InvalidParameterError):
            generate_synthetic(fs=40.0)

    def test_class_band_power_factor(self):
        ep = generate_synthetic()
        freqs = class_frequencies(3)
        w = WelchParams(nfft=250)
        for k in range(3):
            ch = class_channels(k, 8)[0]
            band = (freqs[k] - 2, freqs[k] + 2)
            p = np.array([band_power(w.estimate(x[ch], ep.sample_rate_hz), band) for x in ep.data])
            own = ep.labels == k
            assert p[own].mean() >= 2 * p[~own].mean()

    def test_baseline_separable(self):
        ep = generate_synthetic()
        train, test = splits.stratified_split(ep.labels, 0.2, Rng(0))
        m = fit_csp_ovr(ep.subset(train), 2)
        ftr = csp_logvar_features(csp_space_transform(m, ep.subset(train)))
        fte = csp_logvar_features(csp_space_transform(m, ep.subset(test)))
        model = fit_linear_baseline(ftr)
        assert np.mean(predict_baseline(model, fte.data) == fte.labels) >= 0.95


class TestSplits:
    def test_balanced(self):
        labels = np.repeat(np.arange(4), 25)
        train, test = splits.stratified_split(labels, 0.2, Rng(0))
        assert len(test) == 20
        assert np.bincount(labels[test]).tolist() == [5, 5, 5, 5]
        assert np.intersect1d(train, test).size == 0
        assert np.union1d(train, test).tolist() == list(range(100))

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(2, 40), min_size=2, max_size=6), st.floats(0.05, 0.95),
           st.integers(0, 1000))
    def test_within_one(self, counts, f, seed):
        labels = np.repeat(np.arange(len(counts)), counts)
        labels = labels[np.random.default_rng(seed).permutation(len(labels))]
        train, test = splits.stratified_split(labels, f, Rng(seed))
        per = np.bincount(labels[test], minlength=len(counts))
        assert np.all(np.abs(per - np.array(counts) * f) <= 1)
        assert len(train) + len(test) == len(labels)

    def test_singleton_class(self):
        with pytest.raises(InsufficientDataError):
            splits.stratified_split([0, 0, 1], 0.5, Rng(0))

    def test_shuffled(self):
        labels = np.zeros(50, int)
        labels[25:] = 1
        a = splits.stratified_split(labels, 0.2, Rng(0))[1]
        b = splits.stratified_split(labels, 0.2, Rng(1))[1]
        assert a.tolist() != b.tolist()

    def test_leave_one_out(self):
        folds = splits.kfold_indices([0, 0, 1, 1], 4, Rng(0))
        assert sorted(int(f[0]) for f in folds) == [0, 1, 2, 3]
        assert all(len(f) == 1 for f in folds)

    def test_287_ten_fold(self):
        labels = np.arange(287) % 4
        folds = splits.kfold_indices(labels, 10, Rng(0))
        sizes = sorted(len(f) for f in folds)
        assert set(sizes) <= {28, 29} and sizes.count(29) == 7
        assert np.sort(np.concatenate(folds)).tolist() == list(range(287))
        counts = np.bincount(labels)
        for f in folds:
            per = np.bincount(labels[f], minlength=4)
            assert np.all(np.abs(per - counts / 10) <= 1)

    def test_k_too_large(self):
        with pytest.raises(InvalidParameterError):
            splits.kfold_indices([0, 1, 0], 4, Rng(0))


class TestMetrics:
    def test_perfect(self):
        m = compute_metrics([0, 1, 2, 1], [0, 1, 2, 1])
        assert m["accuracy"] == m["precision_macro"] == m["recall_macro"] == m["f1_macro"] == 1.0
        assert m["confusion_matrix"] == [[1, 0, 0], [0, 2, 0], [0, 0, 1]]

    def test_all_class_zero(self):
        m = compute_metrics([0, 1, 2] * 4, [0] * 12, 3)
        assert m["accuracy"] == pytest.approx(1 / 3)
        assert m["recall_macro"] == pytest.approx(1 / 3)
        assert m["precision_macro"] == pytest.approx(1 / 9)

    def test_length_mismatch(self):
        with pytest.raises(InvalidParameterError):
            compute_metrics([0, 1], [0])

    def test_brute_force_oracle(self):
        g = np.random.default_rng(0)
        for _ in range(1000):
            k = int(g.integers(2, 6))
            n = int(g.integers(1, 40))
            t, p = g.integers(k, size=n), g.integers(k, size=n)
            m, ref = compute_metrics(t, p, k), metrics_oracle(t.tolist(), p.tolist(), k)
            assert m["confusion_matrix"] == ref["confusion_matrix"]
            for key in ("accuracy", "precision_macro", "recall_macro", "f1_macro"):
                assert m[key] == pytest.approx(ref[key], abs=1e-12)
            cm = np.array(m["confusion_matrix"])
            assert cm.sum(axis=1).tolist() == m["support"]
            assert m["accuracy"] == pytest.approx(np.trace(cm) / cm.sum())

    def test_confusion_rows_true(self):
        np.testing.assert_array_equal(confusion_matrix([0, 0, 1], [1, 1, 1], 2),
                                      confusion_oracle([0, 0, 1], [1, 1, 1], 2))
        assert confusion_matrix([0, 0, 1], [1, 1, 1], 2).tolist() == [[0, 2], [0, 1]]

    def test_summary(self):
        s = summarize_folds([{"accuracy": 0.5}, {"accuracy": 1.0}], ["accuracy"])
        assert s["accuracy"]["mean"] == 0.75 and s["accuracy"]["std"] == 0.25


class TestConfig:
    def test_defaults(self):
        cfg = default_config()
        assert cfg.rl["intervals"] == [3000, 400, 400] and cfg.rl["reward"] == [1.0, 0.0]
        assert cfg.tau == 600.0 and cfg.eval["test_fraction"] == 0.2

    def test_unknown_key_line(self):
        with pytest.raises(ConfigError, match=r"line 3: .*'rl\.gama'") as exc:
            parse_config("seed: 1\nrl:\n  gama: 0.9\n")
        assert exc.value.line == 3 and exc.value.key == "rl.gama"

    def test_bad_value_line(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config("eval:\n  test_fraction: 1.5\n")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config("seed: 1\nseed: 2\n")

    def test_malformed(self):
        with pytest.raises(ConfigError, match="malformed"):
            parse_config("rl: [1, 2\n")

    @pytest.mark.parametrize("reward", [[1, 1], [2, 1], [0, -1]])
    def test_bad_reward(self, reward):
        with pytest.raises(ConfigError):
            config_from_dict({"rl": {"reward": reward}})

    def test_qnet_fixed_fields_rejected(self):
        with pytest.raises(ConfigError, match="n_actions"):
            parse_config("qnet:\n  n_actions: 4\n")

    def test_overrides(self):
        cfg = default_config().with_overrides(seed=7, reward=(2, -2), intervals=[10, 5])
        assert cfg.seed == 7 and cfg.rl["reward"] == [2.0, -2.0] and cfg.tau == 2.0
        assert default_config().seed == 0

    def test_round_trip_file(self, tmp_path):
        cfg = small_config()
        path = tmp_path / "c.yaml"
        path.write_text(json.dumps(cfg.to_dict()))
        assert load_config(path).to_dict() == cfg.to_dict()


class TestPipeline:
    def test_report_deterministic_except_timestamp(self):
        cfg = small_config()
        a, b = run_pipeline(cfg), run_pipeline(cfg)
        a.pop("timestamp"), b.pop("timestamp")
        assert report_json(a) == report_json(b)

    def test_report_identities(self):
        r = run_pipeline(small_config(eval={"folds": 3}))
        h = r["holdout"]
        cm = np.array(h["confusion_matrix"])
        assert cm.sum(axis=1).tolist() == h["support"]
        assert h["accuracy"] == pytest.approx(np.trace(cm) / cm.sum())
        assert len(r["folds"]) == 3 and set(r["fold_summary"]) >= {"accuracy", "f1_macro"}
        rows = list(csv.DictReader(io.StringIO(folds_csv(r))))
        assert list(rows[0]) == CSV_COLUMNS and len(rows) == 3
        assert r["schema_version"] == 1
        assert r["reward_based_accuracy_formula"].startswith("clamp(mean greedy episode return")

    def test_writes_outputs(self, tmp_path):
        run_pipeline(small_config(), tmp_path)
        names = {p.name for p in tmp_path.iterdir()}
        assert names == {"report.json", "folds.csv", "csp_model.npz", "normalizer.npz",
                         "qnet.npz"}

    def test_stage_error_named(self, tmp_path):
        cfg = small_config(csp={"m": 9})
        with pytest.raises(StageError) as exc:
            run_pipeline(cfg, tmp_path)
        assert exc.value.stage == "csp"
        assert list(tmp_path.iterdir()) == []

    def test_flat_layout(self):
        r = run_pipeline(small_config(features={"layout": "flat_1d", "normalizer": "minmax_sym"}))
        assert 0.0 <= r["holdout"]["accuracy"] <= 1.0

    def test_train_only_fit(self):
        cfg = small_config()
        ep = generate_synthetic(trials_per_class=10)
        train, test = splits.stratified_split(ep.labels, 0.2, Rng(0))
        m1, n1, _, _ = fit_features(cfg, ep, train, test)
        poisoned = EpochSet(ep.data.copy(), ep.labels, ep.sample_rate_hz, n_classes=3)
        poisoned.data[test] = np.random.default_rng(9).normal(0, 1e3, poisoned.data[test].shape)
        m2, n2, _, _ = fit_features(cfg, poisoned, train, test)
        assert np.array_equal(m1.filters, m2.filters)
        assert np.array_equal(n1.mean, n2.mean) and np.array_equal(n1.std, n2.std)


class TestCli:
    @pytest.fixture
    def cfg_path(self, tmp_path):
        p = tmp_path / "run.yaml"
        p.write_text(json.dumps(SMALL))
        return str(p)

    def test_staged_verbs(self, tmp_path, cfg_path, capsys):
        out = str(tmp_path / "w")
        for verb in ["synth", "preprocess", "csp-fit", "features", "train", "eval"]:
            assert main([verb, "--config", cfg_path, "--out", out, "--seed", "3"]) == 0, verb
        metrics = json.loads((tmp_path / "w" / "metrics.json").read_text())
        assert 0.0 <= metrics["accuracy"] <= 1.0
        assert (tmp_path / "w" / "training.csv").read_text().count("\n") == 281

    def test_report_and_crossval(self, tmp_path, cfg_path):
        out = tmp_path / "r"
        assert main(["report", "--config", cfg_path, "--out", str(out),
                     "--reward", "2,-2", "--intervals", "100,20,20"]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["reward_structure"] == [2.0, -2.0]
        assert report["config"]["rl"]["intervals"] == [100, 20, 20]
        out2 = tmp_path / "cv"
        assert main(["crossval", "--config", cfg_path, "--out", str(out2)]) == 0
        assert len(json.loads((out2 / "report.json").read_text())["folds"]) == 10

    def test_unknown_key_exit_code(self, tmp_path, capsys):
        p = tmp_path / "bad.yaml"
        p.write_text("seed: 0\nrl:\n  gama: 0.9\n")
        assert main(["report", "--config", str(p), "--out", str(tmp_path)]) == 2
        assert "line 3" in capsys.readouterr().err

    def test_stage_failure_exit_code(self, tmp_path, cfg_path, capsys):
        p = tmp_path / "bad.yaml"
        p.write_text(json.dumps({**SMALL, "csp": {"m": 9}}))
        assert main(["report", "--config", str(p), "--out", str(tmp_path / "o")]) == 1
        assert "stage 'csp'" in capsys.readouterr().err
        assert not (tmp_path / "o" / "report.json").exists()

    def test_bad_flags(self):
        with pytest.raises(SystemExit):
            main(["report", "--reward", "1"])
        with pytest.raises(SystemExit):
            main(["report", "--seed", "-1"])
