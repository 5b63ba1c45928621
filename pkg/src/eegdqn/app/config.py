"""Run configuration: a YAML document validated against a fixed schema.

Every error names the offending key and its 1-based line in the source text.
"""
from __future__ import annotations

import copy
import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..errors import ConfigError
from ..mathcore import SHRINKAGE
from ..qnet import QNetworkSpec

__all__ = ["RunConfig", "load_config", "parse_config", "default_config", "config_from_dict",
           "SCHEMA"]


class _Invalid(Exception):
    """Raised by validators; turned into :class:`ConfigError` with a line number."""


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _int(lo=None, hi=None):
    def check(v):
        if not isinstance(v, int) or isinstance(v, bool):
            raise _Invalid(f"expected an integer, got {v!r}")
        if lo is not None and v < lo:
            raise _Invalid(f"must be >= {lo}, got {v}")
        if hi is not None and v > hi:
            raise _Invalid(f"must be <= {hi}, got {v}")
        return v
    return check


def _float(lo=None, hi=None, lo_open=False, hi_open=False):
    def check(v):
        if not _is_num(v):
            raise _Invalid(f"expected a number, got {v!r}")
        v = float(v)
        if v != v or v in (float("inf"), float("-inf")):
            raise _Invalid("must be finite")
        if lo is not None and (v <= lo if lo_open else v < lo):
            raise _Invalid(f"must be {'>' if lo_open else '>='} {lo}, got {v:g}")
        if hi is not None and (v >= hi if hi_open else v > hi):
            raise _Invalid(f"must be {'<' if hi_open else '<='} {hi}, got {v:g}")
        return v
    return check


def _bool(v):
    if not isinstance(v, bool):
        raise _Invalid(f"expected true or false, got {v!r}")
    return v


def _str(v):
    if not isinstance(v, str) or not v:
        raise _Invalid(f"expected a non-empty string, got {v!r}")
    return v


def _choice(*options):
    def check(v):
        if v not in options:
            raise _Invalid(f"must be one of {', '.join(map(str, options))}; got {v!r}")
        return v
    return check


def _nullable(inner):
    def check(v):
        return None if v is None else inner(v)
    return check


def _list(inner, length=None, min_length=0):
    def check(v):
        if not isinstance(v, list):
            raise _Invalid(f"expected a list, got {v!r}")
        if length is not None and len(v) != length:
            raise _Invalid(f"expected {length} items, got {len(v)}")
        if len(v) < min_length:
            raise _Invalid(f"expected at least {min_length} items, got {len(v)}")
        return [inner(x) for x in v]
    return check


def _band(v):
    lo, hi = _list(_float(lo=0.0, lo_open=True), length=2)(v)
    if not lo < hi:
        raise _Invalid(f"band edges must be increasing, got [{lo:g}, {hi:g}]")
    return [lo, hi]


def _window(v):
    start, stop = _list(_nullable(_float(lo=0.0)), length=2)(v)
    start = 0.0 if start is None else start
    if stop is not None and not stop > start:
        raise _Invalid(f"window end must exceed its start, got [{start:g}, {stop:g}]")
    return [start, stop]


def _reward(v):
    rc, ri = _list(_float(), length=2)(v)
    if not rc > ri:
        raise _Invalid(f"correct reward must exceed incorrect reward, got [{rc:g}, {ri:g}]")
    if not rc > 0:
        raise _Invalid("correct reward must be positive")
    if ri > 0:
        raise _Invalid("incorrect reward must be <= 0")
    return [rc, ri]


SCHEMA = {
    "seed": (_int(0, 2 ** 64 - 1), 0),
    "dataset": {
        "path": (_nullable(_str), None),
        "synthetic": {
            "n_classes": (_int(2, 64), 3),
            "trials_per_class": (_int(2), 40),
            "channels": (_int(2), 8),
            "samples": (_int(32), 500),
            "fs": (_float(lo=0.0, lo_open=True), 250.0),
            "seed": (_int(0, 2 ** 64 - 1), 0),
            "amplitude": (_float(lo=0.0), 3.0),
            "attenuation": (_float(0.0, 1.0, hi_open=True), 0.25),
            "pink_std": (_float(lo=0.0), 2.0),
            "white_std": (_float(lo=0.0), 1.0),
        },
    },
    "preprocessing": {
        "band": (_band, [8.0, 30.0]),
        "order": (_int(2, 16), 4),
        "window": (_window, [0.0, None]),
    },
    "csp": {
        "m": (_int(1), 2),
        "shrinkage": (_float(lo=0.0), SHRINKAGE),
        "normalize_trace": (_bool, True),
    },
    "features": {
        "layout": (_choice("grid_2d", "flat_1d"), "grid_2d"),
        "bands": (_list(_band, min_length=1), [[8.0, 13.0], [13.0, 30.0]]),
        "nfft": (_int(4), 128),
        "overlap": (_float(0.0, 1.0, hi_open=True), 0.5),
        "window": (_choice("hann", "hamming", "boxcar"), "hann"),
        "averaging": (_choice("median", "mean"), "median"),
        "normalizer": (_choice("zscore_twofold", "minmax_sym"), "zscore_twofold"),
        "psd_channels": (_list(_int(0)), []),
    },
    "qnet": "qnet",  # free-form overrides of QNetworkSpec, checked separately
    "rl": {
        "reward": (_reward, [1.0, 0.0]),
        "gamma": (_float(0.0, 1.0), 0.99),
        "intervals": (_list(_int(0), min_length=1), [3000, 400, 400]),
        "replay_capacity": (_int(1), 10000),
        "batch_size": (_int(1), 32),
        "warmup": (_int(1), 100),
        "target_sync": (_int(1), 200),
        "epsilon_start": (_float(0.0, 1.0), 1.0),
        "epsilon_end": (_float(0.0, 1.0), 0.0),
        "tau": (_nullable(_float(lo=0.0, lo_open=True)), None),
        "lr0": (_float(lo=0.0, lo_open=True), 0.0055),
        "decay": (_float(lo=0.0), 1e-4),
        "huber_delta": (_float(lo=0.0, lo_open=True), 1.0),
        "clip_norm": (_float(lo=0.0, lo_open=True), 1.0),
    },
    "eval": {
        "test_fraction": (_float(0.0, 1.0, lo_open=True, hi_open=True), 0.2),
        "folds": (_int(0), 0),
        "episodes": (_int(1), 10),
    },
}

_QNET_FIXED = ("channels_in", "time_in", "n_actions")
_QNET_FIELDS = {f.name: f for f in dataclasses.fields(QNetworkSpec) if f.name not in _QNET_FIXED}


def _qnet_check(key, v):
    default = _QNET_FIELDS[key].default
    if isinstance(default, tuple):
        return tuple(_list(_int(1), min_length=1)(v))
    if isinstance(default, bool):
        return _bool(v)
    if isinstance(default, int):
        return _int(1)(v)
    if isinstance(default, float):
        return _float(lo=0.0)(v)
    return _str(v)


@dataclass
class RunConfig:
    """Validated configuration; every section is a plain dict of resolved values."""

    seed: int = 0
    dataset: dict = field(default_factory=dict)
    preprocessing: dict = field(default_factory=dict)
    csp: dict = field(default_factory=dict)
    features: dict = field(default_factory=dict)
    qnet: dict = field(default_factory=dict)
    rl: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    source: str = "<defaults>"

    def to_dict(self):
        d = {f.name: copy.deepcopy(getattr(self, f.name)) for f in dataclasses.fields(self)
             if f.name != "source"}
        d["qnet"] = {k: list(v) if isinstance(v, tuple) else v for k, v in d["qnet"].items()}
        if d["dataset"]["path"] is not None:
            del d["dataset"]["synthetic"]
        return d

    def with_overrides(self, seed=None, reward=None, intervals=None):
        """Copy with CLI-level overrides applied and validated."""
        d = self.to_dict()
        if seed is not None:
            d["seed"] = seed
        if reward is not None:
            d["rl"]["reward"] = list(reward)
        if intervals is not None:
            d["rl"]["intervals"] = list(intervals)
        return config_from_dict(d, source=self.source)

    @property
    def tau(self):
        """Exploration time constant; defaults to a fifth of the first interval."""
        tau = self.rl["tau"]
        return tau if tau is not None else max(self.rl["intervals"][0] / 5.0, 1.0)


def _defaults(schema):
    out = {}
    for key, spec in schema.items():
        if spec == "qnet":
            out[key] = {}
        elif isinstance(spec, dict):
            out[key] = _defaults(spec)
        else:
            out[key] = copy.deepcopy(spec[1])
    return out


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads exponent floats without a dot, such as ``1e-5``."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"""),
    list("-+0123456789"),
)


def _construct(node):
    return _Loader("").construct_document(node)


def _line(node):
    return node.start_mark.line + 1 if node is not None and node.start_mark else None


def _walk(node, schema, path, out):
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"'{path or 'document'}' must be a mapping", _line(node), path or None)
    seen = set()
    for key_node, value_node in node.value:
        key = key_node.value if isinstance(key_node, yaml.ScalarNode) else None
        full = f"{path}.{key}" if path else str(key)
        if key in seen:
            raise ConfigError(f"duplicate key '{full}'", _line(key_node), full)
        seen.add(key)
        if key not in schema:
            allowed = ", ".join(sorted(schema))
            raise ConfigError(f"unknown key '{full}' (allowed: {allowed})", _line(key_node), full)
        spec = schema[key]
        if spec == "qnet":
            out[key] = _walk_qnet(value_node, full)
        elif isinstance(spec, dict):
            if isinstance(value_node, yaml.ScalarNode) and _construct(value_node) is None:
                continue
            _walk(value_node, spec, full, out[key])
        else:
            try:
                out[key] = spec[0](_construct(value_node))
            except _Invalid as exc:
                raise ConfigError(f"'{full}': {exc}", _line(value_node), full) from None
            except yaml.YAMLError as exc:
                raise ConfigError(f"'{full}': {exc}", _line(value_node), full) from None
    return out


def _walk_qnet(node, path):
    if isinstance(node, yaml.ScalarNode) and _construct(node) is None:
        return {}
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"'{path}' must be a mapping", _line(node), path)
    out = {}
    for key_node, value_node in node.value:
        key = key_node.value
        full = f"{path}.{key}"
        if key not in _QNET_FIELDS:
            raise ConfigError(f"unknown key '{full}' (allowed: {', '.join(sorted(_QNET_FIELDS))})",
                              _line(key_node), full)
        try:
            out[key] = _qnet_check(key, _construct(value_node))
        except _Invalid as exc:
            raise ConfigError(f"'{full}': {exc}", _line(value_node), full) from None
    return out


def _cross_check(cfg, lines):
    def fail(msg, key):
        raise ConfigError(msg, lines.get(key), key)

    if cfg.dataset["path"] is not None and lines.get("dataset.synthetic") is not None:
        fail("'dataset.path' and 'dataset.synthetic' are mutually exclusive", "dataset.synthetic")
    rl = cfg.rl
    if rl["epsilon_end"] > rl["epsilon_start"]:
        fail("'rl.epsilon_end' must not exceed 'rl.epsilon_start'", "rl.epsilon_end")
    if rl["intervals"][0] < 1:
        fail("'rl.intervals' must start with a positive exploration interval", "rl.intervals")
    if cfg.eval["folds"] == 1:
        fail("'eval.folds' must be 0 (disabled) or >= 2", "eval.folds")
    syn = cfg.dataset["synthetic"]
    if cfg.dataset["path"] is None and syn["fs"] <= 2 * 26.0:
        fail("'dataset.synthetic.fs' must exceed twice the highest class frequency (26 Hz)",
             "dataset.synthetic.fs")
    fs = syn["fs"] if cfg.dataset["path"] is None else None
    if fs is not None and cfg.preprocessing["band"][1] >= fs / 2:
        fail("'preprocessing.band' upper edge must lie below Nyquist", "preprocessing.band")


def _key_lines(node, path="", out=None):
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            full = f"{path}.{k.value}" if path else str(k.value)
            out[full] = _line(k)
            _key_lines(v, full, out)
    return out


def parse_config(text, source="<string>"):
    """Validate YAML ``text`` and return a :class:`RunConfig` (missing keys take defaults)."""
    try:
        node = yaml.compose(text, Loader=_Loader)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ConfigError(f"{source}: malformed YAML: {exc.problem}", line) from None
    values = _defaults(SCHEMA)
    if node is not None:
        _walk(node, SCHEMA, "", values)
    cfg = RunConfig(**values, source=source)
    _cross_check(cfg, _key_lines(node) if node is not None else {})
    return cfg


def load_config(path):
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, source=str(p))


def config_from_dict(d, source="<dict>"):
    return parse_config(yaml.safe_dump(d, sort_keys=False), source=source)


def default_config():
    return parse_config("", source="<defaults>")
