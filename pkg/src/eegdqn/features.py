"""Per-channel statistics, band power, feature tensors and train-fitted normalizers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsp import welch_psd
from .errors import (
    ConstantSignalError,
    DegenerateInputError,
    InvalidParameterError,
    StateError,
)

__all__ = [
    "STAT_NAMES",
    "DEFAULT_BANDS",
    "FeatureTensor",
    "NormalizerState",
    "WelchParams",
    "kurtosis",
    "skewness",
    "rms",
    "peak_to_peak",
    "abs_diff",
    "band_power",
    "band_bins",
    "stat_vector",
    "assemble_1d",
    "assemble_2d",
    "fit_normalizer",
    "apply_normalizer",
    "invert_minmax",
]

STAT_NAMES = ["kurtosis", "skewness", "rms", "ptp", "absdiff1"]
#: alpha and beta
DEFAULT_BANDS = ((8.0, 13.0), (13.0, 30.0))
_STD_FLOOR = 1e-12


@dataclass
class FeatureTensor:
    """Per-trial features, either ``flat_1d`` (N, F) or ``grid_2d`` (N, C, F)."""

    layout: str
    data: np.ndarray
    labels: np.ndarray
    feature_names: list = field(default_factory=list)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        expected = {"flat_1d": 2, "grid_2d": 3}
        if self.layout not in expected:
            raise InvalidParameterError(f"unknown layout {self.layout!r}")
        if self.data.ndim != expected[self.layout]:
            raise InvalidParameterError(
                f"{self.layout} needs a {expected[self.layout]}-D array, got shape {self.data.shape}"
            )
        if len(self.labels) != len(self.data):
            raise InvalidParameterError("one label per trial required")

    def __len__(self):
        return len(self.data)

    @property
    def sample_shape(self):
        return self.data.shape[1:]

    def subset(self, idx):
        idx = np.asarray(idx)
        return FeatureTensor(self.layout, self.data[idx], self.labels[idx], list(self.feature_names))


@dataclass(frozen=True)
class WelchParams:
    nfft: int = 64
    overlap: float = 0.5
    window: str = "hann"
    averaging: str = "median"
    scaling: str = "density"
    detrend: str = "constant"

    def estimate(self, x, fs):
        return welch_psd(x, fs, self.nfft, self.overlap, self.window, self.averaging,
                         self.scaling, self.detrend)


def _vec(x, min_len, name):
    x = np.asarray(x, dtype=np.float64).ravel()
    if len(x) < min_len:
        raise DegenerateInputError(f"{name} needs at least {min_len} samples, got {len(x)}")
    return x


def _standardized(x):
    s = x.std(ddof=1)
    if not s > 0:
        raise ConstantSignalError("standard deviation is zero")
    return (x - x.mean()) / s


def kurtosis(x):
    """Unbiased sample excess kurtosis (sample std with ``n - 1`` divisor)."""
    x = _vec(x, 4, "kurtosis")
    n = len(x)
    z4 = np.sum(_standardized(x) ** 4)
    return float(n * (n + 1) / ((n - 1) * (n - 2) * (n - 3)) * z4
                 - 3 * (n - 1) ** 2 / ((n - 2) * (n - 3)))


def skewness(x):
    """Adjusted sample skewness, ``n / ((n-1)(n-2)) * sum(z**3)``."""
    x = _vec(x, 3, "skewness")
    n = len(x)
    return float(n / ((n - 1) * (n - 2)) * np.sum(_standardized(x) ** 3))


def rms(x):
    x = _vec(x, 1, "rms")
    return float(np.sqrt(np.mean(x * x)))


def peak_to_peak(x):
    x = _vec(x, 1, "peak_to_peak")
    return float(x.max() - x.min())


def abs_diff(x, y):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise InvalidParameterError(f"length mismatch: {len(x)} vs {len(y)}")
    return float(np.sum(np.abs(x - y)))


def band_bins(freqs, band):
    lo, hi = band
    mask = (freqs >= lo) & (freqs <= hi)
    if not mask.any():
        raise InvalidParameterError(f"band {band} Hz contains no frequency bins")
    return mask


def band_power(psd, band):
    """Trapezoidal integral of the density over bins with ``lo <= f <= hi``."""
    lo, hi = band
    f = psd.freqs_hz
    if lo < f[0] or hi > f[-1] or lo >= hi:
        raise InvalidParameterError(f"band {band} Hz outside [{f[0]}, {f[-1]}] Hz")
    mask = band_bins(f, band)
    return float(np.trapezoid(psd.psd[mask], f[mask]))


def stat_vector(x):
    """``[kurtosis, skewness, rms, ptp, sum|x[i+1] - x[i]|]`` for one channel."""
    x = _vec(x, 4, "stat_vector")
    return np.array([kurtosis(x), skewness(x), rms(x), peak_to_peak(x),
                     abs_diff(x[1:], x[:-1])])


def _band_mask(freqs, bands):
    mask = np.zeros(len(freqs), dtype=bool)
    for band in bands:
        mask |= band_bins(freqs, band)
    return mask


def _psd_row(x, fs, bands, welch):
    est = welch.estimate(x, fs)
    mask = _band_mask(est.freqs_hz, bands)
    return est.psd[mask], est.freqs_hz[mask]


def assemble_1d(epochs, psd_channels=(), bands=DEFAULT_BANDS, welch=WelchParams()):
    """Flat feature vector per trial.

    Statistics of every channel come first (channel-major, :data:`STAT_NAMES`
    order), followed by the alpha+beta PSD bins of each channel named in
    ``psd_channels``.
    """
    names = list(epochs.channel_names)
    missing = [c for c in psd_channels if c not in names]
    if missing:
        raise InvalidParameterError(f"PSD channels not in recording: {missing}")
    psd_idx = [names.index(c) for c in psd_channels]
    rows = []
    feature_names = None
    for trial in epochs.data:
        parts = [stat_vector(ch) for ch in trial]
        fnames = [f"{names[c]}:{s}" for c in range(len(names)) for s in STAT_NAMES]
        for c in psd_idx:
            vals, freqs = _psd_row(trial[c], epochs.sample_rate_hz, bands, welch)
            parts.append(vals)
            fnames += [f"{names[c]}:psd@{f:g}Hz" for f in freqs]
        rows.append(np.concatenate(parts))
        feature_names = feature_names or fnames
    data = np.asarray(rows) if rows else np.zeros((0, 5 * len(names)))
    return FeatureTensor("flat_1d", data, epochs.labels.copy(), feature_names or [])


def assemble_2d(csp_epochs, labels=None, bands=DEFAULT_BANDS, welch=WelchParams(), sample_rate_hz=None):
    """Grid of features: one row per CSP component, ``stats ++ alpha+beta PSD bins``.

    ``csp_epochs`` is either a :class:`~eegdqn.csp.CspSpaceEpochs` or a raw
    ``trials x components x time`` array (then ``labels`` and
    ``sample_rate_hz`` are required).
    """
    if not isinstance(csp_epochs, np.ndarray) and labels is None:
        data, labels, fs = csp_epochs.data, csp_epochs.labels, csp_epochs.sample_rate_hz
    else:
        data, fs = np.asarray(csp_epochs, dtype=np.float64), sample_rate_hz
    if data.ndim != 3 or data.shape[1] < 1:
        raise InvalidParameterError(f"expected trials x components x time, got {data.shape}")
    grids = []
    fnames = list(STAT_NAMES)
    for i, trial in enumerate(data):
        grid = []
        for comp in trial:
            vals, freqs = _psd_row(comp, fs, bands, welch)
            grid.append(np.concatenate([stat_vector(comp), vals]))
            if i == 0 and len(grid) == 1:
                fnames += [f"psd@{f:g}Hz" for f in freqs]
        grids.append(grid)
    return FeatureTensor("grid_2d", np.asarray(grids), np.asarray(labels).copy(), fnames)


@dataclass(frozen=True)
class NormalizerState:
    """Fitted statistics for one of two normalizer kinds.

    ``minmax_sym`` keeps per-feature ``lo``/``hi``. ``zscore_twofold`` keeps
    per-feature ``mean``/``std`` for the first pass; the second pass
    standardizes each trial over its own values and needs no fitted state.
    """

    kind: str
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    fitted: bool = True


def fit_normalizer(train, kind="zscore_twofold"):
    X = train.data
    if len(X) == 0:
        raise DegenerateInputError("cannot fit a normalizer on zero trials")
    if kind == "minmax_sym":
        return NormalizerState(kind, lo=X.min(axis=0), hi=X.max(axis=0))
    if kind == "zscore_twofold":
        return NormalizerState(kind, mean=X.mean(axis=0),
                               std=np.maximum(X.std(axis=0), _STD_FLOOR))
    raise InvalidParameterError(f"unknown normalizer kind {kind!r}")


def apply_normalizer(state, t):
    if state is None or not getattr(state, "fitted", False):
        raise StateError("normalizer applied before fit")
    X = t.data
    if X.shape[1:] != (state.lo if state.kind == "minmax_sym" else state.mean).shape:
        raise InvalidParameterError("feature shape differs from the fitted shape")
    if state.kind == "minmax_sym":
        span = np.maximum(state.hi - state.lo, _STD_FLOOR)
        out = np.clip(2.0 * (X - state.lo) / span - 1.0, -1.0, 1.0)
    else:
        out = (X - state.mean) / state.std
        axes = tuple(range(1, out.ndim))
        mu = out.mean(axis=axes, keepdims=True)
        sd = np.maximum(out.std(axis=axes, keepdims=True), _STD_FLOOR)
        out = (out - mu) / sd
    return FeatureTensor(t.layout, out, t.labels.copy(), list(t.feature_names))


def invert_minmax(state, t):
    """Inverse of the ``minmax_sym`` map for in-range values."""
    if state.kind != "minmax_sym":
        raise InvalidParameterError("only minmax_sym is invertible")
    span = np.maximum(state.hi - state.lo, _STD_FLOOR)
    return (np.asarray(t if isinstance(t, np.ndarray) else t.data) + 1.0) * span / 2.0 + state.lo
