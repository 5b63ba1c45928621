"""Signal conditioning: Butterworth bandpass, zero-phase filtering, epoching, Welch PSD."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sp_signal

from .errors import DegenerateInputError, InvalidParameterError, RangeError

__all__ = [
    "Recording",
    "BiquadCascade",
    "EpochSet",
    "PsdEstimate",
    "design_butterworth_bandpass",
    "frequency_response",
    "filtfilt",
    "filter_epochs",
    "epoch",
    "crop_epochs",
    "welch_psd",
    "samples_for",
]


def samples_for(seconds, fs):
    """Sample count for a duration; Python's ``round`` is half-to-even."""
    return int(round(seconds * fs))


@dataclass
class Recording:
    channel_names: list
    sample_rate_hz: float
    data: np.ndarray  # channels x samples, microvolts

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise InvalidParameterError("recording data must be channels x samples")
        if len(self.channel_names) != self.data.shape[0]:
            raise InvalidParameterError(
                f"{len(self.channel_names)} channel names for {self.data.shape[0]} channels"
            )
        if not (np.isfinite(self.sample_rate_hz) and self.sample_rate_hz > 0):
            raise InvalidParameterError("sample rate must be finite and positive")


@dataclass(frozen=True)
class BiquadCascade:
    """Second-order sections ``(b0, b1, b2, a1, a2)`` with ``a0 = 1``."""

    sections: np.ndarray  # n_sections x 5
    band_hz: tuple
    order: int
    fs_hz: float

    def sos(self):
        s = np.asarray(self.sections)
        return np.column_stack([s[:, :3], np.ones(len(s)), s[:, 3:]])

    def is_stable(self):
        for _, _, _, a1, a2 in self.sections:
            if np.any(np.abs(np.roots([1.0, a1, a2])) >= 1.0):
                return False
        return True


@dataclass
class EpochSet:
    """Trials x channels x samples plus integer labels."""

    data: np.ndarray
    labels: np.ndarray
    sample_rate_hz: float
    window: tuple = (0.0, None)
    channel_names: list = field(default_factory=list)
    n_classes: int | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.data.ndim != 3:
            raise InvalidParameterError(f"epoch data must be 3-D, got shape {self.data.shape}")
        if len(self.labels) != self.data.shape[0]:
            raise InvalidParameterError("one label per trial required")
        if self.n_classes is None:
            self.n_classes = int(self.labels.max()) + 1 if len(self.labels) else 0
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise InvalidParameterError("labels must lie in [0, n_classes)")
        if not self.channel_names:
            self.channel_names = [f"ch{i}" for i in range(self.data.shape[1])]
        if self.window[1] is None:
            self.window = (self.window[0], self.window[0] + self.data.shape[2] / self.sample_rate_hz)

    @property
    def n_trials(self):
        return self.data.shape[0]

    @property
    def n_channels(self):
        return self.data.shape[1]

    @property
    def n_samples(self):
        return self.data.shape[2]

    def subset(self, idx):
        idx = np.asarray(idx)
        return EpochSet(self.data[idx], self.labels[idx], self.sample_rate_hz,
                        self.window, list(self.channel_names), self.n_classes, dict(self.metadata))

    def replace_data(self, data, window=None):
        return EpochSet(data, self.labels.copy(), self.sample_rate_hz,
                        self.window if window is None else window, list(self.channel_names),
                        self.n_classes, dict(self.metadata))


@dataclass(frozen=True)
class PsdEstimate:
    freqs_hz: np.ndarray
    psd: np.ndarray
    nfft: int
    overlap_fraction: float
    window_kind: str
    averaging_kind: str
    scaling: str


def design_butterworth_bandpass(low_hz, high_hz, fs_hz, order=4):
    """Digital Butterworth bandpass as ``order // 2`` biquads.

    Designed from the analog prototype with a prewarped bilinear transform
    (``scipy.signal.butter``). ``order`` counts poles of the bandpass, so it
    must be even.
    """
    if not 0 < low_hz < high_hz < fs_hz / 2:
        raise InvalidParameterError(
            f"band edges must satisfy 0 < low < high < fs/2, got ({low_hz}, {high_hz}) at fs={fs_hz}"
        )
    if order < 2 or order % 2:
        raise InvalidParameterError(f"bandpass order must be even and >= 2, got {order}")
    sos = sp_signal.butter(order // 2, [low_hz, high_hz], btype="bandpass", fs=fs_hz, output="sos")
    sections = np.column_stack([sos[:, :3], sos[:, 4:]])
    cascade = BiquadCascade(sections, (float(low_hz), float(high_hz)), int(order), float(fs_hz))
    if not cascade.is_stable():
        raise InvalidParameterError("designed filter is unstable; widen the band or lower the order")
    return cascade


def frequency_response(filt, freqs_hz):
    """Complex response ``H(e^{jw})`` evaluated straight from the section coefficients."""
    z = np.exp(-2j * np.pi * np.asarray(freqs_hz, dtype=float) / filt.fs_hz)
    h = np.ones_like(z)
    for b0, b1, b2, a1, a2 in filt.sections:
        h *= (b0 + b1 * z + b2 * z * z) / (1.0 + a1 * z + a2 * z * z)
    return h


def _forward_backward(sos, zi, x):
    y, _ = sp_signal.sosfilt(sos, x, zi=zi * x[0])
    y = y[::-1]
    y, _ = sp_signal.sosfilt(sos, y, zi=zi * y[0])
    return y[::-1]


def filtfilt(filt, x):
    """Zero-phase application of a biquad cascade.

    The signal is odd-reflected by ``3 * (2 * order + 1)`` samples at both ends
    and run forward then backward through the cascade, each pass started from
    the step-response steady state. The same is done on the reversed signal and
    the two results are averaged, which makes the output exactly equivariant
    under time reversal. Magnitude response is ``|H|^2`` either way.
    """
    x = np.asarray(x, dtype=np.float64)
    min_len = 3 * 6 * filt.order
    if x.ndim != 1 or len(x) <= min_len:
        raise DegenerateInputError(f"signal must be 1-D with more than {min_len} samples")
    pad = 3 * (2 * filt.order + 1)
    pad = min(pad, len(x) - 1)
    ext = np.concatenate([2 * x[0] - x[pad:0:-1], x, 2 * x[-1] - x[-2:-pad - 2:-1]])
    sos = filt.sos()
    zi = sp_signal.sosfilt_zi(sos)
    fb = _forward_backward(sos, zi, ext)
    bf = _forward_backward(sos, zi, ext[::-1])[::-1]
    y = 0.5 * (fb + bf)
    return y[pad:pad + len(x)]


def filter_epochs(filt, epochs):
    """Apply :func:`filtfilt` to every trial and channel of an :class:`EpochSet`."""
    out = np.empty_like(epochs.data)
    for i in range(epochs.n_trials):
        for c in range(epochs.n_channels):
            out[i, c] = filtfilt(filt, epochs.data[i, c])
    return epochs.replace_data(out)


def epoch(rec, event_samples, labels, tmin_s, tmax_s, n_classes=None):
    """Cut fixed windows around events from a continuous recording.

    Each trial starts at ``event + round(tmin * fs)`` and spans
    ``round((tmax - tmin) * fs)`` samples.
    """
    if not tmin_s < tmax_s:
        raise InvalidParameterError(f"tmin ({tmin_s}) must be < tmax ({tmax_s})")
    if len(event_samples) != len(labels):
        raise InvalidParameterError("one label per event required")
    fs = rec.sample_rate_hz
    n = samples_for(tmax_s - tmin_s, fs)
    offset = samples_for(tmin_s, fs)
    total = rec.data.shape[1]
    bad = [i for i, ev in enumerate(event_samples)
           if ev + offset < 0 or ev + offset + n > total]
    if bad:
        raise RangeError(f"epoch window out of recording bounds for trials {bad}")
    data = np.stack([rec.data[:, ev + offset: ev + offset + n] for ev in event_samples]) \
        if len(event_samples) else np.zeros((0, rec.data.shape[0], n))
    return EpochSet(data, np.asarray(labels), fs, (float(tmin_s), float(tmax_s)),
                    list(rec.channel_names), n_classes)


def crop_epochs(epochs, tmin_s, tmax_s):
    """Re-epoch each trial with a window relative to the trial's first sample."""
    fs = epochs.sample_rate_hz
    n = samples_for(tmax_s - tmin_s, fs)
    offset = samples_for(tmin_s, fs)
    if not tmin_s < tmax_s:
        raise InvalidParameterError(f"tmin ({tmin_s}) must be < tmax ({tmax_s})")
    if offset < 0 or offset + n > epochs.n_samples:
        raise RangeError(
            f"window ({tmin_s}, {tmax_s}) s exceeds trial length {epochs.n_samples / fs} s"
        )
    base = epochs.window[0]
    return epochs.replace_data(epochs.data[:, :, offset:offset + n].copy(),
                               (base + tmin_s, base + tmax_s))


def _window(kind, n):
    if kind == "hann":
        # periodic Hann, the usual choice for spectral estimation
        return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)
    if kind in ("boxcar", "rectangular"):
        return np.ones(n)
    if kind == "hamming":
        return 0.54 - 0.46 * np.cos(2 * np.pi * np.arange(n) / n)
    raise InvalidParameterError(f"unknown window kind {kind!r}")


def welch_psd(x, fs_hz, nfft=256, overlap=0.5, window="hann", averaging="median",
              scaling="density", detrend="constant"):
    """One-sided Welch power spectral density.

    The signal is cut into segments of ``nfft`` samples with hop
    ``round(nfft * (1 - overlap))``. Each segment is detrended, windowed and
    turned into a periodogram ``|DFT|^2``; periodograms are combined by mean or
    plain median (no bias correction).

    Parameters
    ----------
    x : array_like
        1-D real signal, at least ``nfft`` samples.
    fs_hz : float
        Sampling rate.
    nfft : int
        Segment length, also the DFT length.
    overlap : float
        Fraction of ``nfft`` shared by consecutive segments, in ``[0, 1)``.
    window : {'hann', 'boxcar', 'hamming'}
    averaging : {'median', 'mean'}
    scaling : {'density', 'spectrum'}
        ``density`` divides by ``fs * sum(w**2)`` (units^2/Hz), ``spectrum`` by
        ``sum(w)**2`` (units^2).
    detrend : {'constant', 'none'}

    Returns
    -------
    PsdEstimate
        ``nfft // 2 + 1`` bins from 0 Hz to Nyquist.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidParameterError("welch_psd expects a 1-D signal")
    nfft = int(nfft)
    if nfft < 8:
        raise InvalidParameterError(f"nfft must be >= 8, got {nfft}")
    if not 0.0 <= overlap < 1.0:
        raise InvalidParameterError(f"overlap must lie in [0, 1), got {overlap}")
    if len(x) < nfft:
        raise DegenerateInputError(f"signal length {len(x)} shorter than nfft {nfft}")
    if averaging not in ("mean", "median"):
        raise InvalidParameterError(f"unknown averaging {averaging!r}")
    if scaling not in ("density", "spectrum"):
        raise InvalidParameterError(f"unknown scaling {scaling!r}")
    if detrend not in ("constant", "none", None):
        raise InvalidParameterError(f"unknown detrend {detrend!r}")

    hop = max(1, int(round(nfft * (1.0 - overlap))))
    starts = np.arange(0, len(x) - nfft + 1, hop)
    segs = x[starts[:, None] + np.arange(nfft)]
    if detrend == "constant":
        segs = segs - segs.mean(axis=1, keepdims=True)
    w = _window(window, nfft)
    spec = np.abs(np.fft.rfft(segs * w, n=nfft, axis=1)) ** 2
    if scaling == "density":
        spec /= fs_hz * np.sum(w * w)
    else:
        spec /= np.sum(w) ** 2
    if nfft % 2:
        spec[:, 1:] *= 2
    else:
        spec[:, 1:-1] *= 2
    psd = np.median(spec, axis=0) if averaging == "median" else spec.mean(axis=0)
    freqs = np.arange(nfft // 2 + 1) * fs_hz / nfft
    return PsdEstimate(freqs, psd, nfft, float(overlap), window, averaging, scaling)
