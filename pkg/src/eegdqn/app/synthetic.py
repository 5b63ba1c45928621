"""Seeded synthetic motor-imagery epochs.

Class ``k`` owns a channel pair and a frequency in the 8-30 Hz range. In
class-``k`` trials that pair carries a full-amplitude sinusoid; in every other
trial the same rhythm is attenuated (an ERD-like contrast). Pink (1/f) and
white noise are added to all channels.
"""
from __future__ import annotations

import numpy as np

from ..dsp import EpochSet
from ..errors import InvalidParameterError
from ..mathcore import Rng

__all__ = ["DEFAULTS", "generate_synthetic", "class_frequencies", "class_channels"]

DEFAULTS = dict(
    n_classes=3,
    trials_per_class=40,
    channels=8,
    samples=500,
    fs=250.0,
    seed=0,
    amplitude=3.0,
    attenuation=0.25,
    pink_std=2.0,
    white_std=1.0,
    f_lo=10.0,
    f_hi=26.0,
)


def class_frequencies(n_classes, f_lo=10.0, f_hi=26.0):
    if n_classes == 1:
        return np.array([f_lo])
    return np.linspace(f_lo, f_hi, n_classes)


def class_channels(k, channels):
    return (2 * k) % channels, (2 * k + 1) % channels


def _pink(rng, n_channels, n_samples):
    white = rng.normal((n_channels, n_samples))
    spec = np.fft.rfft(white, axis=1)
    f = np.arange(spec.shape[1])
    f[0] = 1
    spec /= np.sqrt(f)
    pink = np.fft.irfft(spec, n=n_samples, axis=1)
    return pink / pink.std(axis=1, keepdims=True)


def generate_synthetic(n_classes=3, trials_per_class=40, channels=8, samples=500, fs=250.0,
                       seed=0, amplitude=3.0, attenuation=0.25, pink_std=2.0, white_std=1.0,
                       f_lo=10.0, f_hi=26.0):
    """Build a labelled :class:`~eegdqn.dsp.EpochSet` of synthetic MI trials.

    Trials are ordered class by class; generator settings are stored in
    ``metadata["generator"]``.
    """
    if min(n_classes, trials_per_class, channels, samples) < 1:
        raise InvalidParameterError("all counts must be positive")
    if n_classes < 2:
        raise InvalidParameterError("need at least two classes")
    if not 0 < f_lo <= f_hi:
        raise InvalidParameterError("class frequencies must be positive and ordered")
    if fs <= 2 * f_hi:
        raise InvalidParameterError(f"fs={fs} Hz cannot represent class frequency {f_hi} Hz")
    if not 0.0 <= attenuation < 1.0:
        raise InvalidParameterError("attenuation must lie in [0, 1)")
    rng = Rng(seed, "synthetic")
    freqs = class_frequencies(n_classes, f_lo, f_hi)
    t = np.arange(samples) / fs
    n = n_classes * trials_per_class
    labels = np.repeat(np.arange(n_classes), trials_per_class)
    data = np.empty((n, channels, samples))
    for i, label in enumerate(labels):
        x = pink_std * _pink(rng, channels, samples) + white_std * rng.normal((channels, samples))
        for k in range(n_classes):
            amp = amplitude if k == label else amplitude * attenuation
            phase = rng.uniform(low=0.0, high=2 * np.pi)
            wave = amp * np.sin(2 * np.pi * freqs[k] * t + phase)
            a, b = class_channels(k, channels)
            x[a] += wave
            x[b] += 0.5 * wave
        data[i] = x
    meta = {"generator": dict(
        n_classes=n_classes, trials_per_class=trials_per_class, channels=channels,
        samples=samples, fs=fs, seed=seed, amplitude=amplitude, attenuation=attenuation,
        pink_std=pink_std, white_std=white_std, f_lo=f_lo, f_hi=f_hi,
        class_frequencies_hz=[float(f) for f in freqs],
    )}
    return EpochSet(data, labels, float(fs), (0.0, samples / fs),
                    [f"ch{c}" for c in range(channels)], n_classes, meta)
