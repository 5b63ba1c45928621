import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eegdqn.dsp import (EpochSet, Recording, crop_epochs, design_butterworth_bandpass, epoch,
                        filter_epochs, filtfilt, frequency_response, samples_for, welch_psd)
from eegdqn.errors import DegenerateInputError, InvalidParameterError, RangeError

FS = 250.0


@pytest.fixture(scope="module")
def bp():
    return design_butterworth_bandpass(8, 30, FS, 4)


def direct_periodogram(x, fs):
    """One-sided density periodogram from an explicit DFT sum."""
    L = len(x)
    n = np.arange(L)
    out = []
    for k in range(L // 2 + 1):
        X = np.sum(x * np.exp(-2j * np.pi * k * n / L))
        p = abs(X) ** 2 / (L * fs)
        if 0 < k < L / 2:
            p *= 2
        out.append(p)
    return np.array(out)


class TestButterworth:
    def test_stable_sections(self, bp):
        assert bp.sections.shape == (2, 5)
        assert bp.is_stable()

    def test_rejects_dc_and_nyquist(self, bp):
        h = np.abs(frequency_response(bp, [0.0, FS / 2]))
        assert h[0] < 1e-3 and h[1] < 1e-3

    def test_centre_gain_within_1db(self, bp):
        h = np.abs(frequency_response(bp, [np.sqrt(8 * 30)]))[0]
        assert abs(20 * np.log10(h)) < 1.0

    def test_response_matches_direct_evaluation(self, bp):
        f = np.array([5.0, 12.0, 40.0])
        z = np.exp(1j * 2 * np.pi * f / FS)
        H = np.ones_like(z)
        for b0, b1, b2, a1, a2 in bp.sections:
            H *= (b0 + b1 / z + b2 / z ** 2) / (1 + a1 / z + a2 / z ** 2)
        np.testing.assert_allclose(frequency_response(bp, f), H, rtol=1e-12)

    @pytest.mark.parametrize("lo,hi,order", [(0, 30, 4), (30, 8, 4), (8, 125, 4), (8, 30, 3)])
    def test_bad_parameters(self, lo, hi, order):
        with pytest.raises(InvalidParameterError):
            design_butterworth_bandpass(lo, hi, FS, order)


class TestFiltfilt:
    def test_zero_in_zero_out(self, bp):
        np.testing.assert_array_equal(filtfilt(bp, np.zeros(500)), np.zeros(500))

    def test_in_band_phase(self, bp):
        t = np.arange(1000) / FS
        x = np.sin(2 * np.pi * 20 * t)
        y = filtfilt(bp, x)[100:-100]
        ref = x[100:-100]
        # phase from projection onto quadrature components
        s, c = np.sin(2 * np.pi * 20 * t[100:-100]), np.cos(2 * np.pi * 20 * t[100:-100])
        phase_x = np.arctan2(ref @ c, ref @ s)
        phase_y = np.arctan2(y @ c, y @ s)
        assert abs(phase_y - phase_x) < 0.01

    def test_out_of_band_attenuation(self, bp):
        t = np.arange(1000) / FS
        x = np.sin(2 * np.pi * 60 * t)
        pad = 3 * (2 * bp.order + 1)
        y = filtfilt(bp, x)[pad:-pad]
        assert np.sqrt(np.mean(y ** 2)) < 0.05 * np.sqrt(np.mean(x ** 2))

    def test_time_reversal_symmetry(self, bp):
        x = np.random.default_rng(0).standard_normal(400)
        np.testing.assert_allclose(filtfilt(bp, x[::-1]), filtfilt(bp, x)[::-1], rtol=0, atol=1e-9)

    def test_too_short(self, bp):
        with pytest.raises(DegenerateInputError):
            filtfilt(bp, np.ones(3 * 6 * 4))

    def test_filter_epochs_per_trial(self, bp):
        rng = np.random.default_rng(1)
        ep = EpochSet(rng.standard_normal((3, 2, 300)), [0, 1, 0], FS)
        out = filter_epochs(bp, ep)
        np.testing.assert_allclose(out.data[1, 0], filtfilt(bp, ep.data[1, 0]))
        np.testing.assert_array_equal(out.labels, ep.labels)


class TestEpoching:
    def rec(self, n=5000):
        return Recording(["a", "b"], FS, np.arange(2 * n, dtype=float).reshape(2, n))

    def test_one_second(self):
        ep = epoch(self.rec(), [1000, 2000], [0, 1], 0.0, 1.0)
        assert ep.data.shape == (2, 2, 250)
        assert ep.data[0, 0, 0] == 1000

    def test_round_half_even(self):
        assert samples_for(1.25, FS) == 312
        ep = epoch(self.rec(), [100], [0], 2.0, 3.25)
        assert ep.n_samples == 312
        assert ep.data[0, 0, 0] == 600

    def test_out_of_bounds_lists_trial(self):
        with pytest.raises(RangeError, match="0"):
            epoch(self.rec(), [0, 1000], [0, 1], -0.5, 1.0)

    def test_labels_preserved(self):
        labels = [2, 0, 1, 2]
        ep = epoch(self.rec(), [500, 1000, 1500, 2000], labels, 0.0, 0.5)
        assert sorted(ep.labels.tolist()) == sorted(labels)

    def test_bad_window(self):
        with pytest.raises(InvalidParameterError):
            epoch(self.rec(), [500], [0], 1.0, 0.5)

    def test_crop(self):
        ep = EpochSet(np.arange(2 * 500, dtype=float).reshape(1, 2, 500), [0], FS)
        c = crop_epochs(ep, 0.5, 1.5)
        assert c.n_samples == 250 and c.data[0, 0, 0] == 125
        with pytest.raises(RangeError):
            crop_epochs(ep, 1.0, 2.5)


class TestWelch:
    def test_constant_signal(self):
        p = welch_psd(np.full(1000, 3.7), FS)
        assert np.all(p.psd < 1e-20)

    def test_shape_and_freqs(self):
        p = welch_psd(np.random.default_rng(0).standard_normal(1000), FS, nfft=128)
        assert len(p.freqs_hz) == len(p.psd) == 65
        assert p.freqs_hz[-1] == FS / 2

    def test_direct_periodogram_equivalence(self):
        x = np.random.default_rng(1).standard_normal(64)
        p = welch_psd(x, FS, nfft=64, overlap=0.0, window="boxcar", averaging="mean",
                      detrend="none")
        ref = direct_periodogram(x, FS)
        np.testing.assert_allclose(p.psd, ref, rtol=1e-10)

    def test_sine_parseval(self):
        nfft = 256
        f0 = 20 * FS / nfft
        t = np.arange(2048) / FS
        p = welch_psd(2.0 * np.sin(2 * np.pi * f0 * t), FS, nfft=nfft)
        assert abs(np.trapezoid(p.psd, p.freqs_hz) - 2.0) / 2.0 < 0.02

    def test_white_noise_variance(self):
        vals = []
        for seed in range(100):
            x = np.random.default_rng(seed).standard_normal(2560)
            p = welch_psd(x, FS, nfft=256, overlap=0.5, averaging="mean")
            vals.append(np.trapezoid(p.psd, p.freqs_hz))
        assert abs(np.mean(vals) - 1.0) < 0.05

    def test_median_is_plain_median(self):
        x = np.random.default_rng(2).standard_normal(256 * 3)
        p = welch_psd(x, FS, nfft=256, overlap=0.0, window="boxcar", detrend="none")
        segs = [direct_periodogram(x[i * 256:(i + 1) * 256], FS) for i in range(3)]
        np.testing.assert_allclose(p.psd, np.median(segs, axis=0), rtol=1e-10)

    def test_spectrum_scaling(self):
        x = np.random.default_rng(3).standard_normal(256)
        d = welch_psd(x, FS, nfft=256, window="boxcar", scaling="density")
        s = welch_psd(x, FS, nfft=256, window="boxcar", scaling="spectrum")
        np.testing.assert_allclose(s.psd, d.psd * FS / 256, rtol=1e-12)

    def test_matches_scipy_mean(self):
        from scipy.signal import welch
        x = np.random.default_rng(4).standard_normal(1000)
        p = welch_psd(x, FS, nfft=128, averaging="mean")
        f, ref = welch(x, FS, window="hann", nperseg=128, noverlap=64, detrend="constant")
        np.testing.assert_allclose(p.psd, ref, rtol=1e-10)

    def test_too_short(self):
        with pytest.raises(DegenerateInputError):
            welch_psd(np.ones(100), FS, nfft=128)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from(["median", "mean"]),
           st.sampled_from(["hann", "boxcar", "hamming"]))
    def test_non_negative(self, seed, averaging, window):
        x = np.random.default_rng(seed).standard_normal(300) * 10
        assert np.all(welch_psd(x, FS, nfft=64, window=window, averaging=averaging).psd >= 0)
