import numpy as np
import pytest

from unmark import dsp
from unmark.dsp import AudioClip, Spectrogram, StftConfig


def _dense_mel(M, f_lo, f_hi, F, sr):
    # scalar-loop oracle for the triangular filterbank
    m_lo = 2595.0 * np.log10(1 + f_lo / 700.0)
    m_hi = 2595.0 * np.log10(1 + f_hi / 700.0)
    pts = [700.0 * (10 ** ((m_lo + (m_hi - m_lo) * i / (M + 1)) / 2595.0) - 1) for i in range(M + 2)]
    W = np.zeros((M, F))
    for m in range(M):
        a, b, c = pts[m], pts[m + 1], pts[m + 2]
        for k in range(F):
            f = k * (sr / 2) / (F - 1)
            if a < f <= b:
                W[m, k] = (f - a) / (b - a)
            elif b < f < c:
                W[m, k] = (c - f) / (c - b)
    return W


class TestAudioClip:
    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            AudioClip(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            AudioClip(np.zeros(0))
        with pytest.raises(ValueError):
            AudioClip(np.array([0.0, 1.5]))
        with pytest.raises(ValueError):
            AudioClip(np.array([0.0, np.nan]))
        with pytest.raises(ValueError):
            AudioClip(np.zeros(4), sample_rate=44100)

    def test_clipped_and_readonly(self):
        c = AudioClip.clipped([2.0, -3.0, 0.25])
        assert c.samples.tolist() == [1.0, -1.0, 0.25]
        with pytest.raises(ValueError):
            c.samples[0] = 0.0
        assert len(c) == 3 and c.duration == 3 / 16000


class TestWindow:
    def test_closed_forms(self):
        assert np.allclose(dsp.hann_window(4), [0, 0.5, 1, 0.5], atol=1e-15)
        # periodic window: w[1] = 0.5 (1 - cos(pi)) = 1
        assert np.allclose(dsp.hann_window(2), [0, 1], atol=1e-15)
        assert abs(dsp.hann_window(2048)[1024] - 1.0) < 1e-12

    def test_too_short(self):
        with pytest.raises(ValueError):
            dsp.hann_window(1)


class TestStft:
    def test_frame_count(self):
        S = dsp.stft(AudioClip(np.zeros(16000)))
        assert S.shape == (28, 1025)
        assert np.all(S.values == 0)

    def test_short_clip(self):
        with pytest.raises(ValueError):
            dsp.stft(AudioClip(np.zeros(2047)))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            StftConfig(1000, 250)
        with pytest.raises(ValueError):
            StftConfig(2048, 300)

    def test_matches_direct_dft(self, rng):
        x = rng.uniform(-0.5, 0.5, 5000)
        cfg = StftConfig(256, 64)
        S = dsp.stft_array(x, cfg)
        w = dsp.hann_window(256)
        t = 7
        frame = x[t * 64 : t * 64 + 256] * w
        n = np.arange(256)
        for k in (0, 3, 50, 128):
            ref = np.sum(frame * np.exp(-2j * np.pi * k * n / 256))
            assert abs(S[t, k] - ref) < 1e-9

    def test_sine_peak(self):
        t = np.arange(16000) / 16000
        S = dsp.stft(AudioClip(0.5 * np.sin(2 * np.pi * 1000 * t)))
        assert np.all(np.argmax(np.abs(S.values), axis=1) == 128)

    def test_parseval(self, rng):
        x = rng.standard_normal(4096) * 0.1
        cfg = StftConfig(512, 128)
        frames = dsp.frame_signal(x, cfg) * dsp.hann_window(512)
        full = np.fft.fft(frames, axis=-1)
        lhs = np.sum(frames ** 2, axis=1)
        rhs = np.sum(np.abs(full) ** 2, axis=1) / 512
        assert np.allclose(lhs, rhs, rtol=1e-6)

    def test_round_trip_interior(self, rng):
        x = rng.uniform(-0.5, 0.5, 32000)
        y = dsp.istft(dsp.stft(AudioClip(x)), len(x)).samples
        interior = slice(2048, 32000 - 2048)
        assert np.sqrt(np.mean((y[interior] - x[interior]) ** 2)) <= 1e-4

    def test_single_frame(self, rng):
        x = rng.uniform(-0.5, 0.5, 2048)
        y = dsp.istft_array(dsp.stft_array(x), StftConfig(), 2048)
        support = dsp.hann_window(2048) > 1e-3
        assert np.max(np.abs(y[support] - x[support])) < 1e-6

    def test_non_cola_rejected(self):
        cfg = StftConfig(2048, 2048)
        spec = Spectrogram(np.zeros((2, 1025), dtype=complex), cfg)
        with pytest.raises(ValueError):
            dsp.istft(spec)

    def test_zero_spectrogram(self):
        assert np.all(dsp.istft(Spectrogram(np.zeros((4, 1025), dtype=complex))).samples == 0)


class TestMel:
    def test_default_shape(self):
        fb = dsp.mel_filterbank()
        assert fb.weights.shape == (64, 1025)
        assert np.all(fb.weights.sum(axis=1) > 0)

    def test_matches_dense_oracle(self):
        fb = dsp.mel_filterbank(64, 200.0, 8000.0, 1025, 16000)
        assert np.max(np.abs(fb.weights - _dense_mel(64, 200.0, 8000.0, 1025, 16000))) <= 1e-9
        small = dsp.mel_filterbank(3, 300.0, 4000.0, 65, 16000)
        assert np.max(np.abs(small.weights - _dense_mel(3, 300.0, 4000.0, 65, 16000))) <= 1e-9

    def test_two_bands(self):
        fb = dsp.mel_filterbank(2, 200.0, 8000.0)
        assert fb.bands == 2
        # the peak of band 0 is where band 1 starts rising
        assert np.argmax(fb.weights[0]) < np.argmax(fb.weights[1])

    def test_first_center(self):
        fb = dsp.mel_filterbank()
        m = dsp.hz_to_mel(fb.centers_hz[0])
        expected = dsp.hz_to_mel(200.0) + (dsp.hz_to_mel(8000.0) - dsp.hz_to_mel(200.0)) / 65
        assert abs(m - expected) < 1e-9

    def test_bad_args(self):
        with pytest.raises(ValueError):
            dsp.mel_filterbank(1)
        with pytest.raises(ValueError):
            dsp.mel_filterbank(64, 0.0, 8000.0)
        with pytest.raises(ValueError):
            dsp.mel_filterbank(64, 200.0, 9000.0)
        with pytest.raises(ValueError):
            dsp.mel_filterbank(512, 200.0, 8000.0, F=65)

    def test_energies(self, rng):
        fb = dsp.mel_filterbank(3, 300.0, 4000.0, 8, 16000)
        spec = rng.standard_normal((4, 8)) + 1j * rng.standard_normal((4, 8))
        P = np.abs(spec) ** 2
        E = dsp.mel_band_energies(P, fb)
        ref = np.array([[sum(fb.weights[m, f] * P[t, f] for f in range(8)) for m in range(3)]
                        for t in range(4)])
        assert np.max(np.abs(E - ref)) <= 1e-9
        assert np.allclose(dsp.mel_band_energies(4 * P, fb), 4 * E)
        assert np.all(dsp.mel_band_energies(np.zeros((2, 8)), fb) == 0)
        with pytest.raises(ValueError):
            dsp.mel_band_energies(np.zeros((2, 9)), fb)


def test_to_db():
    p = np.array([1.0, 0.1, 1e-12])
    assert np.allclose(dsp.to_db(p), [0.0, -10.0, -80.0])
    assert dsp.power_db(1e-20) == -100.0
