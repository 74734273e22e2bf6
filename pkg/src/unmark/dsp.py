"""Framing, STFT/iSTFT, mel filterbank and dB helpers.

Everything here is a pure function of its inputs. Arrays are float64 unless
noted; complex spectrograms are ``[frames, bins]``.
"""
from dataclasses import dataclass

import numpy as np

SAMPLE_RATE = 16000
POWER_FLOOR = 1e-10
DB_FLOOR = -80.0


@dataclass(frozen=True)
class AudioClip:
    """Mono 16 kHz signal with samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("AudioClip samples must be one-dimensional")
        if x.size < 1:
            raise ValueError("AudioClip needs at least one sample")
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"sample_rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        if not np.all(np.isfinite(x)):
            raise ValueError("AudioClip samples must be finite")
        if np.max(np.abs(x)) > 1.0:
            raise ValueError("AudioClip samples must lie in [-1, 1]")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    @classmethod
    def clipped(cls, samples):
        """Build a clip after clamping to [-1, 1]."""
        return cls(np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0))

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 2048
    hop: int = 512

    def __post_init__(self):
        n, h = self.fft_size, self.hop
        if n < 2 or n & (n - 1):
            raise ValueError("fft_size must be a power of two >= 2")
        if h < 1 or n % h:
            raise ValueError("hop must divide fft_size")

    @property
    def bins(self):
        return self.fft_size // 2 + 1

    @property
    def cola(self):
        """True when the squared-window overlap sum is constant."""
        env = _wola_envelope(self.fft_size, self.hop)
        return bool(np.ptp(env) <= 1e-9 * env.max())

    def frames(self, length):
        if length < self.fft_size:
            return 0
        return (length - self.fft_size) // self.hop + 1


@dataclass(frozen=True)
class Spectrogram:
    values: np.ndarray  # complex [T, F]
    config: StftConfig = StftConfig()

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[1] != self.config.bins:
            raise ValueError(f"spectrogram must be [T, {self.config.bins}], got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("spectrogram entries must be finite")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape

    def power(self):
        return np.abs(self.values) ** 2


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray  # [M, F]
    f_lo: float = 200.0
    f_hi: float = 8000.0
    centers_hz: np.ndarray = None

    @property
    def bands(self):
        return self.weights.shape[0]

    @property
    def bins(self):
        return self.weights.shape[1]


def hann_window(n):
    """Periodic Hann window, w[i] = 0.5 (1 - cos(2 pi i / n))."""
    if n < 2:
        raise ValueError("window length must be >= 2")
    i = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * i / n))


def _wola_envelope(n, hop):
    w2 = hann_window(n) ** 2
    return w2.reshape(-1, hop).sum(axis=0)


def frame_signal(x, cfg=StftConfig()):
    """View of x as [T, fft_size] frames; the tail that does not fill a frame is dropped."""
    x = np.asarray(x)
    T = cfg.frames(x.shape[-1])
    if T < 1:
        raise ValueError(f"signal of length {x.shape[-1]} is shorter than one frame ({cfg.fft_size})")
    view = np.lib.stride_tricks.sliding_window_view(x, cfg.fft_size, axis=-1)
    return view[..., : (T - 1) * cfg.hop + 1 : cfg.hop, :]


def stft_array(x, cfg=StftConfig()):
    """Complex STFT of a raw array (last axis is time)."""
    frames = frame_signal(x, cfg) * hann_window(cfg.fft_size)
    return np.fft.rfft(frames, axis=-1)


def stft(clip, cfg=StftConfig()):
    samples = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip, dtype=np.float64)
    return Spectrogram(stft_array(samples, cfg), cfg)


def istft_array(values, cfg=StftConfig(), length=None):
    """Weighted overlap-add inverse of ``stft_array``.

    Output covers (T-1)*hop + fft_size samples, then is cut or zero-padded to
    ``length`` when given. Samples no frame touches come back as zero.
    """
    if not cfg.cola:
        raise ValueError(f"hop {cfg.hop} is not overlap-add consistent for fft_size {cfg.fft_size}")
    values = np.asarray(values)
    T = values.shape[0]
    n, hop = cfg.fft_size, cfg.hop
    w = hann_window(n)
    frames = np.fft.irfft(values, n=n, axis=-1) * w
    out_len = (T - 1) * hop + n
    y = np.zeros(out_len)
    norm = np.zeros(out_len)
    w2 = w * w
    for t in range(T):
        y[t * hop : t * hop + n] += frames[t]
        norm[t * hop : t * hop + n] += w2
    nz = norm > 1e-12
    y[nz] /= norm[nz]
    y[~nz] = 0.0
    if length is not None:
        if length <= out_len:
            y = y[:length]
        else:
            y = np.concatenate([y, np.zeros(length - out_len)])
    return y


def istft(spec, length=None):
    """Inverse STFT; the result is clamped to [-1, 1] to stay a valid clip."""
    return AudioClip.clipped(istft_array(spec.values, spec.config, length))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(M=64, f_lo=200.0, f_hi=8000.0, F=1025, sr=SAMPLE_RATE):
    """Triangular filters with centres evenly spaced in mel.

    Band m rises from point m to a peak of 1 at point m+1 and falls to zero
    at point m+2, where the M+2 points are uniform on the mel axis between
    f_lo and f_hi. Neighbouring triangles therefore overlap by half.
    """
    if M < 2:
        raise ValueError("need at least two mel bands")
    if not (0 < f_lo < f_hi <= sr / 2):
        raise ValueError("require 0 < f_lo < f_hi <= sr/2")
    if F < 2:
        raise ValueError("need at least two frequency bins")
    pts = mel_to_hz(np.linspace(hz_to_mel(f_lo), hz_to_mel(f_hi), M + 2))
    freqs = np.linspace(0.0, sr / 2, F)
    lo, mid, hi = pts[:-2, None], pts[1:-1, None], pts[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    W = np.maximum(0.0, np.minimum(up, down))
    empty = np.flatnonzero(~np.any(W > 0, axis=1))
    if empty.size:
        raise ValueError(f"mel bands {empty.tolist()} cover no frequency bin; use fewer bands or more bins")
    return MelFilterbank(W, float(f_lo), float(f_hi), pts[1:-1])


def mel_band_energies(spec, fb):
    """E[t, m] = sum_f fb[m, f] |S[t, f]|^2."""
    P = spec.power() if isinstance(spec, Spectrogram) else np.asarray(spec)
    if P.shape[-1] != fb.bins:
        raise ValueError(f"filterbank has {fb.bins} bins, spectrogram has {P.shape[-1]}")
    return P @ fb.weights.T


def power_db(power):
    """Plain 10 log10 with the 1e-10 floor, no normalisation."""
    return 10.0 * np.log10(np.maximum(np.asarray(power, dtype=np.float64), POWER_FLOOR))


def to_db(power, ref=None):
    """dB relative to the peak (or ``ref``), clamped to [-80, 0]."""
    p = np.asarray(power, dtype=np.float64)
    peak = np.max(p) if ref is None else float(ref)
    d = power_db(p) - power_db(max(peak, POWER_FLOOR))
    return np.clip(d, DB_FLOOR, 0.0)
