"""Synthetic 16 kHz clips for calibration, training and tests.

Three kinds:

* ``noise``: AR(1)-coloured Gaussian noise.
* ``tones``: harmonic stacks with a slow amplitude wobble and no noise floor.
* ``speechlike``: glottal-style pulse trains through broad formant bands,
  chopped into syllables. Energy sits in short bursts with quiet gaps between
  pulses, which is what makes a frame-gain watermark audible in principle
  and learnable for a removal network.

Clip ``i`` of a dataset depends only on (seed, kind, i), so datasets of
different sizes share their prefixes.
"""
import numpy as np
from scipy.signal import butter, lfilter

from .dsp import SAMPLE_RATE, AudioClip

KINDS = ("noise", "tones", "speechlike")


def _noise(rng, n):
    a = rng.uniform(0.5, 0.95)
    x = lfilter([1.0], [1.0, -a], rng.standard_normal(n + 64))[64:]
    return x / np.sqrt(np.mean(x ** 2)) * rng.uniform(0.05, 0.2)


def _tones(rng, n):
    t = np.arange(n) / SAMPLE_RATE
    f0 = rng.uniform(100, 400)
    x = np.zeros(n)
    for h in range(1, int(rng.integers(2, 6)) + 1):
        x += rng.uniform(0.3, 1.0) / h * np.sin(2 * np.pi * f0 * h * t + rng.uniform(0, 2 * np.pi))
    x *= 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(0.5, 3.0) * t)
    return x / np.max(np.abs(x)) * rng.uniform(0.2, 0.8)


def _speechlike(rng, n, floor=0.01):
    sr = SAMPLE_RATE
    f0 = rng.uniform(80, 250)
    tau = rng.uniform(2, 5)
    plen = int(10 * tau) + 1
    decay = np.exp(-np.arange(plen) / tau)
    src = np.zeros(n + plen)
    pos = rng.uniform(0, sr / f0)
    while pos < n:
        i = int(pos)
        src[i : i + plen] += rng.uniform(0.6, 1.0) * rng.standard_normal(plen) * decay
        pos += sr / f0 * (1 + rng.uniform(-0.1, 0.1))
    src = src[:n]
    # direct path plus three first-order formant bands
    y = src.copy()
    centres = rng.uniform([400, 1100, 2300], [900, 2000, 3500])
    for fc, bw in zip(centres, (600, 800, 1000)):
        b, a = butter(1, [(fc - bw / 2) / (sr / 2), (fc + bw / 2) / (sr / 2)], "band")
        y += lfilter(b, a, src)
    env = np.zeros(n)
    p = int(rng.uniform(0, 2000))
    while p < n:
        d = int(rng.uniform(0.1, 0.3) * sr)
        seg = np.sin(np.pi * np.arange(d) / d) ** 0.5
        env[p : p + d] = seg[: max(0, min(d, n - p))]
        p += d + int(rng.uniform(0.05, 0.15) * sr)
    y = y * env
    y = y / np.sqrt(np.mean(y ** 2)) + floor * rng.standard_normal(n)
    # soft limiter keeps pulse peaks inside [-1, 1] without hard clipping
    return np.tanh(y * rng.uniform(0.05, 0.12))


_MAKERS = {"noise": _noise, "tones": _tones, "speechlike": _speechlike}


def synth_clip(kind, seed, index=0, duration=1.0):
    if kind not in _MAKERS:
        raise ValueError(f"unknown synthetic kind {kind!r}; choose from {KINDS}")
    n = int(round(duration * SAMPLE_RATE))
    if n < 1:
        raise ValueError("duration too short")
    ss = np.random.SeedSequence([int(seed), KINDS.index(kind), int(index)])
    x = _MAKERS[kind](np.random.default_rng(ss), n)
    return AudioClip.clipped(x)


def synth_dataset(kind, n, seed=0, duration=1.0):
    """List of ``n`` clips of ``duration`` seconds."""
    if n < 0:
        raise ValueError("n must be non-negative")
    return [synth_clip(kind, seed, i, duration) for i in range(n)]
