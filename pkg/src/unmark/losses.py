"""Training objectives for the removal generator and the discriminator.

Inputs are Tensors of shape [B, L] (1-D arrays and AudioClips are promoted
to a batch of one). Every loss is a per-clip mean followed by a batch mean,
so the weights do not depend on batch size or clip length.
"""
from dataclasses import asdict, dataclass

import numpy as np

from . import dsp
from .dsp import AudioClip, StftConfig
from .tensor import (Tensor, bce, cosine_similarity, l1_distance, l2_distance, mean, softmax,
                     stft_power, tsum)

# |STFT|^2 is divided by sum(w^2) of the Hann window so band powers are in
# per-sample units (a white signal of variance s2 has power s2 per bin).
POWER_NORM = float(np.sum(dsp.hann_window(2048) ** 2))


@dataclass(frozen=True)
class LossWeights:
    recon: float = 0.1
    psycho: float = 0.001
    decorr: float = 0.1
    adv: float = 0.5
    detector: float = 0.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"weight {k} must be finite and >= 0, got {v}")

    def without(self, *names):
        d = asdict(self)
        for n in names:
            if n not in d:
                raise ValueError(f"unknown loss component {n!r}")
            d[n] = 0.0
        return LossWeights(**d)


@dataclass
class MelBandStats:
    e: Tensor  # [B, M] watermark energy per band
    w: Tensor  # [B, M] softmax(e)
    r: Tensor  # [B, M] residual energy per band


def as_batch(x, dtype=None):
    if isinstance(x, Tensor):
        return x if x.ndim == 2 else x.reshape(1, -1)
    if isinstance(x, AudioClip):
        x = x.samples
    a = np.asarray(x, dtype=dtype or np.float64)
    return Tensor(a if a.ndim == 2 else a.reshape(1, -1))


def _same_shape(*xs):
    shapes = {x.shape for x in xs}
    if len(shapes) != 1:
        raise ValueError(f"length mismatch: {sorted(shapes)}")


def recon_loss(x_unwm, x_clean):
    """mean|d| + 0.1 mean(d^2) with d = x_unwm - x_clean."""
    a, b = as_batch(x_unwm), as_batch(x_clean)
    _same_shape(a, b)
    return l1_distance(a, b) + l2_distance(a, b) * 0.1


_FB_CACHE = {}


def default_filterbank(cfg=StftConfig()):
    key = (cfg.fft_size, cfg.hop)
    if key not in _FB_CACHE:
        _FB_CACHE[key] = dsp.mel_filterbank(64, 200.0, 8000.0, cfg.bins, dsp.SAMPLE_RATE)
    return _FB_CACHE[key]


def mel_power(x, fb=None, cfg=StftConfig(), norm=POWER_NORM):
    """[B, L] -> [B, T, M] mel band powers (differentiable)."""
    fb = fb if fb is not None else default_filterbank(cfg)
    P = stft_power(x, cfg.fft_size, cfg.hop)
    W = Tensor(fb.weights.T.astype(x.dtype) / norm)
    return P @ W


def psycho_stats(x_clean, x_wm, x_unwm, fb=None, cfg=StftConfig(), norm=POWER_NORM):
    """Per-band watermark energy e, its softmax w, and residual energy r."""
    c, w, u = as_batch(x_clean), as_batch(x_wm), as_batch(x_unwm)
    _same_shape(c, w, u)
    if c.shape[-1] < cfg.fft_size:
        raise ValueError(f"clips shorter than one STFT frame ({cfg.fft_size})")
    Ec = mel_power(c, fb, cfg, norm)
    e = mean(mel_power(w, fb, cfg, norm) - Ec, axis=1)
    r = mean(mel_power(u, fb, cfg, norm) - Ec, axis=1)
    return MelBandStats(e=e, w=softmax(e, axis=-1), r=r)


def psycho_loss(stats):
    """sum_m w_m r_m, averaged over the batch; signed."""
    return mean(tsum(stats.w * stats.r, axis=-1))


def decorr_loss(x_unwm, x_wm, x_clean):
    """0.5 (1 + cos(x_unwm - x_clean, x_wm - x_clean)), in [0, 1]."""
    u, w, c = as_batch(x_unwm), as_batch(x_wm), as_batch(x_clean)
    _same_shape(u, w, c)
    cos = cosine_similarity(u - c, w - c, axis=-1)
    return mean(cos) * 0.5 + 0.5


def adv_loss(d_unwm):
    """BCE(D(x_unwm), 1): the generator wants its output judged clean."""
    return bce(as_batch(d_unwm), 1.0)


def disc_loss(d_clean, d_unwm):
    return (bce(as_batch(d_clean), 1.0) + bce(as_batch(d_unwm), 0.0)) * 0.5


def gen_total_loss(components, weights):
    """Weighted sum of the named components.

    ``components`` maps recon/psycho/decorr/adv (and optionally detector) to
    scalar Tensors or floats; zero-weight terms are skipped entirely.
    """
    total = None
    for name, alpha in asdict(weights).items():
        if alpha == 0.0:
            continue
        if name not in components:
            if name == "detector":
                raise ValueError("detector weight > 0 needs a detector confidence component")
            raise ValueError(f"missing loss component {name!r}")
        term = components[name] * alpha if isinstance(components[name], Tensor) else Tensor(
            np.float64(components[name]) * alpha)
        total = term if total is None else total + term
    return total if total is not None else Tensor(np.float64(0.0))


def generator_losses(x_clean, x_wm, x_unwm, d_unwm, weights, victim=None, fb=None):
    """All generator terms for one batch; returns (total, {name: Tensor})."""
    comps = {}
    if weights.recon:
        comps["recon"] = recon_loss(x_unwm, x_clean)
    if weights.psycho:
        comps["psycho"] = psycho_loss(psycho_stats(x_clean, x_wm, x_unwm, fb))
    if weights.decorr:
        comps["decorr"] = decorr_loss(x_unwm, x_wm, x_clean)
    if weights.adv:
        comps["adv"] = adv_loss(d_unwm)
    if weights.detector:
        if victim is None:
            raise ValueError("detector-guided loss needs a victim")
        comps["detector"] = mean(victim.confidence_tensor(x_unwm))
    return gen_total_loss(comps, weights), comps
