"""Reference victim schemes.

``zero_bit_ssw``: spread-spectrum watermark whose per-frame gain follows the
frame RMS; the detector reports a logistic confidence of a normalised
correlation statistic.

``multi_bit_qim``: quantisation index modulation of STFT magnitudes at keyed
(frame, bin) cells between 1 and 4 kHz; the detector decodes a bit message.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .dsp import AudioClip, StftConfig

SCHEMES = ("zero_bit_ssw", "multi_bit_qim")
SSW_FRAME = 512
QIM_BITS = 16
QIM_CELLS_PER_BIT = 8
QIM_BAND = (1000.0, 4000.0)

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


class CalibrationError(ValueError):
    """Clean and watermarked statistics are not separable."""


def splitmix64(seed, n):
    """First ``n`` outputs of the splitmix64 generator seeded with ``seed``."""
    if not 0 <= int(seed) <= _MASK64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    with np.errstate(over="ignore"):
        i = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(seed) + i * _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


@dataclass(frozen=True)
class WatermarkKey:
    seed: int
    scheme: str = "zero_bit_ssw"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if not 0 <= int(self.seed) <= _MASK64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class DetectorConfig:
    threshold: float = 0.5
    a: float = 1.0
    b: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if not self.a > 0:
            raise ValueError("logistic scale a must be positive")


@dataclass(frozen=True)
class DetectionResult:
    confidence: float
    decoded_bits: tuple = None
    statistic: float = None
    # per-cell nearest-dither decisions [bits, cells], multi-bit only
    cell_bits: np.ndarray = field(default=None, compare=False, repr=False)


def pn_sequence(key, n):
    """+1/-1 chips from the top bit of a splitmix64 stream."""
    if n < 1:
        raise ValueError("sequence length must be >= 1")
    top = splitmix64(key.seed, n) >> np.uint64(63)
    return np.where(top == 1, 1.0, -1.0)


def logistic(z, a, b):
    t = a * (np.asarray(z, dtype=np.float64) - b)
    return np.exp(-np.logaddexp(0.0, -t))


# -- zero-bit spread spectrum --------------------------------------------------

def ssw_frame_gains(x, beta, frame=SSW_FRAME):
    """beta * RMS of each 512-sample frame (the last frame may be shorter)."""
    n = x.size
    gains = np.empty(-(-n // frame))
    for t in range(gains.size):
        seg = x[t * frame : (t + 1) * frame]
        gains[t] = beta * np.sqrt(np.mean(seg * seg))
    return gains


def ssw_signal(clip, key, beta=0.1):
    """The additive pattern g_t * p before clamping."""
    x = clip.samples
    g = np.repeat(ssw_frame_gains(x, beta), SSW_FRAME)[: x.size]
    return g * pn_sequence(key, x.size)


def ssw_embed(clip, key, beta=0.1):
    if beta < 0:
        raise ValueError("strength must be non-negative")
    if len(clip) < 1:
        raise ValueError("empty clip")
    return AudioClip.clipped(clip.samples + ssw_signal(clip, key, beta))


def ssw_statistic(x, key):
    """z = <x, p> / ||x||; 0 for an all-zero clip."""
    x = np.asarray(x, dtype=np.float64)
    norm = np.sqrt(np.sum(x * x))
    if norm == 0:
        return 0.0
    return float(np.dot(x, pn_sequence(key, x.size)) / norm)


def ssw_detect(clip, key, cfg=DetectorConfig()):
    if len(clip) < SSW_FRAME:
        raise ValueError(f"detection needs at least {SSW_FRAME} samples")
    z = ssw_statistic(clip.samples, key)
    return DetectionResult(confidence=float(logistic(z, cfg.a, cfg.b)), statistic=z)


def calibrate_ssw(key, beta, clips, threshold=0.5):
    """Fit the logistic confidence from clean and watermarked z statistics.

    Clean and watermarked anchors z_c < z_w are mapped to confidence 0.1 and
    0.9. Anchors are the 3-sigma points of each distribution, which leaves
    margin for unseen clips; when those overlap the 95th/5th percentiles are
    used instead. Percentiles that do not separate mean failure.
    """
    if len(clips) < 100:
        raise ValueError("calibration needs at least 100 clips")
    zc = np.array([ssw_statistic(c.samples, key) for c in clips])
    zw = np.array([ssw_statistic(ssw_embed(c, key, beta).samples, key) for c in clips])
    c95, w5 = np.percentile(zc, 95), np.percentile(zw, 5)
    if not w5 > c95:
        raise CalibrationError(
            f"watermarked 5th percentile {w5:.3f} <= clean 95th percentile {c95:.3f}")
    lo = max(c95, zc.mean() + 3 * zc.std())
    hi = min(w5, zw.mean() - 3 * zw.std())
    if not hi > lo:
        lo, hi = c95, w5
    b = 0.5 * (lo + hi)
    a = 2.0 * np.log(9.0) / (hi - lo)
    return DetectorConfig(threshold=threshold, a=float(a), b=float(b))


# -- multi-bit QIM ---------------------------------------------------------------

def qim_cells(key, n_frames, cfg=StftConfig(), bits=QIM_BITS, per_bit=QIM_CELLS_PER_BIT):
    """Keyed (frame, bin) cells, shape [bits, per_bit, 2], all distinct."""
    df = dsp.SAMPLE_RATE / cfg.fft_size
    lo, hi = int(np.ceil(QIM_BAND[0] / df)), int(np.floor(QIM_BAND[1] / df))
    n_bins = hi - lo + 1
    total = n_frames * n_bins
    need = bits * per_bit
    if total < need:
        raise ValueError(f"clip hosts {total} candidate cells, {need} needed")
    # rank candidates by a keyed hash; stable across numpy versions
    order = np.argsort(splitmix64(key.seed ^ 0x5157, total), kind="stable")[:need]
    frames, bins = np.divmod(order, n_bins)
    return np.stack([frames, bins + lo], axis=-1).reshape(bits, per_bit, 2)


def _quantise(m, step, d):
    return step * (np.round(m / step - d) + d)


def qim_embed(clip, key, bits, step=0.5, cfg=StftConfig(), iters=60, tol=1e-6):
    """Snap the magnitude of each keyed cell onto the lattice for its bit.

    A spectrogram edit does not survive istft/stft unchanged (overlapping
    frames smear it), so the edit is applied as a waveform correction and
    repeated until the re-analysed cells sit on their targets.
    """
    bits = np.asarray(bits, dtype=int)
    if step <= 0:
        raise ValueError("quantiser step must be positive")
    if bits.ndim != 1 or not np.all((bits == 0) | (bits == 1)):
        raise ValueError("bits must be a 0/1 vector")
    x = clip.samples
    T = cfg.frames(x.size)
    if T < 1:
        raise ValueError("clip shorter than one STFT frame")
    cells = qim_cells(key, T, cfg, bits=bits.size)
    fi, bi = cells[..., 0].ravel(), cells[..., 1].ravel()
    dither = np.repeat(bits / 2.0, cells.shape[1])
    S0 = dsp.stft_array(x, cfg)
    target = _quantise(np.abs(S0[fi, bi]), step, dither)
    y = x.copy()
    for _ in range(iters):
        S = dsp.stft_array(y, cfg)
        cur = S[fi, bi]
        err = np.abs(cur) - target
        if np.max(np.abs(err)) < tol * step:
            break
        phase = np.where(np.abs(cur) > 0, cur / np.maximum(np.abs(cur), 1e-300), 1.0)
        D = np.zeros_like(S)
        np.add.at(D, (fi, bi), target * phase - cur)
        y = y + dsp.istft_array(D, cfg, length=x.size)
    return AudioClip.clipped(y)


def qim_cell_decisions(x, key, step=0.5, cfg=StftConfig(), bits=QIM_BITS):
    """Nearest-dither bit per cell, [bits, cells]."""
    T = cfg.frames(np.asarray(x).size)
    if T < 1:
        raise ValueError("clip shorter than one STFT frame")
    cells = qim_cells(key, T, cfg, bits=bits)
    m = np.abs(dsp.stft_array(np.asarray(x, dtype=np.float64), cfg)[cells[..., 0], cells[..., 1]])
    frac = np.mod(m / step, 1.0)
    return ((frac >= 0.25) & (frac < 0.75)).astype(int)


def qim_decode(clip, key, step=0.5, cfg=StftConfig(), bits=QIM_BITS):
    dec = qim_cell_decisions(clip.samples, key, step, cfg, bits)
    ones = dec.sum(axis=1)
    per = dec.shape[1]
    # ties go to 0
    out = (2 * ones > per).astype(int)
    agree = np.where(out == 1, ones, per - ones) / per
    return DetectionResult(confidence=float(agree.mean()), decoded_bits=tuple(int(b) for b in out),
                           statistic=float(agree.mean()), cell_bits=dec)


def default_message(key, bits=QIM_BITS):
    """Keyed default payload used when no message is given."""
    return tuple(int(v >> np.uint64(63)) for v in splitmix64(key.seed ^ 0xB175, bits))


# -- victim wrappers ---------------------------------------------------------------

class Victim:
    """Black-box API of a watermarking library: embed, detect, and the
    attack-success rule. ``queries`` counts detect calls."""

    scheme = None

    def __init__(self):
        self.queries = 0

    def embed(self, clip):
        raise NotImplementedError

    def _detect(self, clip):
        raise NotImplementedError

    def detect(self, clip):
        self.queries += 1
        return self._detect(clip)

    def removed(self, result):
        """True when ``result`` means the watermark is gone (attack success)."""
        raise NotImplementedError

    def score(self, result):
        """Attacker objective, lower is better."""
        raise NotImplementedError

    def to_json(self):
        raise NotImplementedError


class SpreadSpectrumVictim(Victim):
    scheme = "zero_bit_ssw"

    def __init__(self, seed, strength=0.1, detector=DetectorConfig()):
        super().__init__()
        self.key = WatermarkKey(seed, self.scheme)
        self.strength = float(strength)
        self.detector = detector

    def embed(self, clip):
        return ssw_embed(clip, self.key, self.strength)

    def _detect(self, clip):
        return ssw_detect(clip, self.key, self.detector)

    def removed(self, result):
        return result.confidence < self.detector.threshold

    def score(self, result):
        return result.confidence

    def confidence_tensor(self, x):
        """Differentiable confidence of a [B, L] Tensor batch."""
        from .tensor import Tensor, sigmoid, sqrt, tsum
        p = Tensor(pn_sequence(self.key, x.shape[-1]).astype(x.dtype))
        num = tsum(x * p, axis=-1)
        den = sqrt(tsum(x * x, axis=-1) + 1e-12)
        return sigmoid((num / den - self.detector.b) * self.detector.a)

    def calibrate(self, clips):
        self.detector = calibrate_ssw(self.key, self.strength, clips, self.detector.threshold)
        return self.detector

    def to_json(self):
        return {"scheme": self.scheme, "seed": int(self.key.seed), "strength": self.strength,
                "a": self.detector.a, "b": self.detector.b, "tau": self.detector.threshold}


class QimVictim(Victim):
    scheme = "multi_bit_qim"

    def __init__(self, seed, strength=0.5, message=None, detector=DetectorConfig()):
        super().__init__()
        self.key = WatermarkKey(seed, self.scheme)
        self.strength = float(strength)
        self.message = tuple(message) if message is not None else default_message(self.key)
        if len(self.message) != QIM_BITS:
            raise ValueError(f"message must have {QIM_BITS} bits")
        self.detector = detector

    def embed(self, clip):
        return qim_embed(clip, self.key, self.message, self.strength)

    def _detect(self, clip):
        return qim_decode(clip, self.key, self.strength)

    def removed(self, result):
        return tuple(result.decoded_bits) != self.message

    def score(self, result):
        # fraction of cells still voting for the embedded message
        ref = np.asarray(self.message)[:, None]
        return float(np.mean(result.cell_bits == ref))

    def confidence_tensor(self, x):
        raise NotImplementedError("the QIM decoder is not differentiable")

    def calibrate(self, clips):
        """Check the clean channel round-trips on every clip."""
        if len(clips) < 100:
            raise ValueError("calibration needs at least 100 clips")
        for i, c in enumerate(clips):
            if qim_decode(self.embed(c), self.key, self.strength).decoded_bits != self.message:
                raise CalibrationError(f"clip {i} does not decode on a clean channel")
        return self.detector

    def to_json(self):
        return {"scheme": self.scheme, "seed": int(self.key.seed), "strength": self.strength,
                "a": self.detector.a, "b": self.detector.b, "tau": self.detector.threshold,
                "message": list(self.message)}


def make_victim(scheme, seed, strength=None, **kw):
    if scheme == "zero_bit_ssw":
        return SpreadSpectrumVictim(seed, 0.1 if strength is None else strength, **kw)
    if scheme == "multi_bit_qim":
        return QimVictim(seed, 0.5 if strength is None else strength, **kw)
    raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")


def victim_from_json(d):
    det = DetectorConfig(threshold=d.get("tau", 0.5), a=d.get("a", 1.0), b=d.get("b", 0.0))
    if d["scheme"] == "multi_bit_qim":
        return QimVictim(d["seed"], d["strength"], d.get("message"), det)
    return make_victim(d["scheme"], d["seed"], d["strength"], detector=det)


def save_victim(victim, path):
    with open(path, "w") as f:
        json.dump(victim.to_json(), f, indent=2, sort_keys=True)


def load_victim(path):
    with open(path) as f:
        return victim_from_json(json.load(f))
