"""Watermark removal attacks.

* ``train`` co-trains the removal generator and a clean-vs-edited discriminator.
* ``remove`` is the single-pass removal with a before/after detector check.
* ``square_attack`` is a query-only random search with constant-offset windows.
* ``codec_attack`` applies a lowpass or requantization processing step.
"""
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import dsp
from .dsp import AudioClip, StftConfig
from .losses import LossWeights, disc_loss, generator_losses
from .removal import GeneratorConfig, generator_forward, init_models
from .tensor import Adam, NonFiniteError, Tensor
from .tensor import nn

LOG_COLUMNS = ("step", "epoch", "L_recon", "L_psycho", "L_decorr", "L_adv", "L_total", "L_disc",
               "D_clean_mean", "D_unwm_mean")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr_g: float = 1e-3
    lr_d: float = 1e-4
    seed: int = 42
    weights: LossWeights = field(default_factory=LossWeights)
    scheme: str = "zero_bit_ssw"
    dataset: dict = field(default_factory=lambda: {"kind": "speechlike", "n": 256, "duration_s": 1.0})
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (self.lr_g > 0 and self.lr_d > 0):
            raise ValueError("learning rates must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "weights" in d:
            d["weights"] = LossWeights(**d["weights"])
        if "generator" in d:
            d["generator"] = GeneratorConfig(**d["generator"])
        return cls(**d)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TrainResult:
    generator: object
    discriminator: object
    log: list  # one dict per batch, keys LOG_COLUMNS


def _stack(clips):
    return np.stack([c.samples if isinstance(c, AudioClip) else np.asarray(c, dtype=np.float64)
                     for c in clips]).astype(nn.DTYPE)


def _check_pairs(data):
    if len(data) == 0:
        raise ValueError("training data is empty")
    n = len(data[0][0])
    for i, (c, w) in enumerate(data):
        if len(c) != len(w):
            raise ValueError(f"pair {i}: clean and watermarked lengths differ")
        if len(c) != n:
            raise ValueError(f"pair {i}: all clips must share one length")


def train(cfg, data, victim=None, models=None, on_epoch=None):
    """Co-train G and D on ``data``, a sequence of (x_clean, x_wm) pairs.

    Per batch: x_unwm = G(x_wm); one D step with x_unwm held constant; one G
    step on the weighted generator loss. ``victim`` is needed only when the
    detector-guided weight is non-zero. With a zero adversarial weight the
    discriminator is skipped and its log columns are NaN. ``on_epoch(epoch, G, D)`` is an
    optional hook called after every epoch.
    """
    _check_pairs(data)
    G, D = models if models is not None else init_models(cfg.seed, cfg.generator)
    clean, marked = _stack([c for c, _ in data]), _stack([w for _, w in data])
    opt_g, opt_d = Adam(G.parameters(), cfg.lr_g), Adam(D.parameters(), cfg.lr_d)
    order_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    log, step = [], 0
    G.train()
    D.train()
    d_params = D.parameters()
    # without the adversarial term D cannot influence G, so it is not trained
    use_d = cfg.weights.adv > 0
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(len(data))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xc, xw = Tensor(clean[idx]), Tensor(marked[idx])
            try:
                x_unwm = G(xw)
                d_unwm = None
                if use_d:
                    # discriminator step, generator output treated as a constant
                    d_clean = D(xc)
                    d_fake = D(Tensor(x_unwm.data))
                    l_disc = disc_loss(d_clean, d_fake)
                    opt_d.zero_grad()
                    l_disc.backward()
                    opt_d.step()
                # generator step through the freshly updated D (frozen here)
                for p in d_params:
                    p.requires_grad = False
                try:
                    if use_d:
                        d_unwm = D(x_unwm)
                    total, comps = generator_losses(xc, xw, x_unwm, d_unwm, cfg.weights, victim)
                finally:
                    for p in d_params:
                        p.requires_grad = True
                if not np.isfinite(total.data):
                    raise NonFiniteError("generator loss")
                opt_g.zero_grad()
                total.backward()
                opt_g.step()
            except NonFiniteError as e:
                raise TrainingError(f"non-finite loss at step {step} (epoch {epoch}): {e}") from e
            row = {"step": step, "epoch": epoch}
            for name in ("recon", "psycho", "decorr", "adv"):
                row["L_" + name] = float(comps[name].data) if name in comps else 0.0
            row["L_total"] = float(total.data)
            if use_d:
                row["L_disc"] = float(l_disc.data)
                row["D_clean_mean"] = float(np.mean(d_clean.data))
                row["D_unwm_mean"] = float(np.mean(d_fake.data))
            else:
                row.update(L_disc=math.nan, D_clean_mean=math.nan, D_unwm_mean=math.nan)
            log.append(row)
            step += 1
        if on_epoch is not None:
            on_epoch(epoch, G, D)
    G.eval()
    D.eval()
    return TrainResult(G, D, log)


def write_log_csv(rows, path):
    import csv

    with open(path, "w", newline="") as f:
        wr = csv.DictWriter(f, fieldnames=LOG_COLUMNS)
        wr.writeheader()
        for r in rows:
            wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


@dataclass
class RemovalResult:
    clip: AudioClip
    success: bool
    conf_before: float
    conf_after: float
    queries: int


def remove(G, x_wm, victim):
    """One generator pass plus a detector query before and after."""
    if len(x_wm) < G.config.fft_size:
        raise ValueError(f"clip of {len(x_wm)} samples is shorter than one STFT frame")
    q0 = victim.queries
    before = victim.detect(x_wm)
    out = generator_forward(G, x_wm)
    after = victim.detect(out)
    return RemovalResult(out, victim.removed(after), before.confidence, after.confidence,
                         victim.queries - q0)


@dataclass(frozen=True)
class SquareAttackConfig:
    max_queries: int = 2000
    eps: float = 0.05
    init_fraction: float = 0.01
    min_length: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.max_queries < 1:
            raise ValueError("max_queries must be >= 1")
        if not (0 < self.eps <= 1):
            raise ValueError("eps must be in (0, 1]")
        if not (0 < self.init_fraction <= 1):
            raise ValueError("init_fraction must be in (0, 1]")

    @property
    def stall_window(self):
        return max(1, self.max_queries // 5)


@dataclass
class SquareAttackResult:
    clip: AudioClip
    success: bool
    queries: int
    elapsed: float
    trace: list  # best score after every query


def square_attack(x_wm, victim, cfg=SquareAttackConfig()):
    """Random search over constant-offset windows, accepting strict improvements.

    The perturbation ``delta`` is kept with ``|delta| <= eps`` everywhere: a
    candidate overwrites ``delta`` on its window rather than adding to it. The
    window length starts at ``init_fraction`` of the clip and halves after
    every ``max_queries / 5`` consecutive rejected queries.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))
    x0 = x_wm.samples
    n = len(x0)
    delta = np.zeros(n)
    used = 1
    res = victim.detect(x_wm)
    best, best_clip = victim.score(res), x_wm
    trace = [best]
    success = victim.removed(res)
    length = max(1, min(n, int(round(cfg.init_fraction * n))))
    stall = 0
    while not success and used < cfg.max_queries:
        start = int(rng.integers(0, n - length + 1))
        amp = rng.uniform(-cfg.eps, cfg.eps)
        cand = delta.copy()
        cand[start : start + length] = amp
        clip = AudioClip.clipped(x0 + cand)
        res = victim.detect(clip)
        used += 1
        s = victim.score(res)
        if s < best:
            best, best_clip, delta = s, clip, cand
            success = victim.removed(res)
            stall = 0
        else:
            stall += 1
            if stall >= cfg.stall_window and length > cfg.min_length:
                length = max(cfg.min_length, length // 2)
                stall = 0
        trace.append(best)
    return SquareAttackResult(best_clip, bool(success), used, time.perf_counter() - t0, trace)


@dataclass(frozen=True)
class CodecConfig:
    kind: str = "lowpass"
    cutoff_hz: float = 5000.0
    bits: int = 8

    def __post_init__(self):
        if self.kind not in ("lowpass", "quantize"):
            raise ValueError(f"unknown codec kind {self.kind!r}")
        if self.kind == "lowpass" and not (0 < self.cutoff_hz < dsp.SAMPLE_RATE / 2):
            raise ValueError("cutoff must be in (0, Nyquist)")
        if self.kind == "quantize" and not (2 <= self.bits <= 16):
            raise ValueError("bits must be in [2, 16]")


LOWPASS_LADDER = (3400.0, 5000.0, 7000.0)
QUANTIZE_LADDER = (6, 8, 10)


def lowpass(x, cutoff_hz, cfg=StftConfig()):
    """Zero every STFT bin above ``cutoff_hz`` and resynthesize.

    The signal is zero-padded by one frame on both sides so every sample is
    covered by full window overlap, then cropped back.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    pad = cfg.fft_size
    total = n + 2 * pad
    total += (-(total - cfg.fft_size)) % cfg.hop
    xp = np.zeros(total)
    xp[pad : pad + n] = x
    S = dsp.stft_array(xp, cfg)
    freqs = np.arange(cfg.bins) * dsp.SAMPLE_RATE / cfg.fft_size
    S[:, freqs > cutoff_hz] = 0.0
    return dsp.istft_array(S, cfg, total)[pad : pad + n]


def quantize(x, bits):
    """Uniform midrise quantizer on [-1, 1] with 2**bits levels."""
    step = 2.0 / 2 ** bits
    q = (np.floor(np.asarray(x, dtype=np.float64) / step) + 0.5) * step
    return np.clip(q, -1 + step / 2, 1 - step / 2)


def codec_attack(x_wm, cfg=CodecConfig()):
    if cfg.kind == "lowpass":
        return AudioClip.clipped(lowpass(x_wm.samples, cfg.cutoff_hz))
    return AudioClip.clipped(quantize(x_wm.samples, cfg.bits))
