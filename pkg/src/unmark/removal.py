"""Removal generator (dual-path encoder, gated decoder) and discriminator."""
from dataclasses import dataclass

import numpy as np

from . import dsp
from .tensor import (Tensor, clamp, concat, global_avg_pool, no_grad, relu, sigmoid, tanh)
from .tensor import nn
from .tensor.ops import upsample2x

WAVE_KERNELS = (15, 9, 5, 3)
WAVE_CHANNELS = (16, 32, 64, 64)
SPEC_CHANNELS = (8, 16, 32, 32)
DISC_KERNELS = (15, 9, 5, 3)
DISC_CHANNELS = (16, 32, 64, 64)
EMBED = 128


@dataclass(frozen=True)
class GeneratorConfig:
    eps_out: float = 0.2
    # "transposed": stride-2 transposed convs; "linear": x2 linear upsample then conv
    upsample: str = "linear"
    fft_size: int = 2048
    hop: int = 512

    def __post_init__(self):
        if self.eps_out <= 0:
            raise ValueError("eps_out must be positive")
        if self.upsample not in ("transposed", "linear"):
            raise ValueError(f"unknown upsample mode {self.upsample!r}")


class EncoderBlock(nn.Module):
    """stride-2 conv + BN + ReLU with a strided 1x1 residual projection."""

    def __init__(self, cin, cout, k, rng):
        self.conv = nn.Conv1d(cin, cout, k, 2, k // 2, rng=rng)
        self.bn = nn.BatchNorm(cout)
        self.proj = nn.Conv1d(cin, cout, 1, 2, 0, rng=rng)

    def forward(self, x):
        return relu(self.bn(self.conv(x))) + self.proj(x)


class SpecBlock(nn.Module):
    def __init__(self, cin, cout, rng):
        self.conv = nn.Conv2d(cin, cout, 3, 2, 1, rng=rng)
        self.bn = nn.BatchNorm(cout)

    def forward(self, x):
        return relu(self.bn(self.conv(x)))


class DecoderStage(nn.Module):
    """Upsample x2, BN+ReLU, then merge the encoder skip through an attention gate."""

    def __init__(self, cin, cout, cskip, k, mode, rng):
        self.mode = mode
        if mode == "transposed":
            self.up = nn.ConvTranspose1d(cin, cout, k, 2, k // 2, output_padding=1, rng=rng)
        else:
            self.up = nn.Conv1d(cin, cout, k, 1, k // 2, rng=rng)
        self.bn = nn.BatchNorm(cout)
        self.gate = nn.Conv1d(cskip + cout, cskip, 1, rng=rng)
        self.last_gate = None

    def forward(self, h, skip):
        u = self.up(h) if self.mode == "transposed" else self.up(upsample2x(h))
        u = relu(self.bn(u))[:, :, : skip.shape[-1]]
        a = sigmoid(self.gate(concat([skip, u], axis=1)))
        self.last_gate = a.data  # kept for inspection only
        return u + a * skip


class Generator(nn.Module):
    def __init__(self, config=GeneratorConfig(), rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config
        chans = (1,) + WAVE_CHANNELS
        self.wave = [EncoderBlock(chans[i], chans[i + 1], WAVE_KERNELS[i], rng) for i in range(4)]
        schans = (1,) + SPEC_CHANNELS
        self.spec = [SpecBlock(schans[i], schans[i + 1], rng) for i in range(4)]
        self.wave_proj = nn.Linear(WAVE_CHANNELS[-1], EMBED, rng=rng)
        self.spec_proj = nn.Linear(SPEC_CHANNELS[-1], EMBED, rng=rng)
        self.fuse = nn.Linear(2 * EMBED, WAVE_CHANNELS[-1], rng=rng)
        # decoder mirrors the waveform encoder: 64 -> 64 -> 32 -> 16 -> 16
        dch = (WAVE_CHANNELS[-1],) + WAVE_CHANNELS[::-1][1:] + (WAVE_CHANNELS[0],)
        skips = WAVE_CHANNELS[::-1][1:] + (1,)
        self.dec = [DecoderStage(dch[i], dch[i + 1], skips[i], WAVE_KERNELS[3 - i], config.upsample, rng)
                    for i in range(4)]
        self.head = nn.Conv1d(dch[-1], 1, 1, rng=rng)
        self.head.weight.data[...] = 0.0
        self._check_shapes()

    def _check_shapes(self):
        for blk, cin in zip(self.wave, (1,) + WAVE_CHANNELS[:-1]):
            if blk.conv.weight.shape[1] != cin:
                raise ValueError("waveform encoder channel chain is inconsistent")
        if self.fuse.weight.shape[1] != self.wave[-1].conv.weight.shape[0]:
            raise ValueError("bottleneck width must match the deepest waveform map")

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    def spectral_features(self, x):
        """log(1 + |STFT|) of a [B, L] batch as a [B, 1, F, T] array (no gradient)."""
        cfg = dsp.StftConfig(self.config.fft_size, self.config.hop)
        S = dsp.stft_array(np.asarray(x, dtype=np.float64), cfg)
        return np.log1p(np.abs(S)).transpose(0, 2, 1)[:, None].astype(nn.DTYPE)

    def correction(self, x):
        """The bounded edit w_hat = eps_out * tanh(.) for a [B, L] batch."""
        L = x.shape[-1]
        if L < self.config.fft_size:
            raise ValueError(f"clip of {L} samples is shorter than one STFT frame ({self.config.fft_size})")
        h = x.reshape(x.shape[0], 1, L)
        skips = [h]
        for blk in self.wave:
            h = blk(h)
            skips.append(h)
        g = Tensor(self.spectral_features(x.data))
        for blk in self.spec:
            g = blk(g)
        z = concat([self.wave_proj(global_avg_pool(h)), self.spec_proj(global_avg_pool(g))], axis=1)
        bias = self.fuse(z)
        h = h + bias.reshape(bias.shape[0], bias.shape[1], 1)
        for stage, skip in zip(self.dec, skips[-2::-1]):
            h = stage(h, skip)
        w_hat = tanh(self.head(h)) * self.config.eps_out
        return w_hat.reshape(x.shape[0], L)

    def forward(self, x):
        """x: Tensor [B, L] (watermarked) -> Tensor [B, L] (edited), same length."""
        return clamp(x - self.correction(x), -1.0, 1.0)


class Discriminator(nn.Module):
    """Four stride-4 convs + ReLU, global average pool, affine, sigmoid."""

    min_length = 4 ** 4

    def __init__(self, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        chans = (1,) + DISC_CHANNELS
        self.convs = [nn.Conv1d(chans[i], chans[i + 1], DISC_KERNELS[i], 4, DISC_KERNELS[i] // 2, rng=rng)
                      for i in range(4)]
        self.fc = nn.Linear(DISC_CHANNELS[-1], 1, rng=rng)

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    def forward(self, x):
        """x: Tensor [B, L] -> Tensor [B] of probabilities that x is clean."""
        if x.shape[-1] < self.min_length:
            raise ValueError(f"discriminator needs at least {self.min_length} samples")
        h = x.reshape(x.shape[0], 1, x.shape[-1])
        for c in self.convs:
            h = relu(c(h))
        logit = self.fc(global_avg_pool(h))
        return sigmoid(logit).reshape(x.shape[0])


def init_models(seed, config=GeneratorConfig()):
    """Generator and discriminator from one seed (independent child streams)."""
    gs, ds = np.random.SeedSequence(seed).spawn(2)
    return Generator(config, np.random.default_rng(gs)), Discriminator(np.random.default_rng(ds))


def _batch(clip):
    return clip.samples[None].astype(nn.DTYPE)


def generator_forward(G, clip):
    """Remove-pass on one clip in inference mode.

    The network runs in float32; its correction is subtracted from the
    float64 input so a zero correction returns the clip unchanged.
    """
    was = G.training
    G.eval()
    try:
        with no_grad():
            w_hat = G.correction(Tensor(_batch(clip))).data[0]
    finally:
        G.train(was)
    return dsp.AudioClip.clipped(clip.samples - w_hat.astype(np.float64))


def discriminator_forward(D, clip):
    with no_grad():
        return float(D(Tensor(_batch(clip))).data[0])
