"""Metrics, the evaluation harness, ablations, grid search and spectrogram diffs."""
import csv
import itertools
import json
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from . import dsp, synth
from .attacks import train
from .dsp import AudioClip, StftConfig
from .losses import POWER_NORM, LossWeights, default_filterbank
from .removal import generator_forward
from .watermark import make_victim

ETA_DB = 6.0
REPORT_COLUMNS = ("sample_id", "conf_before", "conf_after", "success", "pq_proxy", "attack_time_s")


def asr(flags):
    flags = np.asarray(flags, dtype=bool)
    if flags.size == 0:
        raise ValueError("no results")
    return float(np.count_nonzero(flags)) / flags.size


def mel_db(x, fb=None, cfg=StftConfig()):
    """[T, M] mel band powers of a clip in plain dB (per-sample power units)."""
    fb = fb if fb is not None else default_filterbank(cfg)
    samples = x.samples if isinstance(x, AudioClip) else np.asarray(x, dtype=np.float64)
    P = np.abs(dsp.stft_array(samples, cfg)) ** 2 / POWER_NORM
    return dsp.power_db(P @ fb.weights.T)


def log_spectral_distance(x_ref, x_out, fb=None):
    if len(x_ref) != len(x_out):
        raise ValueError(f"length mismatch: {len(x_ref)} vs {len(x_out)}")
    return float(np.mean(np.abs(mel_db(x_out, fb) - mel_db(x_ref, fb))))


def quality_score(x_ref, x_out, fb=None, eta=ETA_DB):
    """pq_proxy = 1 / (1 + LSD / eta); a log-spectral proxy, not ITU PEAQ."""
    return 1.0 / (1.0 + log_spectral_distance(x_ref, x_out, fb) / eta)


@dataclass
class EvalReport:
    attack: str
    victim: str
    dataset: str
    rows: list = field(default_factory=list)

    @property
    def n_samples(self):
        return len(self.rows)

    @property
    def asr(self):
        return asr([r["success"] for r in self.rows])

    @property
    def quality_mean(self):
        return float(np.mean([r["pq_proxy"] for r in self.rows]))

    @property
    def attack_time_mean_s(self):
        return float(np.mean([r["attack_time_s"] for r in self.rows]))

    def summary(self):
        return {"attack": self.attack, "victim": self.victim, "dataset": self.dataset,
                "n_samples": self.n_samples, "asr": self.asr, "quality_mean": self.quality_mean,
                "attack_time_mean_s": self.attack_time_mean_s}

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(REPORT_COLUMNS)
            for r in self.rows:
                wr.writerow([r["sample_id"], repr(r["conf_before"]), repr(r["conf_after"]),
                             int(r["success"]), repr(r["pq_proxy"]), f"{r['attack_time_s']:.6f}"])


def run_eval(clips, victim, attack, attack_id="attack", dataset_id="dataset", n=None):
    """Embed, attack and detect each clip; ``attack`` maps a clip to a clip.

    Quality is measured against the watermarked input the attacker received.
    """
    clips = list(clips)[:n] if n is not None else list(clips)
    if not clips:
        raise ValueError("need at least one clip")
    rep = EvalReport(attack_id, victim.scheme, dataset_id)
    for i, clip in enumerate(clips):
        x_wm = victim.embed(clip)
        before = victim.detect(x_wm)
        t0 = time.perf_counter()
        x_out = attack(x_wm)
        elapsed = time.perf_counter() - t0
        after = victim.detect(x_out)
        rep.rows.append({"sample_id": i, "conf_before": before.confidence,
                         "conf_after": after.confidence, "success": bool(victim.removed(after)),
                         "pq_proxy": quality_score(x_wm, x_out), "attack_time_s": elapsed})
    return rep


def identity_attack(x):
    return x


def generator_attack(G):
    return lambda x: generator_forward(G, x)


# -- toy setup shared by training, ablation and grid runs ----------------------

@dataclass(frozen=True)
class ToySetup:
    kind: str = "speechlike"
    n_train: int = 256
    n_test: int = 50
    n_calib: int = 100
    duration_s: float = 1.0
    seed: int = 42
    scheme: str = "zero_bit_ssw"


def make_toy(setup=ToySetup()):
    """Calibrated victim, training pairs and held-out clips from three disjoint seeds."""
    base = np.random.SeedSequence(setup.seed).generate_state(3)
    victim = make_victim(setup.scheme, int(base[0]))
    victim.calibrate(synth.synth_dataset(setup.kind, setup.n_calib, int(base[0]), setup.duration_s))
    train_clips = synth.synth_dataset(setup.kind, setup.n_train, int(base[1]), setup.duration_s)
    pairs = [(c, victim.embed(c)) for c in train_clips]
    test = synth.synth_dataset(setup.kind, setup.n_test, int(base[2]), setup.duration_s)
    return victim, pairs, test


VARIANT_WEIGHTS = {
    "full": {},
    "adv": {},
    "baseline": {"adv": 0.0},
    "adv_d": {"detector": 0.1},
    "baseline_d": {"adv": 0.0, "detector": 0.1},
    "no_recon": {"recon": 0.0},
    "no_psycho": {"psycho": 0.0},
    "no_decorr": {"decorr": 0.0},
    "no_adv": {"adv": 0.0},
}


def variant_weights(name, base=LossWeights()):
    if name not in VARIANT_WEIGHTS:
        raise ValueError(f"unknown variant {name!r}; choose from {sorted(VARIANT_WEIGHTS)}")
    return replace(base, **VARIANT_WEIGHTS[name])


def train_and_eval(cfg, victim, pairs, test, label):
    res = train(cfg, pairs, victim=victim)
    return run_eval(test, victim, generator_attack(res.generator), label, "toy")


def run_ablation(variants, cfg, victim, pairs, test, on_report=None):
    """Train each variant from the same seed and data; returns [(name, EvalReport)]."""
    out = []
    for name in variants:
        vcfg = replace(cfg, weights=variant_weights(name, cfg.weights))
        rep = train_and_eval(vcfg, victim, pairs, test, name)
        out.append((name, rep))
        if on_report is not None:
            on_report(name, rep)
    return out


def write_ablation_csv(results, path):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["variant", "n_samples", "asr", "pq_proxy", "attack_time_s"])
        for name, rep in results:
            wr.writerow([name, rep.n_samples, repr(rep.asr), repr(rep.quality_mean),
                         f"{rep.attack_time_mean_s:.6f}"])


GRID_RECON = (0.1, 0.5, 1.0)
GRID_PSYCHO = (1e-4, 1e-3, 1e-2)
GRID_ADV = (0.01, 0.1, 0.5)


def grid_search(cfg, victim, pairs, test, recon=GRID_RECON, psycho=GRID_PSYCHO, adv=GRID_ADV,
                decorr=0.1, score=None):
    """ASR per (recon, psycho, adv) cell, decorr fixed.

    ``score(weights)`` can replace the train-and-evaluate step (used by tests).
    Returns (cube [R, P, A], matrices) where matrices holds the three pairwise
    means over the remaining axis.
    """
    cube = np.zeros((len(recon), len(psycho), len(adv)))
    for (i, r), (j, p), (k, a) in itertools.product(enumerate(recon), enumerate(psycho), enumerate(adv)):
        w = replace(cfg.weights, recon=r, psycho=p, adv=a, decorr=decorr)
        if score is not None:
            cube[i, j, k] = score(w)
        else:
            cube[i, j, k] = train_and_eval(replace(cfg, weights=w), victim, pairs, test, "grid").asr
    mats = {"recon_psycho": cube.mean(axis=2), "recon_adv": cube.mean(axis=1),
            "psycho_adv": cube.mean(axis=0)}
    return cube, mats


def write_grid_csv(axes, mats, path_prefix):
    """One CSV per pairwise matrix: header row of column values, row labels first."""
    names = {"recon_psycho": ("recon", "psycho"), "recon_adv": ("recon", "adv"),
             "psycho_adv": ("psycho", "adv")}
    paths = []
    for key, (rn, cn) in names.items():
        path = f"{path_prefix}_{key}.csv"
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow([f"{rn}\\{cn}"] + [repr(v) for v in axes[cn]])
            for v, row in zip(axes[rn], mats[key]):
                wr.writerow([repr(v)] + [repr(float(x)) for x in row])
        paths.append(path)
    return paths


# -- spectrogram differences ----------------------------------------------------

@dataclass
class DiffMap:
    values: np.ndarray  # [T, F] dB in [-80, 0]
    boxes: list  # dicts with frame/bin ranges (inclusive start, exclusive end) and energy
    config: StftConfig = StftConfig()

    def write_pgm(self, path):
        img = np.round((self.values - dsp.DB_FLOOR) / -dsp.DB_FLOOR * 255).astype(np.uint8)
        img = img.T[::-1]  # frequency up, time to the right
        with open(path, "wb") as f:
            f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
            f.write(img.tobytes())

    def write_boxes(self, path):
        with open(path, "w") as f:
            json.dump({"fft_size": self.config.fft_size, "hop": self.config.hop,
                       "sample_rate": dsp.SAMPLE_RATE, "boxes": self.boxes}, f, indent=2)


def spectrogram_diff(a, b, cfg=StftConfig(), threshold_db=-30.0, top_k=256):
    """dB map of | |STFT(a)| - |STFT(b)| | normalised to its peak.

    Boxes are bounding rectangles of the connected regions above
    ``threshold_db``, ranked by summed linear power, at most ``top_k``.
    """
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    d = np.abs(np.abs(dsp.stft_array(a.samples, cfg)) - np.abs(dsp.stft_array(b.samples, cfg)))
    power = d ** 2
    values = dsp.to_db(power)
    if np.max(power) <= dsp.POWER_FLOOR:
        values = np.full_like(power, dsp.DB_FLOOR)
        return DiffMap(values, [], cfg)
    labels, n = ndimage.label(values > threshold_db, structure=np.ones((3, 3)))
    boxes = []
    for lab, sl in enumerate(ndimage.find_objects(labels), start=1):
        region = labels[sl] == lab
        boxes.append({"t0": sl[0].start, "t1": sl[0].stop, "f0": sl[1].start, "f1": sl[1].stop,
                      "energy": float(np.sum(power[sl][region]))})
    boxes.sort(key=lambda bx: -bx["energy"])
    boxes = boxes[:top_k]
    sr, hop, nfft = dsp.SAMPLE_RATE, cfg.hop, cfg.fft_size
    for bx in boxes:
        bx.update(time_s=[bx["t0"] * hop / sr, ((bx["t1"] - 1) * hop + nfft) / sr],
                  freq_hz=[bx["f0"] * sr / nfft, (bx["f1"] - 1) * sr / nfft])
    return DiffMap(values, boxes, cfg)


def box_mask(diff):
    m = np.zeros(diff.values.shape, dtype=bool)
    for bx in diff.boxes:
        m[bx["t0"] : bx["t1"], bx["f0"] : bx["f1"]] = True
    return m


def energy_fraction_in_frames(diff, frame_mask):
    """Share of above-floor diff power in the STFT frames flagged by ``frame_mask``."""
    p = 10.0 ** (diff.values / 10.0)
    p[diff.values <= dsp.DB_FLOOR] = 0.0
    total = np.sum(p)
    return float(np.sum(p[np.asarray(frame_mask, dtype=bool)]) / total) if total > 0 else 0.0
