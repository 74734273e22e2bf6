"""Baselines and a short generator training run on synthetic speechlike clips.

Takes a few minutes on one core. Usage: python demos/quickstart.py [epochs]
"""
import sys

from unmark import attacks, eval as ev
from unmark.synth import synth_dataset
from unmark.watermark import make_victim


def show(rep):
    print(f"{rep.attack:<24} {rep.victim:<14} ASR={rep.asr:.2f}  pq={rep.quality_mean:.3f}"
          f"  time={rep.attack_time_mean_s:.3f}s")


def main(epochs=3):
    clips = synth_dataset("speechlike", 10, seed=5)
    for scheme in ("zero_bit_ssw", "multi_bit_qim"):
        victim = make_victim(scheme, 1234)
        victim.calibrate(synth_dataset("speechlike", 100, seed=1234))
        show(ev.run_eval(clips, victim, ev.identity_attack, "identity"))
        for cfg in (attacks.CodecConfig("lowpass", cutoff_hz=3400.0), attacks.CodecConfig("quantize", bits=6)):
            label = f"codec {cfg.kind}"
            show(ev.run_eval(clips, victim, lambda x, c=cfg: attacks.codec_attack(x, c), label))
        sq = attacks.SquareAttackConfig(max_queries=500)
        show(ev.run_eval(clips[:3], victim, lambda x: attacks.square_attack(x, victim, sq).clip,
                         "square (500 queries)"))

    setup = ev.ToySetup(n_train=64, n_test=10)
    victim, pairs, test = ev.make_toy(setup)
    cfg = attacks.TrainConfig(epochs=epochs)
    res = attacks.train(cfg, pairs, victim,
                        on_epoch=lambda e, G, D: print(f"epoch {e} done", flush=True))
    show(ev.run_eval(test, victim, ev.generator_attack(res.generator), f"generator ({epochs} ep)"))


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 3)
