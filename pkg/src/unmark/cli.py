"""Command-line frontend.

Every subcommand writes its outputs under ``--out`` together with a
``run.json`` holding the fully resolved arguments; ``--config run.json``
replays a run. Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from . import __version__, attacks, eval as ev, io, synth, watermark
from .losses import LossWeights
from .removal import GeneratorConfig, init_models

SCHEME_ALIASES = {"ssw": "zero_bit_ssw", "qim": "multi_bit_qim",
                  "zero_bit_ssw": "zero_bit_ssw", "multi_bit_qim": "multi_bit_qim"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# -- argument groups ------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="JSON file of argument values (e.g. a previous run.json)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=42)


def _victim_args(p):
    p.add_argument("--victim", help="victim JSON written by embed/train")
    p.add_argument("--scheme", default="ssw", choices=sorted(SCHEME_ALIASES))
    p.add_argument("--victim-seed", type=int, default=1234)
    p.add_argument("--strength", type=float, default=None)
    p.add_argument("--calib-kind", default="speechlike", choices=synth.KINDS)


def _data_args(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--wav-dir", help="directory of 16 kHz mono PCM16 WAV files")
    g.add_argument("--synthetic", choices=synth.KINDS, help="synthetic clip kind")
    p.add_argument("--n", type=int, default=50, help="number of clips")
    p.add_argument("--duration", type=float, default=1.0, help="synthetic clip length in seconds")
    p.add_argument("--data-seed", type=int, default=7)


def _train_args(p):
    d = attacks.TrainConfig()
    w = LossWeights()
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--lr-g", type=float, default=d.lr_g)
    p.add_argument("--lr-d", type=float, default=d.lr_d)
    p.add_argument("--alpha-r", type=float, default=w.recon)
    p.add_argument("--alpha-p", type=float, default=w.psycho)
    p.add_argument("--alpha-wd", type=float, default=w.decorr)
    p.add_argument("--alpha-a", type=float, default=w.adv)
    p.add_argument("--alpha-d", type=float, default=w.detector)
    p.add_argument("--upsample", default=GeneratorConfig().upsample, choices=("linear", "transposed"))
    p.add_argument("--n-test", type=int, default=50, help="held-out clips for evaluation")


def build_parser():
    parser = _Parser(prog="unmark", description="Audio watermark removal lab.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("embed", help="watermark clips and save the victim key")
    _common(p), _victim_args(p), _data_args(p)

    p = sub.add_parser("detect", help="run the detector on WAV files")
    _common(p), _victim_args(p)
    p.add_argument("inputs", nargs="+")

    p = sub.add_parser("train", help="train the removal generator")
    _common(p), _victim_args(p), _data_args(p), _train_args(p)

    p = sub.add_parser("attack", help="attack watermarked WAV files")
    _common(p), _victim_args(p)
    _attack_args(p)
    p.add_argument("inputs", nargs="+")

    p = sub.add_parser("eval", help="embed, attack and detect a dataset")
    _common(p), _victim_args(p), _data_args(p)
    _attack_args(p)

    p = sub.add_parser("ablate", help="train and evaluate loss variants")
    _common(p), _victim_args(p), _data_args(p), _train_args(p)
    p.add_argument("--variants", default="baseline,adv",
                   help=f"comma list from {','.join(ev.VARIANT_WEIGHTS)}")

    p = sub.add_parser("grid", help="loss-weight grid search")
    _common(p), _victim_args(p), _data_args(p), _train_args(p)
    p.add_argument("--grid-r", default=",".join(map(str, ev.GRID_RECON)))
    p.add_argument("--grid-p", default=",".join(map(str, ev.GRID_PSYCHO)))
    p.add_argument("--grid-a", default=",".join(map(str, ev.GRID_ADV)))

    p = sub.add_parser("specdiff", help="spectrogram difference of two WAV files")
    _common(p)
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--threshold-db", type=float, default=-30.0)
    p.add_argument("--top-k", type=int, default=256)
    return parser


def _attack_args(p):
    p.add_argument("--method", default="harmonic", choices=("harmonic", "square", "codec", "identity"))
    p.add_argument("--checkpoint", help="generator checkpoint (harmonic)")
    p.add_argument("--max-queries", type=int, default=attacks.SquareAttackConfig().max_queries)
    p.add_argument("--eps", type=float, default=attacks.SquareAttackConfig().eps)
    p.add_argument("--codec", default="lowpass", choices=("lowpass", "quantize"))
    p.add_argument("--cutoff-hz", type=float, default=5000.0)
    p.add_argument("--bits", type=int, default=8)


# -- helpers ----------------------------------------------------------------------

def _victim(args):
    if args.victim:
        return watermark.load_victim(args.victim)
    scheme = SCHEME_ALIASES[args.scheme]
    v = watermark.make_victim(scheme, args.victim_seed, args.strength)
    v.calibrate(synth.synth_dataset(args.calib_kind, 100, args.victim_seed, getattr(args, "duration", 1.0)))
    return v


def _dataset(args, seed_offset=0, n=None):
    n = args.n if n is None else n
    if args.wav_dir:
        names = sorted(f for f in os.listdir(args.wav_dir) if f.lower().endswith(".wav"))
        if not names:
            raise ValueError(f"no .wav files in {args.wav_dir}")
        return [io.load_wav(os.path.join(args.wav_dir, f)) for f in names[:n]]
    return synth.synth_dataset(args.synthetic or "speechlike", n, args.data_seed + seed_offset,
                               args.duration)


def _train_config(args, weights=None):
    w = weights or LossWeights(args.alpha_r, args.alpha_p, args.alpha_wd, args.alpha_a, args.alpha_d)
    data = {"wav_dir": args.wav_dir} if args.wav_dir else {
        "kind": args.synthetic or "speechlike", "n": args.n, "duration_s": args.duration,
        "seed": args.data_seed}
    return attacks.TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr_g=args.lr_g,
                               lr_d=args.lr_d, seed=args.seed, weights=w,
                               scheme=SCHEME_ALIASES[args.scheme], dataset=data,
                               generator=GeneratorConfig(upsample=args.upsample))


def _attack_fn(args, victim):
    if args.method == "harmonic":
        if not args.checkpoint:
            raise UsageError("attack --method harmonic requires --checkpoint")
        header = io.read_checkpoint(args.checkpoint)[0]
        if header["model"] != "generator":
            raise ValueError("--checkpoint must hold a generator")
        G = _generator_for(header)
        io.load_checkpoint(G, args.checkpoint, model="generator")
        return ev.generator_attack(G)
    if args.method == "square":
        cfg = attacks.SquareAttackConfig(args.max_queries, args.eps, seed=args.seed)
        return lambda x: attacks.square_attack(x, victim, cfg).clip
    if args.method == "codec":
        cfg = attacks.CodecConfig(args.codec, args.cutoff_hz, args.bits)
        return lambda x: attacks.codec_attack(x, cfg)
    return ev.identity_attack


def _generator_for(header):
    gcfg = header.get("meta", {}).get("generator", {})
    return init_models(0, GeneratorConfig(**gcfg))[0]


def _write_json(obj, path):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)


def _train_pairs(args, victim):
    clips = _dataset(args)
    return [(c, victim.embed(c)) for c in clips]


def _save_models(res, cfg, out):
    digest = cfg.digest()
    gpath, dpath = os.path.join(out, "generator.ckpt"), os.path.join(out, "discriminator.ckpt")
    meta = {"generator": asdict(cfg.generator)}
    io.save_checkpoint(res.generator, gpath, "generator", cfg.seed, digest, meta)
    io.save_checkpoint(res.discriminator, dpath, "discriminator", cfg.seed, digest, meta)
    return gpath, dpath


# -- subcommands ------------------------------------------------------------------

def cmd_embed(args):
    v = _victim(args)
    clips = _dataset(args)
    for i, c in enumerate(clips):
        io.save_wav(c, os.path.join(args.out, f"clean_{i:04d}.wav"))
        io.save_wav(v.embed(c), os.path.join(args.out, f"wm_{i:04d}.wav"))
    watermark.save_victim(v, os.path.join(args.out, "victim.json"))
    print(f"embedded {len(clips)} clips into {args.out}")


def cmd_detect(args):
    v = _victim(args)
    rows = []
    for path in args.inputs:
        r = v.detect(io.load_wav(path))
        rows.append({"file": path, "confidence": r.confidence, "detected": not v.removed(r),
                     "decoded_bits": list(r.decoded_bits) if r.decoded_bits else None})
        print(f"{path}\tconfidence={r.confidence:.4f}\tdetected={not v.removed(r)}")
    _write_json(rows, os.path.join(args.out, "detections.json"))


def cmd_train(args):
    v = _victim(args)
    cfg = _train_config(args)
    res = attacks.train(cfg, _train_pairs(args, v), victim=v)
    _save_models(res, cfg, args.out)
    attacks.write_log_csv(res.log, os.path.join(args.out, "train_log.csv"))
    watermark.save_victim(v, os.path.join(args.out, "victim.json"))
    test = _dataset(args, seed_offset=1, n=args.n_test)
    rep = ev.run_eval(test, v, ev.generator_attack(res.generator), "harmonic", "heldout")
    rep.write_csv(os.path.join(args.out, "heldout_report.csv"))
    _write_json(rep.summary(), os.path.join(args.out, "heldout_summary.json"))
    print(f"held-out ASR={rep.asr:.3f} pq_proxy={rep.quality_mean:.3f}")


def cmd_attack(args):
    v = _victim(args)
    fn = _attack_fn(args, v)
    rows = []
    for i, path in enumerate(args.inputs):
        x = io.load_wav(path)
        before = v.detect(x)
        y = fn(x)
        after = v.detect(y)
        outp = os.path.join(args.out, f"attacked_{i:04d}.wav")
        io.save_wav(y, outp)
        rows.append({"file": path, "output": outp, "conf_before": before.confidence,
                     "conf_after": after.confidence, "success": bool(v.removed(after)),
                     "pq_proxy": ev.quality_score(x, y)})
        print(f"{path}\t{before.confidence:.4f} -> {after.confidence:.4f}\tsuccess={v.removed(after)}")
    _write_json(rows, os.path.join(args.out, "attack.json"))


def cmd_eval(args):
    v = _victim(args)
    fn = _attack_fn(args, v)
    rep = ev.run_eval(_dataset(args), v, fn, args.method,
                      args.wav_dir or (args.synthetic or "speechlike"))
    rep.write_csv(os.path.join(args.out, "report.csv"))
    _write_json(rep.summary(), os.path.join(args.out, "summary.json"))
    print(f"ASR={rep.asr:.3f} pq_proxy={rep.quality_mean:.3f} time={rep.attack_time_mean_s:.4f}s")


def cmd_ablate(args):
    v = _victim(args)
    names = [s for s in args.variants.split(",") if s]
    for n in names:
        ev.variant_weights(n)
    cfg = _train_config(args)
    pairs = _train_pairs(args, v)
    test = _dataset(args, seed_offset=1, n=args.n_test)
    res = ev.run_ablation(names, cfg, v, pairs, test,
                          on_report=lambda n, r: print(f"{n}\tASR={r.asr:.3f}\tpq={r.quality_mean:.3f}"))
    ev.write_ablation_csv(res, os.path.join(args.out, "ablation.csv"))


def cmd_grid(args):
    v = _victim(args)
    axes = {"recon": _floats(args.grid_r), "psycho": _floats(args.grid_p), "adv": _floats(args.grid_a)}
    cfg = _train_config(args)
    pairs = _train_pairs(args, v)
    test = _dataset(args, seed_offset=1, n=args.n_test)
    cube, mats = ev.grid_search(cfg, v, pairs, test, axes["recon"], axes["psycho"], axes["adv"],
                                decorr=args.alpha_wd)
    ev.write_grid_csv(axes, mats, os.path.join(args.out, "grid"))
    np.savetxt(os.path.join(args.out, "grid_cube.csv"), cube.reshape(len(axes["recon"]), -1),
               delimiter=",")
    print(f"grid of {cube.size} runs written to {args.out}")


def cmd_specdiff(args):
    d = ev.spectrogram_diff(io.load_wav(args.a), io.load_wav(args.b), threshold_db=args.threshold_db,
                            top_k=args.top_k)
    d.write_pgm(os.path.join(args.out, "diff.pgm"))
    d.write_boxes(os.path.join(args.out, "diff.json"))
    print(f"{len(d.boxes)} boxes written to {args.out}")


def _floats(s):
    try:
        return tuple(float(v) for v in s.split(",") if v)
    except ValueError as e:
        raise UsageError(f"bad number list {s!r}") from e


COMMANDS = {"embed": cmd_embed, "detect": cmd_detect, "train": cmd_train, "attack": cmd_attack,
            "eval": cmd_eval, "ablate": cmd_ablate, "grid": cmd_grid, "specdiff": cmd_specdiff}


def parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(parser.format_help())
    if args.config:
        with open(args.config) as f:
            stored = json.load(f)
        if stored.get("command", args.command) != args.command:
            raise UsageError(f"config is for {stored['command']!r}, not {args.command!r}")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(stored) - known - {"command"}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        sub.set_defaults(**{k: v for k, v in stored.items() if k != "command"})
        args = parser.parse_args(argv)
    return args


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse(argv)
        os.makedirs(args.out, exist_ok=True)
        resolved = {k: v for k, v in vars(args).items() if k != "config"}
        _write_json(resolved, os.path.join(args.out, "run.json"))
        COMMANDS[args.command](args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except (ValueError, OSError, RuntimeError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
