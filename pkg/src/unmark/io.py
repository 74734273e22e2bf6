"""WAV and checkpoint files.

WAV: RIFF/WAVE, PCM16, mono, 16 kHz only. Anything else is rejected with the
offending field named; nothing is resampled or downmixed.

Checkpoint layout: 8-byte little-endian header length, a UTF-8 JSON header,
then the float32 little-endian payload of every tensor in header order.
"""
import json
import struct

import numpy as np

from .dsp import SAMPLE_RATE, AudioClip

FORMAT_VERSION = 1
MAGIC = b"UNMK"


class UnsupportedFormat(ValueError):
    pass


def save_wav(clip, path):
    x = np.clip(clip.samples, -1.0, 1.0) * 32768.0
    q = np.sign(x) * np.floor(np.abs(x) + 0.5)  # half away from zero
    pcm = np.clip(q, -32768, 32767).astype("<i2").tobytes()
    with open(path, "wb") as f:
        f.write(b"RIFF" + struct.pack("<I", 36 + len(pcm)) + b"WAVE")
        f.write(b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, SAMPLE_RATE, SAMPLE_RATE * 2, 2, 16))
        f.write(b"data" + struct.pack("<I", len(pcm)) + pcm)


def load_wav(path):
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise UnsupportedFormat("container=not RIFF/WAVE")
    pos, fmt, data = 12, None, None
    while pos + 8 <= len(blob):
        cid, size = blob[pos : pos + 4], struct.unpack("<I", blob[pos + 4 : pos + 8])[0]
        body = blob[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or len(fmt) < 16:
        raise UnsupportedFormat("fmt chunk missing")
    if data is None:
        raise UnsupportedFormat("data chunk missing")
    tag, channels, rate, _, _, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag != 1:
        raise UnsupportedFormat(f"format_tag={tag}")
    if channels != 1:
        raise UnsupportedFormat(f"channels={channels}")
    if rate != SAMPLE_RATE:
        raise UnsupportedFormat(f"sample_rate={rate}")
    if bits != 16:
        raise UnsupportedFormat(f"bits_per_sample={bits}")
    pcm = np.frombuffer(data[: len(data) // 2 * 2], dtype="<i2")
    return AudioClip(pcm.astype(np.float64) / 32768.0)


def save_checkpoint(module, path, model, seed, train_config_digest="", meta=None):
    """Write every parameter and buffer of ``module`` as float32.

    ``meta`` is an optional JSON-able dict stored in the header (e.g. the
    generator config needed to rebuild the module).
    """
    state = module.state()
    names = list(state)
    header = {"format_version": FORMAT_VERSION, "model": model, "names": names,
              "shapes": [list(state[n].shape) for n in names], "seed": int(seed),
              "train_config_digest": train_config_digest, "meta": meta or {}}
    hb = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<Q", len(hb)) + hb)
        for n in names:
            f.write(np.ascontiguousarray(state[n], dtype="<f4").tobytes())


def read_checkpoint(path):
    """(header, {name: float32 array})."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise ValueError("not a checkpoint file")
    hlen = struct.unpack("<Q", blob[4:12])[0]
    header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
    payload = blob[12 + hlen :]
    expected = 4 * sum(int(np.prod(s)) for s in header["shapes"])
    if len(payload) != expected:
        raise ValueError(f"payload is {len(payload)} bytes, header implies {expected}")
    arrays, off = {}, 0
    for name, shape in zip(header["names"], header["shapes"]):
        k = int(np.prod(shape))
        arrays[name] = np.frombuffer(payload, dtype="<f4", count=k, offset=off).reshape(shape).copy()
        off += 4 * k
    return header, arrays


def load_checkpoint(module, path, model=None, train_config_digest=None):
    header, arrays = read_checkpoint(path)
    if model is not None and header["model"] != model:
        raise ValueError(f"checkpoint holds a {header['model']}, expected {model}")
    if train_config_digest is not None and header["train_config_digest"] != train_config_digest:
        raise ValueError("checkpoint was trained with a different config")
    module.load_state(arrays)
    return header
