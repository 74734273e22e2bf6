import json
import struct

import numpy as np
import pytest

from unmark import io, removal
from unmark.dsp import AudioClip


def _write_raw_wav(path, pcm, channels=1, rate=16000, bits=16, tag=1):
    data = np.asarray(pcm, dtype="<i2").tobytes()
    block = channels * bits // 8
    with open(path, "wb") as f:
        f.write(b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE")
        f.write(b"fmt " + struct.pack("<IHHIIHH", 16, tag, channels, rate, rate * block, block, bits))
        f.write(b"data" + struct.pack("<I", len(data)) + data)


class TestWav:
    def test_scale_law(self, tmp_path):
        p = tmp_path / "a.wav"
        _write_raw_wav(p, [-32768, 0, 16384, 32767])
        x = io.load_wav(p).samples
        assert x.tolist() == [-1.0, 0.0, 0.5, 32767 / 32768]

    def test_clamp_and_rounding(self, tmp_path):
        p = tmp_path / "a.wav"
        x = np.array([1.0, -1.0, 0.0, 1.5 / 32768, -1.5 / 32768, 0.4 / 32768])
        io.save_wav(AudioClip.clipped(np.append(x, [2.0])), p)
        pcm = np.frombuffer(open(p, "rb").read()[44:], dtype="<i2")
        assert pcm.tolist() == [32767, -32768, 0, 2, -2, 0, 32767]

    def test_round_trip(self, tmp_path, rng):
        p, q = tmp_path / "a.wav", tmp_path / "b.wav"
        x = AudioClip(rng.uniform(-1, 1, 4000))
        io.save_wav(x, p)
        y = io.load_wav(p)
        assert np.max(np.abs(y.samples - x.samples)) <= 1 / 32768
        io.save_wav(y, q)
        assert p.read_bytes() == q.read_bytes()
        assert np.array_equal(io.load_wav(q).samples, y.samples)

    @pytest.mark.parametrize("kw,field", [({"channels": 2}, "channels=2"),
                                          ({"rate": 44100}, "sample_rate=44100"),
                                          ({"bits": 8}, "bits_per_sample=8"),
                                          ({"tag": 3}, "format_tag=3")])
    def test_rejections_name_field(self, tmp_path, kw, field):
        p = tmp_path / "bad.wav"
        _write_raw_wav(p, [0, 1, 2, 3], **kw)
        with pytest.raises(io.UnsupportedFormat, match=field):
            io.load_wav(p)

    def test_not_riff(self, tmp_path):
        p = tmp_path / "x.wav"
        p.write_bytes(b"hello world, not audio")
        with pytest.raises(io.UnsupportedFormat):
            io.load_wav(p)

    def test_extra_chunks_skipped(self, tmp_path):
        p = tmp_path / "a.wav"
        data = np.array([5, -5, 7], dtype="<i2").tobytes()
        fmt = struct.pack("<HHIIHH", 1, 1, 16000, 32000, 2, 16)
        body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"LIST" + struct.pack("<I", 3) + b"abc\x00"
        body += b"data" + struct.pack("<I", len(data)) + data
        p.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
        assert (io.load_wav(p).samples * 32768).tolist() == [5.0, -5.0, 7.0]


class TestCheckpoint:
    def test_round_trip_identity(self, tmp_path):
        G, D = removal.init_models(3)
        for p in G.parameters():
            p.data = p.data + np.float32(0.01)
        path = tmp_path / "g.ckpt"
        io.save_checkpoint(G, path, "generator", 3, "abc", {"generator": {"eps_out": 0.2}})
        G2, _ = removal.init_models(9)
        header = io.load_checkpoint(G2, path, model="generator", train_config_digest="abc")
        assert header["seed"] == 3 and header["meta"]["generator"]["eps_out"] == 0.2
        s1, s2 = G.state(), G2.state()
        assert all(np.array_equal(s1[k], s2[k]) for k in s1)

    def test_layout(self, tmp_path):
        _, D = removal.init_models(3)
        path = tmp_path / "d.ckpt"
        io.save_checkpoint(D, path, "discriminator", 3)
        blob = path.read_bytes()
        assert blob[:4] == io.MAGIC
        hlen = struct.unpack("<Q", blob[4:12])[0]
        header = json.loads(blob[12 : 12 + hlen])
        assert header["format_version"] == 1 and header["model"] == "discriminator"
        assert len(blob) - 12 - hlen == 4 * sum(int(np.prod(s)) for s in header["shapes"])

    def test_rejections(self, tmp_path):
        G, D = removal.init_models(3)
        path = tmp_path / "d.ckpt"
        io.save_checkpoint(D, path, "discriminator", 3, "abc")
        with pytest.raises(ValueError):
            io.load_checkpoint(G, path, model="generator")
        with pytest.raises(ValueError):
            io.load_checkpoint(D, path, train_config_digest="other")
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(ValueError, match="payload"):
            io.read_checkpoint(path)
        (tmp_path / "junk").write_bytes(b"nope")
        with pytest.raises(ValueError):
            io.read_checkpoint(tmp_path / "junk")
