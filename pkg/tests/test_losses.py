import numpy as np
import pytest

from unmark import dsp, losses
from unmark.losses import LossWeights, MelBandStats
from unmark.tensor import Tensor, mean, no_grad, softmax
from unmark.tensor import nn


def _t(a):
    return Tensor(np.asarray(a, dtype=np.float64))


class TestRecon:
    def test_identical_is_zero(self, rng):
        x = rng.uniform(-1, 1, 100)
        assert losses.recon_loss(x, x).data == 0.0

    def test_constant_offset(self):
        x = np.zeros(64)
        assert abs(float(losses.recon_loss(x + 0.5, x).data) - 0.525) < 1e-15

    def test_scalar_loop_oracle(self, rng):
        a, b = rng.uniform(-1, 1, (3, 200)), rng.uniform(-1, 1, (3, 200))
        ref = 0.0
        for i in range(3):
            l1 = sum(abs(a[i, j] - b[i, j]) for j in range(200)) / 200
            l2 = sum((a[i, j] - b[i, j]) ** 2 for j in range(200)) / 200
            ref += (l1 + 0.1 * l2) / 3
        assert abs(float(losses.recon_loss(a, b).data) - ref) <= 1e-7

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            losses.recon_loss(np.zeros(10), np.zeros(11))


class TestPsycho:
    def test_equal_inputs(self, rng):
        x = rng.uniform(-0.5, 0.5, 4096)
        s = losses.psycho_stats(x, x, x)
        assert np.all(s.e.data == 0) and np.all(s.r.data == 0)
        assert np.allclose(s.w.data, 1 / 64, atol=1e-15)

    def test_weights_sum_to_one_and_shift_invariant(self, rng):
        e = rng.standard_normal((4, 64)) * 5
        w = softmax(_t(e), axis=-1).data
        assert np.all(np.abs(w.sum(axis=-1) - 1) <= 1e-9) and np.all(w > 0)
        assert np.allclose(softmax(_t(e + 7.3), axis=-1).data, w, atol=1e-15)

    def test_toy_filterbank_vs_dense_oracle(self, rng):
        cfg = dsp.StftConfig(16, 4)
        fb = dsp.mel_filterbank(3, 300.0, 4000.0, cfg.bins, 16000)
        c, w, u = (rng.uniform(-0.5, 0.5, 40) for _ in range(3))
        s = losses.psycho_stats(c, w, u, fb=fb, cfg=cfg)

        def bands(x):
            win = dsp.hann_window(16)
            T = 1 + (40 - 16) // 4
            out = np.zeros((T, 3))
            for t in range(T):
                frame = x[t * 4 : t * 4 + 16] * win
                for m in range(3):
                    for k in range(cfg.bins):
                        X = sum(frame[n] * np.exp(-2j * np.pi * k * n / 16) for n in range(16))
                        out[t, m] += fb.weights[m, k] * abs(X) ** 2 / losses.POWER_NORM
            return out

        e = (bands(w) - bands(c)).mean(axis=0)
        r = (bands(u) - bands(c)).mean(axis=0)
        assert np.max(np.abs(s.e.data[0] - e)) <= 1e-9
        assert np.max(np.abs(s.r.data[0] - r)) <= 1e-9

    def test_loss_closed_forms(self, rng):
        w = _t(np.full((1, 3), 1 / 3))
        assert float(losses.psycho_loss(MelBandStats(e=None, w=w, r=_t([[3.0, 0, 0]]))).data) == pytest.approx(
            1.0, abs=1e-15)
        assert float(losses.psycho_loss(MelBandStats(e=None, w=w, r=_t(np.zeros((1, 3))))).data) == 0.0
        W, R = softmax(_t(rng.standard_normal((2, 5)))).data, rng.standard_normal((2, 5))
        ref = sum(sum(W[b, m] * R[b, m] for m in range(5)) for b in range(2)) / 2
        got = float(losses.psycho_loss(MelBandStats(e=None, w=_t(W), r=_t(R))).data)
        assert abs(got - ref) <= 1e-9

    def test_too_short(self):
        with pytest.raises(ValueError):
            losses.psycho_stats(np.zeros(100), np.zeros(100), np.zeros(100))


class TestDecorr:
    def test_closed_forms(self, rng):
        c = rng.uniform(-0.5, 0.5, 50)
        d = rng.uniform(-0.1, 0.1, 50)
        w = c + d
        assert float(losses.decorr_loss(c + d, w, c).data) == pytest.approx(1.0, abs=1e-12)
        assert float(losses.decorr_loss(c - d, w, c).data) == pytest.approx(0.0, abs=1e-12)
        d2 = rng.standard_normal(50)
        d2 -= d2 @ d / (d @ d) * d
        assert float(losses.decorr_loss(c + d2, w, c).data) == pytest.approx(0.5, abs=1e-12)
        # zero processed residual
        assert float(losses.decorr_loss(c, w, c).data) == 0.5

    def test_bounds_and_scale_invariance(self, rng):
        for _ in range(1000):
            c, w, u = (rng.uniform(-1, 1, 8) for _ in range(3))
            v = float(losses.decorr_loss(u, w, c).data)
            assert 0.0 <= v <= 1.0
        c, w, u = (rng.uniform(-1, 1, 32) for _ in range(3))
        base = float(losses.decorr_loss(u, w, c).data)
        for k in (0.01, 3.0, 250.0):
            assert abs(float(losses.decorr_loss(c + k * (u - c), w, c).data) - base) <= 1e-12


class TestAdversarial:
    def test_adv_closed_forms(self):
        assert float(losses.adv_loss(np.array([1 - 1e-7])).data) < 1e-6
        assert float(losses.adv_loss(np.array([0.5])).data) == pytest.approx(np.log(2), abs=1e-12)
        assert float(losses.adv_loss(np.array([1e-7])).data) == pytest.approx(-np.log(1e-7), abs=1e-6)
        assert abs(-np.log(1e-7) - 16.118) < 1e-3

    def test_disc_closed_forms(self, rng):
        assert float(losses.disc_loss(np.array([1 - 1e-7]), np.array([1e-7])).data) < 1e-6
        assert float(losses.disc_loss(np.array([0.5]), np.array([0.5])).data) == pytest.approx(
            np.log(2), abs=1e-12)
        a, b = rng.uniform(0.01, 0.99, 8), rng.uniform(0.01, 0.99, 8)
        ref = 0.5 * (np.mean(-np.log(a)) + np.mean(-np.log(1 - b)))
        assert abs(float(losses.disc_loss(a, b).data) - ref) <= 1e-12


class TestTotal:
    def test_defaults(self):
        comps = {k: 1.0 for k in ("recon", "psycho", "decorr", "adv")}
        assert float(losses.gen_total_loss(comps, LossWeights()).data) == pytest.approx(0.701, abs=1e-15)
        zero = LossWeights(0, 0, 0, 0)
        assert float(losses.gen_total_loss(comps, zero).data) == 0.0

    def test_hand_sum_and_linearity(self, rng):
        vals = rng.standard_normal(4)
        comps = dict(zip(("recon", "psycho", "decorr", "adv"), (_t(v) for v in vals)))
        a = rng.uniform(0, 1, 4)
        w = LossWeights(*a)
        assert abs(float(losses.gen_total_loss(comps, w).data) - float(a @ vals)) <= 1e-12
        w2 = LossWeights(a[0], a[1], 2 * a[2], a[3])
        diff = float(losses.gen_total_loss(comps, w2).data) - float(losses.gen_total_loss(comps, w).data)
        assert diff == pytest.approx(a[2] * vals[2], abs=1e-12)

    def test_weights_validation(self):
        with pytest.raises(ValueError):
            LossWeights(recon=-1.0)
        with pytest.raises(ValueError):
            LossWeights(adv=float("nan"))
        assert LossWeights().without("decorr").decorr == 0.0
        with pytest.raises(ValueError):
            LossWeights().without("nope")

    def test_detector_needs_component(self):
        with pytest.raises(ValueError):
            losses.gen_total_loss({"recon": 1.0, "psycho": 1.0, "decorr": 1.0, "adv": 1.0},
                                  LossWeights(detector=0.1))


class _Tiny(nn.Module):
    """Two-layer conv generator, float64, for loss gradient checks."""

    def __init__(self, rng):
        self.c1 = nn.Conv1d(1, 3, 5, 1, 2, rng=rng)
        self.c2 = nn.Conv1d(3, 1, 3, 1, 1, rng=rng)
        for p in self.parameters():
            p.data = rng.uniform(-0.3, 0.3, p.shape)

    def forward(self, x):
        from unmark.tensor import tanh
        h = tanh(self.c1(x.reshape(x.shape[0], 1, x.shape[-1])))
        return x - self.c2(h).reshape(x.shape[0], x.shape[-1]) * 0.1


@pytest.mark.parametrize("term", ["recon", "psycho", "decorr", "adv"])
def test_gradients_through_tiny_generator(term):
    rng = np.random.default_rng(5)
    G = _Tiny(rng)
    cfg = dsp.StftConfig(16, 4)
    fb = dsp.mel_filterbank(3, 300.0, 4000.0, cfg.bins, 16000)
    clean = rng.uniform(-0.5, 0.5, (2, 32))
    wm = clean + rng.uniform(-0.05, 0.05, (2, 32))

    def objective():
        u = G(_t(wm))
        if term == "recon":
            return losses.recon_loss(u, _t(clean))
        if term == "psycho":
            return losses.psycho_loss(losses.psycho_stats(_t(clean), _t(wm), u, fb=fb, cfg=cfg))
        if term == "decorr":
            return losses.decorr_loss(u, _t(wm), _t(clean))
        from unmark.tensor import sigmoid
        return losses.adv_loss(sigmoid(mean(u, axis=-1) * 10.0))

    objective().backward()
    h = 1e-3
    for p in G.parameters():
        num = np.zeros_like(p.data)
        flat, nflat = p.data.reshape(-1), num.reshape(-1)
        for i in range(flat.size):
            o = flat[i]
            flat[i] = o + h
            with no_grad():
                a = float(objective().data)
            flat[i] = o - h
            with no_grad():
                b = float(objective().data)
            flat[i] = o
            nflat[i] = (a - b) / (2 * h)
        err = np.linalg.norm(p.grad - num) / max(np.linalg.norm(num), 1e-12)
        assert err <= 1e-5, (term, err)


def test_generator_losses_components():
    rng = np.random.default_rng(0)
    c = rng.uniform(-0.3, 0.3, (2, 2048))
    w = c + 0.01 * rng.standard_normal((2, 2048))
    total, comps = losses.generator_losses(_t(c), _t(w), _t(w), _t([0.5, 0.5]), LossWeights())
    assert set(comps) == {"recon", "psycho", "decorr", "adv"}
    ref = sum(getattr(LossWeights(), k) * float(v.data) for k, v in comps.items())
    assert abs(float(total.data) - ref) <= 1e-12
    assert float(comps["decorr"].data) == pytest.approx(1.0, abs=1e-12)
    _, comps = losses.generator_losses(_t(c), _t(w), _t(w), None, LossWeights(adv=0.0))
    assert "adv" not in comps
    with pytest.raises(ValueError):
        losses.generator_losses(_t(c), _t(w), _t(w), None, LossWeights(adv=0.0, detector=0.1))
