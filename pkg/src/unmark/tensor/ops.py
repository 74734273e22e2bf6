"""Network-level differentiable ops: convolutions, normalisation, losses."""
import numpy as np

from .core import Tensor, as_tensor, mean
from ..dsp import hann_window

swv = np.lib.stride_tricks.sliding_window_view


def _pair(v):
    return (v, v) if np.ndim(v) == 0 else tuple(v)


# -- convolutions ------------------------------------------------------------

# 1-D convolutions work on channels-last copies flattened over the batch.
# A strided window view of the flat signal gives im2col rows; they are
# materialised a cache-sized block at a time and hit one GEMM per block. Rows
# that straddle two batch items only ever meet zero padding or are discarded.

_BLOCK_FLOATS = 1 << 16


def _flat_windows(X, K, s):
    """X [B, Lx, C] -> ([R, K*C] view whose row j is the window at flat row j*s, rows per item).

    Windows are k-major, so each one is a contiguous run of the flat signal.
    """
    B, Lx, C = X.shape
    Lx2 = -(-Lx // s) * s
    if Lx2 != Lx or not X.flags.c_contiguous:
        Xp = np.zeros((B, Lx2, C), dtype=X.dtype)
        Xp[:, :Lx] = X
        X = Xp
    Xf = X.reshape(B * Lx2, C)
    if Xf.shape[0] < K:
        Xf = np.concatenate([Xf, np.zeros((K - Xf.shape[0], C), dtype=Xf.dtype)])
    R = (Xf.shape[0] - K) // s + 1
    isz = Xf.itemsize
    V = np.lib.stride_tricks.as_strided(Xf, (R, K * C), (s * C * isz, isz), writeable=False)
    return V, Lx2 // s


def _corr(X, W, s, Lo):
    """Y[b, l] = sum_k X[b, l*s + k] @ W[k]; X [B, Lx, C], W [K, C, O] -> [B, Lo, O]."""
    B, _, C = X.shape
    K, _, O = W.shape
    V, rows = _flat_windows(X, K, s)
    Wm = np.ascontiguousarray(W).reshape(K * C, O)
    R = min(V.shape[0], B * rows)
    Y = np.zeros((B * rows, O), dtype=np.result_type(X.dtype, W.dtype))
    blk = max(64, _BLOCK_FLOATS // (C * K))
    buf = np.empty((min(blk, R), K * C), dtype=X.dtype)
    for i in range(0, R, blk):
        j = min(R, i + blk)
        b = buf[: j - i]
        np.copyto(b, V[i:j])
        np.matmul(b, Wm, out=Y[i:j])
    return Y.reshape(B, rows, O)[:, :Lo]


def _corr_weight_grad(X, G, s, K):
    """dW[k] = sum_{b,l} X[b, l*s + k]^T G[b, l]; X [B, Lx, C], G [B, Lo, O] -> [K, C, O]."""
    B, _, C = X.shape
    Lo, O = G.shape[1:]
    V, rows = _flat_windows(X, K, s)
    Gp = np.zeros((B, rows, O), dtype=G.dtype)
    Gp[:, :Lo] = G
    Gf = Gp.reshape(B * rows, O)
    R = min(V.shape[0], B * rows)
    dW = np.zeros((K * C, O), dtype=np.result_type(X.dtype, G.dtype))
    blk = max(64, _BLOCK_FLOATS // (C * K))
    buf = np.empty((min(blk, R), K * C), dtype=X.dtype)
    for i in range(0, R, blk):
        j = min(R, i + blk)
        b = buf[: j - i]
        np.copyto(b, V[i:j])
        dW += b.T @ Gf[i:j]
    return dW.reshape(K, C, O)


def _scatter(G, W, s, Lout):
    """Z[b, l*s + k] += G[b, l] @ W[k]; G [B, Lg, C], W [K, C, O] -> [B, Lout, O].

    Output phase r only receives taps k = q*s + r, which makes it a stride-1
    correlation of the left-padded G with those taps reversed.
    """
    B, Lg, C = G.shape
    K, _, O = W.shape
    Z = np.zeros((B, Lout, O), dtype=np.result_type(G.dtype, W.dtype))
    for r in range(min(s, K)):
        taps = W[r::s]
        Q = taps.shape[0]
        M = -(-(Lout - r) // s)
        if M <= 0:
            continue
        Gp = np.zeros((B, M + Q - 1, C), dtype=G.dtype)
        n = min(Lg, M)
        Gp[:, Q - 1 : Q - 1 + n] = G[:, :n]
        Z[:, r::s] = _corr(Gp, taps[::-1], 1, M)
    return Z


def conv1d(x, w, b=None, stride=1, padding=0):
    """x [B, C, L], w [O, C, K] -> [B, O, L_out], zero padding on both ends."""
    B, C, L = x.shape
    O, C2, K = w.shape
    if C != C2:
        raise ValueError(f"conv1d channel mismatch: input {C}, weight {C2}")
    s, p = stride, padding
    Lp = L + 2 * p
    Lo = (Lp - K) // s + 1
    if Lo < 1:
        raise ValueError("conv1d input too short for kernel")
    xcl = np.zeros((B, Lp, C), dtype=x.dtype)
    xcl[:, p : p + L] = x.data.transpose(0, 2, 1)
    y = _corr(xcl, w.data.transpose(2, 1, 0), s, Lo)
    if b is not None:
        y = y + b.data
    parents = (x, w) if b is None else (x, w, b)

    def back(g):
        gcl = g.transpose(0, 2, 1)
        gx = gw = None
        if x.requires_grad:
            gx = _scatter(gcl, w.data.transpose(2, 0, 1), s, Lp)[:, p : p + L].transpose(0, 2, 1)
        if w.requires_grad:
            gw = _corr_weight_grad(xcl, gcl, s, K).transpose(2, 1, 0)
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    return Tensor.from_op(y.transpose(0, 2, 1), parents, back, "conv1d")


def conv_transpose1d(x, w, b=None, stride=1, padding=0, output_padding=0):
    """x [B, C, L], w [C, O, K] -> [B, O, (L-1)*stride - 2*padding + K + output_padding]."""
    B, C, L = x.shape
    C2, O, K = w.shape
    if C != C2:
        raise ValueError(f"conv_transpose1d channel mismatch: input {C}, weight {C2}")
    s, p = stride, padding
    full = (L - 1) * s + K + output_padding
    Lo = full - 2 * p
    if Lo < 1:
        raise ValueError("conv_transpose1d output would be empty")
    xcl = x.data.transpose(0, 2, 1)
    y = _scatter(xcl, w.data.transpose(2, 0, 1), s, full)[:, p : p + Lo]
    if b is not None:
        y = y + b.data
    parents = (x, w) if b is None else (x, w, b)

    def back(g):
        gf = np.zeros((B, full, O), dtype=g.dtype)
        gf[:, p : p + Lo] = g.transpose(0, 2, 1)
        gx = gw = None
        if x.requires_grad:
            gx = _corr(gf, w.data.transpose(2, 1, 0), s, L).transpose(0, 2, 1)
        if w.requires_grad:
            gw = _corr_weight_grad(gf, xcl, s, K).transpose(2, 1, 0)
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    return Tensor.from_op(y.transpose(0, 2, 1), parents, back, "conv_transpose1d")


def conv2d(x, w, b=None, stride=1, padding=0):
    """x [B, C, H, W], w [O, C, kh, kw] -> [B, O, H_out, W_out]."""
    B, C, H, W = x.shape
    O, C2, kh, kw = w.shape
    if C != C2:
        raise ValueError(f"conv2d channel mismatch: input {C}, weight {C2}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    Hp, Wp = H + 2 * ph, W + 2 * pw
    Ho, Wo = (Hp - kh) // sh + 1, (Wp - kw) // sw + 1
    if Ho < 1 or Wo < 1:
        raise ValueError("conv2d input too small for kernel")
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    cols = swv(xp, (kh, kw), axis=(2, 3))[:, :, : sh * (Ho - 1) + 1 : sh, : sw * (Wo - 1) + 1 : sw]
    X = np.ascontiguousarray(cols.transpose(0, 2, 3, 1, 4, 5)).reshape(B * Ho * Wo, C * kh * kw)
    Wm = w.data.reshape(O, -1)
    y = (X @ Wm.T).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)
    if b is not None:
        y = y + b.data[:, None, None]
    parents = (x, w) if b is None else (x, w, b)

    def back(g):
        G = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
        gw = (G.T @ X).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (G @ Wm).reshape(B, Ho, Wo, C, kh, kw)
            gxp = np.zeros((B, C, Hp, Wp), dtype=x.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + sh * (Ho - 1) + 1 : sh, j : j + sw * (Wo - 1) + 1 : sw] += (
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2))
            gx = gxp[:, :, ph : ph + H, pw : pw + W]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return Tensor.from_op(y, parents, back, "conv2d")


def upsample2x(x):
    """Linear x2 upsampling along the last axis (half-pixel centres, edge clamped)."""
    d = x.data
    L = d.shape[-1]
    left = np.concatenate([d[..., :1], d[..., :-1]], axis=-1)
    right = np.concatenate([d[..., 1:], d[..., -1:]], axis=-1)
    even = 0.75 * d + 0.25 * left
    odd = 0.75 * d + 0.25 * right
    y = np.stack([even, odd], axis=-1).reshape(d.shape[:-1] + (2 * L,))

    def back(g):
        g = g.reshape(d.shape[:-1] + (L, 2))
        ge, go = g[..., 0], g[..., 1]
        gx = 0.75 * (ge + go)
        gx[..., :-1] += 0.25 * ge[..., 1:]
        gx[..., 0] += 0.25 * ge[..., 0]
        gx[..., 1:] += 0.25 * go[..., :-1]
        gx[..., -1] += 0.25 * go[..., -1]
        return (gx,)

    return Tensor.from_op(y, (x,), back, "upsample2x")


# -- normalisation and pooling ---------------------------------------------------

def batch_norm(x, gamma, beta, running_mean=None, running_var=None, training=True,
               momentum=0.1, eps=1e-5):
    """Per-channel normalisation over every axis except 1.

    In training mode batch statistics are used and the running buffers (numpy
    arrays, updated in place) track them; in eval mode the running buffers
    are used and the op is a fixed affine map.
    """
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    d = x.data
    if training:
        n = d.size // d.shape[1]
        mu = d.mean(axis=axes, dtype=np.float64)
        xc = d - mu.astype(d.dtype).reshape(bshape)
        var = np.mean(np.square(xc), axis=axes, dtype=np.float64)
        if running_mean is not None:
            running_mean *= 1 - momentum
            running_mean += momentum * mu
            running_var *= 1 - momentum
            running_var += momentum * var * n / max(n - 1, 1)
    else:
        n = None
        xc = d - running_mean.astype(d.dtype).reshape(bshape)
        var = running_var
    inv = (1.0 / np.sqrt(var + eps)).astype(d.dtype)
    xhat = xc * inv.reshape(bshape)
    y = xhat * gamma.data.reshape(bshape)
    y += beta.data.reshape(bshape)

    def back(g):
        gb = g.sum(axis=axes)
        gg = (g * xhat).sum(axis=axes)
        scale = (gamma.data * inv).reshape(bshape)
        if training:
            # d/dx of gamma * xhat: g minus its mean and its xhat-projection
            gx = xhat * (gg / n).astype(d.dtype).reshape(bshape)
            gx += (gb / n).astype(d.dtype).reshape(bshape)
            np.subtract(g, gx, out=gx)
            gx *= scale
        else:
            gx = g * scale
        return gx, gg, gb

    return Tensor.from_op(y, (x, gamma, beta), back, "batchnorm")


def global_avg_pool(x):
    """Mean over every axis after the channel axis: [B, C, ...] -> [B, C]."""
    return mean(x, axis=tuple(range(2, x.ndim)))


# -- vector ops and losses -------------------------------------------------------

def softmax(x, axis=-1):
    d = x.data
    e = np.exp(d - d.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(out, (x,), back, "softmax")


def cosine_similarity(a, b, axis=-1):
    """cos between a and b along ``axis``; 0 when either vector is all zeros."""
    a, b = as_tensor(a, b), as_tensor(b, a)
    ad, bd = a.data.astype(np.float64), b.data.astype(np.float64)
    dot = (ad * bd).sum(axis=axis, keepdims=True)
    na = np.sqrt((ad * ad).sum(axis=axis, keepdims=True))
    nb = np.sqrt((bd * bd).sum(axis=axis, keepdims=True))
    ok = (na > 0) & (nb > 0)
    na_s, nb_s = np.where(ok, na, 1.0), np.where(ok, nb, 1.0)
    cos = np.where(ok, dot / (na_s * nb_s), 0.0)
    out = np.squeeze(cos, axis=axis).astype(a.dtype)

    def back(g):
        g = np.expand_dims(g, axis)
        ga = np.where(ok, g * (bd / (na_s * nb_s) - cos * ad / (na_s * na_s)), 0.0)
        gb = np.where(ok, g * (ad / (na_s * nb_s) - cos * bd / (nb_s * nb_s)), 0.0)
        return ga, gb

    return Tensor.from_op(out, (a, b), back, "cosine")


BCE_EPS = 1e-7


def bce(pred, target):
    """Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7]."""
    t = np.broadcast_to(np.asarray(target, dtype=pred.dtype), pred.shape)
    p = np.clip(pred.data, BCE_EPS, 1 - BCE_EPS)
    inside = (pred.data >= BCE_EPS) & (pred.data <= 1 - BCE_EPS)
    n = p.size
    loss = -np.mean(t * np.log(p) + (1 - t) * np.log1p(-p), dtype=np.float64)

    def back(g):
        return (g * inside * (p - t) / (p * (1 - p)) / n,)

    return Tensor.from_op(np.asarray(loss, dtype=pred.dtype), (pred,), back, "bce")


def l1_distance(a, b):
    """mean |a - b|"""
    a, b = as_tensor(a, b), as_tensor(b, a)
    d = a.data - b.data
    n = d.size
    out = np.mean(np.abs(d), dtype=np.float64)

    def back(g):
        s = g * np.sign(d) / n
        return s, -s

    return Tensor.from_op(np.asarray(out, dtype=a.dtype), (a, b), back, "l1")


def l2_distance(a, b):
    """mean (a - b)^2"""
    a, b = as_tensor(a, b), as_tensor(b, a)
    d = a.data - b.data
    n = d.size
    out = np.mean(d * d, dtype=np.float64)

    def back(g):
        s = g * 2.0 * d / n
        return s, -s

    return Tensor.from_op(np.asarray(out, dtype=a.dtype), (a, b), back, "l2")


# -- spectral --------------------------------------------------------------------

def stft_power(x, fft_size=2048, hop=512):
    """|STFT|^2 of a batch of signals: [B, L] -> [B, T, F], Hann-windowed.

    The backward pass uses the identity dP_k/df_n = 2 w_n Re(X_k e^{+i 2 pi k n / N})
    evaluated for all n with one inverse FFT per frame.
    """
    d = x.data
    N = fft_size
    L = d.shape[-1]
    T = (L - N) // hop + 1
    if T < 1:
        raise ValueError(f"signal of length {L} is shorter than one frame ({N})")
    win = hann_window(N).astype(d.dtype)
    frames = swv(d, N, axis=-1)[..., : hop * (T - 1) + 1 : hop, :] * win
    X = np.fft.rfft(frames, axis=-1)
    P = (X.real ** 2 + X.imag ** 2).astype(d.dtype)

    def back(g):
        Z = np.zeros(X.shape[:-1] + (N,), dtype=np.complex128)
        Z[..., : N // 2 + 1] = g * X
        gf = 2.0 * N * np.fft.ifft(Z, axis=-1).real * win
        gx = np.zeros(d.shape, dtype=d.dtype)
        for t in range(T):
            gx[..., t * hop : t * hop + N] += gf[..., t, :]
        return (gx,)

    return Tensor.from_op(P, (x,), back, "stft_power")

