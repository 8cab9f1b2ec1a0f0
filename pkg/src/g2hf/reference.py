"""Slow reference implementations used as independent oracles.

Nothing here calls :mod:`g2hf.ops` or the tape. Primitives are scalar
loops; module versions recompute each block step by step on
plain numpy arrays, with convolutions done by ``scipy.signal.correlate2d``.
Parameters are passed as ``{name: array}`` with the same names the modules
use.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.signal import correlate2d


# ---------------------------------------------------------------- primitives

def conv2d_loop(x, w, b, stride=1, pad=0):
    c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        for i in range(ho):
            for j in range(wo):
                acc = b[o]
                for c in range(c_in):
                    for dy in range(k):
                        for dx in range(k):
                            yy = i * stride + dy - pad
                            xx = j * stride + dx - pad
                            if 0 <= yy < h and 0 <= xx < wd:
                                acc += w[o, c, dy, dx] * x[c, yy, xx]
                out[o, i, j] = acc
    return out


def matmul_loop(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def unshuffle_loop(x, r):
    c, h, w = x.shape
    out = np.empty((c * r * r, h // r, w // r))
    for ch, i, j in itertools.product(range(c), range(h), range(w)):
        out[ch * r * r + (i % r) * r + (j % r), i // r, j // r] = x[ch, i, j]
    return out


def shuffle_loop(x, r):
    cr, h, w = x.shape
    c = cr // (r * r)
    out = np.empty((c, h * r, w * r))
    for ch, i, j in itertools.product(range(c), range(h * r), range(w * r)):
        out[ch, i, j] = x[ch * r * r + (i % r) * r + (j % r), i // r, j // r]
    return out


def channel_max_loop(x):
    c, h, w = x.shape
    out = np.empty((1, h, w))
    for i, j in itertools.product(range(h), range(w)):
        m = x[0, i, j]
        for ch in range(1, c):
            if x[ch, i, j] > m:
                m = x[ch, i, j]
        out[0, i, j] = m
    return out


def channel_avg_loop(x):
    c, h, w = x.shape
    out = np.empty((1, h, w))
    for i, j in itertools.product(range(h), range(w)):
        s = 0.0
        for ch in range(c):
            s += x[ch, i, j]
        out[0, i, j] = s / c
    return out


def bilinear_loop(x, h_out, w_out):
    """Half-pixel-centre bilinear sampling, coordinates clamped at the border."""
    c, h, w = x.shape
    out = np.empty((c, h_out, w_out))
    for i in range(h_out):
        sy = max((i + 0.5) * h / h_out - 0.5, 0.0)
        y0 = min(int(math.floor(sy)), h - 1)
        y1 = min(y0 + 1, h - 1)
        ly = sy - y0
        for j in range(w_out):
            sx = max((j + 0.5) * w / w_out - 0.5, 0.0)
            x0 = min(int(math.floor(sx)), w - 1)
            x1 = min(x0 + 1, w - 1)
            lx = sx - x0
            for ch in range(c):
                top = (1 - lx) * x[ch, y0, x0] + lx * x[ch, y0, x1]
                bot = (1 - lx) * x[ch, y1, x0] + lx * x[ch, y1, x1]
                out[ch, i, j] = (1 - ly) * top + ly * bot
    return out


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


# ---------------------------------------------------------------- module transcriptions

def conv(x, p, name, stride=1):
    """Shape-preserving (for stride 1) convolution via scipy correlation."""
    w, b = p[f"{name}.weight"], p[f"{name}.bias"]
    k = w.shape[-1]
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    out = np.stack([
        sum(correlate2d(xp[c], w[o, c], mode="valid") for c in range(x.shape[0])) + b[o]
        for o in range(w.shape[0])
    ])
    return out[:, ::stride, ::stride]


def sub(p, prefix):
    n = len(prefix) + 1
    return {k[n:]: v for k, v in p.items() if k.startswith(prefix + ".")}


def psa_ref(x, p, factors=(1, 2, 4, 6)):
    ds = []
    for j, r in enumerate(factors):
        inn = unshuffle_loop(x, r)
        mx = inn.max(axis=0, keepdims=True)
        av = inn.mean(axis=0, keepdims=True)
        wmap = conv(np.concatenate([mx, av]), p, f"fuse{j}")
        ds.append(shuffle_loop(wmap * inn + inn, r))
    return conv(np.concatenate(ds), p, "merge")


def pca_ref(x, p, factors=(1, 2, 4)):
    c, h, w = x.shape
    k = math.isqrt(c)
    e = h * w
    input_t = np.empty((e, k, k))
    for ch in range(c):
        for i in range(h):
            for j in range(w):
                input_t[i * w + j, ch // k, ch % k] = x[ch, i, j]
    ds = []
    for j, r in enumerate(factors):
        inn = unshuffle_loop(input_t, r)
        mx = inn.max(axis=0, keepdims=True)
        av = inn.mean(axis=0, keepdims=True)
        wmap = conv(np.concatenate([mx, av]), p, f"fuse{j}")
        ds.append(shuffle_loop(wmap * inn + inn, r))
    out = np.empty((c, h, w))
    for pix in range(e):
        stacked = np.stack([d[pix] for d in ds])
        merged = conv(stacked, p, "merge")[0]
        for ch in range(c):
            out[ch, pix // w, pix % w] = merged[ch // k, ch % k]
    return out


def _resize(x, h, w):
    return bilinear_loop(x, h, w)


def mde_ref(x, p, psa_factors=(1, 2, 4, 6), pca_factors=(1, 2, 4), n_branches=4):
    _, h, w = x.shape
    fps = []
    for i in range(1, n_branches + 1):
        bp = sub(p, f"branch{i}")
        a = conv(x, bp, "convA")
        fi = _resize(conv(conv(_resize(a, h // 2, w // 2), bp, "inner"), bp, "convB"), h, w) + a
        both = np.concatenate([psa_ref(fi, sub(bp, "psa"), psa_factors),
                               pca_ref(fi, sub(bp, "pca"), pca_factors)])
        fps.append(conv(both, bp, "fuse"))
    return conv(np.concatenate(fps), p, "out")


def location_sensing_loop(x, p, scaled=False):
    """Affinity ``M[a, b] = sum_n k[a, n] q[b, n]``; ``out[b, n] = sum_a v[a, n] M[a, b]``."""
    c, h, w = x.shape
    n = h * w
    q = conv(x, p, "q").reshape(c, n)
    k = conv(x, p, "k").reshape(c, n)
    v = conv(x, p, "v").reshape(c, n)
    m = np.zeros((c, c))
    for a in range(c):
        for b in range(c):
            s = 0.0
            for t in range(n):
                s += k[a, t] * q[b, t]
            m[a, b] = s / math.sqrt(c) if scaled else s
    out = np.zeros((c, n))
    for b in range(c):
        for t in range(n):
            s = 0.0
            for a in range(c):
                s += v[a, t] * m[a, b]
            out[b, t] = s
    return out.reshape(c, h, w)


def granular_ref(x, p, n_convs=4):
    ins = [conv(x, p, "conv0")]
    for j in range(1, n_convs):
        ins.append(conv(x + ins[-1], p, f"conv{j}"))
    return conv(np.concatenate(ins), p, "merge")


def geometric_ref(x, p, factors=(1, 2, 4), scaled=False):
    parts = []
    for j, r in enumerate(factors):
        parts.append(shuffle_loop(location_sensing_loop(unshuffle_loop(x, r), sub(p, f"ls{j}"), scaled), r))
    return conv(np.concatenate(parts), p, "merge")


def interaction_ref(fs, fd, p):
    wmap = sigmoid(conv(np.concatenate([fs, fd]), p, "interact"))
    return fs * wmap + fs, fd * wmap + fd, wmap


def dgc_ref(x, p, psa_factors=(1, 2, 4, 6), pca_factors=(1, 2, 4), geo_factors=(1, 2, 4),
            n_convs=4):
    c = x.shape[0]
    inp = conv(x, p, "expand")
    fd = granular_ref(inp[:c], sub(p, "granular"), n_convs)
    fs = geometric_ref(inp[c:], sub(p, "geometric"), geo_factors)
    fse, fde, _ = interaction_ref(fs, fd, p)
    sde = conv(np.concatenate([fse, fde]), p, "sde")
    att = np.concatenate([pca_ref(sde, sub(p, "pca"), pca_factors),
                          psa_ref(sde, sub(p, "psa"), psa_factors)])
    return sde + conv(att, p, "post")


def dsp_ref(x, p):
    return location_sensing_loop(x, p)


def lgf_ref(low, high, p):
    _, h, w = low.shape
    up = _resize(high, h, w)
    lg = conv(low, p, "gate_low") + low
    hg = conv(up, p, "gate_high") + up
    return hg * lg + up


# ---------------------------------------------------------------- losses and metrics

def bce_loop(s, g, eps=1e-7):
    total, n = 0.0, 0
    for sv, gv in zip(np.ravel(s), np.ravel(g)):
        sc = min(max(sv, eps), 1 - eps)
        total += -(gv * math.log(sc) + (1 - gv) * math.log(1 - sc))
        n += 1
    return total / n


def iou_loop(s, g, eps=1e-8):
    inter = union = 0.0
    for sv, gv in zip(np.ravel(s), np.ravel(g)):
        inter += sv * gv
        union += sv + gv - sv * gv
    if union == 0.0:
        return 0.0
    return 1.0 - inter / (union + eps)


def fm_loop(s, g, beta2=0.3, eps=1e-8):
    tp = fp = fn = 0.0
    for sv, gv in zip(np.ravel(s), np.ravel(g)):
        tp += sv * gv
        fp += sv * (1 - gv)
        fn += (1 - sv) * gv
    hh = beta2 * (tp + fn) + (tp + fp)
    return 1.0 - (1 + beta2) * tp / (hh + eps)


def mae_loop(s, g):
    total, n = 0.0, 0
    for sv, gv in zip(np.ravel(s), np.ravel(g)):
        total += abs(sv - gv)
        n += 1
    return total / n


def f_measure_loop(s, g, beta2=0.3):
    vals = list(np.ravel(s))
    t = min(1.0, 2.0 * sum(vals) / len(vals))
    tp = fp = fn = 0
    for sv, gv in zip(vals, np.ravel(g)):
        pred = sv >= t and sv > 0
        truth = gv > 0.5
        tp += pred and truth
        fp += pred and not truth
        fn += (not pred) and truth
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    if beta2 * prec + rec == 0:
        return 0.0
    return (1 + beta2) * prec * rec / (beta2 * prec + rec)
