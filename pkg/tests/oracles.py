"""Slow reference implementations used only by the tests.

Everything here works on numpy arrays with explicit loops so it shares no
code path with the torch modules it checks.
"""
import cmath
import math

import numpy as np
import torch


def naive_dft2(x):
    """Unnormalized 2-D DFT by direct summation, ``x`` is ``(H, W)``."""
    h, w = x.shape
    out = np.zeros((h, w), dtype=complex)
    for u in range(h):
        for v in range(w):
            s = 0j
            for a in range(h):
                for b in range(w):
                    s += x[a, b] * cmath.exp(-2j * math.pi * (u * a / h + v * b / w))
            out[u, v] = s
    return out


def naive_idft2(z):
    h, w = z.shape
    out = np.zeros((h, w), dtype=complex)
    for a in range(h):
        for b in range(w):
            s = 0j
            for u in range(h):
                for v in range(w):
                    s += z[u, v] * cmath.exp(2j * math.pi * (u * a / h + v * b / w))
            out[a, b] = s / (h * w)
    return out


def hermitian_extend(half, width):
    """One-sided spectrum ``(H, W//2+1)`` -> full ``(H, W)`` using ``Z[u, W-v] = conj(Z[-u, v])``."""
    h = half.shape[0]
    full = np.zeros((h, width), dtype=complex)
    nh = half.shape[1]
    full[:, :nh] = half
    for u in range(h):
        for v in range(nh, width):
            full[u, v] = np.conj(half[(-u) % h, width - v])
    return full


def global_filter_oracle(x, weight):
    """Frequency-mask filtering of one real ``(H, W)`` map with a one-sided complex mask."""
    h, w = x.shape
    spec = naive_dft2(x)[:, : w // 2 + 1] * weight
    return naive_idft2(hermitian_extend(spec, w)).real


def conv2d_loops(x, weight, bias=None, padding=0, groups=1):
    """``x`` (Cin, H, W), ``weight`` (Cout, Cin/groups, k, k); stride 1, zero padding."""
    cin, h, w = x.shape
    cout, cpg, k, _ = weight.shape
    xp = np.zeros((cin, h + 2 * padding, w + 2 * padding))
    xp[:, padding:padding + h, padding:padding + w] = x
    oh, ow = h + 2 * padding - k + 1, w + 2 * padding - k + 1
    out = np.zeros((cout, oh, ow))
    opg = cout // groups
    for o in range(cout):
        g = o // opg
        for ci in range(cpg):
            c = g * cpg + ci
            for i in range(oh):
                for j in range(ow):
                    s = 0.0
                    for di in range(k):
                        for dj in range(k):
                            s += weight[o, ci, di, dj] * xp[c, i + di, j + dj]
                    out[o, i, j] += s
        if bias is not None:
            out[o] += bias[o]
    return out


def gelu(v):
    return 0.5 * v * (1 + np.vectorize(math.erf)(v / math.sqrt(2)))


def sigmoid(v):
    return 1 / (1 + np.exp(-v))


def avgpool2(x):
    c, h, w = x.shape
    out = np.zeros((c, h // 2, w // 2))
    for ch in range(c):
        for i in range(h // 2):
            for j in range(w // 2):
                out[ch, i, j] = x[ch, 2 * i:2 * i + 2, 2 * j:2 * j + 2].sum() / 4
    return out


def upsample_nearest2(x):
    c, h, w = x.shape
    out = np.zeros((c, 2 * h, 2 * w))
    for i in range(2 * h):
        for j in range(2 * w):
            out[:, i, j] = x[:, i // 2, j // 2]
    return out


def _np(t):
    return None if t is None else t.detach().double().cpu().numpy()


def conv_module(x, conv):
    return conv2d_loops(x, _np(conv.weight), _np(conv.bias), conv.padding[0], conv.groups)


def squeeze_attention_oracle(x, sa):
    """``x`` (C, H, W) numpy; ``sa`` a SqueezeAttention module (weights only are read)."""
    main = gelu(conv_module(gelu(conv_module(x, sa.main[0])), sa.main[2]))
    att = sigmoid(upsample_nearest2(conv_module(avgpool2(x), sa.att_conv)))
    return att * main + att


def glf_oracle(y, glf):
    c = y.shape[0]
    g = glf.global_channels
    loc = c - g
    weight = torch.view_as_complex(glf.complex_weight.detach().double().contiguous()).numpy()
    parts = []
    if loc:
        parts.append(conv_module(y[:loc], glf.local))
    parts.append(np.stack([global_filter_oracle(y[loc + i], weight[i]) for i in range(g)]))
    return conv_module(np.concatenate(parts), glf.proj)


def ha_oracle(x, ha):
    """Straight-line gating recursion for one ``(C, H, W)`` sample."""
    z = conv_module(x, ha.proj_in)
    dims = ha.dims
    gate = z[: dims[0]]
    offsets = np.cumsum([dims[0]] + dims)
    ys = [z[offsets[k]:offsets[k + 1]] for k in range(len(dims))]
    for k in range(ha.order):
        if k > 0:
            gate = squeeze_attention_oracle(gate, ha.sq[k - 1])
        gate = conv_module(gate * glf_oracle(ys[k], ha.filters[k]), ha.pws[k]) / ha.alpha
    return conv_module(gate, ha.proj_out)


def finite_difference_check(params, loss_fn, eps=1e-4, max_entries=None, rng=None,
                            floor=1e-6):
    """Compare autograd with central differences entry by entry.

    Returns the worst relative error ``|a - n| / max(|a|, |n|, floor)``
    together with the number of entries checked.
    """
    params = [p for p in params if p.requires_grad]
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    worst, checked = 0.0, 0
    rng = rng or np.random.default_rng(0)
    for p, g in zip(params, grads):
        g = torch.zeros_like(p) if g is None else g
        flat = p.data.view(-1)
        n = flat.numel()
        idx = range(n) if max_entries is None or n <= max_entries else \
            rng.choice(n, size=max_entries, replace=False)
        for i in idx:
            i = int(i)
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + eps
                lp = loss_fn().item()
                flat[i] = orig - eps
                lm = loss_fn().item()
                flat[i] = orig
            num = (lp - lm) / (2 * eps)
            ana = g.reshape(-1)[i].item()
            err = abs(num - ana) / max(abs(num), abs(ana), floor)
            worst = max(worst, err)
            checked += 1
    return worst, checked


def directional_check(params, loss_fn, eps=1e-4, seed=0):
    """Directional derivative along one random direction over all parameters."""
    params = [p for p in params if p.requires_grad]
    gen = torch.Generator().manual_seed(seed)
    dirs = [torch.randn(p.shape, generator=gen, dtype=p.dtype) for p in params]
    grads = torch.autograd.grad(loss_fn(), params, allow_unused=True)
    ana = sum(float((d * g).sum()) for d, g in zip(dirs, grads) if g is not None)
    with torch.no_grad():
        for p, d in zip(params, dirs):
            p.add_(eps * d)
        lp = loss_fn().item()
        for p, d in zip(params, dirs):
            p.sub_(2 * eps * d)
        lm = loss_fn().item()
        for p, d in zip(params, dirs):
            p.add_(eps * d)
    num = (lp - lm) / (2 * eps)
    return abs(num - ana) / max(abs(num), abs(ana), 1e-12)
