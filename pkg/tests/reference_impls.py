"""Slow, loop-level reference implementations used as test oracles.

These are written for obviousness, not speed: every sum is an explicit
Python loop over kernel offsets so the production kernels can be checked
against an independently derived computation.
"""

import numpy as np


def naive_conv(x, w, b, stride, pad):
    """Cross-correlation oracle, channels last, any spatial rank."""
    rank = len(stride)
    width = [(0, 0)] + [(p, p) for p in pad] + [(0, 0)]
    xp = np.pad(x, width)
    kshape = w.shape[:-2]
    cin, cout = w.shape[-2], w.shape[-1]
    oshape = tuple((n - k) // s + 1
                   for n, k, s in zip(xp.shape[1:-1], kshape, stride))
    B = x.shape[0]
    y = np.zeros((B,) + oshape + (cout,))
    for idx in np.ndindex((B,) + oshape):
        n, pos = idx[0], idx[1:]
        acc = np.zeros(cout)
        for off in np.ndindex(*kshape):
            src = tuple(s * q + o for q, s, o in zip(pos, stride, off))
            acc = acc + xp[(n,) + src + (slice(None),)] @ w[off]
        y[idx] = acc
    if b is not None:
        y = y + b
    return y


def naive_deconv(x, w, b, stride, pad):
    """Transposed-convolution oracle: scatter kernel patches, then crop."""
    kshape = w.shape[:-2]
    cout = w.shape[-1]
    ishape = x.shape[1:-1]
    B = x.shape[0]
    fshape = tuple((n - 1) * s + k for n, k, s in zip(ishape, kshape, stride))
    full = np.zeros((B,) + fshape + (cout,))
    for idx in np.ndindex((B,) + ishape):
        n, pos = idx[0], idx[1:]
        for off in np.ndindex(*kshape):
            dst = tuple(s * q + o for q, s, o in zip(pos, stride, off))
            full[(n,) + dst + (slice(None),)] += x[idx] @ w[off]
    sl = tuple([slice(None)] + [slice(p, d - p) for p, d in zip(pad, fshape)]
               + [slice(None)])
    y = full[sl].copy()
    if b is not None:
        y = y + b
    return y
