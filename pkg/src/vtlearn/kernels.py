"""Convolution, transposed-convolution, and normalization kernels.

All functions here take channels-last arrays: (B, H, W, C) for 2-D and
(B, D1, D2, T, C) for 3-D, with kernels laid out (k..., Cin, Cout).  Every
accumulation loops kernel offsets in a fixed order so repeated runs are
bitwise identical.  The offset loop turns each convolution into a short
sequence of stacked matmuls over strided views, which keeps the heavy
lifting inside BLAS without materializing an im2col matrix.
"""

from __future__ import annotations

import numpy as np

FLOAT = np.float64


def _pad_spatial(x, pad):
    """Zero-pad the spatial axes (all but first and last) of x."""
    if not any(pad):
        return x
    width = [(0, 0)] + [(p, p) for p in pad] + [(0, 0)]
    return np.pad(x, width, mode="constant")


def conv_out_len(n, k, s, p):
    """Output length of a strided convolution along one axis."""
    m = (n + 2 * p - k) // s + 1
    if m < 1:
        raise ValueError(
            f"convolution collapses axis: n={n} k={k} stride={s} pad={p}")
    return m


def deconv_out_len(n, k, s, p):
    """Output length of a transposed convolution along one axis."""
    m = (n - 1) * s + k - 2 * p
    if m < 1:
        raise ValueError(
            f"transposed convolution collapses axis: n={n} k={k} stride={s} pad={p}")
    return m


# ---- strided convolution (any spatial rank) -----------------------------

# Layers with very few input channels make the per-offset matmuls nearly
# rank-1, which BLAS handles poorly; those go through an explicit im2col
# matrix instead.  The byte cap keeps that matrix from dwarfing the batch.
_IM2COL_MAX_CIN = 4
_IM2COL_MAX_BYTES = 512 * 2**20


def _offset_slice(off, stride, oshape):
    """Index tuple selecting the input sites a kernel offset touches."""
    sl = [slice(None)]
    for o, s, m in zip(off, stride, oshape):
        sl.append(slice(o, o + s * m, s))
    sl.append(slice(None))
    return tuple(sl)


def _conv_views(xp, kshape, stride, oshape):
    """Yield (offset, strided view of the padded input) per kernel offset."""
    for off in np.ndindex(*kshape):
        yield off, xp[_offset_slice(off, stride, oshape)]


def _im2col(xp, kshape, stride, oshape):
    """Stack every kernel-offset view into one (B, *out, nk*Cin) matrix."""
    cin = xp.shape[-1]
    nk = int(np.prod(kshape))
    cols = np.empty(xp.shape[:1] + oshape + (nk * cin,), dtype=FLOAT)
    for j, (_, xv) in enumerate(_conv_views(xp, kshape, stride, oshape)):
        cols[..., j * cin:(j + 1) * cin] = xv
    return cols


def _use_im2col(xp, kshape, oshape):
    cin = xp.shape[-1]
    nk = int(np.prod(kshape))
    bytes_needed = xp.shape[0] * int(np.prod(oshape)) * nk * cin * 8
    return cin <= _IM2COL_MAX_CIN and bytes_needed <= _IM2COL_MAX_BYTES


def conv_fwd(x, w, b, stride, pad):
    """N-D strided convolution, channels last.

    x: (B, *spatial, Cin); w: (*k, Cin, Cout); b: (Cout,) or None.
    Returns (y, ctx); ctx carries the padded input and, when the im2col
    path ran, the column matrix for reuse in backward.
    """
    kshape = w.shape[:-2]
    xp = _pad_spatial(x, pad)
    oshape = tuple(conv_out_len(n, k, s, 0)
                   for n, k, s in zip(xp.shape[1:-1], kshape, stride))
    B = x.shape[0]
    cout = w.shape[-1]
    if _use_im2col(xp, kshape, oshape):
        cols = _im2col(xp, kshape, stride, oshape)
        y = cols.reshape(-1, cols.shape[-1]) @ w.reshape(-1, cout)
        y = y.reshape((B,) + oshape + (cout,))
        if b is not None:
            y += b
        return y, (xp, cols)
    y = np.zeros((B,) + oshape + (cout,), dtype=FLOAT)
    t = np.empty_like(y)
    for off, xv in _conv_views(xp, kshape, stride, oshape):
        np.matmul(xv, w[off], out=t)
        y += t
    if b is not None:
        y += b
    return y, (xp, None)


def _crop_pad(gxp, pad):
    if not any(pad):
        return gxp
    sl = [slice(None)] + [slice(p, d - p) for p, d in
                          zip(pad, gxp.shape[1:-1])] + [slice(None)]
    return np.ascontiguousarray(gxp[tuple(sl)])


def _scatter_offsets_add(gxp, kshape, stride, oshape, slabs):
    """Accumulate per-offset slabs into gxp at their strided positions.

    For unit strides the destination views have dense rows and direct
    accumulation is fine.  Strided layers instead accumulate into dense
    per-phase buffers (one per residue of offset mod stride) and interleave
    once at the end, avoiding k^d scattered read-modify-writes.  gxp must
    arrive zero-filled; phases absent from the offset set stay zero.  Slabs
    are consumed one at a time, so a reused buffer may back every slab.
    """
    if all(s == 1 for s in stride):
        for off, slab in slabs:
            gxp[_offset_slice(off, stride, oshape)] += slab
        return
    padded = gxp.shape[1:-1]
    c = gxp.shape[-1]
    phases = {}
    for off, slab in slabs:
        pr = tuple(o % s for o, s in zip(off, stride))
        buf = phases.get(pr)
        if buf is None:
            plen = tuple(-(-(n - p) // s)
                         for n, p, s in zip(padded, pr, stride))
            buf = np.zeros(gxp.shape[:1] + plen + (c,), dtype=FLOAT)
            phases[pr] = buf
        q = tuple(o // s for o, s in zip(off, stride))
        isl = (slice(None),) + tuple(slice(a, a + m)
                                     for a, m in zip(q, oshape)) + (slice(None),)
        buf[isl] += slab
    for pr, buf in phases.items():
        osl = (slice(None),) + tuple(slice(p, None, s)
                                     for p, s in zip(pr, stride)) + (slice(None),)
        gxp[osl] = buf


def conv_bwd(ctx, w, gy, stride, pad, need_gx=True):
    """Gradients of conv_fwd.  ctx is the tuple saved by forward.

    Returns (gx, gw, gb); gx is unpadded (matches the original input) and
    None when need_gx is false.
    """
    xp, cols = ctx
    kshape = w.shape[:-2]
    oshape = gy.shape[1:-1]
    cin = w.shape[-2]
    cout = w.shape[-1]
    g2 = gy.reshape(-1, cout)
    gb = g2.sum(axis=0)
    if cols is not None:
        kdim = cols.shape[-1]
        gw = (cols.reshape(-1, kdim).T @ g2).reshape(w.shape)
        if not need_gx:
            return None, gw, gb
        dcols = (g2 @ w.reshape(-1, cout).T).reshape(cols.shape)
        gxp = np.zeros_like(xp)
        slabs = ((off, dcols[..., j * cin:(j + 1) * cin])
                 for j, off in enumerate(np.ndindex(*kshape)))
        _scatter_offsets_add(gxp, kshape, stride, oshape, slabs)
        return _crop_pad(gxp, pad), gw, gb
    gw = np.zeros_like(w)
    for off, xv in _conv_views(xp, kshape, stride, oshape):
        gw[off] = xv.reshape(-1, cin).T @ g2
    if not need_gx:
        return None, gw, gb
    gxp = np.zeros_like(xp)
    t = np.empty(gy.shape[:-1] + (cin,), dtype=FLOAT)

    def _gx_slabs():
        for off in np.ndindex(*kshape):
            np.matmul(gy, w[off].T, out=t)
            yield off, t

    _scatter_offsets_add(gxp, kshape, stride, oshape, _gx_slabs())
    return _crop_pad(gxp, pad), gw, gb


# ---- transposed convolution ---------------------------------------------

def deconv_fwd(x, w, b, stride, pad):
    """N-D transposed convolution, channels last.

    x: (B, *spatial, Cin); w: (*k, Cin, Cout).  Each input site scatters a
    kernel-sized patch into a full-resolution buffer; the declared padding
    is then cropped off.  Returns (y, full_shape).
    """
    kshape = w.shape[:-2]
    ishape = x.shape[1:-1]
    B = x.shape[0]
    cout = w.shape[-1]
    fshape = tuple((n - 1) * s + k
                   for n, k, s in zip(ishape, kshape, stride))
    for f, p in zip(fshape, pad):
        if f - 2 * p < 1:
            raise ValueError("padding consumes the whole transposed output")
    full = np.zeros((B,) + fshape + (cout,), dtype=FLOAT)
    t = np.empty((B,) + ishape + (cout,), dtype=FLOAT)
    slabs = ((off, np.matmul(x, w[off], out=t))
             for off in np.ndindex(*kshape))
    _scatter_offsets_add(full, kshape, stride, ishape, slabs)
    if any(pad):
        sl = [slice(None)] + [slice(p, d - p) for p, d in
                              zip(pad, fshape)] + [slice(None)]
        y = np.ascontiguousarray(full[tuple(sl)])
    else:
        y = full
    if b is not None:
        y += b
    return y, fshape


def deconv_bwd(x, w, gy, stride, pad, fshape, need_gx=True):
    """Gradients of deconv_fwd.  Returns (gx, gw, gb)."""
    kshape = w.shape[:-2]
    ishape = x.shape[1:-1]
    B = x.shape[0]
    cin = w.shape[-2]
    cout = w.shape[-1]
    if any(pad):
        gfull = np.zeros((B,) + fshape + (cout,), dtype=FLOAT)
        sl = [slice(None)] + [slice(p, d - p) for p, d in
                              zip(pad, fshape)] + [slice(None)]
        gfull[tuple(sl)] = gy
    else:
        gfull = gy
    x2 = x.reshape(-1, cin)
    gw = np.zeros_like(w)
    gx = np.zeros_like(x) if need_gx else None
    t = np.empty((B,) + ishape + (cin,), dtype=FLOAT) if need_gx else None
    for off in np.ndindex(*kshape):
        gv = gfull[_offset_slice(off, stride, ishape)]
        gw[off] = x2.T @ gv.reshape(-1, cout)
        if need_gx:
            np.matmul(gv, w[off].T, out=t)
            gx += t
    gb = gy.reshape(-1, cout).sum(axis=0)
    return gx, gw, gb


# ---- batch normalization -------------------------------------------------

BN_EPS = 1e-5


def batchnorm_fwd_train(x, gamma, beta, eps=BN_EPS):
    """Normalize over all axes but the last; returns (y, ctx).

    ctx carries (xhat, inv_std, batch_mean, batch_var) for backward and
    for the running-statistics update owned by the caller.
    """
    k = x.reshape(-1, x.shape[-1])
    if k.shape[0] < 2:
        raise ValueError("batch normalization needs at least 2 samples in train mode")
    mean = k.mean(axis=0)
    xhat = x - mean
    kc = xhat.reshape(-1, x.shape[-1])
    var = np.einsum("nc,nc->c", kc, kc) / k.shape[0]
    inv = 1.0 / np.sqrt(var + eps)
    xhat *= inv
    y = xhat * gamma
    y += beta
    return y, (xhat, inv, mean, var)


def batchnorm_bwd_train(gy, gamma, ctx):
    """Gradients of batchnorm_fwd_train: (gx, ggamma, gbeta)."""
    xhat, inv, _, _ = ctx
    c = gy.shape[-1]
    g2 = gy.reshape(-1, c)
    m = g2.shape[0]
    gbeta = g2.sum(axis=0)
    ggamma = np.einsum("nc,nc->c", g2, xhat.reshape(-1, c))
    gx = xhat * (ggamma / m)
    np.subtract(gy, gx, out=gx)
    gx -= gbeta / m
    gx *= gamma * inv
    return gx, ggamma, gbeta


def batchnorm_fwd_eval(x, gamma, beta, run_mean, run_var, eps=BN_EPS):
    """Normalize with stored running statistics (inference mode)."""
    inv = 1.0 / np.sqrt(run_var + eps)
    return (x - run_mean) * inv * gamma + beta
