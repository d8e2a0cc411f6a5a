"""Layer vocabulary: specs, functional ops, and graph node classes.

Public functional ops take channels-first batched arrays (B, C, *spatial),
matching how the networks are described; internally everything runs through
the channels-last kernels in :mod:`vtlearn.kernels`.  Weight layouts follow
the usual convention: convolution weights are (Cout, Cin, *k) and transposed
convolution weights are (Cin, Cout, *k), so a convolution and its adjoint
share one array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .engine import FLOAT, Op, ShapeError

ACTIVATIONS = ("relu", "tanh", "none")


def _check_activation(a):
    if a not in ACTIVATIONS:
        raise ValueError(f"activation must be one of {ACTIVATIONS}, got {a!r}")


def _check_geometry(filter_, stride, padding):
    if any(k < 1 for k in filter_) or any(s < 1 for s in stride):
        raise ValueError("filter and stride entries must be >= 1")
    if any(p < 0 for p in padding):
        raise ValueError("padding entries must be >= 0")


@dataclass(frozen=True)
class Conv2DSpec:
    in_channels: int
    out_channels: int
    filter: tuple
    stride: tuple
    padding: tuple
    activation: str = "none"

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if not (len(self.filter) == len(self.stride) == len(self.padding) == 2):
            raise ValueError("filter/stride/padding must be pairs")
        _check_geometry(self.filter, self.stride, self.padding)
        _check_activation(self.activation)

    def out_spatial(self, spatial):
        return tuple(kernels.conv_out_len(n, k, s, p) for n, k, s, p in
                     zip(spatial, self.filter, self.stride, self.padding))

    def weight_shape(self):
        return (self.out_channels, self.in_channels) + tuple(self.filter)


@dataclass(frozen=True)
class Conv3DSpec:
    in_channels: int
    out_channels: int
    filter: tuple
    stride: tuple
    padding: tuple
    activation: str = "none"

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if not (len(self.filter) == len(self.stride) == len(self.padding) == 3):
            raise ValueError("filter/stride/padding must be triples")
        _check_geometry(self.filter, self.stride, self.padding)
        _check_activation(self.activation)

    def out_spatial(self, spatial):
        return tuple(kernels.conv_out_len(n, k, s, p) for n, k, s, p in
                     zip(spatial, self.filter, self.stride, self.padding))

    def weight_shape(self):
        return (self.out_channels, self.in_channels) + tuple(self.filter)


@dataclass(frozen=True)
class Deconv3DSpec:
    in_channels: int
    out_channels: int
    filter: tuple
    stride: tuple
    padding: tuple
    activation: str = "none"

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if not (len(self.filter) == len(self.stride) == len(self.padding) == 3):
            raise ValueError("filter/stride/padding must be triples")
        _check_geometry(self.filter, self.stride, self.padding)
        _check_activation(self.activation)

    def out_spatial(self, spatial):
        return tuple(kernels.deconv_out_len(n, k, s, p) for n, k, s, p in
                     zip(spatial, self.filter, self.stride, self.padding))

    def weight_shape(self):
        return (self.in_channels, self.out_channels) + tuple(self.filter)


def _apply_activation(y, activation):
    if activation == "relu":
        return np.maximum(y, 0.0)
    if activation == "tanh":
        return np.tanh(y)
    return y


def _to_cl(x):
    """(B, C, *spatial) -> (B, *spatial, C)."""
    axes = (0,) + tuple(range(2, x.ndim)) + (1,)
    return np.ascontiguousarray(np.transpose(x, axes))


def _to_cf(x):
    """(B, *spatial, C) -> (B, C, *spatial)."""
    axes = (0, x.ndim - 1) + tuple(range(1, x.ndim - 1))
    return np.ascontiguousarray(np.transpose(x, axes))


def _conv_w_cl(w):
    """(Cout, Cin, *k) -> (*k, Cin, Cout)."""
    axes = tuple(range(2, w.ndim)) + (1, 0)
    return np.ascontiguousarray(np.transpose(w, axes))


def _deconv_w_cl(w):
    """(Cin, Cout, *k) -> (*k, Cin, Cout)."""
    axes = tuple(range(2, w.ndim)) + (0, 1)
    return np.ascontiguousarray(np.transpose(w, axes))


# ---- public functional ops (channels-first) ------------------------------

def conv2d(x, spec: Conv2DSpec, weights, bias):
    """Strided 2-D cross-correlation plus the spec's activation.

    x: (B, Cin, H, W); weights: (Cout, Cin, kh, kw); bias: (Cout,).
    """
    x = np.asarray(x, dtype=FLOAT)
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise ShapeError(
            f"conv2d expects (B, {spec.in_channels}, H, W), got {x.shape}")
    if weights.shape != spec.weight_shape():
        raise ShapeError(
            f"conv2d weights {weights.shape} != {spec.weight_shape()}")
    spec.out_spatial(x.shape[2:])
    y, _ = kernels.conv_fwd(_to_cl(x), _conv_w_cl(weights), bias,
                            spec.stride, spec.padding)
    return _to_cf(_apply_activation(y, spec.activation))


def conv3d(x, spec: Conv3DSpec, weights, bias):
    """Strided 3-D cross-correlation plus the spec's activation.

    x: (B, Cin, D1, D2, T); weights: (Cout, Cin, k1, k2, kt).
    """
    x = np.asarray(x, dtype=FLOAT)
    if x.ndim != 5 or x.shape[1] != spec.in_channels:
        raise ShapeError(
            f"conv3d expects (B, {spec.in_channels}, D1, D2, T), got {x.shape}")
    if weights.shape != spec.weight_shape():
        raise ShapeError(
            f"conv3d weights {weights.shape} != {spec.weight_shape()}")
    spec.out_spatial(x.shape[2:])
    y, _ = kernels.conv_fwd(_to_cl(x), _conv_w_cl(weights), bias,
                            spec.stride, spec.padding)
    return _to_cf(_apply_activation(y, spec.activation))


def deconv3d(x, spec: Deconv3DSpec, weights, bias):
    """3-D transposed convolution plus the spec's activation.

    x: (B, Cin, D1, D2, T); weights: (Cin, Cout, k1, k2, kt).  With the
    same weight array, deconv3d is the adjoint of the matching conv3d.
    """
    x = np.asarray(x, dtype=FLOAT)
    if x.ndim != 5 or x.shape[1] != spec.in_channels:
        raise ShapeError(
            f"deconv3d expects (B, {spec.in_channels}, D1, D2, T), got {x.shape}")
    if weights.shape != spec.weight_shape():
        raise ShapeError(
            f"deconv3d weights {weights.shape} != {spec.weight_shape()}")
    spec.out_spatial(x.shape[2:])
    y, _ = kernels.deconv_fwd(_to_cl(x), _deconv_w_cl(weights), bias,
                              spec.stride, spec.padding)
    return _to_cf(_apply_activation(y, spec.activation))


def linear(x, weights, bias, activation="none"):
    """Affine map (B, n) @ (n, m) + (m,) with optional activation."""
    _check_activation(activation)
    x = np.asarray(x, dtype=FLOAT)
    if x.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ShapeError(
            f"linear expects (B, {weights.shape[0]}), got {x.shape}")
    return _apply_activation(x @ weights + bias, activation)


def batchnorm(x, mode, gamma, beta, run_mean, run_var,
              momentum=0.9, eps=kernels.BN_EPS):
    """Channel-wise batch normalization over a channels-first batch.

    Train mode normalizes with batch statistics and updates run_mean and
    run_var in place with the given momentum; eval mode reads them.
    """
    x = np.asarray(x, dtype=FLOAT)
    xl = _to_cl(x) if x.ndim > 2 else x
    if mode == "train":
        if x.shape[0] < 2:
            raise ValueError("batchnorm train mode needs batch size >= 2")
        y, (_, _, mean, var) = kernels.batchnorm_fwd_train(xl, gamma, beta, eps)
        run_mean *= momentum
        run_mean += (1.0 - momentum) * mean
        run_var *= momentum
        run_var += (1.0 - momentum) * var
    elif mode == "eval":
        y = kernels.batchnorm_fwd_eval(xl, gamma, beta, run_mean, run_var, eps)
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return _to_cf(y) if x.ndim > 2 else y


def mse_loss(pred, target):
    """Mean over all entries of the squared difference."""
    pred = np.asarray(pred, dtype=FLOAT)
    target = np.asarray(target, dtype=FLOAT)
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    d = pred - target
    return float(np.mean(d * d))


def softmax(logits):
    """Row-wise softmax, stabilized by max subtraction."""
    z = np.asarray(logits, dtype=FLOAT)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean over the batch of -log softmax(logits)[label]."""
    logits = np.asarray(logits, dtype=FLOAT)
    labels = np.asarray(labels)
    n_cls = logits.shape[-1]
    if labels.min() < 0 or labels.max() >= n_cls:
        raise ValueError(f"labels must lie in [0, {n_cls})")
    z = logits - logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    picked = z[np.arange(len(labels)), labels]
    return float(np.mean(lse - picked))


# ---- graph node ops -------------------------------------------------------

class ConvOp(Op):
    """Strided convolution over channels-last activations (any rank)."""

    def __init__(self, filter_, stride, padding):
        self.filter = tuple(filter_)
        self.stride = tuple(stride)
        self.padding = tuple(padding)

    def infer_shape(self, in_shapes, param_shapes):
        (xs,) = in_shapes
        w, b = param_shapes
        rank = len(self.filter)
        if len(xs) != rank + 1:
            raise ShapeError(f"conv input rank {len(xs)} != spatial {rank}+1")
        if w != self.filter + (xs[-1], b[0]):
            raise ShapeError(f"conv weight {w} incompatible with input {xs}")
        out = tuple(kernels.conv_out_len(n, k, s, p) for n, k, s, p in
                    zip(xs[:-1], self.filter, self.stride, self.padding))
        return out + (b[0],)

    def forward(self, xs, params, train):
        w, b = params
        return kernels.conv_fwd(xs[0], w.value, b.value,
                                self.stride, self.padding)

    def backward(self, gy, xs, params, y, ctx, train, needs):
        w, _ = params
        gx, gw, gb = kernels.conv_bwd(ctx, w.value, gy,
                                      self.stride, self.padding,
                                      need_gx=needs[0])
        return (gx,), (gw, gb)


class DeconvOp(Op):
    """Transposed convolution over channels-last activations (any rank)."""

    def __init__(self, filter_, stride, padding):
        self.filter = tuple(filter_)
        self.stride = tuple(stride)
        self.padding = tuple(padding)

    def infer_shape(self, in_shapes, param_shapes):
        (xs,) = in_shapes
        w, b = param_shapes
        rank = len(self.filter)
        if len(xs) != rank + 1:
            raise ShapeError(f"deconv input rank {len(xs)} != spatial {rank}+1")
        if w != self.filter + (xs[-1], b[0]):
            raise ShapeError(f"deconv weight {w} incompatible with input {xs}")
        out = tuple(kernels.deconv_out_len(n, k, s, p) for n, k, s, p in
                    zip(xs[:-1], self.filter, self.stride, self.padding))
        return out + (b[0],)

    def forward(self, xs, params, train):
        w, b = params
        y, fshape = kernels.deconv_fwd(xs[0], w.value, b.value,
                                       self.stride, self.padding)
        return y, fshape

    def backward(self, gy, xs, params, y, ctx, train, needs):
        w, _ = params
        gx, gw, gb = kernels.deconv_bwd(xs[0], w.value, gy,
                                        self.stride, self.padding, ctx,
                                        need_gx=needs[0])
        return (gx,), (gw, gb)


class BatchNormOp(Op):
    """Per-channel normalization; channel axis is last.

    Parameters: gamma, beta (trainable), running mean/var (state).  Train
    mode writes the running statistics in place with momentum 0.9.
    """

    def __init__(self, momentum=0.9, eps=kernels.BN_EPS):
        self.momentum = momentum
        self.eps = eps

    def infer_shape(self, in_shapes, param_shapes):
        (xs,) = in_shapes
        c = xs[-1]
        for ps in param_shapes:
            if ps != (c,):
                raise ShapeError(f"batchnorm params {ps} != ({c},)")
        return xs

    def forward(self, xs, params, train):
        gamma, beta, rmean, rvar = params
        x = xs[0]
        if train:
            if x.shape[0] < 2:
                raise ValueError("batchnorm train mode needs batch size >= 2")
            y, ctx = kernels.batchnorm_fwd_train(x, gamma.value, beta.value,
                                                 self.eps)
            _, _, mean, var = ctx
            m = self.momentum
            rmean.value *= m
            rmean.value += (1.0 - m) * mean
            rvar.value *= m
            rvar.value += (1.0 - m) * var
            return y, ctx
        y = kernels.batchnorm_fwd_eval(x, gamma.value, beta.value,
                                       rmean.value, rvar.value, self.eps)
        return y, None

    def backward(self, gy, xs, params, y, ctx, train, needs):
        gamma, _, rmean, rvar = params
        if train:
            gx, ggamma, gbeta = kernels.batchnorm_bwd_train(gy, gamma.value, ctx)
        else:
            lead = tuple(range(gy.ndim - 1))
            inv = 1.0 / np.sqrt(rvar.value + self.eps)
            gx = gy * (gamma.value * inv)
            xhat = (xs[0] - rmean.value) * inv
            ggamma = (gy * xhat).sum(axis=lead)
            gbeta = gy.sum(axis=lead)
        return (gx,), (ggamma, gbeta, None, None)


class LinearOp(Op):
    def infer_shape(self, in_shapes, param_shapes):
        (xs,) = in_shapes
        w, b = param_shapes
        if len(xs) != 1 or w[0] != xs[0] or (w[1],) != b:
            raise ShapeError(f"linear: input {xs}, weight {w}, bias {b}")
        return (w[1],)

    def forward(self, xs, params, train):
        w, b = params
        return xs[0] @ w.value + b.value, None

    def backward(self, gy, xs, params, y, ctx, train, needs):
        w, _ = params
        gx = gy @ w.value.T if needs[0] else None
        gw = xs[0].T @ gy
        gb = gy.sum(axis=0)
        return (gx,), (gw, gb)


class ReluOp(Op):
    def infer_shape(self, in_shapes, param_shapes):
        return in_shapes[0]

    def forward(self, xs, params, train):
        return np.maximum(xs[0], 0.0), None

    def backward(self, gy, xs, params, y, ctx, train, needs):
        return (gy * (xs[0] > 0.0),), ()


class TanhOp(Op):
    def infer_shape(self, in_shapes, param_shapes):
        return in_shapes[0]

    def forward(self, xs, params, train):
        return np.tanh(xs[0]), None

    def backward(self, gy, xs, params, y, ctx, train, needs):
        return (gy * (1.0 - y * y),), ()


class SoftmaxOp(Op):
    def infer_shape(self, in_shapes, param_shapes):
        return in_shapes[0]

    def forward(self, xs, params, train):
        return softmax(xs[0]), None

    def backward(self, gy, xs, params, y, ctx, train, needs):
        dot = (gy * y).sum(axis=-1, keepdims=True)
        return (y * (gy - dot),), ()


class ReshapeOp(Op):
    """Reshape the per-sample payload; batch axis is untouched."""

    def __init__(self, shape):
        self.shape = tuple(int(s) for s in shape)

    def infer_shape(self, in_shapes, param_shapes):
        (xs,) = in_shapes
        if int(np.prod(xs)) != int(np.prod(self.shape)):
            raise ShapeError(f"cannot reshape {xs} to {self.shape}")
        return self.shape

    def forward(self, xs, params, train):
        x = xs[0]
        return np.ascontiguousarray(x).reshape((x.shape[0],) + self.shape), None

    def backward(self, gy, xs, params, y, ctx, train, needs):
        return (gy.reshape(xs[0].shape),), ()


class ToChannelsLastOp(Op):
    """(B, C, *spatial) -> (B, *spatial, C)."""

    def infer_shape(self, in_shapes, param_shapes):
        (xs,) = in_shapes
        return xs[1:] + (xs[0],)

    def forward(self, xs, params, train):
        return _to_cl(xs[0]), None

    def backward(self, gy, xs, params, y, ctx, train, needs):
        return (_to_cf(gy),), ()


class ToChannelsFirstOp(Op):
    """(B, *spatial, C) -> (B, C, *spatial)."""

    def infer_shape(self, in_shapes, param_shapes):
        (xs,) = in_shapes
        return (xs[-1],) + xs[:-1]

    def forward(self, xs, params, train):
        return _to_cf(xs[0]), None

    def backward(self, gy, xs, params, y, ctx, train, needs):
        return (_to_cl(gy),), ()


class ConcatOp(Op):
    """Concatenate feature vectors along axis 1."""

    def infer_shape(self, in_shapes, param_shapes):
        if any(len(s) != 1 for s in in_shapes):
            raise ShapeError("concat expects flat (B, n) inputs")
        return (sum(s[0] for s in in_shapes),)

    def forward(self, xs, params, train):
        return np.concatenate(xs, axis=1), None

    def backward(self, gy, xs, params, y, ctx, train, needs):
        sizes = [x.shape[1] for x in xs]
        splits = np.cumsum(sizes)[:-1]
        return tuple(np.ascontiguousarray(g) for g in
                     np.split(gy, splits, axis=1)), ()


class SumOp(Op):
    """Scalar sum of all entries (batch included); grad broadcasts ones."""

    def infer_shape(self, in_shapes, param_shapes):
        return None

    def forward(self, xs, params, train):
        return np.asarray(np.sum(xs[0])), None

    def backward(self, gy, xs, params, y, ctx, train, needs):
        return (np.full(xs[0].shape, float(gy), dtype=FLOAT),), ()


class MSELossOp(Op):
    """Scalar mean squared error between two equally shaped nodes."""

    def infer_shape(self, in_shapes, param_shapes):
        a, b = in_shapes
        if a != b:
            raise ShapeError(f"mse shapes differ: {a} vs {b}")
        return None

    def forward(self, xs, params, train):
        d = xs[0] - xs[1]
        return np.asarray(np.mean(d * d)), d

    def backward(self, gy, xs, params, y, ctx, train, needs):
        g = ctx * (2.0 * float(gy) / ctx.size)
        return (g, -g if needs[1] else None), ()


class SoftmaxCrossEntropyOp(Op):
    """Scalar mean of -log softmax(logits)[label]; labels are int feeds."""

    def infer_shape(self, in_shapes, param_shapes):
        logits, labels = in_shapes
        if len(logits) != 1 or len(labels) != 0:
            raise ShapeError("expects logits (B, C) and labels (B,)")
        return None

    def forward(self, xs, params, train):
        logits, labels = xs
        n_cls = logits.shape[-1]
        if labels.min() < 0 or labels.max() >= n_cls:
            raise ValueError(f"labels must lie in [0, {n_cls})")
        z = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(z)
        se = e.sum(axis=-1, keepdims=True)
        p = e / se
        picked = z[np.arange(len(labels)), labels]
        loss = np.asarray(np.mean(np.log(se[:, 0]) - picked))
        return loss, p

    def backward(self, gy, xs, params, y, ctx, train, needs):
        logits, labels = xs
        g = ctx.copy()
        g[np.arange(len(labels)), labels] -= 1.0
        g *= float(gy) / len(labels)
        return (g, None), ()
