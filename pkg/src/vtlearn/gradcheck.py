"""Gradient-check harness: autodiff vs central differences.

Builds one small graph per layer kind appearing in the two network tables
and compares backward-pass gradients against finite_difference_grad on
sampled parameter entries.  Probing a parameter low in a stack also
exercises the input-gradient path of every op above it.  The same probe
loop runs on the full assembled networks with stratified entry sampling.
"""

from __future__ import annotations

import numpy as np

from . import models
from .engine import Graph, finite_difference_grad
from .layers import (BatchNormOp, ConcatOp, ConvOp, DeconvOp, LinearOp,
                     MSELossOp, ReluOp, ReshapeOp, SoftmaxCrossEntropyOp,
                     SoftmaxOp, TanhOp, ToChannelsFirstOp, ToChannelsLastOp)

EPS = 1e-5
TOL = 1e-4


class GradientCheckError(RuntimeError):
    """An autodiff gradient disagreed with its central-difference estimate."""


def _bn_params(g, rng, tag, c):
    g.add_parameter(f"{tag}.gamma", rng.uniform(0.6, 1.4, size=c))
    g.add_parameter(f"{tag}.beta", rng.normal(size=c) * 0.1)
    g.add_parameter(f"{tag}.rmean", np.zeros(c), trainable=False)
    g.add_parameter(f"{tag}.rvar", np.ones(c), trainable=False)
    return (f"{tag}.gamma", f"{tag}.beta", f"{tag}.rmean", f"{tag}.rvar")


def build_conv2d_stack(rng):
    """conv2d -> tanh -> batchnorm -> conv2d -> relu -> mse."""
    g = Graph()
    g.add_parameter("c1.w", rng.normal(size=(3, 3, 2, 4)) * 0.4)
    g.add_parameter("c1.b", rng.normal(size=4) * 0.1)
    g.add_parameter("c2.w", rng.normal(size=(2, 2, 4, 3)) * 0.4)
    g.add_parameter("c2.b", rng.normal(size=3) * 0.1)
    bn = _bn_params(g, rng, "bn1", 4)
    x = g.add_input("x", (2, 9, 9))
    t = g.add_input("t", (3, 3, 3))
    h = g.add(ToChannelsLastOp(), (x,))
    h = g.add(ConvOp((3, 3), (2, 2), (0, 0)), (h,), ("c1.w", "c1.b"))
    h = g.add(TanhOp(), (h,))
    h = g.add(BatchNormOp(), (h,), bn)
    h = g.add(ConvOp((2, 2), (1, 1), (0, 0)), (h,), ("c2.w", "c2.b"))
    h = g.add(ReluOp(), (h,))
    h = g.add(ToChannelsFirstOp(), (h,))
    loss = g.add(MSELossOp(), (h, t))
    feeds = {"x": rng.normal(size=(3, 2, 9, 9)),
             "t": rng.normal(size=(3, 3, 3, 3))}
    return g, feeds, loss, ["c1.w", "c1.b", "c2.w", "c2.b",
                            "bn1.gamma", "bn1.beta"]


def build_conv3d_stack(rng):
    """conv3d -> relu -> conv3d -> tanh -> mse (classifier branch shape)."""
    g = Graph()
    g.add_parameter("c1.w", rng.normal(size=(2, 2, 3, 3, 4)) * 0.4)
    g.add_parameter("c1.b", rng.normal(size=4) * 0.1)
    g.add_parameter("c2.w", rng.normal(size=(1, 1, 3, 4, 2)) * 0.4)
    g.add_parameter("c2.b", rng.normal(size=2) * 0.1)
    x = g.add_input("x", (3, 4, 4, 10))
    t = g.add_input("t", (2, 3, 3, 2))
    h = g.add(ToChannelsLastOp(), (x,))
    h = g.add(ConvOp((2, 2, 3), (1, 1, 2), (0, 0, 0)), (h,), ("c1.w", "c1.b"))
    h = g.add(ReluOp(), (h,))
    h = g.add(ConvOp((1, 1, 3), (1, 1, 1), (0, 0, 0)), (h,), ("c2.w", "c2.b"))
    h = g.add(TanhOp(), (h,))
    h = g.add(ToChannelsFirstOp(), (h,))
    loss = g.add(MSELossOp(), (h, t))
    feeds = {"x": rng.normal(size=(2, 3, 4, 4, 10)),
             "t": rng.normal(size=(2, 2, 3, 3, 2))}
    return g, feeds, loss, ["c1.w", "c1.b", "c2.w", "c2.b"]


def build_deconv3d_stack(rng):
    """deconv3d -> relu -> deconv3d (padded) -> tanh -> mse."""
    g = Graph()
    g.add_parameter("d1.w", rng.normal(size=(1, 1, 3, 2, 4)) * 0.4)
    g.add_parameter("d1.b", rng.normal(size=4) * 0.1)
    g.add_parameter("d2.w", rng.normal(size=(2, 2, 4, 4, 3)) * 0.3)
    g.add_parameter("d2.b", rng.normal(size=3) * 0.1)
    x = g.add_input("x", (2, 2, 2, 4))
    t = g.add_input("t", (3, 3, 3, 14))
    h = g.add(ToChannelsLastOp(), (x,))
    h = g.add(DeconvOp((1, 1, 3), (1, 1, 2), (0, 0, 0)), (h,), ("d1.w", "d1.b"))
    h = g.add(ReluOp(), (h,))
    h = g.add(DeconvOp((2, 2, 4), (1, 1, 2), (0, 0, 3)), (h,), ("d2.w", "d2.b"))
    h = g.add(TanhOp(), (h,))
    h = g.add(ToChannelsFirstOp(), (h,))
    loss = g.add(MSELossOp(), (h, t))
    feeds = {"x": rng.normal(size=(2, 2, 2, 2, 4)),
             "t": rng.normal(size=(2, 3, 3, 3, 14))}
    return g, feeds, loss, ["d1.w", "d1.b", "d2.w", "d2.b"]


def build_batchnorm_train(rng):
    """linear -> batchnorm -> tanh -> mse, probing gamma/beta directly."""
    g = Graph()
    g.add_parameter("l.w", rng.normal(size=(10, 12)) * 0.5)
    g.add_parameter("l.b", rng.normal(size=12) * 0.1)
    bn = _bn_params(g, rng, "bn", 12)
    x = g.add_input("x", (10,))
    t = g.add_input("t", (12,))
    h = g.add(LinearOp(), (x,), ("l.w", "l.b"))
    h = g.add(BatchNormOp(), (h,), bn)
    h = g.add(TanhOp(), (h,))
    loss = g.add(MSELossOp(), (h, t))
    feeds = {"x": rng.normal(size=(7, 10)), "t": rng.normal(size=(7, 12))}
    return g, feeds, loss, ["l.w", "l.b", "bn.gamma", "bn.beta"]


def build_mlp3(rng):
    """Random 3-layer MLP: linear/relu/linear/tanh/linear -> mse."""
    g = Graph()
    g.add_parameter("w1", rng.normal(size=(6, 8)) * 0.5)
    g.add_parameter("b1", rng.normal(size=8) * 0.1)
    g.add_parameter("w2", rng.normal(size=(8, 5)) * 0.5)
    g.add_parameter("b2", rng.normal(size=5) * 0.1)
    g.add_parameter("w3", rng.normal(size=(5, 4)) * 0.5)
    g.add_parameter("b3", rng.normal(size=4) * 0.1)
    x = g.add_input("x", (6,))
    t = g.add_input("t", (4,))
    h = g.add(LinearOp(), (x,), ("w1", "b1"))
    h = g.add(ReluOp(), (h,))
    h = g.add(LinearOp(), (h,), ("w2", "b2"))
    h = g.add(TanhOp(), (h,))
    h = g.add(LinearOp(), (h,), ("w3", "b3"))
    loss = g.add(MSELossOp(), (h, t))
    feeds = {"x": rng.normal(size=(5, 6)), "t": rng.normal(size=(5, 4))}
    return g, feeds, loss, ["w1", "b1", "w2", "b2", "w3", "b3"]


def build_softmax_ce(rng):
    """linear -> tanh -> linear -> softmax cross entropy on int labels."""
    g = Graph()
    g.add_parameter("w1", rng.normal(size=(7, 6)) * 0.5)
    g.add_parameter("b1", rng.normal(size=6) * 0.1)
    g.add_parameter("w2", rng.normal(size=(6, 15)) * 0.5)
    g.add_parameter("b2", rng.normal(size=15) * 0.1)
    x = g.add_input("x", (7,))
    y = g.add_input("labels", (), dtype=np.int64)
    h = g.add(LinearOp(), (x,), ("w1", "b1"))
    h = g.add(TanhOp(), (h,))
    h = g.add(LinearOp(), (h,), ("w2", "b2"))
    loss = g.add(SoftmaxCrossEntropyOp(), (h, y))
    feeds = {"x": rng.normal(size=(6, 7)),
             "labels": rng.integers(0, 15, size=6)}
    return g, feeds, loss, ["w1", "b1", "w2", "b2"]


def build_softmax_mse(rng):
    """Gradient through the softmax op itself (eval-path probabilities)."""
    g = Graph()
    g.add_parameter("w", rng.normal(size=(8, 14)) * 0.5)
    g.add_parameter("b", rng.normal(size=14) * 0.1)
    x = g.add_input("x", (8,))
    t = g.add_input("t", (14,))
    h = g.add(LinearOp(), (x,), ("w", "b"))
    h = g.add(SoftmaxOp(), (h,))
    loss = g.add(MSELossOp(), (h, t))
    feeds = {"x": rng.normal(size=(4, 8)),
             "t": rng.uniform(0, 1, size=(4, 14))}
    return g, feeds, loss, ["w", "b"]


def build_concat_reshape(rng):
    """Two branches -> concat -> linear -> mse, with a reshape in one arm."""
    g = Graph()
    g.add_parameter("wa", rng.normal(size=(4, 8)) * 0.5)
    g.add_parameter("ba", rng.normal(size=8) * 0.1)
    g.add_parameter("wb", rng.normal(size=(10, 4)) * 0.5)
    g.add_parameter("bb", rng.normal(size=4) * 0.1)
    g.add_parameter("wo", rng.normal(size=(12, 3)) * 0.5)
    g.add_parameter("bo", rng.normal(size=3) * 0.1)
    xa = g.add_input("xa", (4,))
    xb = g.add_input("xb", (2, 5))
    t = g.add_input("t", (3,))
    ha = g.add(LinearOp(), (xa,), ("wa", "ba"))
    ha = g.add(TanhOp(), (ha,))
    hb = g.add(ReshapeOp((10,)), (xb,))
    hb = g.add(LinearOp(), (hb,), ("wb", "bb"))
    hb = g.add(ReluOp(), (hb,))
    h = g.add(ConcatOp(), (ha, hb))
    h = g.add(LinearOp(), (h,), ("wo", "bo"))
    loss = g.add(MSELossOp(), (h, t))
    feeds = {"xa": rng.normal(size=(4, 4)),
             "xb": rng.normal(size=(4, 2, 5)),
             "t": rng.normal(size=(4, 3))}
    return g, feeds, loss, ["wa", "ba", "wb", "bb", "wo", "bo"]


BUILDERS = {
    "conv2d": build_conv2d_stack,
    "conv3d": build_conv3d_stack,
    "deconv3d": build_deconv3d_stack,
    "batchnorm-train": build_batchnorm_train,
    "linear-mlp": build_mlp3,
    "softmax-ce": build_softmax_ce,
    "softmax": build_softmax_mse,
    "concat-reshape": build_concat_reshape,
}


def check_entries(g, feeds, loss, probes, eps=EPS, tol=TOL):
    """Compare autodiff grads to central differences at given probe points.

    probes maps parameter name -> flat indices.  Raises GradientCheckError
    on the first entry outside tol; returns (entries_checked, max_rel_err).
    """
    g.zero_grad()
    stash = {n: p.value.copy() for n, p in g.params.items() if not p.trainable}
    g.forward(feeds, train=True)
    for n, saved in stash.items():
        g.params[n].value[...] = saved
    g.backward(loss)
    checked = 0
    worst = 0.0
    for name, idxs in probes.items():
        fd = finite_difference_grad(g, feeds, loss, name, eps=eps,
                                    entries=idxs, train=True)
        ad = g.params[name].grad.reshape(-1)
        fdf = fd.reshape(-1)
        for i in idxs:
            rel = abs(ad[i] - fdf[i]) / max(1.0, abs(fdf[i]))
            worst = max(worst, rel)
            if rel >= tol:
                raise GradientCheckError(
                    f"{name}[{i}]: autodiff {ad[i]:.8g} vs central diff "
                    f"{fdf[i]:.8g} (rel {rel:.3g} >= {tol:g})")
            checked += 1
    return checked, worst


def check_graph(g, feeds, loss, param_names, rng, per_param=100,
                eps=EPS, tol=TOL):
    """Probe up to per_param sampled entries of each named parameter."""
    probes = {}
    for name in param_names:
        size = g.params[name].value.size
        n_probe = min(per_param, size)
        probes[name] = list(rng.choice(size, size=n_probe, replace=False))
    return check_entries(g, feeds, loss, probes, eps=eps, tol=tol)


def run_layer_suite(seed=0, per_param=100, eps=EPS, tol=TOL):
    """Run every layer-kind builder; returns {kind: (entries, max_rel_err)}."""
    results = {}
    for kind, builder in BUILDERS.items():
        rng = np.random.default_rng(seed + hash(kind) % 1000)
        g, feeds, loss, names = builder(rng)
        results[kind] = check_graph(g, feeds, loss, names, rng,
                                    per_param=per_param, eps=eps, tol=tol)
    return results


def _stratified_probes(g, rng, entries):
    """Spread probe entries round-robin across all trainable parameters."""
    names = [n for n, p in sorted(g.params.items()) if p.trainable]
    probes = {n: set() for n in names}
    placed = 0
    while placed < entries:
        progress = False
        for n in names:
            if placed >= entries:
                break
            size = g.params[n].value.size
            if len(probes[n]) < size:
                while True:
                    i = int(rng.integers(0, size))
                    if i not in probes[n]:
                        probes[n].add(i)
                        break
                placed += 1
                progress = True
        if not progress:
            break
    return {n: sorted(s) for n, s in probes.items() if s}


def check_full_net(kind, seed=0, entries=100, eps=EPS, tol=TOL):
    """Gradient-check an assembled network end to end through its loss.

    kind: "reconstruction" | "classifier".  Returns (entries, max_rel_err).
    """
    rng = np.random.default_rng(seed)
    if kind == "reconstruction":
        net = models.build_visuotactile_net(seed=seed)
        feeds = {"image": rng.uniform(-1, 1, size=(2,) + models.IMAGE_SHAPE),
                 "target": rng.uniform(-1, 1, size=(2,) + models.TACTILE_SHAPE)}
    elif kind == "classifier":
        net = models.build_classifier_net(seed=seed)
        feeds = {"image": rng.uniform(-1, 1, size=(2,) + models.IMAGE_SHAPE),
                 "tactile": rng.uniform(-1, 1, size=(2,) + models.TACTILE_SHAPE),
                 "labels": rng.integers(0, models.N_CLASSES, size=2)}
    else:
        raise ValueError(f"unknown network kind {kind!r}")
    probes = _stratified_probes(net.graph, rng, entries)
    return check_entries(net.graph, feeds, net.loss, probes, eps=eps, tol=tol)
