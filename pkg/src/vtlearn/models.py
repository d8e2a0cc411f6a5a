"""The two networks: visuo-tactile encoder-decoder and the classifier.

The reconstruction net maps a 200x200 edge image through four strided 2-D
convolutions, a 4-unit then 160-unit hidden pair, and four 3-D transposed
convolutions to a 3x4x4x90 normalized tactile tensor.  The classifier
consumes both modalities, joins 10-unit projections of each branch, mixes
them through two 4-unit tanh layers, and ends in a softmax over 15 classes.
Batch normalization sits on every layer except the final one of each net.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .engine import FLOAT, Graph
from .layers import (BatchNormOp, ConcatOp, ConvOp, DeconvOp, Conv2DSpec,
                     Conv3DSpec, Deconv3DSpec, LinearOp, MSELossOp, ReluOp,
                     ReshapeOp, SoftmaxCrossEntropyOp, SoftmaxOp, TanhOp,
                     ToChannelsFirstOp, ToChannelsLastOp)
from .optim import AdamState, adam_step

IMAGE_SHAPE = (1, 200, 200)
TACTILE_SHAPE = (3, 4, 4, 90)
N_CLASSES = 15
LATENT_WIDTH = 4

ENCODER_SPECS = (
    Conv2DSpec(1, 32, (8, 8), (2, 2), (0, 0), "relu"),
    Conv2DSpec(32, 32, (8, 8), (2, 2), (0, 0), "relu"),
    Conv2DSpec(32, 32, (4, 4), (2, 2), (0, 0), "relu"),
    Conv2DSpec(32, 32, (4, 4), (2, 2), (0, 0), "tanh"),
)

DECODER_SPECS = (
    Deconv3DSpec(1, 32, (1, 1, 3), (1, 1, 1), (0, 0, 0), "relu"),
    Deconv3DSpec(32, 32, (1, 1, 3), (1, 1, 2), (0, 0, 0), "relu"),
    Deconv3DSpec(32, 32, (2, 2, 4), (1, 1, 2), (0, 0, 3), "relu"),
    Deconv3DSpec(32, 3, (2, 2, 4), (1, 1, 2), (1, 1, 2), "tanh"),
)

DECODER_SEED_SHAPE = (4, 4, 10)   # 160 hidden units as 1 channel x (4,4,10)

TACTILE_BRANCH_SPECS = (
    Conv3DSpec(3, 32, (2, 2, 4), (1, 1, 2), (0, 0, 0), "relu"),
    Conv3DSpec(32, 32, (2, 2, 4), (1, 1, 2), (0, 0, 0), "relu"),
    Conv3DSpec(32, 32, (1, 1, 3), (1, 1, 2), (0, 0, 0), "relu"),
    Conv3DSpec(32, 31, (1, 1, 3), (1, 1, 1), (0, 0, 0), "tanh"),
)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    loss: str = "mse"
    alpha: float = 1e-3
    batch_size: int = 15
    epochs: int = 200
    seed: int = 0
    checkpoint_path: str | None = None


def _init_weight(rng, shape, fan_in, fan_out, activation):
    # He-uniform for relu layers, Xavier-uniform otherwise (tanh/none)
    if activation == "relu":
        limit = np.sqrt(6.0 / fan_in)
    else:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class _Builder:
    """Accumulates layers on a graph with seeded initialization."""

    def __init__(self, seed):
        self.g = Graph()
        self.rng = np.random.default_rng(seed)

    def conv(self, tag, node, spec, transposed=False):
        k = tuple(spec.filter)
        cin, cout = spec.in_channels, spec.out_channels
        nk = int(np.prod(k))
        w = _init_weight(self.rng, k + (cin, cout), cin * nk, cout * nk,
                         spec.activation)
        self.g.add_parameter(f"{tag}.w", w)
        self.g.add_parameter(f"{tag}.b", np.zeros(cout))
        op = DeconvOp(k, spec.stride, spec.padding) if transposed else \
            ConvOp(k, spec.stride, spec.padding)
        return self.g.add(op, (node,), (f"{tag}.w", f"{tag}.b"), name=tag)

    def linear(self, tag, node, n_in, n_out, activation):
        w = _init_weight(self.rng, (n_in, n_out), n_in, n_out, activation)
        self.g.add_parameter(f"{tag}.w", w)
        self.g.add_parameter(f"{tag}.b", np.zeros(n_out))
        return self.g.add(LinearOp(), (node,), (f"{tag}.w", f"{tag}.b"),
                          name=tag)

    def bn(self, tag, node, channels):
        names = (f"{tag}.bn.gamma", f"{tag}.bn.beta",
                 f"{tag}.bn.rmean", f"{tag}.bn.rvar")
        self.g.add_parameter(names[0], np.ones(channels))
        self.g.add_parameter(names[1], np.zeros(channels))
        self.g.add_parameter(names[2], np.zeros(channels), trainable=False)
        self.g.add_parameter(names[3], np.ones(channels), trainable=False)
        return self.g.add(BatchNormOp(), (node,), names, name=f"{tag}.bn")

    def act(self, node, activation):
        if activation == "relu":
            return self.g.add(ReluOp(), (node,))
        if activation == "tanh":
            return self.g.add(TanhOp(), (node,))
        return node

    def block(self, tag, node, spec, transposed=False, norm=True):
        """conv/deconv -> batchnorm (unless last layer) -> activation."""
        node = self.conv(tag, node, spec, transposed)
        if norm:
            node = self.bn(tag, node, spec.out_channels)
        return self.act(node, spec.activation)

    def dense(self, tag, node, n_in, n_out, activation, norm=True):
        node = self.linear(tag, node, n_in, n_out, activation)
        if norm:
            node = self.bn(tag, node, n_out)
        return self.act(node, activation)


class VisuoTactileNet:
    """Encoder-decoder graph plus the node ids needed to use it."""

    def __init__(self, seed=0):
        b = _Builder(seed)
        g = b.g
        self.image = g.add_input("image", IMAGE_SHAPE)
        self.target = g.add_input("target", TACTILE_SHAPE)
        h = g.add(ToChannelsLastOp(), (self.image,))
        self.encoder_nodes = []
        for i, spec in enumerate(ENCODER_SPECS, 1):
            h = b.block(f"enc{i}", h, spec)
            self.encoder_nodes.append(h)
        feat = int(np.prod(g.out_shape(h)))   # 9*9*32 = 2592
        h = g.add(ReshapeOp((feat,)), (h,))
        h = b.dense("hid1", h, feat, LATENT_WIDTH, "relu")
        self.latent = h
        h = b.dense("hid2", h, LATENT_WIDTH, 160, "relu")
        h = g.add(ReshapeOp(DECODER_SEED_SHAPE + (1,)), (h,))
        for i, spec in enumerate(DECODER_SPECS, 1):
            last = i == len(DECODER_SPECS)
            h = b.block(f"dec{i}", h, spec, transposed=True, norm=not last)
        self.output = g.add(ToChannelsFirstOp(), (h,))
        self.loss = g.add(MSELossOp(), (self.output, self.target))
        self.graph = g
        self.loss_inputs = ("image", "target")
        self.eval_inputs = ("image",)

    @property
    def param_count(self):
        return sum(p.value.size for p in self.graph.params.values()
                   if p.trainable)


class ClassifierNet:
    """Two-branch classification graph over image and tactile inputs."""

    def __init__(self, seed=0):
        b = _Builder(seed)
        g = b.g
        self.image = g.add_input("image", IMAGE_SHAPE)
        self.tactile = g.add_input("tactile", TACTILE_SHAPE)
        self.labels = g.add_input("labels", (), dtype=np.int64)
        h = g.add(ToChannelsLastOp(), (self.image,))
        for i, spec in enumerate(ENCODER_SPECS, 1):
            h = b.block(f"img{i}", h, spec)
        img_feat = int(np.prod(g.out_shape(h)))
        h = g.add(ReshapeOp((img_feat,)), (h,))
        h = b.dense("imgproj", h, img_feat, 10, "tanh")
        img = h
        t = g.add(ToChannelsLastOp(), (self.tactile,))
        for i, spec in enumerate(TACTILE_BRANCH_SPECS, 1):
            t = b.block(f"tac{i}", t, spec)
        tac_feat = int(np.prod(g.out_shape(t)))   # 31*2*2*8 = 992
        t = g.add(ReshapeOp((tac_feat,)), (t,))
        t = b.dense("tacproj", t, tac_feat, 10, "tanh")
        h = g.add(ConcatOp(), (img, t))
        h = b.dense("mix1", h, 20, LATENT_WIDTH, "tanh")
        h = b.dense("mix2", h, LATENT_WIDTH, LATENT_WIDTH, "tanh")
        self.latent = h
        self.logits = b.linear("out", h, LATENT_WIDTH, N_CLASSES, "none")
        self.probs = g.add(SoftmaxOp(), (self.logits,))
        self.loss = g.add(SoftmaxCrossEntropyOp(), (self.logits, self.labels))
        self.graph = g
        self.loss_inputs = ("image", "tactile", "labels")
        self.eval_inputs = ("image", "tactile")

    @property
    def param_count(self):
        return sum(p.value.size for p in self.graph.params.values()
                   if p.trainable)


def build_visuotactile_net(seed=0):
    return VisuoTactileNet(seed)


def build_classifier_net(seed=0):
    return ClassifierNet(seed)


# ---- training --------------------------------------------------------------

EVAL_BATCH = 32


def _batch(feeds, idx):
    return {k: v[idx] for k, v in feeds.items()}


def evaluate_loss(net, feeds, batch_size=EVAL_BATCH):
    """Dataset loss in eval mode (running statistics, no updates)."""
    n = len(next(iter(feeds.values())))
    total = 0.0
    for lo in range(0, n, batch_size):
        part = _batch(feeds, slice(lo, lo + batch_size))
        m = len(next(iter(part.values())))
        vals = net.graph.forward(part, train=False, upto=net.loss)
        total += float(vals[net.loss]) * m
    return total / n


def train(net, data, cfg: TrainConfig, val_data=None):
    """Seeded epoch loop: shuffle, batch, forward, backward, adam_step.

    data / val_data: {feed name: (N, ...) array}.  Records one history row
    (epoch, train_loss, val_loss) per epoch; val_loss is NaN without a
    validation set.  Saves the best-validation checkpoint (or the final
    state when no validation set is given) to cfg.checkpoint_path.
    Raises TrainingDiverged if any batch loss becomes non-finite.
    """
    g = net.graph
    rng = np.random.default_rng(cfg.seed)
    state = AdamState(alpha=cfg.alpha)
    n = len(next(iter(data.values())))
    if n == 0:
        raise ValueError("empty dataset")
    params = list(g.params.values())
    history = []
    best_val = np.inf
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        seen = 0
        acc = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            if len(idx) < 2 and n > 1:
                continue    # batch of one cannot be normalized in train mode
            feeds = _batch(data, idx)
            vals = g.forward(feeds, train=True, upto=net.loss)
            loss = float(vals[net.loss])
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}: {loss}")
            g.zero_grad()
            g.backward(net.loss)
            adam_step(params, state)
            acc += loss * len(idx)
            seen += len(idx)
        train_loss = acc / max(seen, 1)
        val_loss = float("nan")
        if val_data is not None:
            val_loss = evaluate_loss(net, val_data)
            if cfg.checkpoint_path and val_loss < best_val:
                best_val = val_loss
                checkpoint.save_tensors(cfg.checkpoint_path, g.state_dict())
        history.append((epoch, train_loss, val_loss))
    if cfg.checkpoint_path and val_data is None:
        checkpoint.save_tensors(cfg.checkpoint_path, g.state_dict())
    return history


def write_loss_csv(history, path):
    with open(path, "w") as f:
        f.write("epoch,train_loss,val_loss\n")
        for epoch, tr, va in history:
            f.write(f"{epoch},{tr!r},{va!r}\n")


# ---- inference --------------------------------------------------------------

def _as_batch(arr, shape):
    a = np.asarray(arr, dtype=FLOAT)
    if a.shape == shape:
        return a[None], True
    if a.shape[1:] == shape:
        return a, False
    raise ValueError(f"expected shape {shape} (optionally batched), got {a.shape}")


def infer_latent(net, edge_image):
    """The 4-unit hidden activation for one edge image (or a batch)."""
    x, single = _as_batch(edge_image, IMAGE_SHAPE)
    vals = net.graph.forward({"image": x}, train=False, upto=net.latent)
    z = vals[net.latent]
    return z[0] if single else z


def predict_tactile(net, edge_image):
    """Predicted normalized tactile tensor(s), shape 3x4x4x90 in [-1,1]."""
    x, single = _as_batch(edge_image, IMAGE_SHAPE)
    vals = net.graph.forward({"image": x}, train=False, upto=net.output)
    y = vals[net.output]
    return y[0] if single else y


def classifier_latent(net, image, tactile):
    x, single = _as_batch(image, IMAGE_SHAPE)
    t, _ = _as_batch(tactile, TACTILE_SHAPE)
    vals = net.graph.forward({"image": x, "tactile": t}, train=False,
                             upto=net.latent)
    z = vals[net.latent]
    return z[0] if single else z


def classifier_accuracy(net, data, batch_size=EVAL_BATCH):
    """Eval-mode argmax accuracy of the classifier on a labeled dataset."""
    n = len(data["labels"])
    hits = 0
    for lo in range(0, n, batch_size):
        part = _batch(data, slice(lo, lo + batch_size))
        vals = net.graph.forward({k: part[k] for k in net.eval_inputs},
                                 train=False, upto=net.logits)
        pred = np.argmax(vals[net.logits], axis=1)
        hits += int(np.sum(pred == part["labels"]))
    return hits / n


def mean_predictor_mse(train_targets, eval_targets):
    """MSE of always predicting the training-set mean tensor."""
    mean = train_targets.mean(axis=0)
    d = eval_targets - mean
    return float(np.mean(d * d))
