"""Static computation graph with reverse-mode differentiation.

All value tensors are C-contiguous float64 numpy arrays (integer arrays are
allowed only for label inputs).  A graph is built once, shape-checked at build
time, and then run many times.  Forward evaluation walks nodes in insertion
order, which is a topological order by construction; backward walks the same
list in reverse and accumulates gradients into parameter accumulators.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FLOAT = np.float64


class GraphError(Exception):
    """Structural misuse of a graph (bad wiring, missing feed, bad loss)."""


class ShapeError(GraphError):
    """A tensor shape does not match the declared node contract."""


@dataclass
class Parameter:
    """A named leaf tensor with a gradient accumulator.

    Non-trainable parameters (running statistics) participate in forward
    passes but are skipped by optimizers and receive no gradient.
    """

    name: str
    value: np.ndarray
    trainable: bool = True
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=FLOAT)
        self.grad = np.zeros_like(self.value)


class Op:
    """One graph operation: shape inference plus forward/backward kernels."""

    def infer_shape(self, in_shapes, param_shapes):
        """Return the per-sample output shape, or raise ShapeError."""
        raise NotImplementedError

    def forward(self, xs, params, train):
        """Return (output, ctx) where ctx holds whatever backward needs."""
        raise NotImplementedError

    def backward(self, gy, xs, params, y, ctx, train, needs):
        """Return (grads_wrt_inputs, grads_wrt_params); entries may be None.

        needs[i] is False when input i leads to no trainable parameter, so
        its gradient would be discarded; ops may skip computing it.
        """
        raise NotImplementedError


@dataclass
class Node:
    nid: int
    name: str
    op: Op
    input_ids: tuple
    param_names: tuple
    out_shape: tuple      # per-sample shape; () means scalar (no batch axis)
    batched: bool = True  # scalars (losses) carry no leading batch axis


class InputOp(Op):
    def __init__(self, shape, dtype=FLOAT):
        self.shape = tuple(int(s) for s in shape)
        self.dtype = dtype

    def infer_shape(self, in_shapes, param_shapes):
        return self.shape

    def forward(self, xs, params, train):
        raise GraphError("input nodes are fed, never evaluated")


class Graph:
    """Container for nodes and parameters of one differentiable network."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Parameter] = {}
        self._values = None
        self._ctxs = None
        self._train_mode = False
        # _carries[nid]: node nid has a trainable parameter somewhere at or
        # below it, so its input gradients are worth computing.  Relies on
        # Parameter.trainable being fixed at construction time.
        self._carries: list[bool] = []

    # ---- construction -------------------------------------------------

    def add_parameter(self, name, value, trainable=True) -> Parameter:
        if name in self.params:
            raise GraphError(f"duplicate parameter name: {name!r}")
        p = Parameter(name, value, trainable)
        self.params[name] = p
        return p

    def add_input(self, name, shape, dtype=FLOAT) -> int:
        return self.add(InputOp(shape, dtype), inputs=(), name=name)

    def add(self, op, inputs=(), params=(), name=None) -> int:
        """Append a node; validates wiring and infers its output shape."""
        nid = len(self.nodes)
        input_ids = tuple(int(i) for i in inputs)
        for i in input_ids:
            if not 0 <= i < nid:
                raise GraphError(
                    f"node {nid} wires input {i}, valid ids are 0..{nid - 1}")
        param_names = tuple(params)
        for pname in param_names:
            if pname not in self.params:
                raise GraphError(f"unknown parameter: {pname!r}")
        in_shapes = [self.nodes[i].out_shape for i in input_ids]
        param_shapes = [self.params[p].value.shape for p in param_names]
        out_shape = op.infer_shape(in_shapes, param_shapes)
        batched = out_shape is not None
        node = Node(nid, name or f"node{nid}", op, input_ids, param_names,
                    () if out_shape is None else tuple(out_shape), batched)
        self.nodes.append(node)
        self._carries.append(
            any(self.params[p].trainable for p in param_names)
            or any(self._carries[i] for i in input_ids))
        return nid

    def out_shape(self, nid) -> tuple:
        return self.nodes[nid].out_shape

    # ---- execution ----------------------------------------------------

    def forward(self, feeds, train=False, upto=None):
        """Evaluate every node (or the ancestors of upto) and return {nid: value}.

        feeds maps input-node names to batched arrays.  All fed arrays must
        agree on the leading batch dimension and match declared shapes.
        With upto set, only nodes the target depends on run, so feeds for
        unrelated inputs may be omitted; skipped nodes report None.
        """
        last = len(self.nodes) - 1 if upto is None else int(upto)
        needed = [True] * (last + 1)
        if upto is not None:
            needed = [False] * last + [True]
            for nid in range(last, -1, -1):
                if needed[nid]:
                    for i in self.nodes[nid].input_ids:
                        needed[i] = True
        values = [None] * (last + 1)
        ctxs = [None] * (last + 1)
        batch = None
        for node in self.nodes[:last + 1]:
            if not needed[node.nid]:
                continue
            if isinstance(node.op, InputOp):
                if node.name not in feeds:
                    raise GraphError(f"missing feed for input {node.name!r}")
                v = np.ascontiguousarray(feeds[node.name], dtype=node.op.dtype)
                if v.ndim != len(node.op.shape) + 1 or v.shape[1:] != node.op.shape:
                    raise ShapeError(
                        f"feed {node.name!r} has shape {v.shape}, expected "
                        f"(batch, {', '.join(map(str, node.op.shape))})")
                if batch is None:
                    batch = v.shape[0]
                elif v.shape[0] != batch:
                    raise ShapeError(
                        f"feed {node.name!r} batch {v.shape[0]} != {batch}")
                values[node.nid] = v
            else:
                xs = [values[i] for i in node.input_ids]
                ps = [self.params[p] for p in node.param_names]
                y, ctx = node.op.forward(xs, ps, train)
                expect = node.out_shape if not node.batched else (batch,) + node.out_shape
                if y.shape != expect:
                    raise ShapeError(
                        f"node {node.name!r} produced {y.shape}, "
                        f"declared {expect}")
                values[node.nid] = y
                ctxs[node.nid] = ctx
        self._values = values
        self._ctxs = ctxs
        self._train_mode = train
        return {i: v for i, v in enumerate(values)}

    def backward(self, loss_id) -> dict[str, np.ndarray]:
        """Accumulate d(loss)/d(param) into each parameter's grad buffer.

        Requires a forward pass first; the loss node must be scalar.  Grad
        accumulators are not cleared here, so repeated calls sum gradients;
        call zero_grad() between steps.  Returns {name: grad} for trainable
        parameters reached by the sweep.
        """
        if self._values is None or loss_id >= len(self._values):
            raise GraphError("backward requires a forward pass over the loss node")
        loss_val = self._values[loss_id]
        if loss_val is None or loss_val.shape != ():
            raise GraphError("loss node must evaluate to a scalar")

        # Restrict the sweep to ancestors of the loss node.
        needed = [False] * (loss_id + 1)
        needed[loss_id] = True
        for nid in range(loss_id, -1, -1):
            if needed[nid]:
                for i in self.nodes[nid].input_ids:
                    needed[i] = True

        gvals = [None] * (loss_id + 1)
        gvals[loss_id] = np.ones((), dtype=FLOAT)
        touched = {}
        for nid in range(loss_id, -1, -1):
            node = self.nodes[nid]
            if not needed[nid] or gvals[nid] is None:
                continue
            if isinstance(node.op, InputOp):
                continue
            if not self._carries[nid]:
                continue  # nothing trainable at or below; grads would be dropped
            xs = [self._values[i] for i in node.input_ids]
            ps = [self.params[p] for p in node.param_names]
            gxs, gps = node.op.backward(
                gvals[nid], xs, ps, self._values[nid], self._ctxs[nid],
                self._train_mode,
                tuple(self._carries[i] for i in node.input_ids))
            for i, gx in zip(node.input_ids, gxs):
                if gx is None:
                    continue
                if gvals[i] is None:
                    gvals[i] = gx
                else:
                    gvals[i] = gvals[i] + gx
            for p, gp in zip(ps, gps):
                if gp is None:
                    continue
                p.grad += gp
                if p.trainable:
                    touched[p.name] = p.grad
        return touched

    def zero_grad(self):
        for p in self.params.values():
            p.grad[...] = 0.0

    # ---- parameter state ----------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.params.items()}

    def load_state_dict(self, state):
        for name, p in self.params.items():
            if name not in state:
                raise GraphError(f"state is missing parameter {name!r}")
            v = np.asarray(state[name], dtype=FLOAT)
            if v.shape != p.value.shape:
                raise ShapeError(
                    f"parameter {name!r}: stored shape {v.shape} != {p.value.shape}")
            p.value[...] = v


def finite_difference_grad(graph, feeds, loss_id, param_name, eps=1e-5,
                           entries=None, train=False):
    """Central-difference estimate of d(loss)/d(param).

    entries: optional iterable of flat indices to probe; all entries when
    None.  Returns a full-shape array with unprobed entries zero.  Parameter
    values and non-trainable state (running statistics) are restored after
    every probe so the estimate does not perturb the graph.
    """
    p = graph.params[param_name]
    flat = p.value.reshape(-1)
    idxs = range(flat.size) if entries is None else list(entries)
    out = np.zeros_like(flat)
    stash = {name: q.value.copy() for name, q in graph.params.items()
             if not q.trainable}

    def run():
        vals = graph.forward(feeds, train=train, upto=loss_id)
        for name, saved in stash.items():
            graph.params[name].value[...] = saved
        return float(vals[loss_id])

    for i in idxs:
        keep = flat[i]
        flat[i] = keep + eps
        hi = run()
        flat[i] = keep - eps
        lo = run()
        flat[i] = keep
        out[i] = (hi - lo) / (2.0 * eps)
    return out.reshape(p.value.shape)
