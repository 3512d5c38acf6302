"""Reverse-mode automatic differentiation over a fixed primitive set.

A NetworkGraph is an ordered list of primitive applications (dense, conv2d,
maxpool2d, batchnorm, relu, sigmoid, add, per-record scalar broadcast add,
constant affine, crop, flatten, parameter injection, mean-squared loss).
Nodes reference earlier nodes or named input placeholders, so the node list
is topological by construction. forward() evaluates the ancestors of a
target node and caches every intermediate value; backward() replays the
tape and returns exact gradients of the (scalar) target with respect to
every parameter.
"""

import numpy as np

from . import kernels
from .tensor import (
    GraphStateError,
    NonFiniteValueError,
    ShapeMismatchError,
    Tensor,
    as_array,
)

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class Node:
    __slots__ = ("op", "name", "inputs", "params", "attrs")

    def __init__(self, op, name, inputs=(), params=(), attrs=None):
        self.op = op
        self.name = name
        self.inputs = tuple(inputs)
        self.params = tuple(params)
        self.attrs = attrs or {}

    def __repr__(self):
        return f"Node({self.op!r}, {self.name!r})"


class Tape:
    """Cached forward state consumed by backward()."""

    __slots__ = ("target", "values", "aux", "order", "training")

    def __init__(self, target, values, aux, order, training):
        self.target = target
        self.values = values
        self.aux = aux
        self.order = order
        self.training = training


class NetworkGraph:
    """Ordered primitive applications plus named parameters and placeholders."""

    def __init__(self, inputs=()):
        self.inputs = tuple(inputs)
        self.nodes = []
        self.params = {}
        self.state = {}
        self.output = None
        self._index = {}
        self._tape = None

    # -- construction ------------------------------------------------------

    def add_param(self, name, value):
        self.params[name] = value if isinstance(value, Tensor) else Tensor(value)
        return name

    def _add(self, op, inputs, params=(), attrs=None, name=None):
        if name is None:
            name = f"{op}{len(self.nodes)}"
        if name in self._index or name in self.inputs:
            raise ValueError(f"duplicate node name {name!r}")
        for ref in inputs:
            if ref not in self._index and ref not in self.inputs:
                raise ValueError(f"node {name!r} references unknown input {ref!r}")
        for p in params:
            if p not in self.params:
                raise ValueError(f"node {name!r} references unknown parameter {p!r}")
        self._index[name] = len(self.nodes)
        self.nodes.append(Node(op, name, inputs, params, attrs))
        self.output = name
        return name

    def dense(self, src, weight, bias, name=None):
        return self._add("dense", (src,), (weight, bias), name=name)

    def conv2d(self, src, kernel, bias, name=None):
        return self._add("conv2d", (src,), (kernel, bias), name=name)

    def maxpool2d(self, src, window, name=None):
        return self._add("maxpool2d", (src,), attrs={"window": int(window)}, name=name)

    def crop2d(self, src, height, width, name=None):
        return self._add("crop2d", (src,), attrs={"height": height, "width": width}, name=name)

    def batchnorm(self, src, gamma, beta, name=None):
        name = self._add("batchnorm", (src,), (gamma, beta), name=name)
        shape = self.params[gamma].shape
        self.state[f"{name}.running_mean"] = Tensor(np.zeros(shape))
        self.state[f"{name}.running_var"] = Tensor(np.ones(shape))
        return name

    def relu(self, src, name=None):
        return self._add("relu", (src,), name=name)

    def sigmoid(self, src, name=None):
        return self._add("sigmoid", (src,), name=name)

    def add(self, a, b, name=None):
        return self._add("add", (a, b), name=name)

    def add_scalar(self, src, scalars, name=None):
        """Broadcast a per-record scalar across the width of a (batch, width) tensor."""
        return self._add("add_scalar", (src, scalars), name=name)

    def affine(self, src, scale, shift, name=None):
        return self._add("affine", (src,), attrs={"scale": float(scale), "shift": float(shift)}, name=name)

    def flatten(self, src, name=None):
        return self._add("flatten", (src,), name=name)

    def param(self, pname, name=None):
        return self._add("param", (), (pname,), name=name)

    def mse(self, pred, target, name=None):
        return self._add("mse", (pred, target), name=name)

    def set_output(self, name):
        if name not in self._index:
            raise ValueError(f"unknown node {name!r}")
        self.output = name

    # -- introspection -----------------------------------------------------

    def node(self, name):
        return self.nodes[self._index[name]]

    def ancestors(self, target):
        """Names of nodes needed to evaluate `target`, in graph order."""
        needed = set()
        stack = [target]
        while stack:
            ref = stack.pop()
            if ref in needed or ref in self.inputs:
                continue
            needed.add(ref)
            stack.extend(self.nodes[self._index[ref]].inputs)
        return [n.name for n in self.nodes if n.name in needed]

    def validate(self):
        """Check the structural invariants; raises ValueError on violation."""
        seen = set(self.inputs)
        for node in self.nodes:
            for ref in node.inputs:
                if ref not in seen:
                    raise ValueError(f"node {node.name!r} references later/unknown {ref!r}")
            for p in node.params:
                if p not in self.params:
                    raise ValueError(f"node {node.name!r} references missing parameter {p!r}")
            seen.add(node.name)
        if self.output is not None and self.output not in self._index:
            raise ValueError(f"output {self.output!r} is not a node")


def _per_feature(v, ndim):
    """Broadcast a per-feature (2D input) / per-channel (4D input) vector."""
    return v if ndim == 2 else v[None, :, None, None]


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _eval_node(graph, node, values, training):
    aux = None
    if node.op == "dense":
        x = values[node.inputs[0]]
        w = graph.params[node.params[0]].data
        b = graph.params[node.params[1]].data
        if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
            raise ShapeMismatchError(
                f"dense node {node.name!r}: input {x.shape} incompatible with "
                f"weight {w.shape}, bias {b.shape}"
            )
        out = x @ w + b
    elif node.op == "conv2d":
        x = values[node.inputs[0]]
        k = graph.params[node.params[0]].data
        b = graph.params[node.params[1]].data
        if (
            x.ndim != 4
            or k.ndim != 4
            or x.shape[1] != k.shape[1]
            or k.shape[2] > x.shape[2]
            or k.shape[3] > x.shape[3]
            or b.shape != (k.shape[0],)
        ):
            raise ShapeMismatchError(
                f"conv2d node {node.name!r}: input {x.shape} incompatible with "
                f"kernel {k.shape}, bias {b.shape}"
            )
        out = kernels.conv2d_forward(np.ascontiguousarray(x), k, b)
    elif node.op == "maxpool2d":
        x = values[node.inputs[0]]
        win = node.attrs["window"]
        if x.ndim != 4 or x.shape[2] % win or x.shape[3] % win:
            raise ShapeMismatchError(
                f"maxpool2d node {node.name!r}: extent {x.shape} not divisible by window {win}"
            )
        out, arg = kernels.maxpool_forward(np.ascontiguousarray(x), win)
        aux = arg
    elif node.op == "crop2d":
        x = values[node.inputs[0]]
        h, w = node.attrs["height"], node.attrs["width"]
        if x.ndim != 4 or h > x.shape[2] or w > x.shape[3]:
            raise ShapeMismatchError(f"crop2d node {node.name!r}: cannot crop {x.shape} to {h}x{w}")
        out = np.ascontiguousarray(x[:, :, :h, :w])
    elif node.op == "batchnorm":
        x = values[node.inputs[0]]
        gamma = graph.params[node.params[0]].data
        beta = graph.params[node.params[1]].data
        nfeat = x.shape[1]
        if x.ndim not in (2, 4) or gamma.shape != (nfeat,) or beta.shape != (nfeat,):
            raise ShapeMismatchError(
                f"batchnorm node {node.name!r}: input {x.shape} incompatible with "
                f"gamma {gamma.shape}"
            )
        axes = (0,) if x.ndim == 2 else (0, 2, 3)
        if training:
            if x.shape[0] < 2:
                raise ShapeMismatchError(
                    f"batchnorm node {node.name!r}: training mode needs batch >= 2"
                )
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            rm = graph.state[f"{node.name}.running_mean"].data
            rv = graph.state[f"{node.name}.running_var"].data
            graph.state[f"{node.name}.running_mean"] = Tensor(BN_MOMENTUM * rm + (1 - BN_MOMENTUM) * mean)
            graph.state[f"{node.name}.running_var"] = Tensor(BN_MOMENTUM * rv + (1 - BN_MOMENTUM) * var)
        else:
            mean = graph.state[f"{node.name}.running_mean"].data
            var = graph.state[f"{node.name}.running_var"].data
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - _per_feature(mean, x.ndim)) * _per_feature(inv, x.ndim)
        out = xhat * _per_feature(gamma, x.ndim) + _per_feature(beta, x.ndim)
        aux = (xhat, inv, axes)
    elif node.op == "relu":
        x = values[node.inputs[0]]
        out = np.maximum(x, 0.0)
        aux = x > 0
    elif node.op == "sigmoid":
        x = values[node.inputs[0]]
        out = _stable_sigmoid(x)
        aux = out
    elif node.op == "add":
        a, b = values[node.inputs[0]], values[node.inputs[1]]
        if a.shape != b.shape:
            raise ShapeMismatchError(f"add node {node.name!r}: {a.shape} vs {b.shape}")
        out = a + b
    elif node.op == "add_scalar":
        x, t = values[node.inputs[0]], values[node.inputs[1]]
        if x.ndim != 2 or t.shape != (x.shape[0],):
            raise ShapeMismatchError(
                f"add_scalar node {node.name!r}: input {x.shape} vs scalars {t.shape}"
            )
        out = x + t[:, None]
    elif node.op == "affine":
        x = values[node.inputs[0]]
        out = node.attrs["scale"] * x + node.attrs["shift"]
    elif node.op == "flatten":
        x = values[node.inputs[0]]
        out = np.ascontiguousarray(x).reshape(x.shape[0], -1)
        aux = x.shape
    elif node.op == "param":
        out = graph.params[node.params[0]].data
    elif node.op == "mse":
        p, t = values[node.inputs[0]], values[node.inputs[1]]
        pf = p.reshape(-1)
        if pf.shape != t.reshape(-1).shape:
            raise ShapeMismatchError(f"mse node {node.name!r}: {p.shape} vs {t.shape}")
        diff = pf - t.reshape(-1)
        out = np.asarray((diff @ diff) / diff.size)
        aux = diff
    else:
        raise ValueError(f"unknown primitive {node.op!r}")
    if not np.isfinite(out).all():
        raise NonFiniteValueError(f"non-finite value produced at node {node.name!r}")
    return out, aux


def forward(graph, inputs, *, to=None, training=False):
    """Evaluate the graph at the bound placeholder values; returns a Tensor.

    Side effect: the tape for the matching backward() call is stored on the
    graph, and batchnorm running statistics advance when training=True.
    """
    target = to or graph.output
    if target is None:
        raise GraphStateError("graph has no output node")
    order = graph.ancestors(target)
    values = {}
    needed_inputs = {
        ref for name in order for ref in graph.node(name).inputs if ref in graph.inputs
    }
    for slot in needed_inputs:
        if slot not in inputs:
            raise ValueError(f"placeholder {slot!r} is not bound")
        values[slot] = as_array(inputs[slot])
    aux = {}
    for name in order:
        node = graph.node(name)
        values[name], aux[name] = _eval_node(graph, node, values, training)
    graph._tape = Tape(target, values, aux, order, training)
    return Tensor(values[target])


def backward(graph):
    """Reverse-mode gradients of the last forward()'s scalar target.

    Returns a gradient map: one Tensor per graph parameter, zeros for
    parameters the target does not depend on.
    """
    tape = graph._tape
    if tape is None:
        raise GraphStateError("backward called before forward")
    out = tape.values[tape.target]
    if out.size != 1:
        raise GraphStateError(f"backward needs a scalar output, got shape {out.shape}")
    node_grads = {tape.target: np.ones_like(out)}
    param_grads = {name: np.zeros(t.shape) for name, t in graph.params.items()}

    def into(store, key, val):
        if key in store:
            store[key] = store[key] + val
        else:
            store[key] = val

    for name in reversed(tape.order):
        if name not in node_grads:
            continue
        node = graph.node(name)
        g = node_grads.pop(name)
        aux = tape.aux[name]
        if node.op == "dense":
            x = tape.values[node.inputs[0]]
            w = graph.params[node.params[0]].data
            into(node_grads, node.inputs[0], g @ w.T)
            param_grads[node.params[0]] += x.T @ g
            param_grads[node.params[1]] += g.sum(axis=0)
        elif node.op == "conv2d":
            x = tape.values[node.inputs[0]]
            k = graph.params[node.params[0]].data
            dx, dk, db = kernels.conv2d_backward(
                np.ascontiguousarray(x), k, np.ascontiguousarray(g)
            )
            into(node_grads, node.inputs[0], dx)
            param_grads[node.params[0]] += dk
            param_grads[node.params[1]] += db
        elif node.op == "maxpool2d":
            x = tape.values[node.inputs[0]]
            win = node.attrs["window"]
            dx = kernels.maxpool_backward(
                np.ascontiguousarray(g), aux, win, x.shape[2], x.shape[3]
            )
            into(node_grads, node.inputs[0], dx)
        elif node.op == "crop2d":
            x = tape.values[node.inputs[0]]
            dx = np.zeros_like(x)
            dx[:, :, : node.attrs["height"], : node.attrs["width"]] = g
            into(node_grads, node.inputs[0], dx)
        elif node.op == "batchnorm":
            xhat, inv, axes = aux
            gamma = _per_feature(graph.params[node.params[0]].data, xhat.ndim)
            inv_e = _per_feature(inv, xhat.ndim)
            param_grads[node.params[0]] += (g * xhat).sum(axis=axes)
            param_grads[node.params[1]] += g.sum(axis=axes)
            if tape.training:
                gx = g * gamma
                dx = inv_e * (
                    gx
                    - gx.mean(axis=axes, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=axes, keepdims=True)
                )
            else:
                dx = g * gamma * inv_e
            into(node_grads, node.inputs[0], dx)
        elif node.op == "relu":
            into(node_grads, node.inputs[0], g * aux)
        elif node.op == "sigmoid":
            into(node_grads, node.inputs[0], g * aux * (1.0 - aux))
        elif node.op == "add":
            into(node_grads, node.inputs[0], g)
            into(node_grads, node.inputs[1], g)
        elif node.op == "add_scalar":
            into(node_grads, node.inputs[0], g)
            if node.inputs[1] not in graph.inputs:
                into(node_grads, node.inputs[1], g.sum(axis=1))
        elif node.op == "affine":
            into(node_grads, node.inputs[0], node.attrs["scale"] * g)
        elif node.op == "flatten":
            into(node_grads, node.inputs[0], g.reshape(aux))
        elif node.op == "param":
            param_grads[node.params[0]] += g
        elif node.op == "mse":
            diff = aux
            p = tape.values[node.inputs[0]]
            dp = (2.0 / diff.size) * diff * g
            into(node_grads, node.inputs[0], dp.reshape(p.shape))
            if node.inputs[1] not in graph.inputs:
                t = tape.values[node.inputs[1]]
                into(node_grads, node.inputs[1], (-dp).reshape(t.shape))
    # gradients flowing into placeholders are discarded
    return {name: Tensor(arr) for name, arr in param_grads.items()}


def kink_margin(graph, inputs, *, to=None, training=True):
    """Smallest distance to a ReLU kink or pooling argmax tie in one forward pass.

    Used to resample inputs before finite-difference checks: margins below
    ~1e-3 make central differences unreliable at step 1e-5.
    """
    forward(graph, inputs, to=to, training=training)
    tape = graph._tape
    margin = np.inf
    for name in tape.order:
        node = graph.node(name)
        if node.op == "relu":
            pre = tape.values[node.inputs[0]]
            if pre.size:
                margin = min(margin, float(np.abs(pre).min()))
        elif node.op == "maxpool2d":
            x = tape.values[node.inputs[0]]
            win = node.attrs["window"]
            b, c, h, w = x.shape
            v = x.reshape(b, c, h // win, win, w // win, win)
            v = v.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // win, w // win, win * win)
            if v.shape[-1] > 1:
                # exact ties move in lockstep under perturbation (they come from
                # shared upstream values, e.g. relu-clipped zeros) and the
                # first-index tie-break is deterministic, so only a strictly
                # smaller runner-up close to the max is a hazard
                mx = v.max(axis=-1, keepdims=True)
                runner = np.where(v < mx, v, -np.inf).max(axis=-1)
                gaps = (mx[..., 0] - runner)[np.isfinite(runner)]
                if gaps.size:
                    margin = min(margin, float(gaps.min()))
    return margin


def grad_check(graph, inputs, step=1e-5, *, to=None, params=None, training=True):
    """Max relative error between analytic and central-difference gradients.

    relative error = |analytic - numeric| / max(|analytic|, |numeric|, 1e-8),
    maximized over every entry of every checked parameter.
    """
    forward(graph, inputs, to=to, training=training)
    grads = backward(graph)
    worst = 0.0
    for name in params if params is not None else sorted(graph.params):
        w = graph.params[name].data
        g = grads[name].data
        flat_w = w.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_w.size):
            orig = flat_w[i]
            flat_w[i] = orig + step
            hi = float(forward(graph, inputs, to=to, training=training).data)
            flat_w[i] = orig - step
            lo = float(forward(graph, inputs, to=to, training=training).data)
            flat_w[i] = orig
            numeric = (hi - lo) / (2.0 * step)
            analytic = flat_g[i]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            if err > worst:
                worst = err
    return worst
