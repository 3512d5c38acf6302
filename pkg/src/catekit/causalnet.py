"""The diverter-gated outcome network and its training loop.

Architecture for image covariates (channels, H, W):

    input block:       conv 3x3 -> relu -> batchnorm -> maxpool 2x2
    shared block:      conv 3x3 -> relu -> batchnorm -> maxpool 2x2
                       -> flatten -> dense(diverter width)
    diverter:          split the shared representation into a control flow
                       and a treatment flow gated by the treatment scalar
    branch blocks:     dense(hidden) -> relu -> dense(1), one per flow
    output block:      elementwise sum of the two branch outputs

Odd spatial extents are cropped to the nearest pooling multiple before each
pool (the crop keeps the top-left corner). Flat covariates replace the
convolutional stack with a single dense layer to the diverter width.

Heterogeneous effects are read out as predict_outcome(x, 1) minus
predict_outcome(x, 0); training minimizes mean squared error of the
observed outcome.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import graph as G
from .diverter import add_diverter
from .tensor import CheckpointError, NonFiniteValueError, Tensor

CHECKPOINT_MAGIC = "catekit checkpoint v1"


class NonFiniteLossError(ArithmeticError):
    """Training produced a NaN/Inf loss; message carries epoch and batch."""


@dataclass
class CausalNetConfig:
    input_shape: tuple
    conv_channels: tuple = (8, 16)
    diverter_width: int = 32
    branch_hidden: int = 16
    seed: int = 0
    input_scale: float = 1.0

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.conv_channels = tuple(int(v) for v in self.conv_channels)
        if min(self.conv_channels + (self.diverter_width, self.branch_hidden)) < 1:
            raise ValueError("all widths must be positive")


@dataclass
class TrainConfig:
    optimizer: str = "sgd"
    learning_rate: float = 0.01
    batch_size: int = 64
    epochs: int = 30
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 2:
            raise ValueError("batch size must be at least 2 (batchnorm)")


@dataclass
class LossTrace:
    losses: list = field(default_factory=list)
    seconds: list = field(default_factory=list)


class SGD:
    def __init__(self, params, learning_rate):
        self.params = params
        self.lr = learning_rate

    def step(self, grads):
        for name in self.params:
            self.params[name] = Tensor(self.params[name].data - self.lr * grads[name].data)


class Adam:
    def __init__(self, params, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {k: np.zeros(v.shape) for k, v in params.items()}
        self.v = {k: np.zeros(v.shape) for k, v in params.items()}
        self.t = 0

    def step(self, grads):
        self.t += 1
        for name in self.params:
            g = grads[name].data
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            mhat = self.m[name] / (1 - self.beta1**self.t)
            vhat = self.v[name] / (1 - self.beta2**self.t)
            self.params[name] = Tensor(
                self.params[name].data - self.lr * mhat / (np.sqrt(vhat) + self.eps)
            )


def make_optimizer(kind, params, learning_rate):
    return (SGD if kind == "sgd" else Adam)(params, learning_rate)


def _glorot(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def _pool_even(g, src, h, w, window=2):
    h2, w2 = h - h % window, w - w % window
    if (h2, w2) != (h, w):
        src = g.crop2d(src, h2, w2)
    return g.maxpool2d(src, window), h2 // window, w2 // window


class CausalNet:
    """Built network plus config; see build_causalnet()."""

    def __init__(self, config):
        self.config = config
        g = G.NetworkGraph(inputs=("x", "t", "y"))
        rng = np.random.default_rng(config.seed)
        shape = config.input_shape
        if len(shape) == 3:
            ch_in, h, w = shape
            c1, c2 = config.conv_channels
            g.add_param("conv1.w", Tensor(_glorot(rng, (c1, ch_in, 3, 3), ch_in * 9, c1 * 9)))
            g.add_param("conv1.b", Tensor(np.zeros(c1)))
            g.add_param("bn1.gamma", Tensor(np.ones(c1)))
            g.add_param("bn1.beta", Tensor(np.zeros(c1)))
            g.add_param("conv2.w", Tensor(_glorot(rng, (c2, c1, 3, 3), c1 * 9, c2 * 9)))
            g.add_param("conv2.b", Tensor(np.zeros(c2)))
            g.add_param("bn2.gamma", Tensor(np.ones(c2)))
            g.add_param("bn2.beta", Tensor(np.zeros(c2)))
            if h < 3 or w < 3:
                raise G.ShapeMismatchError(f"input {shape} too small for 3x3 convolution")
            node = g.conv2d("x", "conv1.w", "conv1.b", name="conv1")
            node = g.batchnorm(g.relu(node), "bn1.gamma", "bn1.beta", name="bn1")
            node, h, w = _pool_even(g, node, h - 2, w - 2)
            if h < 3 or w < 3:
                raise G.ShapeMismatchError(f"input {shape} exhausted by pooling")
            node = g.conv2d(node, "conv2.w", "conv2.b", name="conv2")
            node = g.batchnorm(g.relu(node), "bn2.gamma", "bn2.beta", name="bn2")
            node, h, w = _pool_even(g, node, h - 2, w - 2)
            flat_dim = c2 * h * w
            node = g.flatten(node)
        elif len(shape) == 1:
            flat_dim = shape[0]
            node = "x"
        else:
            raise ValueError(f"input shape must be (channels, H, W) or (width,), got {shape}")
        width = config.diverter_width
        g.add_param("trunk.w", Tensor(_glorot(rng, (flat_dim, width), flat_dim, width)))
        g.add_param("trunk.b", Tensor(np.zeros(width)))
        f = g.dense(node, "trunk.w", "trunk.b", name="trunk")
        f_c, f_t = add_diverter(g, f, "t")
        hidden = config.branch_hidden
        branches = []
        for flow, branch in ((f_c, "control"), (f_t, "treat")):
            g.add_param(f"{branch}.w1", Tensor(_glorot(rng, (width, hidden), width, hidden)))
            g.add_param(f"{branch}.b1", Tensor(np.zeros(hidden)))
            g.add_param(f"{branch}.w2", Tensor(_glorot(rng, (hidden, 1), hidden, 1)))
            g.add_param(f"{branch}.b2", Tensor(np.zeros(1)))
            node = g.relu(g.dense(flow, f"{branch}.w1", f"{branch}.b1", name=f"{branch}.fc1"))
            branches.append(g.dense(node, f"{branch}.w2", f"{branch}.b2", name=f"{branch}.fc2"))
        self.output_node = g.add(branches[0], branches[1], name="outcome")
        self.loss_node = g.mse(self.output_node, "y", name="loss")
        g.set_output(self.output_node)
        self.graph = g

    # -- prediction --------------------------------------------------------

    def parameter_count(self):
        return sum(t.size for t in self.graph.params.values())

    def _as_batch(self, x):
        arr = np.asarray(x, dtype=np.float64)
        want = len(self.config.input_shape)
        if arr.ndim == want:
            return arr[None, ...], True
        if arr.ndim == want + 1:
            return arr, False
        raise G.ShapeMismatchError(
            f"covariates of shape {arr.shape} do not match input shape {self.config.input_shape}"
        )

    def predict_outcome(self, x, t):
        xb, single = self._as_batch(x)
        tb = np.broadcast_to(np.asarray(t, dtype=np.float64), (xb.shape[0],))
        out = G.forward(
            self.graph,
            {"x": xb * self.config.input_scale, "t": tb},
            to=self.output_node,
            training=False,
        ).data.reshape(-1)
        return float(out[0]) if single else out

    def predict_cate(self, x):
        treated = self.predict_outcome(x, 1.0)
        control = self.predict_outcome(x, 0.0)
        return treated - control


def build_causalnet(config):
    """Construct a seeded, untrained network for the given configuration."""
    return CausalNet(config)


def train(model, dataset, cfg):
    """Mini-batch training on observed outcomes; returns (model, LossTrace).

    Deterministic given the model's init seed, cfg.shuffle_seed, and the
    dataset. A trailing batch of size 1 is dropped (batchnorm needs 2).
    """
    x = np.asarray(dataset.covariates, dtype=np.float64) * model.config.input_scale
    t = np.asarray(dataset.treatment, dtype=np.float64)
    y = np.asarray(dataset.observed, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty training dataset")
    rng = np.random.default_rng(cfg.shuffle_seed)
    opt = make_optimizer(cfg.optimizer, model.graph.params, cfg.learning_rate)
    trace = LossTrace()
    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        perm = rng.permutation(n)
        total, seen = 0.0, 0
        for bidx, lo in enumerate(range(0, n, cfg.batch_size)):
            rows = perm[lo : lo + cfg.batch_size]
            if rows.size < 2:
                continue
            batch = {"x": x[rows], "t": t[rows], "y": y[rows]}
            try:
                loss = float(
                    G.forward(model.graph, batch, to=model.loss_node, training=True).data
                )
            except NonFiniteValueError as exc:
                raise NonFiniteLossError(
                    f"non-finite loss at epoch {epoch} batch {bidx}"
                ) from exc
            grads = G.backward(model.graph)
            opt.step(grads)
            total += loss * rows.size
            seen += rows.size
        trace.losses.append(total / seen)
        trace.seconds.append(time.perf_counter() - started)
    return model, trace


def predict_outcome(model, x, t):
    return model.predict_outcome(x, t)


def predict_cate(model, x):
    return model.predict_cate(x)


# -- checkpointing ----------------------------------------------------------


def _format_tensor(name, tensor):
    shape = ",".join(str(d) for d in tensor.shape) or "scalar"
    values = " ".join(float(v).hex() for v in tensor.data.reshape(-1))
    return f"{name} {shape}\n{values}\n"


def _parse_tensor(lines, pos, expect_name):
    if pos + 1 >= len(lines):
        raise CheckpointError(f"checkpoint truncated: missing tensor {expect_name!r}")
    head = lines[pos].split()
    if len(head) != 2 or head[0] != expect_name:
        raise CheckpointError(f"expected tensor {expect_name!r}, found {lines[pos]!r}")
    shape = () if head[1] == "scalar" else tuple(int(d) for d in head[1].split(","))
    values = [float.fromhex(v) for v in lines[pos + 1].split()]
    if len(values) != int(np.prod(shape, dtype=np.int64)):
        raise CheckpointError(f"tensor {expect_name!r}: value count does not match shape {shape}")
    return Tensor(np.array(values).reshape(shape)), pos + 2


def save_checkpoint(model, path):
    cfg = model.config
    parts = [
        CHECKPOINT_MAGIC,
        "kind = causalnet",
        f"input_shape = {','.join(str(d) for d in cfg.input_shape)}",
        f"conv_channels = {','.join(str(d) for d in cfg.conv_channels)}",
        f"diverter_width = {cfg.diverter_width}",
        f"branch_hidden = {cfg.branch_hidden}",
        f"seed = {cfg.seed}",
        f"input_scale = {float(cfg.input_scale).hex()}",
        f"params = {len(model.graph.params)}",
    ]
    body = "\n".join(parts) + "\n"
    for name, tensor in model.graph.params.items():
        body += _format_tensor(name, tensor)
    body += f"state = {len(model.graph.state)}\n"
    for name, tensor in model.graph.state.items():
        body += _format_tensor(name, tensor)
    body += "end\n"
    with open(path, "w") as fh:
        fh.write(body)


def _header_value(lines, pos, key):
    if pos >= len(lines) or not lines[pos].startswith(f"{key} = "):
        found = lines[pos] if pos < len(lines) else "<eof>"
        raise CheckpointError(f"expected header field {key!r}, found {found!r}")
    return lines[pos].split(" = ", 1)[1]


def load_checkpoint(path):
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"not a checkpoint file (bad magic): {path}")
    if _header_value(lines, 1, "kind") != "causalnet":
        raise CheckpointError("checkpoint kind is not causalnet")
    cfg = CausalNetConfig(
        input_shape=tuple(int(v) for v in _header_value(lines, 2, "input_shape").split(",")),
        conv_channels=tuple(int(v) for v in _header_value(lines, 3, "conv_channels").split(",")),
        diverter_width=int(_header_value(lines, 4, "diverter_width")),
        branch_hidden=int(_header_value(lines, 5, "branch_hidden")),
        seed=int(_header_value(lines, 6, "seed")),
        input_scale=float.fromhex(_header_value(lines, 7, "input_scale")),
    )
    model = CausalNet(cfg)
    n_params = int(_header_value(lines, 8, "params"))
    if n_params != len(model.graph.params):
        raise CheckpointError(
            f"parameter count mismatch: file has {n_params}, architecture has "
            f"{len(model.graph.params)}"
        )
    pos = 9
    for name in model.graph.params:
        tensor, pos = _parse_tensor(lines, pos, name)
        if tensor.shape != model.graph.params[name].shape:
            raise CheckpointError(
                f"parameter {name!r}: shape {tensor.shape} does not match "
                f"{model.graph.params[name].shape}"
            )
        model.graph.params[name] = tensor
    n_state = int(_header_value(lines, pos, "state"))
    if n_state != len(model.graph.state):
        raise CheckpointError("running-statistics count mismatch")
    pos += 1
    for name in model.graph.state:
        tensor, pos = _parse_tensor(lines, pos, name)
        model.graph.state[name] = tensor
    if pos >= len(lines) or lines[pos] != "end":
        raise CheckpointError("checkpoint truncated: missing end marker")
    return model
