"""Exploratory toy-network studies on the nine-dimensional generators.

Three small outcome-regression networks (inputs are the nine covariates plus
the treatment indicator):

    linear       one dense layer, no activation
    sigmoid1     dense -> sigmoid -> dense
    sigmoid2-bn  dense -> sigmoid -> batchnorm -> dense -> sigmoid -> dense

trained with Adam on a stream of freshly generated mini-batches of 200.
Inputs and targets are standardized with moments from a seeded reference
draw (the raw outcome scale of the high-variance polynomial generator is in
the tens of thousands, far beyond what Adam-sized steps can traverse);
reported losses are mapped back to original units. Each study also fits
plain adjusted regression on a 200-record sample as the linear reference.
"""

from dataclasses import dataclass, field

import numpy as np

from . import graph as G
from .causalnet import Adam
from .datagen import gen_appendix
from .seeding import subseed
from .tensor import Tensor

BATCH = 200
IN_DIM = 10  # nine covariates plus the treatment indicator


@dataclass
class StudyResult:
    name: str
    net: str
    generator: str
    sigma_x: float
    eval_iterations: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)  # raw units, per eval window
    test_loss: list = field(default_factory=list)
    baseline_test_loss: float = float("nan")

    @property
    def final_train_loss(self):
        return self.train_loss[-1]

    @property
    def final_test_loss(self):
        return self.test_loss[-1]


def build_toy_net(kind, seed, hidden=(32, 16)):
    g = G.NetworkGraph(inputs=("x", "y"))
    rng = np.random.default_rng(seed)

    def dense(src, ins, outs, tag):
        bound = np.sqrt(6.0 / (ins + outs))
        g.add_param(f"{tag}.w", Tensor(rng.uniform(-bound, bound, (ins, outs))))
        g.add_param(f"{tag}.b", Tensor(np.zeros(outs)))
        return g.dense(src, f"{tag}.w", f"{tag}.b", name=tag)

    if kind == "linear":
        out = dense("x", IN_DIM, 1, "fc")
    elif kind == "sigmoid1":
        h = g.sigmoid(dense("x", IN_DIM, hidden[0], "fc1"))
        out = dense(h, hidden[0], 1, "fc2")
    elif kind == "sigmoid2-bn":
        h = g.sigmoid(dense("x", IN_DIM, hidden[0], "fc1"))
        g.add_param("bn.gamma", Tensor(np.ones(hidden[0])))
        g.add_param("bn.beta", Tensor(np.zeros(hidden[0])))
        h = g.batchnorm(h, "bn.gamma", "bn.beta", name="bn")
        h = g.sigmoid(dense(h, hidden[0], hidden[1], "fc2"))
        out = dense(h, hidden[1], 1, "fc3")
    else:
        raise ValueError(f"unknown toy network kind {kind!r}")
    loss = g.mse(out, "y")
    g.set_output(out)
    return g, out, loss


def _draw(generator, sigma_x, n, seed):
    ds = gen_appendix(n, generator, sigma_x, seed)
    features = np.column_stack([ds.covariates, ds.treatment])
    return features, ds.observed


class Standardizer:
    def __init__(self, generator, sigma_x, seed, n=4000):
        x, y = _draw(generator, sigma_x, n, subseed(seed, "reference-moments"))
        self.x_mean = x.mean(axis=0)
        self.x_sd = np.maximum(x.std(axis=0), 1e-12)
        self.y_mean = float(y.mean())
        self.y_sd = max(float(y.std()), 1e-12)

    def x(self, x):
        return (x - self.x_mean) / self.x_sd

    def y(self, y):
        return (y - self.y_mean) / self.y_sd

    def loss_to_raw(self, std_loss):
        return std_loss * self.y_sd**2


def run_study(name, net_kind, generator, sigma_x, seed, iterations=6000, lr=0.005,
              eval_every=500, init_seed=None):
    """Train one toy network on a fresh-minibatch stream; losses in raw units."""
    std = Standardizer(generator, sigma_x, seed)
    net, out_node, loss_node = build_toy_net(
        net_kind, subseed(seed, "init") if init_seed is None else init_seed
    )
    opt = Adam(net.params, lr)
    x_test, y_test = _draw(generator, sigma_x, 4000, subseed(seed, "test-data"))
    xz_test = std.x(x_test)
    rng = np.random.default_rng(subseed(seed, "stream"))
    result = StudyResult(name=name, net=net_kind, generator=generator, sigma_x=sigma_x)
    window = []
    for it in range(1, iterations + 1):
        x, y = _draw(generator, sigma_x, BATCH, int(rng.integers(0, 2**63 - 1)))
        batch = {"x": std.x(x), "y": std.y(y)}
        loss = float(G.forward(net, batch, to=loss_node, training=True).data)
        opt.step(G.backward(net))
        window.append(std.loss_to_raw(loss))
        if it % eval_every == 0:
            pred_std = G.forward(net, {"x": xz_test}, to=out_node, training=False).data.reshape(-1)
            pred = pred_std * std.y_sd + std.y_mean
            result.eval_iterations.append(it)
            result.train_loss.append(float(np.mean(window)))
            result.test_loss.append(float(np.mean((pred - y_test) ** 2)))
            window = []
    result.baseline_test_loss = regression_reference(generator, sigma_x, seed, x_test, y_test)
    return result


def regression_reference(generator, sigma_x, seed, x_test, y_test):
    """Outcome-regression test MSE of plain adjusted regression on 200 records."""
    x, y = _draw(generator, sigma_x, BATCH, subseed(seed, "regression-sample"))
    design = np.column_stack([np.ones(len(y)), x])
    coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    pred = np.column_stack([np.ones(len(y_test)), x_test]) @ coef
    return float(np.mean((pred - y_test) ** 2))


def run_all_studies(seed=0, iterations=6000):
    """The full battery; returns a list of StudyResult."""
    results = [
        run_study("linear-net-on-linear-data", "linear", "linear", 10.0, subseed(seed, "A"),
                  iterations=iterations),
    ]
    for idx in range(2):
        results.append(
            run_study(
                f"sigmoid1-init{idx}", "sigmoid1", "linear", 1.0, subseed(seed, "B"),
                iterations=iterations, init_seed=subseed(seed, "B-init", idx),
            )
        )
    results.append(
        run_study("sigmoid2-bn-linear", "sigmoid2-bn", "linear", 1.0, subseed(seed, "C1"),
                  iterations=iterations)
    )
    results.append(
        run_study("sigmoid2-bn-poly-small", "sigmoid2-bn", "polynomial", 1.0, subseed(seed, "C2"),
                  iterations=iterations)
    )
    results.append(
        run_study("sigmoid2-bn-poly-large", "sigmoid2-bn", "polynomial", 10.0, subseed(seed, "C3"),
                  iterations=iterations)
    )
    return results
