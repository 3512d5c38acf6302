"""Finite-difference gradient verification suites.

Each check builds a small seeded graph ending in a scalar loss, resamples
until no ReLU pre-activation or pooling near-tie sits within 1e-3 of its
boundary, and compares reverse-mode gradients against central differences
at step 1e-5. All checks must come in at or under MAX_REL_ERR.
"""

import numpy as np

from . import graph as G
from .causalnet import CausalNet, CausalNetConfig
from .diverter import add_diverter
from .seeding import subseed
from .tensor import Tensor

MAX_REL_ERR = 1e-4
KINK_TOL = 1e-3
FD_STEP = 1e-5


def _resample_check(build, seed, tries=50):
    """Rebuild with fresh draws until clear of kinks, then grad-check."""
    for attempt in range(tries):
        g, inputs, loss = build(np.random.default_rng(subseed(seed, "draw", attempt)))
        if G.kink_margin(g, inputs, to=loss) > KINK_TOL:
            return G.grad_check(g, inputs, FD_STEP, to=loss)
    raise RuntimeError("could not sample inputs clear of kinks")


def _chain(g, rng, node, width, tail_dense=True):
    g.add_param("head.w", Tensor(rng.normal(size=(width, 1)) * 0.5))
    g.add_param("head.b", Tensor(rng.normal(size=1) * 0.1))
    out = g.dense(node, "head.w", "head.b", name="head")
    return g.mse(out, "y", name="loss")


def _check_dense(rng):
    g = G.NetworkGraph(inputs=("x", "y"))
    g.add_param("w", Tensor(rng.normal(size=(4, 5))))
    g.add_param("b", Tensor(rng.normal(size=5) * 0.3))
    node = g.dense("x", "w", "b")
    loss = _chain(g, rng, node, 5)
    return g, {"x": rng.normal(size=(3, 4)), "y": rng.normal(size=3)}, loss


def _check_conv2d(rng):
    g = G.NetworkGraph(inputs=("x", "y"))
    g.add_param("k", Tensor(rng.normal(size=(3, 2, 3, 3)) * 0.4))
    g.add_param("kb", Tensor(rng.normal(size=3) * 0.1))
    node = g.flatten(g.conv2d("x", "k", "kb"))
    loss = _chain(g, rng, node, 3 * 4 * 4)
    return g, {"x": rng.normal(size=(2, 2, 6, 6)), "y": rng.normal(size=2)}, loss


def _check_maxpool2d(rng):
    g = G.NetworkGraph(inputs=("y",))
    g.add_param("img", Tensor(rng.normal(size=(2, 1, 6, 6))))
    node = g.flatten(g.maxpool2d(g.param("img"), 2))
    loss = _chain(g, rng, node, 9)
    return g, {"y": rng.normal(size=2)}, loss


def _check_crop2d(rng):
    g = G.NetworkGraph(inputs=("y",))
    g.add_param("img", Tensor(rng.normal(size=(2, 2, 5, 5))))
    node = g.flatten(g.crop2d(g.param("img"), 4, 4))
    loss = _chain(g, rng, node, 2 * 16)
    return g, {"y": rng.normal(size=2)}, loss


def _check_batchnorm2d(rng):
    g = G.NetworkGraph(inputs=("x", "y"))
    g.add_param("gamma", Tensor(rng.normal(size=4) * 0.5 + 1.2))
    g.add_param("beta", Tensor(rng.normal(size=4) * 0.3))
    node = g.batchnorm("x", "gamma", "beta")
    loss = _chain(g, rng, node, 4)
    return g, {"x": rng.normal(size=(6, 4)), "y": rng.normal(size=6)}, loss


def _check_batchnorm4d(rng):
    g = G.NetworkGraph(inputs=("x", "y"))
    g.add_param("gamma", Tensor(rng.normal(size=2) * 0.5 + 1.2))
    g.add_param("beta", Tensor(rng.normal(size=2) * 0.3))
    node = g.flatten(g.batchnorm("x", "gamma", "beta"))
    loss = _chain(g, rng, node, 2 * 16)
    return g, {"x": rng.normal(size=(4, 2, 4, 4)), "y": rng.normal(size=4)}, loss


def _check_relu(rng):
    g = G.NetworkGraph(inputs=("y",))
    g.add_param("v", Tensor(rng.normal(size=(3, 4))))
    node = g.relu(g.param("v"))
    loss = _chain(g, rng, node, 4)
    return g, {"y": rng.normal(size=3)}, loss


def _check_sigmoid(rng):
    g = G.NetworkGraph(inputs=("y",))
    g.add_param("v", Tensor(rng.normal(size=(3, 4)) * 2.0))
    node = g.sigmoid(g.param("v"))
    loss = _chain(g, rng, node, 4)
    return g, {"y": rng.normal(size=3)}, loss


def _check_add(rng):
    g = G.NetworkGraph(inputs=("y",))
    g.add_param("a", Tensor(rng.normal(size=(3, 4))))
    g.add_param("b", Tensor(rng.normal(size=(3, 4))))
    node = g.add(g.param("a"), g.param("b"))
    loss = _chain(g, rng, node, 4)
    return g, {"y": rng.normal(size=3)}, loss


def _check_add_scalar(rng):
    g = G.NetworkGraph(inputs=("y",))
    g.add_param("f", Tensor(rng.normal(size=(3, 4))))
    g.add_param("t", Tensor(rng.normal(size=3)))
    node = g.add_scalar(g.param("f"), g.param("t"))
    loss = _chain(g, rng, node, 4)
    return g, {"y": rng.normal(size=3)}, loss


def _check_affine(rng):
    g = G.NetworkGraph(inputs=("y",))
    g.add_param("v", Tensor(rng.normal(size=(3, 4))))
    node = g.affine(g.param("v"), 1.7, -0.3)
    loss = _chain(g, rng, node, 4)
    return g, {"y": rng.normal(size=3)}, loss


def _check_flatten(rng):
    g = G.NetworkGraph(inputs=("y",))
    g.add_param("v", Tensor(rng.normal(size=(2, 3, 2, 2))))
    node = g.flatten(g.param("v"))
    loss = _chain(g, rng, node, 12)
    return g, {"y": rng.normal(size=2)}, loss


def _check_mse(rng):
    g = G.NetworkGraph(inputs=("y",))
    g.add_param("pred", Tensor(rng.normal(size=6)))
    loss = g.mse(g.param("pred"), "y", name="loss")
    return g, {"y": rng.normal(size=6)}, loss


def _check_diverter(rng):
    g = G.NetworkGraph(inputs=("y",))
    g.add_param("f", Tensor(rng.normal(size=(3, 4)) * 1.5))
    g.add_param("t", Tensor(rng.normal(size=3)))
    f_c, f_t = add_diverter(g, g.param("f", name="rep"), g.param("t", name="dose"))
    g.add_param("wc", Tensor(rng.normal(size=(4, 1))))
    g.add_param("wt", Tensor(rng.normal(size=(4, 1))))
    g.add_param("bc", Tensor(rng.normal(size=1) * 0.1))
    g.add_param("bt", Tensor(rng.normal(size=1) * 0.1))
    merged = g.add(g.dense(f_c, "wc", "bc"), g.dense(f_t, "wt", "bt"))
    loss = g.mse(merged, "y", name="loss")
    return g, {"y": rng.normal(size=3)}, loss


def _check_composed(rng):
    """A random chain of 2-4 dense blocks with random activations."""
    g = G.NetworkGraph(inputs=("x", "y"))
    width = int(rng.integers(3, 7))
    node = "x"
    prev = 5
    for i in range(int(rng.integers(2, 5))):
        g.add_param(f"w{i}", Tensor(rng.normal(size=(prev, width)) * 0.7))
        g.add_param(f"b{i}", Tensor(rng.normal(size=width) * 0.2))
        node = g.dense(node, f"w{i}", f"b{i}")
        kind = rng.integers(0, 3)
        if kind == 0:
            node = g.relu(node)
        elif kind == 1:
            node = g.sigmoid(node)
        else:
            g.add_param(f"g{i}", Tensor(rng.normal(size=width) * 0.3 + 1.0))
            g.add_param(f"be{i}", Tensor(rng.normal(size=width) * 0.2))
            node = g.batchnorm(node, f"g{i}", f"be{i}")
        prev = width
    loss = _chain(g, rng, node, prev)
    return g, {"x": rng.normal(size=(5, 5)), "y": rng.normal(size=5)}, loss


def _causalnet_builder(side):
    def build(rng):
        model = CausalNet(
            CausalNetConfig(
                input_shape=(1, side, side),
                seed=int(rng.integers(0, 2**31)),
                input_scale=1.0,
            )
        )
        inputs = {
            "x": rng.uniform(0.0, 1.0, size=(4, 1, side, side)),
            "t": rng.integers(0, 2, 4).astype(np.float64),
            "y": rng.normal(8.0, 4.0, size=4),
        }
        return model.graph, inputs, model.loss_node
    return build


PRIMITIVE_CHECKS = {
    "dense": _check_dense,
    "conv2d": _check_conv2d,
    "maxpool2d": _check_maxpool2d,
    "crop2d": _check_crop2d,
    "batchnorm-2d": _check_batchnorm2d,
    "batchnorm-4d": _check_batchnorm4d,
    "relu": _check_relu,
    "sigmoid": _check_sigmoid,
    "add": _check_add,
    "add-scalar": _check_add_scalar,
    "affine": _check_affine,
    "flatten": _check_flatten,
    "mse": _check_mse,
    "diverter": _check_diverter,
    "composed": _check_composed,
}


def run_suite(seeds=20, causalnet_seeds=20, full_resolution_seeds=1, base_seed=0, report=None):
    """Run all checks; returns {check name: max relative error over its seeds}.

    The many-seed network check runs the full architecture at a reduced
    10x10 input; full_resolution_seeds controls how many (slow) 32x32
    checks run on top of it.
    """
    results = {}
    for name, build in PRIMITIVE_CHECKS.items():
        worst = 0.0
        for s in range(seeds):
            worst = max(worst, _resample_check(build, subseed(base_seed, name, s)))
        results[name] = worst
        if report:
            report(name, worst)
    worst = 0.0
    for s in range(causalnet_seeds):
        worst = max(worst, _resample_check(_causalnet_builder(10), subseed(base_seed, "net", s)))
    results["causalnet-10x10"] = worst
    if report:
        report("causalnet-10x10", worst)
    if full_resolution_seeds:
        worst = 0.0
        for s in range(full_resolution_seeds):
            worst = max(
                worst, _resample_check(_causalnet_builder(32), subseed(base_seed, "net-full", s))
            )
        results["causalnet-32x32"] = worst
        if report:
            report("causalnet-32x32", worst)
    return results
