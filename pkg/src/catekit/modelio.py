"""Checkpointing for baseline models, and a type-dispatched save/load.

Same header-plus-hex-values scheme as network checkpoints; trees are stored
as preorder node lists. Network checkpoints delegate to causalnet.
"""

import numpy as np

from . import causalnet as CN
from .baselines import ForestModel, LinearModel, MetaLearner, RegressionTree
from .tensor import CheckpointError

MAGIC = "catekit checkpoint v1"


def _ints(arr):
    return " ".join(str(int(v)) for v in arr)


def _hexes(arr):
    return " ".join(float(v).hex() for v in np.asarray(arr, dtype=np.float64).reshape(-1))


def _forest_block(model):
    lines = [
        f"forest seed = {model.seed}",
        f"forest mtry_rate = {float(model.mtry_rate).hex()}",
        f"forest min_leaf = {model.min_leaf}",
        f"forest trees = {len(model.trees)}",
    ]
    for i, tree in enumerate(model.trees):
        lines.append(f"tree {i} nodes = {tree.node_count}")
        lines.append(_ints(tree.feature))
        lines.append(_hexes(tree.threshold))
        lines.append(_ints(tree.left))
        lines.append(_ints(tree.right))
        lines.append(_hexes(tree.value))
    return lines


class _Reader:
    def __init__(self, lines):
        self.lines = lines
        self.pos = 0

    def take(self, prefix):
        if self.pos >= len(self.lines):
            raise CheckpointError(f"checkpoint truncated: expected {prefix!r}")
        line = self.lines[self.pos]
        self.pos += 1
        if prefix and not line.startswith(prefix):
            raise CheckpointError(f"expected {prefix!r}, found {line!r}")
        return line

    def value(self, prefix):
        return self.take(prefix).split(" = ", 1)[1]


def _read_forest(r):
    seed = int(r.value("forest seed"))
    mtry_rate = float.fromhex(r.value("forest mtry_rate"))
    min_leaf = int(r.value("forest min_leaf"))
    count = int(r.value("forest trees"))
    trees = []
    for i in range(count):
        nodes = int(r.value(f"tree {i} nodes"))
        feature = np.array([int(v) for v in r.take("").split()], dtype=np.int64)
        threshold = np.array([float.fromhex(v) for v in r.take("").split()])
        left = np.array([int(v) for v in r.take("").split()], dtype=np.int64)
        right = np.array([int(v) for v in r.take("").split()], dtype=np.int64)
        value = np.array([float.fromhex(v) for v in r.take("").split()])
        if not (feature.size == threshold.size == left.size == right.size == value.size == nodes):
            raise CheckpointError(f"tree {i}: node arrays do not match declared count {nodes}")
        trees.append(RegressionTree(feature, threshold, left, right, value))
    return ForestModel(trees=trees, seed=seed, mtry_rate=mtry_rate, min_leaf=min_leaf)


def save_model(model, path):
    """Write any fitted estimator (network, forest, meta-learner, linear)."""
    if isinstance(model, CN.CausalNet):
        CN.save_checkpoint(model, path)
        return
    if isinstance(model, LinearModel):
        lines = [
            MAGIC,
            "kind = linear",
            f"interaction = {int(model.interaction)}",
            f"n_features = {model.n_features}",
            f"rank = {model.rank}",
            f"minimal_norm = {int(model.minimal_norm)}",
            "coef",
            _hexes(model.coef),
        ]
    elif isinstance(model, MetaLearner):
        lines = [MAGIC, f"kind = meta-{model.kind.lower()}"]
        for forest in model.models:
            lines.extend(_forest_block(forest))
    elif isinstance(model, ForestModel):
        lines = [MAGIC, "kind = forest"]
        lines.extend(_forest_block(model))
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    lines.append("end")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path):
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
        rest = fh.read().splitlines()
    if first != MAGIC:
        raise CheckpointError(f"not a checkpoint file (bad magic): {path}")
    r = _Reader(rest)
    kind = r.value("kind")
    if kind == "causalnet":
        return CN.load_checkpoint(path)
    if kind == "linear":
        interaction = bool(int(r.value("interaction")))
        n_features = int(r.value("n_features"))
        rank = int(r.value("rank"))
        minimal_norm = bool(int(r.value("minimal_norm")))
        r.take("coef")
        coef = np.array([float.fromhex(v) for v in r.take("").split()])
        model = LinearModel(coef, n_features, interaction, rank, minimal_norm)
    elif kind in ("meta-s", "meta-t"):
        forests = [_read_forest(r)]
        if kind == "meta-t":
            forests.append(_read_forest(r))
        model = MetaLearner(kind=kind[-1].upper(), models=tuple(forests))
    elif kind == "forest":
        model = _read_forest(r)
    else:
        raise CheckpointError(f"unknown checkpoint kind {kind!r}")
    if r.take("") != "end":
        raise CheckpointError("checkpoint truncated: missing end marker")
    return model
