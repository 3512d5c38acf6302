"""Comparison estimators: adjusted regression and forest meta-learners.

Adjusted regression fits least squares of the observed outcome on
[1, T, X] (optionally plus T*X interactions); rank-deficient designs fall
back to the minimal-norm solution. The regression forest grows greedy
variance-reduction trees on bootstrap resamples with per-split feature
subsampling; S- and T-learners stack it into effect estimators.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .seeding import subseed


@dataclass
class LinearModel:
    coef: np.ndarray
    n_features: int
    interaction: bool
    rank: int
    minimal_norm: bool

    def design(self, x, t):
        cols = [np.ones(x.shape[0]), t, x]
        if self.interaction:
            cols.append(t[:, None] * x)
        return np.column_stack(cols)

    def predict_outcome(self, x, t):
        return self.design(np.atleast_2d(x), np.broadcast_to(t, (np.atleast_2d(x).shape[0],))) @ self.coef


def fit_adjusted(dataset, interaction=False):
    """Least squares of observed outcome on treatment and covariates.

    Rank-deficient designs (collinear columns, more columns than records)
    get the minimal-norm solution and set the minimal_norm flag.
    """
    x = dataset.features()
    t = np.asarray(dataset.treatment, dtype=np.float64)
    y = np.asarray(dataset.observed, dtype=np.float64)
    n, p = x.shape
    if n == 0:
        raise ValueError("empty dataset")
    if t.min() == t.max():
        msg = "all-treated or all-control dataset"
        if interaction:
            warnings.warn(f"{msg}: interaction columns are collinear with the covariates")
        else:
            raise ValueError(msg)
    cols = [np.ones(n), t, x]
    if interaction:
        cols.append(t[:, None] * x)
    design = np.column_stack(cols)
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    return LinearModel(
        coef=coef,
        n_features=p,
        interaction=interaction,
        rank=int(rank),
        minimal_norm=int(rank) < design.shape[1],
    )


def predict_cate_linear(model, x):
    """Effect estimate: the treatment coefficient, plus x' interactions if fitted."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    if xb.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {xb.shape[1]}")
    if model.interaction:
        out = model.coef[1] + xb @ model.coef[2 + model.n_features :]
    else:
        out = np.full(xb.shape[0], model.coef[1])
    return float(out[0]) if single else out


# -- regression forest --------------------------------------------------------


@dataclass
class ForestConfig:
    trees: int = 100
    mtry_rate: float = 1.0 / 3.0  # fraction of features tried per split (ceil)
    min_leaf: int = 5
    seed: int = 0


@dataclass
class RegressionTree:
    """Flat preorder node arrays; feature -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def node_count(self):
        return self.feature.size


@dataclass
class ForestModel:
    trees: list
    seed: int
    mtry_rate: float
    min_leaf: int


def _fit_tree(x, y, rows, rng, min_leaf, mtry):
    p = x.shape[1]
    feature, threshold, left, right, value = [], [], [], [], []
    # explicit stack keeps preorder layout and survives deep, skewed trees
    stack = [(rows, -1, "")]
    while stack:
        node_rows, parent, side = stack.pop()
        nid = len(feature)
        if parent >= 0:
            (left if side == "l" else right)[parent] = nid
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[node_rows].mean()))
        if node_rows.size < 2 * min_leaf:
            continue
        cand = np.sort(rng.choice(p, size=mtry, replace=False))
        f, thr, gain = kernels.best_split(x, y, node_rows, cand, min_leaf)
        if f < 0:
            continue
        feature[nid] = int(f)
        threshold[nid] = float(thr)
        go_left = x[node_rows, f] <= thr
        stack.append((node_rows[~go_left], nid, "r"))
        stack.append((node_rows[go_left], nid, "l"))
    return RegressionTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value),
    )


def fit_forest(features, targets, cfg):
    """Bagged variance-reduction trees; deterministic given cfg.seed."""
    x = np.ascontiguousarray(features, dtype=np.float64)
    y = np.ascontiguousarray(targets, dtype=np.float64)
    n, p = x.shape
    if n == 0:
        raise ValueError("empty training data")
    if n < cfg.min_leaf:
        raise ValueError(f"need at least min_leaf={cfg.min_leaf} records, got {n}")
    mtry = min(p, max(1, int(np.ceil(p * cfg.mtry_rate))))
    trees = []
    for i in range(cfg.trees):
        rng = np.random.default_rng(subseed(cfg.seed, "tree", i))
        boot = rng.integers(0, n, n)
        trees.append(_fit_tree(x, y, boot, rng, cfg.min_leaf, mtry))
    return ForestModel(trees=trees, seed=cfg.seed, mtry_rate=cfg.mtry_rate, min_leaf=cfg.min_leaf)


def predict_tree(tree, x):
    x = np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)
    return kernels.tree_apply(x, tree.feature, tree.threshold, tree.left, tree.right, tree.value)


def predict_forest(model, x):
    """Arithmetic mean of the per-tree predictions."""
    x = np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)
    preds = np.stack([predict_tree(t, x) for t in model.trees])
    return preds.mean(axis=0)


# -- meta-learners ------------------------------------------------------------


@dataclass
class MetaLearner:
    kind: str  # "S" | "T"
    models: tuple  # (joint,) for S; (mu1, mu0) for T


def fit_meta(dataset, kind, base_cfg):
    """S: one forest on [X, T]. T: one forest per treatment group."""
    if kind not in ("S", "T"):
        raise ValueError(f"meta-learner kind must be 'S' or 'T', got {kind!r}")
    x = dataset.features()
    t = np.asarray(dataset.treatment, dtype=np.float64)
    y = np.asarray(dataset.observed, dtype=np.float64)
    if kind == "S":
        joint = fit_forest(np.column_stack([x, t]), y, base_cfg)
        return MetaLearner(kind="S", models=(joint,))
    treated = t == 1.0
    if not treated.any() or treated.all():
        raise ValueError("T-learner needs both treatment groups nonempty")
    cfg1 = ForestConfig(base_cfg.trees, base_cfg.mtry_rate, base_cfg.min_leaf, subseed(base_cfg.seed, "treated"))
    cfg0 = ForestConfig(base_cfg.trees, base_cfg.mtry_rate, base_cfg.min_leaf, subseed(base_cfg.seed, "control"))
    mu1 = fit_forest(x[treated], y[treated], cfg1)
    mu0 = fit_forest(x[~treated], y[~treated], cfg0)
    return MetaLearner(kind="T", models=(mu1, mu0))


def predict_cate_meta(learner, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    if learner.kind == "S":
        joint = learner.models[0]
        ones = np.ones((xb.shape[0], 1))
        out = predict_forest(joint, np.hstack([xb, ones])) - predict_forest(
            joint, np.hstack([xb, 0.0 * ones])
        )
    else:
        mu1, mu0 = learner.models
        out = predict_forest(mu1, xb) - predict_forest(mu0, xb)
    return float(out[0]) if single else out
