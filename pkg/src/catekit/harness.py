"""Experiment orchestration: generate, fit, score, sweep, plot.

A sweep is a grid over (generator, method, training size, replicate). Each
cell trains one estimator on a freshly generated seeded training set and
scores its effect estimates on both the training split and a fixed test set
shared by every cell of the same generator. Cell results land in their own
CSV file named by the cell key, so interrupted sweeps resume without
recomputing; the final results.csv concatenates all rows in key order.
Everything is derived from one master seed.
"""

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import causalnet as CN
from . import datagen
from .baselines import ForestConfig, fit_adjusted, fit_meta, predict_cate_linear, predict_cate_meta
from .evaluate import EvalReport, Stopwatch, mse_cate, relative_mse, scatter_export
from .seeding import subseed

METHODS = ("causalnet", "s-forest", "t-forest", "adj", "adj-interaction")
DESK_GRID = (500, 1000, 2000)
DESK_TEST_SIZE = 2000
FULL_GRID = (2000, 4000, 6000, 8000, 10000)
FULL_TEST_SIZE = 10000
CSV_HEADER = "generator,method,n_train,replicate,split,mse,relative_mse,failed,seconds"


@dataclass
class ExperimentConfig:
    generators: tuple = ("circle-noiseless",)
    methods: tuple = METHODS
    grid: tuple = DESK_GRID
    test_size: int = DESK_TEST_SIZE
    replicates: int = 1
    seed: int = 0
    out_dir: str = "results"
    overrides: dict = field(default_factory=dict)
    jobs: int = 1

    def __post_init__(self):
        self.generators = tuple(self.generators)
        self.methods = tuple(self.methods)
        self.grid = tuple(int(v) for v in self.grid)
        for g in self.generators:
            if g not in datagen.GENERATOR_KINDS:
                raise ValueError(f"unknown generator {g!r}")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")

    def cells(self):
        for g in self.generators:
            for m in self.methods:
                for n in self.grid:
                    for r in range(self.replicates):
                        yield CellKey(g, m, n, r)


@dataclass(frozen=True)
class CellKey:
    generator: str
    method: str
    n_train: int
    replicate: int

    def stem(self):
        return f"{self.generator}__{self.method}__n{self.n_train}__r{self.replicate}"


def full_scale(config):
    """The paper-scale grid variant of a desk-scale config."""
    return replace(config, grid=FULL_GRID, test_size=FULL_TEST_SIZE)


_spec_cache = {}
_test_cache = {}


def generator_spec(config, kind):
    """The sweep's resolved GeneratorSpec for one generator kind."""
    key = (config.seed, kind)
    if key not in _spec_cache:
        spec = datagen.GeneratorSpec(kind=kind, seed=subseed(config.seed, "generator", kind))
        if kind in datagen.SIMPLE_KINDS:
            datagen.resolve_sigma(spec)
        _spec_cache[key] = spec
    return _spec_cache[key]


def test_dataset(config, kind):
    """The fixed test set shared by every cell of this generator."""
    key = (config.seed, kind, config.test_size)
    if key not in _test_cache:
        spec = generator_spec(config, kind)
        seed = subseed(config.seed, "test-data", kind)
        _test_cache[key] = datagen.generate(spec, config.test_size, seed)
    return _test_cache[key]


def _override(overrides, key, default, cast):
    if key in overrides:
        return cast(overrides[key])
    return default


def fit_method(method, train_ds, seed, overrides=None):
    """Fit one named method on a training dataset; returns the fitted model."""
    overrides = overrides or {}
    if method in ("adj", "adj-interaction"):
        return fit_adjusted(train_ds, interaction=method == "adj-interaction")
    if method in ("s-forest", "t-forest"):
        cfg = ForestConfig(
            trees=_override(overrides, "forest.trees", 100, int),
            mtry_rate=_override(overrides, "forest.mtry_rate", 1.0 / 3.0, float),
            min_leaf=_override(overrides, "forest.min_leaf", 5, int),
            seed=seed,
        )
        return fit_meta(train_ds, "S" if method == "s-forest" else "T", cfg)
    if method == "causalnet":
        model = CN.CausalNet(causalnet_config(train_ds, subseed(seed, "init"), overrides))
        tcfg = CN.TrainConfig(
            optimizer=_override(overrides, "causalnet.optimizer", "sgd", str),
            learning_rate=_override(overrides, "causalnet.lr", 0.01, float),
            batch_size=_override(overrides, "causalnet.batch_size", 64, int),
            epochs=_override(overrides, "causalnet.epochs", 30, int),
            shuffle_seed=subseed(seed, "shuffle"),
        )
        CN.train(model, train_ds, tcfg)
        return model
    raise ValueError(f"unknown method {method!r}")


def estimate_cate(model, ds):
    """Per-record effect estimates of any fitted model on a dataset."""
    if isinstance(model, CN.CausalNet):
        return model.predict_cate(np.asarray(ds.covariates, dtype=np.float64))
    if hasattr(model, "coef"):
        out = predict_cate_linear(model, ds.features())
    else:
        out = predict_cate_meta(model, ds.features())
    return np.broadcast_to(np.atleast_1d(out), (ds.n,)).astype(np.float64)


def fit_and_estimate(method, train_ds, test_ds, seed, overrides):
    """Fit one method and return (tau_hat_train, tau_hat_test)."""
    model = fit_method(method, train_ds, seed, overrides)
    return estimate_cate(model, train_ds), estimate_cate(model, test_ds)


def causalnet_config(ds, init_seed, overrides=None):
    """Network configuration matched to a dataset's covariates."""
    overrides = overrides or {}
    if ds.covariate_kind == "image":
        shape = ds.covariates.shape[1:]
        scale = 1.0 / 255.0
    else:
        shape = (int(np.prod(ds.covariates.shape[1:])),)
        scale = 1.0 / 255.0 if ds.covariate_kind == "pixels" else 1.0
    return CN.CausalNetConfig(
        input_shape=shape,
        diverter_width=_override(overrides, "causalnet.width", 32, int),
        branch_hidden=_override(overrides, "causalnet.hidden", 16, int),
        seed=init_seed,
        input_scale=scale,
    )


def _atomic_write(path, text):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _format_row(r):
    return (
        f"{r.generator},{r.method},{r.n_train},{r.replicate},{r.split},"
        f"{r.mse:.17g},{r.relative_mse:.17g},{int(r.failed)},{r.seconds:.3f}"
    )


def _parse_row(line):
    g, m, n, r, split, mse, rel, failed, secs = line.split(",")
    return EvalReport(
        method=m,
        generator=g,
        n_train=int(n),
        replicate=int(r),
        split=split,
        mse=float(mse),
        relative_mse=float(rel),
        seconds=float(secs),
        failed=failed == "1",
    )


def run_cell(config, key):
    """Train/evaluate one cell; returns (train EvalReport, test EvalReport).

    A method failure is recorded as failed rows rather than raised, so a
    sweep never aborts on one bad cell. Scatter files for the two splits are
    written next to the cell result.
    """
    if key.method not in config.methods or key.generator not in config.generators:
        raise ValueError(f"cell {key} is outside the configured grid")
    spec = generator_spec(config, key.generator)
    train_seed = subseed(config.seed, "train-data", key.generator, key.n_train, key.replicate)
    train_ds = datagen.generate(spec, key.n_train, train_seed)
    test_ds = test_dataset(config, key.generator)
    fit_seed = subseed(config.seed, "fit", key.generator, key.method, key.n_train, key.replicate)
    rows = []
    with Stopwatch() as watch:
        try:
            tau_train, tau_test = fit_and_estimate(
                key.method, train_ds, test_ds, fit_seed, config.overrides
            )
            failed = False
        except Exception:
            failed = True
    for split, ds in (("train", train_ds), ("test", test_ds)):
        if failed:
            rows.append(
                EvalReport(key.method, key.generator, key.n_train, key.replicate, split,
                           float("nan"), float("nan"), watch.seconds, True)
            )
            continue
        tau_hat = tau_train if split == "train" else tau_test
        rows.append(
            EvalReport(
                method=key.method,
                generator=key.generator,
                n_train=key.n_train,
                replicate=key.replicate,
                split=split,
                mse=mse_cate(tau_hat, ds.truth.tau),
                relative_mse=relative_mse(tau_hat, ds.truth.tau),
                seconds=watch.seconds,
            )
        )
        cells_dir = os.path.join(config.out_dir, "cells")
        os.makedirs(cells_dir, exist_ok=True)
        scatter_export(
            tau_hat, ds.truth.tau, os.path.join(cells_dir, f"{key.stem()}__{split}_scatter.csv")
        )
    return tuple(rows)


def _run_and_store(config, key):
    rows = run_cell(config, key)
    path = os.path.join(config.out_dir, "cells", f"{key.stem()}.csv")
    _atomic_write(path, "".join(_format_row(r) + "\n" for r in rows))
    return rows


def sweep(config):
    """Run every missing cell, then write results.csv and per-generator plots.

    Returns the path of the results CSV. Cells whose result file already
    exists are skipped, making interrupted sweeps resumable.
    """
    cells_dir = os.path.join(config.out_dir, "cells")
    os.makedirs(cells_dir, exist_ok=True)
    keys = list(config.cells())
    missing = [k for k in keys if not os.path.exists(os.path.join(cells_dir, f"{k.stem()}.csv"))]
    if config.jobs > 1 and len(missing) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            list(pool.map(_run_and_store, [config] * len(missing), missing))
    else:
        for key in missing:
            _run_and_store(config, key)
    rows = []
    for key in keys:
        with open(os.path.join(cells_dir, f"{key.stem()}.csv")) as fh:
            rows.extend(_parse_row(ln) for ln in fh.read().splitlines() if ln)
    out = CSV_HEADER + "\n" + "".join(_format_row(r) + "\n" for r in rows)
    results_path = os.path.join(config.out_dir, "results.csv")
    _atomic_write(results_path, out)
    for g in config.generators:
        metric = "mse" if g.startswith("circle") else "relative_mse"
        plot_path = os.path.join(config.out_dir, f"plot_{g}.svg")
        write_line_plot(
            [r for r in rows if r.generator == g and r.split == "test" and not r.failed],
            metric,
            plot_path,
            title=f"{g}: test {metric} vs training size",
        )
    return results_path


# -- minimal standalone SVG line plots ----------------------------------------

_PALETTE = ("#1b6ca8", "#d1495b", "#66a182", "#edae49", "#775b9e")


def write_line_plot(rows, metric, path, title=""):
    """One series per method of metric vs n_train, as a standalone SVG."""
    width, height, margin = 640, 440, 60
    series = {}
    for r in sorted(rows, key=lambda r: (r.method, r.n_train)):
        series.setdefault(r.method, []).append((r.n_train, getattr(r, metric)))
    points = [pt for pts in series.values() for pt in pts]
    if not points:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    else:
        xs = [p[0] for p in points]
        ys = [p[1] for p in points]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys + [0.0]), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def sx(v):
        return margin + (v - x_lo) / (x_hi - x_lo) * (width - 2 * margin)

    def sy(v):
        return height - margin - (v - y_lo) / (y_hi - y_lo) * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.0f}" y="24" text-anchor="middle" font-size="15">{title}</text>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        xv = x_lo + frac * (x_hi - x_lo)
        yv = y_lo + frac * (y_hi - y_lo)
        parts.append(
            f'<text x="{sx(xv):.1f}" y="{height - margin + 18}" text-anchor="middle" '
            f'font-size="11">{xv:g}</text>'
        )
        parts.append(
            f'<text x="{margin - 6}" y="{sy(yv) + 4:.1f}" text-anchor="end" '
            f'font-size="11">{yv:.3g}</text>'
        )
    for i, (method, pts) in enumerate(sorted(series.items())):
        color = _PALETTE[i % len(_PALETTE)]
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in sorted(pts))
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in pts:
            parts.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" fill="{color}"/>')
        parts.append(
            f'<text x="{width - margin + 4}" y="{margin + 16 * i}" font-size="11" '
            f'fill="{color}">{method}</text>'
        )
    parts.append("</svg>")
    _atomic_write(path, "\n".join(parts) + "\n")
    return path


# -- config files --------------------------------------------------------------


def parse_config(path):
    """Line-oriented `key = value` config; dotted keys become overrides."""
    cfg = {}
    overrides = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"bad config line: {raw.rstrip()}")
            key, val = (s.strip() for s in line.split("=", 1))
            if "." in key:
                overrides[key] = val
            else:
                cfg[key] = val
    kwargs = {}
    if "generators" in cfg:
        kwargs["generators"] = tuple(cfg["generators"].split(","))
    if "generator" in cfg:
        kwargs["generators"] = tuple(cfg["generator"].split(","))
    if "methods" in cfg:
        kwargs["methods"] = tuple(cfg["methods"].split(","))
    if "grid" in cfg:
        kwargs["grid"] = tuple(int(v) for v in cfg["grid"].split(","))
    for key, cast in (("test_size", int), ("replicates", int), ("seed", int), ("jobs", int)):
        if key in cfg:
            kwargs[key] = cast(cfg[key])
    if "out" in cfg:
        kwargs["out_dir"] = cfg["out"]
    config = ExperimentConfig(overrides=overrides, **kwargs)
    if cfg.get("full_scale", "false").lower() in ("1", "true", "yes"):
        config = full_scale(config)
    return config
