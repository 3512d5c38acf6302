"""Seeded synthetic benchmark generators.

Every generator returns a CausalDataset: observable (covariates, treatment,
observed outcome) plus a hidden-truth block (both potential outcomes, the
effect target, and for circle data the radius and disc origin) that only the
scoring code may read.

Circle images are 32x32, radius ~ Unif(0,16), origin ~ continuous
Unif(0,32)^2; a pixel is inside the disc when its center (i+0.5, j+0.5) is
strictly within the radius. Noiseless discs are 180-on-0; noisy pixels get
N(0, 64) additive noise around those two levels, truncated to [0,255] and
rounded. Potential outcomes are Y(0) ~ N(0, v) and Y(1) ~ N(R, v) with
v = 1 (noiseless) or v = 0.4 (noisy), treatment is Bernoulli(0.5), and the
effect target is the radius.

Simple-relation generators reuse the noisy-image covariates, flattened, and
draw outcomes Y(t) = f_t(X) + noise for linear, polynomial, forest-valued,
and network-valued f; their noise scale is calibrated so the observed
signal-to-noise ratio is 10 on a reference sample. Nine-dimensional toy
generators with a constant additive effect of 10 round out the set.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import graph as G
from .baselines import ForestConfig, fit_forest, predict_forest
from .seeding import subseed
from .tensor import Tensor

GENERATOR_KINDS = (
    "circle-noiseless",
    "circle-noisy",
    "linear",
    "polynomial",
    "tree",
    "net",
    "appendix-linear",
    "appendix-poly",
)
SIMPLE_KINDS = ("linear", "polynomial", "tree", "net")
CALIBRATION_SIZE = 10000
_CHUNK = 2048
DATASET_MAGIC = "# catekit dataset v1"


@dataclass
class HiddenTruth:
    y0: np.ndarray
    y1: np.ndarray
    tau: np.ndarray
    radius: Optional[np.ndarray] = None
    origin: Optional[np.ndarray] = None


@dataclass
class CausalDataset:
    covariates: np.ndarray
    treatment: np.ndarray
    observed: np.ndarray
    truth: HiddenTruth
    covariate_kind: str  # "image" | "pixels" | "numeric"
    generator: str = ""

    @property
    def n(self):
        return self.covariates.shape[0]

    def features(self):
        """Flattened float64 covariates for estimators that expect vectors."""
        return np.asarray(self.covariates, dtype=np.float64).reshape(self.n, -1)


@dataclass
class GeneratorSpec:
    """Everything needed to reproduce a generator's population."""

    kind: str
    seed: int = 0
    sigma: Optional[float] = None  # simple-relation outcome noise sd
    sigma_x: float = 1.0  # appendix covariate scale

    def __post_init__(self):
        if self.kind not in GENERATOR_KINDS:
            raise ValueError(f"unknown generator kind {self.kind!r}")

    def echo(self):
        sig = "none" if self.sigma is None else float(self.sigma).hex()
        return f"kind={self.kind} seed={self.seed} sigma={sig} sigma_x={float(self.sigma_x).hex()}"


# -- circle images -----------------------------------------------------------


def _circle_images(rng, radius, origin, noisy):
    n = radius.shape[0]
    centers = np.arange(32, dtype=np.float64) + 0.5
    rows = centers[:, None]
    cols = centers[None, :]
    out = np.empty((n, 1, 32, 32), dtype=np.uint8)
    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        o = origin[lo:hi]
        d2 = (rows[None] - o[:, 0, None, None]) ** 2 + (cols[None] - o[:, 1, None, None]) ** 2
        inside = d2 < radius[lo:hi, None, None] ** 2
        if noisy:
            pix = 180.0 * inside + rng.normal(0.0, 8.0, size=inside.shape)
            pix = np.clip(np.round(pix), 0, 255)
        else:
            pix = np.where(inside, 180, 0)
        out[lo:hi, 0] = pix.astype(np.uint8)
    return out


def gen_circle(n, noisy, seed):
    """Circle-image dataset; returns a CausalDataset with image covariates."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    radius = rng.uniform(0.0, 16.0, n)
    origin = rng.uniform(0.0, 32.0, (n, 2))
    sd = np.sqrt(0.4) if noisy else 1.0
    y0 = rng.normal(0.0, sd, n)
    y1 = radius + rng.normal(0.0, sd, n)
    treatment = rng.integers(0, 2, n).astype(np.float64)
    images = _circle_images(rng, radius, origin, noisy)
    observed = treatment * y1 + (1.0 - treatment) * y0
    truth = HiddenTruth(y0=y0, y1=y1, tau=radius.copy(), radius=radius, origin=origin)
    kind = "circle-noisy" if noisy else "circle-noiseless"
    return CausalDataset(images, treatment, observed, truth, "image", kind)


# -- simple relations over noisy-image covariates ----------------------------


def _linear_coefficients(seed):
    rng = np.random.default_rng(subseed(seed, "linear-coef"))
    b1 = np.zeros(1024)
    b2 = np.zeros(1024)
    b1[:20] = rng.normal(0.0, np.sqrt(10.0), 20)
    b2[:20] = rng.normal(0.0, np.sqrt(10.0), 20)
    return b1, b2


def _polynomial_coefficients(seed):
    rng = np.random.default_rng(subseed(seed, "poly-coef"))
    b3 = rng.normal(5.0, np.sqrt(50.0), 1024)
    b4 = rng.normal(5.0, np.sqrt(50.0), 1024)
    d1 = rng.normal(5.0, np.sqrt(50.0), 1024)
    d2 = rng.normal(5.0, np.sqrt(50.0), 1024)
    return b3, b4, d1, d2


_tree_cache = {}
_net_cache = {}


def make_tree_generator(seed):
    """Two frozen 50-tree forests over flat image covariates.

    Each is fit on its own random integer targets (levels 1..9) over a shared
    batch of noisy-image covariates, so both response surfaces are piecewise
    constant and disagree almost everywhere.
    """
    if seed in _tree_cache:
        return _tree_cache[seed]
    rng = np.random.default_rng(subseed(seed, "tree-surrogate"))
    m = 600
    radius = rng.uniform(0.0, 16.0, m)
    origin = rng.uniform(0.0, 32.0, (m, 2))
    x = _circle_images(rng, radius, origin, noisy=True).reshape(m, -1).astype(np.float64)
    y0 = rng.integers(1, 10, m).astype(np.float64)
    y1 = rng.integers(1, 10, m).astype(np.float64)
    f0 = fit_forest(x, y0, ForestConfig(trees=50, seed=subseed(seed, "tree-surrogate", 0)))
    f1 = fit_forest(x, y1, ForestConfig(trees=50, seed=subseed(seed, "tree-surrogate", 1)))
    _tree_cache[seed] = (f0, f1)
    return f0, f1


def _random_convnet(seed, arch):
    g = G.NetworkGraph(inputs=("x",))
    rng = np.random.default_rng(seed)
    node = g.affine("x", 1.0 / 255.0, 0.0)
    ch, h, w = 1, 32, 32
    for i, (cout, k) in enumerate(arch):
        bound = np.sqrt(6.0 / (ch * k * k + cout * k * k))
        g.add_param(f"k{i}", Tensor(rng.uniform(-bound, bound, (cout, ch, k, k))))
        g.add_param(f"kb{i}", Tensor(rng.uniform(-0.1, 0.1, cout)))
        node = g.relu(g.conv2d(node, f"k{i}", f"kb{i}"))
        ch, h, w = cout, h - k + 1, w - k + 1
        if h >= 4 and w >= 4:
            h2, w2 = h - h % 2, w - w % 2
            if (h2, w2) != (h, w):
                node = g.crop2d(node, h2, w2)
            node = g.maxpool2d(node, 2)
            h, w = h2 // 2, w2 // 2
    flat = ch * h * w
    bound = np.sqrt(6.0 / (flat + 1))
    g.add_param("w", Tensor(rng.uniform(-bound, bound, (flat, 1))))
    g.add_param("b", Tensor(rng.uniform(-0.5, 0.5, 1)))
    g.set_output(g.dense(g.flatten(node), "w", "b"))
    return g


def make_net_generator(seed):
    """Two frozen random convolutional networks of different depths."""
    if seed in _net_cache:
        return _net_cache[seed]
    f0 = _random_convnet(subseed(seed, "net-surrogate", 0), [(4, 3), (4, 3), (4, 3)])
    f1 = _random_convnet(subseed(seed, "net-surrogate", 1), [(6, 5), (4, 3)])
    _net_cache[seed] = (f0, f1)
    return f0, f1


def _net_eval(g, x_flat):
    out = np.empty(x_flat.shape[0])
    imgs = x_flat.reshape(-1, 1, 32, 32)
    for lo in range(0, imgs.shape[0], _CHUNK):
        hi = min(lo + _CHUNK, imgs.shape[0])
        out[lo:hi] = G.forward(g, {"x": imgs[lo:hi]}).data.reshape(-1)
    return out


def simple_response_functions(spec):
    """The (f0, f1) pair of a simple-relation GeneratorSpec, as callables."""
    if spec.kind == "linear":
        b1, b2 = _linear_coefficients(spec.seed)
        return (lambda x: x @ b1), (lambda x: x @ (b1 + b2))
    if spec.kind == "polynomial":
        b3, b4, d1, d2 = _polynomial_coefficients(spec.seed)
        f0 = lambda x: x @ b3 + (x * x) @ d1
        f1 = lambda x: x @ (b3 + b4) + (x * x) @ (d1 + d2)
        return f0, f1
    if spec.kind == "tree":
        t0, t1 = make_tree_generator(spec.seed)
        return (lambda x: predict_forest(t0, x)), (lambda x: predict_forest(t1, x))
    if spec.kind == "net":
        n0, n1 = make_net_generator(spec.seed)
        return (lambda x: _net_eval(n0, x)), (lambda x: _net_eval(n1, x))
    raise ValueError(f"{spec.kind!r} is not a simple-relation generator")


def gen_simple(n, spec, seed):
    """Simple-relation dataset over flattened noisy-image covariates.

    spec.sigma must be set (see calibrate_sigma / resolve_sigma); pass 0 for
    noise-free outcomes.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if spec.kind not in SIMPLE_KINDS:
        raise ValueError(f"unknown simple-relation kind {spec.kind!r}")
    if spec.sigma is None:
        raise ValueError("spec.sigma is unset; call resolve_sigma(spec) first")
    rng = np.random.default_rng(seed)
    radius = rng.uniform(0.0, 16.0, n)
    origin = rng.uniform(0.0, 32.0, (n, 2))
    x = _circle_images(rng, radius, origin, noisy=True).reshape(n, -1)
    xf = x.astype(np.float64)
    f0, f1 = simple_response_functions(spec)
    m0, m1 = f0(xf), f1(xf)
    y0 = m0 + rng.normal(0.0, spec.sigma, n) if spec.sigma else m0
    y1 = m1 + rng.normal(0.0, spec.sigma, n) if spec.sigma else m1
    treatment = rng.integers(0, 2, n).astype(np.float64)
    observed = treatment * y1 + (1.0 - treatment) * y0
    truth = HiddenTruth(y0=y0, y1=y1, tau=m1 - m0)
    return CausalDataset(x, treatment, observed, truth, "pixels", spec.kind)


def calibrate_sigma(observed):
    """Noise sd giving observed signal-to-noise 10: sqrt(sum(y^2) / (10 n))."""
    y = np.asarray(observed, dtype=np.float64)
    if y.size == 0:
        raise ValueError("cannot calibrate on an empty outcome sequence")
    total = float(y @ y)
    if total == 0.0:
        raise ValueError("cannot calibrate on all-zero outcomes")
    return float(np.sqrt(total / (10.0 * y.size)))


def resolve_sigma(spec, reference_n=CALIBRATION_SIZE):
    """Fill spec.sigma from a noise-free reference sample of the generator.

    The calibration sample is drawn once from a seed derived from the spec
    seed, so every dataset of the spec shares one sigma.
    """
    if spec.sigma is not None:
        return spec.sigma
    probe = GeneratorSpec(kind=spec.kind, seed=spec.seed, sigma=0.0)
    ref = gen_simple(reference_n, probe, subseed(spec.seed, "sigma-calibration"))
    spec.sigma = calibrate_sigma(ref.observed)
    return spec.sigma


# -- nine-dimensional toy generators -----------------------------------------


def gen_appendix(n, kind, sigma_x, seed):
    """Nine-covariate data with constant additive effect 10.

    Coordinates 1-5 are N(0, sigma_x^2), 6-9 are Unif(0,5). The control
    surface is sum_j j*x_j, plus sum_j (11-j)*x_j^2 for the polynomial kind;
    outcome noise is N(0,1) shared across both potential outcomes.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if kind not in ("linear", "polynomial"):
        raise ValueError(f"unknown toy generator kind {kind!r}")
    rng = np.random.default_rng(seed)
    x = np.empty((n, 9))
    x[:, :5] = rng.normal(0.0, sigma_x, (n, 5))
    x[:, 5:] = rng.uniform(0.0, 5.0, (n, 4))
    eps = rng.normal(0.0, 1.0, n)
    treatment = rng.integers(0, 2, n).astype(np.float64)
    j = np.arange(1, 10, dtype=np.float64)
    base = x @ j
    if kind == "polynomial":
        base = base + (x * x) @ (11.0 - j)
    y0 = base + eps
    y1 = base + 10.0 + eps
    observed = treatment * y1 + (1.0 - treatment) * y0
    truth = HiddenTruth(y0=y0, y1=y1, tau=np.full(n, 10.0))
    gen = "appendix-linear" if kind == "linear" else "appendix-poly"
    return CausalDataset(x, treatment, observed, truth, "numeric", gen)


def generate(spec, n, seed=None):
    """Dispatch a GeneratorSpec; seed defaults to a child of spec.seed."""
    if seed is None:
        seed = subseed(spec.seed, "dataset", n)
    if spec.kind == "circle-noiseless":
        return gen_circle(n, False, seed)
    if spec.kind == "circle-noisy":
        return gen_circle(n, True, seed)
    if spec.kind in SIMPLE_KINDS:
        resolve_sigma(spec)
        return gen_simple(n, spec, seed)
    if spec.kind == "appendix-linear":
        return gen_appendix(n, "linear", spec.sigma_x, seed)
    return gen_appendix(n, "polynomial", spec.sigma_x, seed)


# -- dataset files ------------------------------------------------------------


def save_dataset(ds, path):
    """Write the comma-separated dataset format (hidden columns marked)."""
    n = ds.n
    p = int(np.prod(ds.covariates.shape[1:]))
    fields = [f"x{i}" for i in range(p)] + ["t", "y_obs", "hidden:y0", "hidden:y1", "hidden:tau"]
    has_circle = ds.truth.radius is not None
    if has_circle:
        fields += ["hidden:radius", "hidden:o0", "hidden:o1"]
    shape = ",".join(str(d) for d in ds.covariates.shape[1:])
    ints = ds.covariate_kind in ("image", "pixels")
    with open(path, "w") as fh:
        fh.write(f"{DATASET_MAGIC}\n")
        fh.write(f"# generator = {ds.generator}\n")
        fh.write(f"# n = {n}\n")
        fh.write(f"# covariate_kind = {ds.covariate_kind}\n")
        fh.write(f"# covariate_shape = {shape}\n")
        fh.write(f"# fields = {','.join(fields)}\n")
        flat = ds.covariates.reshape(n, -1)
        for i in range(n):
            if ints:
                row = [str(int(v)) for v in flat[i]]
            else:
                row = [f"{v:.17g}" for v in flat[i]]
            row.append(str(int(ds.treatment[i])))
            row.append(f"{ds.observed[i]:.17g}")
            row.append(f"{ds.truth.y0[i]:.17g}")
            row.append(f"{ds.truth.y1[i]:.17g}")
            row.append(f"{ds.truth.tau[i]:.17g}")
            if has_circle:
                row.append(f"{ds.truth.radius[i]:.17g}")
                row.append(f"{ds.truth.origin[i, 0]:.17g}")
                row.append(f"{ds.truth.origin[i, 1]:.17g}")
            fh.write(",".join(row) + "\n")
    return n


def load_dataset(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != DATASET_MAGIC:
        raise ValueError(f"not a dataset file: {path}")
    header = {}
    body_start = 0
    for i, ln in enumerate(lines):
        if not ln.startswith("# "):
            body_start = i
            break
        if " = " in ln:
            key, val = ln[2:].split(" = ", 1)
            header[key] = val
    n = int(header["n"])
    kind = header["covariate_kind"]
    shape = tuple(int(v) for v in header["covariate_shape"].split(","))
    fields = header["fields"].split(",")
    p = int(np.prod(shape))
    has_circle = "hidden:radius" in fields
    rows = lines[body_start : body_start + n]
    if len(rows) != n:
        raise ValueError(f"dataset truncated: expected {n} rows, found {len(rows)}")
    data = np.array([ln.split(",") for ln in rows], dtype=np.float64)
    cov = data[:, :p].reshape((n,) + shape)
    if kind in ("image", "pixels"):
        cov = cov.astype(np.uint8)
    truth = HiddenTruth(
        y0=data[:, p + 2],
        y1=data[:, p + 3],
        tau=data[:, p + 4],
        radius=data[:, p + 5] if has_circle else None,
        origin=data[:, p + 6 : p + 8] if has_circle else None,
    )
    return CausalDataset(cov, data[:, p], data[:, p + 1], truth, kind, header.get("generator", ""))
