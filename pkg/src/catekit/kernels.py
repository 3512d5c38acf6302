"""Hot numeric kernels with two interchangeable backends.

The compiled backend wraps the loop kernels in numba's njit; the fallback
backend is vectorized numpy. Selection happens once at import time via the
CATEKIT_BACKEND environment variable ("numba" or "numpy", default "numba"
when numba is importable). Both backends produce the same values; the loop
kernels additionally match naive nested-loop accumulation order exactly.

Run benchmarks/bench_kernels.py to compare the two backends.
"""

import os

import numpy as np

try:
    import numba
except ImportError:
    numba = None

_requested = os.environ.get("CATEKIT_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"CATEKIT_BACKEND must be 'numba' or 'numpy', got {_requested!r}")
ACTIVE_BACKEND = "numpy" if (numba is None or _requested == "numpy") else "numba"


def _njit(f):
    if numba is None:
        return f
    return numba.njit(f, cache=True)


# ---------------------------------------------------------------------------
# loop kernels (compiled under numba; also serve as plain-Python reference)
# ---------------------------------------------------------------------------

def _conv2d_forward_loop(x, k, b):
    batch, cin, h, w = x.shape
    cout, _, kh, kw = k.shape
    ho = h - kh + 1
    wo = w - kw + 1
    out = np.empty((batch, cout, ho, wo), dtype=np.float64)
    for n in range(batch):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for c in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += x[n, c, i + u, j + v] * k[o, c, u, v]
                    out[n, o, i, j] = acc + b[o]
    return out


def _conv2d_backward_loop(x, k, g):
    batch, cin, h, w = x.shape
    cout, _, kh, kw = k.shape
    ho = h - kh + 1
    wo = w - kw + 1
    dx = np.zeros((batch, cin, h, w), dtype=np.float64)
    dk = np.zeros(k.shape, dtype=np.float64)
    db = np.zeros(cout, dtype=np.float64)
    for n in range(batch):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    gv = g[n, o, i, j]
                    db[o] += gv
                    for c in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                dx[n, c, i + u, j + v] += gv * k[o, c, u, v]
                                dk[o, c, u, v] += gv * x[n, c, i + u, j + v]
    return dx, dk, db


def _maxpool_forward_loop(x, win):
    batch, ch, h, w = x.shape
    ho = h // win
    wo = w // win
    out = np.empty((batch, ch, ho, wo), dtype=np.float64)
    arg = np.empty((batch, ch, ho, wo), dtype=np.int64)
    for n in range(batch):
        for c in range(ch):
            for i in range(ho):
                for j in range(wo):
                    best = x[n, c, i * win, j * win]
                    bidx = 0
                    for u in range(win):
                        for v in range(win):
                            val = x[n, c, i * win + u, j * win + v]
                            # strict > keeps the first row-major maximum
                            if val > best:
                                best = val
                                bidx = u * win + v
                    out[n, c, i, j] = best
                    arg[n, c, i, j] = bidx
    return out, arg


def _maxpool_backward_loop(g, arg, win, h, w):
    batch, ch, ho, wo = g.shape
    dx = np.zeros((batch, ch, h, w), dtype=np.float64)
    for n in range(batch):
        for c in range(ch):
            for i in range(ho):
                for j in range(wo):
                    u = arg[n, c, i, j] // win
                    v = arg[n, c, i, j] % win
                    dx[n, c, i * win + u, j * win + v] += g[n, c, i, j]
    return dx


def _best_split_loop(x, y, idx, feats, min_leaf):
    m = idx.size
    ys = np.empty(m, dtype=np.float64)
    for i in range(m):
        ys[i] = y[idx[i]]
    total = 0.0
    for i in range(m):
        total += ys[i]
    base = total * total / m
    best_gain = 0.0
    best_feat = -1
    best_thr = 0.0
    col = np.empty(m, dtype=np.float64)
    for fi in range(feats.size):
        f = feats[fi]
        for i in range(m):
            col[i] = x[idx[i], f]
        order = np.argsort(col)
        left_sum = 0.0
        for i in range(1, m):
            left_sum += ys[order[i - 1]]
            lo = col[order[i - 1]]
            hi = col[order[i]]
            if lo == hi:
                continue
            if i < min_leaf or m - i < min_leaf:
                continue
            right_sum = total - left_sum
            score = left_sum * left_sum / i + right_sum * right_sum / (m - i)
            gain = score - base
            if gain > best_gain:
                best_gain = gain
                best_feat = f
                best_thr = (lo + hi) / 2.0
    return best_feat, best_thr, best_gain


def _tree_apply_loop(x, feature, threshold, left, right, value):
    n = x.shape[0]
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if x[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


# ---------------------------------------------------------------------------
# vectorized numpy backend
# ---------------------------------------------------------------------------

def _conv2d_forward_np(x, k, b):
    kh, kw = k.shape[2], k.shape[3]
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    out = np.einsum("bcijuv,ocuv->boij", win, k, optimize=True)
    return out + b[None, :, None, None]


def _conv2d_backward_np(x, k, g):
    kh, kw = k.shape[2], k.shape[3]
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    db = g.sum(axis=(0, 2, 3))
    dk = np.einsum("boij,bcijuv->ocuv", g, win, optimize=True)
    gp = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    gw = np.lib.stride_tricks.sliding_window_view(gp, (kh, kw), axis=(2, 3))
    dx = np.einsum("boijuv,ocuv->bcij", gw, k[:, :, ::-1, ::-1], optimize=True)
    return dx, dk, db


def _pool_windows(x, win):
    batch, ch, h, w = x.shape
    ho, wo = h // win, w // win
    v = x.reshape(batch, ch, ho, win, wo, win)
    return v.transpose(0, 1, 2, 4, 3, 5).reshape(batch, ch, ho, wo, win * win)


def _maxpool_forward_np(x, win):
    v = _pool_windows(x, win)
    arg = v.argmax(axis=-1)  # argmax returns the first maximum (row-major in-window)
    out = np.take_along_axis(v, arg[..., None], axis=-1)[..., 0]
    return out, arg


def _maxpool_backward_np(g, arg, win, h, w):
    batch, ch, ho, wo = g.shape
    flat = np.zeros((batch, ch, ho, wo, win * win), dtype=np.float64)
    np.put_along_axis(flat, arg[..., None], g[..., None], axis=-1)
    v = flat.reshape(batch, ch, ho, wo, win, win).transpose(0, 1, 2, 4, 3, 5)
    return v.reshape(batch, ch, h, w).copy()


def _best_split_np(x, y, idx, feats, min_leaf):
    m = idx.size
    ys = y[idx]
    total = float(ys.sum())
    base = total * total / m
    best_gain = 0.0
    best_feat = -1
    best_thr = 0.0
    counts = np.arange(1, m, dtype=np.float64)
    for f in feats:
        col = x[idx, f]
        order = np.argsort(col)
        sv = col[order]
        left = np.cumsum(ys[order])[:-1]
        valid = sv[:-1] != sv[1:]
        valid &= (counts >= min_leaf) & (m - counts >= min_leaf)
        if not valid.any():
            continue
        right = total - left
        score = np.where(valid, left * left / counts + right * right / (m - counts), -np.inf)
        pos = int(np.argmax(score))
        gain = score[pos] - base
        if gain > best_gain:
            best_gain = gain
            best_feat = int(f)
            best_thr = (sv[pos] + sv[pos + 1]) / 2.0
    return best_feat, best_thr, best_gain


def _tree_apply_np(x, feature, threshold, left, right, value):
    n = x.shape[0]
    node = np.zeros(n, dtype=np.int64)
    live = np.nonzero(feature[node] >= 0)[0]
    while live.size:
        nd = node[live]
        goleft = x[live, feature[nd]] <= threshold[nd]
        node[live] = np.where(goleft, left[nd], right[nd])
        live = live[feature[node[live]] >= 0]
    return value[node]


_NUMPY_IMPLS = {
    "conv2d_forward": _conv2d_forward_np,
    "conv2d_backward": _conv2d_backward_np,
    "maxpool_forward": _maxpool_forward_np,
    "maxpool_backward": _maxpool_backward_np,
    "best_split": _best_split_np,
    "tree_apply": _tree_apply_np,
}

if numba is not None:
    _NUMBA_IMPLS = {
        "conv2d_forward": _njit(_conv2d_forward_loop),
        "conv2d_backward": _njit(_conv2d_backward_loop),
        "maxpool_forward": _njit(_maxpool_forward_loop),
        "maxpool_backward": _njit(_maxpool_backward_loop),
        "best_split": _njit(_best_split_loop),
        "tree_apply": _njit(_tree_apply_loop),
    }
else:
    _NUMBA_IMPLS = {}


def get_impl(name, backend=None):
    """Look up a kernel by name for the given backend (default: active)."""
    backend = backend or ACTIVE_BACKEND
    if backend == "numba":
        if not _NUMBA_IMPLS:
            raise RuntimeError("numba backend requested but numba is not installed")
        return _NUMBA_IMPLS[name]
    return _NUMPY_IMPLS[name]


_active = _NUMBA_IMPLS if ACTIVE_BACKEND == "numba" else _NUMPY_IMPLS

conv2d_forward = _active["conv2d_forward"]
conv2d_backward = _active["conv2d_backward"]
maxpool_forward = _active["maxpool_forward"]
maxpool_backward = _active["maxpool_backward"]
best_split = _active["best_split"]
tree_apply = _active["tree_apply"]
