"""Hot inner loops, each with a numba kernel and a pure-numpy twin.

The public names at the bottom of this module are bound once at import
time. Set ``VOKIT_DISABLE_NUMBA=1`` (or leave numba uninstalled) to get the
numpy versions. Both variants stay importable under ``*_numba`` /
``*_numpy`` so tests and ``benchmarks/bench_kernels.py`` can compare them.
"""
import os

import numpy as np

_DISABLED = os.environ.get("VOKIT_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError("disabled by VOKIT_DISABLE_NUMBA")
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


BACKEND = "numba" if NUMBA_AVAILABLE else "numpy"

_SAMPSON_EPS = 1e-15


# --------------------------------------------------------------------------
# Sampson distance
# --------------------------------------------------------------------------

def sampson_numpy(m, x0, x1):
    m = np.asarray(m, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    h0 = np.column_stack([x0, np.ones(len(x0))])
    h1 = np.column_stack([x1, np.ones(len(x1))])
    mx0 = h0 @ m.T
    mtx1 = h1 @ m
    num = np.einsum("ij,ij->i", h1, mx0)
    den = mx0[:, 0] ** 2 + mx0[:, 1] ** 2 + mtx1[:, 0] ** 2 + mtx1[:, 1] ** 2
    out = np.full(len(x0), np.inf)
    zero = num == 0.0
    out[zero] = 0.0
    ok = ~zero & (den >= _SAMPSON_EPS)
    out[ok] = num[ok] ** 2 / den[ok]
    return out


@njit(cache=True)
def _sampson_loop(m, x0, x1, out):
    for k in range(x0.shape[0]):
        a0 = x0[k, 0]
        a1 = x0[k, 1]
        b0 = x1[k, 0]
        b1 = x1[k, 1]
        l0 = m[0, 0] * a0 + m[0, 1] * a1 + m[0, 2]
        l1 = m[1, 0] * a0 + m[1, 1] * a1 + m[1, 2]
        l2 = m[2, 0] * a0 + m[2, 1] * a1 + m[2, 2]
        r0 = m[0, 0] * b0 + m[1, 0] * b1 + m[2, 0]
        r1 = m[0, 1] * b0 + m[1, 1] * b1 + m[2, 1]
        num = b0 * l0 + b1 * l1 + l2
        if num == 0.0:
            out[k] = 0.0
            continue
        den = l0 * l0 + l1 * l1 + r0 * r0 + r1 * r1
        if den < 1e-15:
            out[k] = np.inf
        else:
            out[k] = num * num / den
    return out


def sampson_numba(m, x0, x1):
    m = np.ascontiguousarray(m, dtype=np.float64)
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    x1 = np.ascontiguousarray(x1, dtype=np.float64)
    return _sampson_loop(m, x0, x1, np.empty(x0.shape[0]))


# --------------------------------------------------------------------------
# Mutual nearest neighbours in the plane, gated by a radius
# --------------------------------------------------------------------------

def mutual_nearest_numpy(a, b, radius):
    """Rows of ``a`` containing NaN never match."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    m0 = np.full(len(a), -1, dtype=np.int64)
    m1 = np.full(len(b), -1, dtype=np.int64)
    if len(a) == 0 or len(b) == 0:
        return m0, m1
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    d2[np.isnan(d2)] = np.inf
    nn01 = np.argmin(d2, axis=1)
    nn10 = np.argmin(d2, axis=0)
    idx = np.arange(len(a))
    ok = (nn10[nn01] == idx) & (d2[idx, nn01] <= radius * radius)
    m0[ok] = nn01[ok]
    m1[nn01[ok]] = idx[ok]
    return m0, m1


@njit(cache=True)
def _mutual_nearest_loop(a, b, r2, m0, m1):
    na = a.shape[0]
    nb = b.shape[0]
    nn01 = np.full(na, -1, dtype=np.int64)
    best01 = np.full(na, np.inf)
    nn10 = np.full(nb, -1, dtype=np.int64)
    best10 = np.full(nb, np.inf)
    for i in range(na):
        ax = a[i, 0]
        ay = a[i, 1]
        if ax != ax or ay != ay:
            continue
        for j in range(nb):
            dx = ax - b[j, 0]
            dy = ay - b[j, 1]
            d = dx * dx + dy * dy
            if d < best01[i]:
                best01[i] = d
                nn01[i] = j
            if d < best10[j]:
                best10[j] = d
                nn10[j] = i
    for i in range(na):
        j = nn01[i]
        if j >= 0 and nn10[j] == i and best01[i] <= r2:
            m0[i] = j
            m1[j] = i
    return m0, m1


def mutual_nearest_numba(a, b, radius):
    a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 2)
    m0 = np.full(len(a), -1, dtype=np.int64)
    m1 = np.full(len(b), -1, dtype=np.int64)
    return _mutual_nearest_loop(a, b, float(radius) ** 2, m0, m1)


# --------------------------------------------------------------------------
# Nearest and second-nearest descriptor distances
# --------------------------------------------------------------------------

def two_nearest_numpy(q, db, block_bytes=64 << 20):
    """Return (nn index, d_nn, d_nn2) of every row of ``q`` against ``db``.

    ``d_nn2`` is +inf when ``db`` has a single row. Query rows are processed
    in blocks so the broadcast difference stays under ``block_bytes``.
    """
    q = np.asarray(q, dtype=np.float64)
    db = np.asarray(db, dtype=np.float64)
    n = len(q)
    nn = np.empty(n, dtype=np.int64)
    d_nn = np.empty(n)
    d_nn2 = np.full(n, np.inf)
    step = max(1, block_bytes // max(1, 8 * db.size))
    for s in range(0, n, step):
        d2 = ((q[s : s + step, None, :] - db[None, :, :]) ** 2).sum(-1)
        rows = np.arange(len(d2))
        k = np.argmin(d2, axis=1)
        nn[s : s + step] = k
        d_nn[s : s + step] = d2[rows, k]
        if db.shape[0] >= 2:
            d2[rows, k] = np.inf
            d_nn2[s : s + step] = d2.min(axis=1)
    return nn, np.sqrt(d_nn), np.sqrt(d_nn2)


@njit(cache=True)
def _two_nearest_loop(q, db, nn, d1, d2):
    for i in range(q.shape[0]):
        b1 = np.inf
        b2 = np.inf
        k = -1
        for j in range(db.shape[0]):
            s = 0.0
            for c in range(q.shape[1]):
                t = q[i, c] - db[j, c]
                s += t * t
            if s < b1:
                b2 = b1
                b1 = s
                k = j
            elif s < b2:
                b2 = s
        nn[i] = k
        d1[i] = np.sqrt(b1)
        d2[i] = np.sqrt(b2)
    return nn, d1, d2


def two_nearest_numba(q, db):
    q = np.ascontiguousarray(q, dtype=np.float64)
    db = np.ascontiguousarray(db, dtype=np.float64)
    n = q.shape[0]
    return _two_nearest_loop(q, db, np.empty(n, dtype=np.int64), np.empty(n), np.empty(n))


if NUMBA_AVAILABLE:
    sampson = sampson_numba
    mutual_nearest = mutual_nearest_numba
    two_nearest = two_nearest_numba
else:
    sampson = sampson_numpy
    mutual_nearest = mutual_nearest_numpy
    two_nearest = two_nearest_numpy
