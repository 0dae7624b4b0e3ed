"""Small numerical utilities: panel quadrature nodes, causal convolution,
single-threaded BLAS sections for worker-count-independent results."""

import contextlib
from functools import lru_cache

import numpy as np

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover - threadpoolctl ships with scipy stacks
    threadpool_limits = None


@contextlib.contextmanager
def single_thread_blas():
    """Pin BLAS/LAPACK pools to one thread inside the block.

    Ensemble reductions must be bit-identical whatever the worker count, so
    every chunk does its linear algebra single-threaded and parallelism
    happens only across chunks.
    """
    if threadpool_limits is None:
        yield
    else:
        with threadpool_limits(limits=1):
            yield


@lru_cache(maxsize=32)
def gauss_legendre(order):
    """Cached Gauss-Legendre nodes/weights on [-1, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


def panel_nodes(edges, order):
    """GL nodes and weights for a batch of panels.

    Parameters
    ----------
    edges : ndarray, shape (m, 2)
        Panel endpoints [a_i, b_i].
    order : int
        GL order per panel.

    Returns
    -------
    nodes, weights : ndarray, shape (m, order)
    """
    x, w = gauss_legendre(order)
    edges = np.asarray(edges, dtype=float)
    half = 0.5 * (edges[:, 1] - edges[:, 0])
    mid = 0.5 * (edges[:, 1] + edges[:, 0])
    nodes = mid[:, None] + half[:, None] * x[None, :]
    weights = half[:, None] * w[None, :]
    return nodes, weights


def dyadic_edges(b, levels):
    """Panels [b 2^{-k-1}, b 2^{-k}], k = 0..levels-1 (finest last)."""
    k = np.arange(levels)
    hi = b * 0.5**k
    lo = b * 0.5 ** (k + 1)
    return np.column_stack([lo, hi])


def causal_convolve(kernel, series, chunk=2048):
    """Causal convolution out[:, k, :] = sum_{j<k} kernel[k-1-j] * series[:, j, :].

    Implemented as a dense lower-triangular Toeplitz multiply rather than by
    FFT: the FFT route mixes every input into every output at rounding
    level, which would break the exact-causality contract (perturbing
    increment j must leave outputs up to j bit-identical).

    Parameters
    ----------
    kernel : ndarray, shape (n,)
    series : ndarray, shape (reps, n, d)

    Returns
    -------
    ndarray, shape (reps, n+1, d); out[:, 0] = 0.
    """
    from scipy.linalg import toeplitz

    series = np.asarray(series, dtype=float)
    reps, n, d = series.shape
    if kernel.shape != (n,):
        raise ValueError("kernel length must match the number of cells")
    # full[k, j] = kernel[k-1-j] for j < k, zero elsewhere
    full = toeplitz(np.concatenate([[0.0], kernel]), np.zeros(n))
    out = np.zeros((reps, n + 1, d))
    with single_thread_blas():
        for a in range(0, reps, chunk):
            b = min(a + chunk, reps)
            block = series[a:b]  # (r, n, d)
            flat = block.transpose(1, 0, 2).reshape(n, -1)
            res = full @ flat  # (n+1, r*d)
            out[a:b] = res.reshape(n + 1, b - a, d).transpose(1, 0, 2)
    return out


def loglog_slope(x, y):
    """Least-squares slope of log y against log x."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    A = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    return float(coef[0]), float(coef[1])
