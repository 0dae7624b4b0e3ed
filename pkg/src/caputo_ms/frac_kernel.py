"""Tempered power-law memory kernel: pointwise values, exact cell integrals,
product-integration weights, and the geometric-series a-priori bound.

The kernel is a(lag) = lag^(alpha-1) exp(-varrho*lag) / Gamma(alpha) with
order alpha in (1/2, 1] and decay rate varrho > 0.  All integrals of the
kernel reduce to the regularized lower incomplete gamma function
P(alpha, varrho*t), which is evaluated in-house (series for small argument,
continued fraction for large) so that weight construction does not lean on
the same library routine the tests use as an oracle.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .core import TimeGrid
from .errors import DomainError, ParameterError

_EPS = 1e-16
_MAX_ITER = 600


@dataclass(frozen=True)
class FracParams:
    """Order and tempering rate of the memory kernel.

    alpha in (1/2, 1]; alpha = 1 collapses the kernel to a pure exponential
    and is admitted for degenerate-case tests only (flagged in CLI metadata).
    varrho > 0 is the exponential decay rate, units 1/time.
    """

    alpha: float
    varrho: float

    def __post_init__(self):
        if not 0.5 < self.alpha <= 1.0:
            raise ParameterError(f"alpha must lie in (1/2, 1], got {self.alpha}")
        if not self.varrho > 0:
            raise ParameterError(f"varrho must be positive, got {self.varrho}")

    @property
    def degenerate(self):
        return self.alpha == 1.0


def _p_series(a, x):
    """P(a, x) by the ascending series; requires x < a + 1."""
    term = np.ones_like(x) / a
    total = term.copy()
    ap = a.copy()
    for _ in range(_MAX_ITER):
        ap += 1.0
        term = term * x / ap
        total += term
        if np.all(np.abs(term) < np.abs(total) * _EPS):
            break
    return total * np.exp(-x + a * np.log(x) - _gammaln(a))


def _q_contfrac(a, x):
    """Q(a, x) = 1 - P(a, x) by modified Lentz continued fraction; x >= a + 1."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = np.full_like(x, 1.0 / tiny)
    d = 1.0 / b
    h = d.copy()
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b = b + 2.0
        d = an * d + b
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = b + an / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        delta = d * c
        h = h * delta
        if np.all(np.abs(delta - 1.0) < _EPS):
            break
    return np.exp(-x + a * np.log(x) - _gammaln(a)) * h


def _gammaln(a):
    return np.vectorize(math.lgamma, otypes=[float])(a)


def reg_lower_gamma(a, x):
    """Regularized lower incomplete gamma P(a, x), elementwise.

    Series for x < a+1, continued fraction for x >= a+1; relative accuracy
    is at the 1e-14 level across the switch.
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    a_arr = np.broadcast_to(np.asarray(a, dtype=float), x.shape).astype(float)
    if np.any(a_arr <= 0):
        raise ParameterError("gamma shape parameter must be positive")
    if np.any(x < 0):
        raise DomainError("incomplete gamma argument must be nonnegative")
    out = np.zeros_like(x)
    small = (x < a_arr + 1.0) & (x > 0)
    large = x >= a_arr + 1.0
    if np.any(small):
        out[small] = _p_series(a_arr[small], x[small])
    if np.any(large):
        out[large] = 1.0 - _q_contfrac(a_arr[large], x[large])
    return float(out[0]) if scalar else out


def reg_upper_gamma(a, x):
    """Regularized upper incomplete gamma Q(a, x) with full relative accuracy
    for large x (needed for cancellation-free weight differences)."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    a_arr = np.broadcast_to(np.asarray(a, dtype=float), x.shape).astype(float)
    out = np.ones_like(x)
    small = (x < a_arr + 1.0) & (x > 0)
    large = x >= a_arr + 1.0
    if np.any(small):
        out[small] = 1.0 - _p_series(a_arr[small], x[small])
    if np.any(large):
        out[large] = _q_contfrac(a_arr[large], x[large])
    return float(out[0]) if scalar else out


def kernel_eval(p: FracParams, lag):
    """Kernel value lag^(alpha-1) exp(-varrho*lag) / Gamma(alpha).

    The kernel depends on its two time arguments only through the lag, which
    is what makes every shift identity downstream exact.  lag must be
    strictly positive: for alpha < 1 the kernel is singular at zero lag and
    a silent large sentinel would corrupt quadrature, so lag <= 0 raises.
    """
    lag_arr = np.asarray(lag, dtype=float)
    if np.any(lag_arr <= 0):
        raise DomainError("kernel lag must be strictly positive")
    val = lag_arr ** (p.alpha - 1.0) * np.exp(-p.varrho * lag_arr) / math.gamma(p.alpha)
    return float(val) if np.ndim(lag) == 0 else val


def kernel_mass(p: FracParams, t):
    """Integral of the kernel over a window of length t.

    Equals varrho^(-alpha) * P(alpha, varrho*t): nondecreasing in t and
    bounded by varrho^(-alpha).
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise DomainError("window length must be nonnegative")
    val = p.varrho ** (-p.alpha) * reg_lower_gamma(p.alpha, p.varrho * t_arr)
    return float(val) if np.ndim(t) == 0 else val


@dataclass(frozen=True)
class KernelWeights:
    """Exact cell integrals of the kernel on a uniform grid.

    cell[m] = integral of a(.) over lag in [(m-1)dt, m dt] for m >= 1
    (cell[0] = 0), so the product-integration weight for target node k and
    source cell j is w[k][j] = cell[k-j].  Row sums telescope to
    kernel_mass(t_k) by construction.
    """

    params: FracParams
    grid: TimeGrid
    cell: np.ndarray = field(repr=False)

    def row(self, k):
        """Weights w[k][j] for j = 0..k-1 (zero-length for k = 0)."""
        if not 0 <= k <= self.grid.n:
            raise DomainError(f"node index {k} outside grid")
        return self.cell[k:0:-1].copy()

    def matrix(self):
        """Dense (n+1, n) weight matrix; w[k, j] = 0 for j >= k."""
        n = self.grid.n
        w = np.zeros((n + 1, n))
        for k in range(1, n + 1):
            w[k, :k] = self.cell[k:0:-1]
        return w

    def row_sums(self):
        return np.concatenate([[0.0], np.cumsum(self.cell[1:])])


def build_weights(p: FracParams, grid: TimeGrid) -> KernelWeights:
    """Closed-form product-integration weights on a uniform grid.

    Each cell integral is a difference of regularized incomplete gamma
    values, so the lag-zero singularity is integrated exactly rather than
    through a midpoint rule.  Nodes left of the series/continued-fraction
    switch use lower-gamma differences, nodes right of it upper-gamma
    differences: P saturates at 1 for large argument and naive differencing
    there would cancel to noise.
    """
    x = p.varrho * grid.times  # gamma arguments at the nodes
    a = p.alpha
    pv = reg_lower_gamma(a, x)
    qv = reg_upper_gamma(a, x)
    small = x < a + 1.0
    diff = np.empty(grid.n + 1)
    diff[0] = 0.0
    for m in range(1, grid.n + 1):
        if small[m]:
            diff[m] = pv[m] - pv[m - 1]
        elif not small[m - 1]:
            diff[m] = qv[m - 1] - qv[m]
        else:  # cell straddling the switch
            diff[m] = (1.0 - qv[m]) - pv[m - 1]
    cell = p.varrho ** (-a) * diff
    return KernelWeights(params=p, grid=grid, cell=cell)


def series_ratio(p: FracParams, L):
    """Geometric ratio q = 6 L 2^alpha / varrho^(2 alpha) of the a-priori bound."""
    if L < 0:
        raise ParameterError("L must be nonnegative")
    return 6.0 * L * 2.0**p.alpha / p.varrho ** (2.0 * p.alpha)


def series_bound(p: FracParams, L, M2, Ex0sq, t):
    """Mean-square a-priori bound (3 e^{-varrho t/2} E||x0||^2 + M2) * (1 + q/(1-q)).

    Returns None ("inapplicable") when the geometric ratio q >= 1, i.e. when
    the decay rate is not large enough for the series to converge.  That is
    a value of the contract, not an error.
    """
    if M2 < 0 or Ex0sq < 0:
        raise ParameterError("M2 and Ex0sq must evaluate nonnegative")
    q = series_ratio(p, L)
    if q >= 1.0:
        return None
    multiplier = 1.0 + q / (1.0 - q)
    t_arr = np.asarray(t, dtype=float)
    val = (3.0 * np.exp(-0.5 * p.varrho * t_arr) * Ex0sq + M2) * multiplier
    return float(val) if np.ndim(t) == 0 else val
