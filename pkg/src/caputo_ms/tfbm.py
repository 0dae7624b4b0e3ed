"""Tempered fractional Gaussian noise: covariance density, increment
covariance matrices via the isometry, exact Gaussian path sampling, and the
second moment of the kernel-noise convolution by quadrature and by a
spectral (Fourier) route.

The covariance density of the noise with Hurst index H and tempering rate
lambda is, as a function of the gap g = |t - s|,

    phi(g) = (H-1/2)^2 J1 - lambda^2 J2,
    J1 = e^{-lambda g} int_0^inf tau^{H-3/2} (g+tau)^{H-3/2} e^{-2 lambda tau} dtau,
    J2 = e^{-lambda g} int_0^inf tau^{H-1/2} (g+tau)^{H-1/2} e^{-2 lambda tau} dtau,

so that E||int f dB||^2 = iint f(s) f(r) phi(|s-r|) ds dr for deterministic f.
phi diverges like g^{2H-2} on the diagonal and can be *negative* at moderate
gaps when lambda > 0 (tempering induces anticorrelation); at lambda = 0 it
collapses to the exact power law (H-1/2)^2 B(H-1/2, 2-2H) g^{2H-2}.
"""

import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline
from scipy.linalg import toeplitz

from .core import SamplePath, TimeGrid
from .errors import DomainError, NumericsError, ParameterError
from .frac_kernel import FracParams, reg_lower_gamma
from .util import dyadic_edges, panel_nodes, single_thread_blas

_QUAD_OPTS = dict(epsabs=0.0, epsrel=1e-11, limit=300)


@dataclass(frozen=True)
class NoiseParams:
    """Hurst index H in (1/2, 1) and tempering rate lambda >= 0.

    lambda = 0 is admitted only as the untempered (pure fractional) limit
    used for closed-form validation; the dynamics assume lambda > 0.
    """

    hurst: float
    lam: float

    def __post_init__(self):
        if not 0.5 < self.hurst < 1.0:
            raise ParameterError(f"hurst must lie in (1/2, 1), got {self.hurst}")
        if self.lam < 0:
            raise ParameterError(f"lambda must be nonnegative, got {self.lam}")


def _quad2(f, a, b):
    out = integrate.quad(f, a, b, full_output=1, **_QUAD_OPTS)
    return out[0], out[1]


def phi_eval(n: NoiseParams, gap, rtol=1e-8):
    """Covariance density as a function of the gap |t - s|.

    Both semi-infinite integrals are mapped to finite smooth ones: the
    tau^{H-3/2} endpoint singularity by the substitution u = tau^{H-1/2},
    the algebraic tail by tau -> gap/v followed by w = v^{2-2H}, and the
    exponential tail of the second integral by tau = c - log(v)/(2 lambda).

    Raises NumericsError when the accumulated quadrature error estimate
    exceeds rtol relative to the result; near the density's zero crossings
    (the two terms cancel) the tolerance falls back to an absolute floor of
    1e-11 times the constituent magnitude, since relative accuracy at an
    isolated zero is meaningless.
    """
    g = float(gap)
    if g < 0:
        raise DomainError("gap must be nonnegative")
    H, lam = n.hurst, n.lam
    a = H - 0.5
    if g == 0.0:
        if lam == 0.0:
            raise DomainError("gap must be positive in the untempered limit")
        return math.inf  # density diverges like gap^(2H-2) on the diagonal

    # J1 head over tau in [0, g]: u = tau^a removes the singularity.
    head, e_head = _quad2(
        lambda u: (g + u ** (1.0 / a)) ** (a - 1.0) * np.exp(-2.0 * lam * u ** (1.0 / a)) / a,
        0.0,
        g**a,
    )
    # J1 tail over tau in [g, inf): tau = g/v, then w = v^{1-2a}.
    b = 1.0 - 2.0 * a  # = 2 - 2H in (0, 1)
    tail, e_tail = _quad2(
        lambda w: (1.0 + w ** (1.0 / b)) ** (a - 1.0)
        * np.exp(-2.0 * lam * g * w ** (-1.0 / b))
        / b,
        0.0,
        1.0,
    )
    j1 = head + g ** (2.0 * a - 1.0) * tail
    err = a * a * (e_head + g ** (2.0 * a - 1.0) * e_tail)
    ref = a * a * j1

    j2 = 0.0
    if lam > 0.0:
        c = max(g, 0.5 / lam)
        h1, e1 = _quad2(
            lambda t: t**a * (g + t) ** a * np.exp(-2.0 * lam * t), 0.0, c
        )
        two_lam = 2.0 * lam
        h2, e2 = _quad2(
            lambda v: (c - np.log(v) / two_lam) ** a * (g + c - np.log(v) / two_lam) ** a,
            0.0,
            1.0,
        )
        scale = math.exp(-two_lam * c) / two_lam
        j2 = h1 + scale * h2
        err += lam * lam * (e1 + scale * e2)
        ref += lam * lam * j2

    val = math.exp(-lam * g) * (a * a * j1 - lam * lam * j2)
    err *= math.exp(-lam * g)
    if err > max(rtol * abs(val), 1e-11 * math.exp(-lam * g) * ref):
        raise NumericsError(
            f"covariance density quadrature did not converge: gap={g}, H={H}, "
            f"lambda={lam}, value={val:.6g}, error estimate={err:.2e}"
        )
    return val


def phi_upper_bound(n: NoiseParams, gap):
    """Power-law envelope (H-1/2)^2 B(H-1/2, 2-2H) gap^(2H-2).

    Dominates phi_eval for every lambda > 0 and equals it at lambda = 0.
    """
    g_arr = np.asarray(gap, dtype=float)
    if np.any(g_arr <= 0):
        raise DomainError("gap must be positive")
    H = n.hurst
    a = H - 0.5
    const = a * a * _beta(a, 2.0 - 2.0 * H)
    val = const * g_arr ** (2.0 * H - 2.0)
    return float(val) if np.ndim(gap) == 0 else val


def _beta(x, y):
    return math.exp(math.lgamma(x) + math.lgamma(y) - math.lgamma(x + y))


class PhiProfile:
    """Tabulated smooth remainder psi(u) = phi(u) u^(2-2H) on a log grid.

    psi is bounded (psi(0+) = (H-1/2)^2 B(H-1/2, 2-2H)) and analytic in
    log(u), so a cubic spline in log(u) reproduces phi to ~1e-8 relative
    while costing one spline evaluation instead of four quadratures. Used
    by the covariance assembly and convolution quadrature, which need
    thousands of density values per grid.
    """

    def __init__(self, params: NoiseParams, u_lo, u_hi, per_efold=24):
        self.params = params
        self.u_lo = float(u_lo)
        self.u_hi = float(u_hi)
        x_lo, x_hi = math.log(u_lo), math.log(u_hi)
        count = max(512, int(per_efold * (x_hi - x_lo)) + 1)
        xs = np.linspace(x_lo, x_hi, count)
        us = np.exp(xs)
        pw = 2.0 - 2.0 * params.hurst
        psi = np.array([phi_eval(params, u) * u**pw for u in us])
        self._spline = CubicSpline(xs, psi)
        self._x_lo = x_lo
        self._x_hi = x_hi

    def psi(self, u):
        u_arr = np.asarray(u, dtype=float)
        if np.any(u_arr > self.u_hi * (1.0 + 1e-9)):
            raise DomainError("gap beyond tabulated profile range")
        x = np.log(np.maximum(u_arr, self.u_lo))
        return self._spline(np.clip(x, self._x_lo, self._x_hi))

    def phi(self, u):
        u_arr = np.asarray(u, dtype=float)
        return u_arr ** (2.0 * self.params.hurst - 2.0) * self.psi(u_arr)


_PROFILE_CACHE: dict = {}
_PROFILE_LOCK = threading.Lock()


def phi_profile(params: NoiseParams, u_max) -> PhiProfile:
    """Process-wide cached profile covering gaps up to u_max.

    The range bucket has a generous floor so that every grid and horizon in
    one session shares a single tabulation per noise-parameter pair.
    """
    bucket = max(16.0, 2.0 ** math.ceil(math.log2(float(u_max))))
    key = (params.hurst, params.lam, bucket)
    with _PROFILE_LOCK:
        prof = _PROFILE_CACHE.get(key)
    if prof is None:
        prof = PhiProfile(params, u_lo=bucket * 2.0**-60, u_hi=bucket)
        with _PROFILE_LOCK:
            _PROFILE_CACHE[key] = prof
    return prof


@dataclass(frozen=True)
class IncrementCovariance:
    """Covariance of the grid increments Delta B_i = B(t_{i+1}) - B(t_i).

    cov[i][j] is the cell-pair integral of the covariance density; the
    matrix is Toeplitz (stationary increments) and factorized as
    factor @ factor.T (lower Cholesky, with the recorded diagonal jitter
    if plain factorization failed).
    """

    params: NoiseParams
    grid: TimeGrid
    first_row: np.ndarray = field(repr=False)
    cov: np.ndarray = field(repr=False)
    factor: np.ndarray = field(repr=False)
    jitter: float = 0.0

    def path_variance(self, k):
        """Var(B(t_k)) = sum of the leading k x k covariance block."""
        if not 0 <= k <= self.grid.n:
            raise DomainError(f"node index {k} outside grid")
        return float(np.sum(self.cov[:k, :k]))


def _singular_head_integrals(prof: PhiProfile, dt, levels=30, order=8):
    """(S0, S1) = (int_0^dt (dt-u) phi du, int_0^dt u phi du).

    The gap-zero singularity is handled by integrating the u^(2H-2) factor
    against the smooth remainder: dyadic panels refine geometrically toward
    zero (the factor is analytic within each panel) and the sub-cutoff mass
    below dt 2^-levels is added in closed form with the remainder frozen at
    its cutoff value.
    """
    H = prof.params.hurst
    edges = dyadic_edges(dt, levels)
    nodes, wts = panel_nodes(edges, order)
    ph = prof.phi(nodes)
    s0 = float(np.sum(wts * (dt - nodes) * ph))
    s1 = float(np.sum(wts * nodes * ph))
    u_min = dt * 0.5**levels
    psi_m = float(prof.psi(u_min))
    # integral of u^(2H-2) (dt - u) and u^(2H-1) below the cutoff
    s0 += psi_m * (dt * u_min ** (2 * H - 1) / (2 * H - 1) - u_min ** (2 * H) / (2 * H))
    s1 += psi_m * u_min ** (2 * H) / (2 * H)
    return s0, s1


def increment_cov(n: NoiseParams, grid: TimeGrid, jitter_start=1e-12, jitter_max=1e-8):
    """Increment covariance on a uniform grid, factorized for sampling.

    Entry (i, j) depends on m = |i - j| only and reduces to a hat-weighted
    gap integral: c(0) = 2 int_0^dt (dt-u) phi(u) du and, for m >= 1,
    c(m) = int (dt - |u - m dt|) phi(u) du over [(m-1) dt, (m+1) dt].
    Panels never straddle the hat kink or the gap-zero singularity, so
    fixed-order Gauss-Legendre is exponentially accurate; if plain Cholesky
    fails, diagonal jitter starting at jitter_start * max diag escalates
    tenfold up to jitter_max * max diag before giving up.
    """
    nn, dt = grid.n, grid.dt
    prof = phi_profile(n, grid.horizon + dt)
    c = np.zeros(nn)
    s0, s1 = _singular_head_integrals(prof, dt)
    c[0] = 2.0 * s0
    if nn >= 2:
        edges = np.array([[dt, 2 * dt]])
        nodes, wts = panel_nodes(edges, 16)
        c[1] = s1 + float(np.sum(wts * (2 * dt - nodes) * prof.phi(nodes)))
    if nn >= 3:
        m = np.arange(2, nn)
        left = np.column_stack([(m - 1) * dt, m * dt])
        right = np.column_stack([m * dt, (m + 1) * dt])
        ln, lw = panel_nodes(left, 16)
        rn, rw = panel_nodes(right, 16)
        hat_l = dt - np.abs(ln - m[:, None] * dt)
        hat_r = dt - np.abs(rn - m[:, None] * dt)
        c[2:] = np.sum(lw * hat_l * prof.phi(ln), axis=1) + np.sum(
            rw * hat_r * prof.phi(rn), axis=1
        )

    cov = toeplitz(c)
    max_diag = float(np.max(np.diag(cov)))
    jitter = 0.0
    with single_thread_blas():
        while True:
            try:
                factor = np.linalg.cholesky(cov + jitter * np.eye(nn))
                break
            except np.linalg.LinAlgError:
                jitter = jitter_start * max_diag if jitter == 0.0 else jitter * 10.0
                if jitter > jitter_max * max_diag:
                    raise NumericsError(
                        f"increment covariance not factorizable within jitter "
                        f"{jitter_max:g} * max diag (n={nn}, dt={dt})"
                    )
    return IncrementCovariance(
        params=n, grid=grid, first_row=c, cov=cov, factor=factor, jitter=jitter
    )


_COV_CACHE: dict = {}
_COV_LOCK = threading.Lock()


def increment_cov_cached(n: NoiseParams, grid: TimeGrid) -> IncrementCovariance:
    """Memoized increment_cov; covariances are immutable and shared read-only."""
    key = (n.hurst, n.lam, grid.dt, grid.n)
    with _COV_LOCK:
        cov = _COV_CACHE.get(key)
    if cov is None:
        cov = increment_cov(n, grid)
        with _COV_LOCK:
            if len(_COV_CACHE) > 8:
                _COV_CACHE.clear()
            _COV_CACHE[key] = cov
    return cov


def sample_increments(cov: IncrementCovariance, reps, seed, d=1, first_rep=0, stream=None):
    """Exact Gaussian increments, shape (reps, n, d).

    Replicate r draws its own generator keyed by (seed, first_rep + r), so a
    given replicate's increments are identical regardless of how the work is
    chunked across workers; coordinates are independent copies of the same
    scalar noise.  stream, when given, keys an independent noise family for
    the same (seed, replicate) pair (used by staged ensembles).
    """
    if reps < 1:
        raise ParameterError("reps must be at least 1")
    nn = cov.grid.n
    cols = np.empty((nn, reps * d))
    for r in range(reps):
        entropy = (
            [int(seed), int(first_rep + r)]
            if stream is None
            else [int(seed), int(stream), int(first_rep + r)]
        )
        rng = np.random.default_rng(entropy)
        cols[:, r * d : (r + 1) * d] = rng.standard_normal((nn, d))
    with single_thread_blas():
        inc = cov.factor @ cols
    return np.ascontiguousarray(inc.reshape(nn, reps, d).transpose(1, 0, 2))


def sample_paths(cov: IncrementCovariance, reps, seed, d=1):
    """Sampled noise paths B(t_k) = sum of increments, as SamplePath objects."""
    inc = sample_increments(cov, reps, seed, d=d)
    nn = cov.grid.n
    vals = np.zeros((reps, nn + 1, d))
    np.cumsum(inc, axis=1, out=vals[:, 1:, :])
    return [
        SamplePath(grid=cov.grid, values=vals[r], noise_id=(int(seed), r))
        for r in range(reps)
    ]


def convolution_variance(p: FracParams, n: NoiseParams, t, profile=None):
    """Second moment of the kernel-noise convolution at time t (scalar case).

    Computes iint_{[0,t]^2} a(t,s) a(t,r) phi(|s-r|) ds dr by reducing to the
    gap variable: V = 2 int_0^t phi(u) G(u) du with
    G(u) = int_0^{t-u} a(v+u) a(v) dv.  Both the kernel endpoint singularity
    (in G) and the diagonal density singularity (in the outer integral) sit
    at panel edges of geometrically refined partitions.
    """
    t = float(t)
    if t < 0:
        raise DomainError("time must be nonnegative")
    if t == 0.0:
        return 0.0
    prof = profile if profile is not None else phi_profile(n, t * 1.001)
    alpha, rho = p.alpha, p.varrho
    H = n.hurst
    inv_g2 = 1.0 / math.gamma(alpha) ** 2
    lev_u, lev_v, order = 40, 40, 8

    u_edges = dyadic_edges(t, lev_u)
    u_nodes, u_wts = panel_nodes(u_edges, order)
    uu = u_nodes.ravel()
    uw = u_wts.ravel()

    # G(u) for every outer node: inner panels refine toward v = 0.
    g_vals = np.empty_like(uu)
    for i, u in enumerate(uu):
        span = t - u
        if span <= 0:
            g_vals[i] = 0.0
            continue
        v_edges = dyadic_edges(span, lev_v)
        v_nodes, v_wts = panel_nodes(v_edges, order)
        integ = (
            v_nodes ** (alpha - 1.0)
            * (v_nodes + u) ** (alpha - 1.0)
            * np.exp(-rho * (u + 2.0 * v_nodes))
        )
        g = float(np.sum(v_wts * integ))
        v_min = span * 0.5**lev_v
        g += u ** (alpha - 1.0) * math.exp(-rho * u) * v_min**alpha / alpha
        g_vals[i] = inv_g2 * g

    val = 2.0 * float(np.sum(uw * prof.phi(uu) * g_vals))
    # sub-cutoff outer mass with the remainder and G frozen at the cutoff
    u_min = t * 0.5**lev_u
    g0 = inv_g2 * (2.0 * rho) ** (1.0 - 2.0 * alpha) * math.gamma(
        2.0 * alpha - 1.0
    ) * reg_lower_gamma(2.0 * alpha - 1.0, 2.0 * rho * t)
    val += 2.0 * float(prof.psi(u_min)) * g0 * u_min ** (2 * H - 1) / (2 * H - 1)
    return val


@dataclass(frozen=True)
class SquaredKernelMemory:
    """Both evaluations of the doubly tempered kernel-pair integral
    iint s^(alpha-1) r^(alpha-1) e^(-rho s) e^(-rho r) |s-r|^(2H-2) ds dr."""

    time_domain: float
    spectral: float


def m_rho_alpha_h(p: FracParams, n: NoiseParams, rtol=1e-4) -> SquaredKernelMemory:
    """Time-domain and spectral evaluations of the kernel-pair memory integral.

    The time-domain route truncates both axes at rho*t = 40 (truncation error
    below e^-40 relative) and uses the same geometric panel scheme as the
    convolution quadrature.  The spectral route uses the Fourier pair of the
    power-law gap factor,

        |u|^(2H-2)  <->  2 Gamma(2H-1) sin(pi H) |xi|^(1-2H),

    which after dividing by 2 pi gives the Plancherel constant
    c_H = Gamma(2H-1) sin(pi H) / pi, together with the transform
    Gamma(alpha) (rho + i xi)^(-alpha) of the one-sided tempered kernel:

        spectral = c_H Gamma(alpha)^2 int |xi|^(1-2H) (rho^2 + xi^2)^(-alpha) dxi.

    Disagreement beyond rtol raises (it would signal a constant or
    quadrature bug, since the two routes are independent).
    """
    if not 0.5 < p.alpha < 1.0:
        raise ParameterError("time-domain/spectral comparison requires alpha in (1/2, 1)")
    alpha, rho, H = p.alpha, p.varrho, n.hurst
    U = 40.0 / rho
    lev, order = 40, 8

    u_edges = dyadic_edges(U, lev)
    u_nodes, u_wts = panel_nodes(u_edges, order)
    uu = u_nodes.ravel()
    uw = u_wts.ravel()

    s_edges = dyadic_edges(U, lev)
    s_nodes, s_wts = panel_nodes(s_edges, order)
    ss = s_nodes.ravel()
    sw = s_wts.ravel()
    base = ss ** (alpha - 1.0) * np.exp(-2.0 * rho * ss) * sw
    # K(u) = int_0^U s^(a-1) (s+u)^(a-1) e^(-2 rho s) ds for all outer nodes
    k_vals = (ss[None, :] + uu[:, None]) ** (alpha - 1.0) @ base
    s_min = U * 0.5**lev
    k_vals += uu ** (alpha - 1.0) * s_min**alpha / alpha

    td = 2.0 * float(np.sum(uw * uu ** (2 * H - 2.0) * np.exp(-rho * uu) * k_vals))
    u_min = U * 0.5**lev
    k0 = (2.0 * rho) ** (1.0 - 2.0 * alpha) * math.gamma(2.0 * alpha - 1.0) * reg_lower_gamma(
        2.0 * alpha - 1.0, 2.0 * rho * U
    )
    td += 2.0 * k0 * u_min ** (2 * H - 1) / (2 * H - 1)

    c_h = math.gamma(2.0 * H - 1.0) * math.sin(math.pi * H) / math.pi
    pw = 2.0 - 2.0 * H
    head, _ = _quad2(
        lambda w: (rho**2 + w ** (2.0 / pw)) ** (-alpha) / pw, 0.0, rho**pw
    )
    gam = 2.0 * H + 2.0 * alpha - 2.0
    tail, _ = _quad2(
        lambda z: (1.0 + rho**2 * z ** (2.0 / gam)) ** (-alpha) / gam,
        0.0,
        rho ** (-gam),
    )
    spectral = c_h * math.gamma(alpha) ** 2 * 2.0 * (head + tail)

    if abs(td - spectral) > rtol * abs(spectral):
        raise NumericsError(
            f"time-domain ({td:.8g}) and spectral ({spectral:.8g}) evaluations "
            f"disagree beyond rtol={rtol} (alpha={alpha}, H={H}, rho={rho})"
        )
    return SquaredKernelMemory(time_domain=td, spectral=spectral)
