"""Pathwise solution of the memory-kernel Volterra dynamics on a grid, the
shift-and-integrate cocycle operator, and the skew-product map over the
driving system.

The update is an explicit product-integration scheme: exact cell integrals
of the kernel against a left-point evaluation of the field, plus the
discrete stochastic convolution with per-cell kernel averages,

    x_k = f(t_k) + sum_{j<k} w[k][j] g(x_j, orbit_j) + sum_{j<k} (w[k][j]/dt) dB_j,

so x_k depends only on x_j with j < k (causality is structural) and the
noise coupling matches the isometry quadrature used for the convolution
second moment, which makes the two mutually checkable.
"""

from dataclasses import dataclass, field as dfield

import numpy as np

from .core import SamplePath, TimeGrid
from .driving import BasePoint, DrivingSystem, dist
from .errors import DivergenceError, DomainError, GridError
from .frac_kernel import FracParams, build_weights
from .util import causal_convolve, single_thread_blas

DIVERGENCE_LIMIT = 1e12


@dataclass(frozen=True)
class VectorField:
    """Autonomous field g(x, p) with declared mean-square Lipschitz constant.

    func(x, angle) must broadcast: x has shape (..., d) and angle is a scalar
    or an array broadcastable against x[..., 0].  lip is the constant L in
    E||g(x,p)-g(y,q)||^2 <= L E||x-y||^2 + L d_P(p,q)^2; g_zero is the field
    value at the origin and the reference base point (angle 0).
    """

    name: str
    func: object
    lip: float
    g_zero: np.ndarray

    def __call__(self, x, angle):
        return self.func(x, angle)


def zero_field(d=1):
    return VectorField("zero", lambda x, ang: np.zeros_like(x), 0.0, np.zeros(d))


def constant_field(value, d=1):
    vec = np.full(d, float(value))

    def func(x, ang):
        return np.broadcast_to(vec, x.shape).copy()

    return VectorField("constant", func, 0.0, vec)


def linear_decay_field(kappa, d=1):
    """g(x, p) = -kappa x; the mean-square Lipschitz constant is kappa^2."""
    kappa = float(kappa)

    def func(x, ang):
        return -kappa * x

    return VectorField("linear", func, kappa**2, np.zeros(d))


def rotation_forced_field(amp, d=1):
    """g(x, p) = amp * sin(angle(p)) in every component; L = amp^2 since the
    sine is 1-Lipschitz for the arc metric."""
    amp = float(amp)

    def func(x, ang):
        forcing = amp * np.sin(np.asarray(ang, dtype=float))[..., None]
        return np.broadcast_to(forcing, x.shape).copy()

    return VectorField("rotation", func, amp**2, np.full(d, 0.0))


def lipschitz_violation(field: VectorField, rng, trials=256, d=1, scale=5.0):
    """Largest violation of the declared mean-square Lipschitz inequality on
    random pairs; nonpositive (up to slack) for an honestly declared field."""
    worst = -np.inf
    for _ in range(trials):
        x = scale * rng.standard_normal(d)
        y = scale * rng.standard_normal(d)
        p = BasePoint(rng.uniform(0, 2 * np.pi))
        q = BasePoint(rng.uniform(0, 2 * np.pi))
        lhs = float(np.sum((field(x, p.angle) - field(y, q.angle)) ** 2))
        rhs = field.lip * (float(np.sum((x - y) ** 2)) + dist(p, q) ** 2)
        worst = max(worst, lhs - rhs)
    return worst


@dataclass(frozen=True)
class CocycleState:
    """Function-space state: a path tabulated on a grid plus a base point."""

    grid: TimeGrid
    values: np.ndarray = dfield(repr=False)
    base: BasePoint = BasePoint(0.0)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != self.grid.n + 1:
            raise GridError("state values do not match the grid")
        if not np.all(np.isfinite(vals)):
            raise DomainError("state values must be finite at every node")
        object.__setattr__(self, "values", vals)

    @property
    def dim(self):
        return self.values.shape[1]


def exp_decay_state(p: FracParams, x0, grid: TimeGrid, base=BasePoint(0.0)) -> CocycleState:
    """Initial-value forcing f(t) = x0 e^(-varrho t) tabulated on the grid."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    vals = x0[None, :] * np.exp(-p.varrho * grid.times)[:, None]
    return CocycleState(grid=grid, values=vals, base=base)


def _as_noise(noise, n, d):
    if noise is None:
        return None
    arr = np.asarray(noise, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :, None]
    elif arr.ndim == 2:
        arr = arr[None, :, :]
    if arr.shape[1] != n or arr.shape[2] != d:
        raise GridError(
            f"noise increments have shape {arr.shape[1:]}, expected ({n}, {d})"
        )
    return arr


def forced_solve(field: VectorField, f_vals, angles, cell, dt, noise=None, conv=None):
    """Core explicit scheme, vectorized over a replicate axis.

    Parameters
    ----------
    f_vals : ndarray, (n+1, d) or (R, n+1, d)
        Forcing tabulated on the grid.
    angles : ndarray, (n,)
        Driving orbit at cell left endpoints.
    cell : ndarray
        Kernel cell integrals; cell[m] covers lag [(m-1)dt, m dt].
    noise : ndarray, (R, n, d) or None
        Increments; None drops the stochastic convolution entirely.
    conv : ndarray, (R, n+1, d), optional
        Precomputed discrete stochastic convolution (skips the FFT pass).

    Returns
    -------
    ndarray, (R, n+1, d)
    """
    f_vals = np.asarray(f_vals, dtype=float)
    squeeze = f_vals.ndim == 2
    n = f_vals.shape[-2] - 1
    d = f_vals.shape[-1]
    if noise is not None and conv is None:
        conv = causal_convolve(cell[1 : n + 1] / dt, noise)
    reps = 1
    if conv is not None:
        reps = conv.shape[0]
    if f_vals.ndim == 3:
        reps = max(reps, f_vals.shape[0])
        squeeze = False

    crev = np.ascontiguousarray(cell[n::-1])  # crev[i] = cell[n - i]
    x = np.empty((reps, n + 1, d))
    x[:, 0, :] = f_vals[..., 0, :]
    gbuf = np.empty((n, reps * d)) if n > 0 else None
    with single_thread_blas():
        for k in range(1, n + 1):
            gk = np.asarray(field(x[:, k - 1, :], angles[k - 1]), dtype=float)
            gbuf[k - 1] = np.broadcast_to(gk, (reps, d)).ravel()
            s = crev[n - k : n] @ gbuf[:k]
            xk = f_vals[..., k, :] + s.reshape(reps, d)
            if conv is not None:
                xk = xk + conv[:, k, :]
            norms_sq = np.sum(xk * xk, axis=-1)
            if not np.max(norms_sq) <= DIVERGENCE_LIMIT**2:  # catches NaN as well
                bad = np.where(~(norms_sq <= DIVERGENCE_LIMIT**2))[0]
                raise DivergenceError(
                    f"solution diverged at node {k} (t={k * dt:g}) in replicates "
                    f"{bad.tolist()[:16]}",
                    node=k,
                    replicates=bad.tolist(),
                )
            x[:, k, :] = xk
    return x


def _prepare(p, grid, weights):
    if weights is None:
        weights = build_weights(p, grid)
    elif weights.grid.dt != grid.dt or weights.grid.n < grid.n:
        raise GridError("kernel weights do not cover the requested grid")
    return weights


def solve_fsde(
    p: FracParams,
    field: VectorField,
    x0,
    p0: BasePoint,
    sys: DrivingSystem,
    grid: TimeGrid,
    noise=None,
    weights=None,
) -> SamplePath:
    """Solve the initial-value dynamics with forcing x0 e^(-varrho t).

    noise holds the sampled increments on the same grid, shape (n, d); None
    runs the deterministic part only (used by oracle tests).
    """
    weights = _prepare(p, grid, weights)
    state = exp_decay_state(p, x0, grid, base=p0)
    return solve_volterra(p, field, state, sys, noise=noise, weights=weights)


def solve_volterra(
    p: FracParams,
    field: VectorField,
    state: CocycleState,
    sys: DrivingSystem,
    noise=None,
    weights=None,
) -> SamplePath:
    """Solve the forced equation with tabulated forcing f = state.values.

    Reduces exactly (bit-for-bit, same code path) to solve_fsde when the
    forcing is x0 e^(-varrho t).
    """
    grid = state.grid
    weights = _prepare(p, grid, weights)
    d = state.dim
    noise_arr = _as_noise(noise, grid.n, d)
    angles = sys.orbit_angles(state.base, grid.times[:-1])
    x = forced_solve(field, state.values, angles, weights.cell, grid.dt, noise=noise_arr)
    return SamplePath(grid=grid, values=x[0], noise_id=None)


def cocycle_ensemble(
    field: VectorField,
    f_vals,
    base: BasePoint,
    sys: DrivingSystem,
    grid: TimeGrid,
    k_tau,
    theta_idx,
    cell,
    noise=None,
    conv=None,
):
    """Shift-and-integrate operator evaluated at grid-aligned offsets.

    out[.., i, :] = f(tau + theta_i) + sum_{j<k_tau} cell[K_i - j] g(x_f(t_j), orbit_j)
                  + sum_{j<k_tau} (cell[K_i - j]/dt) dB_j,  K_i = k_tau + theta_idx[i],

    where x_f solves the forced equation on the tau-prefix with the same
    noise.  f_vals may carry a replicate axis; noise has shape (R, k_tau, d).
    """
    f_vals = np.asarray(f_vals, dtype=float)
    d = f_vals.shape[-1]
    theta_idx = np.asarray(theta_idx, dtype=int)
    if k_tau + int(theta_idx.max(initial=0)) > grid.n:
        raise DomainError("offset grid extends beyond the forcing domain")
    if k_tau == 0:
        out = f_vals[..., theta_idx, :]
        if out.ndim == 2:
            out = out[None, ...]
        return np.ascontiguousarray(out)

    angles = sys.orbit_angles(base, grid.times[:k_tau])
    x = forced_solve(
        field,
        f_vals[..., : k_tau + 1, :],
        angles,
        cell,
        grid.dt,
        noise=noise,
        conv=None if conv is None else conv[:, : k_tau + 1, :],
    )
    g = np.asarray(field(x[:, :k_tau, :], angles), dtype=float)
    g = np.broadcast_to(g, x[:, :k_tau, :].shape)

    j = np.arange(k_tau)
    om = cell[k_tau + theta_idx[:, None] - j[None, :]]  # (n_theta, k_tau)
    with single_thread_blas():
        gpart = np.tensordot(om, g, axes=([1], [1]))  # (n_theta, R, d)
        out = f_vals[..., k_tau + theta_idx, :] + gpart.transpose(1, 0, 2)
        if noise is not None:
            npart = np.tensordot(om / grid.dt, noise, axes=([1], [1]))
            out = out + npart.transpose(1, 0, 2)
    return out


def cocycle_apply(
    p: FracParams,
    field: VectorField,
    state: CocycleState,
    sys: DrivingSystem,
    tau,
    thetas,
    noise=None,
    weights=None,
):
    """Evaluate the cocycle at shift tau and offsets thetas (all grid nodes).

    Returns the tabulated function values, shape (len(thetas), d).  tau and
    every tau + theta must be nodes of the state grid; off-node requests
    raise instead of interpolating so shift identities stay exact.
    """
    grid = state.grid
    weights = _prepare(p, grid, weights)
    k_tau = grid.index(tau)
    theta_idx = grid.indices(thetas)
    if k_tau + int(theta_idx.max(initial=0)) > grid.n:
        raise DomainError("tau + theta extends beyond the tabulated forcing")
    noise_arr = _as_noise(noise, k_tau, state.dim) if k_tau > 0 else None
    out = cocycle_ensemble(
        field,
        state.values,
        state.base,
        sys,
        grid,
        k_tau,
        theta_idx,
        weights.cell,
        noise=noise_arr,
    )
    return out[0]


def skew_product(
    p: FracParams,
    field: VectorField,
    sys: DrivingSystem,
    state: CocycleState,
    tau,
    noise=None,
    weights=None,
) -> CocycleState:
    """One step of the skew-product map: (cocycle shift of f, rotated base).

    The returned state lives on the remaining grid [0, horizon - tau];
    tau = 0 is the identity and tau must leave at least one grid step.
    """
    grid = state.grid
    k_tau = grid.index(tau)
    if k_tau == 0:
        return state
    if k_tau >= grid.n:
        raise DomainError("shift must leave a nonempty remaining horizon")
    theta_idx = np.arange(grid.n - k_tau + 1)
    weights = _prepare(p, grid, weights)
    noise_arr = _as_noise(noise, k_tau, state.dim)
    vals = cocycle_ensemble(
        field,
        state.values,
        state.base,
        sys,
        grid,
        k_tau,
        theta_idx,
        weights.cell,
        noise=noise_arr,
    )[0]
    new_grid = TimeGrid.from_steps(grid.n - k_tau, grid.dt)
    return CocycleState(grid=new_grid, values=vals, base=sys.flow(tau, state.base))
