"""Shared value types: the uniform time grid and sampled paths on it."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, GridError

_ALIGN_TOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k*dt, k = 0..n, covering [0, horizon].

    The horizon must be an integer multiple of dt; everything downstream
    (kernel weights, covariance rows, cocycle shifts) relies on node
    alignment, so off-grid requests raise instead of interpolating.
    """

    horizon: float
    dt: float
    n: int = field(init=False)

    def __post_init__(self):
        if self.dt <= 0:
            raise GridError(f"dt must be positive, got {self.dt}")
        if self.horizon <= 0:
            raise GridError(f"horizon must be positive, got {self.horizon}")
        ratio = self.horizon / self.dt
        n = int(round(ratio))
        if n < 1 or abs(ratio - n) > _ALIGN_TOL * max(1.0, ratio):
            raise GridError(
                f"horizon {self.horizon} is not an integer multiple of dt {self.dt}"
            )
        object.__setattr__(self, "n", n)

    @classmethod
    def from_steps(cls, n, dt):
        return cls(horizon=n * dt, dt=dt)

    @property
    def times(self):
        return np.arange(self.n + 1) * self.dt

    def index(self, t):
        """Node index of t; DomainError if t is off-grid or outside [0, horizon]."""
        k = int(round(t / self.dt))
        if abs(t - k * self.dt) > _ALIGN_TOL * max(1.0, abs(t)):
            raise DomainError(f"time {t} is not a node of the grid (dt={self.dt})")
        if k < 0 or k > self.n:
            raise DomainError(f"time {t} outside the grid horizon {self.horizon}")
        return k

    def indices(self, ts):
        return np.array([self.index(t) for t in np.atleast_1d(ts)], dtype=int)

    def prefix(self, k):
        """Sub-grid covering the first k steps."""
        if not 1 <= k <= self.n:
            raise GridError(f"prefix length {k} outside 1..{self.n}")
        return TimeGrid.from_steps(k, self.dt)


@dataclass(frozen=True)
class SamplePath:
    """One d-dimensional realization tabulated on a TimeGrid.

    values has shape (n+1, d); values[0] is the initial condition for
    initial-value runs.
    """

    grid: TimeGrid
    values: np.ndarray
    noise_id: object = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != self.grid.n + 1:
            raise GridError(
                f"values ({vals.shape[0]} nodes) do not match grid ({self.grid.n + 1} nodes)"
            )
        object.__setattr__(self, "values", vals)

    @property
    def dim(self):
        return self.values.shape[1]
