"""Market parameters, monitoring schedule, spatial grid and the reduced-variable transform.

The option value v(eta, x, y) of a lookback put with running maximum y is
written as v = y * u(xi, z) with z = x / y and xi = T - eta (time to maturity).
Everything downstream works with the dimensionless u.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_Z_ONE_TOL = 1e-12


@dataclass(frozen=True)
class MarketParams:
    """Black-Scholes market with a single risky asset.

    ``T`` is an integer number of years so that annual monitoring dates fall
    on whole years.
    """

    r: float = 0.05
    sigma: float = 0.2
    s0: float = 1.0
    T: int = 2

    def __post_init__(self) -> None:
        if not self.r >= 0:
            raise ValueError(f"r must be >= 0, got {self.r}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if not self.s0 > 0:
            raise ValueError(f"s0 must be > 0, got {self.s0}")
        if isinstance(self.T, bool) or int(self.T) != self.T or self.T < 1:
            raise ValueError(f"T must be an integer >= 1, got {self.T}")
        object.__setattr__(self, "T", int(self.T))


@dataclass(frozen=True)
class MonitoringSchedule:
    """Uniform partition of [0, T] into ``N`` monitoring intervals."""

    T: float
    N: int
    epochs: tuple[float, ...] = field(init=False)

    def __post_init__(self) -> None:
        if int(self.N) != self.N or self.N < 2:
            raise ValueError(f"N must be an integer >= 2, got {self.N}")
        if not self.T > 0:
            raise ValueError(f"T must be > 0, got {self.T}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(
            self, "epochs", tuple(self.T * j / self.N for j in range(self.N + 1))
        )

    @classmethod
    def annual(cls, T: int) -> "MonitoringSchedule":
        return cls(T=T, N=int(T))

    @classmethod
    def from_epochs(cls, epochs) -> "MonitoringSchedule":
        ep = np.asarray(epochs, dtype=float)
        if ep.ndim != 1 or ep.size < 3 or ep[0] != 0.0:
            raise ValueError("epochs must start at 0 and contain at least 3 dates")
        steps = np.diff(ep)
        if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=0, atol=1e-12):
            raise ValueError("monitoring epochs must form a uniform partition of [0, T]")
        return cls(T=float(ep[-1]), N=ep.size - 1)

    @property
    def interior(self) -> tuple[float, ...]:
        return self.epochs[1:-1]

    @property
    def interval(self) -> float:
        return self.T / self.N


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform grid z_0 = 0, ..., z_{n-1} = z_max that contains z = 1 exactly.

    ``lam`` is the index with ``points[lam] == 1`` (up to rounding of
    ``dz * lam``). Power-of-two sizes are needed for amplitude encoding;
    classical solvers accept any ``n >= 4``.
    """

    n: int
    z_max: float = 2.5
    points: np.ndarray = field(init=False, repr=False, compare=False)
    dz: float = field(init=False)
    lam: int = field(init=False)

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 4:
            raise ValueError(f"grid needs n >= 4 points, got {self.n}")
        if not self.z_max > 1:
            raise ValueError(f"z_max must exceed 1, got {self.z_max}")
        n = int(self.n)
        dz = self.z_max / (n - 1)
        lam = int(round(1.0 / dz))
        pts = np.arange(n) * dz
        pts[-1] = self.z_max
        if not 0 < lam < n - 1 or abs(pts[lam] - 1.0) >= _Z_ONE_TOL:
            raise ValueError(
                f"grid n={n}, z_max={self.z_max} has no point at z=1 "
                f"(closest z={pts[min(max(lam, 0), n - 1)]!r})"
            )
        pts[lam] = 1.0
        pts.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "dz", dz)
        object.__setattr__(self, "lam", lam)

    @property
    def is_power_of_two(self) -> bool:
        return self.n & (self.n - 1) == 0

    @property
    def qubits(self) -> int:
        """Register width needed to hold one vector on this grid."""
        return max(1, math.ceil(math.log2(self.n)))

    @classmethod
    def for_qubits(cls, m: int, z_max: float = 2.5) -> "SpatialGrid":
        return cls(n=2**m, z_max=z_max)


def payoff(grid: SpatialGrid) -> np.ndarray:
    """Terminal condition u(0, z) = (1 - z)^+ on the grid."""
    return np.maximum(1.0 - grid.points, 0.0)


def lower_boundary(tau: float, params: MarketParams) -> float:
    """Value at z = 0: the lookback put pays the full maximum, discounted."""
    if tau < 0 or tau > params.T:
        raise ValueError(f"tau={tau} outside [0, {params.T}]")
    return math.exp(-params.r * tau)


def reduce(eta: float, x: float, y: float, T: float) -> tuple[float, float]:
    """Map (elapsed time, spot, running max) to (time to maturity, z)."""
    if not y > 0:
        raise ValueError(f"running maximum must be positive, got {y}")
    return T - eta, x / y


def inflate(u_value, y: float):
    """Recover the option value v = y * u."""
    if not y > 0:
        raise ValueError(f"running maximum must be positive, got {y}")
    return y * u_value
