"""Finite-difference Hamiltonians for the reduced lookback PDE.

Sign convention
---------------
Every builder returns the Hamiltonian ``H`` of the imaginary-time problem,
so that ``du/dtau = -H u`` and the exact propagator is ``expm(-tau * H)``.
The generator ``G = -H`` holds the usual finite-difference stencil rows
``(alpha_i, beta_i, gamma_i)`` and ``-r`` at the z = 0 boundary.

``layout="literal"`` reproduces the mixed-sign matrices in which the z = 0
row carries ``+r`` while the stencil rows keep generator signs (and the jump
rows use ``+1/h`` inside ``b_i``). Those matrices cannot be integrated
consistently; they exist for structural comparisons only.

All indices are zero-based. ``grid.lam`` is the index of z = 1.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .market import MarketParams, MonitoringSchedule, SpatialGrid

Layout = Literal["hamiltonian", "literal"]
JumpReading = Literal["dz", "dz2"]

ROLES = frozenset(
    {"HC", "HJ", "HU", "HUW", "HUE", "HCNW", "HCSE", "HCNE", "HCSW", "M1", "M2-segment"}
)

DEFAULT_H = 1e-3


@dataclass(frozen=True)
class OperatorMatrix:
    """Dense real operator with a role tag."""

    matrix: np.ndarray
    role: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown operator role {self.role!r}")
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"operator must be square, got shape {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def generator(self) -> np.ndarray:
        return -self.matrix

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)

    def triplets(self) -> list[tuple[int, int, float]]:
        """Nonzero entries as (row, col, value), row-major."""
        rows, cols = np.nonzero(self.matrix)
        return [(int(i), int(j), float(self.matrix[i, j])) for i, j in zip(rows, cols)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        for row in self.matrix:
            buf.write(",".join(format(float(v), ".17g") for v in row))
            buf.write("\n")
        return buf.getvalue()


def _stencil_arrays(grid: SpatialGrid, params: MarketParams):
    z, dz = grid.points, grid.dz
    r, s2 = params.r, params.sigma**2
    alpha = -r * z / (2 * dz) + s2 * z**2 / (2 * dz**2)
    beta = -r - s2 * z**2 / dz**2
    gamma = r * z / (2 * dz) + s2 * z**2 / (2 * dz**2)
    return alpha, beta, gamma


def stencil(i: int, grid: SpatialGrid, params: MarketParams) -> tuple[float, float, float]:
    """Central-difference weights of the generator at interior node ``i``."""
    if not 1 <= i <= grid.n - 2:
        raise IndexError(f"stencil defined for 1 <= i <= {grid.n - 2}, got {i}")
    alpha, beta, gamma = _stencil_arrays(grid, params)
    return float(alpha[i]), float(beta[i]), float(gamma[i])


def _generator_c(grid: SpatialGrid, params: MarketParams) -> np.ndarray:
    n = grid.n
    alpha, beta, gamma = _stencil_arrays(grid, params)
    g = np.zeros((n, n))
    g[0, 0] = -params.r
    idx = np.arange(1, n - 1)
    g[idx, idx - 1] = alpha[idx]
    g[idx, idx] = beta[idx]
    g[idx, idx + 1] = gamma[idx]
    # u_{n-1} = (z_{n-1}/z_{n-2}) u_{n-2} differentiated in time
    ratio = grid.points[n - 1] / grid.points[n - 2]
    g[n - 1, n - 3 : n] = ratio * np.array([alpha[n - 2], beta[n - 2], gamma[n - 2]])
    return g


def _to_layout(gen: np.ndarray, layout: Layout, boundary_rows=(0,)) -> np.ndarray:
    if layout == "hamiltonian":
        return -gen
    if layout == "literal":
        out = gen.copy()
        for i in boundary_rows:
            out[i] = -gen[i]
        return out
    raise ValueError(f"unknown layout {layout!r}")


def build_hc(grid: SpatialGrid, params: MarketParams, layout: Layout = "hamiltonian") -> OperatorMatrix:
    """Continuous-evolution operator on the grid."""
    if grid.n < 4:
        raise ValueError("H_C needs at least 4 grid points")
    return OperatorMatrix(_to_layout(_generator_c(grid, params), layout), "HC")


def jump_weights(
    grid: SpatialGrid,
    params: MarketParams,
    h: float,
    reading: JumpReading = "dz",
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Weights (a_i, b_i, c_i) of the jump rows, Hamiltonian sign, for all i.

    Row i > lam of the jump Hamiltonian is
    ``a_i u_{lam-1} + b_i u_lam + c_i u_{lam+1} + u_i / h``.
    ``reading="dz2"`` swaps sigma^2/dz for sigma^2/dz^2 inside a_i and c_i;
    it is kept only to demonstrate that it breaks the jump.
    """
    if not h > 0:
        raise ValueError(f"jump window h must be > 0, got {h}")
    z, dz = grid.points, grid.dz
    r, s2 = params.r, params.sigma**2
    if reading == "dz":
        var = s2 / dz
    elif reading == "dz2":
        var = s2 / dz**2
    else:
        raise ValueError(f"unknown jump reading {reading!r}")
    a = z / (2 * dz) * (r - var)
    b = z * (r + s2 / dz**2 - 1.0 / h)
    c = -z / (2 * dz) * (r + var)
    return a, b, c


def build_hj(
    grid: SpatialGrid,
    params: MarketParams,
    h: float = DEFAULT_H,
    layout: Layout = "hamiltonian",
    reading: JumpReading = "dz",
) -> OperatorMatrix:
    """Jump operator for the window (tau_j - h, tau_j].

    Rows 0..lam match H_C. Row i > lam is the difference quotient
    ``(z_i u(tau_j^-, 1) - u_i) / h`` with u(tau_j^-, 1) advanced by one
    forward-Euler step of length h, so ``(I - h H_J) u`` performs the jump.
    """
    a, b, c = jump_weights(grid, params, h, reading)
    n, lam = grid.n, grid.lam
    hc = build_hc(grid, params, "hamiltonian").matrix.copy()
    rows = np.arange(lam + 1, n)
    hc[rows, :] = 0.0
    hc[rows, lam - 1] = a[rows]
    hc[rows, lam] = b[rows]
    hc[rows, lam + 1] += c[rows]
    hc[rows, rows] += 1.0 / h
    if layout == "literal":
        hc[1 : lam + 1] *= -1.0
        # literal b_i carries +1/h instead of -1/h
        hc[rows, lam] = grid.points[rows] * (1.0 / h + params.r + params.sigma**2 / grid.dz**2)
    elif layout != "hamiltonian":
        raise ValueError(f"unknown layout {layout!r}")
    return OperatorMatrix(hc, "HJ")


def build_method2_blocks(
    grid: SpatialGrid, params: MarketParams, layout: Layout = "hamiltonian"
) -> dict[str, OperatorMatrix]:
    """Blocks used by the stacked multi-function formulation.

    ``HU`` drives u_k(tau, z_i) = z_i u(tau, 1); it is split into the part
    reading columns lam-1, lam (``HUW``) and column lam+1 (``HUE``). The four
    ``HC*`` blocks partition H_C between nodes z <= 1 and z > 1.
    """
    n, lam = grid.n, grid.lam
    z = grid.points
    alpha, beta, gamma = _stencil_arrays(grid, params)
    gen_c = _generator_c(grid, params)

    gen_uw = np.zeros((n, n))
    gen_uw[:, lam - 1] = z * alpha[lam]
    gen_uw[:, lam] = z * beta[lam]
    gen_ue = np.zeros((n, n))
    gen_ue[:, lam + 1] = z * gamma[lam]

    gen_cnw = np.zeros((n, n))
    gen_cnw[: lam + 1] = gen_c[: lam + 1]
    gen_cnw[lam, lam + 1] = 0.0
    gen_cse = np.zeros((n, n))
    gen_cse[lam + 1 :] = gen_c[lam + 1 :]
    gen_cse[lam + 1, lam] = 0.0
    gen_cne = np.zeros((n, n))
    gen_cne[lam, lam + 1] = gamma[lam]
    gen_csw = np.zeros((n, n))
    gen_csw[lam + 1, lam] = alpha[lam + 1]

    def lay(gen, rows0=()):
        return _to_layout(gen, layout, boundary_rows=rows0)

    blocks = {
        "HUW": OperatorMatrix(lay(gen_uw), "HUW"),
        "HUE": OperatorMatrix(lay(gen_ue), "HUE"),
        "HU": OperatorMatrix(lay(gen_uw + gen_ue), "HU"),
        "HCNW": OperatorMatrix(lay(gen_cnw, (0,)), "HCNW"),
        "HCSE": OperatorMatrix(lay(gen_cse), "HCSE"),
        "HCNE": OperatorMatrix(lay(gen_cne), "HCNE"),
        "HCSW": OperatorMatrix(lay(gen_csw), "HCSW"),
    }
    return blocks


def m2_block_count(N: int) -> int:
    """Number of n-sized blocks in the padded stacked state (2^ceil(log2 N))."""
    return 1 << math.ceil(math.log2(N)) if N > 1 else 1


def method2_segment(
    j: int,
    grid: SpatialGrid,
    params: MarketParams,
    schedule: MonitoringSchedule,
    layout: Layout = "hamiltonian",
) -> OperatorMatrix:
    """Stacked Hamiltonian for the j-th monitoring interval (zero-based).

    Segment 0 evolves u_1 by H_C and every auxiliary u_k by H_U. For j >= 1
    the live function u sits in block 0 (z <= 1) and block j (z > 1);
    blocks above j still track z * u(tau, 1). The last segment is the same
    pattern with no auxiliary rows left. Blocks past N are zero padding.
    """
    N = schedule.N
    if not 0 <= j < N:
        raise IndexError(f"segment index {j} outside [0, {N})")
    n = grid.n
    nb = m2_block_count(N)
    out = np.zeros((n * nb, n * nb))

    def put(br: int, bc: int, block: OperatorMatrix) -> None:
        out[br * n : (br + 1) * n, bc * n : (bc + 1) * n] = block.matrix

    blocks = build_method2_blocks(grid, params, layout)
    if j == 0:
        put(0, 0, build_hc(grid, params, layout))
        for k in range(1, N):
            put(k, 0, blocks["HU"])
    else:
        put(0, 0, blocks["HCNW"])
        put(0, j, blocks["HCNE"])
        put(j, 0, blocks["HCSW"])
        put(j, j, blocks["HCSE"])
        for k in range(j + 1, N):
            put(k, 0, blocks["HUW"])
            put(k, j, blocks["HUE"])
    return OperatorMatrix(out, "M2-segment")


def _segment_index(tau: float, schedule: MonitoringSchedule) -> int:
    if tau < 0 or tau > schedule.T:
        raise ValueError(f"tau={tau} outside [0, {schedule.T}]")
    j = int(math.floor(tau / schedule.interval + 1e-12))
    return min(j, schedule.N - 1)


def assemble_m1(
    tau: float,
    grid: SpatialGrid,
    params: MarketParams,
    schedule: MonitoringSchedule,
    h: float = DEFAULT_H,
) -> OperatorMatrix:
    """Piecewise Hamiltonian: H_J on (tau_j - h, tau_j] at interior dates, else H_C."""
    if tau < 0 or tau > schedule.T:
        raise ValueError(f"tau={tau} outside [0, {schedule.T}]")
    for epoch in schedule.interior:
        if epoch - h < tau <= epoch:
            return OperatorMatrix(build_hj(grid, params, h).matrix, "M1")
    return OperatorMatrix(build_hc(grid, params).matrix, "M1")


def assemble_m2(
    tau: float,
    grid: SpatialGrid,
    params: MarketParams,
    schedule: MonitoringSchedule,
) -> OperatorMatrix:
    """Stacked Hamiltonian in force at time ``tau`` (segments are [tau_j, tau_{j+1}))."""
    return method2_segment(_segment_index(tau, schedule), grid, params, schedule)
