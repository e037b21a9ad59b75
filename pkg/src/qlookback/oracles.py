"""Classical reference solutions.

* ``fd_solve``: method of lines on the grid, jumps applied explicitly at
  every interior monitoring date.
* ``expm_evolve``: exact propagation ``expm(-t H) v`` for any operator.
* ``mc_price``: Monte Carlo on exact GBM fixings at the monitoring dates.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
import scipy.linalg

from .market import MarketParams, MonitoringSchedule, SpatialGrid, payoff
from .operators import build_hc

PROVENANCES = frozenset({"fd", "expm", "expm-m1", "expm-m2", "mc", "varqite-m1", "varqite-m2"})


class FDInstabilityError(RuntimeError):
    pass


@dataclass
class PriceCurve:
    """u(T, z) sampled at ``z`` with optional per-point standard error."""

    z: np.ndarray
    values: np.ndarray
    provenance: str
    stderr: np.ndarray | None = None
    grid: SpatialGrid | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        self.z = np.asarray(self.z, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.z.shape != self.values.shape:
            raise ValueError("z and values differ in length")
        if self.stderr is not None:
            self.stderr = np.asarray(self.stderr, dtype=float)

    def at(self, z: float) -> float:
        """Value at a grid point (exact match) or by linear interpolation."""
        hit = np.flatnonzero(np.abs(self.z - z) < 1e-12)
        if hit.size:
            return float(self.values[hit[0]])
        return float(np.interp(z, self.z, self.values))

    def to_csv(self, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["z", "value", "stderr", "provenance"])
        for i in range(self.z.size):
            se = "" if self.stderr is None else format(float(self.stderr[i]), ".17g")
            w.writerow([format(float(self.z[i]), ".17g"), format(float(self.values[i]), ".17g"), se, self.provenance])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "PriceCurve":
        rows = list(csv.DictReader(line for line in text.splitlines() if not line.startswith("#")))
        if not rows:
            raise ValueError("empty price curve")
        se = [r["stderr"] for r in rows]
        return cls(
            z=[float(r["z"]) for r in rows],
            values=[float(r["value"]) for r in rows],
            provenance=rows[0]["provenance"],
            stderr=None if all(s == "" for s in se) else [float(s) if s else math.nan for s in se],
        )

    def to_json(self, metadata: dict | None = None) -> str:
        doc = {
            "provenance": self.provenance,
            "z": self.z.tolist(),
            "value": self.values.tolist(),
            "stderr": None if self.stderr is None else self.stderr.tolist(),
            "meta": {**self.meta, **(metadata or {})},
        }
        return json.dumps(doc, indent=2, sort_keys=True, default=str)


def jump(u: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """Monitoring-date reset: u(z_i) <- z_i u(1) for z_i > 1."""
    out = u.copy()
    lam = grid.lam
    out[lam + 1 :] = grid.points[lam + 1 :] * u[lam]
    return out


def _steps(length: float, dt: float) -> tuple[int, float]:
    k = max(1, math.ceil(length / dt - 1e-9))
    return k, length / k


def fd_solve(
    params: MarketParams,
    schedule: MonitoringSchedule,
    grid: SpatialGrid,
    dt: float = 1e-3,
    scheme: Literal["implicit", "explicit", "cn"] = "implicit",
) -> PriceCurve:
    """Integrate du/dtau = G u between monitoring dates, jumping at each interior date.

    ``implicit`` is backward Euler, ``cn`` is Crank-Nicolson started with two
    backward-Euler half steps after every kink (payoff and each jump).
    ``explicit`` is forward Euler and aborts when the solution blows up.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    gen = -build_hc(grid, params).matrix
    eye = np.eye(grid.n)
    u = payoff(grid)
    scale0 = max(1.0, float(np.max(np.abs(u))))
    length = schedule.interval
    nsteps, h = _steps(length, dt)
    if scheme == "implicit":
        lu = scipy.linalg.lu_factor(eye - h * gen)
    elif scheme == "cn":
        lu = scipy.linalg.lu_factor(eye - 0.5 * h * gen)
        rhs_mat = eye + 0.5 * h * gen
        lu_half = scipy.linalg.lu_factor(eye - 0.5 * h * gen)
    elif scheme != "explicit":
        raise ValueError(f"unknown scheme {scheme!r}")

    for seg in range(schedule.N):
        for k in range(nsteps):
            if scheme == "explicit":
                u = u + h * (gen @ u)
                if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > 1e6 * scale0:
                    raise FDInstabilityError(
                        f"explicit scheme unstable in segment {seg} step {k}: "
                        f"dt={h:.3g}, max|u|={np.max(np.abs(u)):.3g}"
                    )
            elif scheme == "implicit":
                u = scipy.linalg.lu_solve(lu, u)
            elif k == 0:
                # two backward-Euler half steps damp the kink before CN
                u = scipy.linalg.lu_solve(lu_half, u)
                u = scipy.linalg.lu_solve(lu_half, u)
            else:
                u = scipy.linalg.lu_solve(lu, rhs_mat @ u)
        if seg < schedule.N - 1:
            u = jump(u, grid)
    return PriceCurve(grid.points.copy(), u, "fd", grid=grid, meta={"dt": h, "scheme": scheme})


def expm_evolve(H, v0, duration: float) -> np.ndarray:
    """exp(-duration * H) v0."""
    mat = np.asarray(getattr(H, "matrix", H))
    v0 = np.asarray(v0)
    if not np.all(np.isfinite(mat)) or not np.all(np.isfinite(v0)):
        raise ValueError("non-finite operator or vector")
    if duration == 0:
        return v0.copy()
    return scipy.linalg.expm(-duration * mat) @ v0


@dataclass(frozen=True)
class McConfig:
    paths: int = 1_000_000
    seed: int = 20240601
    steps_per_interval: int = 1
    antithetic: bool = False
    include_final_fixing: bool = True
    chunk: int = 1 << 17
    workers: int = 1

    def __post_init__(self) -> None:
        if self.paths < 2:
            raise ValueError("need at least 2 paths")
        if self.steps_per_interval < 1:
            raise ValueError("steps_per_interval must be >= 1")
        if self.antithetic and self.paths % 2:
            raise ValueError("antithetic sampling needs an even path count")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")


def _simulate_chunk(
    params: MarketParams,
    schedule: MonitoringSchedule,
    config: McConfig,
    seed_seq: np.random.SeedSequence,
    npaths: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Normalized running max over interior fixings and terminal price, S_0 = 1."""
    rng = np.random.Generator(np.random.Philox(seed_seq))
    m = config.steps_per_interval
    nsteps = schedule.N * m
    dt = schedule.T / nsteps
    half = npaths // 2 if config.antithetic else npaths
    z = rng.standard_normal((half, nsteps))
    if config.antithetic:
        z = np.concatenate([z, -z], axis=0)
    incr = (params.r - 0.5 * params.sigma**2) * dt + params.sigma * math.sqrt(dt) * z
    logs = np.cumsum(incr, axis=1)
    fix = np.exp(logs[:, m - 1 :: m])  # values at tau_1..tau_N
    s_T = fix[:, -1]
    monitored = fix if config.include_final_fixing else fix[:, :-1]
    run_max = monitored.max(axis=1) if monitored.shape[1] else np.zeros(npaths)
    return run_max, s_T


def mc_price(
    params: MarketParams,
    schedule: MonitoringSchedule,
    config: McConfig,
    z_eval: Sequence[float],
) -> PriceCurve:
    """Monte Carlo estimate of u(T, z) = e^{-rT} E[(max(1, z M) - z S_T)^+].

    Spot starts at 1 and the running maximum at 1/z, so z = 0 is the
    deterministic limit e^{-rT}. The maximum starts from the supplied
    running max (the start date is not a reset).
    """
    z_eval = np.asarray(z_eval, dtype=float)
    if np.any(z_eval < 0):
        raise ValueError("z must be >= 0")
    chunks = []
    left = config.paths
    while left > 0:
        size = min(config.chunk, left)
        if config.antithetic and size % 2:
            size += 1
        chunks.append(size)
        left -= size
    seeds = np.random.SeedSequence(config.seed).spawn(len(chunks))
    disc = math.exp(-params.r * params.T)

    def run(idx: int):
        run_max, s_T = _simulate_chunk(params, schedule, config, seeds[idx], chunks[idx])
        sums = np.zeros(z_eval.size)
        sq = np.zeros(z_eval.size)
        for k, z in enumerate(z_eval):
            pay = disc * np.maximum(np.maximum(1.0, z * run_max) - z * s_T, 0.0)
            if config.antithetic:
                h = pay.size // 2
                pay = 0.5 * (pay[:h] + pay[h:])
            sums[k] = pay.sum()
            sq[k] = np.square(pay).sum()
        count = chunks[idx] // 2 if config.antithetic else chunks[idx]
        return sums, sq, count

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            parts = list(pool.map(run, range(len(chunks))))
    else:
        parts = [run(i) for i in range(len(chunks))]
    total = sum(p[2] for p in parts)
    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    mean = s1 / total
    var = np.maximum(s2 / total - mean**2, 0.0) * total / (total - 1)
    stderr = np.sqrt(var / total)
    zero = z_eval == 0
    mean[zero] = disc
    stderr[zero] = 0.0
    return PriceCurve(
        z_eval,
        mean,
        "mc",
        stderr=stderr,
        meta={"paths": config.paths, "seed": config.seed, "antithetic": config.antithetic},
    )
