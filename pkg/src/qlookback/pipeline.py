"""Pricing pipelines: sequential jump operator (M1) and stacked functions (M2).

A run is a list of legs, each a constant operator applied for some
duration. ``expm`` legs propagate by the matrix exponential; ``step`` legs
are the single forward-difference map ``I - d H`` that defines the jump
window. The exact engine folds the legs over a vector; the VarQITE engine
folds them over ansatz parameters while the exact vector is carried along
for diagnostics (and, in oracle-assisted mode, for re-fitting).
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import scipy.optimize

from . import qsim
from .market import MarketParams, MonitoringSchedule, SpatialGrid, payoff
from .operators import DEFAULT_H, build_hc, build_hj, m2_block_count, method2_segment
from .oracles import PriceCurve, expm_evolve
from .varqite import (
    DEFAULT_DT,
    DEFAULT_RIDGE,
    EvolutionState,
    StepRecord,
    evolve_linear_path,
    evolve_segment,
)

log = logging.getLogger(__name__)

FIT_TOL = 1e-6


class ExtractionError(RuntimeError):
    """The z = 0 amplitude vanished, so the price scale cannot be recovered."""


class EvolutionFailure(RuntimeError):
    def __init__(self, leg: int, label: str, cause: Exception):
        super().__init__(f"leg {leg} ({label}) failed: {cause}")
        self.leg = leg
        self.label = label


@dataclass(frozen=True)
class RunSpec:
    method: Literal["M1", "M2"] = "M2"
    engine: Literal["varqite", "expm"] = "expm"
    params: MarketParams = field(default_factory=MarketParams)
    schedule: MonitoringSchedule | None = None
    grid: SpatialGrid = field(default_factory=lambda: SpatialGrid(16))
    p: int = 100
    dt: float = DEFAULT_DT
    h: float = DEFAULT_H
    shots: int | None = None
    seed: int = 0
    ridge: float = DEFAULT_RIDGE
    mode: Literal["pure", "oracle-assisted"] = "pure"
    jump_window: Literal["step", "expm"] = "step"
    window_substeps: int = 5
    fit_restarts: int = 20

    def __post_init__(self) -> None:
        if self.method not in ("M1", "M2"):
            raise ValueError(f"method must be M1 or M2, got {self.method!r}")
        if self.engine not in ("varqite", "expm"):
            raise ValueError(f"engine must be varqite or expm, got {self.engine!r}")
        if self.mode not in ("pure", "oracle-assisted"):
            raise ValueError(f"mode must be pure or oracle-assisted, got {self.mode!r}")
        if self.jump_window not in ("step", "expm"):
            raise ValueError(f"jump_window must be step or expm, got {self.jump_window!r}")
        if self.schedule is None:
            object.__setattr__(self, "schedule", MonitoringSchedule.annual(self.params.T))
        if abs(self.schedule.T - self.params.T) > 1e-12:
            raise ValueError("schedule horizon differs from maturity")
        if not self.grid.is_power_of_two:
            raise ValueError(f"grid size {self.grid.n} is not a power of two")
        if self.dt <= 0 or self.h <= 0 or self.ridge <= 0:
            raise ValueError("dt, h and ridge must be positive")
        if self.p < 0 or self.window_substeps < 1 or self.fit_restarts < 1:
            raise ValueError("p >= 0, window_substeps >= 1 and fit_restarts >= 1 required")
        if self.method == "M1" and self.h >= self.schedule.interval:
            raise ValueError("jump window must be shorter than a monitoring interval")
        if self.shots is not None and self.shots <= 0:
            raise ValueError("shots must be positive")

    @property
    def q(self) -> int:
        return register_qubits(self.method, self.grid, self.schedule)


def register_qubits(method: str, grid: SpatialGrid, schedule: MonitoringSchedule) -> int:
    """log2(n) for M1, plus ceil(log2 N) auxiliary qubits for M2."""
    m = int(math.log2(grid.n))
    if method == "M1":
        return m
    return m + math.ceil(math.log2(schedule.N))


@dataclass(frozen=True)
class Leg:
    label: str
    kind: Literal["expm", "step"]
    H: np.ndarray
    duration: float


def m1_legs(spec: RunSpec) -> list[Leg]:
    hc = build_hc(spec.grid, spec.params).matrix
    hj = build_hj(spec.grid, spec.params, spec.h).matrix
    legs = []
    start = 0.0
    for j, epoch in enumerate(spec.schedule.interior, 1):
        legs.append(Leg(f"HC[{j}]", "expm", hc, epoch - spec.h - start))
        legs.append(Leg(f"HJ[{j}]", "step" if spec.jump_window == "step" else "expm", hj, spec.h))
        start = epoch
    legs.append(Leg(f"HC[{spec.schedule.N}]", "expm", hc, spec.params.T - start))
    return legs


def m2_legs(spec: RunSpec) -> list[Leg]:
    interval = spec.schedule.interval
    return [
        Leg(f"H{j + 1}", "expm", method2_segment(j, spec.grid, spec.params, spec.schedule).matrix, interval)
        for j in range(spec.schedule.N)
    ]


def initial_vector(spec: RunSpec) -> np.ndarray:
    """Unnormalized starting vector: payoff, then zero auxiliary blocks."""
    u0 = payoff(spec.grid)
    if spec.method == "M1":
        return u0
    out = np.zeros(spec.grid.n * m2_block_count(spec.schedule.N))
    out[: spec.grid.n] = u0
    return out


def apply_leg(leg: Leg, v: np.ndarray) -> np.ndarray:
    if leg.kind == "step":
        return v - leg.duration * (leg.H @ v)
    return expm_evolve(leg.H, v, leg.duration)


@dataclass
class FitResult:
    theta: np.ndarray
    cost: float
    restarts: int
    converged: bool
    sampled_cost: float | None = None


def fit_initial_params(
    circuit: qsim.Circuit,
    target: np.ndarray,
    theta0=None,
    seed: int = 0,
    max_restarts: int = 20,
    tol: float = FIT_TOL,
    shots: int | None = None,
    maxiter: int = 10000,
) -> FitResult:
    """Minimize 1 - |<target|U(theta)|0>|^2 with BFGS and random restarts."""
    target = np.asarray(target, dtype=float)
    if abs(np.linalg.norm(target) - 1.0) > 1e-10:
        raise ValueError("target state must be normalized")
    rng = np.random.default_rng(seed)

    def cost(theta):
        phi, jac = qsim.jacobian(circuit, theta)
        ov = float(target @ phi)
        return 1.0 - ov * ov, -2.0 * ov * (jac.T @ target)

    best = None
    attempts = 0
    for attempt in range(max(1, max_restarts)):
        attempts = attempt + 1
        if attempt == 0 and theta0 is not None:
            start = np.asarray(theta0, dtype=float)
        elif attempt == 0:
            start = rng.normal(0.0, 0.1, circuit.p)
        else:
            start = rng.uniform(-math.pi, math.pi, circuit.p)
        if circuit.p == 0:
            c, _ = cost(start)
            best = (c, start)
            break
        res = scipy.optimize.minimize(
            cost, start, jac=True, method="BFGS", options={"gtol": 1e-12, "maxiter": maxiter}
        )
        if best is None or res.fun < best[0]:
            best = (float(res.fun), res.x)
        if best[0] < tol:
            break
    c, theta = best
    c = max(c, 0.0)
    sampled = None
    if shots is not None:
        sampled = 1.0 - qsim.overlap(target, qsim.apply(circuit, theta), shots, rng)
    if c >= tol:
        log.warning("initial fit stopped at cost %.3e after %d restarts", c, attempts)
    return FitResult(np.asarray(theta, dtype=float), c, attempts, c < tol, sampled)


def extract_price(
    final_state,
    params: MarketParams,
    grid: SpatialGrid,
    method: str = "M1",
    schedule: MonitoringSchedule | None = None,
    provenance: str = "expm",
) -> PriceCurve:
    """Rescale the final state so that its z = 0 entry equals e^{-rT}.

    For M2 the live function is read from block 0 (z <= 1) and block N-1
    (z > 1).
    """
    psi = np.real_if_close(np.asarray(final_state))
    norm = np.linalg.norm(psi)
    if norm == 0 or abs(psi[0]) < 1e-9 * norm:
        raise ExtractionError(f"z=0 amplitude {psi[0]!r} is too small to anchor the price")
    scaled = math.exp(-params.r * params.T) * np.real(psi) / np.real(psi[0])
    n, lam = grid.n, grid.lam
    if method == "M1":
        u = scaled[:n]
    else:
        if schedule is None:
            raise ValueError("M2 extraction needs the schedule")
        last = (schedule.N - 1) * n
        u = np.concatenate([scaled[: lam + 1], scaled[last + lam + 1 : last + n]])
    return PriceCurve(grid.points.copy(), u, provenance, grid=grid)


@dataclass
class LegReport:
    label: str
    duration: float
    steps: int
    seconds: float
    fidelity: float | None = None
    refit_cost: float | None = None


@dataclass
class RunResult:
    spec: RunSpec
    curve: PriceCurve
    final_state: np.ndarray
    exact_state: np.ndarray
    legs: list[LegReport]
    fit: FitResult | None = None
    step_log: list[StepRecord] = field(default_factory=list)

    @property
    def terminal_fidelity(self) -> float:
        return qsim.fidelity(self.final_state, self.exact_state)


def _run(spec: RunSpec, legs: list[Leg]) -> RunResult:
    v = initial_vector(spec)
    provenance = f"{spec.engine}-{spec.method.lower()}"
    reports: list[LegReport] = []
    if spec.engine == "expm":
        for i, leg in enumerate(legs):
            t0 = time.perf_counter()
            try:
                v = apply_leg(leg, v)
            except Exception as exc:  # noqa: BLE001 - re-raised with leg context
                raise EvolutionFailure(i, leg.label, exc) from exc
            reports.append(LegReport(leg.label, leg.duration, 1, time.perf_counter() - t0))
        curve = extract_price(v, spec.params, spec.grid, spec.method, spec.schedule, provenance)
        return RunResult(spec, curve, v, v, reports)

    circuit = qsim.build_ansatz(spec.q, spec.p)
    target = qsim.encode_state(v, spec.q)
    fit = fit_initial_params(circuit, target, seed=spec.seed, max_restarts=spec.fit_restarts)
    state = EvolutionState(fit.theta)
    exact = target.copy()
    step_log: list[StepRecord] = []
    for i, leg in enumerate(legs):
        t0 = time.perf_counter()
        try:
            if leg.kind == "step":
                seg = evolve_linear_path(
                    state, circuit, leg.H, leg.duration, leg.duration / spec.window_substeps, spec.ridge
                )
            else:
                dt = min(spec.dt, leg.duration / spec.window_substeps) if leg.label.startswith("HJ") else spec.dt
                seg = evolve_segment(state, circuit, leg.H, leg.duration, dt, spec.ridge, shots=spec.shots, seed=spec.seed + i)
        except Exception as exc:  # noqa: BLE001
            raise EvolutionFailure(i, leg.label, exc) from exc
        state = seg.state
        step_log.extend(seg.records)
        exact = apply_leg(leg, exact)
        exact = exact / np.linalg.norm(exact)
        refit = None
        if spec.mode == "oracle-assisted":
            fr = fit_initial_params(circuit, exact, theta0=state.theta, seed=spec.seed + i + 1, max_restarts=3)
            state = EvolutionState(fr.theta, state.tau, state.log_gamma, state.energy)
            refit = fr.cost
        fid = qsim.fidelity(qsim.apply(circuit, state.theta), exact)
        reports.append(
            LegReport(leg.label, leg.duration, len(seg.records), time.perf_counter() - t0, fid, refit)
        )
        log.info("%s: %d steps, fidelity %.6f", leg.label, len(seg.records), fid)
    final = qsim.apply(circuit, state.theta)
    curve = extract_price(final, spec.params, spec.grid, spec.method, spec.schedule, provenance)
    curve.meta.update({"fit_cost": fit.cost, "terminal_fidelity": qsim.fidelity(final, exact)})
    return RunResult(spec, curve, final, exact, reports, fit, step_log)


def run_m1(spec: RunSpec) -> RunResult:
    if spec.method != "M1":
        raise ValueError("run_m1 needs method=M1")
    return _run(spec, m1_legs(spec))


def run_m2(spec: RunSpec) -> RunResult:
    if spec.method != "M2":
        raise ValueError("run_m2 needs method=M2")
    return _run(spec, m2_legs(spec))


def run(spec: RunSpec) -> RunResult:
    return run_m1(spec) if spec.method == "M1" else run_m2(spec)
