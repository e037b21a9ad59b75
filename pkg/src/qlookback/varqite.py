"""Variational imaginary time evolution under McLachlan's principle.

The ansatz state |phi(theta)> follows the normalized solution of
``d|psi>/dtau = -(H - E)|psi>``. Each step solves

    A theta_dot = -C,   A_ij = Re<d_i phi|d_j phi>,   C_i = Re<d_i phi|H|phi>

with a small ridge on A, then advances theta by explicit Euler. H may be
non-Hermitian; it is used as given.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.linalg

from .pauli import PauliSum, reconstruct
from .qsim import Circuit, apply, fidelity, jacobian

log = logging.getLogger(__name__)

DEFAULT_RIDGE = 1e-8
MAX_RIDGE = 1e-4
DEFAULT_DT = 0.01
DEFAULT_MAX_ANGLE = 0.02
MAX_SUBSTEPS = 10_000


class SolverError(RuntimeError):
    """The McLachlan system could not be solved even with the largest ridge."""


@dataclass(frozen=True)
class EvolutionState:
    """Ansatz parameters plus bookkeeping along imaginary time.

    ``log_gamma`` accumulates ``-integral E dtau``: the log of the norm the
    unnormalized propagated vector would carry.
    """

    theta: np.ndarray
    tau: float = 0.0
    log_gamma: float = 0.0
    energy: float = float("nan")


@dataclass(frozen=True)
class StepRecord:
    tau: float
    energy: float
    fidelity: float
    residual: float
    ridge: float


@dataclass
class SegmentResult:
    state: EvolutionState
    records: list[StepRecord] = field(default_factory=list)


def _operator(H, dim: int) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(H, PauliSum):
        if (1 << H.qubits) != dim:
            raise ValueError(f"Pauli sum on {H.qubits} qubits vs state dimension {dim}")
        return H.apply
    mat = np.asarray(getattr(H, "matrix", H))
    if mat.shape != (dim, dim):
        raise ValueError(f"operator of shape {mat.shape} does not act on dimension {dim}")
    return lambda v: mat @ v


def mclachlan_system(circuit: Circuit, theta, H, state=None) -> tuple[np.ndarray, np.ndarray]:
    """A (p x p) and C (p) at the current parameters."""
    phi, jac = jacobian(circuit, theta, state)
    h_phi = _operator(H, circuit.dim)(phi)
    A = np.real(jac.conj().T @ jac)
    C = np.real(jac.conj().T @ h_phi)
    return A, C


def solve_ridge(A: np.ndarray, C: np.ndarray, ridge: float = DEFAULT_RIDGE) -> tuple[np.ndarray, float]:
    """Solve (A + ridge I) x = -C, escalating the ridge x10 up to MAX_RIDGE on failure."""
    if not ridge > 0:
        raise ValueError(f"ridge must be > 0, got {ridge}")
    eye = np.eye(A.shape[0])
    lam = ridge
    while lam <= max(MAX_RIDGE, ridge) * (1 + 1e-9):
        try:
            factor = scipy.linalg.cho_factor(A + lam * eye)
            x = scipy.linalg.cho_solve(factor, -C)
            if np.all(np.isfinite(x)):
                return x, lam
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            pass
        log.debug("ridge %.1e failed, escalating", lam)
        lam *= 10
    raise SolverError(f"McLachlan system singular beyond ridge {MAX_RIDGE:g}")


def shot_ridge(shots: int) -> float:
    """Ridge floor for sampled systems: the worst-case standard deviation of a
    metric entry (bounded by 1/4 for Ry/CRy generators) at this shot count."""
    return 0.25 / math.sqrt(shots)


def sample_system(
    A: np.ndarray, C: np.ndarray, jac: np.ndarray, h_phi: np.ndarray, shots: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Replace A and C by Hadamard-test style estimates from ``shots`` samples.

    An entry v bounded by s is read as s (2k / shots - 1) with
    k ~ Binomial(shots, (1 + v / s) / 2). The sampled A is symmetrized and
    projected onto the positive semidefinite cone (negative eigenvalues
    clipped), since sampling noise can exceed any ridge.
    """
    if shots <= 0:
        raise ValueError("shots must be positive")
    norms = np.linalg.norm(jac, axis=0)
    s_a = np.outer(norms, norms)
    s_c = norms * np.linalg.norm(h_phi)

    def est(v, s):
        safe = np.where(s > 0, s, 1.0)
        prob = np.clip(0.5 * (1 + v / safe), 0.0, 1.0)
        return np.where(s > 0, safe * (2 * rng.binomial(shots, prob) / shots - 1), 0.0)

    upper = np.triu(est(A, s_a))
    sym = upper + np.triu(upper, 1).T
    w, v = np.linalg.eigh(sym)
    return (v * np.clip(w, 0.0, None)) @ v.T, est(C, s_c)


def _velocity(
    state: EvolutionState,
    circuit: Circuit,
    apply_h: Callable[[np.ndarray], np.ndarray],
    ridge: float,
    input_state,
    shots: int | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, float, float, float]:
    """theta_dot, energy, solver residual and ridge used at the current parameters."""
    phi, jac = jacobian(circuit, state.theta, input_state)
    h_phi = apply_h(phi)
    A = np.real(jac.conj().T @ jac)
    C = np.real(jac.conj().T @ h_phi)
    if shots is not None:
        A, C = sample_system(A, C, jac, h_phi, shots, rng)
    energy = float(np.real(np.vdot(phi, h_phi)))
    theta_dot, used = solve_ridge(A, C, ridge)
    residual = float(np.linalg.norm(A @ theta_dot + C))
    return theta_dot, energy, residual, used


def _advance(
    state: EvolutionState,
    circuit: Circuit,
    apply_h: Callable[[np.ndarray], np.ndarray],
    dt: float,
    ridge: float,
    input_state,
    shots: int | None = None,
    rng: np.random.Generator | None = None,
    max_angle: float | None = None,
) -> tuple[EvolutionState, float, float]:
    """Advance by ``dt``; with ``max_angle`` the step is split so that no
    parameter moves by more than ``max_angle`` radians per Euler update."""
    left = dt
    residual = used = 0.0
    for _ in range(MAX_SUBSTEPS):
        if left <= 0:
            break
        theta_dot, energy, residual, used = _velocity(state, circuit, apply_h, ridge, input_state, shots, rng)
        h = left
        if max_angle is not None:
            peak = float(np.max(np.abs(theta_dot), initial=0.0))
            if peak * h > max_angle:
                h = max_angle / peak
                if left - h < 1e-12 * dt:
                    h = left
        state = EvolutionState(
            theta=state.theta + h * theta_dot,
            tau=state.tau + h,
            log_gamma=state.log_gamma - h * energy,
            energy=energy,
        )
        left -= h
    else:
        if left > 0:
            raise SolverError(f"parameter velocity too large: {MAX_SUBSTEPS} substeps did not cover dt={dt:g}")
    return state, residual, used


def step(
    state: EvolutionState,
    circuit: Circuit,
    H,
    dt: float = DEFAULT_DT,
    ridge: float = DEFAULT_RIDGE,
    input_state=None,
) -> EvolutionState:
    """One explicit-Euler step of the parameter ODE."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if dt == 0:
        return state
    new, _, _ = _advance(state, circuit, _operator(H, circuit.dim), dt, ridge, input_state)
    return new


def _step_plan(duration: float, dt: float) -> tuple[int, float]:
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if duration < 0:
        raise ValueError("duration must be >= 0")
    if duration == 0:
        return 0, dt
    nsteps = max(1, math.ceil(duration / dt - 1e-9))
    return nsteps, duration / nsteps


def evolve_segment(
    state: EvolutionState,
    circuit: Circuit,
    H,
    duration: float,
    dt: float = DEFAULT_DT,
    ridge: float = DEFAULT_RIDGE,
    oracle: bool = False,
    input_state=None,
    shots: int | None = None,
    seed: int | None = None,
    max_angle: float | None = DEFAULT_MAX_ANGLE,
) -> SegmentResult:
    """Evolve for ``duration`` under a constant H.

    The step size is shrunk so an integer number of steps fits the duration.
    With ``oracle`` on, each step also records the fidelity against the
    matrix exponential applied to the starting ansatz state. ``shots``
    switches A and C to sampled estimates (noise studies only).
    ``max_angle`` bounds the parameter change per Euler update; a nominal
    step whose velocity exceeds it is split into smaller updates. ``None``
    gives plain fixed-step Euler.
    """
    nsteps, h = _step_plan(duration, dt)
    rng = None
    if shots is not None:
        rng = np.random.default_rng(seed)
        ridge = max(ridge, shot_ridge(shots))
    apply_h = _operator(H, circuit.dim)
    records: list[StepRecord] = []
    start = apply(circuit, state.theta, input_state) if oracle else None
    mat = None
    if oracle:
        mat = reconstruct(H) if isinstance(H, PauliSum) else np.asarray(getattr(H, "matrix", H))
        prop = scipy.linalg.expm(-h * mat)
        exact = start
    for _ in range(nsteps):
        state, residual, used = _advance(state, circuit, apply_h, h, ridge, input_state, shots, rng, max_angle)
        fid = float("nan")
        if oracle:
            exact = prop @ exact
            exact = exact / np.linalg.norm(exact)
            fid = fidelity(apply(circuit, state.theta, input_state), exact)
        records.append(StepRecord(state.tau, state.energy, fid, residual, used))
    return SegmentResult(state, records)


def evolve_linear_path(
    state: EvolutionState,
    circuit: Circuit,
    H,
    duration: float,
    dt: float,
    ridge: float = DEFAULT_RIDGE,
    input_state=None,
    max_angle: float | None = DEFAULT_MAX_ANGLE,
) -> SegmentResult:
    """Track the normalized path of ``(I - s H) psi_0`` for s in [0, duration].

    This is the variational counterpart of a single forward-difference
    step of length ``duration``: the direction ``-H psi_0`` is frozen at the
    window start instead of being re-evaluated at the current state.
    Substeps follow the same ``max_angle`` rule as :func:`evolve_segment`.
    """
    nsteps, h = _step_plan(duration, dt)
    apply_h = _operator(H, circuit.dim)
    psi0 = apply(circuit, state.theta, input_state)
    direction = -apply_h(psi0)
    records: list[StepRecord] = []
    s = 0.0
    for k in range(nsteps):
        end = duration if k == nsteps - 1 else (k + 1) * h
        for _ in range(MAX_SUBSTEPS):
            if end - s <= 1e-15 * duration:
                break
            path = psi0 + s * direction
            scale = 1.0 / np.linalg.norm(path)
            phi, jac = jacobian(circuit, state.theta, input_state)
            # tangent of the normalized path, minus its component along phi
            target = scale * direction
            target = target - np.real(np.vdot(phi, target)) * phi
            A = np.real(jac.conj().T @ jac)
            C = -np.real(jac.conj().T @ target)
            theta_dot, used = solve_ridge(A, C, ridge)
            residual = float(np.linalg.norm(A @ theta_dot + C))
            energy = float(np.real(np.vdot(phi, apply_h(phi))))
            sub = end - s
            peak = float(np.max(np.abs(theta_dot), initial=0.0))
            if max_angle is not None and peak * sub > max_angle:
                sub = max_angle / peak
            state = EvolutionState(
                theta=state.theta + sub * theta_dot,
                tau=state.tau + sub,
                log_gamma=state.log_gamma - sub * energy,
                energy=energy,
            )
            s += sub
        else:
            raise SolverError("parameter velocity too large on the linear path")
        records.append(StepRecord(state.tau, energy, float("nan"), residual, used))
    return SegmentResult(state, records)


def records_to_csv(records: list[StepRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tau", "E", "fidelity_vs_oracle", "solver_residual"])
    for r in records:
        w.writerow([format(r.tau, ".17g"), format(r.energy, ".17g"), format(r.fidelity, ".17g"), format(r.residual, ".17g")])
    return buf.getvalue()


def with_theta(state: EvolutionState, theta) -> EvolutionState:
    return replace(state, theta=np.asarray(theta, dtype=float))
