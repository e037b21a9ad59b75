"""Dense statevector simulation for circuits built from H, Ry and CRy.

States are plain numpy arrays of length 2^q (real dtype stays real: all three
gates are real matrices). Qubit 0 is the most significant bit of the basis
index. Gate routines also accept a batch of states with shape (2^q, B),
which is how the Jacobian of the ansatz is propagated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_HADAMARD = np.array([[1.0, 1.0], [1.0, -1.0]]) * _INV_SQRT2


class Gate(NamedTuple):
    kind: str  # "H", "RY" or "CRY"
    target: int
    control: int | None = None
    slot: int | None = None


@dataclass(frozen=True)
class Circuit:
    q: int
    gates: tuple[Gate, ...]

    def __post_init__(self) -> None:
        slots = []
        for g in self.gates:
            if g.kind not in ("H", "RY", "CRY"):
                raise ValueError(f"unsupported gate {g.kind!r}")
            if not 0 <= g.target < self.q:
                raise ValueError(f"target {g.target} outside register of {self.q}")
            if g.kind == "CRY":
                if g.control is None or not 0 <= g.control < self.q or g.control == g.target:
                    raise ValueError(f"bad control for {g}")
            if g.kind == "H":
                if g.slot is not None:
                    raise ValueError("H takes no parameter")
            else:
                if g.slot is None or g.slot < 0:
                    raise ValueError(f"{g.kind} needs a parameter slot")
                slots.append(g.slot)
        if sorted(slots) != list(range(len(slots))):
            raise ValueError("parameter slots must be 0..p-1, each used once")

    @property
    def p(self) -> int:
        return sum(1 for g in self.gates if g.slot is not None)

    @property
    def dim(self) -> int:
        return 1 << self.q

    def dump(self) -> str:
        """One gate per line: ``H t``, ``RY t slot`` or ``CRY c t slot``."""
        lines = []
        for g in self.gates:
            if g.kind == "H":
                lines.append(f"H {g.target}")
            elif g.kind == "RY":
                lines.append(f"RY {g.target} {g.slot}")
            else:
                lines.append(f"CRY {g.control} {g.target} {g.slot}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, q: int, text: str) -> "Circuit":
        gates = []
        for lineno, line in enumerate(text.splitlines(), 1):
            parts = line.split()
            if not parts:
                continue
            try:
                if parts[0] == "H" and len(parts) == 2:
                    gates.append(Gate("H", int(parts[1])))
                elif parts[0] == "RY" and len(parts) == 3:
                    gates.append(Gate("RY", int(parts[1]), slot=int(parts[2])))
                elif parts[0] == "CRY" and len(parts) == 4:
                    gates.append(Gate("CRY", int(parts[2]), int(parts[1]), int(parts[3])))
                else:
                    raise ValueError
            except ValueError:
                raise ValueError(f"line {lineno}: cannot parse gate {line!r}") from None
        return cls(q, tuple(gates))


def build_ansatz(q: int, p: int) -> Circuit:
    """Layered Ry/CRy ansatz.

    A Hadamard on every qubit, then a ring of CRy gates (control c, target
    (c + 1) mod q). Each time the ring wraps back to qubit 0 a layer of Ry
    gates follows; the last layer is truncated when fewer than q parameters
    remain. Exactly ``p`` parameterized gates are emitted.
    """
    if p < 0:
        raise ValueError("p must be >= 0")
    if q < 1 or (p > 0 and q < 2):
        raise ValueError("the entangling ring needs at least 2 qubits")
    gates = [Gate("H", t) for t in range(q)]
    k = 0
    qc = 0
    while k < p:
        qt = (qc + 1) % q
        gates.append(Gate("CRY", qt, qc, k))
        k += 1
        qc = qt
        if qt == 0:
            width = min(q, p - k)
            gates.extend(Gate("RY", t, slot=k + t) for t in range(width))
            k += q
    return Circuit(q, tuple(gates))


def zero_state(q: int, dtype=float) -> np.ndarray:
    psi = np.zeros(1 << q, dtype=dtype)
    psi[0] = 1.0
    return psi


def encode_state(values, q: int | None = None) -> np.ndarray:
    """Normalize ``values`` and zero-pad to 2^q amplitudes."""
    v = np.asarray(values)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("expected a non-empty 1-D vector")
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("cannot encode the zero vector")
    need = max(1, math.ceil(math.log2(v.size)))
    q = need if q is None else q
    if (1 << q) < v.size:
        raise ValueError(f"{v.size} values do not fit in {q} qubits")
    out = np.zeros(1 << q, dtype=v.dtype if np.iscomplexobj(v) else float)
    out[: v.size] = v / norm
    return out


def _ry(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -s], [s, c]])


def _dry(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return 0.5 * np.array([[-s, -c], [c, -s]])


def _apply_1q(state: np.ndarray, mat: np.ndarray, target: int, q: int) -> np.ndarray:
    lead = 1 << target
    view = state.reshape(lead, 2, -1)
    out = np.einsum("ab,ibj->iaj", mat, view)
    return out.reshape(state.shape)


def _apply_controlled(
    state: np.ndarray, mat: np.ndarray, control: int, target: int, q: int, zero_branch: bool = False
) -> np.ndarray:
    """Apply ``mat`` to ``target`` where ``control`` is 1.

    With ``zero_branch`` the control-0 subspace is annihilated (used for the
    derivative of a controlled rotation).
    """
    batch = state.shape[1:]
    t = state.reshape((2,) * q + batch)
    out = np.zeros_like(t) if zero_branch else t.copy()
    sel = [slice(None)] * q
    sel[control] = 1
    sub = t[tuple(sel)]
    # target axis index inside the sub-array shifts down when it is past the control
    tax = target - (1 if target > control else 0)
    moved = np.moveaxis(sub, tax, 0)
    rotated = np.tensordot(mat, moved, axes=([1], [0]))
    out[tuple(sel)] = np.moveaxis(rotated, 0, tax)
    return out.reshape(state.shape)


def _apply_gate(state: np.ndarray, gate: Gate, theta: Sequence[float], q: int) -> np.ndarray:
    if gate.kind == "H":
        return _apply_1q(state, _HADAMARD, gate.target, q)
    angle = theta[gate.slot]
    if gate.kind == "RY":
        return _apply_1q(state, _ry(angle), gate.target, q)
    return _apply_controlled(state, _ry(angle), gate.control, gate.target, q)


def _apply_gate_derivative(state: np.ndarray, gate: Gate, theta: Sequence[float], q: int) -> np.ndarray:
    angle = theta[gate.slot]
    if gate.kind == "RY":
        return _apply_1q(state, _dry(angle), gate.target, q)
    return _apply_controlled(state, _dry(angle), gate.control, gate.target, q, zero_branch=True)


def _check_params(circuit: Circuit, params) -> np.ndarray:
    theta = np.asarray(params, dtype=float).ravel()
    if theta.size != circuit.p:
        raise ValueError(f"circuit takes {circuit.p} parameters, got {theta.size}")
    return theta


def _check_input(circuit: Circuit, state) -> np.ndarray:
    if state is None:
        return zero_state(circuit.q)
    psi = np.asarray(state)
    if psi.shape[0] != circuit.dim:
        raise ValueError(f"state of length {psi.shape[0]} does not match 2^{circuit.q}")
    return psi


def apply(circuit: Circuit, params, state=None) -> np.ndarray:
    """Run the circuit on ``state`` (default |0...0>)."""
    theta = _check_params(circuit, params)
    psi = _check_input(circuit, state)
    for g in circuit.gates:
        psi = _apply_gate(psi, g, theta, circuit.q)
    return psi


def jacobian(circuit: Circuit, params, state=None) -> tuple[np.ndarray, np.ndarray]:
    """Output state and all parameter derivatives, shape (2^q,) and (2^q, p).

    The derivative columns are carried forward alongside the state, so the
    cost is one batched pass over the gate list.
    """
    theta = _check_params(circuit, params)
    psi = _check_input(circuit, state)
    q, p = circuit.q, circuit.p
    jac = np.zeros((circuit.dim, p), dtype=np.result_type(psi, float))
    live = 0  # number of columns already created, in gate order
    order = []
    for g in circuit.gates:
        if live:
            jac[:, :live] = _apply_gate(jac[:, :live], g, theta, q)
        if g.slot is not None:
            jac[:, live] = _apply_gate_derivative(psi, g, theta, q)
            order.append(g.slot)
            live += 1
        psi = _apply_gate(psi, g, theta, q)
    out = np.empty_like(jac)
    out[:, order] = jac
    return psi, out


def derivative_state(circuit: Circuit, params, slot: int, state=None, method: str = "shift") -> np.ndarray:
    """d|phi(theta)>/d theta_slot.

    ``method="shift"`` builds the derivative from shifted circuits only:
    ``Ry'(t) = Ry(t + pi) / 2`` and for the controlled rotation
    ``CRy'(t) = [CRy(t + pi) - (CRy(t) + CRy(t + 2 pi)) / 2] / 2``.
    ``method="exact"`` inserts the differentiated gate directly.
    """
    theta = _check_params(circuit, params)
    if not 0 <= slot < circuit.p:
        raise IndexError(f"slot {slot} outside 0..{circuit.p - 1}")
    gate = next(g for g in circuit.gates if g.slot == slot)
    if method == "exact":
        psi = _check_input(circuit, state)
        for g in circuit.gates:
            if g.slot == slot:
                psi = _apply_gate_derivative(psi, g, theta, circuit.q)
            else:
                psi = _apply_gate(psi, g, theta, circuit.q)
        return psi
    if method != "shift":
        raise ValueError(f"unknown derivative method {method!r}")

    def shifted(delta: float) -> np.ndarray:
        t = theta.copy()
        t[slot] += delta
        return apply(circuit, t, state)

    if gate.kind == "RY":
        return 0.5 * shifted(math.pi)
    return 0.5 * shifted(math.pi) - 0.25 * shifted(0.0) - 0.25 * shifted(2 * math.pi)


def overlap(a, b, shots: int | None = None, rng: np.random.Generator | None = None) -> float:
    """|<a|b>|^2, exactly or as a binomial estimate over ``shots`` samples."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("states act on different registers")
    prob = float(min(1.0, abs(np.vdot(a, b)) ** 2))
    if shots is None:
        return prob
    if shots <= 0:
        raise ValueError("shots must be positive")
    rng = np.random.default_rng() if rng is None else rng
    return rng.binomial(shots, prob) / shots


def fidelity(a, b) -> float:
    """Overlap of the normalized versions of two (possibly unnormalized) vectors."""
    a = np.asarray(a)
    b = np.asarray(b)
    return overlap(a / np.linalg.norm(a), b / np.linalg.norm(b))


def gate_counts(circuit: Circuit) -> dict[str, int]:
    counts: dict[str, int] = {}
    for g in circuit.gates:
        counts[g.kind] = counts.get(g.kind, 0) + 1
    return counts

