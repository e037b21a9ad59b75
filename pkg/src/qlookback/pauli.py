"""Tensorized Pauli decomposition of dense matrices.

A 2^q x 2^q matrix is split into 2x2 blocks ``[[A, B], [C, D]]`` and written
as ``I (x) (A+D)/2 + X (x) (B+C)/2 + Y (x) i(B-C)/2 + Z (x) (A-D)/2``; the
recursion continues on the four half-size coefficients. Each level is done
for all surviving blocks at once, and all-zero blocks are dropped early, so
sparse inputs stay cheap.

Qubit 0 is the leftmost tensor factor (most significant bit of the basis
index), matching ``np.kron`` ordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

import numpy as np

PAULI_LABELS = "IXYZ"

_PAULI_MATS = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

DEFAULT_PRUNE = 1e-12


def pauli_matrix(label: str) -> np.ndarray:
    """Dense matrix of a Pauli string such as ``"XIZ"``."""
    _check_label(label)
    out = np.ones((1, 1), dtype=complex)
    for ch in label:
        out = np.kron(out, _PAULI_MATS[ch])
    return out


def _check_label(label: str) -> None:
    if not label or any(ch not in PAULI_LABELS for ch in label):
        raise ValueError(f"invalid Pauli string {label!r}")


@dataclass
class PauliSum:
    """Weighted sum of Pauli strings on ``qubits`` qubits."""

    qubits: int
    terms: dict[str, complex] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for label in self.terms:
            _check_label(label)
            if len(label) != self.qubits:
                raise ValueError(f"string {label!r} does not act on {self.qubits} qubits")

    def __len__(self) -> int:
        return len(self.terms)

    def __add__(self, other: "PauliSum") -> "PauliSum":
        if other.qubits != self.qubits:
            raise ValueError("qubit counts differ")
        merged = dict(self.terms)
        for label, c in other.terms.items():
            merged[label] = merged.get(label, 0.0) + c
        return PauliSum(self.qubits, merged)

    def pruned(self, threshold: float = DEFAULT_PRUNE) -> "PauliSum":
        return PauliSum(self.qubits, {k: v for k, v in self.terms.items() if abs(v) > threshold})

    def apply(self, vec: np.ndarray) -> np.ndarray:
        """Action of the sum on a state vector without building the matrix."""
        vec = np.asarray(vec)
        dim = 1 << self.qubits
        if vec.shape[0] != dim:
            raise ValueError(f"vector of length {vec.shape[0]} does not match 2^{self.qubits}")
        out = np.zeros(vec.shape, dtype=complex)
        idx = np.arange(dim)
        for label, c in self.terms.items():
            flip = 0
            phase = np.ones(dim, dtype=complex)
            for pos, ch in enumerate(label):
                bit = self.qubits - 1 - pos
                b = (idx >> bit) & 1
                if ch in "XY":
                    flip |= 1 << bit
                if ch == "Z":
                    phase *= 1 - 2 * b
                elif ch == "Y":
                    # Y|b> = i(-1)^b |1-b>; phase is taken at the output index
                    phase *= 1j * (2 * b - 1)
            # out[i] += c * phase_out(i) * vec[i ^ flip]
            src = idx ^ flip
            out += c * (phase.reshape((-1,) + (1,) * (vec.ndim - 1)) * vec[src])
        return out

    def to_lines(self) -> str:
        """Export as ``STRING coeff_re coeff_im`` lines, sorted by string."""
        lines = [
            f"{label} {format(complex(c).real, '.17g')} {format(complex(c).imag, '.17g')}"
            for label, c in sorted(self.terms.items())
        ]
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_lines(cls, text: str) -> "PauliSum":
        terms: dict[str, complex] = {}
        qubits = None
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: expected 'STRING re im', got {line!r}")
            label = parts[0]
            if qubits is None:
                qubits = len(label)
            terms[label] = complex(float(parts[1]), float(parts[2]))
        return cls(qubits or 1, terms)


def _pad(matrix: np.ndarray, qubits: int | None) -> tuple[np.ndarray, int]:
    m = np.asarray(matrix)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    need = max(1, math.ceil(math.log2(m.shape[0]))) if m.shape[0] > 1 else 1
    q = need if qubits is None else qubits
    if q < need:
        raise ValueError(f"{m.shape[0]}x{m.shape[0]} matrix does not fit on {q} qubits")
    dim = 1 << q
    if m.shape[0] == dim:
        return m.astype(complex), q
    out = np.zeros((dim, dim), dtype=complex)
    out[: m.shape[0], : m.shape[1]] = m
    return out, q


def decompose(matrix, prune: float = DEFAULT_PRUNE, qubits: int | None = None) -> PauliSum:
    """Exact Pauli expansion; coefficients equal tr(P M) / 2^q.

    The input is zero-padded to the next power of two. Terms with
    ``|c| <= prune`` are dropped.
    """
    m, q = _pad(getattr(matrix, "matrix", matrix), qubits)
    labels = np.array([""], dtype=object)
    blocks = m[np.newaxis]
    for _ in range(q):
        h = blocks.shape[1] // 2
        a = blocks[:, :h, :h]
        b = blocks[:, :h, h:]
        c = blocks[:, h:, :h]
        d = blocks[:, h:, h:]
        parts = np.stack([(a + d) / 2, (b + c) / 2, 1j * (b - c) / 2, (a - d) / 2], axis=1)
        new_labels = np.array(
            [lab + ch for lab in labels for ch in PAULI_LABELS], dtype=object
        )
        parts = parts.reshape((-1, h, h))
        keep = np.any(np.abs(parts) > 0, axis=(1, 2))
        blocks = parts[keep]
        labels = new_labels[keep]
    coeffs = blocks[:, 0, 0]
    terms = {
        str(lab): complex(c) for lab, c in zip(labels, coeffs) if abs(c) > prune
    }
    return PauliSum(q, terms)


def reconstruct(psum: PauliSum) -> np.ndarray:
    """Dense matrix of a Pauli sum (complex).

    Inverts the butterfly of ``decompose`` level by level, so each entry is
    built from q pairwise sums instead of one accumulation per term.
    """
    q = psum.qubits
    coeffs = np.zeros(4**q, dtype=complex)
    digit = {ch: k for k, ch in enumerate(PAULI_LABELS)}
    for label, c in psum.terms.items():
        idx = 0
        for ch in label:
            idx = 4 * idx + digit[ch]
        coeffs[idx] += c
    blocks = coeffs.reshape(-1, 1, 1)
    for _ in range(q):
        s = blocks.shape[1]
        parts = blocks.reshape(-1, 4, s, s)
        i, x, y, z = (parts[:, k] for k in range(4))
        out = np.empty((parts.shape[0], 2 * s, 2 * s), dtype=complex)
        out[:, :s, :s] = i + z
        out[:, :s, s:] = x - 1j * y
        out[:, s:, :s] = x + 1j * y
        out[:, s:, s:] = i - z
        blocks = out
    return blocks[0]


def term_count(psum: PauliSum) -> int:
    return len(psum.terms)


def mean_term_count(sums: Iterable[PauliSum]) -> Fraction:
    counts = [term_count(s) for s in sums]
    if not counts:
        raise ValueError("mean of an empty family")
    return Fraction(sum(counts), len(counts))
