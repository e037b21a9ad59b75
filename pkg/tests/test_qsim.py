import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qlookback import qsim
from qlookback.qsim import Circuit, Gate, apply, build_ansatz, derivative_state, encode_state, jacobian


def kron_gate(mat, target, q):
    ops = [np.eye(2)] * q
    ops[target] = mat
    out = np.ones((1, 1))
    for o in ops:
        out = np.kron(out, o)
    return out


def ry(t):
    return np.array([[math.cos(t / 2), -math.sin(t / 2)], [math.sin(t / 2), math.cos(t / 2)]])


def dense_unitary(circuit, theta):
    """Reference unitary built from explicit Kronecker products."""
    q = circuit.q
    u = np.eye(2**q)
    had = np.array([[1, 1], [1, -1]]) / math.sqrt(2)
    p0 = np.diag([1.0, 0.0])
    p1 = np.diag([0.0, 1.0])
    for g in circuit.gates:
        if g.kind == "H":
            m = kron_gate(had, g.target, q)
        elif g.kind == "RY":
            m = kron_gate(ry(theta[g.slot]), g.target, q)
        else:
            ops0 = [np.eye(2)] * q
            ops0[g.control] = p0
            ops1 = [np.eye(2)] * q
            ops1[g.control] = p1
            ops1[g.target] = ry(theta[g.slot])
            m0 = np.ones((1, 1))
            m1 = np.ones((1, 1))
            for a, b in zip(ops0, ops1):
                m0 = np.kron(m0, a)
                m1 = np.kron(m1, b)
            m = m0 + m1
        u = m @ u
    return u


def test_empty_circuit_identity():
    c = Circuit(3, ())
    v = encode_state(np.arange(1.0, 9.0))
    assert np.array_equal(apply(c, [], v), v)


def test_single_ry_pi():
    c = Circuit(1, (Gate("RY", 0, slot=0),))
    out = apply(c, [math.pi])
    assert np.allclose(np.abs(out), [0, 1])


def test_hadamard_layer_uniform():
    c = build_ansatz(3, 0)
    assert np.allclose(apply(c, []), 2 ** (-1.5))


def test_ansatz_first_gate():
    c = build_ansatz(4, 1)
    assert [g.kind for g in c.gates] == ["H"] * 4 + ["CRY"]
    assert c.gates[-1] == Gate("CRY", 1, 0, 0)


def test_ansatz_structure_q4_p100():
    c = build_ansatz(4, 100)
    assert c.p == 100
    counts = qsim.gate_counts(c)
    assert counts["H"] == 4
    assert counts["RY"] + counts["CRY"] == 100
    # ring of 4 CRy then a 4-wide Ry layer, repeated
    kinds = [g.kind for g in c.gates[4:12]]
    assert kinds == ["CRY"] * 4 + ["RY"] * 4
    assert c.dump() == build_ansatz(4, 100).dump()
    assert Circuit.parse(4, c.dump()) == c


def test_ansatz_truncated_last_layer():
    c = build_ansatz(3, 5)
    assert c.p == 5
    assert [g.kind for g in c.gates[3:]] == ["CRY", "CRY", "CRY", "RY", "RY"]


def test_ansatz_rejects_bad_sizes():
    with pytest.raises(ValueError):
        build_ansatz(1, 3)
    with pytest.raises(ValueError):
        build_ansatz(3, -1)


def test_parse_errors():
    with pytest.raises(ValueError, match="line 2"):
        Circuit.parse(2, "H 0\nFOO 1\n")
    with pytest.raises(ValueError):
        Circuit(2, (Gate("RY", 0, slot=1),))


@pytest.mark.parametrize("q,p", [(2, 5), (3, 11), (4, 20)])
def test_apply_matches_dense_reference(q, p):
    rng = np.random.default_rng(q * 100 + p)
    c = build_ansatz(q, p)
    theta = rng.uniform(-math.pi, math.pi, p)
    v = encode_state(rng.normal(size=2**q))
    assert np.allclose(apply(c, theta, v), dense_unitary(c, theta) @ v, atol=1e-12)


@given(st.integers(2, 5), st.integers(0, 40), st.integers(0, 2**32 - 1))
def test_norm_and_realness(q, p, seed):
    rng = np.random.default_rng(seed)
    c = build_ansatz(q, p)
    out = apply(c, rng.uniform(-4, 4, p), encode_state(rng.normal(size=2**q)))
    assert abs(np.linalg.norm(out) - 1) < 1e-10
    assert np.isrealobj(out)


@given(st.integers(2, 4), st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_shift_rule_vs_finite_difference(q, p, seed):
    rng = np.random.default_rng(seed)
    c = build_ansatz(q, p)
    theta = rng.uniform(-math.pi, math.pi, p)
    slot = int(rng.integers(p))
    eps = 1e-6
    tp, tm = theta.copy(), theta.copy()
    tp[slot] += eps
    tm[slot] -= eps
    fd = (apply(c, tp) - apply(c, tm)) / (2 * eps)
    assert np.max(np.abs(derivative_state(c, theta, slot) - fd)) < 1e-6


def test_jacobian_matches_exact_derivatives():
    rng = np.random.default_rng(9)
    c = build_ansatz(3, 17)
    theta = rng.uniform(-3, 3, 17)
    psi, jac = jacobian(c, theta)
    assert np.allclose(psi, apply(c, theta))
    for k in range(17):
        assert np.allclose(jac[:, k], derivative_state(c, theta, k, method="exact"), atol=1e-12)
        assert np.allclose(jac[:, k], derivative_state(c, theta, k), atol=1e-12)


def test_param_length_checked():
    with pytest.raises(ValueError):
        apply(build_ansatz(2, 3), [0.0, 0.0])


def test_encode_state():
    v = encode_state([3.0, 4.0], q=2)
    assert np.allclose(v, [0.6, 0.8, 0, 0])
    with pytest.raises(ValueError):
        encode_state([0.0, 0.0])
    with pytest.raises(ValueError):
        encode_state(np.ones(5), q=2)


def test_overlap_and_fidelity():
    a = np.array([1.0, 0.0])
    b = np.array([1.0, 1.0]) / math.sqrt(2)
    assert qsim.overlap(a, b) == pytest.approx(0.5)
    assert qsim.fidelity(a, 3 * b) == pytest.approx(0.5)
    est = qsim.overlap(a, b, shots=100_000, rng=np.random.default_rng(0))
    assert abs(est - 0.5) < 5 * math.sqrt(0.25 / 100_000)
    with pytest.raises(ValueError):
        qsim.overlap(a, b, shots=0)
