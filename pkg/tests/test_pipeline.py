import math

import numpy as np
import pytest

from qlookback import pipeline, qsim
from qlookback.market import MarketParams, MonitoringSchedule, SpatialGrid
from qlookback.oracles import fd_solve
from qlookback.pipeline import (
    EvolutionFailure,
    ExtractionError,
    RunSpec,
    apply_leg,
    extract_price,
    fit_initial_params,
    initial_vector,
    m1_legs,
    m2_legs,
    run,
    run_m1,
    run_m2,
)


def test_runspec_defaults_and_qubits():
    s = RunSpec()
    assert s.schedule == MonitoringSchedule.annual(2)
    assert RunSpec(method="M1").q == 4
    assert s.q == 5
    assert RunSpec(params=MarketParams(T=3)).q == 6
    assert RunSpec(params=MarketParams(T=4), grid=SpatialGrid(256)).q == 10


@pytest.mark.parametrize(
    "kwargs",
    [
        {"method": "M3"},
        {"engine": "qpu"},
        {"mode": "hybrid"},
        {"jump_window": "smooth"},
        {"grid": SpatialGrid(31)},
        {"schedule": MonitoringSchedule(3, 3)},
        {"dt": 0.0},
        {"ridge": -1.0},
        {"shots": 0},
        {"method": "M1", "h": 1.0},
    ],
)
def test_runspec_rejects(kwargs):
    with pytest.raises(ValueError):
        RunSpec(**kwargs)


def test_fit_uniform_with_empty_ansatz():
    c = qsim.build_ansatz(3, 0)
    fit = fit_initial_params(c, np.full(8, 8**-0.5))
    assert fit.cost <= 1e-15 and fit.converged


def test_fit_zero_state():
    c = qsim.build_ansatz(3, 12)
    fit = fit_initial_params(c, qsim.zero_state(3))
    assert fit.cost < 1e-6


def test_fit_requires_normalized_target():
    with pytest.raises(ValueError):
        fit_initial_params(qsim.build_ansatz(2, 4), np.ones(4))


def test_fit_reports_failure_with_best_found():
    # two parameters cannot reach a generic 3-qubit state
    target = qsim.encode_state(np.arange(1.0, 9.0))
    fit = fit_initial_params(qsim.build_ansatz(3, 2), target, max_restarts=2)
    assert not fit.converged and fit.restarts == 2 and 0 < fit.cost < 1


def test_m1_structure_one_window():
    legs = m1_legs(RunSpec(method="M1"))
    assert [leg.label for leg in legs] == ["HC[1]", "HJ[1]", "HC[2]"]
    assert legs[0].duration == pytest.approx(1 - 1e-3)
    assert legs[1].kind == "step" and legs[1].duration == 1e-3
    assert sum(leg.duration for leg in legs) == pytest.approx(2.0)


@pytest.mark.parametrize("n", [16, 256])
def test_expm_engines_match_fd(n):
    g = SpatialGrid(n)
    p = MarketParams()
    fd = fd_solve(p, MonitoringSchedule.annual(2), g, 1e-4, "cn")
    m1 = run_m1(RunSpec(method="M1", grid=g)).curve
    m2 = run_m2(RunSpec(method="M2", grid=g)).curve
    assert m1.provenance == "expm-m1" and m2.provenance == "expm-m2"
    assert np.max(np.abs(m1.values - fd.values)) < 1e-6
    assert np.max(np.abs(m2.values - fd.values)) < 1e-6
    assert m1.values[0] == pytest.approx(math.exp(-0.1))


def test_expm_window_underjumps():
    step = run(RunSpec(method="M1")).curve
    expo = run(RunSpec(method="M1", jump_window="expm")).curve
    assert np.max(np.abs(step.values - expo.values)) > 1e-3


def test_m2_padding_blocks_stay_zero():
    spec = RunSpec(params=MarketParams(T=3))
    n = spec.grid.n
    v = initial_vector(spec)
    assert v.size == 4 * n
    for leg in m2_legs(spec):
        v = apply_leg(leg, v)
        assert not v[3 * n :].any()
    m1 = run(RunSpec(method="M1", params=MarketParams(T=3))).curve
    assert np.max(np.abs(extract_price(v, spec.params, spec.grid, "M2", spec.schedule).values - m1.values)) < 1e-6


def test_extract_scale_invariance(rng):
    g = SpatialGrid(16)
    p = MarketParams()
    psi = qsim.encode_state(rng.uniform(0.1, 1.0, 16))
    base = extract_price(psi, p, g).values
    for c in (2.0**-30, 0.5, 8.0, 2.0**40):
        assert np.array_equal(extract_price(c * psi, p, g).values, base)
    for c in rng.uniform(1e-6, 1e6, 20):
        assert np.allclose(extract_price(c * psi, p, g).values, base, rtol=4e-16, atol=0)


def test_extract_anchor():
    g = SpatialGrid(16)
    psi = np.linspace(2.0, 0.5, 16)
    out = extract_price(psi, MarketParams(r=0.0), g)
    assert np.allclose(out.values, psi / psi[0])
    assert extract_price(psi, MarketParams(), g).values[0] == pytest.approx(math.exp(-0.1))


def test_extract_rejects_collapsed_state():
    g = SpatialGrid(16)
    psi = np.ones(16)
    psi[0] = 1e-12
    with pytest.raises(ExtractionError):
        extract_price(psi, MarketParams(), g)


def test_extract_m2_mapping():
    g = SpatialGrid(16)
    sched = MonitoringSchedule.annual(2)
    psi = np.concatenate([np.arange(1.0, 17.0), 100 + np.arange(16.0)])
    out = extract_price(psi, MarketParams(r=0.0), g, "M2", sched)
    lam = g.lam
    assert np.array_equal(out.values[: lam + 1], np.arange(1.0, lam + 2))
    assert np.array_equal(out.values[lam + 1 :], 100 + np.arange(lam + 1.0, 16.0))
    with pytest.raises(ValueError):
        extract_price(psi, MarketParams(), g, "M2")


def test_failure_carries_leg_index(monkeypatch):
    def boom(leg, v):
        raise FloatingPointError("overflow")

    monkeypatch.setattr(pipeline, "apply_leg", boom)
    with pytest.raises(EvolutionFailure) as info:
        run(RunSpec(method="M1"))
    assert info.value.leg == 0 and "HC[1]" in str(info.value)


def test_wrong_runner():
    with pytest.raises(ValueError):
        run_m1(RunSpec(method="M2"))
    with pytest.raises(ValueError):
        run_m2(RunSpec(method="M1"))


@pytest.mark.parametrize("method", ["M1", "M2"])
def test_varqite_engine_consistency(method):
    res = run(RunSpec(method=method, engine="varqite", dt=0.005))
    assert res.fit.converged
    assert res.terminal_fidelity >= 0.999
    assert res.curve.provenance == f"varqite-{method.lower()}"
    assert len(res.legs) == (3 if method == "M1" else 2)


def test_oracle_assisted_mode_tracks_reference():
    res = run(RunSpec(method="M2", engine="varqite", mode="oracle-assisted", p=100, dt=0.02))
    assert res.terminal_fidelity > 0.99999
    assert all(leg.refit_cost is not None for leg in res.legs)
