import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from regstruct.kernels import NonIntegrable
from regstruct.solver import (
    OBSERVABLES,
    BlowUp,
    EquationSpec,
    Potential,
    StabilityViolation,
    Trajectory,
    defcc_constant,
    effective_potential,
    ensemble_converge,
    hermite_deconvolve,
    horner,
    integrate,
    lattice_constants,
    white_noise,
)

SMALL = EquationSpec(d=1, n=32, dt=1e-3, T=0.05, noise="mollified", eps=0.1, initial=0.2, saves=2)


def test_integrate_is_deterministic():
    a = integrate(SMALL, seed=3).final
    assert np.array_equal(a, integrate(SMALL, seed=3).final)
    assert not np.array_equal(a, integrate(SMALL, seed=4).final)


def test_shared_noise_reproduces_solution():
    white = white_noise(SMALL, 5)
    a = integrate(SMALL, 5, white=white).final
    b = integrate(replace(SMALL), 5, white=white).final
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        integrate(SMALL, 5, white=white[1:])


def test_snapshots():
    traj = integrate(SMALL, seed=1)
    assert np.allclose(traj.times, [0.0, 0.025, 0.05])
    assert len(traj.fields) == 3


def test_hermite_drift_matches_expansion():
    pot = Potential.hermite(0.3, 1.1, 0.05, linear=0.4)
    u = np.linspace(-3, 3, 101)
    poly = Potential.polynomial(pot.expanded())
    assert np.allclose(pot.drift(u), poly.drift(u), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("backend", ["numba", "numpy"])
def test_horner_backends(backend):
    u = np.random.default_rng(0).standard_normal((7, 9))
    c = [0.5, -1.0, 0.0, 2.0]
    assert np.allclose(horner(u, c, backend), np.polyval(c[::-1], u), rtol=1e-13)


def test_deterministic_ode_is_first_order():
    u0 = 1.0
    exact = u0 / math.sqrt(1 + 2 * u0**2 * 1.0)
    errs = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        spec = EquationSpec(d=1, n=4, dt=dt, T=1.0, noise="none", initial=u0)
        errs.append(abs(float(integrate(spec).final.mean()) - exact))
    orders = [math.log2(a / b) for a, b in zip(errs[:-1], errs[1:])]
    assert all(0.9 < p < 1.1 for p in orders)


def test_stability_violation():
    spec = EquationSpec(d=1, n=8, dt=0.01, T=0.1, noise="none", potential=Potential.cubic(100.0))
    with pytest.raises(StabilityViolation):
        integrate(spec)


def test_blowup_is_reported():
    spec = EquationSpec(d=1, n=8, dt=0.01, T=0.1, noise="none", initial=100.0)
    with pytest.raises(BlowUp) as info:
        integrate(spec)
    assert info.value.t == pytest.approx(0.02) and info.value.norm > 1e6


@pytest.mark.parametrize("kwargs", [
    {"T": 0.0105}, {"noise": "levy"}, {"eps": None}, {"eps": 0.7},
    {"potential": Potential.polynomial([0.0, 0.0, 0.0, 1.0])},
])
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        replace(SMALL, **kwargs).validate()


def test_spec_dict_roundtrip():
    spec = replace(SMALL, potential=Potential.hermite(0.1, 1.0, 0.1))
    assert EquationSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError):
        EquationSpec.from_dict({"bogus": 1})


def test_trajectory_roundtrip(tmp_path):
    traj = integrate(SMALL, seed=2)
    back = Trajectory.load(traj.save(tmp_path / "t"))
    assert np.array_equal(back.final, traj.final)
    assert np.array_equal(back.times, traj.times)


def test_effective_potential_examples():
    assert effective_potential([0, 0, 1], 0.5) == [0.5, 0.0, 1.0]
    assert effective_potential([0, 0, 0, 0, 1], 1.0) == [3.0, 0.0, 6.0, 0.0, 1.0]


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=7), st.floats(0.0, 2.0))
def test_hermite_deconvolve_inverts(V, C):
    back = effective_potential(hermite_deconvolve(V, C), C)
    assert np.allclose(back, V, atol=1e-9 * (1 + C) ** 4)


def test_lattice_constants_scale():
    spec = EquationSpec(d=1, n=32, dt=1e-3, T=0.01, noise="mollified", eps=0.1)
    a = lattice_constants(spec)
    b = lattice_constants(replace(spec, noise_scale=2.0))
    assert a["Ct1"] > 0
    assert b["Ct1"] == pytest.approx(4 * a["Ct1"], rel=1e-12)
    assert lattice_constants(spec, eps=0.2)["Ct1"] < a["Ct1"]


def test_defcc_constant_finite_in_three_dimensions():
    v = defcc_constant(3)
    assert 0 < v < 1


def test_defcc_constant_diverges_in_two_dimensions():
    with pytest.raises(NonIntegrable):
        defcc_constant(2)


def test_ensemble_argument_checks():
    with pytest.raises(ValueError):
        ensemble_converge(SMALL, [0.1], 2)
    with pytest.raises(ValueError):
        ensemble_converge(SMALL, [0.1, 0.05], 2, statistic="median")
    with pytest.raises(ValueError):
        ensemble_converge(SMALL, [0.1, 0.05], 2, coupling="other")


def test_time_mean_observable():
    spec = replace(SMALL, saves=4, noise="none", initial=1.0)
    traj = integrate(spec, 0)
    late = [float(np.mean(f)) for t, f in zip(traj.times, traj.fields) if t >= spec.T / 2 - 1e-12]
    assert OBSERVABLES["time-mean"](traj) == pytest.approx(np.mean(late))
    assert OBSERVABLES["mean"](traj) == pytest.approx(late[-1])


def test_ensemble_table_shape():
    tab = ensemble_converge(SMALL, [0.2, 0.1, 0.05], 3, observable="mean")
    assert tab.eps == [0.2, 0.1, 0.05]
    assert len(tab.differences) == 2 and tab.samples == 3
    assert tab.verdict in ("decreasing", "non-decreasing")
    assert len(tab.rows()) == 3
