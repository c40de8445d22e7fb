import numpy as np
import pytest
from hypothesis import given, strategies as st

from regstruct.roughpaths import (
    ControlledPath,
    InsufficientRegularity,
    NotYoungRegular,
    Path,
    SecondLevel,
    chen_defect,
    controlled_norm,
    derivative_norm,
    holder_exponent,
    rough_integral,
    second_level_from_smooth,
    synthetic_holder_path,
    young_integral,
)

N = 512


@pytest.fixture(scope="module")
def rough2():
    W = synthetic_holder_path(N, 0.45, seed=1, m=2)
    return W, second_level_from_smooth(W)


@given(st.integers(0, N), st.integers(0, N), st.integers(0, N))
def test_chen_relation(a, b, c):
    W = synthetic_holder_path(N, 0.45, seed=1, m=2)
    WW = second_level_from_smooth(W)
    s, u, t = sorted((a, b, c))
    assert np.max(np.abs(chen_defect(WW, s, u, t))) <= 1e-12


def test_chen_relation_after_refinement():
    W = synthetic_holder_path(4 * N, 0.45, seed=2, m=2)
    WW = second_level_from_smooth(W, refine=4)
    assert np.max(np.abs(chen_defect(WW, 3, 50, 120))) <= 1e-12


def test_constant_integrand_is_exact(rough2):
    W, WW = rough2
    c = np.array([1.5, -0.25])
    Z = ControlledPath(np.tile(c, (N + 1, 1)), np.zeros((N + 1, 2, 2)))
    _, res = rough_integral(Z, W, WW, check=False)
    assert res.endpoint == pytest.approx(float(c @ (W.values[-1] - W.values[0])), abs=1e-12)
    young = young_integral(np.tile(c, (N + 1, 1)), W, check=False)
    assert young.endpoint == pytest.approx(res.endpoint, abs=1e-12)


def test_scalar_ito_free_square():
    W = synthetic_holder_path(N, 0.4, seed=3)
    WW = second_level_from_smooth(W)
    Z = ControlledPath(W.values - W.values[0], np.ones(N + 1))
    _, res = rough_integral(Z, W, WW, check=False)
    assert res.endpoint == pytest.approx(0.5 * float(W.values[-1, 0] - W.values[0, 0]) ** 2, abs=1e-12)


def test_linear_path_closed_form():
    v = np.array([0.7, -1.2])
    W = Path.from_function(lambda t: np.outer(t, v), 64)
    WW = second_level_from_smooth(W)
    assert np.allclose(WW.between(0, 64), 0.5 * np.outer(v, v), atol=1e-14)


def test_rough_matches_young_for_smooth_paths():
    W = Path.from_function(lambda t: np.sin(3 * t), 4096)
    WW = second_level_from_smooth(W)
    z = np.cos(W.values)
    Z = ControlledPath(z, -np.sin(W.values))
    _, rough = rough_integral(Z, W, WW)
    young = young_integral(z, W)
    exact = np.sin(np.sin(3.0))
    assert rough.endpoint == pytest.approx(exact, abs=1e-6)
    assert young.endpoint == pytest.approx(exact, abs=1e-3)
    assert rough.status == young.status == "ok"


@pytest.mark.parametrize("lam", [-1.0, 0.5, 2.0])
def test_shifted_level_adds_drift(lam):
    W = synthetic_holder_path(N, 0.4, seed=4)
    WW = second_level_from_smooth(W)
    Z = ControlledPath(W.values, np.ones(N + 1))
    _, a = rough_integral(Z, W, WW, check=False)
    _, b = rough_integral(Z, W, WW.shifted(lam), check=False)
    assert b.endpoint - a.endpoint == pytest.approx(lam * W.times[-1], abs=1e-12)
    assert np.max(np.abs(chen_defect(WW.shifted(lam), 5, 100, 400))) <= 1e-12


@pytest.mark.parametrize("backend", ["numba", "numpy"])
def test_backends_agree(rough2, backend):
    W, WW = rough2
    Z = ControlledPath(np.cos(W.values), np.zeros((N + 1, 2, 2)) + 0.3)
    _, ref = rough_integral(Z, W, WW, check=False, backend="numpy")
    _, out = rough_integral(Z, W, WW, check=False, backend=backend)
    assert np.allclose(out.values, ref.values, rtol=1e-12, atol=1e-14)
    lvl = SecondLevel(W, WW.increments, backend=backend)
    assert np.allclose(lvl.between(0, N), WW.between(0, N), atol=1e-14)


def test_integral_is_controlled():
    W = synthetic_holder_path(N, 0.45, seed=5)
    WW = second_level_from_smooth(W)
    Y, _ = rough_integral(ControlledPath(W.values, np.ones(N + 1)), W, WW, check=False)
    norms = controlled_norm(Y, W, gamma=0.8, alpha=0.4)
    assert np.isfinite(norms["norm"]) and norms["norm"] > 0
    own = controlled_norm(ControlledPath(W.values, np.ones(N + 1)), W, gamma=0.8, alpha=0.4)
    assert own["derivative"] == 0.0 and own["remainder"] < 1e-12


def test_derivative_norm_of_linear_derivative():
    t = np.linspace(0, 1, 101)
    assert derivative_norm(2 * t, t, gamma=2.0) == pytest.approx(2.0)


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7])
def test_holder_exponent_estimate(alpha):
    W = synthetic_holder_path(8192, alpha, seed=0)
    assert holder_exponent(W) == pytest.approx(alpha, abs=0.12)


def test_regularity_warnings():
    W = synthetic_holder_path(N, 0.25, seed=6)
    with pytest.warns(NotYoungRegular):
        res = young_integral(W.values, W)
    assert res.status == "not-young-regular"
    with pytest.warns(InsufficientRegularity):
        _, res = rough_integral(ControlledPath(W.values, np.ones(N + 1)), W, second_level_from_smooth(W))
    assert res.status == "insufficient-regularity"


def test_path_validation():
    with pytest.raises(ValueError):
        Path([0.0, 0.1, 0.3], [0.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        Path([0.0, 0.5, 1.0], [0.0, np.inf, 2.0])
    with pytest.raises(ValueError):
        ControlledPath(np.zeros((4, 2)), np.zeros((4, 3, 2)))
    W = synthetic_holder_path(8, 0.5, m=2)
    with pytest.raises(ValueError):
        rough_integral(ControlledPath(np.zeros((9, 1)), np.zeros((9, 1, 2))), W, second_level_from_smooth(W))
