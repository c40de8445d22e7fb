from fractions import Fraction

import numpy as np
import pytest
import sympy
from hypothesis import given, strategies as st

from regstruct.models import (
    ClosureError,
    ConstantModel,
    Grid,
    GridField,
    ModelledDistribution,
    NonPositiveGamma,
    ProductOutsideBasis,
    TrigField,
    canonical_lift,
    check_admissibility,
    deformed_product_check,
    dgamma_seminorm,
    load_model,
    model_distance,
    multiply,
    reconstruct,
    renormalize_model,
    sample_noise,
    save_model,
    taylor_lift,
)
from regstruct.renorm import exp_map, standard_generators
from regstruct.symbols import ONE, HomogeneityParams, parse

SYMS = ["Xi", "I(Xi)", "I(Xi)^2", "I(Xi)^3", "I(I(Xi))", "I(I(Xi)^3)", "I(Xi)^2*I(I(Xi))"]
P1 = HomogeneityParams(d=1)


@pytest.fixture(scope="module")
def grid():
    return Grid(1, 16, 64)


@pytest.fixture(scope="module")
def model(grid):
    return canonical_lift(sample_noise(grid, "white", seed=1), SYMS)


def test_grid_geometry(grid):
    assert grid.shape == (64, 16)
    assert grid.dt == pytest.approx(grid.dx**2)
    assert grid.T == pytest.approx(0.25)
    with pytest.raises(ValueError):
        grid.index_of((0.001, 0.0))


@pytest.mark.parametrize("kwargs", [{"d": 0, "n": 4, "n_t": 4}, {"d": 1, "n": 1, "n_t": 4},
                                    {"d": 1, "n": 4, "n_t": 4, "origin": (0.0,)}])
def test_grid_rejects(kwargs):
    with pytest.raises(ValueError):
        Grid(**kwargs)


@given(st.integers(-200, 200), st.integers(-200, 200))
def test_grid_index_roundtrip(i, j):
    g = Grid(1, 8, 16, origin=(0.5, -0.25))
    assert g.index_of(g.point((i, j))) == g.wrap((i, j))


def test_gridfield_rejects_nonfinite(grid):
    with pytest.raises(ValueError):
        GridField(grid, np.full(grid.shape, np.nan))


def test_noise_is_seeded(grid):
    a = sample_noise(grid, "white", seed=3).values
    assert np.array_equal(a, sample_noise(grid, "white", seed=3).values)
    assert not np.array_equal(a, sample_noise(grid, "white", seed=4).values)
    with pytest.raises(ValueError):
        sample_noise(grid, "mollified")
    with pytest.raises(ValueError):
        sample_noise(grid, "levy", eps=0.1)


def test_products_are_pointwise(model):
    a = model.pi(parse("I(Xi)", P1)).values
    assert np.allclose(model.pi(parse("I(Xi)^3", P1)).values, a**3)


def test_closure_is_enforced(grid):
    with pytest.raises(ClosureError):
        canonical_lift(sample_noise(grid, seed=0), ["I(Xi)^2"])


def test_algebraic_identity(model):
    rep = check_admissibility(model, n_pairs=4)
    assert rep.algebraic < 1e-10


def test_structure_group_composes(model):
    x, y, z = (3, 2), (5, 9), (40, 14)
    tau = parse("I(Xi)^2*I(I(Xi))", P1)
    lhs = model.gamma(x, y)(model.gamma(y, z)(tau))
    rhs = model.gamma(x, z)(tau)
    diff = lhs - rhs
    assert max((abs(float(c)) for _, c in diff.items()), default=0.0) < 1e-9


def test_renormalised_diagonal(model):
    M = exp_map(standard_generators(P1), [0.7, 0, 0, 0, 0])
    new = renormalize_model(model, M)
    assert new.diagonal_residual < 1e-10
    sq = parse("I(Xi)^2", P1)
    assert np.allclose(new.pi(sq).values, model.pi(sq).values - 0.7)


def test_save_load_roundtrip(model, tmp_path):
    save_model(model, tmp_path / "m")
    back = load_model(tmp_path / "m")
    tau = parse("I(Xi)^2*I(I(Xi))", P1)
    assert np.array_equal(back.pi(tau).values, model.pi(tau).values)
    assert np.allclose(back.Pi_x((7, 3), tau).values, model.Pi_x((7, 3), tau).values)
    with pytest.raises(ClosureError):
        back.pi(parse("I(Xi)^4", P1))


def test_reconstruct_polynomial_lift(model, grid):
    t, x1 = sympy.symbols("t x1")
    expr = sympy.sin(2 * sympy.pi * x1) + t
    f = taylor_lift(grid, expr, Fraction(3, 2), P1)
    out = reconstruct(f, model).values
    ref = np.sin(2 * np.pi * grid.coordinate(1)) + grid.coordinate(0)
    assert np.allclose(out, ref)


def test_reconstruct_needs_positive_gamma(model, grid):
    f = ModelledDistribution(grid, Fraction(-1), {ONE: 1.0}, P1)
    with pytest.raises(NonPositiveGamma):
        reconstruct(f, model)


def test_multiply_regularity(grid):
    i_xi = parse("I(Xi)", P1)
    f = ModelledDistribution(grid, Fraction(1), {ONE: 1.0, i_xi: 1.0}, P1)
    g = multiply(f, f)
    assert g.gamma == f.gamma + f.alpha
    assert parse("I(Xi)^2", P1) in g.coeffs
    with pytest.raises(ProductOutsideBasis):
        multiply(f, f, basis=[ONE, i_xi])


@pytest.mark.parametrize("c", [0.0, 0.7, -2.0])
def test_deformed_product(grid, c):
    assert deformed_product_check(grid, c=c, seed=2) < 1e-12


def test_constant_model_rejects_unknown(grid):
    m = ConstantModel(grid, {"1": 1.0}, P1)
    with pytest.raises(KeyError):
        m.diagonal(parse("I(Xi)", P1))


def test_model_distance(model, grid):
    assert model_distance(model, model, n_pairs=3)["total"] == 0.0
    other = canonical_lift(GridField(grid, 2 * model.xi.values), SYMS)
    assert model_distance(model, other, n_pairs=3)["pi"] > 0


def test_locality(grid):
    a = sample_noise(grid, seed=5).values
    b = a.copy()
    b[:, 8:] = 0.0
    m1 = canonical_lift(GridField(grid, a), ["Xi", "Xi^2"], check_closure=False)
    m2 = canonical_lift(GridField(grid, b), ["Xi", "Xi^2"], check_closure=False)
    tau = parse("Xi^2", P1)
    assert np.array_equal(m1.pi(tau).values[:, :8], m2.pi(tau).values[:, :8])


def test_taylor_lift_is_coherent(model, grid):
    t, x1 = sympy.symbols("t x1")
    f = taylor_lift(grid, sympy.cos(2 * sympy.pi * x1), Fraction(3, 2), P1)
    assert np.isfinite(dgamma_seminorm(f, model, n_pairs=8))


def test_trig_field_on_grid(grid):
    f = TrigField.cosine(1, grid.T, grid.L, 1.3, (1, 2), phase=0.3)
    vals = f.on_grid(grid)
    for idx in [(0, 0), (5, 3), (63, 15)]:
        assert vals[idx] == pytest.approx(f.at(grid.point(idx)), abs=1e-12)
