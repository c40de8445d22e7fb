import itertools

import pytest
import sympy
from hypothesis import given, strategies as st

from regstruct.renorm import (
    NonNilpotent,
    SubstitutionGenerator,
    apply_generator,
    check_renorm_admissible,
    commutator,
    exp_map,
    extended_generators,
    hermite_drift_expansion,
    hermite_recentering_identity,
    renormalized_equation,
    renormalized_equation_extended,
    standard_generators,
)
from regstruct.symbols import ONE, FormalSum, HomogeneityParams, generate_model_space, homogeneity, parse

P = HomogeneityParams()
C1, C2, C3, C4, C5 = sympy.symbols("C1:6")
GENS = standard_generators(P)
EXT = extended_generators(P)


def s(text):
    return parse(text, P)


def fs(pairs):
    return FormalSum({s(k): v for k, v in pairs.items()})


def _basis(extended=False):
    sp = generate_model_space(P, gamma=0, extended=extended)
    pool = set(sp.W_ex if extended else sp.W) | set(sp.U)
    out = {t for t in pool if homogeneity(t, P).value(P.kappa) <= 0}
    M = exp_map(EXT if extended else GENS)
    todo = list(out)
    while todo:
        for t in M(todo.pop()).keys():
            if t not in out:
                out.add(t)
                todo.append(t)
    return sorted(out, key=lambda t: t._key)


@pytest.mark.parametrize("gen,tau,expected", [
    (0, "I(Xi)^3", {"I(Xi)": 3}),
    (0, "I(Xi)^2*I(I(Xi))", {"I(I(Xi))": 1}),
    (2, "I(Xi)^2*I(I(Xi)^3)", {"I(Xi)": 3}),
    (0, "I(Xi)", {}),
    (1, "I(Xi)^2*I(I(Xi)^3)", {}),
    (3, "I(Xi)^2*I(I(Xi)^3)", {"1": 1}),
    (4, "I(Xi)^2*I(I(Xi)^3)", {"I(Xi)": 2}),
])
def test_generator_examples(gen, tau, expected):
    assert apply_generator(GENS[gen], s(tau)) == fs(expected)


def test_extended_generator_example():
    out = apply_generator(EXT[0], s("I(Xi)^2*I(E(I(Xi)^5))"))
    assert out == fs({"I(Xi)^2*I(E(I(Xi)^3))": 10, "I(E(I(Xi)^5))": 1})


def test_exp_map_low_symbols():
    M = exp_map(GENS)
    assert M(s("I(Xi)^2")) == FormalSum({s("I(Xi)^2"): 1, ONE: -C1})
    assert M(s("I(Xi)^3")) == FormalSum({s("I(Xi)^3"): 1, s("I(Xi)"): -3 * C1, ONE: -C2})


def test_five_term_identity():
    M = exp_map(GENS, [C1, 0, C3, 0, 0])
    expected = FormalSum({
        s("I(Xi)^2*I(I(Xi)^3)"): 1,
        s("I(Xi)^2*I(I(Xi))"): -3 * C1,
        s("I(I(Xi)^3)"): -C1,
        s("I(I(Xi))"): 3 * C1**2,
        s("I(Xi)"): -3 * C3,
    })
    assert M(s("I(Xi)^2*I(I(Xi)^3)")) == expected


@pytest.mark.parametrize("i,j", list(itertools.combinations(range(5), 2)))
def test_generators_commute(i, j):
    for tau in _basis():
        assert commutator(GENS[i], GENS[j], tau).is_zero


def test_commuting_matrices():
    basis = _basis()
    a = exp_map(GENS, [1, 0, 0, 0, 0]).matrix(basis)
    b = exp_map(GENS, [0, 0, 1, 0, 1]).matrix(basis)
    assert a * b == b * a


@pytest.mark.parametrize("i", range(5))
def test_nilpotent(i):
    for tau in _basis():
        v = FormalSum.of(tau)
        for _ in range(8):
            v = FormalSum({k: c for t, cc in v.items() for k, c in apply_generator(GENS[i], t).scale(cc).items()}) \
                if not v.is_zero else v
        assert v.is_zero


@given(st.lists(st.integers(-4, 4), min_size=5, max_size=5), st.lists(st.integers(-4, 4), min_size=5, max_size=5))
def test_exp_map_is_a_group_homomorphism(a, b):
    basis = _basis()
    Ma, Mb = exp_map(GENS, a), exp_map(GENS, b)
    Mab = exp_map(GENS, [x + y for x, y in zip(a, b)])
    for tau in basis[::3]:
        assert Ma(Mb(tau)) == Mab(tau)


def test_admissible_on_basis():
    basis = _basis()
    rep = check_renorm_admissible(exp_map(GENS), basis, params=P)
    assert rep.ok and rep.checked == len(basis)


def test_broken_generator_fails_commutation():
    broken = SubstitutionGenerator("B", s("I(Xi)"))
    rep = check_renorm_admissible(exp_map([broken], [1]), _basis(), params=P)
    assert not rep.ok


def test_series_depth_guard():
    with pytest.raises(NonNilpotent):
        exp_map(GENS, [1, 1, 1, 1, 1], depth=1)(s("I(Xi)^2*I(I(Xi)^3)"))


def test_renormalised_equation():
    pde = renormalized_equation()
    assert sympy.expand(pde.mass - (3 * C1 - 9 * C3 - 6 * C5)) == 0
    assert sympy.expand(pde.constant - (C2 - 3 * C4)) == 0
    assert pde.cubic == -1


def test_renormalised_equation_is_linear_in_constants():
    pde = renormalized_equation()
    for c in (C1, C2, C3, C4, C5):
        assert sympy.diff(pde.mass, c, 2) == 0
        assert sympy.diff(pde.constant, c, 2) == 0


def test_renormalised_equation_extended():
    a = sympy.Symbol("a")
    Ct = sympy.symbols("Ct1:5")
    pde = renormalized_equation_extended()
    assert sympy.expand(pde.mass - (9 * Ct[1] + 20 * a * Ct[2] + 25 * a**2 * Ct[3])) == 0
    assert pde.quintic == -a


def test_hermite_expansion():
    theta, C, a, eps = sympy.symbols("theta C a eps")
    coef = hermite_drift_expansion()
    assert sympy.simplify(coef[1] - (theta + 3 * C - 15 * a * C**2) / eps) == 0
    assert sympy.simplify(coef[3] - (-1 + 10 * a * C)) == 0
    assert sympy.simplify(coef[5] + a * eps) == 0
    assert hermite_recentering_identity() == 0
    x = sympy.Symbol("x")
    printed = hermite_recentering_identity(-(1 + 10 * a * C))
    assert sympy.expand(printed - 20 * a * C * x**3) == 0
