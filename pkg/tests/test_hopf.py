import random
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from regstruct.hopf import (
    PLUS_ONE,
    Functional,
    MissingGenerator,
    PlusMonomial,
    check_coassociativity,
    check_plus_coassociativity,
    convolve,
    counit,
    delta,
    gamma_apply,
    generator_closure,
    generators_of,
    inverse,
    make_generator,
    random_functional,
)
from regstruct.symbols import ONE, FormalSum, HomogeneityParams, generate_model_space, homogeneity, parse

P = HomogeneityParams()


def _symbols(extended=False, cut=2):
    sp = generate_model_space(P, gamma=cut, extended=extended)
    pool = set(sp.U) | set(sp.W) | (set(sp.W_ex) if extended else set())
    return sorted((t for t in pool if homogeneity(t, P).value(P.kappa) <= cut), key=lambda t: t._key)


SYMS = _symbols()
GENS = generator_closure(generators_of(SYMS, P), P)


def test_delta_of_noise_is_trivial():
    d = delta(parse("Xi", P), P)
    assert dict(d.items()) == {(parse("Xi", P), PLUS_ONE): 1}


def test_delta_of_I_xi_has_no_positive_generators():
    d = delta(parse("I(Xi)", P), P)
    assert dict(d.items()) == {(parse("I(Xi)", P), PLUS_ONE): 1}


def test_delta_of_polynomial_is_binomial():
    x1 = parse("X_1", P)
    d = dict(delta(parse("X_1^2", P), P).items())
    assert len(d) == 3
    assert sorted(d.values()) == [1, 1, 2]
    assert d[(x1, PlusMonomial((0, 1, 0, 0)))] == 2


def test_gamma_shifts_by_functional_value():
    tau = parse("I(I(Xi)^3)", P)
    gen = make_generator("I", (0, 0, 0, 0), parse("I(Xi)^3", P), P)
    c = Fraction(3, 7)
    out = gamma_apply(Functional(values={gen: c}, default=0), tau, P)
    assert out == FormalSum({tau: 1, ONE: c})


def test_nonpositive_generators_are_zero():
    assert make_generator("I", (0, 0, 0, 0), parse("Xi", P), P) is None
    assert make_generator("I", (0, 1, 0, 0), parse("I(Xi)^3", P), P) is None
    assert make_generator("I", (0, 0, 0, 0), parse("X_1", P), P) is None


@pytest.mark.parametrize("extended", [False, True])
def test_coassociativity(extended):
    syms = _symbols(extended)
    assert check_coassociativity(syms, P).ok
    gens = generator_closure(generators_of(syms, P), P)
    rep = check_plus_coassociativity(gens, P)
    assert rep.ok and rep.checked == len(gens)


def test_counit_acts_as_identity():
    e = counit()
    for tau in SYMS[:40]:
        assert gamma_apply(e, tau, P) == FormalSum.of(tau)


@given(st.integers(0, 10_000))
def test_group_law(seed):
    rng = random.Random(seed)
    f = random_functional(GENS, 4, rng)
    g = random_functional(GENS, 4, rng)
    fg = convolve(f, g, GENS, P)
    for tau in SYMS[::5]:
        assert gamma_apply(f, gamma_apply(g, tau, P), P) == gamma_apply(fg, tau, P)


@given(st.integers(0, 10_000))
def test_inverse_both_sides(seed):
    f = random_functional(GENS, 4, random.Random(seed))
    g = inverse(f, GENS, P)
    for h in (convolve(f, g, GENS, P), convolve(g, f, GENS, P)):
        assert all(v == 0 for v in h.values.values())
        assert all(v == 0 for v in h.poly)


def test_inverse_is_involution():
    f = random_functional(GENS, 4, random.Random(5))
    ff = inverse(inverse(f, GENS, P), GENS, P)
    assert all(ff.values[g] == f.values[g] for g in GENS)
    assert tuple(ff.poly) == tuple(f.poly)


def test_inverse_of_translation_flips_sign():
    f = Functional(poly=[Fraction(1), Fraction(2), Fraction(-3), Fraction(1, 2)], values={}, default=0)
    g = inverse(f, [], P)
    assert tuple(g.poly) == tuple(-v for v in f.poly)


def test_gamma_is_lower_triangular():
    f = random_functional(GENS, 4, random.Random(11))
    for tau in SYMS:
        h = homogeneity(tau, P).value(P.kappa)
        rest = gamma_apply(f, tau, P) - FormalSum.of(tau)
        assert all(homogeneity(t, P).value(P.kappa) < h for t in rest.keys())


def test_missing_generator_raises():
    f = Functional(poly=[0, 0, 0, 0], values={})
    tau = parse("I(I(Xi)^3)", P)
    with pytest.raises(MissingGenerator):
        gamma_apply(f, tau, P)
