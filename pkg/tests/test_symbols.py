from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from regstruct.symbols import (
    ONE,
    XI,
    FormalSum,
    Homogeneity,
    HomogeneityParams,
    NonTermination,
    ParseError,
    E,
    I,
    X,
    generate_model_space,
    homogeneity,
    parse,
    product,
    render,
    sort_symbols,
)

P = HomogeneityParams()
K = Fraction(1, 100)

CENSUS = {
    "Xi": (Fraction(-5, 2), -1),
    "I(Xi)^3": (Fraction(-3, 2), -3),
    "I(Xi)^2": (Fraction(-1), -2),
    "I(Xi)^2*I(I(Xi)^3)": (Fraction(-1, 2), -5),
    "I(Xi)": (Fraction(-1, 2), -1),
    "I(Xi)*I(I(Xi)^3)": (Fraction(0), -4),
    "I(Xi)^2*I(I(Xi)^2)": (Fraction(0), -4),
    "I(Xi)^2*X_1": (Fraction(0), -2),
    "I(Xi)^2*X_2": (Fraction(0), -2),
    "I(Xi)^2*X_3": (Fraction(0), -2),
}


def trees():
    leaves = st.sampled_from([XI, X((0, 1, 0, 0)), X((1, 0, 0, 0)), ONE])

    def extend(children):
        return st.one_of(
            children.map(lambda t: I(t)).filter(lambda t: not isinstance(t, FormalSum)),
            st.lists(children, min_size=2, max_size=3).map(lambda ts: product(*ts)),
        )

    return st.recursive(leaves, extend, max_leaves=6)


@pytest.mark.parametrize("text", list(CENSUS) + ["1", "X_0", "X_1^2", "E(I(Xi)^5)", "I(Xi^2)", "E(1)"])
def test_parse_render_roundtrip(text):
    t = parse(text, P)
    assert render(t) == text
    assert parse(render(t), P) == t


@pytest.mark.parametrize("text,expected", [(k, v) for k, v in CENSUS.items()])
def test_homogeneity_values(text, expected):
    h = homogeneity(parse(text, P), P)
    assert (h.a, h.b) == expected


def test_census_exact():
    space = generate_model_space(P, gamma=0)
    got = {render(t): (homogeneity(t, P).a, homogeneity(t, P).b) for t in space.census(0)}
    assert got == CENSUS


def test_census_independent_of_kappa():
    a = generate_model_space(HomogeneityParams(kappa=Fraction(1, 100)), 0).census(0)
    b = generate_model_space(HomogeneityParams(kappa=Fraction(1, 50)), 0).census(0)
    assert {render(t) for t in a} == {render(t) for t in b}


def test_census_low_cutoff():
    space = generate_model_space(P, gamma=-3)
    assert [render(t) for t in space.census(-3)] == []
    assert [render(t) for t in generate_model_space(P, gamma=-2).census(-2)] == ["Xi"]


def test_extended_contains_quintic():
    space = generate_model_space(P, gamma=0, extended=True)
    names = {render(t) for t in space.census(0, which="W_ex")}
    assert "E(I(Xi)^5)" in names
    assert homogeneity(parse("E(I(Xi)^5)", P), P) == Homogeneity(Fraction(-3, 2), -5)


def test_integration_of_polynomial_vanishes():
    out = parse("I(X_1)", P)
    assert isinstance(out, FormalSum) and out.is_zero


def test_ordering_is_by_homogeneity_then_kappa_then_render():
    syms = sort_symbols(generate_model_space(P, 0).census(0), P)
    keys = [(homogeneity(t, P).a, homogeneity(t, P).b, render(t)) for t in syms]
    assert keys == sorted(keys)


@pytest.mark.parametrize("bad", ["I(Xi", "Q", "Xi^", "X_", "I(Xi))"])
def test_parse_errors(bad):
    with pytest.raises(ParseError):
        parse(bad, P)


def test_budget_raises():
    with pytest.raises(NonTermination):
        generate_model_space(P, 0, budget=3)


def test_generated_space_is_closed():
    space = generate_model_space(P, gamma=Fraction(3, 2))
    names = set(space.U) | set(space.W)
    for t in space.W:
        for f in t.factors():
            if f.kind == "I":
                assert f in names or homogeneity(f, P).value(K) > Fraction(3, 2)


@given(trees(), trees())
def test_homogeneity_additive(a, b):
    assert homogeneity(product(a, b), P) == homogeneity(a, P) + homogeneity(b, P)


@given(trees(), trees())
def test_product_commutative(a, b):
    assert product(a, b) == product(b, a)


@given(trees())
def test_roundtrip_property(t):
    assert parse(render(t), P) == t


@given(st.lists(st.tuples(st.sampled_from(["Xi", "I(Xi)", "1"]), st.integers(-5, 5)), max_size=6))
def test_formal_sum_cancellation(terms):
    s = FormalSum()
    for name, c in terms:
        s = s + FormalSum.of(parse(name, P), c)
    for name, c in terms:
        s = s - FormalSum.of(parse(name, P), c)
    assert s.is_zero


def test_E_of_unit_is_a_symbol():
    assert render(E(ONE)) == "E(1)"
    assert homogeneity(E(ONE), P) == Homogeneity(1)
