import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
import sympy
from hypothesis import given, strategies as st

from regstruct.cumulants import (
    BudgetExceeded,
    CumulantSpec,
    MissingCumulant,
    MissingMoment,
    bell_number,
    cumulants_from_moments,
    enumerate_partitions,
    gaussian_wick_polynomial,
    hermite_coefficients,
    hermite_polynomial,
    ito_isometry_check,
    moments_from_cumulants,
    pair_partitions,
    rgs_array,
    wick_decompose,
    wick_expectation,
    wick_product,
)

c, x = sympy.symbols("c x")


def _subsets(labels):
    for r in range(1, len(labels) + 1):
        yield from itertools.combinations(labels, r)


def rational_tables(n):
    labels = tuple(range(n))
    blocks = list(_subsets(labels))
    return st.lists(
        st.fractions(min_value=-5, max_value=5, max_denominator=9), min_size=len(blocks), max_size=len(blocks)
    ).map(lambda vals: dict(zip(blocks, vals)))


@pytest.mark.parametrize("n,bell", [(0, 1), (1, 1), (2, 2), (3, 5), (4, 15), (5, 52), (6, 203), (8, 4140)])
def test_bell_numbers(n, bell):
    assert bell_number(n) == bell
    if n >= 1:
        assert len(enumerate_partitions(n)) == bell


@pytest.mark.parametrize("backend", ["numba", "numpy"])
def test_rgs_backends_agree(backend):
    ref = rgs_array(7, backend="numpy")
    assert np.array_equal(rgs_array(7, backend=backend), ref)


def test_pair_partitions_count():
    assert len(pair_partitions(6)) == 15
    assert pair_partitions(5) == []


@pytest.mark.parametrize("n", range(1, 7))
@given(data=st.data())
def test_moment_cumulant_roundtrip(n, data):
    table = data.draw(rational_tables(n))
    spec = CumulantSpec(table)
    moments = {B: moments_from_cumulants(spec, B) for B in _subsets(tuple(range(n)))}
    for B, k in table.items():
        assert cumulants_from_moments(moments, B) == k


@pytest.mark.parametrize("n", range(1, 7))
@given(data=st.data())
def test_wick_expectation_vanishes(n, data):
    spec = CumulantSpec(data.draw(rational_tables(n)))
    for B in _subsets(tuple(range(n))):
        assert wick_expectation(B, spec) == 0


@pytest.mark.parametrize("n", range(0, 7))
def test_wick_power_is_hermite(n):
    got = gaussian_wick_polynomial(n, c)
    want = hermite_coefficients(n, c)
    assert [sympy.expand(a - b) for a, b in zip(got, want)] == [0] * (n + 1)


@pytest.mark.parametrize("n,poly", [
    (2, x**2 - c),
    (3, x**3 - 3 * c * x),
    (4, x**4 - 6 * c * x**2 + 3 * c**2),
    (5, x**5 - 10 * c * x**3 + 15 * c**2 * x),
])
def test_hermite_closed_forms(n, poly):
    assert sympy.expand(hermite_polynomial(n, c) - poly) == 0


def test_wick_decompose_inverts_product():
    spec = CumulantSpec({(0,): Fraction(1), (1,): Fraction(2), (0, 1): Fraction(3), (0, 0): Fraction(1),
                         (1, 1): Fraction(1)})
    dec = wick_decompose((0, 1), spec)
    assert dec[(0, 1)] == 1
    assert dec[()] == moments_from_cumulants(spec, (0, 1))


def test_non_gaussian_third_cumulant_enters():
    spec = CumulantSpec.single("X", {2: Fraction(1), 3: Fraction(2)})
    prod = wick_product(["X"] * 3, spec)
    assert prod[()] == -2


def test_missing_entries_raise():
    with pytest.raises(MissingCumulant):
        moments_from_cumulants(CumulantSpec({(0,): 1}), (0, 1))
    with pytest.raises(MissingMoment):
        cumulants_from_moments({(0,): 1}, (0, 1))


def test_budget():
    with pytest.raises(BudgetExceeded):
        gaussian_wick_polynomial(11, c)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_ito_isometry(k):
    rng = np.random.default_rng(k)
    f = rng.normal(size=(5,) * k)
    g = rng.normal(size=(5,) * k)
    rep = ito_isometry_check(f, g, h=0.5, n_samples=40000, seed=k)
    assert abs(rep.z) < 4.5
    assert math.isfinite(rep.rhs)
