"""Structure group: the algebra of positive symbols, the coproducts and characters.

The positive algebra is the free commutative algebra generated by the
coordinate monomials ``X_i`` and by generators ``I_l(tau)`` / ``E_l(tau)``
of strictly positive homogeneity.  Elements of the model space are expanded
with :func:`delta` into ``T (x) T+`` and characters of ``T+`` act on ``T`` via
``Gamma_f tau = (id (x) f) delta(tau)``.

The polynomial sector uses the additive coproduct ``X_i -> X_i (x) 1 + 1 (x) X_i``
so that the character ``f_x(X_i) = -x_i`` re-centres monomials at ``x``.
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Iterable, Mapping

import numpy as np

from .symbols import (
    ONE,
    FormalSum,
    Homogeneity,
    HomogeneityParams,
    SymbolTree,
    X,
    _E,
    _I,
    homogeneity,
    multi_indices,
    parabolic_degree,
    product,
)

__all__ = [
    "Generator",
    "PlusMonomial",
    "PLUS_ONE",
    "MissingGenerator",
    "Functional",
    "make_generator",
    "delta",
    "delta_plus",
    "delta_plus_generator",
    "gamma_apply",
    "convolve",
    "inverse",
    "counit",
    "generators_of",
    "generator_closure",
    "check_coassociativity",
    "check_plus_coassociativity",
    "tensor_mul",
    "random_functional",
]


class MissingGenerator(KeyError):
    """A functional was evaluated on a generator it does not define."""


def _fmt_index(ell: tuple[int, ...]) -> str:
    return ",".join(str(v) for v in ell)


@dataclass(frozen=True)
class Generator:
    """Single generator ``I_ell(tau)`` or ``E_ell(tau)`` of the positive algebra."""

    kind: str
    ell: tuple[int, ...]
    tau: SymbolTree
    _sort: tuple = field(init=False, repr=False, compare=False, hash=False)
    _hash: int = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if self.kind not in ("I", "E"):
            raise ValueError("generator kind must be 'I' or 'E'")
        object.__setattr__(self, "_sort", (self.tau._key, self.kind, self.ell))
        object.__setattr__(self, "_hash", hash((self.kind, self.ell, self.tau)))

    def __hash__(self) -> int:
        return self._hash

    def homogeneity(self, params: HomogeneityParams) -> Homogeneity:
        jump = 2 if self.kind == "I" else 1
        return homogeneity(self.tau, params) + jump - parabolic_degree(self.ell)

    @property
    def n_int(self) -> int:
        return self.tau.n_int + 1

    def __str__(self) -> str:
        return f"{self.kind}_[{_fmt_index(self.ell)}]({self.tau})"

    def __lt__(self, other: "Generator") -> bool:
        return self._sort < other._sort


def _gen_key(g: Generator):
    return g._sort


def _pad(k: tuple[int, ...], dim: int) -> tuple[int, ...]:
    return k if k else (0,) * dim


@lru_cache(maxsize=None)
def _hval(tau: SymbolTree, params: HomogeneityParams) -> Fraction:
    return homogeneity(tau, params).value(params.kappa)


def make_generator(kind: str, ell: Iterable[int], tau: SymbolTree, params: HomogeneityParams) -> Generator | None:
    """Build a generator, returning ``None`` when it is zero by convention.

    ``I_ell(tau)`` vanishes unless ``|ell|_s < |tau| + 2`` and ``tau`` is not a
    polynomial; ``E_ell(tau)`` vanishes unless ``|ell|_s < |tau| + 1``.
    """
    return _make_generator(kind, _pad(tuple(ell), params.d + 1), tau, params)


@lru_cache(maxsize=None)
def _make_generator(kind: str, ell: tuple[int, ...], tau: SymbolTree, params: HomogeneityParams) -> Generator | None:
    if kind == "I" and tau.is_polynomial:
        return None
    jump = 2 if kind == "I" else 1
    if parabolic_degree(ell) < _hval(tau, params) + jump:
        return Generator(kind, ell, tau)
    return None


class PlusMonomial:
    """Monomial ``X^k * prod(generators)`` of the positive algebra."""

    __slots__ = ("poly", "gens", "_hash")

    def __init__(self, poly: tuple[int, ...] = (), gens: tuple[Generator, ...] = ()):
        self.poly = poly if any(poly) else ()
        self.gens = tuple(sorted(gens))
        self._hash = hash((self.poly, self.gens))

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other) -> bool:
        return isinstance(other, PlusMonomial) and self.poly == other.poly and self.gens == other.gens

    def __mul__(self, other: "PlusMonomial") -> "PlusMonomial":
        if not isinstance(other, PlusMonomial):
            return NotImplemented
        if not self.poly:
            poly = other.poly
        elif not other.poly:
            poly = self.poly
        else:
            poly = tuple(a + b for a, b in zip(self.poly, other.poly))
        return PlusMonomial(poly, self.gens + other.gens)

    @property
    def is_unit(self) -> bool:
        return not self.poly and not self.gens

    def homogeneity(self, params: HomogeneityParams) -> Homogeneity:
        h = Homogeneity(parabolic_degree(self.poly))
        for g in self.gens:
            h = h + g.homogeneity(params)
        return h

    @property
    def _key(self):
        return (len(self.gens), self.poly, tuple(_gen_key(g) for g in self.gens))

    def __lt__(self, other: "PlusMonomial") -> bool:
        return self._key < other._key

    def __str__(self) -> str:
        parts = []
        if self.poly:
            parts.append(str(X(self.poly)))
        parts.extend(str(g) for g in self.gens)
        return "*".join(parts) if parts else "1+"

    __repr__ = __str__

    @classmethod
    def of(cls, gen: Generator) -> "PlusMonomial":
        return cls((), (gen,))


PLUS_ONE = PlusMonomial()


@lru_cache(maxsize=1 << 18)
def _tree_mul(x: SymbolTree, y: SymbolTree) -> SymbolTree:
    return product(x, y)


def tensor_mul(a: tuple, b: tuple) -> tuple:
    """Componentwise product of two pure tensors."""
    return tuple(_tree_mul(x, y) if isinstance(x, SymbolTree) else x * y for x, y in zip(a, b))


def _tensor_product(s1: FormalSum, s2: FormalSum) -> FormalSum:
    return s1.multiply(s2, mul=tensor_mul)


def _binomial_split(k: tuple[int, ...], left: Callable, right: Callable) -> FormalSum:
    """Sum over j <= k of binom(k, j) left(j) (x) right(k - j)."""
    acc: dict = {}
    for j in itertools.product(*(range(v + 1) for v in k)):
        rest = tuple(a - b for a, b in zip(k, j))
        coeff = 1
        for a, b in zip(k, j):
            coeff *= math.comb(a, b)
        key = (left(j), right(rest))
        acc[key] = acc.get(key, 0) + coeff
    return FormalSum(acc)


def _factorial(k: tuple[int, ...]) -> int:
    out = 1
    for v in k:
        out *= math.factorial(v)
    return out


def _inv_factorial(k: tuple[int, ...]):
    f = _factorial(k)
    return 1 if f == 1 else Fraction(1, f)


def _plus_poly(k: tuple[int, ...]) -> PlusMonomial:
    return PlusMonomial(k, ())


@lru_cache(maxsize=None)
def _delta_cached(tau: SymbolTree, params: HomogeneityParams) -> FormalSum:
    dim = params.d + 1
    if tau.kind == "Xi":
        return FormalSum.of((tau, PLUS_ONE))
    if tau.kind == "X":
        return _binomial_split(tau.poly, X, _plus_poly)
    if tau.kind == "Prod":
        out = FormalSum.of((ONE, PLUS_ONE))
        for f in tau.children:
            out = _tensor_product(out, _delta_cached(f, params))
        return out
    kind = tau.kind
    (inner,) = tau.children
    wrap = _I if kind == "I" else _E
    acc: dict = {}
    for (left, right), c in _delta_cached(inner, params).items():
        new_left = wrap(left)
        if new_left is None:
            continue
        key = (new_left, right)
        acc[key] = acc.get(key, 0) + c
    jump = 2 if kind == "I" else 1
    bound = _hval(inner, params) + jump
    for k in multi_indices(dim, bound, strict=True):
        gen = make_generator(kind, k, inner, params)
        if gen is None:
            continue
        key = (X(k), PlusMonomial.of(gen))
        acc[key] = acc.get(key, 0) + _inv_factorial(k)
    return FormalSum(acc)


def delta(tau: SymbolTree, params: HomogeneityParams | None = None) -> FormalSum:
    """Coproduct ``T -> T (x) T+`` as a sum over ``(SymbolTree, PlusMonomial)`` pairs."""
    return _delta_cached(tau, params or HomogeneityParams())


@lru_cache(maxsize=None)
def _delta_plus_gen(gen: Generator, params: HomogeneityParams) -> FormalSum:
    dim = params.d + 1
    acc: dict = {}
    for (left, right), c in _delta_cached(gen.tau, params).items():
        new = make_generator(gen.kind, gen.ell, left, params)
        if new is None:
            continue
        # left may carry an X^m factor only through products, never alone
        key = (PlusMonomial.of(new), right)
        acc[key] = acc.get(key, 0) + c
    jump = 2 if gen.kind == "I" else 1
    bound = _hval(gen.tau, params) + jump - parabolic_degree(gen.ell)
    for k in multi_indices(dim, bound, strict=True):
        shifted = tuple(a + b for a, b in zip(gen.ell, k))
        new = make_generator(gen.kind, shifted, gen.tau, params)
        if new is None:
            continue
        key = (_plus_poly(k), PlusMonomial.of(new))
        acc[key] = acc.get(key, 0) + _inv_factorial(k)
    return FormalSum(acc)


def delta_plus_generator(gen: Generator, params: HomogeneityParams | None = None) -> FormalSum:
    """Coproduct of a single generator of ``T+``."""
    return _delta_plus_gen(gen, params or HomogeneityParams())


def delta_plus(sigma: PlusMonomial, params: HomogeneityParams | None = None) -> FormalSum:
    """Coproduct ``T+ -> T+ (x) T+`` (multiplicative, binomial on ``X``)."""
    return _delta_plus_cached(sigma, params or HomogeneityParams())


@lru_cache(maxsize=1 << 16)
def _delta_plus_cached(sigma: PlusMonomial, params: HomogeneityParams) -> FormalSum:
    if sigma.poly:
        out = _binomial_split(sigma.poly, _plus_poly, _plus_poly)
    else:
        out = FormalSum.of((PLUS_ONE, PLUS_ONE))
    for g in sigma.gens:
        out = _tensor_product(out, _delta_plus_gen(g, params))
    return out


# ---------------------------------------------------------------------------
# characters


def _times(c, v):
    """Multiply an exact coefficient into a possibly floating or array value."""
    if isinstance(v, (int, Fraction)):
        return c * v
    return float(c) * v


class Functional:
    """Multiplicative linear functional (character) on ``T+``.

    Parameters
    ----------
    poly : sequence, optional
        Values ``f(X_i)`` for ``i = 0..d``; ``None`` means all zero.
    values : mapping
        Values on single generators.
    default : optional
        Value for generators missing from ``values``; ``None`` raises
        :class:`MissingGenerator` instead.
    """

    def __init__(self, poly=None, values: Mapping[Generator, object] | None = None, default=None):
        self.poly = tuple(poly) if poly is not None else None
        self.values = dict(values or {})
        self.default = default

    def on_generator(self, gen: Generator):
        try:
            return self.values[gen]
        except KeyError:
            if self.default is None:
                raise MissingGenerator(str(gen)) from None
            return self.default

    def on_poly(self, k: tuple[int, ...]):
        if not k:
            return 1
        if self.poly is None:
            return 0
        out = 1
        for v, e in zip(self.poly, k):
            if e:
                out = out * v**e
        return out

    def __call__(self, sigma: PlusMonomial):
        out = self.on_poly(sigma.poly)
        for g in sigma.gens:
            out = out * self.on_generator(g)
        return out

    def evaluate(self, s: FormalSum):
        """Linear extension to a formal sum of plus-monomials."""
        total = 0
        for sigma, c in s.items():
            total = total + _times(c, self(sigma))
        return total

    def generators(self) -> set[Generator]:
        return set(self.values)


def counit() -> Functional:
    """The neutral element ``e``: zero on every generator and on ``X``."""
    return Functional(poly=None, values={}, default=0)


def gamma_apply(f: Functional, tau, params: HomogeneityParams | None = None) -> FormalSum:
    """``Gamma_f tau = (id (x) f) delta(tau)``, linear in ``tau``."""
    params = params or HomogeneityParams()
    if isinstance(tau, FormalSum):
        out = FormalSum()
        for t, c in tau.items():
            out = out + gamma_apply(f, t, params).scale(c)
        return out
    acc: dict = {}
    for (left, right), c in delta(tau, params).items():
        val = f(right)
        if isinstance(val, (int, Fraction)) and val == 0:
            continue
        acc[left] = acc.get(left, 0) + _times(c, val)
    return FormalSum(acc)


def _poly_sum(f: Functional, g: Functional, dim: int):
    if f.poly is None and g.poly is None:
        return None
    fp = f.poly if f.poly is not None else (0,) * dim
    gp = g.poly if g.poly is not None else (0,) * dim
    return tuple(a + b for a, b in zip(fp, gp))


def convolve(f: Functional, g: Functional, generators: Iterable[Generator] | None = None,
             params: HomogeneityParams | None = None) -> Functional:
    """Convolution ``(f o g)(sigma) = (f (x) g) delta_plus(sigma)``.

    The result is tabulated on ``generators`` (default: the union of the
    generators defined by ``f`` and ``g``).
    """
    params = params or HomogeneityParams()
    gens = set(generators) if generators is not None else f.generators() | g.generators()
    values = {}
    for gen in gens:
        total = 0
        for (left, right), c in _delta_plus_gen(gen, params).items():
            fl = f(left)
            if isinstance(fl, (int, Fraction)) and fl == 0:
                continue
            total = total + _times(c, fl * g(right))
        values[gen] = total
    default = 0 if (f.default == 0 and g.default == 0) else None
    return Functional(poly=_poly_sum(f, g, params.d + 1), values=values, default=default)


def inverse(f: Functional, generators: Iterable[Generator] | None = None,
            params: HomogeneityParams | None = None) -> Functional:
    """Convolution inverse by triangular recursion.

    Generators are resolved in the order (number of ``I``/``E`` nodes,
    homogeneity); the defining equation ``(f o g)(I_l tau) = 0`` involves ``g``
    only on generators strictly earlier in that order, apart from ``g(I_l tau)``
    itself which appears with coefficient one.
    """
    params = params or HomogeneityParams()
    memo: dict[Generator, object] = {}

    def g_of(gen: Generator):
        if gen in memo:
            return memo[gen]
        target = PlusMonomial.of(gen)
        total = 0
        for (left, right), c in _delta_plus_gen(gen, params).items():
            if left.is_unit and right == target:
                continue
            fl = f(left)
            if isinstance(fl, (int, Fraction)) and fl == 0:
                continue
            gr = right_value(right)
            total = total + _times(c, fl * gr)
        memo[gen] = -total
        return memo[gen]

    neg_poly = None if f.poly is None else tuple(-v for v in f.poly)
    poly_only = Functional(poly=neg_poly)

    def right_value(sigma: PlusMonomial):
        out = poly_only.on_poly(sigma.poly)
        for gg in sigma.gens:
            out = out * g_of(gg)
        return out

    gens = set(generators) if generators is not None else f.generators()
    for gen in sorted(gens, key=lambda gg: (gg.n_int, gg.homogeneity(params).key(), _gen_key(gg))):
        g_of(gen)
    default = 0 if f.default == 0 else None
    return Functional(poly=neg_poly, values=dict(memo), default=default)


# ---------------------------------------------------------------------------
# generator sets and checks


def generators_of(symbols: Iterable[SymbolTree], params: HomogeneityParams | None = None) -> set[Generator]:
    """Generators appearing on the right of ``delta(tau)`` for the given symbols."""
    params = params or HomogeneityParams()
    out: set[Generator] = set()
    for tau in symbols:
        for (_, right) in delta(tau, params).keys():
            out.update(right.gens)
    return out


def generator_closure(gens: Iterable[Generator], params: HomogeneityParams | None = None) -> set[Generator]:
    """Smallest superset closed under taking generators of both sides of ``delta_plus``."""
    params = params or HomogeneityParams()
    todo = list(gens)
    seen: set[Generator] = set()
    while todo:
        g = todo.pop()
        if g in seen:
            continue
        seen.add(g)
        for (left, right) in _delta_plus_gen(g, params).keys():
            for h in left.gens + right.gens:
                if h not in seen:
                    todo.append(h)
    return seen


def random_functional(gens: Iterable[Generator], dim: int, rng: random.Random, max_den: int = 7) -> Functional:
    """Random rational-valued character on a generator set (for tests)."""

    def r():
        return Fraction(rng.randint(-9, 9), rng.randint(1, max_den))

    return Functional(poly=[r() for _ in range(dim)], values={g: r() for g in sorted(gens)})


@dataclass
class CoassociativityReport:
    checked: int = 0
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def _apply_first(s: FormalSum, fn: Callable) -> FormalSum:
    """Apply ``fn`` (returning a tensor sum) to the first factor of each pure tensor."""
    acc: dict = {}
    for key, c in s.items():
        for key2, c2 in fn(key[0]).items():
            k = key2 + key[1:]
            acc[k] = acc.get(k, 0) + c * c2
    return FormalSum(acc)


def _apply_last(s: FormalSum, fn: Callable) -> FormalSum:
    acc: dict = {}
    for key, c in s.items():
        for key2, c2 in fn(key[-1]).items():
            k = key[:-1] + key2
            acc[k] = acc.get(k, 0) + c * c2
    return FormalSum(acc)


def check_coassociativity(symbols: Iterable[SymbolTree], params: HomogeneityParams | None = None) -> CoassociativityReport:
    """Compare ``(delta (x) id) delta`` with ``(id (x) delta_plus) delta`` exactly."""
    params = params or HomogeneityParams()
    rep = CoassociativityReport()
    for tau in symbols:
        d1 = delta(tau, params)
        lhs = _apply_first(d1, lambda t: delta(t, params))
        rhs = _apply_last(d1, lambda s: delta_plus(s, params))
        rep.checked += 1
        if not (lhs - rhs).is_zero:
            rep.failures.append(str(tau))
    return rep


def check_plus_coassociativity(gens: Iterable[Generator], params: HomogeneityParams | None = None) -> CoassociativityReport:
    """Compare ``(delta_plus (x) id) delta_plus`` with ``(id (x) delta_plus) delta_plus`` on generators."""
    params = params or HomogeneityParams()
    rep = CoassociativityReport()
    for g in gens:
        d1 = delta_plus(PlusMonomial.of(g), params)
        lhs = _apply_first(d1, lambda s: delta_plus(s, params))
        rhs = _apply_last(d1, lambda s: delta_plus(s, params))
        rep.checked += 1
        if not (lhs - rhs).is_zero:
            rep.failures.append(str(g))
    return rep
