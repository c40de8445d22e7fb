"""Canonical symbol algebra for the model space of the dynamical Phi^4 model.

Symbols are built from the noise ``Xi``, the abstract monomials ``X^k``, the
abstract integration map ``I`` (raising homogeneity by 2), the small-parameter
map ``E`` (raising homogeneity by 1) and commutative products.  Homogeneities
are exact elements ``a + b*kappa`` of Q + Q*kappa, never floats.

Examples
--------
>>> from regstruct.symbols import parse, homogeneity, HomogeneityParams
>>> tau = parse("I(Xi)^2*I(I(Xi)^3)")
>>> str(homogeneity(tau, HomogeneityParams()))
'-1/2 - 5*kappa'
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Iterator, Mapping

import sympy

__all__ = [
    "Homogeneity",
    "HomogeneityParams",
    "SymbolTree",
    "FormalSum",
    "ModelSpace",
    "ParseError",
    "NonTermination",
    "XI",
    "ONE",
    "X",
    "I",
    "E",
    "product",
    "homogeneity",
    "render",
    "parse",
    "multi_indices",
    "parabolic_degree",
    "generate_model_space",
]


class ParseError(ValueError):
    """Raised when a symbol string does not follow the render grammar."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class NonTermination(RuntimeError):
    """Raised when symbol saturation exceeds its budget."""


# ---------------------------------------------------------------------------
# homogeneities


@dataclass(frozen=True)
class Homogeneity:
    """Exact homogeneity ``a + b*kappa``.

    Parameters
    ----------
    a : Fraction
        Value at ``kappa = 0``.
    b : Fraction
        Coefficient of ``kappa``.
    """

    a: Fraction
    b: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "a", Fraction(self.a))
        object.__setattr__(self, "b", Fraction(self.b))

    def __add__(self, other: "Homogeneity | int | Fraction") -> "Homogeneity":
        if isinstance(other, Homogeneity):
            return Homogeneity(self.a + other.a, self.b + other.b)
        return Homogeneity(self.a + Fraction(other), self.b)

    __radd__ = __add__

    def __neg__(self) -> "Homogeneity":
        return Homogeneity(-self.a, -self.b)

    def __sub__(self, other: "Homogeneity | int | Fraction") -> "Homogeneity":
        return self + (-other if isinstance(other, Homogeneity) else -Fraction(other))

    def value(self, kappa: Fraction | int) -> Fraction:
        """Evaluate at a concrete ``kappa``."""
        return self.a + self.b * Fraction(kappa)

    def key(self) -> tuple[Fraction, Fraction]:
        """Lexicographic key, exact for infinitesimally small ``kappa``."""
        return (self.a, self.b)

    def __str__(self) -> str:
        if self.b == 0:
            return str(self.a)
        mag = abs(self.b)
        kap = "kappa" if mag == 1 else f"{mag}*kappa"
        if self.a == 0:
            return kap if self.b > 0 else f"-{kap}"
        sign = "+" if self.b > 0 else "-"
        return f"{self.a} {sign} {kap}"


@dataclass(frozen=True)
class HomogeneityParams:
    """Grading data: regularity loss ``kappa``, spatial dimension and scaling.

    Parameters
    ----------
    kappa : Fraction
        Small positive rational; the noise has homogeneity ``-(d+2)/2 - kappa``.
    d : int
        Number of spatial dimensions.  Multi-indices have ``d + 1`` entries,
        time first.
    """

    kappa: Fraction = Fraction(1, 100)
    d: int = 3

    def __post_init__(self):
        object.__setattr__(self, "kappa", Fraction(self.kappa))
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.d < 1:
            raise ValueError("dimension must be at least 1")

    @property
    def scaling(self) -> tuple[int, ...]:
        """Parabolic scaling vector, time counted twice."""
        return (2,) + (1,) * self.d

    @property
    def noise(self) -> Homogeneity:
        return Homogeneity(Fraction(-(self.d + 2), 2), -1)


def parabolic_degree(k: Iterable[int]) -> int:
    """Scaled degree ``|k|_s`` of a multi-index with time first."""
    k = tuple(k)
    if not k:
        return 0
    return 2 * k[0] + sum(k[1:])


def multi_indices(dim: int, max_degree: Fraction | int, strict: bool = False) -> list[tuple[int, ...]]:
    """All multi-indices of length ``dim`` with parabolic degree below a bound.

    Parameters
    ----------
    dim : int
        Length ``d + 1`` of the multi-index.
    max_degree : rational
        Upper bound on ``|k|_s``.
    strict : bool
        Use ``<`` instead of ``<=``.
    """
    out = []
    if max_degree < 0 or (strict and max_degree <= 0):
        return out
    top = int(math.floor(max_degree))
    for k0 in range(top // 2 + 1):
        rest = top - 2 * k0
        for ks in itertools.product(range(rest + 1), repeat=dim - 1):
            k = (k0,) + ks
            deg = parabolic_degree(k)
            if deg < max_degree or (not strict and deg == max_degree):
                out.append(k)
    out.sort(key=lambda k: (parabolic_degree(k), k))
    return out


# ---------------------------------------------------------------------------
# trees


class SymbolTree:
    """Immutable canonical symbol.

    Use the constructors :data:`XI`, :data:`ONE`, :func:`X`, :func:`I`,
    :func:`E` and :func:`product` rather than instantiating directly.

    Attributes
    ----------
    kind : str
        One of ``"Xi"``, ``"X"``, ``"I"``, ``"E"``, ``"Prod"``.
    poly : tuple of int
        Multi-index for ``kind == "X"``, empty otherwise.
    children : tuple of SymbolTree
        The argument of ``I``/``E`` or the sorted factors of a product.
    """

    __slots__ = ("kind", "poly", "children", "n_noise", "shift", "n_int", "_render", "_hash", "_key")

    def __init__(self, kind: str, poly: tuple[int, ...] = (), children: tuple["SymbolTree", ...] = ()):
        self.kind = kind
        self.poly = poly
        self.children = children
        if kind == "Xi":
            self.n_noise, self.shift, self.n_int = 1, 0, 0
        elif kind == "X":
            self.n_noise, self.shift, self.n_int = 0, parabolic_degree(poly), 0
        elif kind in ("I", "E"):
            (c,) = children
            self.n_noise = c.n_noise
            self.shift = c.shift + (2 if kind == "I" else 1)
            self.n_int = c.n_int + 1
        elif kind == "Prod":
            self.n_noise = sum(c.n_noise for c in children)
            self.shift = sum(c.shift for c in children)
            self.n_int = sum(c.n_int for c in children)
        else:
            raise ValueError(f"unknown symbol kind {kind!r}")
        self._render = _render_node(self)
        self._hash = hash(self._render)
        # default three-dimensional grading orders factors canonically
        self._key = (Fraction(self.shift) - Fraction(5, 2) * self.n_noise, -self.n_noise, self._render)

    # --- identity -------------------------------------------------------
    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other) -> bool:
        return isinstance(other, SymbolTree) and self._render == other._render

    def __lt__(self, other: "SymbolTree") -> bool:
        return self._key < other._key

    def __repr__(self) -> str:
        return f"SymbolTree({self._render!r})"

    def __str__(self) -> str:
        return self._render

    # --- structure ------------------------------------------------------
    @property
    def is_unit(self) -> bool:
        return self.kind == "Prod" and not self.children

    def factors(self) -> tuple["SymbolTree", ...]:
        """Factors of the product (empty for the unit)."""
        if self.kind == "Prod":
            return self.children
        return (self,)

    @property
    def is_polynomial(self) -> bool:
        return all(f.kind == "X" for f in self.factors())

    def poly_index(self, dim: int | None = None) -> tuple[int, ...]:
        """Multi-index of the polynomial factor (zeros if absent)."""
        for f in self.factors():
            if f.kind == "X":
                return f.poly
        return (0,) * dim if dim else ()

    def non_poly_factors(self) -> tuple["SymbolTree", ...]:
        return tuple(f for f in self.factors() if f.kind != "X")

    def __mul__(self, other):
        if isinstance(other, SymbolTree):
            return product(self, other)
        if isinstance(other, FormalSum):
            return FormalSum.of(self) * other
        return NotImplemented

    def __pow__(self, n: int) -> "SymbolTree":
        return product(*([self] * n))

    def subtrees(self) -> Iterator["SymbolTree"]:
        """Depth-first iteration over all sub-symbols including ``self``."""
        yield self
        for c in self.children:
            yield from c.subtrees()


def _render_node(t: SymbolTree) -> str:
    if t.kind == "Xi":
        return "Xi"
    if t.kind == "X":
        parts = []
        for i, p in enumerate(t.poly):
            if p == 1:
                parts.append(f"X_{i}")
            elif p > 1:
                parts.append(f"X_{i}^{p}")
        return "*".join(parts)
    if t.kind in ("I", "E"):
        return f"{t.kind}({t.children[0]._render})"
    if not t.children:
        return "1"
    parts = []
    for child, group in itertools.groupby(t.children):
        n = len(list(group))
        parts.append(child._render if n == 1 else f"{child._render}^{n}")
    return "*".join(parts)


XI = SymbolTree("Xi")
ONE = SymbolTree("Prod")


def X(k: Iterable[int]) -> SymbolTree:
    """Abstract monomial ``X^k`` (the unit when ``k == 0``)."""
    k = tuple(int(v) for v in k)
    if any(v < 0 for v in k):
        raise ValueError("multi-index entries must be non-negative")
    if not any(k):
        return ONE
    return SymbolTree("X", poly=k)


def _add_index(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    if not a:
        return b
    if not b:
        return a
    if len(a) != len(b):
        raise ValueError("multi-indices of different dimension")
    return tuple(x + y for x, y in zip(a, b))


def product(*taus: SymbolTree) -> SymbolTree:
    """Canonical commutative product of symbols."""
    flat: list[SymbolTree] = []
    poly: tuple[int, ...] = ()
    for t in taus:
        for f in t.factors():
            if f.kind == "X":
                poly = _add_index(poly, f.poly)
            else:
                flat.append(f)
    if poly and any(poly):
        flat.append(SymbolTree("X", poly=poly))
    if not flat:
        return ONE
    if len(flat) == 1:
        return flat[0]
    flat.sort()
    return SymbolTree("Prod", children=tuple(flat))


def _I(tau: SymbolTree) -> SymbolTree | None:
    if tau.is_polynomial:
        return None
    return SymbolTree("I", children=(tau,))


def _E(tau: SymbolTree) -> SymbolTree:
    return SymbolTree("E", children=(tau,))


def I(tau):
    """Abstract integration; ``I`` of a polynomial is the zero element.

    Returns a :class:`SymbolTree`, or a :class:`FormalSum` when ``tau`` is a
    polynomial (the zero sum) or itself a formal sum.
    """
    if isinstance(tau, FormalSum):
        return tau.map(_I)
    res = _I(tau)
    return FormalSum() if res is None else res


def E(tau):
    """Multiplication-by-epsilon symbol ``E(tau)``, raising homogeneity by 1."""
    if isinstance(tau, FormalSum):
        return tau.map(_E)
    return _E(tau)


def homogeneity(tau: SymbolTree, params: HomogeneityParams | None = None) -> Homogeneity:
    """Exact homogeneity of a canonical symbol."""
    params = params or HomogeneityParams()
    noise = params.noise
    return Homogeneity(tau.shift + tau.n_noise * noise.a, tau.n_noise * noise.b)


def render(tau) -> str:
    """Stable text form, e.g. ``I(Xi)^2*I(I(Xi)^3)``."""
    return str(tau)


# ---------------------------------------------------------------------------
# formal sums


def is_zero_coefficient(c) -> bool:
    """Exact zero test for Fraction, int, float or sympy coefficients."""
    tc = type(c)
    if tc is int or tc is Fraction or tc is float:
        return c == 0
    if isinstance(c, sympy.Basic):
        return sympy.expand(c) == 0
    return c == 0


class FormalSum:
    """Finite linear combination of hashable basis elements.

    Coefficients may be ``Fraction``, ``int``, ``float`` or sympy expressions;
    zero coefficients are never stored.  Basis elements multiply through their
    own ``__mul__`` (symbols, monomials of the positive algebra, or tuples for
    tensor products, which multiply componentwise).
    """

    __slots__ = ("_terms",)

    def __init__(self, terms: Mapping | None = None):
        self._terms: dict = {}
        if terms:
            for k, c in terms.items():
                if not is_zero_coefficient(c):
                    self._terms[k] = c

    @classmethod
    def of(cls, key, coeff=1) -> "FormalSum":
        return cls({key: coeff})

    @classmethod
    def lift(cls, obj) -> "FormalSum":
        if isinstance(obj, FormalSum):
            return obj
        if obj is None:
            return cls()
        return cls.of(obj)

    # --- container ------------------------------------------------------
    def items(self):
        return self._terms.items()

    def keys(self):
        return self._terms.keys()

    def coeff(self, key, default=0):
        return self._terms.get(key, default)

    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self):
        return iter(self._terms)

    def __contains__(self, key) -> bool:
        return key in self._terms

    @property
    def is_zero(self) -> bool:
        return not self._terms

    # --- linear structure ------------------------------------------------
    def _accumulate(self, acc: dict, other: "FormalSum", scale=1):
        for k, c in other._terms.items():
            acc[k] = acc.get(k, 0) + c * scale

    def __add__(self, other) -> "FormalSum":
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        acc = dict(self._terms)
        self._accumulate(acc, other)
        return FormalSum(acc)

    __radd__ = __add__

    def __neg__(self) -> "FormalSum":
        return FormalSum({k: -c for k, c in self._terms.items()})

    def __sub__(self, other) -> "FormalSum":
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        acc = dict(self._terms)
        self._accumulate(acc, other, -1)
        return FormalSum(acc)

    def __rsub__(self, other) -> "FormalSum":
        return (-self) + other

    def scale(self, c) -> "FormalSum":
        return FormalSum({k: v * c for k, v in self._terms.items()})

    def __mul__(self, other) -> "FormalSum":
        if isinstance(other, (FormalSum, SymbolTree)) or hasattr(other, "__rmul_basis__"):
            return self.multiply(_coerce(other))
        return self.scale(other)

    def __rmul__(self, other) -> "FormalSum":
        if isinstance(other, SymbolTree):
            return FormalSum.of(other).multiply(self)
        return self.scale(other)

    def multiply(self, other: "FormalSum", keep: Callable | None = None, mul: Callable | None = None) -> "FormalSum":
        """Bilinear product, optionally discarding products rejected by ``keep``."""
        acc: dict = {}
        for k1, c1 in self._terms.items():
            for k2, c2 in other._terms.items():
                k = mul(k1, k2) if mul else k1 * k2
                if k is None or (keep is not None and not keep(k)):
                    continue
                acc[k] = acc.get(k, 0) + c1 * c2
        return FormalSum(acc)

    def __pow__(self, n: int) -> "FormalSum":
        out = FormalSum.of(ONE)
        for _ in range(n):
            out = out * self
        return out

    def map(self, fn: Callable) -> "FormalSum":
        """Linear extension of ``fn``; ``fn`` returns a key, FormalSum or None."""
        acc: dict = {}
        for k, c in self._terms.items():
            img = fn(k)
            if img is None:
                continue
            if isinstance(img, FormalSum):
                for k2, c2 in img._terms.items():
                    acc[k2] = acc.get(k2, 0) + c * c2
            else:
                acc[img] = acc.get(img, 0) + c
        return FormalSum(acc)

    def filter(self, pred: Callable) -> "FormalSum":
        return FormalSum({k: c for k, c in self._terms.items() if pred(k)})

    def map_coefficients(self, fn: Callable) -> "FormalSum":
        return FormalSum({k: fn(c) for k, c in self._terms.items()})

    def truncate(self, gamma, params: HomogeneityParams | None = None) -> "FormalSum":
        """Keep symbol terms with homogeneity at most ``gamma``."""
        params = params or HomogeneityParams()
        return self.filter(lambda k: homogeneity(k, params).value(params.kappa) <= gamma)

    def __eq__(self, other) -> bool:
        other = _coerce(other)
        if other is NotImplemented:
            return False
        return (self - other).is_zero

    def __hash__(self):
        raise TypeError("FormalSum is not hashable")

    def sorted_items(self) -> list:
        return sorted(self._terms.items(), key=lambda kc: _sort_key(kc[0]))

    def __str__(self) -> str:
        if not self._terms:
            return "0"
        parts = []
        for k, c in self.sorted_items():
            parts.append(f"({c})*{k}" if not _is_one(c) else str(k))
        return " + ".join(parts)

    __repr__ = __str__


def _is_one(c) -> bool:
    try:
        return bool(c == 1)
    except Exception:  # pragma: no cover - exotic coefficient types
        return False


def _sort_key(k):
    if isinstance(k, SymbolTree):
        return (0, k._key)
    if isinstance(k, tuple):
        return (1, tuple(_sort_key(x) for x in k))
    return (2, str(k))


def _coerce(other):
    if isinstance(other, FormalSum):
        return other
    if isinstance(other, SymbolTree):
        return FormalSum.of(other)
    if isinstance(other, (int, Fraction, sympy.Basic)):
        return FormalSum.of(ONE, other)
    return NotImplemented


# ---------------------------------------------------------------------------
# parsing


class _Parser:
    def __init__(self, text: str, params: HomogeneityParams):
        self.s = text.replace(" ", "")
        self.i = 0
        self.params = params

    def peek(self, token: str) -> bool:
        return self.s.startswith(token, self.i)

    def expect(self, token: str):
        if not self.peek(token):
            raise ParseError(f"expected {token!r}", self.i)
        self.i += len(token)

    def integer(self) -> int:
        j = self.i
        while j < len(self.s) and self.s[j].isdigit():
            j += 1
        if j == self.i:
            raise ParseError("expected integer", self.i)
        val = int(self.s[self.i:j])
        self.i = j
        return val

    def parse(self) -> SymbolTree | None:
        out = self.product()
        if self.i != len(self.s):
            raise ParseError("unexpected trailing input", self.i)
        return out

    def product(self) -> SymbolTree | None:
        factors = [self.power()]
        while self.peek("*"):
            self.i += 1
            factors.append(self.power())
        if any(f is None for f in factors):
            return None
        return product(*factors)

    def power(self) -> SymbolTree | None:
        base = self.atom()
        if self.peek("^"):
            self.i += 1
            n = self.integer()
            if base is None:
                return None
            return product(*([base] * n))
        return base

    def atom(self) -> SymbolTree | None:
        if self.peek("Xi"):
            self.i += 2
            return XI
        if self.peek("X_"):
            self.i += 2
            pos = self.i
            idx = self.integer()
            if idx > self.params.d:
                raise ParseError(f"coordinate index {idx} exceeds dimension {self.params.d}", pos)
            k = [0] * (self.params.d + 1)
            k[idx] = 1
            return X(k)
        if self.peek("I(") or self.peek("E("):
            kind = self.s[self.i]
            self.i += 2
            inner = self.product()
            self.expect(")")
            if inner is None:
                return None
            return _I(inner) if kind == "I" else _E(inner)
        if self.peek("1"):
            self.i += 1
            return ONE
        if self.peek("("):
            self.i += 1
            inner = self.product()
            self.expect(")")
            return inner
        raise ParseError("expected a symbol", self.i)


def parse(text: str, params: HomogeneityParams | None = None):
    """Parse the render grammar.

    Returns a :class:`SymbolTree`, or the zero :class:`FormalSum` when the
    expression contains ``I`` applied to a polynomial.
    """
    res = _Parser(text, params or HomogeneityParams()).parse()
    return FormalSum() if res is None else res


# ---------------------------------------------------------------------------
# model space generation


@dataclass
class ModelSpace:
    """Result of :func:`generate_model_space`.

    Attributes
    ----------
    U : list of SymbolTree
        Symbols describing the solution, sorted.
    W : list of SymbolTree
        Symbols describing the right-hand side, sorted.
    W_ex : list of SymbolTree or None
        Enlarged set with all five-fold products (extended mode only).
    """

    params: HomogeneityParams
    gamma: Fraction
    U: list[SymbolTree]
    W: list[SymbolTree]
    W_ex: list[SymbolTree] | None = None
    extended: bool = False

    def census(self, below=0, which: str = "W") -> list[SymbolTree]:
        """Symbols of ``which`` with homogeneity strictly below ``below``."""
        pool = getattr(self, which)
        return [t for t in pool if homogeneity(t, self.params).value(self.params.kappa) < below]


def sort_symbols(symbols: Iterable[SymbolTree], params: HomogeneityParams | None = None) -> list[SymbolTree]:
    """Sort by (homogeneity at kappa=0, kappa coefficient, render)."""
    params = params or HomogeneityParams()

    def key(t):
        h = homogeneity(t, params)
        return (h.a, h.b, t._render)

    return sorted(set(symbols), key=key)


def _products(pool: list[SymbolTree], n: int, bound: Fraction, params: HomogeneityParams,
              offset: Fraction = Fraction(0)) -> Iterator[tuple[SymbolTree, ...]]:
    """Multisets of size ``n`` from ``pool`` whose total homogeneity plus offset is <= bound."""
    kap = params.kappa
    vals = [homogeneity(t, params).value(kap) for t in pool]
    order = sorted(range(len(pool)), key=lambda i: vals[i])
    svals = [vals[i] for i in order]
    spool = [pool[i] for i in order]
    def rec(start: int, depth: int, acc: Fraction, chosen: list[int]):
        if depth == n:
            yield tuple(spool[i] for i in chosen)
            return
        remaining = n - depth - 1
        for i in range(start, len(spool)):
            # later picks are at least svals[i], so the sum only grows
            if acc + svals[i] * (remaining + 1) + offset > bound:
                break
            chosen.append(i)
            yield from rec(i, depth + 1, acc + svals[i], chosen)
            chosen.pop()

    yield from rec(0, 0, Fraction(0), [])


def generate_model_space(params: HomogeneityParams | None = None, gamma=0, extended: bool = False,
                         budget: int = 20000) -> ModelSpace:
    """Saturate the symbol recursion below a homogeneity cutoff.

    ``U`` is the smallest set containing every ``X^k`` and ``I(Xi)`` that is
    closed under ``I(t1 t2 t3)`` (and ``I(E(t1 ... t5))`` in extended mode);
    ``W`` holds ``Xi`` and all triple products (plus ``E`` of quintuple
    products in extended mode).  Symbols above ``gamma`` are discarded.

    Parameters
    ----------
    params : HomogeneityParams
    gamma : rational
        Cutoff; symbols with homogeneity greater than ``gamma`` are dropped.
    extended : bool
        Include the ``E`` rules and return ``W_ex``.
    budget : int
        Maximum number of symbols in the saturation of ``U``.

    Raises
    ------
    NonTermination
        If the saturation exceeds ``budget``.
    """
    params = params or HomogeneityParams()
    gamma = Fraction(gamma)
    kap = params.kappa
    dim = params.d + 1
    hv = lambda t: homogeneity(t, params).value(kap)  # noqa: E731

    i_xi = _I(XI)
    width = 5 if extended else 3
    low = min(hv(i_xi), Fraction(0))
    bound_u = gamma - (width - 1) * low

    U = {X(k) for k in multi_indices(dim, bound_u)}
    if hv(i_xi) <= bound_u:
        U.add(i_xi)
    changed = True
    while changed:
        changed = False
        pool = sorted(U)
        new = set()
        for trip in _products(pool, 3, bound_u, params, offset=Fraction(2)):
            s = _I(product(*trip))
            if s is not None and s not in U:
                new.add(s)
        if extended:
            for quint in _products(pool, 5, bound_u, params, offset=Fraction(3)):
                s = _I(_E(product(*quint)))
                if s not in U:
                    new.add(s)
        if new:
            U |= new
            changed = True
        if len(U) > budget:
            raise NonTermination(f"symbol saturation exceeded budget {budget} (|U| = {len(U)})")

    pool = sorted(U)
    W = set()
    if hv(XI) <= gamma:
        W.add(XI)
    for trip in _products(pool, 3, gamma, params):
        W.add(product(*trip))
    W_ex = None
    if extended:
        for quint in _products(pool, 5, gamma, params, offset=Fraction(1)):
            W.add(_E(product(*quint)))
        W_ex = set(W)
        for quint in _products(pool, 5, gamma, params):
            W_ex.add(product(*quint))
    U_out = [t for t in U if hv(t) <= gamma]
    return ModelSpace(
        params=params,
        gamma=gamma,
        U=sort_symbols(U_out, params),
        W=sort_symbols(W, params),
        W_ex=sort_symbols(W_ex, params) if W_ex is not None else None,
        extended=extended,
    )
