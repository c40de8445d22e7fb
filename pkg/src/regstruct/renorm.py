"""Renormalisation maps acting on the model space.

A :class:`SubstitutionGenerator` contracts a pattern (for instance two
``I(Xi)`` legs attached to the same product node) and replaces it by the unit.
``exp(-sum_i C_i L_i)`` is evaluated exactly as a terminating series, and
:func:`renormalized_equation` derives the counterterms that the resulting map
induces on the right-hand side of the Phi^4 equation.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import sympy

from .symbols import (
    ONE,
    XI,
    FormalSum,
    HomogeneityParams,
    SymbolTree,
    X,
    _E,
    _I,
    generate_model_space,
    homogeneity,
    parse,
    product,
)

__all__ = [
    "SubstitutionGenerator",
    "RenormMap",
    "NonNilpotent",
    "TruncationInsufficient",
    "PDECoefficients",
    "standard_generators",
    "extended_generators",
    "apply_generator",
    "exp_map",
    "commutator",
    "check_renorm_admissible",
    "renormalized_equation",
    "renormalized_equation_extended",
    "hermite_recentering_identity",
    "hermite_drift_expansion",
]


class NonNilpotent(RuntimeError):
    """The exponential series did not terminate within its depth budget."""


class TruncationInsufficient(RuntimeError):
    """Counterterms cannot absorb the residual at non-positive homogeneity."""


# ---------------------------------------------------------------------------
# pattern contraction


def _add(acc: dict, key, c):
    acc[key] = acc.get(key, 0) + c


def _embed(pattern_factors: tuple[SymbolTree, ...], node: SymbolTree) -> dict:
    """Ways of placing ``pattern_factors`` on distinct factors of ``node``.

    Returns a map ``leftover -> count`` where the leftover is the product of
    the unused factors of ``node`` (including its polynomial part) with the
    leftovers produced inside matched ``I``/``E`` factors.
    """
    nfactors = node.factors()
    out: dict = {}

    def rec(i: int, used: frozenset, lifted: tuple, count: int):
        if i == len(pattern_factors):
            rest = [f for j, f in enumerate(nfactors) if j not in used]
            _add(out, product(*rest, *lifted), count)
            return
        p = pattern_factors[i]
        for j, n in enumerate(nfactors):
            if j in used or n.kind != p.kind:
                continue
            if p.kind == "Xi":
                rec(i + 1, used | {j}, lifted, count)
            elif p.kind in ("I", "E"):
                inner = _embed(p.children[0].factors(), n.children[0])
                for left, c in inner.items():
                    rec(i + 1, used | {j}, lifted + (left,), count * c)

    rec(0, frozenset(), (), 1)
    return out


def _automorphisms(pattern: SymbolTree) -> int:
    return _embed(pattern.factors(), pattern).get(ONE, 0)


@dataclass(frozen=True)
class SubstitutionGenerator:
    """Linear map contracting a pattern into the unit.

    Parameters
    ----------
    name : str
    pattern : SymbolTree, optional
        Sub-configuration that is contracted.  In ``"contraction"`` mode it is
        contracted wherever it occurs (at any product node); in ``"listed"``
        mode the contraction is only performed on the symbols in ``listed``.
    mode : {"contraction", "listed"}
    listed : frozenset of SymbolTree
        Symbols on which a listed generator acts.
    images : mapping, optional
        Explicit images for listed symbols, overriding the contraction.
    """

    name: str
    pattern: SymbolTree | None = None
    mode: str = "contraction"
    listed: frozenset = frozenset()
    images: tuple = ()

    def __post_init__(self):
        if self.mode not in ("contraction", "listed"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "contraction" and self.pattern is None:
            raise ValueError("contraction generators need a pattern")

    @property
    def symmetry(self) -> int:
        return _automorphisms(self.pattern) if self.pattern is not None else 1

    def __call__(self, tau):
        return apply_generator(self, tau)


def _contract_root(pattern: SymbolTree, tau: SymbolTree) -> FormalSum:
    ways = _embed(pattern.factors(), tau)
    if not ways:
        return FormalSum()
    aut = _automorphisms(pattern)
    acc = {}
    for left, c in ways.items():
        q, r = divmod(c, aut)
        if r:
            raise ArithmeticError(f"occurrence count {c} not divisible by symmetry {aut}")
        _add(acc, left, q)
    return FormalSum(acc)


def _contract_everywhere(pattern: SymbolTree, tau: SymbolTree, cache: dict) -> FormalSum:
    if tau in cache:
        return cache[tau]
    out = _contract_root(pattern, tau)
    factors = tau.factors()
    counts = Counter(factors)
    for f, mult in counts.items():
        if f.kind not in ("I", "E"):
            continue
        inner = _contract_everywhere(pattern, f.children[0], cache)
        if inner.is_zero:
            continue
        rest = list(factors)
        rest.remove(f)
        wrap = _I if f.kind == "I" else _E
        acc = {}
        for sigma, c in inner.items():
            w = wrap(sigma)
            if w is None:
                continue
            _add(acc, product(w, *rest), c * mult)
        out = out + FormalSum(acc)
    cache[tau] = out
    return out


_CACHES: dict = {}


def apply_generator(L: SubstitutionGenerator, tau) -> FormalSum:
    """Apply a substitution generator to a symbol or formal sum."""
    if isinstance(tau, FormalSum):
        return tau.map(lambda t: apply_generator(L, t))
    images = dict(L.images)
    if L.mode == "listed":
        if tau not in L.listed:
            return FormalSum()
        if tau in images:
            return FormalSum.lift(images[tau])
        return _contract_root(L.pattern, tau) if L.pattern is not None else FormalSum()
    cache = _CACHES.setdefault(L, {})
    return _contract_everywhere(L.pattern, tau, cache)


def standard_generators(params: HomogeneityParams | None = None) -> list[SubstitutionGenerator]:
    """The five contractions for the (possibly non-Gaussian) cubic equation."""
    params = params or HomogeneityParams()
    pats = [
        "I(Xi)^2",
        "I(Xi)^3",
        "I(Xi)^2*I(I(Xi)^2)",
        "I(Xi)^2*I(I(Xi)^3)",
        "I(Xi)*I(I(Xi)^3)",
    ]
    return [SubstitutionGenerator(f"L{i + 1}", parse(p, params)) for i, p in enumerate(pats)]


def extended_generators(params: HomogeneityParams | None = None) -> list[SubstitutionGenerator]:
    """Four generators for the structure enlarged by ``E``.

    The first contracts ``I(Xi)^2`` everywhere (commuting with ``E``); the
    other three act only on the listed symbols.
    """
    params = params or HomogeneityParams()
    p = lambda s: parse(s, params)  # noqa: E731
    return [
        SubstitutionGenerator("Lt1", p("I(Xi)^2")),
        SubstitutionGenerator(
            "Lt2", p("I(Xi)^2*I(I(Xi)^2)"), mode="listed",
            listed=frozenset({p("I(Xi)^2*I(I(Xi)^3)"), p("I(Xi)^2*I(I(Xi)^2)")}),
        ),
        SubstitutionGenerator(
            "Lt3", p("E(I(Xi)^3*I(I(Xi)^3))"), mode="listed",
            listed=frozenset({p("E(I(Xi)^3*I(I(Xi)^3))"), p("E(I(Xi)^4*I(I(Xi)^3))")}),
        ),
        SubstitutionGenerator(
            "Lt4", p("E(I(Xi)^4*I(E(I(Xi)^4)))"), mode="listed",
            listed=frozenset({p("E(I(Xi)^4*I(E(I(Xi)^4)))"), p("E(I(Xi)^4*I(E(I(Xi)^5)))")}),
        ),
    ]


# ---------------------------------------------------------------------------
# exponentials


class RenormMap:
    """``exp(-sum_i c_i L_i)`` evaluated as a terminating series.

    Parameters
    ----------
    generators : sequence of SubstitutionGenerator
    coefficients : sequence
        Scalars or sympy expressions, one per generator.
    depth : int
        Maximum number of series terms before :class:`NonNilpotent` is raised.
    """

    def __init__(self, generators: Sequence[SubstitutionGenerator], coefficients: Sequence, depth: int = 32):
        if len(generators) != len(coefficients):
            raise ValueError("one coefficient per generator is required")
        self.generators = list(generators)
        self.coefficients = list(coefficients)
        self.depth = depth
        self._cache: dict = {}

    def _A(self, s: FormalSum) -> FormalSum:
        out = FormalSum()
        for L, c in zip(self.generators, self.coefficients):
            if isinstance(c, (int,)) and c == 0:
                continue
            out = out + apply_generator(L, s).scale(c)
        return out

    def _apply_tree(self, tau: SymbolTree) -> FormalSum:
        if tau in self._cache:
            return self._cache[tau]
        term = FormalSum.of(tau)
        total = term
        for n in range(1, self.depth + 1):
            term = self._A(term).scale(sympy.Rational(-1, n))
            if term.is_zero:
                break
            total = total + term
        else:
            raise NonNilpotent(f"series for {tau} did not terminate after {self.depth} terms")
        total = total.map_coefficients(sympy.expand)
        self._cache[tau] = total
        return total

    def __call__(self, tau) -> FormalSum:
        if isinstance(tau, FormalSum):
            acc = FormalSum()
            for t, c in tau.items():
                acc = acc + self._apply_tree(t).scale(c)
            return acc.map_coefficients(sympy.expand)
        return self._apply_tree(tau)

    apply = __call__

    def matrix(self, basis: Sequence[SymbolTree]) -> sympy.Matrix:
        """Matrix in ``basis`` (columns are images); raises if an image leaves the span."""
        index = {t: i for i, t in enumerate(basis)}
        mat = sympy.zeros(len(basis), len(basis))
        for j, t in enumerate(basis):
            for s, c in self(t).items():
                if s not in index:
                    raise KeyError(f"image of {t} contains {s} outside the basis")
                mat[index[s], j] = c
        return mat


def exp_map(generators: Sequence[SubstitutionGenerator], coefficients: Sequence | None = None,
            depth: int = 32) -> RenormMap:
    """Build ``exp(-sum_i c_i L_i)``; default coefficients are symbols ``C1, C2, ...``."""
    if coefficients is None:
        coefficients = sympy.symbols(f"C1:{len(generators) + 1}")
    return RenormMap(generators, coefficients, depth=depth)


def commutator(L1: SubstitutionGenerator, L2: SubstitutionGenerator, tau: SymbolTree) -> FormalSum:
    """``[L1, L2] tau``."""
    return apply_generator(L1, apply_generator(L2, tau)) - apply_generator(L2, apply_generator(L1, tau))


@dataclass
class AdmissibilityReport:
    integration_failures: list = field(default_factory=list)
    polynomial_failures: list = field(default_factory=list)
    sector_failures: list = field(default_factory=list)
    checked: int = 0

    @property
    def ok(self) -> bool:
        return not (self.integration_failures or self.polynomial_failures or self.sector_failures)


def check_renorm_admissible(M: RenormMap, basis: Iterable[SymbolTree], sector: Iterable[SymbolTree] | None = None,
                            params: HomogeneityParams | None = None) -> AdmissibilityReport:
    """Structural checks on a renormalisation map.

    Verifies on ``basis`` that ``M`` commutes with ``I`` and with
    multiplication by each ``X_i`` whenever both sides are basis symbols, and
    that ``M`` maps ``sector`` (default: the basis) into its own span.
    """
    params = params or HomogeneityParams()
    basis = list(basis)
    bset = set(basis)
    sector = list(sector) if sector is not None else basis
    sset = set(sector)
    rep = AdmissibilityReport()
    dim = params.d + 1
    for tau in basis:
        rep.checked += 1
        it = _I(tau)
        if it is not None and it in bset:
            lhs = M(it)
            rhs = M(tau).map(_I)
            if not (lhs - rhs).is_zero:
                rep.integration_failures.append(str(tau))
        for i in range(dim):
            e = [0] * dim
            e[i] = 1
            xt = product(X(e), tau)
            if xt in bset:
                lhs = M(xt)
                rhs = M(tau).map(lambda s: product(X(e), s))
                if not (lhs - rhs).is_zero:
                    rep.polynomial_failures.append(f"X_{i}*{tau}")
    for tau in sector:
        img = M(tau)
        if any(s not in sset for s in img.keys()):
            rep.sector_failures.append(str(tau))
    return rep


# ---------------------------------------------------------------------------
# renormalised equations


@dataclass
class PDECoefficients:
    """Counterterms of the renormalised equation ``du = Lap u + rhs(u) + mass*u + constant + xi``.

    ``mass`` multiplies ``u`` with a plus sign in the cubic case; in the
    extended case the equation is written ``- mass * u``.
    """

    mass: sympy.Expr
    constant: sympy.Expr
    cubic: sympy.Expr
    quintic: sympy.Expr
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "mass": str(self.mass),
            "constant": str(self.constant),
            "cubic": str(self.cubic),
            "quintic": str(self.quintic),
            "notes": list(self.notes),
        }


def _hv(t: SymbolTree, params: HomogeneityParams):
    return homogeneity(t, params).value(params.kappa)


def _trunc(s: FormalSum, cut, params: HomogeneityParams) -> FormalSum:
    return s.filter(lambda t: _hv(t, params) <= cut)


def _tmul(a: FormalSum, b: FormalSum, cut, params: HomogeneityParams) -> FormalSum:
    return a.multiply(b, keep=lambda t: _hv(t, params) <= cut)


def _tpow(a: FormalSum, n: int, cut, params: HomogeneityParams, low) -> FormalSum:
    """``a**n`` keeping only products that can still end below ``cut``."""
    out = FormalSum.of(ONE)
    for k in range(n):
        remaining = n - k - 1
        out = _tmul(out, a, cut - remaining * low, params)
    return _trunc(out, cut, params)


def _polynomial_ansatz(params: HomogeneityParams):
    phi = sympy.Symbol("phi")
    grads = sympy.symbols(f"dphi1:{params.d + 1}")
    dim = params.d + 1
    base = FormalSum.of(ONE, phi)
    for i, g in enumerate(grads, start=1):
        e = [0] * dim
        e[i] = 1
        base = base + FormalSum.of(X(e), g)
    return phi, grads, base


def _picard(params: HomogeneityParams, a=None, iterations: int = 8) -> FormalSum:
    """Local expansion of the fixed point, kept up to homogeneity one (plus slack)."""
    kap = params.kappa
    cut_phi = 1 + 20 * kap
    low = _hv(_I(XI), params)
    _, _, base = _polynomial_ansatz(params)
    Phi = base
    for _ in range(iterations):
        cut_rhs = cut_phi - 2
        rhs = FormalSum.of(XI) - _tpow(Phi, 3, cut_rhs, params, low)
        if a is not None:
            quint = _tpow(Phi, 5, cut_rhs - 1, params, low)
            rhs = rhs - quint.map(_E).scale(a)
        new = _trunc(rhs.map(_I), cut_phi, params) + base
        new = new.map_coefficients(sympy.expand)
        if new == Phi:
            return Phi
        Phi = new
    raise RuntimeError("local expansion did not stabilise")


def _rhs(Phi: FormalSum, params: HomogeneityParams, a=None) -> FormalSum:
    low = _hv(_I(XI), params)
    out = FormalSum.of(XI) - _tpow(Phi, 3, 0, params, low)
    if a is not None:
        out = out - _tpow(Phi, 5, -1, params, low).map(_E).scale(a)
    return out.map_coefficients(sympy.expand)


def _solve_counterterms(residual: FormalSum, unknowns: Sequence[sympy.Symbol]) -> dict:
    eqs = [sympy.expand(c) for _, c in residual.items()]
    eqs = [e for e in eqs if e != 0]
    if not eqs:
        return {u: sympy.Integer(0) for u in unknowns}
    # each coefficient is a polynomial in the ansatz variables; split by monomial
    gens = sorted(set().union(*(e.free_symbols for e in eqs)) - set(unknowns), key=str)
    ansatz_vars = [g for g in gens if str(g).startswith(("phi", "dphi"))]
    system = []
    for e in eqs:
        poly = sympy.Poly(e, *ansatz_vars) if ansatz_vars else None
        if poly is None:
            system.append(e)
        else:
            system.extend(poly.coeffs())
    sol = sympy.solve(system, list(unknowns), dict=True)
    if not sol:
        raise TruncationInsufficient("counterterms cannot absorb the residual")
    sol = sol[0]
    if any(u not in sol for u in unknowns):
        free = [u for u in unknowns if u not in sol]
        raise TruncationInsufficient(f"counterterms {free} are not determined")
    for eq in system:
        if sympy.expand(eq.subs(sol)) != 0:
            raise TruncationInsufficient("residual remains after fitting counterterms")
    return sol


def renormalized_equation(M: RenormMap | None = None, params: HomogeneityParams | None = None) -> PDECoefficients:
    """Counterterms induced by ``M`` on ``Xi - Phi^3``.

    Solves, modulo symbols of positive homogeneity,
    ``M(Xi - Phi^3) = Xi - (M Phi)^3 + mass * M Phi + constant * 1``
    for ``mass`` and ``constant``, with ``Phi`` the local expansion of the
    fixed point in terms of indeterminates ``phi`` and ``dphi_i``.
    """
    params = params or HomogeneityParams()
    if M is None:
        M = exp_map(standard_generators(params))
    Phi = _picard(params)
    lhs = M(_rhs(Phi, params))
    MPhi = M(Phi)
    mass, const = sympy.symbols("mass const")
    low = _hv(_I(XI), params)
    target = (FormalSum.of(XI) - _tpow(MPhi, 3, 0, params, low)
              + _trunc(MPhi, 0, params).scale(mass) + FormalSum.of(ONE, const))
    residual = _trunc(lhs - target, 0, params).map_coefficients(sympy.expand)
    sol = _solve_counterterms(residual, [mass, const])
    return PDECoefficients(mass=sympy.expand(sol[mass]), constant=sympy.expand(sol[const]),
                           cubic=sympy.Integer(-1), quintic=sympy.Integer(0))


def _hermite_power(x: FormalSum, n: int, c, cut, params: HomogeneityParams, low) -> FormalSum:
    """Truncated ``H_n(x, c)`` using the algebra product."""
    from .cumulants import hermite_coefficients

    out = FormalSum()
    for k, coef in enumerate(hermite_coefficients(n, c)):
        if coef == 0:
            continue
        out = out + _tpow(x, k, cut, params, low).scale(coef)
    return out


def renormalized_equation_extended(M: RenormMap | None = None, a=None,
                                   params: HomogeneityParams | None = None) -> PDECoefficients:
    """Counterterms for ``Xi - Phi^3 - a E(Phi^5)`` under the extended maps.

    Solves ``M(Xi - Phi^3 - a E(Phi^5)) = Xi - H_3(M Phi, c1) - a E(H_5(M Phi, c1))
    - mass * M Phi + constant * 1`` modulo positive homogeneity, where ``c1`` is
    the coefficient of the first generator.  ``mass`` is reported with the
    sign convention ``du = ... - mass * u``.
    """
    params = params or HomogeneityParams()
    gens = extended_generators(params)
    if M is None:
        M = exp_map(gens, sympy.symbols("Ct1:5"))
    if a is None:
        a = sympy.Symbol("a")
    c1 = M.coefficients[0]
    Phi = _picard(params, a=a)
    lhs = M(_rhs(Phi, params, a=a))
    MPhi = M(Phi)
    low = _hv(_I(XI), params)
    mass, const = sympy.symbols("mass const")
    h3 = _hermite_power(MPhi, 3, c1, 0, params, low)
    h5 = _hermite_power(MPhi, 5, c1, -1, params, low).map(_E)
    target = (FormalSum.of(XI) - h3 - h5.scale(a)
              - _trunc(MPhi, 0, params).scale(mass) + FormalSum.of(ONE, const))
    residual = _trunc(lhs - target, 0, params).map_coefficients(sympy.expand)
    sol = _solve_counterterms(residual, [mass, const])
    return PDECoefficients(mass=sympy.expand(sol[mass]), constant=sympy.expand(sol[const]),
                           cubic=sympy.Integer(-1), quintic=-a)


def hermite_drift_expansion() -> dict:
    """Expand ``theta/eps*x - H_3(x, C/eps) - a*eps*H_5(x, C/eps)`` in powers of ``x``.

    Returns the coefficients of ``x``, ``x^3`` and ``x^5`` as sympy expressions
    in ``theta, C, a, eps``.
    """
    from .cumulants import hermite_polynomial

    x, theta, C, a, eps = sympy.symbols("x theta C a eps")
    drift = theta / eps * x - hermite_polynomial(3, C / eps, x) - a * eps * hermite_polynomial(5, C / eps, x)
    poly = sympy.Poly(sympy.expand(drift), x)
    return {n: sympy.simplify(poly.coeff_monomial(x**n)) for n in (1, 3, 5)}


def hermite_recentering_identity(cubic_coefficient=None) -> sympy.Expr:
    """Residual of the expanded form of the Hermite drift (zero when the form is right).

    Compares ``theta/eps*x - H_3(x, C/eps) - a*eps*H_5(x, C/eps)`` with
    ``(theta + 3C - 15aC^2)/eps*x + k3*x^3 - a*eps*x^5``.  The default
    ``k3 = -(1 - 10aC)`` is the coefficient obtained by expansion.
    """
    from .cumulants import hermite_polynomial

    x, theta, C, a, eps = sympy.symbols("x theta C a eps")
    if cubic_coefficient is None:
        cubic_coefficient = -(1 - 10 * a * C)
    lhs = theta / eps * x - hermite_polynomial(3, C / eps, x) - a * eps * hermite_polynomial(5, C / eps, x)
    rhs = (theta + 3 * C - 15 * a * C**2) / eps * x + cubic_coefficient * x**3 - a * eps * x**5
    return sympy.simplify(lhs - rhs)
