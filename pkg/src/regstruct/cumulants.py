"""Joint cumulants, Wick products and Hermite polynomials.

Ground sets are tuples of labels; repeated labels model powers of the same
random variable.  Partitions of positions ``0..n-1`` are enumerated through
restricted-growth strings.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Hashable, Mapping, Sequence

import numpy as np
import sympy

from ._backend import njit, select

__all__ = [
    "BudgetExceeded",
    "MissingCumulant",
    "MissingMoment",
    "Partition",
    "CumulantSpec",
    "bell_number",
    "rgs_array",
    "enumerate_partitions",
    "moments_from_cumulants",
    "cumulants_from_moments",
    "wick_decompose",
    "wick_product",
    "wick_expectation",
    "hermite_coefficients",
    "hermite_polynomial",
    "gaussian_wick_polynomial",
    "pair_partitions",
    "ito_isometry_check",
    "hypercontractivity_ratio",
]

MAX_PARTITION_SIZE = 12


class BudgetExceeded(ValueError):
    """Partition enumeration requested beyond the size budget."""


class MissingCumulant(KeyError):
    pass


class MissingMoment(KeyError):
    pass


def bell_number(n: int) -> int:
    """Bell number via the Bell triangle."""
    row = [1]
    for _ in range(n):
        nxt = [row[-1]]
        for v in row:
            nxt.append(nxt[-1] + v)
        row = nxt
    return row[0]


@njit
def _rgs_numba(n, total):
    out = np.zeros((total, n), dtype=np.int8)
    a = np.zeros(n, dtype=np.int64)
    row = 0
    while True:
        for j in range(n):
            out[row, j] = a[j]
        row += 1
        found = False
        for i in range(n - 1, 0, -1):
            mx = 0
            for j in range(i):
                if a[j] > mx:
                    mx = a[j]
            if a[i] <= mx:
                a[i] += 1
                for j in range(i + 1, n):
                    a[j] = 0
                found = True
                break
        if not found:
            break
    return out


def _rgs_numpy(n, total=None):
    if n == 0:
        return np.zeros((1, 0), dtype=np.int8)
    rows = np.zeros((1, 1), dtype=np.int8)
    maxes = np.zeros(1, dtype=np.int64)
    for _ in range(1, n):
        choices = maxes + 2  # values 0..max+1
        idx = np.repeat(np.arange(len(rows)), choices)
        offsets = np.arange(len(idx)) - np.repeat(np.cumsum(choices) - choices, choices)
        rows = np.concatenate([rows[idx], offsets[:, None].astype(np.int8)], axis=1)
        maxes = np.maximum(maxes[idx], offsets)
    # match the lexicographic order of the iterative generator
    order = np.lexsort(rows.T[::-1])
    return rows[order]


def rgs_array(n: int, backend: str | None = None) -> np.ndarray:
    """All restricted-growth strings of length ``n`` in lexicographic order.

    Row ``r`` assigns each position ``i`` the block label ``rows[r, i]``.
    """
    if n > MAX_PARTITION_SIZE:
        raise BudgetExceeded(f"n = {n} exceeds the partition budget {MAX_PARTITION_SIZE}")
    if n < 0:
        raise ValueError("n must be non-negative")
    total = bell_number(n)
    if n == 0:
        return np.zeros((1, 0), dtype=np.int8)
    impl = select(_rgs_numba, _rgs_numpy, backend)
    return impl(n, total)


@dataclass(frozen=True)
class Partition:
    """Set partition of positions, blocks sorted and each block sorted."""

    blocks: tuple[tuple[int, ...], ...]

    @classmethod
    def from_rgs(cls, row: Sequence[int]) -> "Partition":
        groups: dict[int, list[int]] = {}
        for i, b in enumerate(row):
            groups.setdefault(int(b), []).append(i)
        return cls(tuple(tuple(groups[k]) for k in sorted(groups)))

    def __len__(self) -> int:
        return len(self.blocks)


def enumerate_partitions(n: int, backend: str | None = None) -> list[Partition]:
    """All ``Bell(n)`` partitions of ``{0, ..., n-1}``."""
    return [Partition.from_rgs(r) for r in rgs_array(n, backend)]


def _partitions_of(items: Sequence) -> list[list[tuple]]:
    """Partitions of an arbitrary sequence, as lists of blocks of items."""
    n = len(items)
    if n == 0:
        return [[]]
    out = []
    for p in enumerate_partitions(n):
        out.append([tuple(items[i] for i in b) for b in p.blocks])
    return out


def pair_partitions(n: int) -> list[Partition]:
    """Partitions into blocks of size two (Wick pairings)."""
    return [p for p in enumerate_partitions(n) if all(len(b) == 2 for b in p.blocks)]


# ---------------------------------------------------------------------------
# cumulant specifications


def _key(labels) -> tuple:
    return tuple(sorted(labels, key=repr))


@dataclass
class CumulantSpec:
    """Joint cumulants indexed by multisets of labels.

    Parameters
    ----------
    values : mapping
        ``labels tuple -> cumulant`` (keys are sorted internally).
    func : callable, optional
        Fallback ``func(labels) -> value`` (e.g. a field-valued kernel).
    default : optional
        Value for anything not otherwise specified; ``None`` raises.
    """

    values: Mapping = field(default_factory=dict)
    func: Callable | None = None
    default: object = None

    def __post_init__(self):
        self.values = {_key(k): v for k, v in dict(self.values).items()}

    def __call__(self, labels) -> object:
        k = _key(labels)
        if k in self.values:
            return self.values[k]
        if self.func is not None:
            return self.func(k)
        if self.default is not None:
            return self.default
        raise MissingCumulant(k)

    @classmethod
    def single(cls, label: Hashable, cumulants: Mapping[int, object]) -> "CumulantSpec":
        """Cumulants of one variable: ``{order: value}``, others zero."""
        return cls(func=lambda k: cumulants.get(len(k), 0) if all(x == label for x in k) else 0)

    @classmethod
    def gaussian(cls, covariance: Mapping, mean: Mapping | None = None) -> "CumulantSpec":
        """Gaussian family: only first and second cumulants.

        ``covariance`` maps unordered label pairs to covariances.
        """
        cov = {_key(k): v for k, v in covariance.items()}
        mean = dict(mean or {})

        def f(k):
            if len(k) == 1:
                return mean.get(k[0], 0)
            if len(k) == 2:
                return cov.get(k, 0)
            return 0

        return cls(func=f)


def _prod(values, start=1):
    out = start
    for v in values:
        out = out * v
    return out


def moments_from_cumulants(spec: CumulantSpec, B: Sequence) -> object:
    """``E[prod_{b in B} X_b]`` as a sum over partitions of products of cumulants."""
    total = 0
    for blocks in _partitions_of(tuple(B)):
        total = total + _prod(spec(b) for b in blocks)
    return total


def cumulants_from_moments(moments: Mapping | Callable, B: Sequence) -> object:
    """Joint cumulant by Moebius inversion on the partition lattice.

    ``moments`` maps label tuples (any order) to moments, or is a callable.
    """
    if callable(moments):
        get = moments
    else:
        table = {_key(k): v for k, v in moments.items()}

        def get(labels):
            k = _key(labels)
            if len(k) == 0:
                return 1
            if k not in table:
                raise MissingMoment(k)
            return table[k]

    total = 0
    for blocks in _partitions_of(tuple(B)):
        m = len(blocks)
        coef = (-1) ** (m - 1) * math.factorial(m - 1)
        total = total + coef * _prod(get(b) for b in blocks)
    return total


# ---------------------------------------------------------------------------
# Wick products


def _subsets(n: int):
    for r in range(n + 1):
        yield from itertools.combinations(range(n), r)


def wick_decompose(B: Sequence, spec: CumulantSpec) -> dict[tuple[int, ...], object]:
    """Coefficients of ``X^B = sum_A :X_A: c(B minus A)``.

    Returns ``{A: c}`` with ``A`` a tuple of positions and
    ``c = sum over partitions of the complement of products of cumulants``.
    """
    B = tuple(B)
    out = {}
    for A in _subsets(len(B)):
        rest = tuple(B[i] for i in range(len(B)) if i not in A)
        c = moments_from_cumulants(spec, rest)
        if not _is_zero(c):
            out[A] = c
    return out


def _is_zero(c) -> bool:
    if isinstance(c, sympy.Basic):
        return sympy.expand(c) == 0
    if isinstance(c, np.ndarray):
        return False
    return c == 0


def wick_product(B: Sequence, spec: CumulantSpec) -> dict[tuple[int, ...], object]:
    """``:X_B:`` expanded in ordinary products, ``{A: coefficient of X^A}``.

    Obtained by inverting :func:`wick_decompose` recursively over subsets.
    """
    B = tuple(B)
    memo: dict[tuple[int, ...], dict] = {}

    def rec(S: tuple[int, ...]) -> dict:
        if S in memo:
            return memo[S]
        res: dict = {S: 1}
        labels = [B[i] for i in S]
        # X^S = sum_{A subset S} :X_A: m(S minus A); solve for :X_S:
        for r in range(len(S)):
            for sub in itertools.combinations(range(len(S)), r):
                A = tuple(S[i] for i in sub)
                rest = [labels[i] for i in range(len(S)) if i not in sub]
                c = moments_from_cumulants(spec, rest)
                if _is_zero(c):
                    continue
                for mono, v in rec(A).items():
                    res[mono] = res.get(mono, 0) - c * v
        res = {k: v for k, v in res.items() if not _is_zero(v)}
        memo[S] = res
        return res

    return rec(tuple(range(len(B))))


def wick_expectation(B: Sequence, spec: CumulantSpec) -> object:
    """``E[:X_B:]`` computed from the ordinary-product expansion; zero for nonempty ``B``."""
    B = tuple(B)
    total = 0
    for A, c in wick_product(B, spec).items():
        total = total + c * moments_from_cumulants(spec, [B[i] for i in A])
    return total


# ---------------------------------------------------------------------------
# Hermite polynomials


def hermite_coefficients(n: int, c) -> list:
    """Coefficients (in increasing powers of ``x``) of ``H_n(x, c)``.

    Uses ``H_{n+1} = x H_n - n c H_{n-1}`` with ``H_0 = 1``, ``H_1 = x``.
    """
    if n < 0:
        raise ValueError("degree must be non-negative")
    prev = [1]
    if n == 0:
        return prev
    cur = [0, 1]
    for k in range(1, n):
        nxt = [0] + cur
        for i, v in enumerate(prev):
            nxt[i] = nxt[i] - k * c * v
        prev, cur = cur, nxt
    return cur


def hermite_polynomial(n: int, c, x=None) -> sympy.Expr:
    """``H_n(x, c)`` as a sympy expression."""
    x = sympy.Symbol("x") if x is None else x
    return sympy.expand(sum(coef * x**k for k, coef in enumerate(hermite_coefficients(n, c))))


def gaussian_wick_polynomial(n: int, c) -> list:
    """``:X^n:`` for a centred Gaussian of variance ``c``, as coefficients in ``x``.

    Computed through :func:`wick_product` with all labels equal; the result
    coincides with :func:`hermite_coefficients`.
    """
    if n > 10:
        raise BudgetExceeded("Wick polynomial degree limited to 10")
    spec = CumulantSpec.single("X", {2: c})
    coeffs = [0] * (n + 1)
    for A, v in wick_product(["X"] * n, spec).items():
        coeffs[len(A)] = coeffs[len(A)] + v
    return [sympy.expand(v) if isinstance(v, sympy.Basic) else v for v in coeffs]


# ---------------------------------------------------------------------------
# multiple Wiener integrals on a grid


def _symmetrise(f: np.ndarray) -> np.ndarray:
    k = f.ndim
    perms = list(itertools.permutations(range(k)))
    return sum(np.transpose(f, p) for p in perms) / len(perms)


def _off_diagonal_mask(n: int, k: int) -> np.ndarray:
    grids = np.meshgrid(*([np.arange(n)] * k), indexing="ij")
    mask = np.ones((n,) * k, dtype=bool)
    for i in range(k):
        for j in range(i + 1, k):
            mask &= grids[i] != grids[j]
    return mask


def _multiple_integral(f: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Sums ``sum f(i1..ik) w_i1 ... w_ik`` for a batch of increments ``w`` of shape (batch, n)."""
    letters = "ijkl"[: f.ndim]
    expr = letters + "," + ",".join(f"b{c}" for c in letters) + "->b"
    return np.einsum(expr, f, *([w] * f.ndim), optimize=True)


@dataclass
class IsometryReport:
    lhs: float
    stderr: float
    rhs: float

    @property
    def error(self) -> float:
        return self.lhs - self.rhs

    @property
    def z(self) -> float:
        return self.error / self.stderr if self.stderr > 0 else (0.0 if self.error == 0 else math.inf)


def ito_isometry_check(f: np.ndarray, g: np.ndarray, h: float = 1.0, n_samples: int = 20000,
                       seed: int = 0, batch: int = 5000) -> IsometryReport:
    """Monte-Carlo check of ``E I_k(f) I_k(g) = k! <f_sym, g_sym>``.

    White noise is discretised as independent ``N(0, h)`` cell increments and
    the Wick product of distinct cells is the ordinary product, so ``I_k`` is
    the off-diagonal multiple sum.  ``f`` and ``g`` are ``k``-dimensional
    arrays over the cells.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != g.shape:
        raise ValueError("kernels must share a shape")
    k = f.ndim
    n = f.shape[0]
    mask = _off_diagonal_mask(n, k)
    fm = np.where(mask, f, 0.0)
    gm = np.where(mask, g, 0.0)
    rhs = math.factorial(k) * float(np.sum(_symmetrise(fm) * _symmetrise(gm))) * h**k
    rng = np.random.default_rng(seed)
    vals = []
    done = 0
    while done < n_samples:
        m = min(batch, n_samples - done)
        w = rng.normal(0.0, math.sqrt(h), size=(m, n))
        vals.append(_multiple_integral(fm, w) * _multiple_integral(gm, w))
        done += m
    prod = np.concatenate(vals)
    return IsometryReport(lhs=float(prod.mean()), stderr=float(prod.std(ddof=1) / math.sqrt(len(prod))), rhs=rhs)


def hypercontractivity_ratio(f: np.ndarray, h: float = 1.0, n_samples: int = 20000, seed: int = 0) -> dict:
    """Soft check of moment equivalence: ``E I^4 / (E I^2)^2`` against ``3^(2k)``.

    The bound ``(p-1)^(k p / 2)`` with ``p = 4`` is the classical
    hypercontractive constant; the result is reported, not asserted.
    """
    f = np.asarray(f, dtype=float)
    k = f.ndim
    mask = _off_diagonal_mask(f.shape[0], k)
    fm = np.where(mask, f, 0.0)
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, math.sqrt(h), size=(n_samples, f.shape[0]))
    vals = _multiple_integral(fm, w)
    m2 = float(np.mean(vals**2))
    m4 = float(np.mean(vals**4))
    bound = 3.0 ** (2 * k)
    return {"ratio": m4 / m2**2 if m2 > 0 else math.nan, "bound": bound, "within": m4 <= bound * m2**2}
