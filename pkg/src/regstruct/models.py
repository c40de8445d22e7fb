"""Admissible models on a periodic space-time grid.

A model is stored through its "bold" map ``Pi tau`` (one grid field per
symbol) and the characters ``f_x`` evaluated at every grid point.  Everything
else is derived: ``Pi_x tau = Pi(F_x tau)`` with ``F_x = Gamma_{f_x}`` and
``Gamma_xy = F_x^{-1} F_y``.

Grid fields may carry explicit polynomial factors: internally ``Pi tau`` is a
map ``k -> A_k`` meaning ``sum_k y^k A_k(y)`` with periodic ``A_k`` and absolute
coordinates ``y``.  Convolutions expand ``y^k = (x + (y - x))^k`` so that the
periodic FFT only ever sees periodic arrays.

Grids are periodic in time as well as in space (FFT convolution); causal
kernels are sampled on time lags in ``[0, T)`` and must fit in one period.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import sympy
from scipy import fft as sfft
from scipy.special import j0

from .hopf import (
    Functional,
    Generator,
    PlusMonomial,
    convolve,
    delta,
    gamma_apply,
    generator_closure,
    generators_of,
    inverse,
)
from .kernels import (
    KernelSpec,
    Mollifier,
    ResolutionTooCoarse,
    _bump,
    _gl,
    fit_exponent,
    parabolic_norm,
    split_kernel,
)
from .symbols import (
    ONE,
    XI,
    FormalSum,
    HomogeneityParams,
    SymbolTree,
    X,
    homogeneity,
    multi_indices,
    parabolic_degree,
    parse,
    product,
)

__all__ = [
    "ClosureError",
    "NonPositiveGamma",
    "ProductOutsideBasis",
    "Grid",
    "GridField",
    "ModelData",
    "ConstantModel",
    "ModelledDistribution",
    "TrigField",
    "ContinuumLift",
    "sample_noise",
    "canonical_lift",
    "renormalize_model",
    "check_admissibility",
    "reconstruct",
    "multiply",
    "dgamma_seminorm",
    "model_distance",
    "save_model",
    "load_model",
]


class ClosureError(KeyError):
    """A symbol needs a sub-symbol that is not part of the declared set."""


class NonPositiveGamma(ValueError):
    """Reconstruction requires a regularity ``gamma > 0``."""


class ProductOutsideBasis(KeyError):
    """A product symbol required below the new regularity is not in the basis."""


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class Grid:
    """Periodic lattice with ``n_t`` time points and ``n`` points per spatial axis.

    The spacings obey ``dt = dx**2``; ``L`` is the spatial period and the time
    period is ``T = n_t * dt``.  Axis 0 is time.
    """

    d: int
    n: int
    n_t: int
    L: float = 1.0
    origin: tuple | None = None

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be at least 1")
        if self.n < 2 or self.n_t < 1:
            raise ValueError("grid too small")
        origin = tuple(float(v) for v in (self.origin or (0.0,) * (self.d + 1)))
        if len(origin) != self.d + 1:
            raise ValueError("origin needs d + 1 entries")
        object.__setattr__(self, "origin", origin)

    @property
    def dx(self) -> float:
        return self.L / self.n

    @property
    def dt(self) -> float:
        return self.dx**2

    @property
    def T(self) -> float:
        return self.n_t * self.dt

    @property
    def cell(self) -> float:
        return self.dt * self.dx**self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_t,) + (self.n,) * self.d

    @property
    def ndim(self) -> int:
        return self.d + 1

    def spacing(self, axis: int) -> float:
        return self.dt if axis == 0 else self.dx

    def _shaped(self, v: np.ndarray, axis: int) -> np.ndarray:
        shape = [1] * self.ndim
        shape[axis] = -1
        return v.reshape(shape)

    def coordinate(self, axis: int) -> np.ndarray:
        """Absolute coordinate along ``axis``, broadcastable to :attr:`shape`."""
        size = self.shape[axis]
        return self._shaped(self.origin[axis] + np.arange(size) * self.spacing(axis), axis)

    def lag(self, axis: int, causal: bool = False) -> np.ndarray:
        """Periodic lags along ``axis``: ``[0, T)`` when causal, else centred."""
        size = self.shape[axis]
        h = self.spacing(axis)
        i = np.arange(size)
        if not causal:
            i = np.where(i < (size + 1) // 2, i, i - size)
        return self._shaped(i * h, axis)

    def point(self, idx: Sequence[int]) -> np.ndarray:
        idx = self.wrap(idx)
        return np.array([self.origin[a] + idx[a] * self.spacing(a) for a in range(self.ndim)])

    def wrap(self, idx: Sequence[int]) -> tuple[int, ...]:
        return tuple(int(i) % s for i, s in zip(idx, self.shape))

    def index_of(self, point: Sequence[float], tol: float = 1e-9) -> tuple[int, ...]:
        """Grid index of a physical point; raises if it is not a grid point."""
        out = []
        for a in range(self.ndim):
            u = (point[a] - self.origin[a]) / self.spacing(a)
            k = int(round(u))
            if abs(u - k) > tol:
                raise ValueError(f"point {tuple(point)} is not on the grid")
            out.append(k % self.shape[a])
        return tuple(out)

    def to_dict(self) -> dict:
        return {"d": self.d, "n": self.n, "n_t": self.n_t, "L": self.L, "origin": list(self.origin)}


@dataclass
class GridField:
    """Values of a space-time function on a :class:`Grid`."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            v = np.broadcast_to(v, self.grid.shape).copy()
        if not np.all(np.isfinite(v)):
            raise ValueError("grid field has non-finite values")
        self.values = v

    @property
    def dt(self) -> float:
        return self.grid.dt

    @property
    def dx(self) -> float:
        return self.grid.dx

    @property
    def origin(self) -> tuple:
        return self.grid.origin

    def pair(self, idx: Sequence[int], lam: float) -> float:
        """``(f, phi_x^lambda)`` with the tensor bump centred at grid point ``idx``."""
        return _pair_array(self.grid, self.values, idx, lam)


# ---------------------------------------------------------------------------
# FFT helpers


def _axes(a: np.ndarray) -> tuple[int, ...]:
    return tuple(range(a.ndim))


def _rfft(a: np.ndarray) -> np.ndarray:
    return sfft.rfftn(a, axes=_axes(a))


def _irfft(a: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    return sfft.irfftn(a, s=shape, axes=tuple(range(len(shape))))


def _full(grid: Grid, a) -> np.ndarray:
    if np.isscalar(a) or np.ndim(a) == 0:
        return np.full(grid.shape, float(a))
    return np.broadcast_to(a, grid.shape)


def _angular_freqs(grid: Grid) -> list[np.ndarray]:
    out = []
    nd = grid.ndim
    for a in range(nd):
        size, h = grid.shape[a], grid.spacing(a)
        w = 2 * np.pi * (np.fft.rfftfreq(size, h) if a == nd - 1 else np.fft.fftfreq(size, h))
        out.append(grid._shaped(w, a))
    return out


def _deriv_factor(grid: Grid, m: Sequence[int]):
    """Fourier multiplier of ``D^m`` in the rfft layout (Nyquist zeroed for odd orders)."""
    if not any(m):
        return 1.0
    freqs = _angular_freqs(grid)
    out = 1.0
    for a, e in enumerate(m):
        if not e:
            continue
        w = freqs[a]
        size = grid.shape[a]
        f = (1j * w) ** e
        if e % 2 and size % 2 == 0:
            nyq = np.isclose(np.abs(w), np.pi / grid.spacing(a))
            f = np.where(nyq, 0.0, f)
        out = out * f
    return out


def _radial_on_grid(grid: Grid, fn: Callable, causal: bool) -> np.ndarray:
    """Sample ``fn(t, x)``, radial in ``x``, on periodic lags."""
    t = grid.lag(0, causal=causal).ravel()
    r2 = 0.0
    for a in range(1, grid.ndim):
        r2 = r2 + grid.lag(a) ** 2
    r2 = np.broadcast_to(r2, (1,) + grid.shape[1:]).ravel()
    u, inv = np.unique(np.round(r2, 14), return_inverse=True)
    xr = np.zeros((len(u), grid.d))
    xr[:, 0] = np.sqrt(u)
    tt = np.repeat(t[:, None], len(u), axis=1)
    xx = np.broadcast_to(xr, (len(t), len(u), grid.d))
    vals = np.asarray(fn(tt, xx), dtype=float)
    return vals[:, inv.ravel()].reshape(grid.shape)


def kernel_on_grid(grid: Grid, kernel: KernelSpec) -> np.ndarray:
    """Causal kernel sampled on the periodic lags; must fit in one period."""
    if kernel.d != grid.d:
        raise ValueError("kernel and grid dimensions differ")
    if kernel.R > grid.L / 2 + 1e-12 or kernel.T0 > grid.T + 1e-12:
        raise ValueError(
            f"kernel support (R={kernel.R}, T0={kernel.T0}) does not fit the torus (L={grid.L}, T={grid.T})")
    return _radial_on_grid(grid, kernel.K, causal=True)


def default_kernel(grid: Grid, N: int = 4) -> KernelSpec:
    """Largest truncation radius whose kernel fits the grid torus."""
    R = min(grid.L / 2, math.sqrt(grid.T), 1.0)
    return split_kernel(grid.d, N=N, R=R)


def mollifier_on_grid(grid: Grid, eps: float, rho: Mollifier | None = None) -> np.ndarray:
    """``rho_eps`` on centred lags, renormalised to unit grid mass."""
    if eps < 2 * grid.dx - 1e-12:
        raise ResolutionTooCoarse(f"eps = {eps:g} is below two grid steps ({2 * grid.dx:g})")
    if eps > grid.L / 2 or eps**2 > grid.T / 2:
        raise ValueError("mollifier support does not fit the torus")
    rho = rho or Mollifier(grid.d)
    vals = _radial_on_grid(grid, lambda t, x: rho.density(t, x, eps), causal=False)
    return vals / (vals.sum() * grid.cell)


class _Convolver:
    """Periodic convolution ``(k * f)(z) = sum_w k(z - w) f(w) cell``."""

    def __init__(self, grid: Grid, kernel_values: np.ndarray):
        self.grid = grid
        self.hat = _rfft(kernel_values) * grid.cell

    def __call__(self, values) -> np.ndarray:
        return _irfft(_rfft(_full(self.grid, values)) * self.hat, self.grid.shape)


def wick_constant(grid: Grid, kernel: KernelSpec, eps: float, rho: Mollifier | None = None) -> float:
    """``E (K * xi_eps)^2`` for grid white noise, as an exact lattice sum."""
    k = _Convolver(grid, kernel_on_grid(grid, kernel))(mollifier_on_grid(grid, eps, rho))
    return float(np.sum(k * k) * grid.cell)


# ---------------------------------------------------------------------------
# test functions


@lru_cache(maxsize=64)
def _patch(grid: Grid, lam: float):
    """Offsets and weights of ``phi_x^lambda = lambda^{-D} phi(S_lambda^{-1}(. - x))`` times the cell volume."""
    offs, profiles = [], []
    for a in range(grid.ndim):
        scale = lam**2 if a == 0 else lam
        h = grid.spacing(a)
        m = int(math.floor(scale / h))
        m = min(m, (grid.shape[a] - 1) // 2)
        o = np.arange(-m, m + 1)
        offs.append(o)
        profiles.append(_bump(o * h / scale) / scale)
    w = profiles[0]
    for p in profiles[1:]:
        w = np.multiply.outer(w, p)
    return tuple(offs), w * grid.cell


def _gather(grid: Grid, values, idx: Sequence[int], offs) -> np.ndarray:
    if np.ndim(values) == 0:
        return np.full(tuple(len(o) for o in offs), float(values))
    values = np.broadcast_to(values, grid.shape)
    ix = np.ix_(*[(i + o) % s for i, o, s in zip(idx, offs, grid.shape)])
    return values[ix]


def _pair_array(grid: Grid, values, idx: Sequence[int], lam: float) -> float:
    offs, w = _patch(grid, float(lam))
    return float(np.sum(w * _gather(grid, values, idx, offs)))


def _local_coords(grid: Grid, idx: Sequence[int], offs) -> list[np.ndarray]:
    """Unwrapped absolute coordinates ``x + delta`` on a patch around ``idx``."""
    x = grid.point(idx)
    out = []
    for a, o in enumerate(offs):
        shape = [1] * grid.ndim
        shape[a] = -1
        out.append((x[a] + o * grid.spacing(a)).reshape(shape))
    return out


# ---------------------------------------------------------------------------
# polynomial-weighted fields: {k: A_k} meaning sum_k y^k A_k(y)


def _zero_index(dim: int) -> tuple[int, ...]:
    return (0,) * dim


def _pf_add(acc: dict, pf: Mapping, scale=1.0) -> dict:
    for k, a in pf.items():
        acc[k] = acc[k] + scale * a if k in acc else scale * a
    return acc


def _pf_mul(p: Mapping, q: Mapping) -> dict:
    out: dict = {}
    for (k1, a1), (k2, a2) in itertools.product(p.items(), q.items()):
        k = tuple(i + j for i, j in zip(k1, k2))
        out[k] = out[k] + a1 * a2 if k in out else a1 * a2
    return out


def _monomial(grid: Grid, k: Sequence[int], coords=None):
    out = 1.0
    for a, e in enumerate(k):
        if e:
            c = grid.coordinate(a) if coords is None else coords[a]
            out = out * c**e
    return out


def _pf_eval(grid: Grid, pf: Mapping) -> np.ndarray:
    out = np.zeros(grid.shape)
    for k, a in pf.items():
        out = out + _monomial(grid, k) * a
    return out


def _pf_local(grid: Grid, pf: Mapping, idx, offs) -> np.ndarray:
    coords = _local_coords(grid, idx, offs)
    out = 0.0
    for k, a in pf.items():
        out = out + _monomial(grid, k, coords) * _gather(grid, a, idx, offs)
    return np.broadcast_to(out, tuple(len(o) for o in offs))


def _binom(k: Sequence[int], j: Sequence[int]) -> int:
    return math.prod(math.comb(a, b) for a, b in zip(k, j))


def _factorial(k: Sequence[int]) -> int:
    return math.prod(math.factorial(a) for a in k)


def _sub_indices(k: Sequence[int]):
    return itertools.product(*[range(a + 1) for a in k])


# ---------------------------------------------------------------------------
# noise


def sample_noise(grid: Grid, kind: str = "white", seed: int = 0, eps: float | None = None,
                 intensity: float = 1.0, white: GridField | None = None,
                 rho: Mollifier | None = None) -> GridField:
    """Draw a noise realisation on ``grid``.

    Parameters
    ----------
    kind : {"white", "mollified", "poisson"}
        ``white``: iid ``N(0, 1/cell)`` cell values.  ``mollified``: the white
        field convolved with ``rho_eps``.  ``poisson``: compensated shot noise
        ``eps^{D/2} (sum_i rho_eps(z - z_i) - intensity eps^{-D})`` with
        Poisson points of rate ``intensity * eps^{-D}``, ``D = d + 2``.
    white : GridField, optional
        Reuse this white-noise field for ``mollified`` (same-noise coupling).
    """
    kind = {"white-gaussian": "white", "gaussian": "white"}.get(kind, kind)
    rng = np.random.default_rng(seed)
    if kind == "white":
        return GridField(grid, rng.standard_normal(grid.shape) / math.sqrt(grid.cell))
    if eps is None:
        raise ValueError(f"{kind} noise needs eps")
    r = mollifier_on_grid(grid, eps, rho)
    conv = _Convolver(grid, r)
    if kind == "mollified":
        base = white.values if white is not None else rng.standard_normal(grid.shape) / math.sqrt(grid.cell)
        return GridField(grid, conv(base))
    if kind == "poisson":
        D = grid.d + 2
        rate = intensity * eps ** (-D)
        counts = rng.poisson(rate * grid.cell, grid.shape).astype(float)
        shot = conv(counts / grid.cell)
        return GridField(grid, eps ** (D / 2) * (shot - rate))
    raise ValueError(f"unknown noise kind {kind!r}")


def poisson_cumulant(grid: Grid, eps: float, order: int, intensity: float = 1.0,
                     rho: Mollifier | None = None) -> float:
    """Exact order-``p`` cumulant of one cell value of the grid shot noise."""
    D = grid.d + 2
    r = mollifier_on_grid(grid, eps, rho)
    return float(intensity * eps ** (D * (order / 2 - 1)) * np.sum(r**order) * grid.cell)


# ---------------------------------------------------------------------------
# models


def _params_for(grid: Grid, params: HomogeneityParams | None) -> HomogeneityParams:
    params = params or HomogeneityParams(d=grid.d)
    if params.d != grid.d:
        raise ValueError("homogeneity parameters and grid dimensions differ")
    return params


def _hval(tau: SymbolTree, params: HomogeneityParams) -> Fraction:
    return homogeneity(tau, params).value(params.kappa)


def _as_symbols(symbols, params) -> list[SymbolTree]:
    return [parse(s, params) if isinstance(s, str) else s for s in symbols]


def _required(tau: SymbolTree) -> list[SymbolTree]:
    if tau.kind in ("I", "E"):
        return [tau.children[0]]
    if tau.kind == "Prod":
        return [f for f in tau.children if f.kind != "X"]
    return []


def _check_closed(symbols: Iterable[SymbolTree]) -> None:
    have = set(symbols)
    for tau in have:
        for sub in _required(tau):
            if sub.is_polynomial or sub == XI:
                continue
            if sub not in have:
                raise ClosureError(f"{tau} needs {sub}, which is not in the symbol set")


class ModelData:
    """Grid model built from a bold map ``Pi`` (see module docstring).

    Parameters
    ----------
    grid, kernel, params
    symbols : list of SymbolTree
        Declared symbol set.
    pi_fn : callable
        ``tau -> {k: array}`` giving ``Pi tau``; results are memoised.
    xi : GridField, optional
        Noise realisation the model was built from.
    eps : float, optional
        Value represented by ``E``.
    """

    def __init__(self, grid: Grid, symbols: Sequence[SymbolTree], kernel: KernelSpec | None,
                 params: HomogeneityParams, pi_fn: Callable, xi: GridField | None = None,
                 eps: float | None = None, label: str = "canonical"):
        self.grid = grid
        self.symbols = list(symbols)
        self.kernel = kernel
        self.params = params
        self.xi = xi
        self.eps = eps
        self.label = label
        self._pi_fn = pi_fn
        self._pi: dict[SymbolTree, dict] = {}
        self._f: dict[Generator, np.ndarray] = {}
        self._kvals: np.ndarray | None = None
        self._khat: dict = {}
        self.generators = generator_closure(generators_of(self.symbols, params), params)
        self.diagonal_residual: float | None = None

    # --- bold map ---------------------------------------------------------
    def pi_table(self, tau: SymbolTree) -> dict:
        if tau not in self._pi:
            self._pi[tau] = self._pi_fn(tau)
        return self._pi[tau]

    def pi(self, tau) -> GridField:
        """``Pi tau`` as a grid field (absolute coordinates for polynomial factors)."""
        tau = parse(tau, self.params) if isinstance(tau, str) else tau
        return GridField(self.grid, _pf_eval(self.grid, self.pi_table(tau)))

    # --- kernel operators ------------------------------------------------
    def _kernel_values(self) -> np.ndarray:
        if self._kvals is None:
            if self.kernel is None:
                raise ValueError("model has no kernel")
            self._kvals = kernel_on_grid(self.grid, self.kernel)
        return self._kvals

    def _kernel_hat(self, m: tuple[int, ...], i: tuple[int, ...]) -> np.ndarray:
        """rfft of ``(-z)^i D^m K`` times the cell volume."""
        key = (m, i)
        if key not in self._khat:
            g = self.grid
            base = self._kernel_values()
            if any(m):
                base = _irfft(_rfft(base) * _deriv_factor(g, m), g.shape)
            if any(i):
                w = 1.0
                for a, e in enumerate(i):
                    if e:
                        w = w * (-g.lag(a, causal=(a == 0))) ** e
                base = base * w
            self._khat[key] = _rfft(base) * g.cell
        return self._khat[key]

    def _conv(self, values, m, i) -> np.ndarray:
        return _irfft(_rfft(_full(self.grid, values)) * self._kernel_hat(m, i), self.grid.shape)

    def _apply_DK(self, pf: Mapping, m: tuple[int, ...]) -> dict:
        """``x -> int D^m K(x - y) (sum_j y^j A_j(y)) dy`` as a polynomial-weighted field."""
        out: dict = {}
        for j, a in pf.items():
            for i in _sub_indices(j):
                c = _binom(j, i)
                key = tuple(p - q for p, q in zip(j, i))
                val = c * self._conv(a, m, tuple(i))
                out[key] = out[key] + val if key in out else val
        return out

    def _derivative(self, pf: Mapping, m: tuple[int, ...]) -> dict:
        """``D^m`` of a polynomial-weighted field (spectral on the periodic parts)."""
        g = self.grid
        out: dict = {}
        for j, a in pf.items():
            for i in _sub_indices(m):
                if any(p > q for p, q in zip(i, j)):
                    continue
                c = _binom(m, i) * math.prod(math.perm(q, p) for p, q in zip(i, j))
                rest = tuple(p - q for p, q in zip(m, i))
                if any(rest):
                    da = _irfft(_rfft(_full(g, a)) * _deriv_factor(g, rest), g.shape)
                else:
                    da = a
                key = tuple(q - p for p, q in zip(i, j))
                val = c * da
                out[key] = out[key] + val if key in out else val
        return out

    # --- characters ------------------------------------------------------
    def _f_monomial(self, sigma: PlusMonomial):
        out = 1.0
        for a, e in enumerate(sigma.poly):
            if e:
                out = out * (-self.grid.coordinate(a)) ** e
        for gen in sigma.gens:
            out = out * self.f_table(gen)
        return out

    def char_coefficients(self, tau: SymbolTree) -> dict:
        """``F_x tau = sum_sigma c_sigma(x) sigma`` with ``c_sigma`` as grid arrays."""
        acc: dict = {}
        for (left, right), c in delta(tau, self.params).items():
            val = float(c) * self._f_monomial(right)
            acc[left] = acc[left] + val if left in acc else val
        return acc

    def f_table(self, gen: Generator) -> np.ndarray:
        """``f_x(gen)`` for every grid point ``x``."""
        if gen in self._f:
            return self._f[gen]
        g = self.grid
        tau, ell = gen.tau, gen.ell
        coeffs = self.char_coefficients(tau)
        jump = 2 if gen.kind == "I" else 1
        bound = _hval(tau, self.params) + jump - parabolic_degree(ell)
        total = np.zeros(g.shape)
        for k in multi_indices(g.ndim, bound, strict=True):
            m = tuple(a + b for a, b in zip(ell, k))
            inner: dict = {}
            for sigma, c in coeffs.items():
                pf = self.pi_table(sigma)
                part = self._apply_DK(pf, m) if gen.kind == "I" else self._derivative(pf, m)
                for key, arr in part.items():
                    inner[key] = inner[key] + c * arr if key in inner else c * arr
            weight = _monomial(g, k) * (-1) ** sum(k) / _factorial(k)
            total = total + weight * _pf_eval(g, inner)
        if gen.kind == "I":
            value = -total
        else:
            if self.eps is None:
                raise ValueError("E generators need eps")
            value = -self.eps * total
        self._f[gen] = np.broadcast_to(value, g.shape).copy()
        return self._f[gen]

    def functional(self, idx: Sequence[int]) -> Functional:
        """The character ``f_x`` at grid point ``idx`` with float values."""
        idx = self.grid.wrap(idx)
        x = self.grid.point(idx)
        values = {gen: float(self.f_table(gen)[idx]) for gen in self.generators}
        return Functional(poly=tuple(-x), values=values)

    def gamma(self, x_idx: Sequence[int], y_idx: Sequence[int]) -> Callable:
        """``Gamma_xy`` as a map ``tau -> FormalSum``."""
        fx, fy = self.functional(x_idx), self.functional(y_idx)
        gens = self.generators
        g = convolve(inverse(fx, gens, self.params), fy, gens, self.params)
        return lambda tau: gamma_apply(g, tau, self.params)

    # --- re-centred objects ------------------------------------------------
    def Pi_x_coefficients(self, idx: Sequence[int], tau) -> FormalSum:
        return gamma_apply(self.functional(idx), tau, self.params)

    def apply_pi(self, s: FormalSum) -> dict:
        """``Pi`` of a formal sum with scalar coefficients (polynomial-weighted form)."""
        out: dict = {}
        for sigma, c in s.items():
            _pf_add(out, self.pi_table(sigma), float(c))
        return out

    def Pi_x(self, idx: Sequence[int], tau) -> GridField:
        return GridField(self.grid, _pf_eval(self.grid, self.apply_pi(self.Pi_x_coefficients(idx, tau))))

    def pair(self, base_idx: Sequence[int], s, centre_idx: Sequence[int], lam: float) -> float:
        """``(Pi_x s)(phi_y^lambda)`` with base point ``x`` and test function centred at ``y``.

        ``s`` is a symbol or a formal sum expressed at base point ``x``; the
        polynomial parts use unwrapped coordinates around ``y``.
        """
        coeffs = self.Pi_x_coefficients(base_idx, s)
        pf = self.apply_pi(coeffs)
        offs, w = _patch(self.grid, float(lam))
        return float(np.sum(w * _pf_local(self.grid, pf, self.grid.wrap(centre_idx), offs)))

    def diagonal(self, tau) -> np.ndarray:
        """``(Pi_x tau)(x)`` for every grid point ``x``."""
        g = self.grid
        out = np.zeros(g.shape)
        for sigma, c in self.char_coefficients(tau).items():
            out = out + c * _pf_eval(g, self.pi_table(sigma))
        return out

    def build_all(self) -> "ModelData":
        """Force every table needed by :meth:`functional` and :meth:`diagonal`."""
        for gen in sorted(self.generators, key=lambda q: (q.n_int, q.homogeneity(self.params).key())):
            self.f_table(gen)
        for tau in self.symbols:
            for (left, _) in delta(tau, self.params).keys():
                self.pi_table(left)
        return self


def canonical_lift(xi: GridField, symbols, kernel: KernelSpec | None = None, eps: float | None = None,
                   params: HomogeneityParams | None = None, check_closure: bool = True) -> ModelData:
    """Canonical model of a grid noise by the ``Pi`` recursion.

    ``Pi Xi = xi``, ``Pi X^k = y^k``, products are pointwise, ``Pi I(tau) = K * Pi tau``
    by periodic FFT convolution and ``Pi E(tau) = eps Pi tau``.

    Raises
    ------
    ClosureError
        If a declared symbol needs a sub-symbol outside the set.
    """
    grid = xi.grid
    params = _params_for(grid, params)
    syms = _as_symbols(symbols, params)
    if check_closure:
        _check_closed(syms)
    kernel = kernel or default_kernel(grid)
    dim = grid.ndim
    zero = _zero_index(dim)
    model: ModelData

    def pi_fn(tau: SymbolTree) -> dict:
        if tau.kind == "Xi":
            return {zero: xi.values}
        if tau.kind == "X":
            return {tuple(tau.poly): 1.0}
        if tau.kind == "Prod":
            out = {zero: 1.0}
            for f in tau.children:
                out = _pf_mul(out, model.pi_table(f))
            return out
        (child,) = tau.children
        if tau.kind == "I":
            return model._apply_DK(model.pi_table(child), zero)
        if eps is None:
            raise ValueError("symbols with E need eps")
        return {k: eps * a for k, a in model.pi_table(child).items()}

    model = ModelData(grid, syms, kernel, params, pi_fn, xi=xi, eps=eps)
    return model


def _numeric(c) -> float:
    return float(sympy.N(c)) if isinstance(c, sympy.Basic) else float(c)


def renormalize_model(model: ModelData, M, check_points: int = 4, seed: int = 0) -> ModelData:
    """Renormalised model ``Pi^M = Pi o M`` rebuilt by the canonical recipe.

    ``M`` is a :class:`regstruct.renorm.RenormMap` (or any callable returning a
    formal sum).  The diagonal identity ``(Pi^M_x tau)(x) = (Pi_x M tau)(x)`` is
    checked at ``check_points`` random grid points; the largest deviation is
    stored in ``diagonal_residual``.
    """

    def pi_fn(tau: SymbolTree) -> dict:
        out: dict = {}
        for sigma, c in M(tau).items():
            _pf_add(out, model.pi_table(sigma), _numeric(c))
        return out

    new = ModelData(model.grid, model.symbols, model.kernel, model.params, pi_fn, xi=model.xi,
                    eps=model.eps, label="renormalised")
    if check_points:
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(check_points):
            idx = tuple(int(rng.integers(s)) for s in model.grid.shape)
            for tau in model.symbols:
                lhs = float(new.diagonal(tau)[idx])
                mt = FormalSum({k: _numeric(c) for k, c in M(tau).items()})
                rhs = 0.0
                for sigma, c in mt.items():
                    rhs += c * float(model.diagonal(sigma)[idx])
                worst = max(worst, abs(lhs - rhs) / max(1.0, abs(rhs)))
        new.diagonal_residual = worst
    return new


class ConstantModel:
    """Model with ``Pi_x tau`` constant in ``y`` and trivial structure group.

    Used for the deformed-product example: ``{1: 1, I(Xi): 0, I(Xi)^2: c}``.
    """

    def __init__(self, grid: Grid, values: Mapping, params: HomogeneityParams | None = None):
        self.grid = grid
        self.params = _params_for(grid, params)
        self.values = {(parse(k, self.params) if isinstance(k, str) else k): float(v) for k, v in values.items()}
        self.symbols = list(self.values)

    def diagonal(self, tau) -> np.ndarray:
        if tau not in self.values:
            raise KeyError(f"{tau} is not in the model")
        return np.full(self.grid.shape, self.values[tau])

    def gamma(self, x_idx, y_idx) -> Callable:
        return FormalSum.lift


# ---------------------------------------------------------------------------
# modelled distributions


@dataclass
class ModelledDistribution:
    """Map ``x -> f(x) = sum_tau f_tau(x) tau`` on the grid, with regularity ``gamma``."""

    grid: Grid
    gamma: object
    coeffs: dict
    params: HomogeneityParams = field(default_factory=HomogeneityParams)

    def __post_init__(self):
        self.coeffs = {(parse(k, self.params) if isinstance(k, str) else k): v for k, v in self.coeffs.items()}

    @property
    def alpha(self) -> Fraction:
        """Lowest homogeneity present."""
        return min(_hval(t, self.params) for t in self.coeffs)

    def at(self, idx: Sequence[int]) -> FormalSum:
        idx = self.grid.wrap(idx)
        return FormalSum({t: float(np.broadcast_to(c, self.grid.shape)[idx]) for t, c in self.coeffs.items()})

    def restrict(self, mask: np.ndarray) -> "ModelledDistribution":
        return ModelledDistribution(self.grid, self.gamma,
                                    {t: np.where(mask, c, 0.0) for t, c in self.coeffs.items()}, self.params)


def taylor_lift(grid: Grid, expr, gamma, params: HomogeneityParams | None = None,
                factor: SymbolTree | None = None) -> ModelledDistribution:
    """Lift of a smooth function given as a sympy expression in ``t, x1, ..., xd``.

    ``f(x) = sum_{|k|_s < gamma} D^k g(x) / k! X^k``, optionally multiplied by
    the symbol ``factor`` (e.g. ``Xi``).
    """
    params = _params_for(grid, params)
    t = sympy.Symbol("t")
    xs = sympy.symbols(f"x1:{grid.d + 1}")
    variables = (t,) + tuple(xs)
    coords = [np.broadcast_to(grid.coordinate(a), grid.shape) for a in range(grid.ndim)]
    coeffs = {}
    for k in multi_indices(grid.ndim, Fraction(gamma), strict=True):
        deriv = expr
        for v, e in zip(variables, k):
            if e:
                deriv = sympy.diff(deriv, v, e)
        fn = sympy.lambdify(variables, deriv, "numpy")
        vals = np.broadcast_to(np.asarray(fn(*coords), dtype=float), grid.shape) / _factorial(k)
        sym = X(k) if factor is None else product(X(k), factor)
        coeffs[sym] = np.array(vals)
    return ModelledDistribution(grid, Fraction(gamma), coeffs, params)


def reconstruct(f: ModelledDistribution, model) -> GridField:
    """``(R f)(x) = (Pi_x f(x))(x)`` for a model with continuous ``Pi_x tau``."""
    if not f.gamma > 0:
        raise NonPositiveGamma(f"gamma = {f.gamma} must be positive")
    out = np.zeros(f.grid.shape)
    for tau, c in f.coeffs.items():
        out = out + c * model.diagonal(tau)
    return GridField(f.grid, out)


def reconstruction_exponent(f: ModelledDistribution, model: ModelData, points: Sequence[Sequence[int]],
                            lambdas: Sequence[float]) -> float:
    """Fitted exponent of ``|(R f - Pi_x f(x))(phi_x^lambda)|`` against ``lambda``."""
    Rf = reconstruct(f, model).values
    vals = []
    for lam in lambdas:
        acc = []
        for idx in points:
            a = _pair_array(f.grid, Rf, idx, lam)
            b = model.pair(idx, f.at(idx), idx, lam)
            acc.append(abs(a - b))
        vals.append(np.mean(acc))
    return fit_exponent(lambdas, vals).exponent


def multiply(f1: ModelledDistribution, f2: ModelledDistribution,
             basis: Iterable[SymbolTree] | None = None) -> ModelledDistribution:
    """Pointwise product truncated at ``gamma = (gamma1 + alpha2) ^ (gamma2 + alpha1)``.

    Raises
    ------
    ProductOutsideBasis
        If ``basis`` is given and a product symbol below ``gamma`` is missing from it.
    """
    params = f1.params
    a1, a2 = f1.alpha, f2.alpha
    gamma = min(f1.gamma + a2, f2.gamma + a1)
    allowed = set(basis) if basis is not None else None
    out: dict = {}
    for (t1, c1), (t2, c2) in itertools.product(f1.coeffs.items(), f2.coeffs.items()):
        tau = product(t1, t2)
        if not _hval(tau, params) < gamma:
            continue
        if allowed is not None and tau not in allowed:
            raise ProductOutsideBasis(f"{tau} is not in the basis")
        val = c1 * c2
        out[tau] = out[tau] + val if tau in out else val
    return ModelledDistribution(f1.grid, gamma, out, params)


# ---------------------------------------------------------------------------
# checks and seminorms


def _norm_at(s: FormalSum, level: Fraction, params: HomogeneityParams) -> float:
    return sum(abs(float(c)) for t, c in s.items() if _hval(t, params) == level)


def _distance(grid: Grid, x_idx, y_idx) -> float:
    dx = grid.point(x_idx) - grid.point(y_idx)
    return float(parabolic_norm(dx[0], dx[1:]))


def _random_pairs(grid: Grid, n_pairs: int, seed: int, max_sep: int = 3) -> list:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_pairs):
        x = tuple(int(rng.integers(s)) for s in grid.shape)
        y = tuple(xi + int(rng.integers(-max_sep, max_sep + 1)) for xi in x)
        if y == x:
            y = (x[0],) + tuple(v + 1 for v in x[1:])
        out.append((x, grid.wrap(y)))
    return out


@dataclass
class AdmissibilityReport:
    """Sampled admissibility diagnostics.

    Attributes
    ----------
    algebraic : float
        Largest relative ``|(Pi_x Gamma_xy tau - Pi_y tau)(phi_y^lambda)|``.
    slopes : dict
        Fitted scaling exponent of ``|(Pi_x tau)(phi_x^lambda)|`` per symbol.
    homogeneities : dict
        ``|tau|`` per symbol for comparison.
    gamma_ratios : dict
        Largest ``|Gamma_xy tau|_beta / |x - y|^{|tau| - beta}`` per symbol.
    """

    algebraic: float
    slopes: dict
    homogeneities: dict
    gamma_ratios: dict


def check_admissibility(model: ModelData, pairs=None, lambdas: Sequence[float] | None = None,
                        symbols=None, n_pairs: int = 6, seed: int = 0) -> AdmissibilityReport:
    """Algebraic residuals, scaling fits and structure-group bounds on samples."""
    g = model.grid
    params = model.params
    syms = list(symbols) if symbols is not None else model.symbols
    pairs = pairs or _random_pairs(g, n_pairs, seed)
    if lambdas is None:
        lambdas = [2.0**-k for k in range(2, 7) if 2.0**-k >= 4 * g.dx] or [4 * g.dx]
    worst = 0.0
    ratios: dict = {}
    for x, y in pairs:
        G = model.gamma(x, y)
        dist = _distance(g, x, y)
        for tau in syms:
            img = G(tau)
            h = _hval(tau, params)
            for beta in {_hval(t, params) for t in img.keys()}:
                if beta < h:
                    r = _norm_at(img, beta, params) / dist ** float(h - beta)
                    ratios[tau] = max(ratios.get(tau, 0.0), r)
            for lam in lambdas:
                a = model.pair(x, img, y, lam)
                b = model.pair(y, tau, y, lam)
                worst = max(worst, abs(a - b) / max(1.0, abs(b)))
    slopes: dict = {}
    if len(lambdas) >= 2:
        for tau in syms:
            vals = [np.mean([abs(model.pair(x, tau, x, lam)) for x, _ in pairs]) for lam in lambdas]
            if min(vals) > 0:
                slopes[tau] = float(np.polyfit(np.log(lambdas), np.log(vals), 1)[0])
    homs = {tau: float(_hval(tau, params)) for tau in syms}
    return AdmissibilityReport(worst, slopes, homs, ratios)


def dgamma_seminorm(f: ModelledDistribution, model, gamma=None, pairs=None, n_pairs: int = 32,
                    seed: int = 0) -> float:
    """Sampled ``max |f(x) - Gamma_xy f(y)|_beta / |x - y|^{gamma - beta}``."""
    gamma = f.gamma if gamma is None else gamma
    params = f.params
    pairs = pairs or _random_pairs(f.grid, n_pairs, seed)
    best = 0.0
    for x, y in pairs:
        G = model.gamma(x, y)
        diff = f.at(x) - G(f.at(y))
        dist = _distance(f.grid, x, y)
        for beta in {_hval(t, params) for t in f.coeffs}:
            if beta < gamma:
                best = max(best, _norm_at(diff, beta, params) / dist ** float(gamma - beta))
    return best


def model_distance(m1: ModelData, m2: ModelData, symbols=None, pairs=None, lambdas=None,
                   f1: ModelledDistribution | None = None, f2: ModelledDistribution | None = None,
                   n_pairs: int = 6, seed: int = 0) -> dict:
    """Sampled three-term distance between ``(Pi, Gamma, f)`` and ``(Pi', Gamma', f')``.

    Returns the ``Pi`` term ``|(Pi_x - Pi'_x) tau (phi_x^lambda)| / lambda^{|tau|}``,
    the ``Gamma`` term and, when both modelled distributions are given, the
    ``f`` term; ``total`` is their maximum.
    """
    g = m1.grid
    params = m1.params
    syms = list(symbols) if symbols is not None else m1.symbols
    pairs = pairs or _random_pairs(g, n_pairs, seed)
    lambdas = lambdas or [2.0**-k for k in range(2, 7) if 2.0**-k >= 4 * g.dx] or [4 * g.dx]
    pi_term = gamma_term = f_term = 0.0
    for x, y in pairs:
        G1, G2 = m1.gamma(x, y), m2.gamma(x, y)
        dist = _distance(g, x, y)
        for tau in syms:
            h = _hval(tau, params)
            for lam in lambdas:
                d = m1.pair(x, tau, x, lam) - m2.pair(x, tau, x, lam)
                pi_term = max(pi_term, abs(d) / lam ** float(h))
            diff = G1(tau) - G2(tau)
            for beta in {_hval(t, params) for t in diff.keys()}:
                if beta < h:
                    gamma_term = max(gamma_term, _norm_at(diff, beta, params) / dist ** float(h - beta))
        if f1 is not None and f2 is not None:
            diff = (f1.at(x) - G1(f1.at(y))) - (f2.at(x) - G2(f2.at(y)))
            for beta in {_hval(t, params) for t in diff.keys()}:
                if beta < f1.gamma:
                    f_term = max(f_term, _norm_at(diff, beta, params) / dist ** float(f1.gamma - beta))
    return {"pi": pi_term, "gamma": gamma_term, "f": f_term, "total": max(pi_term, gamma_term, f_term)}


# ---------------------------------------------------------------------------
# serialisation


def _write_array(path: Path, arr: np.ndarray) -> None:
    np.ascontiguousarray(arr, dtype="<f8").tofile(path)


def _read_array(path: Path, shape) -> np.ndarray:
    return np.fromfile(path, dtype="<f8").reshape(shape)


def save_model(model: ModelData, directory) -> Path:
    """Write a model as flat little-endian float64 arrays plus ``header.json``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    model.build_all()
    g = model.grid
    header = {
        "format": "regstruct-model/1",
        "grid": g.to_dict(),
        "shape": list(g.shape),
        "spacings": {"dt": g.dt, "dx": g.dx},
        "dtype": "<f8",
        "order": "C",
        "kappa": str(model.params.kappa),
        "eps": model.eps,
        "label": model.label,
        "kernel": None if model.kernel is None else
        {"d": model.kernel.d, "N": model.kernel.N, "R": model.kernel.R, "n_max": model.kernel.n_max},
        "symbols": [str(t) for t in model.symbols],
        "pi": [],
        "f": [],
        "xi": None,
    }
    for n, (tau, pf) in enumerate(sorted(model._pi.items(), key=lambda kv: str(kv[0]))):
        for m, (k, a) in enumerate(sorted(pf.items())):
            name = f"pi_{n}_{m}.bin"
            _write_array(out / name, _full(g, a))
            header["pi"].append({"symbol": str(tau), "poly": list(k), "file": name})
    for n, gen in enumerate(sorted(model._f)):
        name = f"f_{n}.bin"
        _write_array(out / name, model._f[gen])
        header["f"].append({"kind": gen.kind, "ell": list(gen.ell), "tau": str(gen.tau), "file": name})
    if model.xi is not None:
        _write_array(out / "xi.bin", model.xi.values)
        header["xi"] = "xi.bin"
    (out / "header.json").write_text(json.dumps(header, indent=2, sort_keys=True))
    return out


def load_model(directory) -> ModelData:
    """Inverse of :func:`save_model`; only stored tables are available."""
    src = Path(directory)
    header = json.loads((src / "header.json").read_text())
    gd = header["grid"]
    grid = Grid(gd["d"], gd["n"], gd["n_t"], gd["L"], tuple(gd["origin"]))
    shape = tuple(header["shape"])
    params = HomogeneityParams(kappa=Fraction(header["kappa"]), d=grid.d)
    kd = header["kernel"]
    kernel = None if kd is None else split_kernel(kd["d"], N=kd["N"], R=kd["R"], n_max=kd["n_max"])
    tables: dict = {}
    for entry in header["pi"]:
        tau = parse(entry["symbol"], params)
        tables.setdefault(tau, {})[tuple(entry["poly"])] = _read_array(src / entry["file"], shape)

    def pi_fn(tau):
        if tau in tables:
            return tables[tau]
        if tau.kind == "X":
            return {tuple(tau.poly): 1.0}
        if tau.kind == "Prod" and any(f.kind == "X" for f in tau.children):
            # polynomial factors act by multiplication with y^k
            poly = [f for f in tau.children if f.kind == "X"][0]
            rest = product(*[f for f in tau.children if f.kind != "X"])
            return _pf_mul({tuple(poly.poly): 1.0}, model.pi_table(rest))
        if tau not in tables:
            raise ClosureError(f"{tau} is not stored in {src}")
        return tables[tau]

    xi = GridField(grid, _read_array(src / header["xi"], shape)) if header["xi"] else None
    syms = [parse(s, params) for s in header["symbols"]]
    model = ModelData(grid, syms, kernel, params, pi_fn, xi=xi, eps=header["eps"], label=header["label"])
    for entry in header["f"]:
        gen = Generator(entry["kind"], tuple(entry["ell"]), parse(entry["tau"], params))
        model._f[gen] = _read_array(src / entry["file"], shape)
    return model


# ---------------------------------------------------------------------------
# continuum oracle for trigonometric noises


def kernel_fourier(kernel: KernelSpec, omega, kmag, nodes: int = 40) -> np.ndarray:
    """``int K(t, x) exp(-i (omega t + k.x)) dt dx`` for a radial kernel, by quadrature.

    The radial variable is rescaled by ``2 sqrt(t)`` at every time node so the
    heat-kernel peak is resolved down to ``t -> 0``.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    kmag = np.atleast_1d(np.asarray(kmag, dtype=float))
    d = kernel.d
    area = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
    s, ws = _gl(0.0, 1.0, nodes, 8)
    ts = kernel.T0 * s**2
    wts = ws * 2 * kernel.T0 * s
    e1 = np.zeros(d)
    e1[0] = 1.0
    out = np.zeros(len(omega), dtype=complex)
    for tv, wv in zip(ts, wts):
        scale = 2 * math.sqrt(tv)
        ymax = kernel.R / scale
        yc = min(8.0, ymax)
        y1, w1 = _gl(0.0, yc, nodes, 4)
        y2, w2 = _gl(yc, ymax, nodes, 4) if ymax > yc else (np.zeros(0), np.zeros(0))
        r = scale * np.concatenate([y1, y2])
        wr = scale * np.concatenate([w1, w2])
        vals = kernel.K(np.full(len(r), tv), r[:, None] * e1) * wr * r ** (d - 1) * area
        u = np.outer(kmag, r)
        if d == 1:
            S = np.cos(u)
        elif d == 2:
            S = j0(u)
        else:
            S = np.sinc(u / np.pi)
        out += wv * np.exp(-1j * omega * tv) * (S @ vals)
    return out


class TrigField:
    """Trigonometric polynomial ``sum_m c_m exp(2 pi i (m_0 t / T + m.x / L))``."""

    def __init__(self, d: int, T: float, L: float, coeffs: Mapping | None = None):
        self.d, self.T, self.L = d, T, L
        self.coeffs = {tuple(k): complex(v) for k, v in (coeffs or {}).items() if v != 0}

    @classmethod
    def constant(cls, d, T, L, c: float) -> "TrigField":
        return cls(d, T, L, {(0,) * (d + 1): c})

    @classmethod
    def cosine(cls, d, T, L, amplitude: float, m: Sequence[int], phase: float = 0.0) -> "TrigField":
        m = tuple(m)
        neg = tuple(-v for v in m)
        half = 0.5 * amplitude
        return cls(d, T, L, {m: half * np.exp(1j * phase), neg: half * np.exp(-1j * phase)})

    def _new(self, coeffs) -> "TrigField":
        return TrigField(self.d, self.T, self.L, coeffs)

    def __add__(self, other: "TrigField") -> "TrigField":
        out = dict(self.coeffs)
        for k, v in other.coeffs.items():
            out[k] = out.get(k, 0) + v
        return self._new(out)

    def scale(self, c: float) -> "TrigField":
        return self._new({k: c * v for k, v in self.coeffs.items()})

    def __mul__(self, other: "TrigField") -> "TrigField":
        out: dict = {}
        for (k1, v1), (k2, v2) in itertools.product(self.coeffs.items(), other.coeffs.items()):
            k = tuple(a + b for a, b in zip(k1, k2))
            out[k] = out.get(k, 0) + v1 * v2
        return self._new(out)

    def frequencies(self, m: Sequence[int]) -> tuple[float, np.ndarray]:
        return 2 * math.pi * m[0] / self.T, 2 * math.pi * np.asarray(m[1:], dtype=float) / self.L

    def derivative(self, ell: Sequence[int]) -> "TrigField":
        out = {}
        for m, v in self.coeffs.items():
            w, k = self.frequencies(m)
            f = (1j * w) ** ell[0] * np.prod([(1j * kk) ** e for kk, e in zip(k, ell[1:])])
            out[m] = v * f
        return self._new(out)

    def convolve(self, kernel_hat: Callable) -> "TrigField":
        keys = list(self.coeffs)
        hats = kernel_hat(keys)
        return self._new({m: self.coeffs[m] * h for m, h in zip(keys, hats)})

    def at(self, point: Sequence[float]) -> float:
        total = 0j
        for m, v in self.coeffs.items():
            w, k = self.frequencies(m)
            total += v * np.exp(1j * (w * point[0] + float(np.dot(k, point[1:]))))
        return float(total.real)

    def on_grid(self, grid: Grid) -> np.ndarray:
        """Exact point values on a grid whose periods match (aliasing is harmless)."""
        if not (math.isclose(grid.T, self.T) and math.isclose(grid.L, self.L)):
            raise ValueError("grid periods differ from the field's periods")
        arr = np.zeros(grid.shape, dtype=complex)
        for m, v in self.coeffs.items():
            w, k = self.frequencies(m)
            phase = np.exp(1j * (w * grid.origin[0] + float(np.dot(k, grid.origin[1:]))))
            idx = tuple(mm % s for mm, s in zip(m, grid.shape))
            arr[idx] += v * phase
        return np.real(np.fft.ifftn(arr) * arr.size)


class ContinuumLift:
    """Canonical model of a trigonometric noise computed in Fourier space.

    Only symbols without polynomial factors are supported; it serves as the
    continuum reference for grid lifts.
    """

    def __init__(self, xi: TrigField, kernel: KernelSpec, params: HomogeneityParams | None = None,
                 eps: float | None = None):
        self.xi, self.kernel = xi, kernel
        self.params = params or HomogeneityParams(d=xi.d)
        self.eps = eps
        self._pi: dict = {}
        self._hat: dict = {}

    def _kernel_hat(self, keys) -> list:
        todo = [m for m in keys if m not in self._hat]
        if todo:
            om, km = [], []
            for m in todo:
                w, k = self.xi.frequencies(m)
                om.append(w)
                km.append(float(np.linalg.norm(k)))
            vals = kernel_fourier(self.kernel, om, km)
            self._hat.update(zip(todo, vals))
        return [self._hat[m] for m in keys]

    def pi(self, tau: SymbolTree) -> TrigField:
        if tau in self._pi:
            return self._pi[tau]
        f = self.xi
        if tau.kind == "Xi":
            out = f
        elif tau.is_unit:
            out = TrigField.constant(f.d, f.T, f.L, 1.0)
        elif tau.kind == "X":
            raise NotImplementedError("the continuum oracle does not handle polynomial factors")
        elif tau.kind == "Prod":
            out = TrigField.constant(f.d, f.T, f.L, 1.0)
            for c in tau.children:
                out = out * self.pi(c)
        elif tau.kind == "I":
            out = self.pi(tau.children[0]).convolve(self._kernel_hat)
        else:
            out = self.pi(tau.children[0]).scale(self.eps)
        self._pi[tau] = out
        return out

    def _apply(self, s: FormalSum) -> TrigField:
        out = TrigField(self.xi.d, self.xi.T, self.xi.L)
        for sigma, c in s.items():
            out = out + self.pi(sigma).scale(float(c))
        return out

    def functional(self, point: Sequence[float], generators: Iterable[Generator]) -> Functional:
        point = np.asarray(point, dtype=float)
        values: dict = {}

        def f_of(gen: Generator) -> float:
            if gen in values:
                return values[gen]
            fx = Functional(poly=tuple(-point), values=values)
            # generators of strict subtrees are resolved first through recursion
            for (_, right) in delta(gen.tau, self.params).keys():
                for h in right.gens:
                    f_of(h)
            Pi_x_tau = self._apply(gamma_apply(fx, gen.tau, self.params))
            jump = 2 if gen.kind == "I" else 1
            bound = _hval(gen.tau, self.params) + jump - parabolic_degree(gen.ell)
            total = 0.0
            for k in multi_indices(len(point), bound, strict=True):
                m = tuple(a + b for a, b in zip(gen.ell, k))
                field_ = Pi_x_tau.derivative(m)
                if gen.kind == "I":
                    field_ = field_.convolve(self._kernel_hat)
                weight = math.prod((-p) ** e for p, e in zip(point, k)) / _factorial(k)
                total += weight * field_.at(point)
            values[gen] = -total if gen.kind == "I" else -self.eps * total
            return values[gen]

        for gen in sorted(generators, key=lambda q: (q.n_int, q.homogeneity(self.params).key())):
            f_of(gen)
        return Functional(poly=tuple(-point), values=values)

    def Pi_x(self, point, tau, generators) -> TrigField:
        return self._apply(gamma_apply(self.functional(point, generators), tau, self.params))


# ---------------------------------------------------------------------------
# experiments


LIFT_CHECK_SYMBOLS = ("Xi", "I(Xi)", "I(Xi)^2", "I(Xi)^3", "I(I(Xi)^3)", "I(I(Xi)^2)",
                      "I(Xi)^2*I(I(Xi)^3)", "I(Xi)^2*I(I(Xi)^2)", "I(Xi)*I(I(Xi)^3)")


def smooth_trig_noise(d: int, T: float, L: float = 1.0) -> TrigField:
    """Fixed smooth space-time noise used by the refinement checks."""
    m1 = (0, 1) + (0,) * (d - 1)
    m2 = (1,) + (0,) * (d - 1) + (1,)
    m3 = (-1, 1) + (0,) * (d - 1) if d == 1 else (-1, 1, -1) + (0,) * (d - 2)
    return (TrigField.cosine(d, T, L, 1.0, m1)
            + TrigField.cosine(d, T, L, 0.6, m2, phase=0.4)
            + TrigField.cosine(d, T, L, 0.4, m3, phase=-1.1))


@dataclass
class RefinementStudy:
    """Errors of grid lifts against the continuum lift at successive resolutions."""

    levels: list
    admissibility: list
    consistency: list
    algebraic: list

    @staticmethod
    def _orders(errs) -> list:
        return [float(np.log2(a / b)) for a, b in zip(errs[:-1], errs[1:])]

    @property
    def admissibility_orders(self) -> list:
        return self._orders(self.admissibility)

    @property
    def consistency_orders(self) -> list:
        return self._orders(self.consistency)


def lift_refinement_study(levels: Sequence[int] = (10, 20, 40), d: int = 3, T: float = 0.16,
                          R: float = 0.4, N: int = -1, symbols: Sequence[str] = LIFT_CHECK_SYMBOLS,
                          points=((0.0, 0.2, 0.5, 0.3), (0.02, 0.3, 0.5, 0.1)),
                          params: HomogeneityParams | None = None) -> RefinementStudy:
    """Grid lifts of a smooth noise against the Fourier-space lift.

    For each resolution ``n`` (``n_t = T n^2``) this records

    * the largest relative error of ``Pi I(tau)`` (grid convolution) against
      ``K * Pi tau`` (continuum),
    * the largest relative error of ``Pi_x Gamma_xy tau`` (grid) against the
      continuum ``Pi_y tau``, over the listed pair of base points,
    * the grid-only residual of ``Pi_x Gamma_xy = Pi_y`` (roundoff level).

    The default kernel has no moment correction: a kernel annihilating low
    polynomials has a Fourier transform that nearly vanishes on the smooth
    modes of the noise, leaving nothing to compare against.
    """
    kernel = split_kernel(d, N=N, R=R)
    params = params or HomogeneityParams(d=d)
    syms = [parse(s, params) for s in symbols]
    noise = smooth_trig_noise(d, T)
    cont = ContinuumLift(noise, kernel, params)
    gens = generator_closure(generators_of(syms, params), params)
    xp, yp = points
    cont_y = {tau: cont.Pi_x(yp, tau, gens) for tau in syms}
    adm, cons, alg = [], [], []
    for n in levels:
        n_t = int(round(T * n * n))
        grid = Grid(d, n, n_t)
        if not math.isclose(grid.T, T):
            raise ValueError(f"T = {T} is not a multiple of dt at n = {n}")
        xi = GridField(grid, noise.on_grid(grid))
        model = canonical_lift(xi, syms, kernel, params=params)
        e_adm = 0.0
        for tau in syms:
            if tau.kind == "I":
                ref = cont.pi(tau).on_grid(grid)
                err = np.max(np.abs(model.pi(tau).values - ref)) / np.max(np.abs(ref))
                e_adm = max(e_adm, float(err))
        xi_idx, yi_idx = grid.index_of(xp), grid.index_of(yp)
        G = model.gamma(xi_idx, yi_idx)
        e_cons = e_alg = 0.0
        for tau in syms:
            lhs = _pf_eval(grid, model.apply_pi(model.Pi_x_coefficients(xi_idx, G(tau))))
            grid_y = model.Pi_x(yi_idx, tau).values
            ref = cont_y[tau].on_grid(grid)
            scale = max(np.max(np.abs(ref)), 1e-300)
            e_cons = max(e_cons, float(np.max(np.abs(lhs - ref)) / scale))
            e_alg = max(e_alg, float(np.max(np.abs(lhs - grid_y)) / scale))
        adm.append(e_adm)
        cons.append(e_cons)
        alg.append(e_alg)
    return RefinementStudy(list(levels), adm, cons, alg)


def deformed_product_check(grid: Grid, c: float = 0.7, seed: int = 0,
                           params: HomogeneityParams | None = None) -> float:
    """Largest deviation of ``R(F^2)`` from ``f^2 + c g^2`` under the deformed model.

    ``F = f 1 + g I(Xi)`` with random smooth-ish ``f, g``; the model maps
    ``1, I(Xi), I(Xi)^2`` to the constants ``1, 0, c``.
    """
    params = _params_for(grid, params)
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(grid.shape)
    gg = rng.standard_normal(grid.shape)
    one, i_xi = ONE, parse("I(Xi)", params)
    F = ModelledDistribution(grid, Fraction(1), {one: f, i_xi: gg}, params)
    model = ConstantModel(grid, {one: 1.0, i_xi: 0.0, product(i_xi, i_xi): c}, params)
    F2 = multiply(F, F)
    out = reconstruct(F2, model).values
    target = f**2 + c * gg**2
    return float(np.max(np.abs(out - target)) / np.max(np.abs(target)))


@dataclass
class ScalingResult:
    """Outcome of :func:`homogeneity_scaling`."""

    exponent: float
    stderr: float
    expected: float
    lambdas: list
    means: list
    errors: list
    local_slopes: list
    realisations: int


def homogeneity_scaling(n: int = 32, n_t: int = 256, d: int = 3, N: int = 4, R: float | None = None,
                        eps_cells: float = 2.0, lambdas: Sequence[float] = (0.25, 0.125, 0.0625),
                        realisations: int = 200, points: int = 8, seed: int = 0,
                        dtype=np.float64) -> ScalingResult:
    """Scaling of ``|(Pi^_x <2>)(phi_x^lambda)|`` for mollified Gaussian noise.

    ``Pi^ <2> = (K * xi_eps)^2 - C_eps`` with ``C_eps`` the exact lattice
    constant; ``<2>`` has no positive generators so ``Pi^_x <2> = Pi^ <2>``.
    Each realisation contributes the mean of ``|.|`` over ``points`` random
    base points; the log-log slope of the realisation average is fitted with
    its standard errors.
    """
    grid = Grid(d, n, n_t)
    kernel = split_kernel(d, N=N, R=R) if R is not None else default_kernel(grid, N)
    eps = eps_cells * grid.dx
    kvals = kernel_on_grid(grid, kernel)
    rho = mollifier_on_grid(grid, eps)
    k_eps = _Convolver(grid, kvals)(rho)
    C = float(np.sum(k_eps * k_eps) * grid.cell)
    hat = (_rfft(k_eps) * grid.cell).astype(np.complex64 if dtype == np.float32 else np.complex128)
    seeds = np.random.SeedSequence(seed).spawn(realisations)
    per = np.zeros((realisations, len(lambdas)))
    sd = 1.0 / math.sqrt(grid.cell)
    for r, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        w = rng.standard_normal(grid.shape, dtype=dtype) * dtype(sd)
        Xf = _irfft(_rfft(w) * hat, grid.shape)
        Y = Xf.astype(float) ** 2 - C
        base = [tuple(int(rng.integers(s)) for s in grid.shape) for _ in range(points)]
        for j, lam in enumerate(lambdas):
            per[r, j] = np.mean([abs(_pair_array(grid, Y, b, lam)) for b in base])
    means = per.mean(axis=0)
    errs = per.std(axis=0, ddof=1) / math.sqrt(realisations)
    fit = fit_exponent(lambdas, means, errs)
    lam = np.asarray(lambdas)
    local = list(np.diff(np.log(means)) / np.diff(np.log(lam)))
    return ScalingResult(float(fit.exponent), float(fit.stderr), -1.0, list(lambdas), list(means),
                         list(errs), [float(v) for v in local], realisations)
