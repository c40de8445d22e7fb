"""Heat-kernel decomposition, mollifiers and Monte-Carlo graph integrals.

The truncated kernel is ``K = chi * P - B0`` where ``chi`` is a smooth
parabolic cutoff equal to one near the origin and ``B0`` is a smooth
polynomial-times-bump correction chosen so that ``K`` annihilates every
polynomial of parabolic degree at most ``N``.  Dyadic pieces telescope:

    K_n = (chi(S_{2^n} z) - chi(S_{2^{n+1}} z)) P(z) - B_n(z) + B_{n+1}(z),
    B_n(z) = 2^{n d} B0(S_{2^n} z),

so that ``sum_n K_n = K`` off the origin and every ``K_n`` kills the same
polynomials.  Graph integrals are estimated by importance sampling with
parabolic power-law proposals centred at the singular loci of each edge.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate
from scipy.optimize import curve_fit
from scipy.special import gammaln

from ._backend import njit, select
from .symbols import multi_indices


class ResolutionTooCoarse(ValueError):
    """Quadrature or grid step too large for the requested mollification scale."""


class NonIntegrable(RuntimeError):
    """A graph integral diverges (structurally or by heavy-tailed samples)."""


class QuadratureFailure(RuntimeError):
    """Adaptive quadrature did not reach the requested accuracy."""


# ---------------------------------------------------------------------------
# elementary profiles


def heat_kernel(d: int, t, x) -> np.ndarray:
    """Heat kernel ``(4 pi t)^{-d/2} exp(-|x|^2 / 4t)`` for ``t > 0``, zero otherwise.

    Parameters
    ----------
    d : int
        Spatial dimension.
    t : array_like
        Times, shape ``S``.
    x : array_like
        Positions, shape ``S + (d,)``.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float).reshape(t.shape + (d,))
    r2 = np.sum(x * x, axis=-1)
    out = np.zeros(t.shape)
    pos = t > 0
    tp = t[pos]
    out[pos] = (4 * np.pi * tp) ** (-d / 2) * np.exp(-r2[pos] / (4 * tp))
    return out


def _smooth_step(s):
    """C-infinity step: 1 for |s| <= 1/2, 0 for |s| >= 1."""
    s = np.abs(np.asarray(s, dtype=float))
    r = np.clip(2.0 * (1.0 - s), 0.0, 1.0)  # 0 at |s|=1, 1 at |s|=1/2
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(r > 0, np.exp(-1.0 / np.where(r > 0, r, 1.0)), 0.0)
        b = np.where(r < 1, np.exp(-1.0 / np.where(r < 1, 1.0 - r, 1.0)), 0.0)
    return a / (a + b)


def _bump(s):
    """Standard bump ``exp(-1/(1-s^2))`` on ``|s| < 1``."""
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1
    out = np.zeros(s.shape)
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


def _time_bump(u):
    """Causal bump ``exp(-1/(u(1-u)))`` on ``0 < u < 1``."""
    u = np.asarray(u, dtype=float)
    inside = (u > 0) & (u < 1)
    out = np.zeros(u.shape)
    ui = u[inside]
    out[inside] = np.exp(-1.0 / (ui * (1.0 - ui)))
    return out


def _gl(a: float, b: float, n: int, pieces: int = 1):
    """Composite Gauss-Legendre nodes and weights on ``[a, b]``."""
    x, w = leggauss(n)
    edges = np.linspace(a, b, pieces + 1)
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        nodes.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
        weights.append(0.5 * (hi - lo) * w)
    return np.concatenate(nodes), np.concatenate(weights)


def _sphere_moment(k: Sequence[int]) -> float:
    """``int_{S^{d-1}} omega^k d sigma``."""
    if any(ki % 2 for ki in k):
        return 0.0
    d = len(k)
    logv = math.log(2.0) + sum(gammaln((ki + 1) / 2) for ki in k) - gammaln((sum(k) + d) / 2)
    return math.exp(logv)


def parabolic_norm(t, x) -> np.ndarray:
    """``max(sqrt|t|, |x|_inf)``, the norm whose unit ball is a box."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    return np.maximum(np.sqrt(np.abs(t)), np.max(np.abs(x), axis=-1))


# ---------------------------------------------------------------------------
# mollifier


@dataclass(frozen=True)
class Mollifier:
    """Bump ``rho(t, x) = c psi(t) psi(|x|)`` on the parabolic unit ball.

    ``rho_eps(t, x) = eps^{-(d+2)} rho(t / eps^2, x / eps)``.
    """

    d: int

    @property
    def norm(self) -> float:
        return _mollifier_norm(self.d)

    def density(self, t, x, eps: float = 1.0) -> np.ndarray:
        t = np.asarray(t, dtype=float) / eps**2
        x = np.asarray(x, dtype=float) / eps
        r = np.sqrt(np.sum(x * x, axis=-1))
        return self.norm * _bump(t) * _bump(r) * eps ** (-(self.d + 2))

    def sample(self, n: int, rng: np.random.Generator, eps: float = 1.0) -> np.ndarray:
        """Draw ``n`` points ``(t, x)`` from ``rho_eps`` by rejection; shape ``(n, d+1)``."""
        d = self.d
        peak = math.exp(-1.0)
        t = _reject(lambda m: rng.uniform(-1, 1, m), lambda s: _bump(s) / peak, n, rng)
        def prop(m):
            g = rng.standard_normal((m, d))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            return g * rng.uniform(0, 1, (m, 1)) ** (1.0 / d)
        x = _reject(prop, lambda p: _bump(np.linalg.norm(p, axis=1)) / peak, n, rng)
        out = np.empty((n, d + 1))
        out[:, 0] = t * eps**2
        out[:, 1:] = x.reshape(n, d) * eps
        return out


def _reject(propose, accept_prob, n, rng):
    chunks, have = [], 0
    while have < n:
        m = max(2 * (n - have), 64)
        cand = propose(m)
        keep = rng.uniform(0, 1, m) < accept_prob(cand)
        chunks.append(cand[keep])
        have += int(keep.sum())
    return np.concatenate(chunks)[:n]


@lru_cache(maxsize=None)
def _mollifier_norm(d: int) -> float:
    s, w = _gl(-1, 1, 64, 8)
    time_mass = float(np.sum(w * _bump(s)))
    r, wr = _gl(0, 1, 64, 8)
    area = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
    space_mass = area * float(np.sum(wr * r ** (d - 1) * _bump(r)))
    return 1.0 / (time_mass * space_mass)


# ---------------------------------------------------------------------------
# kernel decomposition


@dataclass
class KernelSpec:
    """Truncated heat kernel with its dyadic decomposition.

    Attributes
    ----------
    d : int
        Spatial dimension.
    beta : int
        Order of the kernel (2 for the heat kernel).
    N : int
        Moments up to parabolic degree ``N`` vanish.
    R : float
        Spatial cutoff radius; the time cutoff is ``T0 = R^2``.
    n_max : int
        Depth of the dyadic decomposition used by checks.
    exponents : ndarray
        Pairs ``(k0, j)`` indexing the radial monomials ``(t/T0)^k0 (|x|/R)^{2j}``
        of the correction polynomial.
    coefficients : ndarray
        Coefficients of those monomials.
    """

    d: int
    beta: int
    N: int
    R: float
    n_max: int
    exponents: np.ndarray
    coefficients: np.ndarray
    backend: str | None = None

    @property
    def T0(self) -> float:
        return self.R**2

    @property
    def scaling_dimension(self) -> int:
        return self.d + 2

    @property
    def support_radius(self) -> float:
        """Radius of the support in the box parabolic norm."""
        return self.R

    # pointwise pieces -------------------------------------------------------
    def chi(self, t, x) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        r = np.sqrt(np.sum(x * x, axis=-1)) / self.R
        return _smooth_step(t / self.T0) * _smooth_step(r)

    def P(self, t, x) -> np.ndarray:
        return heat_kernel(self.d, t, x)

    def bump(self, t, x) -> np.ndarray:
        """The moment-killing correction ``B0``."""
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        u = t / self.T0
        v2 = np.sum(x * x, axis=-1) / self.R**2
        poly = np.zeros(t.shape)
        for (k0, j), a in zip(self.exponents, self.coefficients):
            poly = poly + a * u**k0 * v2**j
        return _time_bump(u) * _bump(np.sqrt(v2)) * poly

    def K(self, t, x, backend: str | None = None) -> np.ndarray:
        """Evaluate ``K = chi P - B0`` (hot path, numba or numpy)."""
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float).reshape(t.shape + (self.d,))
        impl = select(_k_eval_numba, _k_eval_numpy, backend or self.backend)
        flat = impl(
            np.ascontiguousarray(t.ravel()),
            np.ascontiguousarray(x.reshape(-1, self.d)),
            self.T0,
            self.R,
            np.ascontiguousarray(self.exponents, dtype=np.int64),
            np.ascontiguousarray(self.coefficients, dtype=float),
        )
        return flat.reshape(t.shape)

    def __call__(self, t, x) -> np.ndarray:
        return self.K(t, x)

    def Khat(self, t, x) -> np.ndarray:
        """Smooth remainder ``(1 - chi) P + B0``, computed independently of ``K``."""
        return (1.0 - self.chi(t, x)) * self.P(t, x) + self.bump(t, x)

    # dyadic pieces ----------------------------------------------------------
    def B(self, n: int, t, x) -> np.ndarray:
        lam = 2.0**n
        return lam**self.d * self.bump(np.asarray(t) * lam**2, np.asarray(x) * lam)

    def psi(self, n: int, t, x) -> np.ndarray:
        lam = 2.0**n
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        return self.chi(t * lam**2, x * lam) - self.chi(t * 4 * lam**2, x * 2 * lam)

    def piece(self, n: int, t, x) -> np.ndarray:
        """Dyadic piece ``K_n``."""
        return self.psi(n, t, x) * self.P(t, x) - self.B(n, t, x) + self.B(n + 1, t, x)

    def pieces_sum(self, t, x, n_max: int | None = None) -> np.ndarray:
        """Partial sum ``sum_{n <= n_max} K_n``; equals ``K`` where ``|z|_s >~ 2^{-n_max}``."""
        top = self.n_max if n_max is None else n_max
        return sum(self.piece(n, t, x) for n in range(top + 1))

    def moments(self, n: int | None = None, nodes: int = 48) -> dict[tuple[int, ...], float]:
        """Quadrature of ``int K_n t^k0 x^k dz`` (of ``K`` when ``n`` is None) for ``|k|_s <= N``.

        ``K`` is radial in space, so each moment factorises into a spherical
        moment and a two-dimensional integral in ``(t, |x|)``.  The radial
        variable is rescaled by ``2 sqrt(t)`` so the heat-kernel peak is
        resolved at every time node.
        """
        lam = 1.0 if n is None else 2.0**n
        T = self.T0 / lam**2
        X = self.R / lam
        s, ws = _gl(0.0, 1.0, nodes, 6)
        ts = T * s**2
        wts = ws * 2 * T * s
        keys = multi_indices(self.d + 1, self.N)
        degrees = sorted({sum(k[1:]) for k in keys})
        acc = {(k0, deg): 0.0 for k0 in range(self.N // 2 + 1) for deg in degrees}
        e1 = np.zeros(self.d)
        e1[0] = 1.0
        for tv, wv in zip(ts, wts):
            scale = 2 * math.sqrt(tv)
            ymax = X / scale
            yc = min(8.0, ymax)
            y1, w1 = _gl(0.0, yc, nodes, 4)
            y2, w2 = _gl(yc, ymax, nodes, 4) if ymax > yc else (np.zeros(0), np.zeros(0))
            r = scale * np.concatenate([y1, y2])
            wr = scale * np.concatenate([w1, w2])
            tt = np.full(len(r), tv)
            xx = r[:, None] * e1
            vals = self.K(tt, xx) if n is None else self.piece(n, tt, xx)
            for k0, deg in acc:
                acc[(k0, deg)] += wv * tv**k0 * float(np.sum(wr * vals * r ** (deg + self.d - 1)))
        return {tuple(k): _sphere_moment(k[1:]) * acc[(k[0], sum(k[1:]))] for k in keys}


@njit
def _smooth_step_scalar(s):
    s = abs(s)
    if s <= 0.5:
        return 1.0
    if s >= 1.0:
        return 0.0
    r = 2.0 * (1.0 - s)
    a = math.exp(-1.0 / r)
    b = math.exp(-1.0 / (1.0 - r))
    return a / (a + b)


@njit
def _k_eval_numba(t, x, T0, R, exps, coefs):
    n, d = x.shape
    m = exps.shape[0]
    out = np.zeros(n)
    for p in range(n):
        tp = t[p]
        if tp <= 0.0 or tp >= T0:
            continue
        r2 = 0.0
        for i in range(d):
            r2 += x[p, i] * x[p, i]
        v2 = r2 / (R * R)
        if v2 >= 1.0:
            continue
        u = tp / T0
        heat = (4.0 * math.pi * tp) ** (-0.5 * d) * math.exp(-r2 / (4.0 * tp))
        val = _smooth_step_scalar(u) * _smooth_step_scalar(math.sqrt(v2)) * heat
        poly = 0.0
        for j in range(m):
            poly += coefs[j] * u ** exps[j, 0] * v2 ** exps[j, 1]
        tb = math.exp(-1.0 / (u * (1.0 - u)))
        sb = math.exp(-1.0 / (1.0 - v2))
        out[p] = val - tb * sb * poly
    return out


def _k_eval_numpy(t, x, T0, R, exps, coefs):
    out = np.zeros(len(t))
    r2 = np.sum(x * x, axis=1)
    v2 = r2 / (R * R)
    live = (t > 0) & (t < T0) & (v2 < 1)
    tp, r2p, v2p = t[live], r2[live], v2[live]
    u = tp / T0
    heat = (4 * np.pi * tp) ** (-0.5 * x.shape[1]) * np.exp(-r2p / (4 * tp))
    val = _smooth_step(u) * _smooth_step(np.sqrt(v2p)) * heat
    poly = np.zeros(len(tp))
    for (k0, j), a in zip(exps, coefs):
        poly += a * u**k0 * v2p**j
    tb = np.exp(-1.0 / (u * (1 - u)))
    sb = np.exp(-1.0 / (1 - v2p))
    out[live] = val - tb * sb * poly
    return out


def _radial_keys(N: int) -> list[tuple[int, int]]:
    return [(k0, j) for k0 in range(N // 2 + 1) for j in range(N // 2 + 1) if 2 * k0 + 2 * j <= N]


def _chi_p_moments(d: int, R: float, keys, nodes: int = 64) -> np.ndarray:
    """``int chi P (t/T0)^k0 (|x|/R)^{2j} dz`` by a two-dimensional rule in ``(t, |x|)``."""
    T0 = R * R
    half = math.sqrt(0.5)
    s, ws = _gl(0.0, 1.0, nodes, 4)
    s = np.concatenate([s * half, half + s * (1 - half)])
    ws = np.concatenate([ws * half, ws * (1 - half)])
    t = T0 * s**2
    wt = ws * 2 * T0 * s * _smooth_step(t / T0)
    area = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
    out = np.zeros(len(keys))
    for tv, wv in zip(t, wt):
        # r = 2 sqrt(t) y turns the Gaussian factor into exp(-y^2)
        scale = 2 * math.sqrt(tv) / R
        ymax = min(R / (2 * math.sqrt(tv)), 8.0)
        yh = min(R / (4 * math.sqrt(tv)), ymax)
        y1, w1 = _gl(0.0, yh, nodes, 2)
        y2, w2 = _gl(yh, ymax, nodes, 2) if ymax > yh else (np.zeros(0), np.zeros(0))
        y = np.concatenate([y1, y2])
        wy = np.concatenate([w1, w2])
        base = wy * y ** (d - 1) * np.exp(-y * y) * _smooth_step(scale * y) * area * math.pi ** (-d / 2)
        for i, (k0, j) in enumerate(keys):
            out[i] += wv * (tv / T0) ** k0 * float(np.sum(base * (scale * y) ** (2 * j)))
    return out


def _bump_gram(d: int, R: float, keys) -> np.ndarray:
    T0 = R * R
    u, wu = _gl(0.0, 1.0, 64, 8)
    tb = _time_bump(u)
    r, wr = _gl(0.0, 1.0, 64, 8)
    sb = _bump(r)
    area = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
    m = len(keys)
    G = np.zeros((m, m))
    for a in range(m):
        for b in range(a, m):
            k0 = keys[a][0] + keys[b][0]
            j = keys[a][1] + keys[b][1]
            tm = float(np.sum(wu * tb * u**k0))
            xm = area * float(np.sum(wr * sb * r ** (2 * j + d - 1)))
            G[a, b] = G[b, a] = T0 * R**d * tm * xm
    return G


@lru_cache(maxsize=None)
def _split_cached(d: int, N: int, R: float, n_max: int) -> tuple:
    keys = _radial_keys(N)
    if not keys:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0)
    m = _chi_p_moments(d, R, keys)
    G = _bump_gram(d, R, keys)
    coef = np.linalg.solve(G, m)
    return np.array(keys, dtype=np.int64), coef


def split_kernel(d: int, N: int = 4, R: float = 1.0, n_max: int = 8, backend: str | None = None) -> KernelSpec:
    """Build the decomposition ``P = K + Khat`` in spatial dimension ``d``.

    Parameters
    ----------
    d : int
        Spatial dimension, 1 to 3.
    N : int
        Polynomials of parabolic degree ``<= N`` are annihilated by ``K``.
    R : float
        Cutoff radius in ``(0, 1]``; ``K`` is supported in ``|x| < R``, ``0 < t < R^2``.
    n_max : int
        Dyadic depth used by the checks.
    """
    if d not in (1, 2, 3):
        raise ValueError("dimension must be 1, 2 or 3")
    if not 0 < R <= 1:
        raise ValueError("R must lie in (0, 1]")
    exps, coef = _split_cached(d, int(N), float(R), int(n_max))
    return KernelSpec(d=d, beta=2, N=int(N), R=float(R), n_max=int(n_max),
                      exponents=exps, coefficients=coef, backend=backend)


# ---------------------------------------------------------------------------
# mollified kernels


class MollifiedKernel:
    """Callable ``K_eps = K * rho_eps`` evaluated by tensor Gauss-Legendre quadrature."""

    def __init__(self, K: Callable, rho: Mollifier, eps: float, nodes: int = 12):
        if not 0 < eps <= 1:
            raise ValueError("eps must lie in (0, 1]")
        step = 2.0 * eps / nodes
        if step > eps / 4:
            raise ResolutionTooCoarse(f"quadrature step {step:g} exceeds eps/4 = {eps / 4:g}")
        self.K, self.rho, self.eps, self.nodes = K, rho, eps, nodes
        d = rho.d
        g, w = leggauss(nodes)
        ts, wt = g * eps**2, w * eps**2
        xs, wx = g * eps, w * eps
        mesh = np.meshgrid(ts, *([xs] * d), indexing="ij")
        wmesh = np.meshgrid(wt, *([wx] * d), indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        wts = np.prod(np.stack([m.ravel() for m in wmesh], axis=-1), axis=-1)
        dens = rho.density(pts[:, 0], pts[:, 1:], eps)
        keep = dens > 0
        self._pts = pts[keep]
        self._wts = (wts * dens)[keep]

    def __call__(self, t, x) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        d = self.rho.d
        x = np.asarray(x, dtype=float).reshape(t.shape + (d,))
        tf = t.ravel()
        xf = x.reshape(-1, d)
        out = np.empty(len(tf))
        for i in range(len(tf)):
            vals = self.K(tf[i] - self._pts[:, 0], xf[i] - self._pts[:, 1:])
            out[i] = float(np.dot(self._wts, vals))
        return out.reshape(t.shape)


def mollify_kernel(K: Callable, rho: Mollifier, eps: float, nodes: int = 12) -> MollifiedKernel:
    """Return ``K_eps = K * rho_eps`` as a callable ``(t, x) -> value``."""
    return MollifiedKernel(K, rho, eps, nodes)


# ---------------------------------------------------------------------------
# graph integrals


@dataclass(frozen=True)
class Noise:
    """Noise driving the cumulant hyperedges of a graph.

    ``white``: delta cumulant of order 2.  ``gaussian``: ``rho_eps * xi``,
    order 2 only.  ``shot``: rescaled compensated shot noise with intensity
    ``intensity`` and profile ``rho``; its order-``p`` cumulant is
    ``intensity * eps^{D(p/2 - 1)} int prod_i rho_eps(z_i - w) dw``.
    """

    kind: str = "gaussian"
    intensity: float = 1.0

    def prefactor(self, order: int, eps: float, D: int) -> float:
        if self.kind in ("white", "gaussian"):
            if order != 2:
                raise ValueError(f"{self.kind} noise has no cumulant of order {order}")
            return 1.0
        if self.kind == "shot":
            return self.intensity * eps ** (D * (order / 2 - 1))
        raise ValueError(f"unknown noise kind {self.kind!r}")


@dataclass
class GraphSpec:
    """Feynman graph: edge ``(a, b, label)`` contributes ``kernel(z_b - z_a)``.

    Vertices not listed in ``roots`` are integrated.  Each cumulant hyperedge
    ``(legs, order)`` ties the listed leg vertices through one joint
    cumulant of the noise; leg vertices are integrated through it.
    """

    vertices: list[str]
    edges: list[tuple[str, str, str]]
    cumulants: list[tuple[tuple[str, ...], int]] = field(default_factory=list)
    roots: dict[str, tuple[float, ...]] = field(default_factory=dict)
    symmetry: Fraction = Fraction(1)

    def __post_init__(self):
        names = set(self.vertices)
        if len(names) != len(self.vertices):
            raise ValueError("duplicate vertex names")
        for a, b, lab in self.edges:
            if a not in names or b not in names:
                raise ValueError(f"edge ({a}, {b}) uses an unknown vertex")
        seen = set()
        for legs, order in self.cumulants:
            if len(legs) != order:
                raise ValueError("cumulant order must equal its number of legs")
            for v in legs:
                if v not in names or v in seen or v in self.roots:
                    raise ValueError(f"invalid cumulant leg {v!r}")
                seen.add(v)
        self.symmetry = Fraction(self.symmetry)

    @property
    def leg_of(self) -> dict[str, int]:
        return {v: j for j, (legs, _) in enumerate(self.cumulants) for v in legs}

    @property
    def free_vertices(self) -> list[str]:
        legs = self.leg_of
        return [v for v in self.vertices if v not in self.roots and v not in legs]

    @classmethod
    def from_dict(cls, data: Mapping) -> GraphSpec:
        roots_raw = data.get("roots", {})
        if isinstance(roots_raw, list):
            roots_raw = {r: None for r in roots_raw}
        vertices = list(data["vertices"])
        edges = [(e["from"], e["to"], e.get("label", "K")) for e in data.get("edges", [])]
        cumulants = [(tuple(c["verts"]), int(c.get("order", len(c["verts"])))) for c in data.get("cumulants", [])]
        return cls(vertices=vertices, edges=edges, cumulants=cumulants,
                   roots={k: (tuple(v) if v is not None else None) for k, v in roots_raw.items()},
                   symmetry=Fraction(str(data.get("symmetry", 1))))

    @classmethod
    def from_json(cls, text: str) -> GraphSpec:
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {
            "vertices": list(self.vertices),
            "edges": [{"from": a, "to": b, "label": lab} for a, b, lab in self.edges],
            "cumulants": [{"verts": list(legs), "order": order} for legs, order in self.cumulants],
            "roots": {k: (list(v) if v is not None else None) for k, v in self.roots.items()},
            "symmetry": str(self.symmetry),
        }


def power_count(g: GraphSpec, d: int, kernel_degree: float | None = None) -> dict:
    """Superficial degree of divergence of a graph in the white-noise limit.

    Each cumulant collapses to one integration point; each kernel edge scales
    like ``|z|^{-d}``.  Shot-noise cumulants of order ``p`` carry a further
    factor ``eps^{D(p/2-1)}``, reported separately.
    """
    D = d + 2
    deg = d if kernel_degree is None else kernel_degree
    n_vars = len(g.free_vertices) + len(g.cumulants)
    n_edges = sum(1 for a, b, lab in g.edges if not (a in g.roots and b in g.roots))
    omega = D * n_vars - deg * n_edges
    shot = sum(D * (p / 2 - 1) for _, p in g.cumulants)
    if omega > 0:
        kind = "finite"
    elif omega == 0:
        kind = "log"
    else:
        kind = "power"
    return {"omega": omega, "shot_prefactor": shot, "kind": kind,
            "expected_exponent": min(omega, 0) + shot}


class GraphResult(tuple):
    """``(value, stderr)`` with extra diagnostics as attributes."""

    def __new__(cls, value, stderr, samples, power):
        obj = super().__new__(cls, (value, stderr))
        obj.value, obj.stderr, obj.samples, obj.power = value, stderr, samples, power
        return obj


@dataclass(frozen=True)
class _Shell:
    """Radial power law ``|y|_s^{-alpha}`` restricted to ``r0 <= |y|_s <= r1``."""

    alpha: float
    r0: float
    r1: float
    weight: float

    def log_norm(self, D: int, d: int) -> float:
        volume = 2.0 ** (d + 1)  # volume of the unit box ball
        e = D - self.alpha
        if abs(e) < 1e-12:
            radial = math.log(self.r1 / self.r0)
        else:
            radial = (self.r1**e - self.r0**e) / e
        return math.log(volume * D * radial)

    def sample_radius(self, u: np.ndarray, D: int) -> np.ndarray:
        e = D - self.alpha
        if abs(e) < 1e-12:
            return self.r0 * (self.r1 / self.r0) ** u
        return (self.r0**e + u * (self.r1**e - self.r0**e)) ** (1.0 / e)


def _proposal(d: int, radius: float, alpha: float, eps: float) -> list[_Shell]:
    """Mixture matched to kernels singular like ``|y|^{-d}`` and smoothed at scale ``eps``."""
    D = d + 2
    core = min(2.0 * eps, radius)
    shells = [_Shell(alpha, 0.0, radius, 1.0)]
    if core < radius:
        shells = [_Shell(alpha, 0.0, radius, 1 / 3), _Shell(alpha, 0.0, core, 1 / 3), _Shell(float(D), core, radius, 1 / 3)]
    return shells


def _shell_sample(shells, n, rng, d):
    D = d + 2
    p = rng.uniform(-1, 1, (n, d + 1))
    rho = np.maximum(parabolic_norm(p[:, 0], p[:, 1:]), 1e-300)
    which = rng.choice(len(shells), size=n, p=[s.weight for s in shells])
    u = rng.uniform(0, 1, n)
    r = np.empty(n)
    for i, sh in enumerate(shells):
        sel = which == i
        r[sel] = sh.sample_radius(u[sel], D)
    f = r / rho
    p[:, 0] *= f**2
    p[:, 1:] *= f[:, None]
    return p


def _shell_logdensity(shells, y, d):
    D = d + 2
    rho = parabolic_norm(y[:, 0], y[:, 1:])
    total = np.zeros(len(y))
    with np.errstate(divide="ignore", invalid="ignore"):
        logr = np.log(rho)
        for sh in shells:
            inside = (rho >= sh.r0) & (rho <= sh.r1)
            dens = np.where(inside, np.exp(math.log(sh.weight) - sh.alpha * logr - sh.log_norm(D, d)), 0.0)
            total += dens
        return np.log(total)


def _plan(g: GraphSpec):
    """Order the integration variables so each has an anchor among earlier ones."""
    legs = g.leg_of
    owner = {}
    for v in g.vertices:
        if v in g.roots:
            owner[v] = ("root", v)
        elif v in legs:
            owner[v] = ("cum", legs[v])
        else:
            owner[v] = ("free", v)
    variables = [("free", v) for v in g.free_vertices] + [("cum", j) for j in range(len(g.cumulants))]
    known = {("root", r) for r in g.roots}
    order = []
    remaining = list(variables)
    while remaining:
        progress = False
        for var in list(remaining):
            anchors = []
            for e, (a, b, lab) in enumerate(g.edges):
                oa, ob = owner[a], owner[b]
                if ob == var and oa in known and oa != var:
                    anchors.append((e, "to"))
                elif oa == var and ob in known and ob != var:
                    anchors.append((e, "from"))
            if anchors:
                order.append((var, anchors))
                known.add(var)
                remaining.remove(var)
                progress = True
        if not progress:
            raise NonIntegrable(
                "graph has a connected component without a root: the integral is translation invariant"
            )
    return owner, order


def _edge_kernel(label: str, spec: KernelSpec, kernels: Mapping[str, Callable] | None):
    if kernels and label in kernels:
        return kernels[label]
    if label in ("K", "K_eps"):
        return spec.K
    if label == "absK":
        return lambda t, x: np.abs(spec.K(t, x))
    if label == "heat":
        def windowed(t, x):
            val = heat_kernel(spec.d, t, x)
            return np.where(parabolic_norm(t, x) <= spec.R, val, 0.0)
        return windowed
    raise ValueError(f"unknown edge label {label!r}")


def graph_integral(
    g: GraphSpec,
    eps: float,
    mc_samples: int = 100_000,
    seed: int = 0,
    *,
    spec: KernelSpec | None = None,
    noise: Noise | None = None,
    kernels: Mapping[str, Callable] | None = None,
    radius: float | None = None,
    alpha: float | None = None,
    batch: int = 1 << 16,
    check_tails: bool = True,
) -> GraphResult:
    """Importance-sampled Monte-Carlo estimate of a graph integral.

    Parameters
    ----------
    g : GraphSpec
        The graph.  Edge labels: ``K`` (truncated kernel), ``K_eps``
        (``K * rho_eps``, sampled through an extra mollifier variable),
        ``absK``, ``heat`` (heat kernel windowed to the support radius), or
        any key of ``kernels``.
    eps : float
        Mollification scale of the noise and of ``K_eps`` edges.
    mc_samples : int
        Total number of samples.
    seed : int
        Seed; each batch draws from an independent child stream.
    spec : KernelSpec, optional
        Kernel decomposition; defaults to ``split_kernel(3)``.
    noise : Noise, optional
        Cumulant model (default mollified Gaussian).
    kernels : mapping, optional
        Extra edge kernels ``label -> f(t, x)``; each must vanish outside the
        parabolic box of radius ``radius``.
    radius : float, optional
        Support radius of the proposals (default the kernel support radius).
    alpha : float, optional
        Power-law exponent of the proposals (default ``d``).

    Returns
    -------
    GraphResult
        ``(value, stderr)``.

    Raises
    ------
    NonIntegrable
        When a component has no root, or when the sample variance keeps
        growing as the sample size doubles.
    """
    spec = spec or split_kernel(3)
    noise = noise or Noise("gaussian")
    d = spec.d
    D = d + 2
    radius = spec.support_radius if radius is None else radius
    alpha = float(d) if alpha is None else alpha
    if not 0 < alpha < D:
        raise ValueError("alpha must lie in (0, d+2)")
    owner, order = _plan(g)
    rho = Mollifier(d)
    shells = _proposal(d, radius, alpha, eps)
    edge_fns = [_edge_kernel(lab, spec, kernels) for _, _, lab in g.edges]
    pref = float(g.symmetry)
    for _, p in g.cumulants:
        pref *= noise.prefactor(p, eps, D)
    roots = {}
    for r, pos in g.roots.items():
        roots[r] = np.zeros(d + 1) if pos is None else np.asarray(pos, dtype=float).reshape(d + 1)

    n_batches = max(1, -(-mc_samples // batch))
    children = np.random.SeedSequence(seed).spawn(n_batches)
    chunks = []
    left = mc_samples
    for child in children:
        m = min(batch, left)
        left -= m
        rng = np.random.default_rng(child)
        chunks.append(_graph_batch(g, owner, order, edge_fns, roots, rho, noise, eps, m, rng, d, shells))
    w = np.concatenate(chunks) * pref
    n = len(w)
    value = float(w.mean())
    stderr = float(w.std(ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
    if check_tails and n >= 4096:
        _check_tails(w)
    return GraphResult(value, stderr, n, power_count(g, d))


def _check_tails(w: np.ndarray) -> None:
    """Raise when the second moment keeps growing with the sample size."""
    n = len(w)
    marks = [n // 8, n // 4, n // 2, n]
    var = [float(np.var(w[:m])) for m in marks]
    ratios = [b / a if a > 0 else np.inf for a, b in zip(var[:-1], var[1:])]
    biggest = float(np.max(np.abs(w)))
    total = float(np.sum(np.abs(w)))
    if all(r > 1.5 for r in ratios) or (total > 0 and biggest > 0.5 * total):
        raise NonIntegrable(
            f"sample variance grows with sample size (ratios {', '.join(f'{r:.2f}' for r in ratios)})"
        )


def _graph_batch(g, owner, order, edge_fns, roots, rho, noise, eps, m, rng, d, shells):
    nc = d + 1
    pos_of_var = {("root", r): np.broadcast_to(p, (m, nc)) for r, p in roots.items()}
    leg_off = {}
    for legs, _ in g.cumulants:
        for v in legs:
            leg_off[v] = np.zeros((m, nc)) if noise.kind == "white" else rho.sample(m, rng, eps)
    edge_off = [rho.sample(m, rng, eps) if lab == "K_eps" else None for _, _, lab in g.edges]

    def offset(v):
        return leg_off.get(v)

    def position(v):
        base = pos_of_var[owner[v]]
        off = offset(v)
        return base if off is None else base + off

    logq = np.zeros(m)
    for var, anchors in order:
        centres = []
        for e, side in anchors:
            a, b, _ = g.edges[e]
            shift = edge_off[e]
            if side == "to":  # z_b - z_a - s = 0 with b owned by var
                c = position(a) - (offset(b) if offset(b) is not None else 0.0)
                if shift is not None:
                    c = c + shift
            else:  # a owned by var: z_a = z_b - s
                c = position(b) - (offset(a) if offset(a) is not None else 0.0)
                if shift is not None:
                    c = c - shift
            centres.append(np.broadcast_to(c, (m, nc)))
        k = len(centres)
        pick = rng.integers(0, k, m)
        stacked = np.stack(centres)
        chosen = stacked[pick, np.arange(m)]
        value = chosen + _shell_sample(shells, m, rng, d)
        logs = np.stack([_shell_logdensity(shells, value - c, d) for c in centres])
        top = np.max(logs, axis=0)
        logq += top + np.log(np.mean(np.exp(logs - top), axis=0))
        pos_of_var[var] = value

    weight = np.exp(-logq)
    for e, (a, b, _) in enumerate(g.edges):
        diff = position(b) - position(a)
        if edge_off[e] is not None:
            diff = diff - edge_off[e]
        weight = weight * edge_fns[e](diff[:, 0], diff[:, 1:])
    return weight


# ---------------------------------------------------------------------------
# renormalisation constants as graphs


def _two_bubble_chain(n_bubbles: int) -> GraphSpec:
    vertices = ["r", "m"]
    edges = [("m", "r", "K")]
    cumulants = []
    for j in range(n_bubbles):
        a, b = f"a{j}", f"b{j}"
        vertices += [a, b]
        edges += [(a, "r", "K"), (b, "m", "K")]
        cumulants.append(((a, b), 2))
    return GraphSpec(vertices, edges, cumulants, roots={"r": None})


def graph_C1() -> GraphSpec:
    """``int K_eps^2``: two legs of one second cumulant attached to the root."""
    return GraphSpec(["r", "a", "b"], [("a", "r", "K"), ("b", "r", "K")], [(("a", "b"), 2)], roots={"r": None})


def graph_C2() -> GraphSpec:
    """Third-cumulant graph: three legs attached to the root."""
    return GraphSpec(["r", "a", "b", "c"], [("a", "r", "K"), ("b", "r", "K"), ("c", "r", "K")],
                     [(("a", "b", "c"), 3)], roots={"r": None})


def graph_sunset() -> GraphSpec:
    """Two second cumulants between root and an inner vertex, plus the inner edge."""
    return _two_bubble_chain(2)


def graph_C3_cumulant4() -> GraphSpec:
    """Fourth cumulant with two legs to the root, two to the inner vertex."""
    return GraphSpec(["r", "m", "a", "b", "c", "e"],
                     [("m", "r", "K"), ("a", "r", "K"), ("b", "r", "K"), ("c", "m", "K"), ("e", "m", "K")],
                     [(("a", "b", "c", "e"), 4)], roots={"r": None})


def graph_C4_cumulant5() -> GraphSpec:
    legs = ("a", "b", "c", "e", "f")
    edges = [("m", "r", "K"), ("a", "r", "K"), ("b", "r", "K"), ("c", "m", "K"), ("e", "m", "K"), ("f", "m", "K")]
    return GraphSpec(["r", "m", *legs], edges, [(legs, 5)], roots={"r": None})


def graph_C4_mixed() -> GraphSpec:
    edges = [("m", "r", "K"), ("a", "r", "K"), ("b", "m", "K"), ("c", "r", "K"), ("e", "m", "K"), ("f", "m", "K")]
    return GraphSpec(["r", "m", "a", "b", "c", "e", "f"], edges,
                     [(("a", "b"), 2), (("c", "e", "f"), 3)], roots={"r": None})


def graph_C5() -> GraphSpec:
    edges = [("m", "r", "K"), ("a", "r", "K"), ("b", "m", "K"), ("c", "m", "K"), ("e", "m", "K")]
    return GraphSpec(["r", "m", "a", "b", "c", "e"], edges, [(("a", "b", "c", "e"), 4)], roots={"r": None})


def graph_bubbles(n: int) -> GraphSpec:
    """``n`` second cumulants between root and inner vertex plus the inner edge."""
    return _two_bubble_chain(n)


def _scaled(res: GraphResult, factor: float) -> GraphResult:
    return GraphResult(res.value * factor, res.stderr * abs(factor), res.samples, res.power)


def _combine(*parts: GraphResult) -> GraphResult:
    value = sum(p.value for p in parts)
    stderr = math.sqrt(sum(p.stderr**2 for p in parts))
    return GraphResult(value, stderr, sum(p.samples for p in parts), parts[0].power)


def constants_kernel(d: int = 3) -> KernelSpec:
    """Truncated heat kernel ``chi P`` without the moment correction.

    The correction ``B0`` is smooth, so it changes the finite part of each
    constant but not its divergence; the plain truncation reaches the
    asymptotic regime at larger ``eps``.
    """
    return split_kernel(d, N=-1)


def constant_C1(eps: float, samples: int = 200_000, seed: int = 0, spec: KernelSpec | None = None,
                noise: Noise | None = None) -> GraphResult:
    """Bubble constant ``int K_eps^2``; diverges like ``1/eps`` in d = 3."""
    return graph_integral(graph_C1(), eps, samples, seed, spec=spec or constants_kernel(), noise=noise)


def constant_C3(eps: float, samples: int = 200_000, seed: int = 0, spec: KernelSpec | None = None) -> GraphResult:
    """Gaussian sunset constant (factor 2); logarithmically divergent in d = 3."""
    g = graph_sunset()
    g.symmetry = Fraction(2)
    return graph_integral(g, eps, samples, seed, spec=spec or constants_kernel(), noise=Noise("gaussian"))


def constants_nonGaussian(eps: float, noise: Noise | None = None, samples: int = 200_000, seed: int = 0,
                          spec: KernelSpec | None = None) -> dict[str, GraphResult]:
    """``C1 ... C5`` for shot noise with third, fourth and fifth cumulants."""
    noise = noise or Noise("shot")
    spec = spec or constants_kernel()
    run = lambda g, s: graph_integral(g, eps, samples, seed + s, spec=spec, noise=noise)
    sunset = graph_sunset()
    sunset.symmetry = Fraction(2)
    mixed = graph_C4_mixed()
    mixed.symmetry = Fraction(6)
    return {
        "C1": run(graph_C1(), 1),
        "C2": run(graph_C2(), 2),
        "C3": _combine(run(sunset, 3), run(graph_C3_cumulant4(), 4)),
        "C4": _combine(run(graph_C4_cumulant5(), 5), run(mixed, 6)),
        "C5": run(graph_C5(), 7),
    }


def constants_extended(eps: float, c: float = 1.0, samples: int = 200_000, seed: int = 0,
                       spec: KernelSpec | None = None) -> dict[str, GraphResult]:
    """Constants of the quintic-perturbed equation: ``C~1``, ``C~2``, ``c C~3``, ``c^2 C~4``."""
    noise = Noise("gaussian")
    spec = spec or constants_kernel()
    run = lambda g, s: graph_integral(g, eps, samples, seed + s, spec=spec, noise=noise)
    sunset = graph_sunset()
    sunset.symmetry = Fraction(2)
    return {
        "Ct1": run(graph_C1(), 1),
        "Ct2": run(sunset, 2),
        "Ct3": _scaled(run(graph_bubbles(3), 3), c * 6 * eps),
        "Ct4": _scaled(run(graph_bubbles(4), 4), c**2 * 24 * eps**2),
    }


# ---------------------------------------------------------------------------
# exponent fits


class ExponentFit(NamedTuple):
    exponent: float
    stderr: float
    prefactor: float
    offset: float


def fit_exponent(eps: Sequence[float], values: Sequence[float], stderr: Sequence[float] | None = None,
                 offset: bool = False) -> ExponentFit:
    """Fit ``value ~ a eps^p`` (or ``a eps^p + b`` when ``offset``) and return ``p``.

    Without offset this is the weighted least-squares slope of ``log|value|``
    against ``log eps``.  With offset a finite remainder ``b`` is fitted
    jointly, which isolates the divergent part when the remainder is not
    negligible at the sampled scales.  Standard errors use the supplied
    Monte-Carlo errors, inflated by the reduced chi-square when it exceeds one.
    """
    e = np.asarray(eps, dtype=float)
    v = np.asarray(values, dtype=float)
    s = None if stderr is None else np.maximum(np.asarray(stderr, dtype=float), 1e-300)
    x, y = np.log(e), np.log(np.abs(v))
    w = np.ones_like(y) if s is None else np.abs(v) / s
    A = np.stack([x, np.ones_like(x)], axis=1) * w[:, None]
    coef, *_ = np.linalg.lstsq(A, y * w, rcond=None)
    cov = np.linalg.inv(A.T @ A)
    dof = len(x) - 2
    if dof > 0:
        chi2 = float(np.sum((A @ coef - y * w) ** 2)) / dof
        cov = cov * (chi2 if s is None else max(chi2, 1.0))
    slope, icept = float(coef[0]), float(coef[1])
    if not offset:
        return ExponentFit(slope, float(math.sqrt(cov[0, 0])), float(math.copysign(math.exp(icept), v[-1])), 0.0)
    model = lambda ee, a, p, b: a * ee**p + b
    popt, pcov = curve_fit(model, e, v, p0=[v[-1] * e[-1] ** (-slope), slope, 0.0], sigma=s,
                           absolute_sigma=s is not None, maxfev=20000)
    return ExponentFit(float(popt[1]), float(math.sqrt(max(pcov[1, 1], 0.0))), float(popt[0]), float(popt[2]))


_DIVERGENCE_CLASSES = {"-3/2": -1.5, "-1": -1.0, "-1/2": -0.5}


def classify_divergence(eps: Sequence[float], values: Sequence[float], stderr: Sequence[float]) -> str:
    """Classify a sequence as ``-3/2``, ``-1``, ``-1/2`` power, ``log`` or ``finite``.

    Each candidate model ``a eps^p``, ``a + b log eps`` and ``a`` is fitted by
    weighted least squares; the smallest chi-square wins, with one extra
    parameter charged at ``log(n)`` (BIC).
    """
    e = np.asarray(eps, dtype=float)
    v = np.asarray(values, dtype=float)
    s = np.maximum(np.asarray(stderr, dtype=float), 1e-300)
    n = len(e)
    scores = {}
    for name, p in _DIVERGENCE_CLASSES.items():
        basis = e**p
        a = np.sum(basis * v / s**2) / np.sum(basis**2 / s**2)
        scores[name] = float(np.sum(((v - a * basis) / s) ** 2)) + math.log(n)
    A = np.stack([np.ones(n), np.log(e)], axis=1) / s[:, None]
    coef, *_ = np.linalg.lstsq(A, v / s, rcond=None)
    scores["log"] = float(np.sum((A @ coef - v / s) ** 2)) + 2 * math.log(n)
    a = np.sum(v / s**2) / np.sum(1 / s**2)
    scores["finite"] = float(np.sum(((v - a) / s) ** 2)) + math.log(n)
    return min(scores, key=scores.get)


# ---------------------------------------------------------------------------
# renormalised distributions


def renormalize_kernel_distribution(W: Callable, phi: Callable, domain=(-1.0, 1.0), tol: float = 1e-9) -> float:
    """``(R W)(phi) = int W(x) (phi(x) - phi(0)) dx`` over a one-dimensional domain.

    Raises
    ------
    QuadratureFailure
        If the adaptive quadrature error estimate exceeds ``tol`` (relative).
    """
    lo, hi = domain
    phi0 = float(phi(0.0))
    f = lambda x: float(W(x)) * (float(phi(x)) - phi0) if x != 0 else 0.0
    total, err = 0.0, 0.0
    for a, b in ((lo, 0.0), (0.0, hi)):
        if b <= a:
            continue
        val, e = integrate.quad(f, a, b, limit=400, epsabs=tol, epsrel=tol)
        total += val
        err += e
    if err > max(tol * max(abs(total), 1.0), 1e-7):
        raise QuadratureFailure(f"error estimate {err:g} too large")
    return total


def delta_subtracted_pairing(W: Callable, phi: Callable, domain=(-1.0, 1.0)) -> float:
    """``int W phi - (int W) phi(0)`` for integrable ``W``; equals ``(R W)(phi)``."""
    lo, hi = domain
    integral_w = integrate.quad(lambda x: float(W(x)), lo, hi, points=[0.0], limit=400)[0]
    pairing = integrate.quad(lambda x: float(W(x)) * float(phi(x)), lo, hi, points=[0.0], limit=400)[0]
    return pairing - integral_w * float(phi(0.0))


# ---------------------------------------------------------------------------
# collapse scaling


def collapse_graph(n: int, spacing: float = 0.12) -> GraphSpec:
    """``|K|`` edges from ``n`` fixed distinct points into one order-``n`` cumulant."""
    if n < 2:
        raise ValueError("n must be at least 2")
    vertices, edges, roots, legs = [], [], {}, []
    for i in range(n):
        angle = 2 * math.pi * i / n
        z = (0.02 * i, spacing * math.cos(angle), spacing * math.sin(angle), 0.0)
        r, a = f"z{i}", f"l{i}"
        vertices += [r, a]
        roots[r] = z
        legs.append(a)
        edges.append((a, r, "absK"))
    return GraphSpec(vertices, edges, [(tuple(legs), n)], roots=roots)


def collapse_scaling_check(n: int, eps_list: Sequence[float] = (0.2, 0.1, 0.05, 0.025), samples: int = 200_000,
                           seed: int = 0, spec: KernelSpec | None = None) -> dict:
    """Fit the eps-exponent of ``int prod |K(z_i - zbar_i)| |kappa_n^eps| dzbar`` at fixed ``z_i``.

    Returns a dict with the fitted ``exponent``, its ``stderr``, the expected
    ``5 (n/2 - 1)`` and the raw estimates.
    """
    spec = spec or constants_kernel()
    g = collapse_graph(n)
    vals, errs = [], []
    for i, e in enumerate(eps_list):
        v, s = graph_integral(g, e, samples, seed + i, spec=spec, noise=Noise("shot"))
        vals.append(v)
        errs.append(s)
    slope, se, _, _ = fit_exponent(eps_list, vals, errs)
    return {"n": n, "exponent": slope, "stderr": se, "expected": 5 * (n / 2 - 1),
            "eps": list(eps_list), "values": vals, "errors": errs}
