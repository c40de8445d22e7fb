"""Semi-implicit spectral integrator for renormalised Phi^4-type equations.

The scheme on the torus ``(R/LZ)^d`` is

    u_{n+1} = exp(dt Laplacian) (u_n + dt (F(u_n) + eta_n)),

with the Laplacian diagonal in Fourier space and ``F`` a polynomial drift.
``eta_n`` is the cell average of the noise over step ``n``; white noise has
variance ``1 / (dt dx^d)`` per cell and mollified noise is a space-time
convolution of it with ``rho_eps``.  The scheme is first order in ``dt``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import fft as sfft

from ._backend import njit, select
from .kernels import NonIntegrable, _bump, _gl

__all__ = [
    "BlowUp",
    "StabilityViolation",
    "Potential",
    "EquationSpec",
    "Trajectory",
    "integrate",
    "white_noise",
    "lattice_constants",
    "effective_potential",
    "hermite_deconvolve",
    "defcc_constant",
    "ensemble_converge",
    "ConvergenceTable",
]

BLOWUP_THRESHOLD = 1e6


class BlowUp(RuntimeError):
    """The sup norm crossed the blow-up threshold at time ``t``."""

    def __init__(self, t: float, norm: float):
        super().__init__(f"sup norm {norm:.3g} exceeded {BLOWUP_THRESHOLD:g} at t = {t:.6g}")
        self.t = t
        self.norm = norm


class StabilityViolation(ValueError):
    """The time step exceeds the bound of the semi-implicit scheme."""


# ---------------------------------------------------------------------------
# drifts


def _hermite_values(u: np.ndarray, c: float, n_max: int) -> list:
    """``H_0 .. H_{n_max}`` with variance ``c`` via ``H_{n+1} = x H_n - n c H_{n-1}``."""
    out = [np.ones_like(u), u]
    for n in range(1, n_max):
        out.append(u * out[n] - n * c * out[n - 1])
    return out


@njit
def _horner_numba(u, coeffs):
    out = np.empty_like(u)
    flat_u = u.ravel()
    flat_o = out.ravel()
    m = coeffs.shape[0]
    for i in range(flat_u.shape[0]):
        x = flat_u[i]
        acc = 0.0
        for j in range(m - 1, -1, -1):
            acc = acc * x + coeffs[j]
        flat_o[i] = acc
    return out


def _horner_numpy(u, coeffs):
    acc = np.zeros_like(u)
    for c in coeffs[::-1]:
        acc = acc * u + c
    return acc


def horner(u: np.ndarray, coeffs, backend: str | None = None) -> np.ndarray:
    """``sum_j coeffs[j] u^j`` elementwise."""
    fn = select(_horner_numba, _horner_numpy, backend)
    return fn(np.ascontiguousarray(u, dtype=float), np.asarray(coeffs, dtype=float))


@dataclass(frozen=True)
class Potential:
    """Polynomial drift ``F(u)`` (minus the derivative of the potential).

    Use the constructors: :meth:`cubic` for ``mass u - u^3``, :meth:`hermite`
    for ``linear u - H_3(u, c) - a eps H_5(u, c)`` and :meth:`polynomial` for
    explicit ascending coefficients.
    """

    kind: str
    mass: float = 0.0
    variance: float = 0.0
    a: float = 0.0
    eps: float = 0.0
    linear: float = 0.0
    coefficients: tuple = ()

    @classmethod
    def cubic(cls, mass: float = 0.0) -> "Potential":
        return cls("cubic", mass=float(mass))

    @classmethod
    def hermite(cls, variance: float, a: float, eps: float, linear: float = 0.0) -> "Potential":
        return cls("hermite", variance=float(variance), a=float(a), eps=float(eps), linear=float(linear))

    @classmethod
    def polynomial(cls, coefficients: Sequence[float]) -> "Potential":
        return cls("polynomial", coefficients=tuple(float(c) for c in coefficients))

    @classmethod
    def from_dict(cls, data: Mapping) -> "Potential":
        data = dict(data)
        kind = data.pop("kind")
        if "coefficients" in data:
            data["coefficients"] = tuple(data["coefficients"])
        return cls(kind, **data)

    def expanded(self) -> tuple:
        """Ascending coefficients of ``F``."""
        if self.kind == "cubic":
            return (0.0, self.mass, 0.0, -1.0)
        if self.kind == "hermite":
            c, ae = self.variance, self.a * self.eps
            return (0.0, self.linear + 3 * c - 15 * ae * c**2, 0.0, -1.0 + 10 * ae * c, 0.0, -ae)
        if self.kind == "polynomial":
            return self.coefficients
        raise ValueError(f"unknown potential kind {self.kind!r}")

    def drift(self, u: np.ndarray, backend: str | None = None) -> np.ndarray:
        """``F(u)``; the Hermite kind is evaluated through the Hermite recursion."""
        if self.kind == "hermite":
            H = _hermite_values(u, self.variance, 5)
            return self.linear * u - H[3] - self.a * self.eps * H[5]
        return horner(u, self.expanded(), backend)

    def check_dissipative(self) -> None:
        coeffs = list(self.expanded())
        while coeffs and coeffs[-1] == 0:
            coeffs.pop()
        deg = len(coeffs) - 1
        if deg >= 1 and not (deg % 2 == 1 and coeffs[-1] < 0):
            raise ValueError("drift must have odd degree with a negative leading coefficient")


# ---------------------------------------------------------------------------
# specification


@dataclass
class EquationSpec:
    """Equation, discretisation and noise for :func:`integrate`.

    Parameters
    ----------
    d, n, L : spatial dimension, points per axis, period.
    dt, T : time step and horizon.
    potential : Potential
    noise : {"none", "white", "mollified"}
    eps : float, optional
        Mollification scale for ``noise="mollified"``.
    initial : float, array or dict
        Constant, grid array, or ``{"kind": "spectral", "alpha": a,
        "amplitude": s}`` for a random field with ``C^alpha``-type decay.
    saves : int
        Number of evenly spaced snapshots after the initial one.
    noise_pad : float, optional
        Time padding of the white-noise array on each side (default ``eps^2``);
        coupled ensembles fix it to the largest ``eps``.
    noise_scale : float
        Amplitude ``sigma`` multiplying the noise.
    """

    d: int = 1
    n: int = 64
    L: float = 1.0
    dt: float = 1e-4
    T: float = 0.1
    potential: Potential = field(default_factory=Potential.cubic)
    noise: str = "white"
    eps: float | None = None
    initial: object = 0.0
    saves: int = 1
    noise_pad: float | None = None
    noise_scale: float = 1.0

    @property
    def dx(self) -> float:
        return self.L / self.n

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    @property
    def cell(self) -> float:
        return self.dt * self.dx**self.d

    @property
    def pad_steps(self) -> int:
        if self.noise != "mollified":
            return 0
        pad = self.noise_pad if self.noise_pad is not None else self.eps**2
        return int(math.ceil(pad / self.dt - 1e-9))

    def stability_bound(self) -> float:
        """Largest ``dt`` allowed by the explicit linear part: ``dt |F'(0)| <= 1/2``."""
        lin = abs(self.potential.expanded()[1]) if len(self.potential.expanded()) > 1 else 0.0
        return math.inf if lin == 0 else 0.5 / lin

    def validate(self) -> None:
        if self.d < 1 or self.n < 2:
            raise ValueError("need d >= 1 and n >= 2")
        if self.dt <= 0 or self.T < 0:
            raise ValueError("dt must be positive and T non-negative")
        if not math.isclose(self.steps * self.dt, self.T, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError("T must be a multiple of dt")
        if self.noise not in ("none", "white", "mollified"):
            raise ValueError(f"unknown noise kind {self.noise!r}")
        if self.noise == "mollified":
            if self.eps is None or self.eps <= 0:
                raise ValueError("mollified noise needs eps > 0")
            if self.eps > self.L / 2:
                raise ValueError("eps exceeds half the period")
            if self.noise_pad is not None and self.noise_pad < self.eps**2:
                raise ValueError("noise_pad must cover the mollifier's time support")
        self.potential.check_dissipative()
        if self.dt > self.stability_bound():
            raise StabilityViolation(f"dt = {self.dt:g} exceeds the bound {self.stability_bound():g}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["potential"] = asdict(self.potential)
        if isinstance(self.initial, np.ndarray):
            out["initial"] = "array"
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "EquationSpec":
        data = dict(data)
        if "potential" in data and isinstance(data["potential"], Mapping):
            data["potential"] = Potential.from_dict(data["potential"])
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown spec keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class Trajectory:
    """Snapshots of a solution."""

    times: np.ndarray
    fields: list
    seed: int
    spec: EquationSpec

    @property
    def final(self) -> np.ndarray:
        return self.fields[-1]

    def save(self, directory) -> Path:
        """Flat little-endian float64 snapshots plus ``header.json``."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        files = []
        for i, f in enumerate(self.fields):
            name = f"u_{i}.bin"
            np.ascontiguousarray(f, dtype="<f8").tofile(out / name)
            files.append(name)
        header = {
            "format": "regstruct-trajectory/1",
            "shape": list(self.spec.shape),
            "dtype": "<f8",
            "order": "C",
            "spacings": {"dt": self.spec.dt, "dx": self.spec.dx},
            "times": [float(t) for t in self.times],
            "files": files,
            "seed": self.seed,
            "spec": self.spec.to_dict(),
        }
        (out / "header.json").write_text(json.dumps(header, indent=2, sort_keys=True, default=str))
        return out

    @classmethod
    def load(cls, directory) -> "Trajectory":
        src = Path(directory)
        header = json.loads((src / "header.json").read_text())
        shape = tuple(header["shape"])
        fields = [np.fromfile(src / f, dtype="<f8").reshape(shape) for f in header["files"]]
        sd = header["spec"]
        if sd.get("initial") == "array":
            sd["initial"] = 0.0
        return cls(np.array(header["times"]), fields, header["seed"], EquationSpec.from_dict(sd))


# ---------------------------------------------------------------------------
# noise


def _spatial_lags(n: int, h: float) -> np.ndarray:
    i = np.arange(n)
    return np.where(i < (n + 1) // 2, i, i - n) * h


def _rng_streams(seed: int):
    noise_ss, init_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(noise_ss), np.random.default_rng(init_ss)


def white_noise(spec: EquationSpec, seed: int) -> np.ndarray:
    """Unit-variance normals of shape ``(steps + 2 pad, n, ..., n)`` for ``seed``."""
    rng, _ = _rng_streams(seed)
    return rng.standard_normal((spec.steps + 2 * spec.pad_steps,) + spec.shape)


def mollifier_lattice(spec: EquationSpec, n_time: int, eps: float) -> np.ndarray:
    """``rho_eps`` on the periodic space-time lattice, unit mass under ``sum * cell``."""
    t = _spatial_lags(n_time, spec.dt)
    xs = _spatial_lags(spec.n, spec.dx)
    grids = np.meshgrid(*([xs] * spec.d), indexing="ij")
    r = np.sqrt(sum(g * g for g in grids))
    spatial = _bump(r / eps)
    temporal = _bump(t / eps**2)
    if spatial.sum() == 0 or temporal.sum() == 0:
        raise ValueError("mollifier is not resolved by the lattice")
    # rho is a product of bumps, so normalising the lattice sum fixes its constant
    vals = np.multiply.outer(temporal, spatial)
    return vals / (vals.sum() * spec.cell)


def _noise_increments(spec: EquationSpec, white: np.ndarray) -> np.ndarray:
    """Per-step cell-averaged noise ``eta_n`` from a unit-normal array."""
    scale = spec.noise_scale / math.sqrt(spec.cell)
    if spec.noise == "white":
        return white[: spec.steps] * scale
    rho = mollifier_lattice(spec, white.shape[0], spec.eps)
    axes = tuple(range(white.ndim))
    eta = sfft.irfftn(sfft.rfftn(white, axes=axes) * sfft.rfftn(rho, axes=axes), s=white.shape, axes=axes)
    eta *= spec.cell * scale
    pad = spec.pad_steps
    return eta[pad: pad + spec.steps]


def initial_condition(spec: EquationSpec, seed: int) -> np.ndarray:
    init = spec.initial
    if isinstance(init, np.ndarray):
        if init.shape != spec.shape:
            raise ValueError("initial array has the wrong shape")
        return init.astype(float).copy()
    if isinstance(init, Mapping):
        if init.get("kind") != "spectral":
            raise ValueError(f"unknown initial condition {init!r}")
        _, rng = _rng_streams(seed)
        alpha = float(init.get("alpha", -0.55))
        amp = float(init.get("amplitude", 1.0))
        k2 = _wavenumber_sq(spec)
        white = rng.standard_normal(spec.shape)
        decay = (1.0 + k2) ** (-(alpha + spec.d / 2) / 2)
        field_ = np.real(np.fft.ifftn(np.fft.fftn(white) * decay))
        return amp * field_
    return np.full(spec.shape, float(init))


def _wavenumber_sq(spec: EquationSpec) -> np.ndarray:
    k = 2 * np.pi * np.fft.fftfreq(spec.n, spec.dx)
    grids = np.meshgrid(*([k] * spec.d), indexing="ij")
    return sum(g * g for g in grids)


# ---------------------------------------------------------------------------
# integration


def integrate(spec: EquationSpec, seed: int = 0, white: np.ndarray | None = None,
              backend: str | None = None) -> Trajectory:
    """Solve the equation described by ``spec``.

    Parameters
    ----------
    white : ndarray, optional
        Unit-normal array from :func:`white_noise`; passing the same array for
        several ``eps`` couples the solutions through one noise realisation.

    Raises
    ------
    BlowUp
        When ``max |u|`` exceeds ``1e6``.
    StabilityViolation
        When ``dt`` exceeds :meth:`EquationSpec.stability_bound`.
    """
    spec.validate()
    u = initial_condition(spec, seed)
    steps = spec.steps
    if spec.noise == "none":
        eta = None
    else:
        if white is None:
            white = white_noise(spec, seed)
        expected = (steps + 2 * spec.pad_steps,) + spec.shape
        if white.shape != expected:
            raise ValueError(f"white noise has shape {white.shape}, expected {expected}")
        eta = _noise_increments(spec, white)
    axes = tuple(range(spec.d))
    k2 = _wavenumber_sq(spec)
    prop = np.exp(-spec.dt * k2)[..., : spec.n // 2 + 1]
    save_at = {int(round(steps * (i + 1) / spec.saves)) for i in range(spec.saves)} if spec.saves else set()
    times, fields = [0.0], [u.copy()]
    pot = spec.potential
    for step in range(steps):
        rhs = pot.drift(u, backend)
        if eta is not None:
            rhs = rhs + eta[step]
        u = sfft.irfftn(sfft.rfftn(u + spec.dt * rhs, axes=axes) * prop, s=spec.shape, axes=axes)
        norm = float(np.max(np.abs(u)))
        if not np.isfinite(norm) or norm > BLOWUP_THRESHOLD:
            raise BlowUp((step + 1) * spec.dt, norm)
        if step + 1 in save_at:
            times.append((step + 1) * spec.dt)
            fields.append(u.copy())
    return Trajectory(np.array(times), fields, seed, spec)


# ---------------------------------------------------------------------------
# renormalisation constants on the solver lattice


def lattice_constants(spec: EquationSpec, eps: float | None = None, window: float | None = None) -> dict:
    """Exact lattice values of the constants for the scheme's linear part.

    With ``Y`` the stationary solution of the linear scheme driven by the
    mollified noise times ``noise_scale`` (zero Fourier mode removed), ``Q(z) = E Y(0) Y(z)`` and
    ``K`` the discrete propagator, returns

    * ``Ct1 = Q(0)``,
    * ``Ct2 = 2 sum K Q^2 cell`` (sunset),
    * ``Ct3 = 6 eps sum K Q^3 cell`` and ``Ct4 = 24 eps^2 sum K Q^4 cell``.

    The sums run over a periodic time window long enough for the slowest
    mode to decay (``exp(-20)``).
    """
    eps = spec.eps if eps is None else eps
    s = replace(spec, eps=eps, noise="mollified")
    kmin2 = (2 * np.pi / spec.L) ** 2
    window = window or (20.0 / kmin2 + 4 * eps**2)
    n_time = int(math.ceil(window / spec.dt))
    n_time += n_time % 2
    rho = mollifier_lattice(s, n_time, eps)
    rho_hat = np.fft.fftn(rho)
    del rho
    k2 = _wavenumber_sq(spec)
    a = np.exp(-k2 * spec.dt)
    theta = 2 * np.pi * np.fft.fftfreq(n_time)
    z = np.exp(-1j * theta).reshape((-1,) + (1,) * spec.d)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = spec.dt * a * z / (1.0 - a * z)
    zero = (slice(None),) + (0,) * spec.d
    g[zero] = 0.0
    cell = spec.cell
    Q = spec.noise_scale**2 * cell * np.real(np.fft.ifftn(np.abs(g * rho_hat) ** 2))
    del rho_hat
    K = np.real(np.fft.ifftn(g)) / cell
    out = {"Ct1": float(Q.flat[0])}
    out["Ct2"] = float(2 * np.sum(K * Q**2) * cell)
    out["Ct3"] = float(6 * eps * np.sum(K * Q**3) * cell)
    out["Ct4"] = float(24 * eps**2 * np.sum(K * Q**4) * cell)
    return out


# ---------------------------------------------------------------------------
# effective potentials


def _double_factorial(n: int) -> int:
    return math.prod(range(n, 0, -2)) if n > 0 else 1


def effective_potential(V: Sequence[float], C: float) -> list:
    """Ascending coefficients of ``<V>(x) = E V(x + sqrt(C) Z)``, ``Z ~ N(0, 1)``."""
    out = [0.0] * len(V)
    for n, v in enumerate(V):
        for j in range(0, n + 1, 2):
            out[n - j] += v * math.comb(n, j) * C ** (j // 2) * _double_factorial(j - 1)
    return out


def hermite_deconvolve(W: Sequence[float], C: float) -> list:
    """Inverse of :func:`effective_potential`: replaces ``x^n`` by ``H_n(x, C)``."""
    out = [0.0] * len(W)
    for n, w in enumerate(W):
        for j in range(0, n + 1, 2):
            out[n - j] += w * math.comb(n, j) * (-C) ** (j // 2) * _double_factorial(j - 1)
    return out


def derivative_form(V: Sequence[float]) -> list:
    """Ascending coefficients of ``-V'``."""
    return [-(n * v) for n, v in enumerate(V)][1:]


def _time_autocorrelation(nodes: int = 400):
    """Autocorrelation of the normalised time profile, tabulated on ``[0, 2]``."""
    s = np.linspace(-1, 1, 2 * nodes + 1)
    h = s[1] - s[0]
    p = _bump(s)
    p /= p.sum() * h
    A = np.correlate(p, p, mode="full") * h
    lags = (np.arange(A.size) - (A.size - 1) / 2) * h
    keep = lags >= 0
    return lags[keep], A[keep], h


def _space_transform(d: int, k: np.ndarray) -> np.ndarray:
    """Fourier transform of the normalised radial bump at ``|k|``."""
    from scipy.special import j0

    r, w = _gl(0.0, 1.0, 80, 4)
    area = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
    base = w * r ** (d - 1) * _bump(r) * area
    base /= base.sum()
    u = np.outer(k, r)
    if d == 1:
        S = np.cos(u)
    elif d == 2:
        S = j0(u)
    elif d == 3:
        S = np.sinc(u / np.pi)
    else:
        raise ValueError("d must be 1, 2 or 3")
    return S @ base


def defcc_constant(d: int = 3, k_min: Sequence[float] = (1e-2, 1e-3, 1e-4), k_max: float = 400.0,
                   rtol: float = 0.05) -> float:
    """``||rho * P||_{L^2}^2`` on the whole space at ``eps = 1``.

    The integral is written in Fourier variables,
    ``int dk/(2 pi)^d |rho_x(k)|^2 int ds A(s) exp(-k^2 |s|) / (2 k^2)`` with
    ``A`` the time autocorrelation, and evaluated with an infrared cutoff
    ``k_min``.  If shrinking the cutoff keeps adding comparable amounts the
    integral is declared divergent.

    Raises
    ------
    NonIntegrable
        When the infrared tail does not converge (``d <= 2``).
    """
    lags, A, h = _time_autocorrelation()
    w_s = np.full(lags.size, 2 * h)
    w_s[0] = h
    area = 2 * math.pi ** (d / 2) / math.gamma(d / 2)

    def piece(lo: float, hi: float) -> float:
        y, wy = _gl(math.log(lo), math.log(hi), 40, 16)
        k = np.exp(y)
        wk = wy * k
        time_part = (np.exp(-np.outer(k * k, lags)) @ (A * w_s)) / (2 * k * k)
        spatial = _space_transform(d, k) ** 2
        return float(np.sum(wk * area * k ** (d - 1) * spatial * time_part) / (2 * np.pi) ** d)

    cuts = sorted(k_min, reverse=True)
    total = piece(cuts[0], k_max)
    tails = []
    for hi, lo in zip(cuts[:-1], cuts[1:]):
        t = piece(lo, hi)
        tails.append(t)
        total += t
    if len(tails) >= 2 and tails[-1] > rtol * total and tails[-1] > 0.5 * tails[-2]:
        raise NonIntegrable(f"infrared tail does not converge in d = {d}: increments {tails}")
    return total


# ---------------------------------------------------------------------------
# ensembles


OBSERVABLES: dict[str, Callable] = {}


def observable(name: str):
    def register(fn):
        OBSERVABLES[name] = fn
        return fn

    return register


@observable("mean")
def _obs_mean(traj: Trajectory) -> float:
    return float(np.mean(traj.final))


@observable("time-mean")
def _obs_time_mean(traj: Trajectory) -> float:
    """Spatial mean averaged over the snapshots with ``t >= T/2``."""
    keep = traj.times >= 0.5 * traj.spec.T - 1e-12
    return float(np.mean([np.mean(f) for f, k in zip(traj.fields, keep) if k]))


@observable("pairing")
def _obs_pairing(traj: Trajectory) -> float:
    """``(u(T), psi)`` with ``psi(x) = prod_i (1 + cos(2 pi x_i / L))``."""
    spec = traj.spec
    x = np.arange(spec.n) * spec.dx
    psi1 = 1.0 + np.cos(2 * np.pi * x / spec.L)
    psi = psi1
    for _ in range(spec.d - 1):
        psi = np.multiply.outer(psi, psi1)
    return float(np.sum(traj.final * psi) * spec.dx**spec.d)


@observable("l2")
def _obs_l2(traj: Trajectory) -> float:
    return float(np.sqrt(np.sum(traj.final**2) * traj.spec.dx**traj.spec.d))


@dataclass
class ConvergenceTable:
    """Per-``eps`` observable statistics and pairwise differences.

    ``differences[i]`` compares ``eps[i]`` with ``eps[i+1]``: mean and
    standard error of ``|O_i - O_{i+1}|`` over samples (same-noise coupling)
    or of the difference of means (independent coupling).
    """

    eps: list
    means: list
    stderrs: list
    differences: list
    difference_errors: list
    trend: float
    trend_error: float
    verdict: str
    blowups: list
    samples: int
    label: str = ""

    def rows(self) -> list[dict]:
        out = []
        for i, e in enumerate(self.eps):
            row = {"eps": e, "mean": self.means[i], "stderr": self.stderrs[i], "blowups": self.blowups[i]}
            if i < len(self.differences):
                row["diff_next"] = self.differences[i]
                row["diff_next_err"] = self.difference_errors[i]
            out.append(row)
        return out


def _trend(per_sample: np.ndarray) -> tuple[float, float]:
    """Mean and standard error of ``D_first - D_last`` over samples."""
    delta = per_sample[:, 0] - per_sample[:, -1]
    n = len(delta)
    return float(delta.mean()), float(delta.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf


def ensemble_converge(template: EquationSpec, eps_list: Sequence[float], n_samples: int,
                      observable: str = "pairing", coupling: str = "same-noise",
                      potential_for: Callable[[float], Potential] | None = None, seed: int = 0,
                      sigmas: float = 3.0, label: str = "", statistic: str = "pathwise") -> ConvergenceTable:
    """Observable statistics across ``eps`` and a Cauchy-trend verdict.

    ``potential_for(eps)`` supplies the drift at each ``eps`` (default: the
    template's).  The verdict is ``"decreasing"`` when the first pairwise
    difference exceeds the last by more than ``sigmas`` standard errors and
    ``"non-decreasing"`` otherwise.  Blow-ups are counted and the affected
    samples dropped.

    With same-noise coupling, ``statistic="pathwise"`` measures
    ``E|O_i - O_{i+1}|`` and ``statistic="mean"`` measures the drift
    ``|E(O_i - O_{i+1})|`` from the paired samples.
    """
    eps_list = sorted((float(e) for e in eps_list), reverse=True)
    if len(eps_list) < 2:
        raise ValueError("need at least two eps values")
    if coupling not in ("same-noise", "independent"):
        raise ValueError(f"unknown coupling {coupling!r}")
    if statistic not in ("pathwise", "mean"):
        raise ValueError(f"unknown statistic {statistic!r}")
    obs = OBSERVABLES[observable]
    pad = max(eps_list) ** 2
    values = np.full((n_samples, len(eps_list)), np.nan)
    blowups = [0] * len(eps_list)
    for s in range(n_samples):
        shared = None
        for j, eps in enumerate(eps_list):
            pot = potential_for(eps) if potential_for else template.potential
            spec = replace(template, eps=eps, noise="mollified", potential=pot, noise_pad=pad)
            sample_seed = seed + s if coupling == "same-noise" else seed + s + 7919 * (j + 1)
            if coupling == "same-noise":
                if shared is None:
                    shared = white_noise(spec, sample_seed)
                white = shared
            else:
                white = white_noise(spec, sample_seed)
            try:
                values[s, j] = obs(integrate(spec, sample_seed, white=white))
            except BlowUp:
                blowups[j] += 1
    good = ~np.isnan(values).any(axis=1)
    v = values[good]
    m = len(v)
    means = [float(x) for x in np.nanmean(values, axis=0)]
    errs = [float(x) for x in np.nanstd(values, axis=0, ddof=1) / np.sqrt(np.sum(~np.isnan(values), axis=0))]
    if coupling == "same-noise" and statistic == "pathwise":
        D = np.abs(np.diff(v, axis=1))
        diffs = [float(x) for x in D.mean(axis=0)]
        derrs = [float(x) for x in D.std(axis=0, ddof=1) / math.sqrt(m)]
        trend, terr = _trend(D)
    elif coupling == "same-noise":
        # orient each pairwise difference by its mean sign so |E D| becomes linear
        D = np.diff(v, axis=1)
        D = D * np.where(D.mean(axis=0) < 0, -1.0, 1.0)
        diffs = [float(x) for x in D.mean(axis=0)]
        derrs = [float(x) for x in D.std(axis=0, ddof=1) / math.sqrt(m)]
        trend, terr = _trend(D)
    else:
        diffs = [abs(a - b) for a, b in zip(means[:-1], means[1:])]
        derrs = [math.hypot(a, b) for a, b in zip(errs[:-1], errs[1:])]
        trend = diffs[0] - diffs[-1]
        terr = math.hypot(derrs[0], derrs[-1])
    verdict = "decreasing" if trend > sigmas * terr else "non-decreasing"
    return ConvergenceTable(eps_list, means, errs, diffs, derrs, trend, terr, verdict, blowups, m, label)


def wick_family(template: EquationSpec) -> Callable[[float], Potential]:
    """``eps -> mass 3 C_eps`` with ``C_eps`` the lattice variance."""
    cache: dict = {}

    def pot(eps: float) -> Potential:
        if eps not in cache:
            cache[eps] = Potential.cubic(3 * lattice_constants(template, eps)["Ct1"])
        return cache[eps]

    return pot


@dataclass
class UniversalityStudy:
    """Cubic versus Hermite-quintic solutions across ``eps`` (same noise)."""

    eps: list
    cubic_means: list
    quintic_means: list
    differences: list
    difference_errors: list
    tolerances: list
    constants: list

    @property
    def agree(self) -> bool:
        return abs(self.differences[-1]) <= self.tolerances[-1]

    @property
    def decreasing(self) -> bool:
        return all(a >= b for a, b in zip(self.differences[:-1], self.differences[1:]))


def universality_study(template: EquationSpec, eps_list: Sequence[float], n_samples: int, a: float = 1.0,
                       observable: str = "pairing", seed: int = 0, sigmas: float = 3.0) -> UniversalityStudy:
    """Compare ``mass (3 Ct1 - 9 Ct2)`` cubic solutions with the Hermite quintic.

    The quintic drift is ``-H_3(u, Ct1) - a eps H_5(u, Ct1) - (9 Ct2 + 20 a Ct3 + 25 a^2 Ct4) u``
    with the lattice constants of :func:`lattice_constants`.  Both equations
    are driven by the same noise.  The tolerance is ``sigmas`` times the
    combined standard error of the two observable means.
    """
    eps_list = sorted((float(e) for e in eps_list), reverse=True)
    obs = OBSERVABLES[observable]
    pad = max(eps_list) ** 2
    out = dict(cubic=[], quintic=[], diff=[], derr=[], tol=[], consts=[])
    for eps in eps_list:
        C = lattice_constants(template, eps)
        cubic = Potential.cubic(3 * C["Ct1"] - 9 * C["Ct2"])
        lin = -(9 * C["Ct2"] + 20 * a * C["Ct3"] + 25 * a * a * C["Ct4"])
        quintic = Potential.hermite(C["Ct1"], a, eps, linear=lin)
        oc, oq = [], []
        for s in range(n_samples):
            spec_c = replace(template, eps=eps, noise="mollified", potential=cubic, noise_pad=pad)
            spec_q = replace(spec_c, potential=quintic)
            white = white_noise(spec_c, seed + s)
            oc.append(obs(integrate(spec_c, seed + s, white=white)))
            oq.append(obs(integrate(spec_q, seed + s, white=white)))
        oc, oq = np.array(oc), np.array(oq)
        diff = oq - oc
        se_c = oc.std(ddof=1) / math.sqrt(n_samples)
        se_q = oq.std(ddof=1) / math.sqrt(n_samples)
        out["cubic"].append(float(oc.mean()))
        out["quintic"].append(float(oq.mean()))
        out["diff"].append(float(np.mean(np.abs(diff))))
        out["derr"].append(float(np.std(np.abs(diff), ddof=1) / math.sqrt(n_samples)))
        out["tol"].append(float(sigmas * math.hypot(se_c, se_q)))
        out["consts"].append(C)
    return UniversalityStudy(eps_list, out["cubic"], out["quintic"], out["diff"], out["derr"], out["tol"],
                             out["consts"])
