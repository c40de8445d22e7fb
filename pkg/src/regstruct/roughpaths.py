"""Controlled paths, Young and rough integration on a uniform time grid.

The integral of a controlled integrand ``Z`` against a path ``W`` is the limit
of compensated Riemann sums ``sum Z_s W_{s,u} + Z'_s WW_{s,u}``; the partition
limit is realised by comparing the two finest dyadic levels of the sample
grid.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ._backend import njit, select

__all__ = [
    "Path",
    "ControlledPath",
    "SecondLevel",
    "IntegralResult",
    "NotYoungRegular",
    "InsufficientRegularity",
    "holder_exponent",
    "young_integral",
    "second_level_from_smooth",
    "chen_defect",
    "rough_integral",
    "controlled_norm",
    "derivative_norm",
    "synthetic_holder_path",
]


class NotYoungRegular(UserWarning):
    """Fitted exponents do not satisfy alpha_Y + alpha_W > 1."""


class InsufficientRegularity(UserWarning):
    """Fitted exponent of the driving path is not above 1/3."""


def _as2d(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


@dataclass
class Path:
    """Samples of ``W: [0, T] -> R^m`` on a uniform grid."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = _as2d(self.values)
        if len(self.times) != len(self.values):
            raise ValueError("times and values must have equal length")
        if len(self.times) > 2:
            dt = np.diff(self.times)
            if not np.allclose(dt, dt[0], rtol=1e-9, atol=0):
                raise ValueError("time grid must be uniform")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("path values must be finite")

    @classmethod
    def from_function(cls, fn, n: int, T: float = 1.0) -> "Path":
        t = np.linspace(0.0, T, n + 1)
        return cls(t, fn(t))

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def increment(self, i: int, j: int) -> np.ndarray:
        return self.values[j] - self.values[i]

    def subsample(self, stride: int) -> "Path":
        return Path(self.times[::stride], self.values[::stride])


@dataclass
class ControlledPath:
    """Controlled path ``(Z, Z')`` with ``Z`` of shape (N, k) and ``Z'`` of shape (N, k, m)."""

    values: np.ndarray
    deriv: np.ndarray

    def __post_init__(self):
        self.values = _as2d(self.values)
        d = np.asarray(self.deriv, dtype=float)
        if d.ndim == 1:
            d = d[:, None, None]
        elif d.ndim == 2:
            d = d[:, None, :] if self.values.shape[1] == 1 else d[:, :, None]
        self.deriv = d
        if self.deriv.shape[:2] != self.values.shape:
            raise ValueError("derivative shape must be (N, k, m)")

    def subsample(self, stride: int) -> "ControlledPath":
        return ControlledPath(self.values[::stride], self.deriv[::stride])


def holder_exponent(path: Path | np.ndarray, min_lag: int = 1, max_lag: int | None = None) -> float:
    """Fitted Hoelder exponent from log-log regression of sup increments over dyadic lags."""
    vals = path.values if isinstance(path, Path) else _as2d(path)
    n = len(vals)
    max_lag = max_lag or max(2, n // 8)
    lags, sups = [], []
    h = min_lag
    while h <= max_lag:
        inc = np.linalg.norm(vals[h:] - vals[:-h], axis=1)
        s = float(inc.max())
        if s > 0:
            lags.append(h)
            sups.append(s)
        h *= 2
    if len(lags) < 2:
        return math.inf
    slope = np.polyfit(np.log(lags), np.log(sups), 1)[0]
    return float(slope)


@dataclass
class IntegralResult:
    """Integral on the sample grid with a refinement-Cauchy estimate."""

    times: np.ndarray
    values: np.ndarray
    cauchy: float
    status: str = "ok"

    @property
    def endpoint(self) -> float:
        return float(self.values[-1])


def young_integral(Y: Path | np.ndarray, W: Path, check: bool = True) -> IntegralResult:
    """Left-point Riemann sums ``sum_s <Y_s, W_{s,u}>`` on the sample grid.

    ``Y`` has shape (N, m) (or (N,) for scalar ``W``).  The Cauchy value is
    the sup difference between the finest level and the level with step two.
    """
    y = Y.values if isinstance(Y, Path) else _as2d(Y)
    status = "ok"
    if check:
        ay = holder_exponent(y)
        aw = holder_exponent(W)
        if ay + aw <= 1:
            status = "not-young-regular"
            warnings.warn(f"fitted exponents {ay:.2f} + {aw:.2f} <= 1", NotYoungRegular, stacklevel=2)
    fine = _young_sums(y, W.values, 1)
    coarse = _young_sums(y, W.values, 2)
    cauchy = float(np.max(np.abs(fine[::2] - coarse)))
    return IntegralResult(W.times, fine, cauchy, status)


def _young_sums(y: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    ys = y[::stride]
    ws = w[::stride]
    terms = np.einsum("ij,ij->i", ys[:-1], np.diff(ws, axis=0))
    return np.concatenate([[0.0], np.cumsum(terms)])


# ---------------------------------------------------------------------------
# second level


@njit
def _compose_numba(w0, dw, area):
    n, m = dw.shape
    out = np.zeros((n + 1, m, m))
    for k in range(n):
        for a in range(m):
            for b in range(m):
                out[k + 1, a, b] = out[k, a, b] + area[k, a, b] + w0[k, a] * dw[k, b]
    return out


def _compose_numpy(w0, dw, area):
    terms = area + w0[:-1, :, None] * dw[:, None, :]
    out = np.zeros((len(dw) + 1,) + area.shape[1:])
    out[1:] = np.cumsum(terms, axis=0)
    return out


class SecondLevel:
    """Second-order iterated integrals ``WW_{s,t}`` composed from adjacent increments.

    Parameters
    ----------
    path : Path
    increments : ndarray, shape (N-1, m, m)
        ``WW`` over each sample interval.  Values between arbitrary grid
        points follow from the composition rule, so Chen's relation holds
        up to roundoff.
    """

    def __init__(self, path: Path, increments: np.ndarray, backend: str | None = None):
        self.path = path
        self.increments = np.asarray(increments, dtype=float)
        w0 = path.values - path.values[0]
        impl = select(_compose_numba, _compose_numpy, backend)
        self._from0 = impl(np.ascontiguousarray(w0), np.ascontiguousarray(np.diff(path.values, axis=0)),
                           np.ascontiguousarray(self.increments))

    def between(self, i, j) -> np.ndarray:
        """``WW_{t_i, t_j}`` (vectorised over index arrays)."""
        i = np.asarray(i)
        j = np.asarray(j)
        v = self.path.values
        wij = v[j] - v[i]
        wi0 = v[i] - v[0]
        return self._from0[j] - self._from0[i] - wi0[..., :, None] * wij[..., None, :]

    def shifted(self, lam: float) -> "SecondLevel":
        """Add ``lam * (t - s) * Id``; still satisfies Chen's relation."""
        dt = np.diff(self.path.times)
        eye = np.eye(self.path.dim)
        return SecondLevel(self.path, self.increments + lam * dt[:, None, None] * eye)


def second_level_from_smooth(W: Path, refine: int = 1) -> SecondLevel:
    """Trapezoidal second level ``int_s^t W_{s,r} (x) dW_r`` of a finely sampled path.

    With ``refine > 1`` the sample grid is treated as a refinement of the
    returned grid: increments over each coarse interval are composed from the
    fine ones.
    """
    dw = np.diff(W.values, axis=0)
    fine = 0.5 * dw[:, :, None] * dw[:, None, :]
    if refine == 1:
        return SecondLevel(W, fine)
    level = SecondLevel(W, fine)
    idx = np.arange(0, len(W.times), refine)
    coarse = level.between(idx[:-1], idx[1:])
    return SecondLevel(W.subsample(refine), coarse)


def chen_defect(WW: SecondLevel, s: int, u: int, t: int) -> np.ndarray:
    """``WW_{s,t} - WW_{s,u} - WW_{u,t} - W_{s,u} (x) W_{u,t}``."""
    v = WW.path.values
    return WW.between(s, t) - WW.between(s, u) - WW.between(u, t) - np.outer(v[u] - v[s], v[t] - v[u])


# ---------------------------------------------------------------------------
# rough integral


@njit
def _compensated_numba(z, zp, dw, dww):
    n, m = dw.shape
    out = np.zeros(n + 1)
    for k in range(n):
        acc = 0.0
        for a in range(m):
            acc += z[k, a] * dw[k, a]
            for b in range(m):
                # Z' row a, direction b pairs with int W^b dW^a
                acc += zp[k, a, b] * dww[k, b, a]
        out[k + 1] = out[k] + acc
    return out


def _compensated_numpy(z, zp, dw, dww):
    terms = np.einsum("ka,ka->k", z[:-1], dw) + np.einsum("kab,kba->k", zp[:-1], dww)
    out = np.zeros(len(dw) + 1)
    out[1:] = np.cumsum(terms)
    return out


def _compensated(Z: ControlledPath, WW: SecondLevel, stride: int, backend=None) -> np.ndarray:
    idx = np.arange(0, len(WW.path.times), stride)
    v = WW.path.values
    dw = np.diff(v[idx], axis=0)
    dww = WW.between(idx[:-1], idx[1:])
    impl = select(_compensated_numba, _compensated_numpy, backend)
    return impl(np.ascontiguousarray(Z.values[idx]), np.ascontiguousarray(Z.deriv[idx]),
                np.ascontiguousarray(dw), np.ascontiguousarray(dww))


def rough_integral(Z: ControlledPath, W: Path, WW: SecondLevel, check: bool = True,
                   backend: str | None = None) -> tuple[ControlledPath, IntegralResult]:
    """Compensated-sum integral ``Y_t = int_0^t <Z_s, dW_s>``.

    Returns the controlled path ``(Y, Y' = Z)`` and the grid result with its
    refinement-Cauchy estimate.  ``Z`` must have ``k = m``.
    """
    if Z.values.shape[1] != W.dim:
        raise ValueError("integrand must pair with the path dimension")
    status = "ok"
    if check:
        a = holder_exponent(W)
        if a <= 1.0 / 3.0:
            status = "insufficient-regularity"
            warnings.warn(f"fitted exponent {a:.2f} <= 1/3", InsufficientRegularity, stacklevel=2)
    fine = _compensated(Z, WW, 1, backend)
    coarse = _compensated(Z, WW, 2, backend)
    cauchy = float(np.max(np.abs(fine[::2] - coarse)))
    res = IntegralResult(W.times, fine, cauchy, status)
    Y = ControlledPath(fine[:, None], Z.values[:, None, :])
    return Y, res


# ---------------------------------------------------------------------------
# norms


def _pairs(n: int, max_lag: int | None):
    max_lag = n - 1 if max_lag is None else min(max_lag, n - 1)
    for h in range(1, max_lag + 1):
        yield h, np.arange(n - h)


def controlled_norm(Z: ControlledPath, W: Path, gamma: float, alpha: float | None = None,
                    max_lag: int | None = None) -> dict:
    """Sampled maxima of the two controlled-norm ratios.

    ``|Z'_t - Z'_s| / |t-s|^(gamma-alpha)`` and
    ``|Z_t - Z_s - Z'_s W_{s,t}| / |t-s|^gamma``; ``alpha`` defaults to the
    fitted exponent of ``W``.
    """
    if alpha is None:
        alpha = holder_exponent(W)
    t = W.times
    z, zp, w = Z.values, Z.deriv, W.values
    d_max = 0.0
    r_max = 0.0
    for h, s in _pairs(len(t), max_lag):
        dt = t[s + h] - t[s]
        dz = np.linalg.norm((zp[s + h] - zp[s]).reshape(len(s), -1), axis=1)
        rem = z[s + h] - z[s] - np.einsum("kab,kb->ka", zp[s], w[s + h] - w[s])
        r = np.linalg.norm(rem, axis=1)
        d_max = max(d_max, float(np.max(dz / dt ** (gamma - alpha))))
        r_max = max(r_max, float(np.max(r / dt**gamma)))
    return {"derivative": d_max, "remainder": r_max, "norm": max(d_max, r_max), "alpha": alpha}


def derivative_norm(fprime: np.ndarray, times: np.ndarray, gamma: float, max_lag: int | None = None) -> float:
    """``sup |f'(t) - f'(s)| / |t-s|^(gamma-1)`` over sampled pairs."""
    fp = _as2d(fprime)
    best = 0.0
    for h, s in _pairs(len(times), max_lag):
        dt = times[s + h] - times[s]
        best = max(best, float(np.max(np.linalg.norm(fp[s + h] - fp[s], axis=1) / dt ** (gamma - 1))))
    return best


def synthetic_holder_path(n: int, alpha: float, seed: int = 0, m: int = 1, T: float = 1.0,
                          modes: int | None = None) -> Path:
    """Random Fourier series with coefficients decaying like ``k^-(alpha + 1/2)``.

    Sample paths are Hoelder of every order below ``alpha`` (fBm-like).
    """
    rng = np.random.default_rng(seed)
    modes = modes or n // 2
    t = np.linspace(0.0, T, n + 1)
    k = np.arange(1, modes + 1)
    amp = k ** (-(alpha + 0.5))
    vals = np.zeros((n + 1, m))
    for j in range(m):
        a = rng.normal(size=modes) * amp
        b = rng.normal(size=modes) * amp
        phase = 2 * np.pi * np.outer(t / T, k)
        vals[:, j] = np.cos(phase) @ a + np.sin(phase) @ b
    return Path(t, vals)
