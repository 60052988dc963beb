"""Closed-form Gaussian laws of the quadratic model, V(x) = c|x|^2 / 2.

With a quadratic potential the pair (Y, mubar) is a linear Gaussian process
and its marginal laws are explicit up to one-dimensional quadratures:

    F(t) = int_0^t exp(-c G(s)) g(s) / (r + s) ds
    H(t) = int_0^t exp(-c G(u)) / (r + u)^2 du
    K(s) = int_s^inf exp(-c (G(u) - G(s))) / (r + u)^2 du

    Y_t     = psi(0, t) y0 + int_0^t psi(s, t) dB_s,
    mubar_t = mubar0 + r y0 H(t) + int_0^t (r + s) J(s, t) dB_s,

where ``psi(s, t) = (r + s) exp(-c (G(t) - G(s))) / (r + t)`` and
``J(s, t) = K(s) - exp(-c (G(t) - G(s))) K(t)``.  Every exponential is
evaluated as a difference ``G(t) - G(s)`` so nothing overflows however large
c G(t) becomes.  Quadratures are split at geometric breakpoints around the
boundary layers and must reach 1e-9 relative accuracy or an error is raised.

The coordinates decouple for an isotropic quadratic in d dimensions, so
means broadcast over array-valued ``x0``/``mu_bar0`` and variances are per
coordinate.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicHermiteSpline

from .gain import GainSchedule, _trend, require_finite_limit

QUAD_RTOL = 1e-9


class QuadratureError(RuntimeError):
    """An oracle quadrature missed its accuracy target."""


class _Sum:
    """Accumulates quad results and their error estimates."""

    def __init__(self):
        self.value = 0.0
        self.error = 0.0

    def add(self, f, a, b):
        if b <= a:
            return 0.0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            v, e = integrate.quad(f, a, b, epsabs=0.0, epsrel=1e-12, limit=200)
        self.value += v
        self.error += e
        return v

    def result(self, what):
        if not math.isfinite(self.value) or self.error > QUAD_RTOL * abs(self.value) + 1e-15:
            raise QuadratureError(f"{what}: estimated error {self.error:.3g} "
                                  f"for value {self.value:.6g}")
        return self.value


def _backward_breaks(t, width):
    """Breakpoints t - width * (2**k - 1) clipped at 0, descending from t."""
    pts = [t]
    k = 0
    while pts[-1] > 0:
        k += 1
        pts.append(max(t - width * (2.0 ** k - 1.0), 0.0))
    return pts


_GL20 = np.polynomial.legendre.leggauss(20)
_GL40 = np.polynomial.legendre.leggauss(40)
_N_PIECES = 64


def _pieces(f, edges):
    """Integrate a vectorized ``f`` over consecutive intervals of ``edges``.

    ``edges`` has shape (..., m + 1); the result sums over the last axis.
    Each interval gets 40-point Gauss-Legendre, and the difference from the
    20-point rule is returned as a (pessimistic) error estimate.
    """
    a, b = edges[..., :-1], edges[..., 1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    out = []
    for x, w in (_GL20, _GL40):
        nodes = mid[..., None] + half[..., None] * x
        vals = f(nodes)
        out.append(half * (vals @ w))
    return out[1].sum(axis=-1), np.abs(out[1] - out[0]).sum(axis=-1)


def _checked(value, error, what):
    value, error = np.asarray(value), np.asarray(error)
    bad = ~np.isfinite(value) | (error > QUAD_RTOL * np.abs(value) + 1e-15)
    if np.any(bad):
        i = np.flatnonzero(bad.ravel())[0]
        raise QuadratureError(f"{what}: estimated error {error.ravel()[i]:.3g} "
                              f"for value {value.ravel()[i]:.6g}")
    return value


@dataclass(frozen=True)
class GaussianLimit:
    """Limit of the empirical measure in the finite-gain regime.

    The limit is N(mubar_inf, variance) with ``variance = 1 / (2 g(inf) c)``
    and a random center ``mubar_inf`` whose own law is
    N(mubar_inf_mean, mubar_inf_var).
    """

    variance: float
    g_limit: float
    mubar_inf_mean: np.ndarray | float
    mubar_inf_var: float


class QuadraticLaw:
    """Marginal Gaussian laws of Y, mubar and X for V(x) = c|x|^2 / 2."""

    def __init__(self, c: float, gain: GainSchedule, r: float, x0=0.0, mu_bar0=0.0):
        if not c > 0 or not r > 0:
            raise ValueError("need c > 0 and r > 0")
        self.c, self.gain, self.r = float(c), gain, float(r)
        self.x0 = np.asarray(x0, dtype=float)
        self.mu_bar0 = np.asarray(mu_bar0, dtype=float)
        self.y0 = self.x0 - self.mu_bar0

    # ------------------------------------------------------------------
    # building blocks
    def _G(self, t):
        return self.gain.G(t)

    def _rate(self, s):
        """Decay rate c g(s), floored by 1/(r+s) so widths stay finite when g(0) = 0."""
        return np.maximum(self.c * self.gain.g(s), 1.0 / (self.r + np.asarray(s, dtype=float)))

    def _decay(self, s, t):
        return np.exp(-self.c * (self._G(t) - self._G(s)))

    def _forward_edges(self, t):
        width = min(1.0 / float(self._rate(0.0)), self.r)
        edges = width * (2.0 ** np.arange(_N_PIECES + 1) - 1.0)
        if math.isfinite(t):
            edges = np.append(edges[edges < t], t)
        return edges

    def _from_zero(self, f, t, what):
        if t <= 0:
            return 0.0
        return float(_checked(*_pieces(f, self._forward_edges(t)), what))

    def F(self, t) -> float:
        """int_0^t exp(-c G(s)) g(s) / (r + s) ds (t may be inf)."""
        c, r, gain = self.c, self.r, self.gain
        return self._from_zero(lambda s: np.exp(-c * gain.G(s)) * gain.g(s) / (r + s), t, "F")

    def H(self, t) -> float:
        """int_0^t exp(-c G(u)) / (r + u)^2 du (t may be inf)."""
        c, r, gain = self.c, self.r, self.gain
        return self._from_zero(lambda u: np.exp(-c * gain.G(u)) / (r + u) ** 2, t, "H")

    def K(self, s):
        """int_s^inf exp(-c (G(u) - G(s))) / (r + u)^2 du, vectorized over s."""
        s = np.asarray(s, dtype=float)
        flat = s.ravel()
        out = np.empty_like(flat)
        for i in range(0, flat.size, 128):
            blk = flat[i:i + 128]
            width = np.minimum(1.0 / self._rate(blk), self.r + blk)
            edges = blk[:, None] + width[:, None] * (2.0 ** np.arange(_N_PIECES + 1) - 1.0)
            Gs = self.gain.G(blk)[:, None, None]
            f = lambda u: np.exp(-self.c * (self.gain.G(u) - Gs)) / (self.r + u) ** 2
            val, err = _pieces(f, edges)
            out[i:i + 128] = _checked(val, err, "K")
        return out.reshape(s.shape) if s.ndim else float(out[0])

    def psi(self, s, t):
        return (self.r + s) * self._decay(s, t) / (self.r + t)

    def J(self, s, t):
        return self.K(s) - self._decay(s, t) * self.K(t)

    def _window_edges(self, t):
        """Breakpoints on [0, t]: doubling in r + s, refined near s = t."""
        pts = _backward_breaks(t, 1.0 / (2.0 * float(self._rate(t))))
        bulk = [0.0]
        while bulk[-1] < t:
            bulk.append(min((self.r + bulk[-1]) * 2.0 - self.r, t))
        return np.unique(np.array(bulk + pts))

    def _over_window(self, f, t, what):
        """int_0^t f(s) ds for integrands with a boundary layer at s = t."""
        if t <= 0:
            return 0.0
        return float(_checked(*_pieces(f, self._window_edges(t)), what))

    # ------------------------------------------------------------------
    # marginal laws
    def mean_Y(self, t):
        return self.r * self.y0 * math.exp(-self.c * self._G(t)) / (self.r + t)

    def var_Y(self, t) -> float:
        return self._over_window(lambda s: self.psi(s, t) ** 2, t, "var_Y")

    def mean_mubar(self, t):
        return self.mu_bar0 + self.r * self.y0 * self.H(t)

    def var_mubar(self, t) -> float:
        if math.isinf(t):
            return self._from_zero(lambda s: ((self.r + s) * self.K(s)) ** 2, t,
                                   "var_mubar(inf)")
        return self._over_window(lambda s: ((self.r + s) * self.J(s, t)) ** 2, t, "var_mubar")

    def cov_Y_mubar(self, t) -> float:
        return self._over_window(lambda s: self.psi(s, t) * (self.r + s) * self.J(s, t),
                                 t, "cov")

    def mean_X(self, t):
        return self.mean_Y(t) + self.mean_mubar(t)

    def mean_X_direct(self, t):
        """x0 + r c (mubar0 - x0) F(t), computed without H as a consistency check."""
        return self.x0 + self.r * self.c * (self.mu_bar0 - self.x0) * self.F(t)

    def var_X(self, t) -> float:
        return self._over_window(
            lambda s: (self.psi(s, t) + (self.r + s) * self.J(s, t)) ** 2, t, "var_X")

    def law_of_Y(self, t):
        return self.mean_Y(t), self.var_Y(t)

    def law_of_mubar(self, t):
        return self.mean_mubar(t), self.var_mubar(t)

    def law_of_X(self, t):
        return self.mean_X(t), self.var_X(t)

    def table(self, times):
        """Columns t, mean_Y, var_Y, mean_mubar, var_mubar, mean_X, var_X (first coordinate)."""
        rows = []
        for t in times:
            t = float(t)
            rows.append((t, float(np.ravel(self.mean_Y(t))[0]), self.var_Y(t),
                         float(np.ravel(self.mean_mubar(t))[0]), self.var_mubar(t),
                         float(np.ravel(self.mean_X(t))[0]), self.var_X(t)))
        return np.array(rows)

    TABLE_COLUMNS = ("t", "mean_Y", "var_Y", "mean_mubar", "var_mubar", "mean_X", "var_X")


def limit_measure(q: QuadraticLaw, horizon: float = 1e6) -> GaussianLimit:
    """Gaussian limit of the empirical measure; needs a finite positive lim g."""
    g_inf = require_finite_limit(q.gain, horizon)
    return GaussianLimit(
        variance=1.0 / (2.0 * g_inf * q.c),
        g_limit=g_inf,
        mubar_inf_mean=q.mean_mubar(math.inf),
        mubar_inf_var=q.var_mubar(math.inf),
    )


def ou_ergodic_variance(a_fn, horizon: float = 50.0, n_grid: int = 4001) -> float:
    """Limit of V(t) = int_0^t exp(-2 (A(t) - A(s))) ds with A' = a.

    V(t) is the variance of the Ornstein-Uhlenbeck-type process
    dZ = dW - a(t) Z dt started at 0.  It is evaluated at horizon/4, horizon/2
    and horizon and extrapolated with Aitken's delta-squared process, which is
    exact for 1/t decay.  Returns 0 when a grows without bound, and ``inf``
    with a warning when V(t) keeps growing.
    """
    grid = np.linspace(0.0, horizon, n_grid)
    a_vals = np.asarray([float(a_fn(s)) for s in grid])
    pieces = [integrate.quad(a_fn, lo, hi, epsabs=0.0, epsrel=1e-13)[0]
              for lo, hi in zip(grid[:-1], grid[1:])]
    A = CubicHermiteSpline(grid, np.concatenate([[0.0], np.cumsum(pieces)]), a_vals)

    def V(t):
        At = float(A(t))
        f = lambda s: math.exp(-2.0 * (At - float(A(s))))
        rate = max(2.0 * float(a_fn(t)), 1e-12)
        acc = _Sum()
        pts = _backward_breaks(t, 1.0 / rate)
        for b, a in zip(pts[:-1], pts[1:]):
            acc.add(f, a, b)
            if f(a) * a <= 1e-16 * acc.value:
                break
        return acc.result("V")

    v = [V(horizon / 4), V(horizon / 2), V(horizon)]
    tr = _trend(*v, q_conv=0.9, q_div=0.9)
    if tr.state == "converges":
        return max(tr.limit, 0.0)
    if tr.state == "diverges" and tr.limit > 0:
        warnings.warn("V(t) does not converge: no stationary variance")
        return math.inf
    # flat to rounding: already converged
    if abs(v[2] - v[1]) <= 1e-10 * abs(v[2]):
        return v[2]
    warnings.warn("V(t) trend inconclusive at this horizon")
    return math.inf
