"""Reductions of simulated ensembles into verdicts on long-time behaviour.

Everything here is a pure function of recorded trajectories.  Limits are
asymptotic statements, so each check uses a finite-horizon surrogate:
convergence of a path means a small oscillation over the last 10% of the
horizon, the log-rate is a least-squares slope over the last decade, and
the envelope check counts the fraction of recorded times inside the band.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .simulator import Ensemble, PathRecord, integrate_flow, path_rng


# ---------------------------------------------------------------------------
# empirical measures


class EmpiricalMeasure:
    """Weighted point cloud in R^d (1-D queries use the first coordinate)."""

    def __init__(self, samples, weights=None):
        x = np.asarray(samples, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        w = np.ones(len(x)) if weights is None else np.asarray(weights, dtype=float).ravel()
        if len(w) != len(x):
            raise ValueError("one weight per sample")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        total = w.sum()
        if not total > 0:
            raise ValueError("total weight must be positive")
        self.samples = x
        self.weights = w / total
        self.normalization = float(total)
        self._sorted = None

    def __len__(self):
        return len(self.samples)

    @property
    def mean(self):
        return self.weights @ self.samples

    @property
    def variance(self):
        dev = self.samples - self.mean
        return self.weights @ (dev * dev)

    def _sorted_1d(self):
        if self._sorted is None:
            order = np.argsort(self.samples[:, 0], kind="stable")
            xs = self.samples[order, 0]
            cw = np.cumsum(self.weights[order])
            self._sorted = (xs, cw)
        return self._sorted

    def cdf(self, x):
        xs, cw = self._sorted_1d()
        idx = np.searchsorted(xs, x, side="right")
        return np.where(idx > 0, cw[np.maximum(idx - 1, 0)], 0.0)

    def ks_distance(self, cdf) -> float:
        """sup_x |F_n(x) - F(x)| for a continuous reference cdf (first coordinate)."""
        xs, cw = self._sorted_1d()
        ref = cdf(xs)
        below = np.concatenate([[0.0], cw[:-1]])
        return float(max(np.max(np.abs(cw - ref)), np.max(np.abs(below - ref))))

    def histogram(self, bins=100, range=None):
        """Probability mass per bin (first coordinate); returns (edges, mass)."""
        mass, edges = np.histogram(self.samples[:, 0], bins=bins, range=range,
                                   weights=self.weights)
        return edges, mass

    def histogram_text(self, bins=100, range=None) -> str:
        """Two-column ``bin_center mass`` dump."""
        edges, mass = self.histogram(bins, range)
        centers = 0.5 * (edges[:-1] + edges[1:])
        return "".join(f"{c:.12g} {m:.12g}\n" for c, m in zip(centers, mass))

    def mass_within(self, centers, radius: float) -> float:
        """Mass of the union of closed balls of ``radius`` around ``centers``."""
        c = np.atleast_2d(np.asarray(centers, dtype=float))
        if c.shape[1] != self.samples.shape[1]:
            c = c.reshape(-1, self.samples.shape[1])
        dist = np.linalg.norm(self.samples[:, None, :] - c[None, :, :], axis=-1)
        return float(self.weights[np.any(dist <= radius, axis=1)].sum())


def _trapezoid_weights(t):
    w = np.zeros_like(t)
    if len(t) == 1:
        return np.ones(1)
    dt = np.diff(t)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def _field(ens: Ensemble, which: str):
    if which == "X":
        return ens.X
    if which == "Y":
        return ens.Y
    if which == "mu_bar":
        return ens.mu_bar
    raise ValueError("which must be 'X', 'Y' or 'mu_bar'")


def occupation_measure(ens: Ensemble, which: str = "X", burn_in: float = 0.0,
                       center=None) -> EmpiricalMeasure:
    """Time-occupation measure over [burn_in * T, T], pooled across paths.

    Each recorded state is weighted by its trapezoid time step, every path
    carries equal total mass.  ``center="path_mean"`` subtracts each path's
    own occupation mean before pooling; ``center="mu_bar"`` subtracts the
    path's terminal running mean.
    """
    if not 0.0 <= burn_in <= 0.9:
        raise ValueError("burn_in must lie in [0, 0.9]")
    t = ens.times
    mask = t >= burn_in * t[-1]
    if np.count_nonzero(mask) < 2 and burn_in > 0:
        raise ValueError("empty occupation window")
    w = _trapezoid_weights(t[mask])
    if not w.sum() > 0:
        raise ValueError("empty occupation window")
    ok = ~ens.blown
    x = _field(ens, which)[ok][:, mask]
    if center == "path_mean":
        x = x - np.einsum("t,ntd->nd", w / w.sum(), x)[:, None, :]
    elif center == "mu_bar":
        x = x - ens.mu_bar[ok][:, -1][:, None, :]
    elif center is not None:
        raise ValueError("center must be None, 'path_mean' or 'mu_bar'")
    n, m, d = x.shape
    return EmpiricalMeasure(x.reshape(n * m, d), np.tile(w, n))


# ---------------------------------------------------------------------------
# critical points


def _check_eps(potential, eps):
    sep = potential.min_critical_separation()
    if not eps < 0.5 * sep:
        raise ValueError(f"eps={eps} must be below half the critical-point separation {sep}")


def tail_oscillation(times, Y, tail: float = 0.1):
    """max - min over the last ``tail`` fraction of the horizon (sup over coordinates).

    ``Y`` is (n_records, d) or (n_paths, n_records, d).
    """
    mask = times >= (1.0 - tail) * times[-1]
    seg = Y[..., mask, :]
    return np.max(seg.max(axis=-2) - seg.min(axis=-2), axis=-1)


def classify_terminal_ensemble(ens: Ensemble, potential, eps: float, tail: float = 0.1):
    """Index into ``potential.critical_points`` per path, or -1 when unclassified."""
    _check_eps(potential, eps)
    locs = potential.critical_locations()
    yT = ens.Y[:, -1]
    dist = np.linalg.norm(yT[:, None, :] - locs[None], axis=-1)
    nearest = np.argmin(dist, axis=1)
    close = dist[np.arange(len(yT)), nearest] <= eps
    settled = tail_oscillation(ens.times, ens.Y, tail) < 0.5 * eps
    ok = close & settled & ~ens.blown
    return np.where(ok, nearest, -1)


def classify_terminal(path: PathRecord, potential, eps: float, tail: float = 0.1):
    """Nearest critical point to the terminal state, or None if far or still moving."""
    _check_eps(potential, eps)
    locs = potential.critical_locations()
    dist = np.linalg.norm(locs - path.Y[-1], axis=-1)
    k = int(np.argmin(dist))
    if dist[k] > eps or tail_oscillation(path.times, path.Y, tail) >= 0.5 * eps:
        return None
    return potential.critical_points[k]


def escape_times(ens: Ensemble, point, eps: float):
    """First recorded time with |Y - point| >= eps per path (inf if never)."""
    dist = np.linalg.norm(ens.Y - np.asarray(point, dtype=float), axis=-1)
    out = dist >= eps
    first = np.argmax(out, axis=1)
    return np.where(out.any(axis=1), ens.times[first], np.inf)


# ---------------------------------------------------------------------------
# envelope and pseudotrajectory


def lil_envelope_fractions(ens: Ensemble, m, gain, T0: float, c_env: float = 3.0):
    """Per path fraction of recorded t >= T0 with |Y_t - m| sqrt(g/log G) <= c_env."""
    t = ens.times
    mask = t >= T0
    Gt = gain.G(t[mask])
    if np.any(Gt <= 1.0):
        raise ValueError("T0 too small: log G(t) must be positive on the window")
    scale = np.sqrt(gain.g(t[mask]) / np.log(Gt))
    dev = np.linalg.norm(ens.Y[:, mask] - np.asarray(m, dtype=float), axis=-1)
    return np.mean(dev * scale <= c_env, axis=1)


def lil_envelope_check(path: PathRecord, m, gain, T0: float, c_env: float = 3.0) -> float:
    ens = Ensemble(path.times, path.Y[None], path.mu_bar[None])
    return float(lil_envelope_fractions(ens, m, gain, T0, c_env)[0])


def _apt_window(times, gain, u, window, min_points):
    Gt = gain.G(times)
    if Gt[-1] < u + window:
        raise ValueError(f"recorded horizon reaches G = {Gt[-1]:.4g} < {u + window:.4g}")
    i0 = int(np.searchsorted(Gt, u, side="left"))
    h = Gt - Gt[i0]
    idx = np.flatnonzero((np.arange(len(times)) >= i0) & (h <= window + 1e-12))
    if len(idx) < min_points:
        warnings.warn(f"only {len(idx)} recorded points in the window at u={u}")
        return None, None
    return idx, h[idx]


def apt_deviations(ens: Ensemble, potential, gain, u: float, window: float = 1.0,
                   min_points: int = 20):
    """sup_{0<=h<=window} |Y_{G^-1(u+h)} - phi_h(Y_{G^-1(u)})| per path.

    The base record is the first with G(t) >= u and h runs over the
    recorded times in the time-changed clock.  Returns NaNs (with a warning)
    when fewer than ``min_points`` records fall in the window.
    """
    idx, h = _apt_window(ens.times, gain, u, window, min_points)
    if idx is None:
        return np.full(ens.n_paths, np.nan)
    flow = integrate_flow(potential, ens.Y[:, idx[0]], h)  # (len(h), n, d)
    diff = ens.Y[:, idx] - np.swapaxes(flow, 0, 1)
    return np.max(np.linalg.norm(diff, axis=-1), axis=1)


def apt_deviation(path: PathRecord, potential, gain, u: float, window: float = 1.0,
                  min_points: int = 20) -> float:
    ens = Ensemble(path.times, path.Y[None], path.mu_bar[None])
    return float(apt_deviations(ens, potential, gain, u, window, min_points)[0])


# ---------------------------------------------------------------------------
# trichotomy


class Outcome(str, enum.Enum):
    CONVERGED = "ConvergedToMubarInf"
    DIVERGED = "DivergedLogRate"
    UNDECIDED = "Undecided"


@dataclass
class TrichotomyVerdict:
    labels: np.ndarray          # Outcome values per path
    limit_index: np.ndarray     # critical point index or -1
    mubar_inf: np.ndarray       # (n, d), meaningful for converged paths
    slopes: np.ndarray          # (n, d), regression of X on log t
    fractions: dict = field(default_factory=dict)


def log_rate_slopes(ens: Ensemble, t_lo: float | None = None):
    """Least-squares slope of X_t against log t over [t_lo, T] (default T/10)."""
    t = ens.times
    t_lo = t[-1] / 10.0 if t_lo is None else t_lo
    mask = t >= t_lo
    if np.count_nonzero(mask) < 3:
        raise ValueError("need at least three records in the regression window")
    lt = np.log(t[mask])
    lt = lt - lt.mean()
    X = ens.X[:, mask]
    Xc = X - X.mean(axis=1, keepdims=True)
    return np.einsum("t,ntd->nd", lt, Xc) / (lt @ lt)


def trichotomy(ens: Ensemble, potential, eps: float, tail: float = 0.1) -> TrichotomyVerdict:
    """Label each path by where Y settles.

    Y settling at a minimum located at 0 means X converges (to mubar_inf,
    estimated by the terminal running mean).  Settling at a nonzero minimum m
    means X drifts like m log t; the slope is fitted over the last decade.
    """
    if math.log(ens.times[-1]) < 5:
        raise ValueError("horizon too short: need log T >= 5")
    k = classify_terminal_ensemble(ens, potential, eps, tail)
    cps = potential.critical_points
    slopes = log_rate_slopes(ens)
    labels = np.full(ens.n_paths, Outcome.UNDECIDED.value, dtype=object)
    for i, cp in enumerate(cps):
        if not cp.is_stable:
            continue
        sel = k == i
        if np.allclose(cp.location, 0.0, atol=1e-12):
            labels[sel] = Outcome.CONVERGED.value
        else:
            labels[sel] = Outcome.DIVERGED.value
    fractions = {o.value: float(np.mean(labels == o.value)) for o in Outcome}
    return TrichotomyVerdict(labels, k, ens.mu_bar[:, -1].copy(), slopes, fractions)


# ---------------------------------------------------------------------------
# running quantities


def ergodic_average(ens: Ensemble, f, which: str = "X"):
    """Running time averages (1/t) int_0^t f(state_s) ds on the recorded grid, shape (n, m)."""
    vals = np.asarray(f(_field(ens, which)), dtype=float)
    if vals.ndim == 3:
        vals = vals[..., 0]
    t = ens.times
    integral = cumulative_trapezoid(vals, t, axis=1, initial=0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        avg = integral / t
    avg[:, 0] = vals[:, 0]
    return avg


def running_max(ens: Ensemble, which: str = "X", coord: int = 0):
    return np.maximum.accumulate(_field(ens, which)[..., coord], axis=1)


def characteristic_gaps(ens: Ensemble, variance: float, freqs=(0.5, 1.0, 2.0),
                        burn_in: float = 0.5):
    """|time average of cos(u (X - mubar_T)) - exp(-u^2 variance / 2)| per path and frequency."""
    t = ens.times
    mask = t >= burn_in * t[-1]
    w = _trapezoid_weights(t[mask])
    w = w / w.sum()
    xc = (ens.X[:, mask, 0] - ens.mu_bar[:, -1, 0][:, None])
    out = np.empty((ens.n_paths, len(freqs)))
    for j, u in enumerate(freqs):
        out[:, j] = np.abs(np.cos(u * xc) @ w - math.exp(-0.5 * u * u * variance))
    return out


@dataclass(frozen=True)
class SupermartingaleReport:
    mean_rate: float
    stderr: float
    n_pairs: int
    ok: bool


def supermartingale_check(ens: Ensemble, potential, gain, r: float) -> SupermartingaleReport:
    """Mean drift of V(Y) over record pairs where D(t, Y_t) > 0.

    D(t, y) = g |grad V|^2 + (y, grad V)/(r + t) - lap V / 2 is minus the
    generator applied to V, so increments of V(Y) should have nonpositive
    mean there; the check passes when the mean rate is below three standard
    errors.  Use full-resolution records for a sharp test.
    """
    t = ens.times[:-1]
    dt = np.diff(ens.times)
    Y0, Y1 = ens.Y[:, :-1], ens.Y[:, 1:]
    grad = potential.gradient(Y0)
    D = (gain.g(t) * np.sum(grad * grad, axis=-1)
         + np.sum(Y0 * grad, axis=-1) / (r + t) - 0.5 * potential.laplacian(Y0))
    rate = (potential.value(Y1) - potential.value(Y0)) / dt
    sel = (D > 0) & np.isfinite(rate)
    n = int(np.count_nonzero(sel))
    if n < 2:
        return SupermartingaleReport(math.nan, math.nan, n, False)
    vals = rate[sel]
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(n))
    return SupermartingaleReport(mean, se, n, mean <= 3 * se)


# ---------------------------------------------------------------------------
# weak order of the tamed scheme against exact transitions


@dataclass(frozen=True)
class WeakOrderReport:
    dts: tuple
    errors: tuple
    ratios: tuple
    exact_variance: float


def _exact_step_moments(c, gain, r, t0, t1, n=16):
    """m1 = int psi ds and q = int psi^2 ds over [t0, t1], psi(s) = (r+s)/(r+t1) e^{-c(G(t1)-G(s))}."""
    x, w = np.polynomial.legendre.leggauss(n)
    half, mid = 0.5 * (t1 - t0), 0.5 * (t1 + t0)
    s = mid[:, None] + half[:, None] * x
    psi = (r + s) / (r + t1)[:, None] * np.exp(-c * (gain.G(t1)[:, None] - gain.G(s)))
    return half * (psi @ w), half * ((psi * psi) @ w), psi


def weak_order_check(potential, gain, r: float, y0: float, horizon: float, dts,
                     n_paths: int, seed: int) -> WeakOrderReport:
    """Tamed-scheme bias of Var(Y_T) for a quadratic potential, per step size.

    Each tamed path is coupled to an exact path driven by the same Brownian
    increments: over a step, the exact noise is (m1/dt) dB plus an
    independent Gaussian with the remaining variance q - m1^2/dt, where
    m1 and q are the first and second integrals of the exact propagator.
    The reported error is |Var(tamed) - Var(exact)| across the coupled
    ensemble, so sampling noise largely cancels.  ``ratios`` are successive
    error ratios, expected near 2 for a weakly first order scheme.
    """
    if potential.name != "quadratic" or potential.dimension != 1:
        raise ValueError("weak-order check needs a 1-D quadratic potential")
    c = float(potential.params["c"])
    errors, exact_var = [], math.nan
    for dt in dts:
        n_steps = int(round(horizon / dt))
        grid = np.linspace(0.0, horizon, n_steps + 1)
        t0, t1 = grid[:-1], grid[1:]
        m1, q, _ = _exact_step_moments(c, gain, r, t0, t1)
        decay = (r + t0) / (r + t1) * np.exp(-c * (gain.G(t1) - gain.G(t0)))
        resid = np.sqrt(np.maximum(q - m1 * m1 / (t1 - t0), 0.0))
        gvals = gain.g(t0)
        rngs = [path_rng(seed, k) for k in range(n_paths)]
        Y = np.full(n_paths, float(y0))
        Z = Y.copy()
        for i0 in range(0, n_steps, 1024):
            nb = min(1024, n_steps - i0)
            block = np.stack([g.standard_normal((nb, 2)) for g in rngs], axis=1)
            for j in range(nb):
                i = i0 + j
                h = t1[i] - t0[i]
                dB = math.sqrt(h) * block[j, :, 0]
                b = gvals[i] * c * Y
                Y = Y + dB - h * b / (1.0 + h * np.abs(b)) - h * Y / (r + t0[i])
                Z = decay[i] * Z + (m1[i] / h) * dB + resid[i] * block[j, :, 1]
        errors.append(abs(float(Y.var(ddof=1) - Z.var(ddof=1))))
        exact_var = float(Z.var(ddof=1))
    ratios = tuple(errors[i] / errors[i + 1] for i in range(len(errors) - 1))
    return WeakOrderReport(tuple(dts), tuple(errors), ratios, exact_var)
