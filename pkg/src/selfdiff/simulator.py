"""Ensemble integration of the self-interacting diffusion in (Y, mubar) form.

The process X solves dX = dB - g(t) grad V(X - mubar_t) dt where mubar_t is
the running mean of its empirical measure.  Writing Y = X - mubar gives the
Markov pair

    dY     = dB - g(t) grad V(Y) dt - Y dt / (r + t),
    dmubar = Y dt / (r + t),

which is what gets integrated; X is rebuilt as Y + mubar.

Two schemes are available on a deterministic time grid shared by all paths:

``tamed``
    Euler-Maruyama with the interaction drift b = g grad V tamed to
    b / (1 + dt |b|), step dt = dt_base / (1 + g(t)).
``local_linear``
    Exponential Euler on the linearization of the drift (the Hessian of a
    separable potential is diagonal), with step
    dt = max(dt_base / (1 + g(t)), dt_rel (r + t)).  The step grows with t,
    which makes horizons of 10^3 - 10^4 with g(t) = 1 + t affordable.

In both, mubar takes the midpoint rule for Y / (r + t) over the step.  Each
path draws its Gaussian increments from its own counter-based stream keyed
by (seed, path index), so a path's trajectory does not depend on how the
ensemble is split across workers.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

SCHEMES = ("tamed", "local_linear")
TAMING_ACTIVE = 0.1
_BLOCK = 1024


def path_rng(seed: int, path_index: int) -> np.random.Generator:
    """Independent Philox stream for one path."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(path_index),))
    return np.random.Generator(np.random.Philox(ss))


def worker_count() -> int:
    env = os.environ.get("SELFDIFF_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass
class SimConfig:
    potential: object
    gain: object
    r: float = 1.0
    x0: object = 0.0
    mu_bar0: object = 0.0
    horizon: float = 1.0
    dt_base: float = 0.01
    decimation: int = 100
    seed: int = 0
    n_paths: int = 1
    scheme: str = "tamed"
    dt_rel: float = 0.002
    noise_scale: float = 1.0

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("r must be positive")
        if not self.horizon > 0 or not self.dt_base > 0:
            raise ValueError("horizon and dt_base must be positive")
        if self.decimation < 1 or self.n_paths < 1:
            raise ValueError("decimation and n_paths must be positive integers")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        d = self.potential.dimension
        self.x0 = np.broadcast_to(np.asarray(self.x0, dtype=float), (d,)).copy()
        self.mu_bar0 = np.broadcast_to(np.asarray(self.mu_bar0, dtype=float), (d,)).copy()

    @property
    def y0(self):
        return self.x0 - self.mu_bar0

    def stability_number(self) -> float:
        """dt_base * g(T) * Lipschitz bound of grad V on a box around the relevant region."""
        locs = [abs(v) for cp in self.potential.critical_points for v in cp.location]
        box = 1.0 + max([float(np.max(np.abs(self.y0)))] + locs) + 3.0
        g_end = float(self.gain.g(self.horizon))
        return self.dt_base * g_end * self.potential.lipschitz_bound(box)


def time_grid(cfg: SimConfig) -> np.ndarray:
    """Deterministic step grid from 0 to the horizon (last step clipped)."""
    g = cfg.gain.g
    T = float(cfg.horizon)
    ts = [0.0]
    t = 0.0
    while t < T:
        dt = cfg.dt_base / (1.0 + float(g(t)))
        if cfg.scheme == "local_linear":
            dt = max(dt, cfg.dt_rel * (cfg.r + t))
        t = T if t + dt >= T * (1.0 - 1e-12) else t + dt
        ts.append(t)
    return np.array(ts)


def step_y(potential, gain, r, t, Y, mu_bar, dt, noise):
    """One tamed Euler-Maruyama step of (Y, mubar); ``noise`` has covariance dt Id.

    Returns ``(t + dt, Y', mubar')``.
    """
    Y = np.asarray(Y, dtype=float)
    b = float(gain.g(t)) * potential.gradient(Y)
    bn = np.linalg.norm(b, axis=-1, keepdims=True)
    Y1 = Y + noise - dt * b / (1.0 + dt * bn) - dt * Y / (r + t)
    M1 = mu_bar + dt * 0.5 * (Y + Y1) / (r + t + 0.5 * dt)
    return t + dt, Y1, M1


def _phi1(x):
    """(1 - exp(-x)) / x, equal to 1 at 0."""
    small = np.abs(x) < 1e-8
    xs = np.where(small, 1.0, x)
    return np.where(small, 1.0 - 0.5 * x, -np.expm1(-xs) / xs)


def _ll_step(potential, gt, r, t, Y, dt, z):
    j = gt * potential.hessian_diag(Y) + 1.0 / (r + t)
    j = np.maximum(j, -1.0 / dt)
    f = gt * potential.gradient(Y) + Y / (r + t)
    return Y - dt * _phi1(j * dt) * f + np.sqrt(dt * _phi1(2.0 * j * dt)) * z


@dataclass
class PathRecord:
    times: np.ndarray
    Y: np.ndarray
    mu_bar: np.ndarray
    seed_stream_id: int
    blown: bool = False

    @property
    def X(self):
        return self.Y + self.mu_bar

    @property
    def terminal_Y(self):
        return self.Y[-1]

    @property
    def mu_bar_integral(self):
        """int_0^T Y_s ds / (r + s) as accumulated by the integrator."""
        return self.mu_bar[-1] - self.mu_bar[0]


@dataclass
class Ensemble:
    """Recorded trajectories, arrays shaped (n_paths, n_records, d)."""

    times: np.ndarray
    Y: np.ndarray
    mu_bar: np.ndarray
    seed: int = 0
    path_ids: np.ndarray | None = None
    scheme: str = "tamed"
    n_steps: int = 0
    blown: np.ndarray | None = None
    taming_fraction: float = 0.0
    stability_number: float = math.nan
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.path_ids is None:
            self.path_ids = np.arange(self.Y.shape[0])
        if self.blown is None:
            self.blown = ~np.isfinite(self.Y[:, -1]).all(axis=-1)

    @property
    def X(self):
        return self.Y + self.mu_bar

    @property
    def n_paths(self):
        return self.Y.shape[0]

    @property
    def dimension(self):
        return self.Y.shape[2]

    @property
    def blowups(self) -> int:
        return int(np.count_nonzero(self.blown))

    @property
    def terminal_Y(self):
        return self.Y[:, -1]

    def path(self, k: int) -> PathRecord:
        return PathRecord(self.times, self.Y[k], self.mu_bar[k],
                          int(self.path_ids[k]), bool(self.blown[k]))

    def select_times(self, mask) -> "Ensemble":
        return Ensemble(self.times[mask], self.Y[:, mask], self.mu_bar[:, mask], self.seed,
                        self.path_ids, self.scheme, self.n_steps, self.blown,
                        self.taming_fraction, self.stability_number, dict(self.meta))

    @staticmethod
    def concat(parts) -> "Ensemble":
        parts = list(parts)
        first = parts[0]
        n = [p.n_paths for p in parts]
        tf = sum(p.taming_fraction * k for p, k in zip(parts, n)) / sum(n)
        return Ensemble(first.times, np.concatenate([p.Y for p in parts]),
                        np.concatenate([p.mu_bar for p in parts]), first.seed,
                        np.concatenate([p.path_ids for p in parts]), first.scheme,
                        first.n_steps, np.concatenate([p.blown for p in parts]), tf,
                        first.stability_number, dict(first.meta))


def _simulate_block(cfg: SimConfig, indices, grid) -> Ensemble:
    pot, gain, r = cfg.potential, cfg.gain, cfg.r
    n, d = len(indices), pot.dimension
    n_steps = len(grid) - 1
    rec_idx = np.arange(0, n_steps + 1, cfg.decimation)
    if rec_idx[-1] != n_steps:
        rec_idx = np.append(rec_idx, n_steps)
    Y = np.tile(cfg.y0, (n, 1))
    M = np.tile(cfg.mu_bar0, (n, 1))
    Yr = np.empty((n, len(rec_idx), d))
    Mr = np.empty_like(Yr)
    Yr[:, 0], Mr[:, 0] = Y, M
    noisy = cfg.noise_scale != 0.0
    rngs = [path_rng(cfg.seed, k) for k in indices] if noisy else None
    gvals = gain.g(grid[:-1])
    active = 0
    nxt = 1
    z = None
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n_steps):
            if noisy and i % _BLOCK == 0:
                nb = min(_BLOCK, n_steps - i)
                z = np.stack([g.standard_normal((nb, d)) for g in rngs], axis=1)
            t, dt, gt = grid[i], grid[i + 1] - grid[i], gvals[i]
            zi = z[i % _BLOCK] * cfg.noise_scale if noisy else 0.0
            if cfg.scheme == "tamed":
                b = gt * pot.gradient(Y)
                bn = np.sqrt(np.sum(b * b, axis=1, keepdims=True))
                active += int(np.count_nonzero(dt * bn > TAMING_ACTIVE))
                Y1 = Y + math.sqrt(dt) * zi - dt * b / (1.0 + dt * bn) - dt * Y / (r + t)
            else:
                Y1 = _ll_step(pot, gt, r, t, Y, dt, zi)
            M = M + dt * 0.5 * (Y + Y1) / (r + t + 0.5 * dt)
            Y = Y1
            if nxt < len(rec_idx) and rec_idx[nxt] == i + 1:
                Yr[:, nxt], Mr[:, nxt] = Y, M
                nxt += 1
    blown = ~(np.isfinite(Yr).all(axis=(1, 2)) & np.isfinite(Mr).all(axis=(1, 2)))
    tf = active / max(1, n * n_steps) if cfg.scheme == "tamed" else 0.0
    return Ensemble(grid[rec_idx], Yr, Mr, cfg.seed, np.asarray(indices), cfg.scheme,
                    n_steps, blown, tf, cfg.stability_number())


def simulate_ensemble(cfg: SimConfig, workers: int | None = None,
                      first_path: int = 0) -> Ensemble:
    """Simulate paths ``first_path .. first_path + n_paths - 1``.

    Paths are split into contiguous chunks over ``workers`` processes
    (default: ``SELFDIFF_THREADS`` or the CPU count).  The result does not
    depend on the split.
    """
    grid = time_grid(cfg)
    indices = np.arange(first_path, first_path + cfg.n_paths)
    workers = min(workers or worker_count(), cfg.n_paths)
    if workers <= 1:
        return _simulate_block(cfg, indices, grid)
    chunks = np.array_split(indices, workers)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_simulate_block, [cfg] * workers, chunks, [grid] * workers))
    return Ensemble.concat(parts)


def simulate_path(cfg: SimConfig, path_index: int) -> PathRecord:
    """Simulate a single path; identical to row ``path_index`` of the ensemble."""
    if not 0 <= path_index:
        raise ValueError("path_index must be nonnegative")
    ens = _simulate_block(cfg, np.array([path_index]), time_grid(cfg))
    return ens.path(0)


# ---------------------------------------------------------------------------
# deterministic gradient flow


def _rk4(p, y, h):
    k1 = -p.gradient(y)
    k2 = -p.gradient(y + 0.5 * h * k1)
    k3 = -p.gradient(y + 0.5 * h * k2)
    k4 = -p.gradient(y + h * k3)
    return y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_flow(p, y0, h, tol: float = 1e-8, first_step: float = 1e-2):
    """Gradient flow phi_h(y0) of dphi/dh = -grad V(phi).

    Classic RK4 with step doubling: the difference between one full step and
    two half steps estimates the local error (divided by 15), which is kept
    below ``tol`` per unit time.  ``y0`` may be a batch of points (..., d);
    ``h`` may be a scalar or an increasing array of durations, in which case
    the states at each duration are stacked along a new leading axis.
    """
    y = np.array(y0, dtype=float)
    hs = np.atleast_1d(np.asarray(h, dtype=float))
    if np.any(hs < 0) or np.any(np.diff(hs) < 0):
        raise ValueError("durations must be nonnegative and increasing")
    out = []
    t, step = 0.0, first_step
    for target in hs:
        while t < target:
            step = min(step, target - t)
            full = _rk4(p, y, step)
            half = _rk4(p, _rk4(p, y, 0.5 * step), 0.5 * step)
            err = float(np.max(np.abs(half - full))) / 15.0 if y.size else 0.0
            if err <= tol * step or step < 1e-13:
                y = half + (half - full) / 15.0
                t += step
                grow = 2.0 if err == 0 else min(2.0, 0.9 * (tol * step / err) ** 0.25)
                step *= max(grow, 0.5)
            else:
                step *= max(0.1, 0.9 * (tol * step / err) ** 0.25)
        out.append(y.copy())
    return out[0] if np.ndim(h) == 0 else np.stack(out)
