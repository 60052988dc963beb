"""Exact sampling of (Y, mubar) on a time grid for a quadratic potential.

For V(x) = c|x|^2 / 2 the system

    dY = dB - a(t) Y dt,    dmubar = b(t) Y dt,
    a(t) = c g(t) + 1/(r+t),    b(t) = 1/(r+t),

is linear, so over each grid interval the pair is an affine map of its
starting value plus a centered Gaussian vector.  The propagator entries and
the noise covariance come from integrating the moment ODEs across the
interval with a stiff solver; no time-discretization error enters the
samples.  This route is independent of the quadrature formulas in
``oracle`` and serves as a cross-check on them.
"""
from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp

from .simulator import Ensemble, path_rng


def _moment_rhs(c, gain, r):
    def rhs(t, z):
        phi_yy, phi_my, p_yy, p_ym, p_mm = z
        a = c * float(gain.g(t)) + 1.0 / (r + t)
        b = 1.0 / (r + t)
        return [-a * phi_yy, b * phi_yy,
                1.0 - 2.0 * a * p_yy, b * p_yy - a * p_ym, 2.0 * b * p_ym]
    return rhs


def _jac(c, gain, r):
    def jac(t, z):
        a = c * float(gain.g(t)) + 1.0 / (r + t)
        b = 1.0 / (r + t)
        return np.array([[-a, 0, 0, 0, 0],
                         [b, 0, 0, 0, 0],
                         [0, 0, -2 * a, 0, 0],
                         [0, 0, b, -a, 0],
                         [0, 0, 0, 2 * b, 0]], dtype=float)
    return jac


def interval_transitions(c: float, gain, r: float, times) -> np.ndarray:
    """Propagator and noise covariance for each interval of ``times``.

    Returns an array of shape (len(times) - 1, 5) with columns
    phi_yy, phi_my, P_yy, P_ym, P_mm: starting from (y, m) at t_i the state
    at t_{i+1} is (phi_yy y + xi, m + phi_my y + eta), (xi, eta) ~ N(0, P).
    """
    times = np.asarray(times, dtype=float)
    rhs, jac = _moment_rhs(c, gain, r), _jac(c, gain, r)
    out = np.empty((len(times) - 1, 5))
    for i, (t0, t1) in enumerate(zip(times[:-1], times[1:])):
        sol = solve_ivp(rhs, (t0, t1), [1.0, 0.0, 0.0, 0.0, 0.0], method="LSODA",
                        jac=jac, rtol=1e-10, atol=1e-14)
        if not sol.success:
            raise RuntimeError(f"moment ODE failed on [{t0}, {t1}]: {sol.message}")
        out[i] = sol.y[:, -1]
    return out


def exact_quadratic_ensemble(potential, gain, r: float, x0, mu_bar0, times,
                             n_paths: int, seed: int, first_path: int = 0) -> Ensemble:
    """Sample ``n_paths`` exact trajectories of (Y, mubar) on ``times``.

    ``times`` must be increasing and start at 0.  Path ``k`` draws from the
    same per-path stream as the Euler simulator (``path_rng(seed, k)``), so
    any single path is reproducible on its own.
    """
    if potential.name != "quadratic":
        raise ValueError("exact sampling needs a quadratic potential")
    times = np.asarray(times, dtype=float)
    if times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise ValueError("times must start at 0 and increase strictly")
    c = float(potential.params["c"])
    d = potential.dimension
    trans = interval_transitions(c, gain, r, times)
    phi_yy, phi_my, p_yy, p_ym, p_mm = trans.T
    l11 = np.sqrt(np.maximum(p_yy, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        l21 = np.where(l11 > 0, p_ym / l11, 0.0)
    l22 = np.sqrt(np.maximum(p_mm - l21 ** 2, 0.0))

    m = len(times)
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (d,))
    mb0 = np.broadcast_to(np.asarray(mu_bar0, dtype=float), (d,))
    Y = np.empty((n_paths, m, d))
    M = np.empty((n_paths, m, d))
    Y[:, 0] = x0 - mb0
    M[:, 0] = mb0
    z = np.stack([path_rng(seed, first_path + k).standard_normal((m - 1, d, 2))
                  for k in range(n_paths)])
    for i in range(m - 1):
        xi = l11[i] * z[:, i, :, 0]
        eta = l21[i] * z[:, i, :, 0] + l22[i] * z[:, i, :, 1]
        Y[:, i + 1] = phi_yy[i] * Y[:, i] + xi
        M[:, i + 1] = M[:, i] + phi_my[i] * Y[:, i] + eta
    return Ensemble(times=times, Y=Y, mu_bar=M, seed=seed,
                    path_ids=np.arange(first_path, first_path + n_paths),
                    scheme="exact", n_steps=m - 1)
