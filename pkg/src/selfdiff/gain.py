"""Gain schedules g(t), their primitive G, its inverse and the regime classifier.

The schedule multiplies the interaction drift.  Its growth decides the long
time behaviour of the self-interacting diffusion: a bounded gain gives
diffusive behaviour, a gain with ``log G(t) / g(t) -> 0`` forces almost sure
convergence, logarithmic gains sit on the boundary.

``G`` is exact where a closed form exists (constant gain, power-log gain with
``beta = 0``).  Otherwise it is assembled from adaptive-quadrature segment
integrals between cached checkpoints ``tau_k = 1.05**k - 1`` plus a 32-node
Gauss-Legendre partial segment.
"""
from __future__ import annotations

import enum
import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

_GL_X, _GL_W = np.polynomial.legendre.leggauss(32)
_CHECKPOINT_RATIO = 1.05
INVERSE_TOL = 1e-10


class UnsupportedRegimeError(ValueError):
    """Raised when an operation needs a gain regime the schedule does not have."""


class GainSchedule:
    """Base class: subclasses provide ``g`` and ``g_prime`` (vectorized).

    Instances are immutable apart from the lazily extended checkpoint cache,
    which is guarded by a lock so concurrent readers see a consistent table.
    """

    family = "custom"

    def __init__(self, **params):
        self.params = dict(params)
        self._lock = threading.Lock()
        self._tau = np.array([0.0])
        self._cum = np.array([0.0])

    # subclasses override
    def g(self, t):
        raise NotImplementedError

    def g_prime(self, t):
        raise NotImplementedError

    def _closed_form_G(self, t):
        return None

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"{type(self).__name__}({args})"

    # ------------------------------------------------------------------
    def _validate(self):
        t = np.concatenate([[0.0], np.geomspace(1e-6, 1e8, 600)])
        with np.errstate(all="ignore"):
            gv = np.asarray(self.g(t), dtype=float)
        if not np.all(np.isfinite(gv)):
            raise ValueError(f"{self!r}: g is not finite on [0, 1e8]")
        if np.any(gv[1:] <= 0) or gv[0] < 0:
            raise ValueError(f"{self!r}: g must be positive for t > 0")
        if np.any(np.diff(gv) < -1e-12 * (1.0 + np.abs(gv[1:]))):
            raise ValueError(f"{self!r}: g must be nondecreasing")

    def _extend(self, t_max: float):
        with self._lock:
            tau, cum = self._tau, self._cum
            if tau[-1] >= t_max:
                return
            k0 = len(tau)
            k1 = max(k0 + 8, int(math.ceil(math.log1p(t_max) / math.log(_CHECKPOINT_RATIO))) + 2)
            new_tau = _CHECKPOINT_RATIO ** np.arange(k0, k1) - 1.0
            edges = np.concatenate([[tau[-1]], new_tau])
            pieces = np.empty(len(new_tau))
            for i in range(len(new_tau)):
                val, _ = integrate.quad(self.g, edges[i], edges[i + 1],
                                        epsabs=0.0, epsrel=1e-13, limit=200)
                pieces[i] = val
            # publish a fully built table in one assignment per array
            self._cum = np.concatenate([cum, cum[-1] + np.cumsum(pieces)])
            self._tau = np.concatenate([tau, new_tau])

    def _partial(self, a, b):
        """Vectorized 32-point Gauss-Legendre integral of g over [a, b]."""
        half = 0.5 * (b - a)
        mid = 0.5 * (b + a)
        nodes = mid[:, None] + half[:, None] * _GL_X[None, :]
        return half * (self.g(nodes) @ _GL_W)

    def G(self, t):
        """Primitive G(t) = int_0^t g(s) ds."""
        scalar = np.ndim(t) == 0
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("G is defined for t >= 0")
        closed = self._closed_form_G(t)
        if closed is not None:
            return float(closed) if scalar else closed
        flat = t.ravel()
        self._extend(float(flat.max(initial=0.0)))
        tau, cum = self._tau, self._cum
        idx = np.searchsorted(tau, flat, side="right") - 1
        out = cum[idx].copy()
        first = idx == 0
        if np.any(~first):
            sel = ~first
            out[sel] += self._partial(tau[idx[sel]], flat[sel])
        for j in np.flatnonzero(first):
            # g may have an integrable derivative singularity at 0
            out[j] += integrate.quad(self.g, 0.0, flat[j], epsabs=0.0, epsrel=1e-13)[0]
        out = out.reshape(t.shape)
        return float(out) if scalar else out

    def G_inv(self, u):
        """Generalized inverse inf{t >= 0 : G(t) >= u}."""
        scalar = np.ndim(u) == 0
        u = np.asarray(u, dtype=float)
        if np.any(u < 0):
            raise ValueError("G_inv is defined for u >= 0")
        flat = u.ravel()
        umax = float(flat.max(initial=0.0))
        t_hi = 1.0
        while float(self.G(t_hi)) < umax:
            t_hi *= 4.0
        self._extend(t_hi)
        tau = self._tau
        tab = self.G(tau) if self._closed_form_G(tau) is not None else self._cum
        k = np.clip(np.searchsorted(tab, flat, side="left") - 1, 0, len(tau) - 2)
        lo, hi = tau[k].copy(), tau[k + 1].copy()
        t = 0.5 * (lo + hi)
        tol = INVERSE_TOL * (1.0 + flat)
        for _ in range(200):
            r = self.G(t) - flat
            done = np.abs(r) <= tol
            if np.all(done):
                break
            lo = np.where(r < 0, t, lo)
            hi = np.where(r > 0, t, hi)
            with np.errstate(divide="ignore", invalid="ignore"):
                newton = t - r / self.g(t)
            bad = ~np.isfinite(newton) | (newton <= lo) | (newton >= hi)
            t = np.where(done, t, np.where(bad, 0.5 * (lo + hi), newton))
        t = np.where(flat == 0, 0.0, t)
        return float(t[0]) if scalar else t.reshape(u.shape)

    def kappa(self, r: float, t):
        """Time-change rate (r + G^-1(t)) g(G^-1(t))."""
        s = self.G_inv(t)
        return (r + s) * self.g(s)


class ConstantGain(GainSchedule):
    family = "constant"

    def __init__(self, g0: float = 1.0):
        if not g0 > 0:
            raise ValueError("constant gain must be positive")
        super().__init__(g0=float(g0))
        self.g0 = float(g0)
        self._validate()

    def g(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.g0)

    def g_prime(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def _closed_form_G(self, t):
        return self.g0 * t

    def G_inv(self, u):
        if np.any(np.asarray(u) < 0):
            raise ValueError("G_inv is defined for u >= 0")
        return u / self.g0


class LogGrowthGain(GainSchedule):
    """g(t) = g0 + a log(1 + t)."""

    family = "log_growth"

    def __init__(self, a: float = 1.0, g0: float = 0.0):
        if not a > 0 or g0 < 0:
            raise ValueError("log-growth gain needs a > 0 and g0 >= 0")
        super().__init__(a=float(a), g0=float(g0))
        self.a, self.g0 = float(a), float(g0)
        self._validate()

    def g(self, t):
        return self.g0 + self.a * np.log1p(t)

    def g_prime(self, t):
        return self.a / (1.0 + np.asarray(t, dtype=float))


class PowerLogGain(GainSchedule):
    """g(t) = g0 + a t**alpha log(1 + t)**beta."""

    family = "power_log"

    def __init__(self, alpha: float, beta: float = 0.0, a: float = 1.0, g0: float = 1.0):
        if alpha < 0 or beta < 0 or not a > 0 or g0 < 0:
            raise ValueError("power-log gain needs alpha, beta, g0 >= 0 and a > 0")
        if g0 == 0 and alpha == 0 and beta == 0:
            g0 = 0.0  # g == a, still positive
        super().__init__(alpha=float(alpha), beta=float(beta), a=float(a), g0=float(g0))
        self.alpha, self.beta, self.a, self.g0 = float(alpha), float(beta), float(a), float(g0)
        self._validate()

    def g(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            core = np.power(t, self.alpha) * np.power(np.log1p(t), self.beta)
        return self.g0 + self.a * np.where(t > 0, core, 1.0 if self.alpha == self.beta == 0 else 0.0)

    def g_prime(self, t):
        t = np.asarray(t, dtype=float)
        al, be = self.alpha, self.beta
        with np.errstate(divide="ignore", invalid="ignore"):
            lg = np.log1p(t)
            d = 0.0
            if al > 0:
                d = d + al * np.power(t, al - 1) * np.power(lg, be)
            if be > 0:
                d = d + be * np.power(t, al) * np.power(lg, be - 1) / (1.0 + t)
        return self.a * np.nan_to_num(np.asarray(d + 0.0 * t, dtype=float), nan=0.0)

    def _closed_form_G(self, t):
        if self.beta != 0:
            return None
        return self.g0 * t + self.a * np.power(t, self.alpha + 1) / (self.alpha + 1)


class CustomGain(GainSchedule):
    """User supplied vectorized ``g`` and ``g_prime`` (module-level callables so the schedule pickles)."""

    family = "custom"

    def __init__(self, g, g_prime, name: str = "custom"):
        super().__init__(name=name)
        self._g, self._gp = g, g_prime
        self._validate()

    def g(self, t):
        return np.asarray(self._g(np.asarray(t, dtype=float)), dtype=float) + 0.0 * np.asarray(t)

    def g_prime(self, t):
        return np.asarray(self._gp(np.asarray(t, dtype=float)), dtype=float) + 0.0 * np.asarray(t)


def make_schedule(family: str, **params) -> GainSchedule:
    """Build a schedule from a family name and its parameters.

    >>> make_schedule("power_log", alpha=1.0).G(2.0)
    4.0
    """
    family = family.lower()
    if family == "constant":
        return ConstantGain(params.get("g0", 1.0))
    if family == "log_growth":
        return LogGrowthGain(params.get("a", 1.0), params.get("g0", 0.0))
    if family == "power_log":
        if "alpha" not in params:
            raise ValueError("power_log gain needs alpha")
        return PowerLogGain(params["alpha"], params.get("beta", 0.0),
                            params.get("a", 1.0), params.get("g0", 1.0))
    if family == "custom":
        return CustomGain(params["g"], params["g_prime"], params.get("name", "custom"))
    raise ValueError(f"unknown gain family {family!r}")


# ---------------------------------------------------------------------------
# regime classification


class Regime(str, enum.Enum):
    AS_CONVERGENT = "ASConvergent"
    BOUNDED_OSCILLATION = "BoundedOscillation"
    PROB_CONVERGENT = "ProbConvergent"
    DIFFUSIVE = "Diffusive"
    OPEN = "OpenRegime"


@dataclass(frozen=True)
class RegimeReport:
    """Estimated asymptotics of a schedule.

    ``lim_g`` is ``inf`` when g appears unbounded.  ``ratio_logG_g_kind`` is
    one of ``"zero"``, ``"finite"``, ``"unbounded"`` or ``"inconclusive"``.
    """

    lim_g: float
    ratio_gprime_g2: float
    ratio_gprime_g2_vanishes: bool
    ratio_logG_g: float
    ratio_logG_g_kind: str
    classification: Regime
    notes: tuple[str, ...] = field(default=())


@dataclass(frozen=True)
class _Trend:
    state: str  # "converges", "diverges" or "inconclusive"
    limit: float


def _trend(v1, v2, v3, q_conv=0.5, q_div=0.9) -> _Trend:
    """Aitken extrapolation from values at three geometrically spaced times.

    The increment ratio q decides: below ``q_conv`` the sequence is taken to
    converge, above ``q_div`` to diverge, in between nothing is claimed.
    """
    d1, d2 = v2 - v1, v3 - v2
    scale = max(abs(v1), abs(v2), abs(v3), 1e-300)
    if abs(d1) <= 1e-14 * scale:
        if abs(d2) <= 1e-12 * scale:
            return _Trend("converges", v3)
        return _Trend("inconclusive", math.nan)
    q = d2 / d1
    if abs(q) < q_conv:
        return _Trend("converges", v3 - d2 * d2 / (d2 - d1))
    if q > q_div:
        return _Trend("diverges", math.copysign(math.inf, d2))
    return _Trend("inconclusive", math.nan)


def classify_regime(s: GainSchedule, horizon: float = 1e6, spacing: float = 10.0) -> RegimeReport:
    """Classify a schedule by extrapolating g, g'/g**2 and log G / g.

    The three quantities are sampled at the log-spaced times
    ``horizon / spacing**2``, ``horizon / spacing`` and ``horizon``.  g and
    g'/g**2 are extrapolated by Aitken's delta-squared process, log G / g by
    polynomial extrapolation in 1/log t, accepted when the quadratic and
    linear extrapolants agree within 10%.  A limit counts as zero when it is
    within 10% of the largest value seen on the geometric grid ``1.05**k``;
    anything that neither converges nor grows monotonically is reported as
    OpenRegime.
    """
    samples = _CHECKPOINT_RATIO ** np.arange(0, int(math.log(horizon) / math.log(_CHECKPOINT_RATIO)) + 1)
    if len(samples) < 50:
        raise ValueError("horizon too short: need at least 50 geometric sample times")
    t3 = np.array([horizon / spacing ** 2, horizon / spacing, horizon])
    notes = []

    g3 = s.g(t3)
    tg = _trend(*g3)
    g_finite = tg.state == "converges"
    lim_g = {"converges": tg.limit, "diverges": math.inf}.get(tg.state, math.nan)
    if tg.state == "inconclusive":
        notes.append("growth of g is too slow to call at this horizon")

    gs = s.g(samples)
    gp2 = s.g_prime(samples) / gs ** 2
    tr = _trend(*(s.g_prime(t3) / g3 ** 2))
    band = 0.1 * float(np.max(np.abs(gp2)))
    gp_vanish = tr.state == "converges" and abs(tr.limit) <= band
    if not gp_vanish:
        notes.append("g'/g^2 does not appear to vanish")

    Gs = s.G(samples)
    mask = Gs > math.e
    rho_max = float(np.max(np.log(Gs[mask]) / gs[mask]))
    rho3 = np.log(s.G(t3)) / g3
    # log G / g typically approaches its limit like 1/log t, so extrapolate
    # in u = 1/log t (quadratic through three points, linear through two)
    u = 1.0 / np.log(t3)
    quad = float(np.polyfit(u, rho3, 2)[-1])
    lin = float(np.polyfit(u[1:], rho3[1:], 1)[-1])
    decreasing = bool(np.all(np.diff(rho3) < 0))
    if decreasing and rho3[-1] <= 0.1 * rho_max:
        kind, rho_lim = "zero", 0.0
    elif quad > 0 and abs(quad - lin) <= 0.1 * abs(quad):
        kind, rho_lim = ("zero", 0.0) if quad <= 0.1 * rho_max else ("finite", quad)
    elif np.all(np.diff(rho3) > 0):
        kind, rho_lim = "unbounded", math.inf
    else:
        kind, rho_lim = "inconclusive", math.nan

    if tg.state == "inconclusive":
        regime = Regime.OPEN
    elif g_finite:
        regime = Regime.DIFFUSIVE if gp_vanish and lim_g > 0 else Regime.OPEN
    elif not gp_vanish or kind == "inconclusive":
        regime = Regime.OPEN
    elif kind == "zero":
        regime = Regime.AS_CONVERGENT
    elif kind == "finite":
        regime = Regime.BOUNDED_OSCILLATION
    else:
        regime = Regime.PROB_CONVERGENT
    if regime is Regime.OPEN:
        notes.append("trends inconclusive at this horizon; not classified")
    return RegimeReport(
        lim_g=float(lim_g),
        ratio_gprime_g2=float(tr.limit),
        ratio_gprime_g2_vanishes=bool(gp_vanish),
        ratio_logG_g=float(rho_lim),
        ratio_logG_g_kind=kind,
        classification=regime,
        notes=tuple(notes),
    )


def require_finite_limit(s: GainSchedule, horizon: float = 1e6) -> float:
    """Return lim g for a schedule with a finite positive limit, else raise."""
    rep = classify_regime(s, horizon)
    if rep.classification is not Regime.DIFFUSIVE:
        raise UnsupportedRegimeError(
            f"{s!r} has no finite positive limit with vanishing g'/g^2 "
            f"(classified {rep.classification.value})")
    return rep.lim_g

