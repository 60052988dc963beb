"""Interaction potentials and numeric checks of their standing hypotheses.

Every potential handled here is a separable polynomial

    V(x) = sum_i p(x_i),    x in R^d,

with ``p`` a real polynomial of even degree and positive leading coefficient.
This covers the isotropic quadratic c|x|^2/2 in any dimension and 1-D
multi-well polynomials such as (x^2 - 1)^2 / 4.  Separability keeps the
Hessian diagonal, which the local-linearization integrator relies on.

A multi-well ``p`` lifted to d >= 2 is not convex outside any compact set
(the Hessian stays negative along a coordinate axis through a well), so
non-convex polynomials are only accepted in dimension one.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P

DEGENERACY_TOL = 1e-8
CRITICAL_GRAD_TOL = 1e-10


class CriticalKind(str, enum.Enum):
    LOCAL_MIN = "local_min"
    LOCAL_MAX = "local_max"
    SADDLE = "saddle"


@dataclass(frozen=True, eq=False)
class CriticalPoint:
    """A non-degenerate critical point of V.

    For a local minimum ``taylor_constant`` is a constant ``a > 0`` such that
    ``(y - m, grad V(y)) >= a |y - m|^2`` whenever ``|y - m| <= valid_radius``.
    For unstable points it is the magnitude of the most negative Hessian
    eigenvalue, ``valid_radius`` is a radius on which the curvature along
    ``unstable_direction`` stays negative.
    """

    location: np.ndarray
    kind: CriticalKind
    taylor_constant: float
    valid_radius: float
    hessian_eigenvalues: np.ndarray
    unstable_direction: np.ndarray | None = None

    @property
    def is_stable(self) -> bool:
        return self.kind is CriticalKind.LOCAL_MIN


def classify_hessian(eigenvalues) -> CriticalKind:
    """Classify a critical point from its Hessian spectrum."""
    eig = np.asarray(eigenvalues, dtype=float)
    if np.any(np.abs(eig) < DEGENERACY_TOL):
        raise ValueError(f"degenerate critical point (Hessian eigenvalues {eig})")
    if np.all(eig > 0):
        return CriticalKind.LOCAL_MIN
    if np.all(eig < 0):
        return CriticalKind.LOCAL_MAX
    return CriticalKind.SADDLE


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    """Immutable description of a separable polynomial potential.

    Points are arrays whose last axis has length ``dimension``; every method
    broadcasts over leading axes.
    """

    name: str
    dimension: int
    coefficients: tuple[float, ...]
    critical_points: tuple[CriticalPoint, ...]
    convexity_constant: float
    chi_support_radius: float
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        object.__setattr__(self, "_c0", c)
        object.__setattr__(self, "_c1", P.polyder(c))
        object.__setattr__(self, "_c2", P.polyder(c, 2))

    def __getstate__(self):
        return {k: v for k, v in self.__dict__.items() if not k.startswith("_c")}

    def __setstate__(self, state):
        self.__dict__.update(state)
        self.__post_init__()

    # scalar profile p and its derivatives
    def profile(self, u):
        return P.polyval(u, self._c0)

    def profile_prime(self, u):
        return P.polyval(u, self._c1)

    def profile_second(self, u):
        return P.polyval(u, self._c2)

    def value(self, x):
        return self.profile(np.asarray(x, dtype=float)).sum(axis=-1)

    def gradient(self, x):
        return self.profile_prime(np.asarray(x, dtype=float))

    def hessian_diag(self, x):
        return self.profile_second(np.asarray(x, dtype=float))

    def hessian(self, x):
        h = self.hessian_diag(x)
        return h[..., :, None] * np.eye(self.dimension)

    def laplacian(self, x):
        return self.hessian_diag(x).sum(axis=-1)

    @property
    def minima(self) -> tuple[CriticalPoint, ...]:
        return tuple(cp for cp in self.critical_points if cp.is_stable)

    @property
    def unstable_points(self) -> tuple[CriticalPoint, ...]:
        return tuple(cp for cp in self.critical_points if not cp.is_stable)

    def critical_locations(self) -> np.ndarray:
        return np.array([cp.location for cp in self.critical_points])

    def min_critical_separation(self) -> float:
        locs = self.critical_locations()
        if len(locs) < 2:
            return math.inf
        diff = locs[:, None, :] - locs[None, :, :]
        dist = np.linalg.norm(diff, axis=-1)
        return float(dist[np.triu_indices(len(locs), 1)].min())

    def lipschitz_bound(self, radius: float) -> float:
        """Upper bound of |p''| on [-radius, radius] (the Lipschitz constant of grad V on the box)."""
        u = np.linspace(-radius, radius, 4001)
        return float(np.abs(self.profile_second(u)).max())


# ---------------------------------------------------------------------------
# construction


def _check_profile(c: np.ndarray) -> np.ndarray:
    c = np.trim_zeros(np.asarray(c, dtype=float), "b")
    if c.size == 0 or not np.any(c[1:]):
        raise ValueError("potential is constant; no interaction to simulate")
    deg = c.size - 1
    if deg < 2 or deg % 2:
        raise ValueError(f"polynomial degree must be even and >= 2, got {deg}")
    if c[-1] <= 0:
        raise ValueError("leading coefficient must be positive")
    return c


def _newton_roots(c1: np.ndarray, c2: np.ndarray, seeds: np.ndarray) -> list[float]:
    """Refine real roots of p' from a grid of starting points."""
    x = np.asarray(seeds, dtype=float).copy()
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for _ in range(200):
            d2 = P.polyval(x, c2)
            x = x - P.polyval(x, c1) / d2
    ok = np.isfinite(x)
    x = np.sort(x[ok])
    scale = 1.0 + np.abs(c1).max()
    roots: list[float] = []
    for xi in x:
        if abs(P.polyval(xi, c1)) > CRITICAL_GRAD_TOL * scale:
            continue
        if roots and abs(xi - roots[-1]) < 1e-7 * (1 + abs(xi)):
            continue
        roots.append(float(xi))
    return roots


def _default_seeds(c1: np.ndarray) -> np.ndarray:
    # Cauchy bound on the roots of p'
    bound = 1.0 + np.abs(c1[:-1] / c1[-1]).max()
    return np.linspace(-bound, bound, 401)


def _min_on_interval(c: np.ndarray, lo: float, hi: float) -> float:
    """Exact minimum of a polynomial on [lo, hi]."""
    cand = [lo, hi]
    dc = P.polyder(c)
    if dc.size:
        for z in P.polyroots(dc) if dc.size > 1 else []:
            if abs(z.imag) < 1e-12 and lo <= z.real <= hi:
                cand.append(z.real)
    return float(min(P.polyval(np.array(cand), c)))


def _minimum_taylor(c0: np.ndarray, m: float, radius: float) -> tuple[float, float]:
    """Largest a with p'(m+u) u >= a u^2 on |u| <= radius, shrinking radius until a > 0."""
    # coefficients of u -> p'(m + u)
    c1 = P.polyder(c0)
    deg = c1.size - 1
    shift = np.zeros(deg + 1)
    for k, ck in enumerate(c1):
        # (m + u)^k expanded
        for j in range(k + 1):
            shift[j] += ck * math.comb(k, j) * m ** (k - j)
    # p'(m) = 0, so divide by u exactly
    q = shift[1:]
    for _ in range(60):
        a = _min_on_interval(q, -radius, radius)
        if a > 0:
            return a, radius
        radius *= 0.5
    raise ValueError(f"could not certify a Taylor constant at minimum {m}")


def _inflection_distance(c2: np.ndarray, x: float, fallback: float) -> float:
    roots = [z.real for z in P.polyroots(c2) if abs(z.imag) < 1e-12] if c2.size > 1 else []
    if not roots:
        return fallback
    return float(min(abs(z - x) for z in roots))


def _convexity_split(c0: np.ndarray, dimension: int) -> tuple[float, float]:
    """Return (c, R): Hessian >= c * Id outside the ball of radius R."""
    c2 = P.polyder(c0, 2)
    if c2.size == 1:
        return float(c2[0]), 0.0
    real_roots = [z for z in P.polyroots(c2) if abs(z.imag) < 1e-12]
    if not real_roots:
        # p'' > 0 everywhere: uniformly convex
        return _min_on_interval(c2, -1e6, 1e6), 0.0
    if dimension > 1:
        raise ValueError("non-convex polynomial profiles are only supported in dimension 1")
    # Gauss-Lucas: p''' has no root beyond the largest root modulus of p'',
    # so p'' increases on [R0, inf) and decreases on (-inf, -R0].
    r0 = max(abs(z) for z in P.polyroots(c2))
    radius = float(r0 + 0.5)
    c = float(min(P.polyval(radius, c2), P.polyval(-radius, c2)))
    return c, radius


def _critical_points_1d(c0: np.ndarray, seeds) -> list[tuple[float, float]]:
    c1, c2 = P.polyder(c0), P.polyder(c0, 2)
    if seeds is None:
        seeds = _default_seeds(c1)
    roots = _newton_roots(c1, c2, np.asarray(seeds, dtype=float))
    if not roots:
        raise ValueError("no critical point found from the supplied starting grid")
    out = []
    for x in roots:
        h = float(P.polyval(x, c2))
        if abs(h) < DEGENERACY_TOL:
            raise ValueError(f"degenerate critical point at {x} (p''={h})")
        out.append((x, h))
    return out


def _build(name: str, c0, dimension: int, seeds=None, params=None) -> PotentialSpec:
    c0 = _check_profile(c0)
    if dimension < 1:
        raise ValueError("dimension must be a positive integer")
    crit_1d = _critical_points_1d(c0, seeds)
    if min(P.polyval(np.array([x for x, _ in crit_1d]), c0)) < -1e-12:
        raise ValueError("potential takes negative values")
    convexity, chi_radius = _convexity_split(c0, dimension)
    if len(crit_1d) > 1 and dimension > 1:
        raise ValueError("multi-well profiles are only supported in dimension 1")

    c2 = P.polyder(c0, 2)
    points = []
    xs = [x for x, _ in crit_1d]
    for x, h in crit_1d:
        others = [abs(x - y) for y in xs if y != x]
        half_gap = 0.5 * min(others) if others else 1.0
        loc = np.full(dimension, x)
        eig = np.full(dimension, h)
        kind = classify_hessian(eig)
        if kind is CriticalKind.LOCAL_MIN:
            a, eps0 = _minimum_taylor(c0, x, min(half_gap, 1.0))
            points.append(CriticalPoint(loc, kind, a, eps0, eig))
        else:
            eps = _inflection_distance(c2, x, half_gap)
            e = np.zeros(dimension)
            e[0] = 1.0
            points.append(CriticalPoint(loc, kind, -float(eig.min()), eps, eig, e))
    return PotentialSpec(
        name=name,
        dimension=dimension,
        coefficients=tuple(float(v) for v in c0),
        critical_points=tuple(points),
        convexity_constant=convexity,
        chi_support_radius=chi_radius,
        params=dict(params or {}),
    )


def make_quadratic(c: float, dimension: int = 1) -> PotentialSpec:
    """V(x) = c |x|^2 / 2 with a single minimum at the origin."""
    if not c > 0:
        raise ValueError(f"quadratic stiffness must be positive, got {c}")
    return _build("quadratic", [0.0, 0.0, 0.5 * c], dimension, seeds=[0.0],
                  params={"c": c, "dimension": dimension})


def make_polynomial_multiwell(coefficients=None, *, wells=None, scale: float = 1.0,
                              seeds=None, dimension: int = 1,
                              name: str = "polynomial") -> PotentialSpec:
    """Polynomial potential from ascending coefficients or from well locations.

    ``wells=(m_1, ..., m_k)`` builds ``scale * prod_i (x - m_i)^2 / 4``, whose
    minima are exactly the wells (value 0) with one maximum between
    consecutive wells.  Critical points are found by Newton refinement of
    p'(x) = 0 from ``seeds`` (a default grid spanning the Cauchy root bound is
    used when omitted) and classified from the sign of p''.
    """
    if (coefficients is None) == (wells is None):
        raise ValueError("give exactly one of coefficients or wells")
    if wells is not None:
        if scale <= 0:
            raise ValueError("scale must be positive")
        c = np.array([scale / 4.0])
        for m in wells:
            c = P.polymul(c, [m * m, -2.0 * m, 1.0])
        params = {"wells": tuple(float(m) for m in wells), "scale": scale}
    else:
        c = np.asarray(coefficients, dtype=float)
        params = {"coefficients": tuple(float(v) for v in c)}
    return _build(name, c, dimension, seeds=seeds, params=params)


def double_well() -> PotentialSpec:
    """(x^2 - 1)^2 / 4: minima at -1 and 1, maximum at 0."""
    return make_polynomial_multiwell(wells=(-1.0, 1.0), name="double_well")


def asymmetric_wells() -> PotentialSpec:
    """x^2 (x - 2)^2 / 4: minima at 0 and 2, maximum at 1."""
    return make_polynomial_multiwell(wells=(0.0, 2.0), name="asymmetric_wells")


def make_potential(name: str, **params) -> PotentialSpec:
    """Build a potential from a config name plus parameters."""
    if name == "quadratic":
        return make_quadratic(float(params.get("c", 1.0)), int(params.get("dimension", 1)))
    if name == "double_well":
        return double_well()
    if name == "asymmetric_wells":
        return asymmetric_wells()
    if name == "polynomial":
        if "wells" in params:
            return make_polynomial_multiwell(wells=params["wells"],
                                             scale=float(params.get("scale", 1.0)))
        if "coefficients" not in params:
            raise ValueError("polynomial potential needs coefficients or wells")
        return make_polynomial_multiwell(params["coefficients"],
                                         dimension=int(params.get("dimension", 1)))
    raise ValueError(f"unknown potential {name!r}")


# ---------------------------------------------------------------------------
# finite differences and hypothesis checks


def _fd_step(x):
    return 1e-4 * (1.0 + np.linalg.norm(x, axis=-1))


def finite_difference_gradient(f, x):
    """Central differences of a scalar field with step 1e-4 (1 + |x|)."""
    x = np.asarray(x, dtype=float)
    h = _fd_step(x)
    out = np.empty_like(x)
    for i in range(x.shape[-1]):
        step = np.zeros_like(x)
        step[..., i] = h
        out[..., i] = (f(x + step) - f(x - step)) / (2 * h)
    return out


def finite_difference_laplacian(gradient, x):
    """Divergence of a vector field by central differences with step 1e-4 (1 + |x|)."""
    x = np.asarray(x, dtype=float)
    h = _fd_step(x)
    total = np.zeros(x.shape[:-1])
    for i in range(x.shape[-1]):
        step = np.zeros_like(x)
        step[..., i] = h
        total = total + (gradient(x + step)[..., i] - gradient(x - step)[..., i]) / (2 * h)
    return total


@dataclass(frozen=True)
class HypothesisReport:
    """Advisory, grid-based verdicts on the standing hypotheses for V.

    A finite grid cannot certify limits; ``notes`` records what was not
    verifiable.
    """

    growth_constant: float
    laplacian_bound_ok: bool
    growth_ratio_inner: float
    growth_ratio_outer: float
    growth_ratio_unbounded: bool
    nonnegative: bool
    convex_outside: bool
    min_outer_curvature: float
    laplacian_fd_error: float
    notes: tuple[str, ...] = ()

    @property
    def all_ok(self) -> bool:
        return (self.laplacian_bound_ok and self.growth_ratio_unbounded
                and self.nonnegative and self.convex_outside)


def _shell_points(rng, d, lo, hi, n):
    if d == 1:
        r = np.linspace(lo, hi, n // 2)
        return np.concatenate([r, -r])[:, None]
    v = rng.standard_normal((n, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * rng.uniform(lo, hi, (n, 1))


def check_hypotheses(p: PotentialSpec, radius: float, samples: int = 1000,
                     seed: int = 0) -> HypothesisReport:
    """Numerically probe positivity, convexity at infinity and growth of V.

    Returns the smallest ``a`` with ``lap V <= a (1 + V)`` on the sample grid,
    the minimum of ``|grad V|^2 / V`` on the shells ``[R/4, R/2]`` and
    ``[R/2, R]`` (the growth-ratio flag passes when the outer minimum exceeds
    the inner one by half again, a finite-grid surrogate for divergence) and
    the worst Hessian quadratic form outside ``chi_support_radius``.
    """
    if samples < 100:
        raise ValueError("need at least 100 samples")
    rng = np.random.default_rng(seed)
    d = p.dimension
    if d == 1:
        grid = np.linspace(-radius, radius, samples)[:, None]
    else:
        v = rng.standard_normal((samples, d))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        grid = v * radius * rng.uniform(0, 1, (samples, 1)) ** (1.0 / d)
    vals = p.value(grid)
    lap = p.laplacian(grid)
    a = float(max(np.max(lap / (1.0 + vals)), 0.0))
    notes = []

    inner = _shell_points(rng, d, radius / 4, radius / 2, samples)
    outer = _shell_points(rng, d, radius / 2, radius, samples)

    def ratio(x):
        g = p.gradient(x)
        return float(np.min(np.sum(g * g, axis=-1) / p.value(x)))

    r_in, r_out = ratio(inner), ratio(outer)
    unbounded = r_out > 1.5 * r_in
    if not unbounded:
        notes.append("|grad V|^2 / V does not grow on the probed shells")

    far = np.concatenate([inner, outer])
    far = far[np.linalg.norm(far, axis=1) > p.chi_support_radius]
    if far.size:
        dirs = rng.standard_normal(far.shape)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        forms = np.sum(p.hessian_diag(far) * dirs * dirs, axis=1)
        min_form = float(forms.min())
    else:
        min_form = math.inf
        notes.append("no samples outside the chi support radius")
    convex = min_form >= p.convexity_constant - 1e-8

    probe = grid[:: max(1, samples // 100)]
    fd = finite_difference_laplacian(p.gradient, probe)
    fd_err = float(np.max(np.abs(fd - p.laplacian(probe)) / (1.0 + np.abs(p.laplacian(probe)))))
    notes.append("limits are probed on a finite grid only")
    return HypothesisReport(
        growth_constant=a,
        laplacian_bound_ok=bool(np.isfinite(a)),
        growth_ratio_inner=r_in,
        growth_ratio_outer=r_out,
        growth_ratio_unbounded=bool(unbounded),
        nonnegative=bool(vals.min() >= -1e-12),
        convex_outside=bool(convex),
        min_outer_curvature=min_form,
        laplacian_fd_error=fd_err,
        notes=tuple(notes),
    )
