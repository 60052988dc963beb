"""Config-driven experiment runner.

An experiment is a plain ``key = value`` text file with dotted sections::

    name = quadratic_exact_law
    potential.name = quadratic
    gain.family = constant
    sim.horizon = 5
    sim.n_paths = 10000
    sim.seed = 20240611
    diagnostics = oracle_compare

Parsing is strict: unknown keys, duplicates and malformed values raise
:class:`ConfigError` with the offending line.  A run writes into
``<output.dir>/<name>/``:

``manifest.txt``
    resolved config, package and schema versions, timestamp (the only
    non-reproducible file).
``summary.txt``
    one PASS/FAIL/INFO line per diagnostic followed by its metrics.
``ensemble_summary.csv``
    per recorded time: mean and variance of Y, mubar and X per coordinate.
``paths/path_<k>.csv``
    ``t, X_1..X_d, Y_1..Y_d, mubar_1..mubar_d`` for the first few paths.
``<diagnostic>_*.csv``, ``*_histogram.txt``
    diagnostic tables and two-column ``bin_center mass`` histograms.
``figures/*.png``
    rendered plots (skipped with ``figures=False``).
"""
from __future__ import annotations

import csv
import datetime
import io
import math
import platform
import time
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np
from scipy.stats import norm

from . import diagnostics as dg
from . import plotting
from .exact import exact_quadratic_ensemble
from .gain import make_schedule
from .oracle import QuadraticLaw, limit_measure
from .potentials import make_potential
from .simulator import SimConfig, simulate_ensemble

CSV_SCHEMA_VERSION = 1
BLOWUP_LIMIT = 1e-3
REQUIRED = object()


class ConfigError(ValueError):
    """Malformed experiment definition."""

    def __init__(self, message, line=None, key=None):
        self.line, self.key = line, key
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        super().__init__((": ".join(where) + ": " if where else "") + message)


# ---------------------------------------------------------------------------
# value parsing


def _as_bool(text):
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _split(text):
    return [p.strip() for p in text.split(",") if p.strip()]


_PARSERS = {
    "str": lambda s: s.strip(),
    "float": float,
    "int": lambda s: int(s.strip()),
    "bool": _as_bool,
    "floats": lambda s: [float(p) for p in _split(s)],
    "strs": _split,
}


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.12g}"
    if isinstance(v, (list, tuple)):
        return ", ".join(_format_value(x) for x in v)
    return str(v)


_SCHEMA = {
    "name": ("str", REQUIRED),
    "description": ("str", ""),
    "potential.name": ("str", REQUIRED),
    "potential.c": ("float", 1.0),
    "potential.dimension": ("int", 1),
    "potential.coefficients": ("floats", None),
    "potential.wells": ("floats", None),
    "potential.scale": ("float", 1.0),
    "gain.family": ("str", REQUIRED),
    "gain.alpha": ("float", None),
    "gain.beta": ("float", None),
    "gain.a": ("float", None),
    "gain.g0": ("float", None),
    "sim.r": ("float", 1.0),
    "sim.x0": ("floats", [0.0]),
    "sim.mu_bar0": ("floats", [0.0]),
    "sim.horizon": ("float", REQUIRED),
    "sim.dt_base": ("float", 0.01),
    "sim.dt_rel": ("float", 0.002),
    "sim.scheme": ("str", "tamed"),
    "sim.decimation": ("int", 100),
    "sim.seed": ("int", REQUIRED),
    "sim.n_paths": ("int", REQUIRED),
    "sim.n_records": ("int", 500),
    "sim.t_first": ("float", 0.01),
    "diagnostics": ("strs", REQUIRED),
    "output.dir": ("str", "runs"),
    "output.paths": ("int", 5),
    "output.figures": ("bool", True),
    "report.version": ("int", 1),
}


@dataclass
class ExperimentConfig:
    values: dict
    diag_params: dict
    lines: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def name(self):
        return self.values["name"]

    @property
    def diagnostics(self):
        return self.values["diagnostics"]

    def resolved_lines(self):
        out = [f"{k} = {_format_value(v)}" for k, v in sorted(self.values.items())
               if v is not None]
        for d in self.diagnostics:
            for k, v in sorted(self.diag_params[d].items()):
                out.append(f"diag.{d}.{k} = {_format_value(v)}")
        return out


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a key=value experiment definition."""
    raw, lines = {}, {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError("expected 'key = value'", lineno)
        key, value = (p.strip() for p in stripped.split("=", 1))
        if not key:
            raise ConfigError("empty key", lineno)
        if key in raw:
            raise ConfigError("duplicate key", lineno, key)
        raw[key], lines[key] = value, lineno

    values = {}
    diag_raw = {}
    for key, value in raw.items():
        if key.startswith("diag."):
            diag_raw[key] = value
            continue
        if key not in _SCHEMA:
            raise ConfigError("unknown key", lines[key], key)
        kind, _ = _SCHEMA[key]
        try:
            values[key] = _PARSERS[kind](value)
        except ValueError as exc:
            raise ConfigError(f"bad {kind} value {value!r} ({exc})", lines[key], key) from None
    for key, (kind, default) in _SCHEMA.items():
        if key not in values:
            if default is REQUIRED:
                raise ConfigError("missing required key", None, key)
            values[key] = default

    if values["sim.scheme"] not in ("tamed", "local_linear", "exact"):
        raise ConfigError("scheme must be tamed, local_linear or exact",
                          lines.get("sim.scheme"), "sim.scheme")
    for d in values["diagnostics"]:
        if d not in DIAGNOSTICS:
            raise ConfigError(f"unknown diagnostic {d!r} (known: {', '.join(sorted(DIAGNOSTICS))})",
                              lines.get("diagnostics"), "diagnostics")

    diag_params = {d: {} for d in values["diagnostics"]}
    for key, value in diag_raw.items():
        parts = key.split(".")
        if len(parts) != 3 or parts[1] not in diag_params:
            raise ConfigError("unknown key (diag.<selected diagnostic>.<parameter>)",
                              lines[key], key)
        schema = DIAGNOSTICS[parts[1]].params
        if parts[2] not in schema:
            raise ConfigError("unknown diagnostic parameter", lines[key], key)
        kind, _ = schema[parts[2]]
        try:
            diag_params[parts[1]][parts[2]] = _PARSERS[kind](value)
        except ValueError as exc:
            raise ConfigError(f"bad {kind} value {value!r} ({exc})", lines[key], key) from None
    for d in diag_params:
        for k, (_, default) in DIAGNOSTICS[d].params.items():
            diag_params[d].setdefault(k, default)
    return ExperimentConfig(values, diag_params, lines)


def load_config(source: str) -> ExperimentConfig:
    """Parse a canned experiment name or a config file path."""
    if source in CANNED:
        return parse_config(CANNED[source][1])
    path = Path(source)
    if not path.exists():
        raise ConfigError(f"no such config file or canned experiment: {source}")
    return parse_config(path.read_text())


# ---------------------------------------------------------------------------
# model construction


def build_potential(cfg: ExperimentConfig):
    name = cfg["potential.name"]
    params = {"c": cfg["potential.c"], "dimension": cfg["potential.dimension"]}
    if cfg["potential.coefficients"] is not None:
        params["coefficients"] = cfg["potential.coefficients"]
    if cfg["potential.wells"] is not None:
        params["wells"] = cfg["potential.wells"]
        params["scale"] = cfg["potential.scale"]
    try:
        return make_potential(name, **params)
    except ValueError as exc:
        raise ConfigError(str(exc), cfg.lines.get("potential.name"), "potential.name") from None


def build_gain(cfg: ExperimentConfig):
    params = {k.split(".")[1]: cfg[k] for k in ("gain.alpha", "gain.beta", "gain.a", "gain.g0")
              if cfg[k] is not None}
    try:
        return make_schedule(cfg["gain.family"], **params)
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc), cfg.lines.get("gain.family"), "gain.family") from None


def build_sim_config(cfg: ExperimentConfig, potential=None, gain=None) -> SimConfig:
    potential = potential or build_potential(cfg)
    gain = gain or build_gain(cfg)
    scheme = cfg["sim.scheme"]
    try:
        return SimConfig(potential, gain, r=cfg["sim.r"], x0=cfg["sim.x0"],
                         mu_bar0=cfg["sim.mu_bar0"], horizon=cfg["sim.horizon"],
                         dt_base=cfg["sim.dt_base"], decimation=cfg["sim.decimation"],
                         seed=cfg["sim.seed"], n_paths=cfg["sim.n_paths"],
                         scheme="tamed" if scheme == "exact" else scheme,
                         dt_rel=cfg["sim.dt_rel"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def quadratic_law(ctx) -> QuadraticLaw:
    if ctx.potential.name != "quadratic":
        raise ConfigError("this diagnostic needs potential.name = quadratic")
    sc = ctx.sim
    return QuadraticLaw(ctx.potential.params["c"], ctx.gain, sc.r, sc.x0, sc.mu_bar0)


# ---------------------------------------------------------------------------
# diagnostics


@dataclass
class DiagResult:
    name: str
    passed: bool | None
    metrics: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    texts: dict = field(default_factory=dict)
    figures: list = field(default_factory=list)

    def __post_init__(self):
        if self.passed is not None:
            self.passed = bool(self.passed)

    @property
    def status(self):
        return {True: "PASS", False: "FAIL", None: "INFO"}[self.passed]

    def metric(self, key):
        return dict(self.metrics)[key]


@dataclass
class Diagnostic:
    run: object
    params: dict
    needs_ensemble: bool = True


class _Context:
    def __init__(self, cfg, potential, gain, sim, workers):
        self.cfg, self.potential, self.gain, self.sim = cfg, potential, gain, sim
        self.workers = workers
        self._ens = None
        self.sim_seconds = 0.0

    @property
    def ensemble(self):
        if self._ens is None:
            t0 = time.perf_counter()
            if self.cfg["sim.scheme"] == "exact":
                T = self.sim.horizon
                times = np.concatenate([[0.0], np.geomspace(min(self.cfg["sim.t_first"], T), T,
                                                            self.cfg["sim.n_records"])])
                self._ens = exact_quadratic_ensemble(self.potential, self.gain, self.sim.r,
                                                     self.sim.x0, self.sim.mu_bar0, times,
                                                     self.sim.n_paths, self.sim.seed)
            else:
                self._ens = simulate_ensemble(self.sim, workers=self.workers)
            self.sim_seconds = time.perf_counter() - t0
        return self._ens

    @property
    def has_ensemble(self):
        return self._ens is not None


def _record_index(times, t):
    i = int(np.argmin(np.abs(times - t)))
    if abs(times[i] - t) > 1e-9 * (1.0 + abs(t)):
        raise ConfigError(f"time {t} is not a recorded time (nearest {times[i]:.12g})")
    return i


def _var_stderr(x):
    n = len(x)
    v = x.var(ddof=1)
    m4 = np.mean((x - x.mean()) ** 4)
    return v, math.sqrt(max(m4 - v * v, 0.0) / n)


def _oracle_compare(ctx, p):
    ens = ctx.ensemble
    q = quadratic_law(ctx)
    ok = ~ens.blown
    times = p["times"] or [float(ens.times[-1])]
    rows, worst = [], 0.0
    for t in times:
        i = _record_index(ens.times, t)
        for label, arr, law in (("Y", ens.Y, q.law_of_Y), ("mu_bar", ens.mu_bar, q.law_of_mubar)):
            m_or, v_or = law(float(ens.times[i]))
            for c in range(ens.dimension):
                x = arr[ok, i, c]
                n = len(x)
                mean_se = math.sqrt(x.var(ddof=1) / n)
                z_m = (x.mean() - float(np.ravel(m_or)[c])) / mean_se if mean_se > 0 else 0.0
                v, v_se = _var_stderr(x)
                z_v = (v - v_or) / v_se if v_se > 0 else 0.0
                rows.append([ens.times[i], label, c + 1, "mean", x.mean(), float(np.ravel(m_or)[c]),
                             mean_se, z_m])
                rows.append([ens.times[i], label, c + 1, "variance", v, v_or, v_se, z_v])
                worst = max(worst, abs(z_m), abs(z_v))
    res = DiagResult("oracle_compare", worst <= p["z_max"],
                     [("max_abs_z", worst), ("z_max", p["z_max"])])
    res.tables["oracle_compare.csv"] = (
        ["t", "quantity", "coord", "moment", "empirical", "oracle", "stderr", "z"], rows)

    sel = np.unique(np.linspace(0, len(ens.times) - 1, min(25, len(ens.times))).astype(int))
    tt = ens.times[sel]
    emp_m = ens.Y[ok][:, sel, 0].mean(axis=0)
    emp_v = ens.Y[ok][:, sel, 0].var(axis=0, ddof=1)
    orc = [q.law_of_Y(float(t)) for t in tt]
    res.figures.append(("oracle_Y.png", lambda path: plotting.moments_vs_oracle(
        tt, emp_m, emp_v, [float(np.ravel(m)[0]) for m, _ in orc], [v for _, v in orc], "Y", path)))
    return res


def _gaussian_limit(ctx, p):
    ens = ctx.ensemble
    q = quadratic_law(ctx)
    lim = limit_measure(q)
    meas = dg.occupation_measure(ens, "X", p["burn_in"], center=p["center"] or None)
    var = float(meas.variance[0])
    rel = abs(var - lim.variance) / lim.variance
    sd = math.sqrt(lim.variance)
    ks = meas.ks_distance(lambda x: norm.cdf(x, scale=sd))
    passed = rel <= p["rel_tol"] and ks < p["ks_max"]
    res = DiagResult("gaussian_limit", passed, [
        ("limit_variance", lim.variance), ("occupation_variance", var),
        ("relative_error", rel), ("rel_tol", p["rel_tol"]), ("ks_distance", ks),
        ("ks_max", p["ks_max"]), ("mubar_inf_mean", float(np.ravel(lim.mubar_inf_mean)[0])),
        ("mubar_inf_var", lim.mubar_inf_var)])
    rng = (-5 * sd, 5 * sd)
    res.texts["gaussian_limit_histogram.txt"] = meas.histogram_text(p["bins"], rng)
    edges, mass = meas.histogram(p["bins"], rng)
    centers = 0.5 * (edges[:-1] + edges[1:])
    res.figures.append(("gaussian_limit.png", lambda path: plotting.histogram(
        centers, mass, path, plotting.gaussian_density(centers, lim.variance),
        title="centered occupation measure of X")))
    return res


def _characteristic(ctx, p):
    ens = ctx.ensemble
    lim = limit_measure(quadratic_law(ctx))
    gaps = dg.characteristic_gaps(ens, lim.variance, p["freqs"], p["burn_in"])
    rows = [[u, float(np.median(gaps[:, j])), float(np.mean(gaps[:, j]))]
            for j, u in enumerate(p["freqs"])]
    res = DiagResult("characteristic", None,
                     [(f"median_gap_u{u:g}", r[1]) for u, r in zip(p["freqs"], rows)])
    res.tables["characteristic.csv"] = (["u", "median_gap", "mean_gap"], rows)
    return res


def _convergence(ctx, p):
    ens = ctx.ensemble
    target = np.broadcast_to(np.asarray(p["target"], dtype=float), (ens.dimension,))
    dev = np.linalg.norm(ens.Y[:, -1] - target, axis=-1)
    osc = dg.tail_oscillation(ens.times, ens.Y)
    half = int(np.searchsorted(ens.times, 0.5 * ens.times[-1]))
    cauchy = np.linalg.norm(ens.mu_bar[:, -1] - ens.mu_bar[:, half], axis=-1)
    f_dev = float(np.mean(dev < p["y_tol"]))
    f_osc = float(np.mean(osc < p["osc_tol"]))
    f_cau = float(np.mean(cauchy < p["cauchy_tol"]))
    passed = f_dev >= p["y_fraction"] and f_osc >= p["osc_fraction"] and f_cau >= p["cauchy_fraction"]
    res = DiagResult("convergence", passed, [
        ("fraction_terminal_within_tol", f_dev), ("required", p["y_fraction"]),
        ("fraction_tail_oscillation_below_tol", f_osc), ("required_osc", p["osc_fraction"]),
        ("fraction_mubar_cauchy", f_cau), ("required_cauchy", p["cauchy_fraction"]),
        ("median_tail_oscillation", float(np.median(osc))),
        ("max_terminal_deviation", float(dev.max()))])
    res.tables["convergence_paths.csv"] = (
        ["path", "terminal_deviation", "tail_oscillation", "mubar_cauchy_gap"],
        [[int(k), a, b, c] for k, a, b, c in zip(ens.path_ids, dev, osc, cauchy)])
    return res


def _occupation(ctx, p):
    ens = ctx.ensemble
    pot = ctx.potential
    mins = np.array([cp.location for cp in pot.minima])
    unst = np.array([cp.location for cp in pot.unstable_points])
    meas = dg.occupation_measure(ens, p["which"], p["burn_in"])
    full = dg.occupation_measure(ens, p["which"], 0.0)
    near_min = meas.mass_within(mins, p["radius"])
    near_max = meas.mass_within(unst, p["radius"]) if len(unst) else 0.0
    k = dg.classify_terminal_ensemble(ens, pot, p["eps"])
    stable = [i for i, cp in enumerate(pot.critical_points) if cp.is_stable]
    basins = [float(np.mean(k == i)) for i in stable]
    metrics = [("mass_near_minima", near_min), ("min_required", p["min_mass_minima"]),
               ("mass_near_unstable", near_max), ("max_allowed", p["max_mass_unstable"]),
               ("mass_near_minima_no_burn_in", full.mass_within(mins, p["radius"])),
               ("unclassified_fraction", float(np.mean(k < 0)))]
    for cp, f in zip(pot.minima, basins):
        metrics.append((f"basin_fraction_{_format_value(float(cp.location[0]))}", f))
    passed = (near_min >= p["min_mass_minima"] and near_max <= p["max_mass_unstable"]
              and min(basins) >= p["min_basin_fraction"])
    res = DiagResult("occupation", passed, metrics)
    lo, hi = float(ens.Y[..., 0].min()), float(ens.Y[..., 0].max())
    lo, hi = (min(lo, mins.min()) - 0.5, max(hi, mins.max()) + 0.5)
    res.texts["occupation_histogram.txt"] = meas.histogram_text(p["bins"], (lo, hi))
    edges, mass = meas.histogram(p["bins"], (lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    marks = [float(c) for c in mins[:, 0]]
    res.figures.append(("occupation.png", lambda path: plotting.histogram(
        centers, mass, path, markers=marks, title=f"occupation measure of {p['which']}")))
    return res


def _trichotomy(ctx, p):
    ens = ctx.ensemble
    pot = ctx.potential
    v = dg.trichotomy(ens, pot, p["eps"])
    locs = pot.critical_locations()
    div = v.labels == dg.Outcome.DIVERGED.value
    ok_slope = np.zeros(ens.n_paths, dtype=bool)
    if np.any(div):
        tgt = locs[v.limit_index[div]]
        rel = np.linalg.norm(v.slopes[div] - tgt, axis=-1) / np.linalg.norm(tgt, axis=-1)
        ok_slope[div] = rel <= p["slope_tol"]
    frac_slope = float(ok_slope[div].mean()) if np.any(div) else math.nan
    metrics = [(f"fraction_{k}", f) for k, f in v.fractions.items()]
    metrics.append(("slope_within_tol_fraction", frac_slope))
    passed = True
    if p["check_slopes"]:
        passed &= bool(np.any(div)) and frac_slope >= p["slope_fraction"]
        metrics.append(("slope_fraction_required", p["slope_fraction"]))
    for lab in p["require_labels"]:
        passed &= v.fractions.get(lab, 0.0) >= p["min_label_fraction"]
    if p["require_labels"]:
        metrics.append(("min_label_fraction", p["min_label_fraction"]))
    if p["expect_label"]:
        passed &= v.fractions.get(p["expect_label"], 0.0) >= p["expect_fraction"]
        metrics.append(("expected_label", p["expect_label"]))
    res = DiagResult("trichotomy", bool(passed), metrics)
    d = ens.dimension
    header = ["path", "label", "limit"] + [f"slope_{i + 1}" for i in range(d)] + \
        [f"mubar_inf_{i + 1}" for i in range(d)]
    rows = []
    for j in range(ens.n_paths):
        lim = "" if v.limit_index[j] < 0 else _format_value(float(locs[v.limit_index[j]][0]))
        rows.append([int(ens.path_ids[j]), v.labels[j], lim, *v.slopes[j], *v.mubar_inf[j]])
    res.tables["trichotomy_paths.csv"] = (header, rows)
    res.figures.append(("log_rate.png", lambda path: plotting.log_rate(
        ens.times, ens.X, v.slopes[:, 0], path)))
    return res


def _lil(ctx, p):
    ens = ctx.ensemble
    center = np.broadcast_to(np.asarray(p["center"], dtype=float), (ens.dimension,))
    fr = dg.lil_envelope_fractions(ens, center, ctx.gain, p["T0"], p["c_env"])
    med = float(np.median(fr))
    res = DiagResult("lil", med >= p["min_median"], [
        ("median_fraction", med), ("min_median", p["min_median"]),
        ("min_fraction", float(fr.min())), ("c_env", p["c_env"])])
    res.tables["lil_paths.csv"] = (["path", "fraction"],
                                   [[int(k), f] for k, f in zip(ens.path_ids, fr)])
    mask = ens.times >= p["T0"]
    t = ens.times[mask]
    scaled = (np.linalg.norm(ens.Y[:, mask] - center, axis=-1)
              * np.sqrt(ctx.gain.g(t) / np.log(ctx.gain.G(t))))
    res.figures.append(("lil_envelope.png",
                        lambda path: plotting.envelope(t, scaled, p["c_env"], path)))
    return res


def _escape(ctx, p):
    ens = ctx.ensemble
    pot = ctx.potential
    if p["point"]:
        point = np.broadcast_to(np.asarray(p["point"], dtype=float), (ens.dimension,))
    else:
        if not pot.unstable_points:
            raise ConfigError("potential has no unstable critical point to escape from")
        y0 = ctx.sim.y0
        point = min((cp.location for cp in pot.unstable_points),
                    key=lambda loc: float(np.linalg.norm(loc - y0)))
    et = dg.escape_times(ens, point, p["eps"])
    frac = float(np.mean(et <= p["t_max"]))
    res = DiagResult("escape", frac >= p["min_fraction"], [
        ("fraction_escaped", frac), ("min_fraction", p["min_fraction"]),
        ("t_max", p["t_max"]), ("max_escape_time", float(et.max())),
        ("median_escape_time", float(np.median(et)))])
    res.tables["escape_paths.csv"] = (["path", "escape_time"],
                                      [[int(k), e] for k, e in zip(ens.path_ids, et)])
    return res


def _apt(ctx, p):
    ens = ctx.ensemble
    rows, meds = [], []
    for u in p["bases"]:
        d = dg.apt_deviations(ens, ctx.potential, ctx.gain, u, p["window"], p["min_points"])
        med = float(np.median(d))
        meds.append(med)
        rows.append([u, med, float(np.quantile(d, 0.1)), float(np.quantile(d, 0.9))])
    decreasing = all(np.isfinite(meds)) and all(b < a for a, b in zip(meds, meds[1:]))
    res = DiagResult("apt", bool(decreasing),
                     [(f"median_u{u:g}", m) for u, m in zip(p["bases"], meds)])
    res.tables["apt_medians.csv"] = (["base", "median", "q10", "q90"], rows)
    res.figures.append(("apt.png", lambda path: plotting.trend(
        p["bases"], meds, "base point (time-changed clock)", "median deviation", path, logx=True)))
    return res


def _diffusive(ctx, p):
    ens = ctx.ensemble
    rm = dg.running_max(ens)
    meds = []
    for h in p["horizons"]:
        i = _record_index(ens.times, h)
        meds.append(float(np.median(rm[:, i])))
    occ = dg.occupation_measure(ens, "X", p["burn_in"], center="path_mean")
    var = float(occ.variance[0])
    increasing = all(b > a for a, b in zip(meds, meds[1:]))
    res = DiagResult("diffusive", increasing and var >= p["min_variance"],
                     [(f"median_running_max_t{h:g}", m) for h, m in zip(p["horizons"], meds)]
                     + [("occupation_variance", var), ("min_variance", p["min_variance"])])
    res.tables["running_max.csv"] = (["horizon", "median_running_max"],
                                     [[h, m] for h, m in zip(p["horizons"], meds)])
    res.figures.append(("running_max.png", lambda path: plotting.trend(
        p["horizons"], meds, "horizon", "median running max of X", path, logx=True)))
    return res


def _weak_order(ctx, p):
    sc = ctx.sim
    horizon = p["horizon"] or sc.horizon
    rep = dg.weak_order_check(ctx.potential, ctx.gain, sc.r, float(sc.y0[0]), horizon,
                              p["dts"], sc.n_paths, sc.seed)
    ok = all(p["ratio_min"] <= r <= p["ratio_max"] for r in rep.ratios)
    res = DiagResult("weak_order", ok,
                     [(f"error_dt{dt:g}", e) for dt, e in zip(rep.dts, rep.errors)]
                     + [(f"ratio_{i + 1}", r) for i, r in enumerate(rep.ratios)]
                     + [("exact_variance", rep.exact_variance)])
    res.tables["weak_order.csv"] = (["dt", "variance_error"],
                                    [[dt, e] for dt, e in zip(rep.dts, rep.errors)])
    res.figures.append(("weak_order.png", lambda path: plotting.trend(
        rep.dts, rep.errors, "dt", "|Var error| at T", path, logx=True, logy=True,
        reference=[rep.errors[0] * dt / rep.dts[0] for dt in rep.dts])))
    return res


def _supermartingale(ctx, p):
    rep = dg.supermartingale_check(ctx.ensemble, ctx.potential, ctx.gain, ctx.sim.r)
    return DiagResult("supermartingale", rep.ok, [
        ("mean_rate_where_D_positive", rep.mean_rate), ("stderr", rep.stderr),
        ("pairs", rep.n_pairs)])


DIAGNOSTICS = {
    "oracle_compare": Diagnostic(_oracle_compare, {"times": ("floats", []),
                                                   "z_max": ("float", 4.0)}),
    "gaussian_limit": Diagnostic(_gaussian_limit, {
        "burn_in": ("float", 0.5), "center": ("str", "path_mean"),
        "rel_tol": ("float", 0.05), "ks_max": ("float", 0.02), "bins": ("int", 80)}),
    "characteristic": Diagnostic(_characteristic, {
        "freqs": ("floats", [0.5, 1.0, 2.0]), "burn_in": ("float", 0.5)}),
    "convergence": Diagnostic(_convergence, {
        "target": ("floats", [0.0]), "y_tol": ("float", 0.05), "y_fraction": ("float", 1.0),
        "osc_tol": ("float", 0.02), "osc_fraction": ("float", 1.0),
        "cauchy_tol": ("float", 0.01), "cauchy_fraction": ("float", 0.99)}),
    "occupation": Diagnostic(_occupation, {
        "which": ("str", "Y"), "burn_in": ("float", 0.5), "radius": ("float", 0.1),
        "min_mass_minima": ("float", 0.98), "max_mass_unstable": ("float", 0.01),
        "eps": ("float", 0.2), "min_basin_fraction": ("float", 0.1), "bins": ("int", 200)}),
    "trichotomy": Diagnostic(_trichotomy, {
        "eps": ("float", 0.2), "check_slopes": ("bool", False), "slope_tol": ("float", 0.15),
        "slope_fraction": ("float", 0.95), "require_labels": ("strs", []),
        "min_label_fraction": ("float", 0.05), "expect_label": ("str", ""),
        "expect_fraction": ("float", 1.0)}),
    "lil": Diagnostic(_lil, {"center": ("floats", [0.0]), "T0": ("float", 10.0),
                             "c_env": ("float", 3.0), "min_median": ("float", 0.99)}),
    "escape": Diagnostic(_escape, {"point": ("floats", []), "eps": ("float", 0.2),
                                   "t_max": ("float", 100.0), "min_fraction": ("float", 1.0)}),
    "apt": Diagnostic(_apt, {"bases": ("floats", [10.0, 20.0, 40.0, 80.0]),
                             "window": ("float", 1.0), "min_points": ("int", 20)}),
    "diffusive": Diagnostic(_diffusive, {"horizons": ("floats", [1e2, 1e3, 1e4]),
                                         "burn_in": ("float", 0.5),
                                         "min_variance": ("float", 0.25)}),
    "weak_order": Diagnostic(_weak_order, {
        "dts": ("floats", [0.01, 0.005, 0.0025]), "horizon": ("float", 0.0),
        "ratio_min": ("float", 1.5), "ratio_max": ("float", 3.0)}, needs_ensemble=False),
    "supermartingale": Diagnostic(_supermartingale, {}),
}


# ---------------------------------------------------------------------------
# canned experiments, one per exit criterion

CANNED = {
    "quadratic_exact_law": ("Quadratic case: ensemble moments of Y and mubar against the exact Gaussian law", """
name = quadratic_exact_law
potential.name = quadratic
potential.c = 1
gain.family = constant
gain.g0 = 1
sim.r = 1
sim.x0 = 1
sim.mu_bar0 = 0
sim.horizon = 5
# effective step dt_base / (1 + g) = 0.005
sim.dt_base = 0.01
sim.decimation = 100
sim.n_paths = 10000
sim.seed = 101
diagnostics = oracle_compare
diag.oracle_compare.times = 1, 5
"""),
    "quadratic_ergodic": ("Quadratic case, bounded gain: Gaussian limit N(mubar_inf, 1/(2 g c)) of the empirical measure", """
name = quadratic_ergodic
potential.name = quadratic
potential.c = 1
gain.family = constant
sim.r = 1
sim.x0 = 1
sim.mu_bar0 = 0
sim.horizon = 200
sim.dt_base = 0.01
sim.decimation = 100
sim.n_paths = 10000
sim.seed = 202
diagnostics = gaussian_limit, characteristic
"""),
    "as_convergence": ("Quadratic case, g = 1 + t: Y converges to 0 and mubar is Cauchy", """
name = as_convergence
potential.name = quadratic
potential.c = 1
gain.family = power_log
gain.alpha = 1
sim.r = 1
sim.x0 = 1
sim.mu_bar0 = 0
sim.horizon = 1000
sim.scheme = local_linear
sim.dt_rel = 0.001
sim.decimation = 1
sim.n_paths = 1000
sim.seed = 303
diagnostics = convergence
"""),
    "double_well_ergodic": ("Double well, g = 1 + t: occupation measure concentrates on the minima", """
name = double_well_ergodic
potential.name = double_well
gain.family = power_log
gain.alpha = 1
sim.horizon = 1000
sim.scheme = local_linear
sim.dt_rel = 0.001
sim.decimation = 10
sim.n_paths = 10000
sim.seed = 404
diagnostics = occupation
"""),
    "double_well_trichotomy": ("Double well, g = 1 + t: every path selects a nonzero minimum, so X diverges", """
name = double_well_trichotomy
potential.name = double_well
gain.family = power_log
gain.alpha = 1
sim.horizon = 10000
sim.scheme = local_linear
sim.dt_rel = 0.001
sim.decimation = 10
sim.n_paths = 1000
sim.seed = 505
diagnostics = trichotomy
diag.trichotomy.expect_label = DivergedLogRate
"""),
    "xt_over_logt": ("Double well, g = 1 + t: X_t / log t converges to the selected minimum", """
name = xt_over_logt
potential.name = double_well
gain.family = power_log
gain.alpha = 1
sim.horizon = 10000
sim.scheme = local_linear
sim.dt_rel = 0.001
sim.decimation = 10
sim.n_paths = 1000
sim.seed = 505
diagnostics = trichotomy
diag.trichotomy.check_slopes = true
"""),
    "asymmetric_trichotomy": ("Wells at 0 and 2, g = 1 + t: X converges on some paths and diverges on others", """
name = asymmetric_trichotomy
potential.name = asymmetric_wells
gain.family = power_log
gain.alpha = 1
# start at the maximum between the wells
sim.x0 = 1
sim.mu_bar0 = 0
sim.horizon = 10000
sim.scheme = local_linear
sim.dt_rel = 0.001
sim.decimation = 10
sim.n_paths = 1000
sim.seed = 606
diagnostics = trichotomy
diag.trichotomy.require_labels = ConvergedToMubarInf, DivergedLogRate
"""),
    "lil_envelope": ("Quadratic case, g = 1 + t: |Y_t| stays within 3 sqrt(log G / g) (exact sampler)", """
name = lil_envelope
potential.name = quadratic
potential.c = 1
gain.family = power_log
gain.alpha = 1
sim.x0 = 1
sim.horizon = 1000
sim.scheme = exact
sim.n_records = 500
sim.n_paths = 1000
sim.seed = 707
diagnostics = lil
"""),
    "escape_unstable": ("Double well, g = 1 + t: paths started at the maximum leave it", """
name = escape_unstable
potential.name = double_well
gain.family = power_log
gain.alpha = 1
sim.x0 = 0
sim.horizon = 100
sim.dt_base = 0.05
sim.decimation = 10
sim.n_paths = 1000
sim.seed = 808
diagnostics = escape
diag.escape.eps = 0.2
diag.escape.t_max = 100
"""),
    "apt_flow": ("Double well, g = 1 + t: the time-changed path shadows the gradient flow ever more closely", """
name = apt_flow
potential.name = double_well
gain.family = power_log
gain.alpha = 1
sim.x0 = 0.5
# G(11.9) = 82.7 covers the last window [80, 81]
sim.horizon = 11.9
sim.dt_base = 0.02
sim.decimation = 1
sim.n_paths = 1000
sim.seed = 909
diagnostics = apt
"""),
    "diffusive_regime": ("Quadratic case, g = 1: running maximum of X keeps growing", """
name = diffusive_regime
potential.name = quadratic
potential.c = 1
gain.family = constant
sim.horizon = 10000
sim.dt_base = 0.05
sim.decimation = 100
sim.n_paths = 200
sim.seed = 1010
diagnostics = diffusive
"""),
    "weak_order": ("Quadratic case, g = 1: weak first order of the tamed scheme against coupled exact steps", """
name = weak_order
potential.name = quadratic
potential.c = 1
gain.family = constant
sim.x0 = 1
sim.horizon = 5
sim.n_paths = 10000
sim.seed = 1111
diagnostics = weak_order
"""),
}


def list_experiments():
    return [(name, desc) for name, (desc, _) in CANNED.items()]


# ---------------------------------------------------------------------------
# running and reporting


@dataclass
class ReportBundle:
    name: str
    out_dir: Path
    results: list
    n_paths: int
    blowups: int
    status: int
    taming_fraction: float = math.nan
    wall_seconds: float = math.nan

    def result(self, name) -> DiagResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)


def _fmt_cell(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt_cell(v) for v in row])
    path.write_text(buf.getvalue())


def _ensemble_summary(ens):
    ok = ~ens.blown
    d = ens.dimension
    header = ["t"]
    cols = [ens.times]
    n, m = int(ok.sum()), len(ens.times)
    for label, arr in (("Y", ens.Y), ("mubar", ens.mu_bar), ("X", ens.X)):
        a = arr[ok]
        for i in range(d):
            header += [f"mean_{label}_{i + 1}", f"var_{label}_{i + 1}"]
            cols.append(a[:, :, i].mean(axis=0) if n else np.full(m, np.nan))
            cols.append(a[:, :, i].var(axis=0, ddof=1) if n > 1 else np.full(m, np.nan))
    return header, np.column_stack(cols)


def path_csv_header(d):
    return (["t"] + [f"X_{i + 1}" for i in range(d)] + [f"Y_{i + 1}" for i in range(d)]
            + [f"mubar_{i + 1}" for i in range(d)])


def _package_version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def run_experiment(cfg: ExperimentConfig, out_root=None, figures=None, workers=None) -> ReportBundle:
    """Simulate, run the selected diagnostics and write the report directory."""
    t_start = time.perf_counter()
    potential, gain = build_potential(cfg), build_gain(cfg)
    sim = build_sim_config(cfg, potential, gain)
    ctx = _Context(cfg, potential, gain, sim, workers)
    out_dir = Path(out_root if out_root is not None else cfg["output.dir"]) / cfg.name
    out_dir.mkdir(parents=True, exist_ok=True)
    figures = cfg["output.figures"] if figures is None else figures

    results = []
    for name in cfg.diagnostics:
        results.append(DIAGNOSTICS[name].run(ctx, cfg.diag_params[name]))

    # the ensemble is written even when only ensemble-free diagnostics ran
    needs = any(DIAGNOSTICS[n].needs_ensemble for n in cfg.diagnostics)
    ens = ctx.ensemble if needs else None
    blowups = ens.blowups if ens is not None else 0
    n_paths = sim.n_paths

    fig_dir = out_dir / "figures"
    if ens is not None:
        header, body = _ensemble_summary(ens)
        write_csv(out_dir / "ensemble_summary.csv", header, body)
        pdir = out_dir / "paths"
        pdir.mkdir(exist_ok=True)
        k = min(cfg["output.paths"], ens.n_paths)
        for j in range(k):
            rec = ens.path(j)
            body = np.column_stack([rec.times, rec.X, rec.Y, rec.mu_bar])
            write_csv(pdir / f"path_{rec.seed_stream_id}.csv", path_csv_header(ens.dimension), body)
        if figures and k:
            fig_dir.mkdir(exist_ok=True)
            plotting.sample_paths(ens.times, ens.X[:k], ens.Y[:k], ens.mu_bar[:k],
                                  fig_dir / "sample_paths.png")
    for res in results:
        for fname, (header, rows) in res.tables.items():
            write_csv(out_dir / fname, header, rows)
        for fname, text in res.texts.items():
            (out_dir / fname).write_text(text)
        if figures:
            fig_dir.mkdir(exist_ok=True)
            for fname, draw in res.figures:
                draw(fig_dir / fname)

    blow_frac = blowups / max(1, n_paths)
    if blow_frac > BLOWUP_LIMIT:
        status = 3
    elif any(r.passed is False for r in results):
        status = 1
    else:
        status = 0

    lines = [f"experiment {cfg.name}", f"status {status}",
             f"paths {n_paths}", f"blowups {blowups}"]
    if ens is not None:
        lines += [f"scheme {ens.scheme}", f"steps {ens.n_steps}",
                  f"records {len(ens.times)}",
                  f"taming_active_fraction {ens.taming_fraction:.12g}",
                  f"stability_number {ens.stability_number:.12g}"]
    for res in results:
        lines.append(f"{res.status} {res.name}")
        lines += [f"  {k} = {_fmt_cell(v)}" for k, v in res.metrics]
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")

    manifest = [
        f"report.version = {cfg['report.version']}",
        f"csv_schema = {CSV_SCHEMA_VERSION}",
        f"package_version = {_package_version()}",
        f"python = {platform.python_version()}",
        f"numpy = {np.__version__}",
        f"generated = {datetime.datetime.now(datetime.timezone.utc).isoformat(timespec='seconds')}",
        f"wall_seconds = {time.perf_counter() - t_start:.3f}",
        f"simulation_seconds = {ctx.sim_seconds:.3f}",
        "",
    ] + cfg.resolved_lines()
    (out_dir / "manifest.txt").write_text("\n".join(manifest) + "\n")
    return ReportBundle(cfg.name, out_dir, results, n_paths, blowups, status,
                        ens.taming_fraction if ens is not None else math.nan,
                        time.perf_counter() - t_start)


def oracle_table(cfg: ExperimentConfig, times=None):
    """Oracle moments at ``times`` (default: 11 equally spaced times up to the horizon)."""
    potential, gain = build_potential(cfg), build_gain(cfg)
    sim = build_sim_config(cfg, potential, gain)
    ctx = _Context(cfg, potential, gain, sim, 1)
    q = quadratic_law(ctx)
    if times is None:
        params = cfg.diag_params.get("oracle_compare", {})
        times = params.get("times") or np.linspace(0.0, sim.horizon, 11)
    return list(QuadraticLaw.TABLE_COLUMNS), q.table(times)
