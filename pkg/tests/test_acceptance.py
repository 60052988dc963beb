"""Exit criteria, one test per criterion, each driven by a canned experiment.

Every canned experiment is run once per session through ``runs`` (figures
included) and its report bundle reused.
"""
import numpy as np
import pytest

from selfdiff import experiments as ex

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = ex.run_experiment(ex.load_config(name), out_root=root, figures=True)
        return cache[name]

    get.cache = cache
    return get


def _show(bundle):
    for r in bundle.results:
        print(r.status, r.name, dict(r.metrics))


@pytest.mark.criterion("C1 quadratic exact-law equivalence")
def test_c01_quadratic_exact_law(runs):
    b = runs("quadratic_exact_law")
    _show(b)
    res = b.result("oracle_compare")
    assert res.metric("max_abs_z") <= 4.0
    assert b.wall_seconds <= 120.0
    assert b.taming_fraction < 0.01
    assert b.blowups == 0


@pytest.mark.criterion("C2 Gaussian limit measure")
def test_c02_gaussian_limit(runs):
    b = runs("quadratic_ergodic")
    _show(b)
    res = b.result("gaussian_limit")
    assert res.metric("limit_variance") == pytest.approx(0.5)
    assert res.metric("relative_error") <= 0.05
    assert res.metric("ks_distance") < 0.02
    assert b.taming_fraction < 0.01


@pytest.mark.criterion("C3 almost sure convergence regime")
def test_c03_as_convergence(runs):
    b = runs("as_convergence")
    _show(b)
    m = dict(b.result("convergence").metrics)
    terminal = m["fraction_terminal_within_tol"]
    settled = m["fraction_tail_oscillation_below_tol"]
    cauchy = m["fraction_mubar_cauchy"]
    assert cauchy >= 0.99, f"mubar Cauchy fraction {cauchy}"
    assert terminal == 1.0, f"fraction with |Y_T| < 0.05 is {terminal}"
    assert settled == 1.0, (f"fraction with tail oscillation < 0.02 is {settled} "
                            f"(median oscillation {m['median_tail_oscillation']:.3f})")


@pytest.mark.criterion("C4 ergodic limit on the minima")
def test_c04_double_well_ergodic(runs):
    b = runs("double_well_ergodic")
    _show(b)
    res = b.result("occupation")
    assert res.metric("mass_near_minima") >= 0.98
    assert res.metric("mass_near_unstable") <= 0.01
    assert res.metric("basin_fraction_-1") >= 0.10
    assert res.metric("basin_fraction_1") >= 0.10


@pytest.mark.criterion("C5 trichotomy and log-rate")
def test_c05_trichotomy(runs):
    rate = runs("xt_over_logt")
    _show(rate)
    res = rate.result("trichotomy")
    assert res.metric("slope_within_tol_fraction") >= 0.95

    sym = runs("double_well_trichotomy").result("trichotomy")
    assert sym.metric("fraction_DivergedLogRate") == 1.0

    asym = runs("asymmetric_trichotomy")
    _show(asym)
    res = asym.result("trichotomy")
    assert res.metric("fraction_ConvergedToMubarInf") >= 0.05
    assert res.metric("fraction_DivergedLogRate") >= 0.05


@pytest.mark.criterion("C6 envelope around the minimum")
def test_c06_lil_envelope(runs):
    b = runs("lil_envelope")
    _show(b)
    assert b.result("lil").metric("median_fraction") >= 0.99


@pytest.mark.criterion("C7 escape from the unstable point")
def test_c07_escape(runs):
    b = runs("escape_unstable")
    _show(b)
    res = b.result("escape")
    assert res.metric("fraction_escaped") == 1.0
    assert res.metric("max_escape_time") < 100.0


@pytest.mark.criterion("C8 pseudotrajectory trend")
def test_c08_apt(runs):
    b = runs("apt_flow")
    _show(b)
    meds = [b.result("apt").metric(f"median_u{u}") for u in (10, 20, 40, 80)]
    assert all(np.isfinite(meds))
    assert meds[0] > meds[1] > meds[2] > meds[3]


@pytest.mark.criterion("C9 diffusive regime")
def test_c09_diffusive(runs):
    b = runs("diffusive_regime")
    _show(b)
    res = b.result("diffusive")
    meds = [res.metric(f"median_running_max_t{h:g}") for h in (1e2, 1e3, 1e4)]
    assert meds[0] < meds[1] < meds[2]
    assert res.metric("occupation_variance") >= 0.25


@pytest.mark.criterion("C10 determinism and numerics")
def test_c10_determinism_and_numerics(runs, tmp_path):
    # identical seed, identical bytes (the manifest carries the timestamp)
    cfg = ex.load_config("quadratic_exact_law")
    a = ex.run_experiment(cfg, out_root=tmp_path / "a", figures=False).out_dir
    b = ex.run_experiment(cfg, out_root=tmp_path / "b", figures=False).out_dir
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file()
                   and p.name != "manifest.txt")
    assert files
    for rel in files:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    # zero blow-ups across every criterion's run
    blowups = {name: runs(name).blowups for name, _ in ex.list_experiments()}
    print("blow-ups per experiment:", blowups)
    assert sum(blowups.values()) == 0

    w = runs("weak_order")
    _show(w)
    res = w.result("weak_order")
    ratios = [res.metric("ratio_1"), res.metric("ratio_2")]
    assert all(1.5 <= r <= 3.0 for r in ratios)
