import csv

import numpy as np
import pytest

from selfdiff import cli
from selfdiff import experiments as ex

SMALL = """
name = small_quadratic
potential.name = quadratic
gain.family = constant
sim.x0 = 1
sim.horizon = 2
sim.decimation = 20
sim.n_paths = 300
sim.seed = 5
diagnostics = oracle_compare
diag.oracle_compare.times = 1, 2
"""


def _text(**override):
    lines = []
    for line in SMALL.strip().splitlines():
        key = line.split("=")[0].strip()
        if key in override:
            if override[key] is not None:
                lines.append(f"{key} = {override[key]}")
        else:
            lines.append(line)
    return "\n".join(lines) + "\n"


def test_parse_defaults_and_types():
    cfg = ex.parse_config(SMALL)
    assert cfg.name == "small_quadratic"
    assert cfg["sim.n_paths"] == 300
    assert cfg["sim.x0"] == [1.0]
    assert cfg["sim.dt_base"] == 0.01
    assert cfg.diag_params["oracle_compare"] == {"times": [1.0, 2.0], "z_max": 4.0}


def test_comments_and_blank_lines():
    cfg = ex.parse_config("# header\n\n" + SMALL.replace("sim.seed = 5", "sim.seed = 5  # fixed"))
    assert cfg["sim.seed"] == 5


def test_missing_required_key():
    with pytest.raises(ex.ConfigError) as err:
        ex.parse_config(_text(**{"gain.family": None}))
    assert err.value.key == "gain.family"
    assert "gain.family" in str(err.value)


def test_unknown_key_reports_line():
    with pytest.raises(ex.ConfigError) as err:
        ex.parse_config(SMALL + "sim.horizn = 3\n")
    assert err.value.key == "sim.horizn"
    assert err.value.line == len(SMALL.splitlines()) + 1
    assert f"line {err.value.line}" in str(err.value)


@pytest.mark.parametrize("extra", [
    "sim.seed = 6",
    "sim.n_paths = many",
    "no equals sign",
    "diag.escape.eps = 0.1",
    "diag.oracle_compare.zmax = 3",
])
def test_malformed_lines(extra):
    with pytest.raises(ex.ConfigError):
        ex.parse_config(SMALL + extra + "\n")


def test_unknown_diagnostic_and_scheme():
    with pytest.raises(ex.ConfigError):
        ex.parse_config(_text(diagnostics="oracle_compare, magic"))
    with pytest.raises(ex.ConfigError):
        ex.parse_config(_text(**{"sim.horizon": "2\nsim.scheme = rk4"}))


def test_bad_model_parameters_are_config_errors(tmp_path):
    cfg = ex.parse_config(_text(**{"potential.name": "octic"}))
    with pytest.raises(ex.ConfigError):
        ex.run_experiment(cfg, out_root=tmp_path)


def test_every_canned_experiment_parses():
    names = [n for n, _ in ex.list_experiments()]
    assert len(names) == 12
    for n in ("quadratic_ergodic", "xt_over_logt", "apt_flow"):
        assert n in names
    for n in names:
        cfg = ex.load_config(n)
        assert cfg.name == n
        ex.build_sim_config(cfg)


def test_run_writes_report(tmp_path):
    cfg = ex.parse_config(SMALL)
    bundle = ex.run_experiment(cfg, out_root=tmp_path, figures=True)
    out = tmp_path / "small_quadratic"
    assert bundle.status == 0
    for name in ("manifest.txt", "summary.txt", "ensemble_summary.csv", "oracle_compare.csv",
                 "paths/path_0.csv", "figures/sample_paths.png", "figures/oracle_Y.png"):
        assert (out / name).exists(), name
    with open(out / "paths" / "path_0.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "X_1", "Y_1", "mubar_1"]
    body = np.array(rows[1:], dtype=float)
    assert np.max(np.abs(body[:, 1] - body[:, 2] - body[:, 3])) < 1e-11
    assert "generated" in (out / "manifest.txt").read_text()
    assert "generated" not in (out / "summary.txt").read_text()
    assert "PASS oracle_compare" in (out / "summary.txt").read_text().splitlines()


def test_rerun_is_byte_identical(tmp_path):
    cfg = ex.parse_config(SMALL)
    ex.run_experiment(cfg, out_root=tmp_path / "a", figures=False)
    ex.run_experiment(cfg, out_root=tmp_path / "b", figures=False)
    a, b = tmp_path / "a" / cfg.name, tmp_path / "b" / cfg.name
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert len(files) >= 8
    for rel in files:
        if rel.name == "manifest.txt":
            continue
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_failed_check_exits_one(tmp_path):
    text = SMALL + "diag.oracle_compare.z_max = 1e-9\n"
    bundle = ex.run_experiment(ex.parse_config(text), out_root=tmp_path, figures=False)
    assert bundle.status == 1
    assert bundle.result("oracle_compare").passed is False


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blowups_exit_three(tmp_path):
    text = """
name = overflow
potential.name = double_well
gain.family = constant
sim.x0 = 1e200
sim.horizon = 0.1
sim.n_paths = 10
sim.seed = 1
diagnostics = escape
diag.escape.point = 0
diag.escape.min_fraction = 0
"""
    bundle = ex.run_experiment(ex.parse_config(text), out_root=tmp_path, figures=False)
    assert bundle.blowups == 10
    assert bundle.status == 3


def test_oracle_table():
    header, rows = ex.oracle_table(ex.parse_config(SMALL), [0.0, 1.0])
    assert header[0] == "t" and rows.shape == (2, 7)
    assert rows[1, 1] == pytest.approx(0.5 * np.exp(-1.0))


def test_cli_list_and_config(capsys):
    assert cli.main(["list"]) == 0
    assert "xt_over_logt" in capsys.readouterr().out
    assert cli.main(["config", "weak_order"]) == 0
    text = capsys.readouterr().out
    assert ex.parse_config(text).name == "weak_order"
    assert cli.main(["config", "nope"]) == 2


def test_cli_run_and_errors(tmp_path, capsys):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL)
    assert cli.main(["run", str(path), "--out", str(tmp_path / "out"), "--no-figures"]) == 0
    assert "PASS oracle_compare" in capsys.readouterr().out
    assert not (tmp_path / "out" / "small_quadratic" / "figures").exists()

    bad = tmp_path / "bad.cfg"
    bad.write_text(_text(**{"gain.family": None}))
    assert cli.main(["run", str(bad), "--out", str(tmp_path)]) == 2
    assert "gain.family" in capsys.readouterr().err
    assert cli.main(["run", str(tmp_path / "missing.cfg")]) == 2


def test_cli_oracle(tmp_path, capsys):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL)
    assert cli.main(["oracle", str(path), "--times", "0,1", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("t,mean_Y,var_Y")
    assert (tmp_path / "small_quadratic" / "oracle_table.csv").exists()
