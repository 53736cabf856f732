"""Config parsing, subcommand dispatch, artifact layout and exit codes."""

import sys

import numpy as np
import pytest

from thinflow.cli import main
from thinflow.config import ConfigError, default_config, parse_config
from thinflow.verify import DEFAULT_EPS_LADDER, NORM_IDS

SMALL_CFG = """
# desk-scale problem for dispatch tests
[geometry]
epsilon = 0.5

[discretization]
n_x = 24
n_t = 12
n_r = 16
disk_n_r = 16
disk_n_theta = 16
"""

SWEEP_CFG = """
[discretization]
n_x = 48
n_t = 48
n_r = 12
disk_n_r = 16
disk_n_theta = 16

[sweep]
ladder = 0.2 0.1 0.05
"""


@pytest.fixture(scope="module")
def cfg_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("configs")
    (d / "small.cfg").write_text(SMALL_CFG)
    (d / "sweep.cfg").write_text(SWEEP_CFG)
    return d


def read_rows(path):
    lines = [ln for ln in path.read_text().splitlines() if ln and not ln.startswith("#")]
    return lines[0].split(","), [ln.split(",") for ln in lines[1:]]


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------


def test_empty_text_resolves_to_documented_defaults():
    cfg = parse_config("")
    assert cfg.eps_ladder == DEFAULT_EPS_LADDER
    assert cfg.discretization["n_x"] == 192
    assert cfg.regime == {"alpha": 1.0, "beta": 0.0}
    assert cfg.constitutive["family"] == "corey"
    assert cfg.sweep["slack"] == 0.3
    assert cfg == default_config()


def test_sections_and_lists_parse():
    cfg = parse_config(
        "[regime]\nalpha = 2 ; Case2\nbeta = 1\n"
        "[sweep]\nladder = 0.4, 0.2, 0.1  # comma separated works too\ntail = 2\n"
        "[data]\nq_ell_coeffs = -1.0 0.5\n"
    )
    assert cfg.classify_regime().tag == "Case2"
    assert cfg.eps_ladder == (0.4, 0.2, 0.1)
    assert cfg.tail == 2
    assert cfg.data["q_ell_coeffs"] == (-1.0, 0.5)


def test_parse_errors_name_key_and_line():
    with pytest.raises(ConfigError, match=r"line 2: key 'ell' in \[geometry\] expects a number"):
        parse_config("[geometry]\nell = banana\n")
    with pytest.raises(ConfigError, match=r"line 3.*expects an integer"):
        parse_config("[discretization]\n\nn_x = 12.5\n")
    with pytest.raises(ConfigError, match=r"line 1: unknown section \[grid\]"):
        parse_config("[grid]\nn_x = 8\n")
    with pytest.raises(ConfigError, match=r"line 2: unknown key 'length'"):
        parse_config("[geometry]\nlength = 1\n")
    with pytest.raises(ConfigError, match="line 1: key outside any"):
        parse_config("ell = 1\n")
    with pytest.raises(ConfigError, match=r"line 3: duplicate key 'ell'"):
        parse_config("[geometry]\nell = 1\nell = 2\n")
    with pytest.raises(ConfigError, match="expects one of corey"):
        parse_config("[constitutive]\nfamily = brooks\n")
    with pytest.raises(ConfigError, match="line 1: expected 'key = value'"):
        parse_config("what is this\n")


def test_build_spec_wires_sections_through():
    cfg = parse_config("[geometry]\nell = 2\nepsilon = 0.25\n[regime]\nalpha = 2\nbeta = 1\n")
    spec = cfg.build_spec()
    assert spec.regime.tag == "Case2"
    assert spec.geometry.length_ell == 2.0
    assert spec.geometry.epsilon == 0.25
    assert spec.forcing.support_delta == pytest.approx(0.2)
    assert cfg.support_delta() == pytest.approx(0.2)


def test_header_lines_replay_resolved_state():
    lines = parse_config("[geometry]\nell = 2\n").header_lines()
    assert "geometry.ell = 2" in lines
    ladder = " ".join("%.17g" % v for v in DEFAULT_EPS_LADDER)
    assert "sweep.ladder = %s" % ladder in lines
    assert "data.support_delta = %s" % ("%.17g" % 0.2) in lines
    assert sum(1 for ln in lines if ln.startswith("discretization.")) == 5


# ---------------------------------------------------------------------------
# classify and validate
# ---------------------------------------------------------------------------


def test_classify_flags_without_config(capsys):
    assert main(["classify", "--alpha", "1.5", "--beta", "3"]) == 0
    out = capsys.readouterr().out
    assert "Unsupported" in out
    assert "high-lateral-conductivity" in out


def test_classify_reads_regime_from_config(cfg_dir, capsys):
    assert main(["classify", str(cfg_dir / "small.cfg")]) == 0
    out = capsys.readouterr().out
    assert "regime = Case1" in out
    for nid in NORM_IDS:
        assert "%s = 2" % nid in out


def test_classify_entry_point_uses_sys_argv(monkeypatch, capsys):
    monkeypatch.setattr(sys, "argv", ["thinflow", "classify", "--alpha", "3", "--beta", "0"])
    assert main() == 0
    assert "regime = Case2" in capsys.readouterr().out


def test_validate_passes_on_default_data(cfg_dir, capsys):
    assert main(["validate", str(cfg_dir / "small.cfg")]) == 0
    assert "validation passed" in capsys.readouterr().out


def test_validate_itemizes_support_violation(tmp_path, capsys):
    cfg = tmp_path / "bad_support.cfg"
    cfg.write_text("[data]\nsupport_delta = 0\n")
    assert main(["validate", str(cfg)]) == 1
    out = capsys.readouterr().out
    assert "validation failed" in out
    assert "support margin" in out


def test_config_errors_exit_one(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[geometry]\nell = banana\n")
    assert main(["solve-limit", str(bad), "--out-dir", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "config error" in err
    assert "line 2" in err
    assert main(["solve-limit", str(tmp_path / "missing.cfg")]) == 1
    assert "cannot read" in capsys.readouterr().err


def test_inadmissible_geometry_exits_one(tmp_path, capsys):
    cfg = tmp_path / "neg.cfg"
    cfg.write_text("[geometry]\nell = -1\n")
    assert main(["solve-limit", str(cfg), "--out-dir", str(tmp_path)]) == 1
    assert "inadmissible problem" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# solver subcommands
# ---------------------------------------------------------------------------


def test_solve_limit_writes_header_and_zero_correctors(cfg_dir, tmp_path):
    assert main(["solve-limit", str(cfg_dir / "small.cfg"), "--out-dir", str(tmp_path)]) == 0
    path = tmp_path / "limit.csv"
    text = path.read_text().splitlines()
    assert text[0] == "# thinflow solve-limit"
    assert "# regime.alpha = 1" in text
    assert "# geometry.epsilon = 0.5" in text
    header, rows = read_rows(path)
    assert header == ["t", "x", "p0", "s0", "p1", "s1"]
    assert len(rows) == 13 * 25
    data = np.array(rows, dtype=float)
    assert np.all(data[:, 4] == 0.0) and np.all(data[:, 5] == 0.0)
    assert 0.3 < data[:, 3].min() <= data[:, 3].max() < 0.7


def test_solve_cell_reports_station_and_mean(cfg_dir, tmp_path):
    assert main(["solve-cell", str(cfg_dir / "small.cfg"), "--out-dir", str(tmp_path),
                 "--x1", "0.5"]) == 0
    path = tmp_path / "cell.csv"
    header, rows = read_rows(path)
    assert header == ["rho", "theta", "u", "du_dxi2", "du_dxi3"]
    assert len(rows) == 16 * 16
    assert any("station: x1 = 0.5" in ln for ln in path.read_text().splitlines())


def test_solve_reference_and_reconstruct_artifacts(cfg_dir, tmp_path):
    cfg = str(cfg_dir / "small.cfg")
    assert main(["solve-reference", cfg, "--out-dir", str(tmp_path)]) == 0
    header, rows = read_rows(tmp_path / "reference_means.csv")
    assert header == ["t", "x", "P_mean", "S_mean"]
    assert len(rows) == 13 * 25
    header, rows = read_rows(tmp_path / "reference_final.csv")
    assert header == ["x", "rho", "P", "S"]
    assert len(rows) == 25 * 16

    assert main(["reconstruct", cfg, "--out-dir", str(tmp_path)]) == 0
    header, rows = read_rows(tmp_path / "approx_final.csv")
    assert header == ["x", "rho", "P", "S", "vtotal_x", "vtotal_rho", "vw_x", "vw_rho"]
    assert len(rows) == 25 * 16
    sat = np.array([r[3] for r in rows], dtype=float)
    assert 0.0 < sat.min() <= sat.max() < 1.0


def test_repeated_runs_are_bit_identical(cfg_dir, tmp_path):
    cfg = str(cfg_dir / "small.cfg")
    for name in ("a", "b"):
        assert main(["solve-limit", cfg, "--out-dir", str(tmp_path / name)]) == 0
    a = (tmp_path / "a" / "limit.csv").read_bytes()
    b = (tmp_path / "b" / "limit.csv").read_bytes()
    assert a == b


# ---------------------------------------------------------------------------
# sweep dispatch
# ---------------------------------------------------------------------------


def test_sweep_writes_rates_and_exits_zero(cfg_dir, tmp_path, capsys):
    assert main(["sweep", str(cfg_dir / "sweep.cfg"), "--out-dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "sweep passed" in out
    header, rows = read_rows(tmp_path / "rates.csv")
    assert header == ["norm_id", "fitted", "predicted", "verdict"]
    assert [r[0] for r in rows] == list(NORM_IDS)
    assert all(r[3] == "pass" for r in rows)
    _, err_rows = read_rows(tmp_path / "errors.csv")
    assert len(err_rows) == 3 * len(NORM_IDS)
    assert (tmp_path / "rates.png").exists()
    assert (tmp_path / "plot_rates.py").exists()


def test_sweep_rate_failure_exits_three(cfg_dir, tmp_path, capsys):
    cfg = tmp_path / "strict.cfg"
    cfg.write_text(SWEEP_CFG + "slack = -5\n")
    assert main(["sweep", str(cfg), "--out-dir", str(tmp_path)]) == 3
    out = capsys.readouterr().out
    assert "sweep FAILED" in out
    _, rows = read_rows(tmp_path / "rates.csv")
    assert all(r[3] == "fail" for r in rows)
