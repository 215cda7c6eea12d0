import subprocess
import sys

import pytest

from roughmckv.cli import load_config, main, parse_levels, ConfigError
from roughmckv.io import read_table


def _run(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def _manifest(out):
    return dict(line.split("=", 1) for line in (out / "manifest.txt").read_text().splitlines())


def test_list(capsys):
    code, out, _ = _run(["list"], capsys)
    assert code == 0
    assert "meanfield-ou" in out and "smooth-linear" in out


def test_conv_smooth_linear(tmp_path, capsys):
    code, out, _ = _run(["conv", "--experiment", "smooth-linear", "--out", str(tmp_path)], capsys)
    assert code == 0
    head, rows = read_table(tmp_path / "conv.csv")
    assert head == ["level", "h", "gap"]
    assert [r[0] for r in rows] == ["4", "5", "6", "7", "8", "9", "10", "slope"]
    gaps = [float(r[2]) for r in rows[:-1]]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    # the Davie step is second order on this smooth corpus
    assert float(rows[-1][2]) >= 1.0
    m = _manifest(tmp_path)
    assert m["provenance"] == "rde-solver.solve_davie" and m["command"] == "conv"


def test_levels_flag(tmp_path, capsys):
    code, _, _ = _run(["conv", "--levels", "5,7", "--out", str(tmp_path)], capsys)
    assert code == 0
    _, rows = read_table(tmp_path / "conv.csv")
    assert [r[0] for r in rows] == ["5", "7", "slope"]


def test_missing_config_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.yaml"
    code, _, err = _run(["rde", "--config", str(missing)], capsys)
    assert code == 1
    assert str(missing) in err


def test_bad_config_is_line_anchored(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("experiment: flow\nN: 12\nalphaa: 0.4\n")
    code, _, err = _run(["fpcheck", "--config", str(cfg)], capsys)
    assert code == 1
    assert f"{cfg}:3" in err and "alphaa" in err


def test_bad_value_types(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("level: 8\nN: many\n")
    with pytest.raises(ConfigError, match=r"c.yaml:2: 'N' must be an integer"):
        load_config(cfg)
    cfg.write_text("alpha: 0.6\n")
    with pytest.raises(ConfigError, match="alpha must lie"):
        load_config(cfg)
    cfg.write_text("levels: [4, 5\n")
    with pytest.raises(ConfigError, match="malformed YAML"):
        load_config(cfg)


def test_config_values_are_used(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(f"experiment: smooth-linear\nlevel: 6\nxi: 2.0\nout: {tmp_path}\n")
    code, out, _ = _run(["rde", "--config", str(cfg)], capsys)
    assert code == 0
    head, rows = read_table(tmp_path / "rde.csv")
    assert head == ["t", "x", "exact"]
    assert float(rows[0][1]) == 2.0


def test_unknown_experiment_exit_2(tmp_path, capsys):
    code, _, err = _run(["rde", "--experiment", "nonsense", "--out", str(tmp_path)], capsys)
    assert code == 2 and "nonsense" in err


def test_unsupported_pair_exit_2(tmp_path, capsys):
    code, _, err = _run(["mckv", "--experiment", "smooth-linear", "--out", str(tmp_path)], capsys)
    assert code == 2 and "does not support" in err


def test_thread_env(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("ROUGHMCKV_THREADS", "zero")
    code, _, err = _run(["lift", "--out", str(tmp_path)], capsys)
    assert code == 1 and "ROUGHMCKV_THREADS" in err
    monkeypatch.setenv("ROUGHMCKV_THREADS", "1")
    assert _run(["lift", "--out", str(tmp_path)], capsys)[0] == 0


def test_parse_levels():
    assert parse_levels("4:7") == (4, 5, 6, 7)
    assert parse_levels("3,9") == (3, 9)
    with pytest.raises(ConfigError):
        parse_levels("a:b")


def test_lift_outputs(tmp_path, capsys):
    code, out, _ = _run(["lift", "--experiment", "brownian-linear", "--seed", "4", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert (tmp_path / "lift.csv").exists() and (tmp_path / "lift_area.csv").exists()
    m = _manifest(tmp_path)
    assert float(m["chen_defect"]) <= 1e-12 and float(m["geometricity_defect"]) <= 1e-12


def test_fpcheck_meanfield_linear(tmp_path, capsys):
    code, out, _ = _run(["fpcheck", "--experiment", "meanfield-linear", "--N", "4096", "--out", str(tmp_path)], capsys)
    assert code == 0
    m = _manifest(tmp_path)
    assert m["verdict"] == "PASS"
    assert float(m["exponent"]) >= 3 * 0.45 - 0.2
    head, _ = read_table(tmp_path / "fp_defect.csv")
    assert head == ["phi_id", "s", "t", "defect", "ci_low", "ci_high"]
    assert "verdict=PASS" in (tmp_path / "verdict.txt").read_text()


@pytest.mark.parametrize(
    "args, files",
    [
        (["mckv", "--experiment", "meanfield-ou", "--N", "64", "--seed", "5"], ["ensemble.csv", "trace.csv"]),
        (["fpcheck", "--experiment", "ou", "--N", "256", "--seed", "2"], ["fp_defect.csv"]),
        (["rde", "--experiment", "brownian-linear", "--streams", "3"], ["rde.csv"]),
    ],
)
def test_outputs_are_bitwise_reproducible(tmp_path, capsys, args, files):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(args + ["--out", str(a)], capsys)[0] == 0
    assert _run(args + ["--out", str(b)], capsys)[0] == 0
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_tail_small(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("level: 5\nsamples: 120\n")
    code, out, _ = _run(["tail", "--config", str(cfg), "--out", str(tmp_path)], capsys)
    assert code == 0
    head, rows = read_table(tmp_path / "tail_samples.csv")
    assert head == ["sample_id", "F_alpha", "FF_2alpha", "N"] and len(rows) == 120


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "roughmckv.cli", "rde", "--experiment", "bogus", "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 2
