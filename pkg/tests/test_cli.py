import filecmp
from pathlib import Path

import numpy as np
import pytest

from euler2d import cli


def test_defaults_roundtrip(tmp_path):
    cfg = cli.parse_config(None, {})
    text = cli.emit_config(cfg)
    f = tmp_path / "c.cfg"
    f.write_text(text)
    cfg2 = cli.parse_config(str(f), {})
    assert cfg == cfg2


def test_empty_file_gives_defaults(tmp_path):
    f = tmp_path / "empty.cfg"
    f.write_text("# nothing here\n")
    assert cli.parse_config(str(f), {}) == cli.RunConfig().validate()


def test_negative_alpha_rejected():
    with pytest.raises(cli.ConfigError):
        cli.parse_config(None, {"alpha": "-1"})


def test_unknown_key_rejected(tmp_path):
    f = tmp_path / "bad.cfg"
    f.write_text("nu=0.1\n")
    with pytest.raises(cli.ConfigError) as err:
        cli.parse_config(str(f), {})
    assert "nu" in str(err.value)
    f.write_text("dt 0.1\n")
    with pytest.raises(cli.ConfigError) as err:
        cli.parse_config(str(f), {})
    assert ":1:" in str(err.value)


def test_flags_override_file(tmp_path):
    f = tmp_path / "c.cfg"
    f.write_text("n=8\ndt=0.5\n")
    cfg = cli.parse_config(str(f), {"dt": "0.25"})
    assert cfg.n == 8 and cfg.dt == 0.25


def test_window_validation():
    with pytest.raises(cli.ConfigError):
        cli.parse_config(None, {"t_end": "1.0", "window": "0.5,2.0"})


def test_exit_code_config_error(tmp_path):
    rc = cli.main(["decay", "--dt", "-0.1", "--out", str(tmp_path)])
    assert rc == 2


def test_decay_run_and_determinism(tmp_path):
    args = ["decay", "--n", "4", "--dt", "0.1", "--t-end", "0.3",
            "--out", str(tmp_path / "a")]
    assert cli.main(args) == 0
    assert cli.main(["decay", "--n", "4", "--dt", "0.1", "--t-end", "0.3",
                     "--out", str(tmp_path / "b")]) == 0
    fa, fb = tmp_path / "a" / "decay.csv", tmp_path / "b" / "decay.csv"
    assert fa.exists()
    assert filecmp.cmp(fa, fb, shallow=False)  # bit-identical outputs
    lines = fa.read_text().splitlines()
    assert lines[0].startswith("# euler2d config_hash=")
    assert lines[1] == "scheme,t,E,Z"
    # three schemes, 4 rows each (t = 0 .. 0.3)
    assert len(lines) == 2 + 3 * 4


def test_convergence_run_schema(tmp_path):
    cfg = cli.parse_config(None, {"experiment": "converge", "scheme": "supg",
                                  "r": "1", "dt": "0.05", "t_end": "0.1",
                                  "out": str(tmp_path)})
    rows = cli.run_convergence(cfg, meshes=(2, 4))
    assert len(rows) == 2
    text = (tmp_path / "convergence.csv").read_text().splitlines()
    assert text[1] == "scheme,r,n,h,err_u,order_u,err_w,order_w"
    assert np.isfinite(rows[1][5])  # an observed order on the second mesh


def test_turbulence_run_outputs(tmp_path):
    cfg = cli.parse_config(None, {
        "experiment": "tendencies", "scheme": "supg", "n": "8", "r": "1",
        "dt": "0.05", "t_end": "0.2", "window": "0.1,0.2", "kt": "3",
        "snapshot_every": "0.1", "forcing_k": "2", "out": str(tmp_path)})
    accs, hist, integ, state = cli.run_turbulence(cfg, require_spectra=True)
    hist_file = tmp_path / "history.csv"
    spec_file = tmp_path / "spectra.csv"
    assert hist_file.exists() and spec_file.exists()
    header = spec_file.read_text().splitlines()[1].split(",")
    assert header == ["scheme", "k_T", "k", "E_dot", "Z_dot", "E_dot_T",
                      "Z_dot_T", "E_dot_SG", "Z_dot_SG", "E_dot_SG_se",
                      "Z_dot_SG_se"]
    snaps = sorted(tmp_path.glob("omega_t*.csv"))
    assert len(snaps) == 2
    grid = np.loadtxt(snaps[0], delimiter=",", comments="#", skiprows=2)
    assert grid.shape == (16, 16)


def test_tendencies_requires_kt(tmp_path):
    rc = cli.main(["tendencies", "--n", "4", "--t-end", "0.1",
                   "--out", str(tmp_path)])
    assert rc == 2


def test_specref_run(tmp_path):
    rc = cli.main(["specref", "--n", "32", "--kt", "5", "--window", "0.0,0.05",
                   "--out", str(tmp_path)])
    assert rc == 0
    f = tmp_path / "specref_spectra.csv"
    assert f.exists()
    body = np.loadtxt(f, delimiter=",", skiprows=2,
                      usecols=(1, 2, 3, 4, 5, 6, 7, 8))
    assert body.shape[0] == (32 // 3) + 1


def test_solver_failure_exit_code(tmp_path, monkeypatch):
    from euler2d.schemes import NewtonError

    def boom(cfg, require_spectra=False):
        raise NewtonError("no convergence")

    monkeypatch.setattr(cli, "run_turbulence", boom)
    rc = cli.main(["turbulence", "--n", "4", "--out", str(tmp_path)])
    assert rc == 3
