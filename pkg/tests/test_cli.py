import csv
import subprocess
import sys

import pytest

from bandtrack import __version__
from bandtrack.cli import ConfigError, load_config, main, resolve_config, validate_config


def read_summary(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return {row["name"]: row for row in csv.DictReader(lines)}


def test_validate_examples():
    base = resolve_config("tracking_error")
    assert validate_config("tracking_error", base) == []
    bad_eps = {**base, "epsilon_grid": [1.5, 1e-3]}
    assert any("epsilon must lie in (0,1)" in v for v in validate_config("tracking_error", bad_eps))
    coarse = {**base, "dt": 1e-3}
    msgs = validate_config("tracking_error", coarse)
    assert len(msgs) == 1 and "grid coupling rule" in msgs[0] and msgs[0].startswith("dt:")
    assert validate_config("sharpness", {**resolve_config("sharpness"), "dt": 25e-6}) == []
    assert validate_config("nonsense", {}) != []


def test_every_default_config_is_valid():
    for name in ("sharpness", "pathwise_bound", "tracking_error", "utility_loss", "monetary_bound",
                 "foc_check", "diagnostics"):
        assert validate_config(name, resolve_config(name)) == [], name


def test_config_file_parsing(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("# tracking run\nexperiment = tracking_error\nepsilon_grid = 1e-4, 1e-3 # two points\n"
                   "n_paths = 50\n\ndt = none\n")
    parsed = load_config(cfg)
    assert parsed == {"experiment": "tracking_error", "epsilon_grid": [1e-4, 1e-3], "n_paths": 50, "dt": None}
    bad = tmp_path / "bad.cfg"
    bad.write_text("n_paths = 10\n\nsigma_S 0.2\n")
    with pytest.raises(ConfigError, match=r"bad.cfg:3:"):
        load_config(bad)
    bad.write_text("n_paths = ten\n")
    with pytest.raises(ConfigError, match=r"bad.cfg:1: cannot parse"):
        load_config(bad)
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.cfg")


def test_flags_override_file(tmp_path):
    cfg = tmp_path / "a.cfg"
    cfg.write_text("n_paths = 50\nmaster_seed = 3\n")
    out = tmp_path / "out"
    code = main(["run", "foc_check", "--config", str(cfg), "--paths", "40", "--lambda", "0", "--out", str(out)])
    assert code == 0
    header = (out / "foc_check.csv").read_text().splitlines()
    assert header[0] == f"# bandtrack {__version__}"
    assert "# n_paths = 40" in header and "# master_seed = 3" in header
    assert not any(h.startswith("# workers") or h.startswith("# output_dir") for h in header)


def test_foc_check_without_risk_premium_passes_exactly(tmp_path):
    assert main(["run", "foc_check", "--lambda", "0", "--paths", "300", "--out", str(tmp_path)]) == 0
    row = read_summary(tmp_path / "summary.csv")["foc_residual"]
    assert row["observed"] == "0.0" and row["pass"] == "true"


def test_sharpness_single_delta(tmp_path):
    assert main(["run", "sharpness", "--delta", "0.1", "--paths", "400", "--seed", "7", "--out", str(tmp_path)]) == 0
    summary = read_summary(tmp_path / "summary.csv")
    assert float(summary["turnover_lower_bound[delta=0.1]"]["observed"]) == pytest.approx(5.0, rel=0.1)
    assert "turnover_slope_vs_inv_delta" not in summary


def test_rerun_and_worker_count_give_identical_files(tmp_path):
    args = ["run", "monetary_bound", "--paths", "60", "--seed", "11", "--set", "refine_paths=20",
            "--set", "ledger_paths=5"]
    for tag, workers in (("a", "1"), ("b", "1"), ("c", "4")):
        assert main(args + ["--workers", workers, "--out", str(tmp_path / tag)]) == 0
    for name in ("monetary_bound.csv", "summary.csv"):
        a = (tmp_path / "a" / name).read_bytes()
        assert a == (tmp_path / "b" / name).read_bytes() == (tmp_path / "c" / name).read_bytes()


def test_exit_codes(tmp_path, capsys):
    assert main(["run", "sharpness", "--delta", "0.9", "--paths", "200", "--out", str(tmp_path / "f")]) == 1
    assert main(["run", "foc_check", "--lambda", "1000", "--paths", "4", "--out", str(tmp_path / "n")]) == 3
    assert main(["run", "tracking_error", "--epsilon", "1.5", "--paths", "4", "--out", str(tmp_path / "c")]) == 2
    assert "epsilon must lie in (0,1)" in capsys.readouterr().err
    assert main(["run", "foc_check", "--set", "bogus=1"]) == 2
    assert main(["run", "foc_check", "--delta", "0.1"]) == 2
    assert main(["run", "nonsense"]) == 2
    assert main(["run"]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("experiment = sharpness\ndt = 0.01\n")
    assert main(["validate", "--config", str(bad)]) == 2
    assert "grid coupling rule" in capsys.readouterr().err
    good = tmp_path / "good.cfg"
    good.write_text("experiment = sharpness\n")
    assert main(["validate", "--config", str(good)]) == 0


def test_list_and_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "bandtrack", "list"], capture_output=True, text=True, check=True)
    names = [ln.split()[0] for ln in out.stdout.splitlines()]
    assert names == ["sharpness", "pathwise_bound", "tracking_error", "utility_loss", "monetary_bound",
                     "foc_check", "diagnostics"]
