import json
import os
import subprocess
import sys

import pytest

from sidelinkpos.cli import EXIT_CONFIG, EXIT_OK, main
from sidelinkpos.harness import CSV_COLUMNS, read_records
from sidelinkpos.scene import import_paths


def test_simulate_to_file(tmp_path):
    out = tmp_path / "p.csv"
    assert main(["simulate", "--position", "1.6", "30", "1.5", "--out", str(out)]) == EXIT_OK
    paths = import_paths(out)
    assert paths[0].is_los and len(paths) >= 2


def test_simulate_stdout(capsys):
    assert main(["simulate", "--scene", "highway", "--position", "-50", "-6", "1.5",
                 "--receiver", "AtCRU"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("gain_re,gain_im,delay_s")


def test_simulate_degenerate_geometry():
    assert main(["simulate", "--position", "0", "0", "10"]) == EXIT_CONFIG


@pytest.mark.parametrize("alg, array", [("CPD-SA", ["4", "2"]), ("MF", ["1", "1"]),
                                        ("ESPRIT1D", ["1", "1"]), ("ESPRIT2D-SA", ["4", "1"])])
def test_estimate_json(tmp_path, capsys, alg, array):
    out = tmp_path / "p.csv"
    main(["simulate", "--position", "1.6", "30", "1.5", "--out", str(out)])
    capsys.readouterr()
    rc = main(["estimate", "--paths", str(out), "--algorithm", alg, "--array", *array,
               "--subcarriers", "48", "--seed", "3"])
    assert rc == EXIT_OK
    res = json.loads(capsys.readouterr().out)
    assert res["algorithm"] in (alg, "MF")
    assert res["los_delay_s"] > 0


def test_estimate_missing_file():
    assert main(["estimate", "--paths", "/nonexistent.csv"]) == EXIT_CONFIG


def test_bound_json(capsys):
    assert main(["bound", "--position", "1.6", "30", "1.5", "--subcarriers", "48"]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["parameters"] == ["t_x", "t_z", "tau", "re", "im"]
    assert 0 <= rep["peb_los_m"] <= rep["peb_nlos_m"]


def _config(tmp_path, **kw):
    cfg = {"scene": "urban", "n_points": 2, "n_trials": 1, "algorithms": ["MF"],
           "band_plan": {"subcarriers": 48}}
    cfg.update(kw)
    f = tmp_path / "cfg.json"
    f.write_text(json.dumps(cfg))
    return f


def test_run_and_summarize(tmp_path, capsys):
    cfg = _config(tmp_path)
    out = tmp_path / "res.csv"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    assert out.read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
    assert len(read_records(str(out))) == 2
    rm, cdf = tmp_path / "rmse.csv", tmp_path / "cdf.csv"
    assert main(["summarize", "--input", str(out), "--rmse-out", str(rm),
                 "--cdf-out", str(cdf)]) == EXIT_OK
    assert rm.read_text().startswith("sweep_id,traj_idx,algorithm,n,rmse_range_err_m")
    assert len(cdf.read_text().splitlines()) == 101


def test_run_config_errors(tmp_path):
    out = tmp_path / "res.csv"
    bad = _config(tmp_path, n_trials=0)
    assert main(["run", "--config", str(bad), "--out", str(out)]) == EXIT_CONFIG
    assert main(["run", "--config", str(tmp_path / "missing.json"), "--out", str(out)]) == \
        EXIT_CONFIG
    junk = tmp_path / "junk.json"
    junk.write_text("{")
    assert main(["run", "--config", str(junk), "--out", str(out)]) == EXIT_CONFIG


def test_summarize_rejects_bad_csv(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("a,b\n1,2\n")
    assert main(["summarize", "--input", str(f)]) == EXIT_CONFIG


def test_usage_errors():
    assert main([]) == EXIT_CONFIG
    assert main(["simulate"]) == EXIT_CONFIG


def test_module_entry_point(tmp_path):
    env = dict(os.environ)
    r = subprocess.run([sys.executable, "-m", "sidelinkpos", "simulate", "--position", "1.6",
                        "30", "1.5"], capture_output=True, text=True, env=env, timeout=120)
    assert r.returncode == 0
    assert r.stdout.startswith("gain_re")
