import csv
import hashlib
import json

import pytest

from qsa import __version__
from qsa.cli import main


def write(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert __version__ in capsys.readouterr().out


class TestRun:
    def test_invalid_config_exit_2(self, tmp_path, capsys):
        code = main(["run", write(tmp_path, {"kind": "qmc-paths"})])
        assert code == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "invalid-config" and "seed" in err["message"]

    def test_divergence_exit_3(self, tmp_path, capsys):
        cfg = {"kind": "qmc-paths", "seed": 0, "params": {"gains": [1.0], "theta0": 1e300, "T": 1.0}}
        assert main(["run", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 3
        assert json.loads(capsys.readouterr().err)["error"] == "divergence"

    def test_histogram_outputs_and_manifest(self, tmp_path):
        cfg = {"kind": "qmc-histogram", "seed": 4, "params": {"n_runs": 6, "T": 2.0, "mc_samples": 100}}
        out = tmp_path / "o"
        assert main(["run", write(tmp_path, cfg), "--out", str(out)]) == 0
        man = json.loads((out / "manifest.json").read_text())
        assert man["kind"] == "qmc-histogram" and man["master_seed"] == 4
        assert man["seed_derivation"].startswith("blake2b")
        assert len(man["seeds"]["initial_condition"]) == 6
        summary = read_csv(out / "summary.csv")
        assert summary[0] == ["label", "gain", "mean", "variance", "n_runs", "T"]
        assert [r[0] for r in summary[1:]] == ["g=1", "g=2", "MC"]
        assert b"\r\n" not in (out / "runs.csv").read_bytes()

    def test_jobs_do_not_change_outputs(self, tmp_path):
        cfg = write(tmp_path, {"kind": "qmc-histogram", "seed": 2, "params": {"n_runs": 8, "T": 2.0, "mc_samples": 50}})
        main(["run", cfg, "--out", str(tmp_path / "a")])
        main(["run", cfg, "--out", str(tmp_path / "b"), "--jobs", "3"])
        for name in ("summary.csv", "runs.csv"):
            a = hashlib.sha256((tmp_path / "a" / name).read_bytes()).hexdigest()
            b = hashlib.sha256((tmp_path / "b" / name).read_bytes()).hexdigest()
            assert a == b

    def test_output_dir_precedence(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        cfg = {"kind": "assumption-check", "seed": 0, "params": {"A": [[-1.0]]}}
        main(["run", write(tmp_path, cfg)])
        assert (tmp_path / "qsa-out" / "manifest.json").exists()
        monkeypatch.setenv("QSA_OUT_DIR", str(tmp_path / "env"))
        main(["run", write(tmp_path, cfg)])
        assert (tmp_path / "env" / "manifest.json").exists()
        main(["run", write(tmp_path, {**cfg, "output_dir": str(tmp_path / "cfgdir")})])
        assert (tmp_path / "cfgdir" / "manifest.json").exists()
        main(["run", write(tmp_path, {**cfg, "output_dir": str(tmp_path / "cfgdir")}), "--out", str(tmp_path / "flag")])
        assert (tmp_path / "flag" / "manifest.json").exists()

    def test_lqr_pia_exact(self, tmp_path):
        out = tmp_path / "o"
        assert main(["run", write(tmp_path, {"kind": "lqr-pia", "seed": 0, "params": {"mode": "exact"}}), "--out", str(out)]) == 0
        rows = read_csv(out / "pia.csv")
        assert rows[0] == ["round", "K_11", "K_12", "relative_distance"]
        assert float(rows[-1][-1]) < 1e-3

    def test_lqr_eval_short(self, tmp_path):
        cfg = {"kind": "lqr-eval", "seed": 0, "params": {"T": 40.0, "T1": 10.0}}
        out = tmp_path / "o"
        assert main(["run", write(tmp_path, cfg), "--out", str(out)]) == 0
        rows = read_csv(out / "summary.csv")
        assert [r[0] for r in rows[1:]] == ["qsa", "white_noise", "exact"]
        col = rows[0].index("relative_error")
        assert 0 < float(rows[1][col]) < 1.0
        assert float(rows[3][col]) == 0.0

    def test_gradfree(self, tmp_path):
        cfg = {"kind": "gradfree", "seed": 0, "params": {"objective": {"hessian": [[2, 0.5], [0.5, 1]], "minimizer": [1, -1]}, "theta0": [0, 0], "T": 2.0, "gain": 1.0}}
        out = tmp_path / "o"
        assert main(["run", write(tmp_path, cfg), "--out", str(out)]) == 0
        assert (out / "esc1.csv").exists() and (out / "esc2.csv").exists()

    def test_coupling_sweep(self, tmp_path):
        cfg = {"kind": "coupling-sweep", "seed": 0, "params": {"gains": [3.0], "T": 10.0, "window": [8.0, 10.0], "centered": True}}
        out = tmp_path / "o"
        assert main(["run", write(tmp_path, cfg), "--out", str(out)]) == 0
        rows = read_csv(out / "summary.csv")
        assert rows[0][-1] == "verdict"


class TestCheck:
    def test_unknown_suite(self, capsys):
        assert main(["check", "--suite", "nope"]) == 2

    def test_single_criterion(self, capsys):
        code = main(["check", "--only", "3c"])
        out = capsys.readouterr().out
        assert code == 0
        assert out.splitlines()[0].startswith("[PASS] 3c")
