import json
import subprocess
import sys

import numpy as np
import pytest

from obdsub import InvalidInput
from obdsub.cli import RunConfig, main
from obdsub.datasets import SimSpec, simulate, write_data_csv
from obdsub.design import read_design_csv


@pytest.fixture
def data_csv(tmp_path):
    p = tmp_path / "data.csv"
    write_data_csv(simulate(SimSpec(2000, 3, seed=1)), p)
    return p


def run(args):
    code = main([str(a) for a in args])
    return code


def select(data_csv, out, *extra):
    return run(["select", "--input", data_csv, "--model", "linear1", "--criterion", "D", "--n", 40,
                "--seed", 7, "--out", out, *extra])


class TestSelect:
    def test_outputs(self, data_csv, tmp_path):
        assert select(data_csv, tmp_path / "a") == 0
        names = {p.name for p in (tmp_path / "a").iterdir()}
        assert {"subdata.csv", "design.csv", "report.json", "trace.jsonl"} <= names
        report = json.loads((tmp_path / "a" / "report.json").read_text())
        assert report["converged"] and report["certificate"]["satisfied"]
        assert report["config"]["n"] == 40 and report["config"]["seed"] == 7

    def test_deterministic(self, data_csv, tmp_path):
        select(data_csv, tmp_path / "a", "--no-figures")
        select(data_csv, tmp_path / "b", "--no-figures")
        for f in ("subdata.csv", "design.csv", "trace.jsonl"):
            a = (tmp_path / "a" / f).read_text().splitlines()
            b = (tmp_path / "b" / f).read_text().splitlines()
            if f == "design.csv":
                a, b = a[1:], b[1:]  # the header echoes the output directory
            assert a == b

    def test_workers(self, data_csv, tmp_path):
        select(data_csv, tmp_path / "w1", "--no-figures", "--workers", 1)
        select(data_csv, tmp_path / "w4", "--no-figures", "--workers", 4)
        for f in ("subdata.csv", "trace.jsonl"):
            assert (tmp_path / "w1" / f).read_bytes() == (tmp_path / "w4" / f).read_bytes()

    def test_config_round_trip(self, data_csv, tmp_path):
        select(data_csv, tmp_path / "a", "--no-figures", "--epsilon", 1e-6)
        assert run(["select", "--config", tmp_path / "a" / "report.json", "--out", tmp_path / "b"]) == 0
        cfg_a = json.loads((tmp_path / "a" / "report.json").read_text())["config"]
        cfg_b = json.loads((tmp_path / "b" / "report.json").read_text())["config"]
        assert {**cfg_a, "out": None} == {**cfg_b, "out": None}
        for f in ("subdata.csv", "trace.jsonl"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_flags_override_config(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"simulate": "scenario1", "N": 500, "p": 2, "n": 20, "figures": False}))
        assert run(["select", "--config", cfg, "--n", 24, "--out", tmp_path / "o"]) == 0
        assert json.loads((tmp_path / "o" / "report.json").read_text())["efficiency"]["n"] == 24

    def test_simulated_source(self, tmp_path):
        assert run(["select", "--simulate", "scenario2", "--N", 800, "--n", 30, "--criterion", "D:1-3",
                    "--no-figures", "--out", tmp_path]) == 0


class TestCertify:
    def test_selected_design_passes(self, data_csv, tmp_path, capsys):
        select(data_csv, tmp_path / "a", "--no-figures")
        capsys.readouterr()
        assert run(["certify", "--design", tmp_path / "a" / "design.csv", "--epsilon", 1e-5]) == 0
        assert json.loads(capsys.readouterr().out)["satisfied"] is True

    def test_subdata(self, data_csv, tmp_path, capsys):
        select(data_csv, tmp_path / "a", "--no-figures")
        capsys.readouterr()
        code = run(["certify", "--subdata", tmp_path / "a" / "subdata.csv", "--input", data_csv,
                    "--model", "linear1", "--criterion", "D", "--n", 40])
        assert code == 0
        assert "satisfied" in json.loads(capsys.readouterr().out)

    def test_needs_one_source(self, tmp_path):
        assert run(["certify"]) == 2


class TestCompareSimulate:
    def test_compare(self, tmp_path, capsys):
        code = run(["compare", "--simulate", "scenario1", "--N", 3000, "--n", 60, "--reps", 2,
                    "--methods", "srs,lev,iboss,iboss+,obd", "--out", tmp_path])
        assert code == 0
        rows = (tmp_path / "comparison.csv").read_text().splitlines()
        effs = [float(v) for v in rows[1].split(",")[1:]]
        assert effs == sorted(effs)
        assert (tmp_path / "comparison.png").exists()

    def test_simulate(self, tmp_path):
        out = tmp_path / "x.csv"
        assert run(["simulate", "--N", 100, "--p", 2, "--seed", 3, "--out", out]) == 0
        first = out.read_bytes()
        run(["simulate", "--N", 100, "--p", 2, "--seed", 3, "--out", out])
        assert out.read_bytes() == first and out.read_text().startswith("x1,x2\n")


class TestExitCodes:
    def test_invalid_config(self, tmp_path, capsys):
        assert run(["select", "--simulate", "scenario1", "--N", 100, "--criterion", "E", "--n", 10,
                    "--out", tmp_path]) == 2
        err = capsys.readouterr().err.strip().splitlines()
        assert json.loads(err[-1])["level"] == "error"

    def test_missing_n(self, data_csv, tmp_path):
        assert run(["select", "--input", data_csv, "--model", "linear1", "--out", tmp_path]) == 2

    def test_both_sources(self, data_csv, tmp_path):
        assert run(["select", "--input", data_csv, "--simulate", "scenario1", "--n", 5, "--out", tmp_path]) == 2

    def test_bad_csv(self, tmp_path, capsys):
        p = tmp_path / "bad.csv"
        p.write_text("a,b\n1,abc\n")
        assert run(["select", "--input", p, "--model", "linear1", "--n", 1, "--out", tmp_path]) == 2
        assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["rows"] == [2]

    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["select", "--bogus"])
        assert exc.value.code == 2
        json.loads(capsys.readouterr().err.strip().splitlines()[-1])

    def test_numeric_failure(self, tmp_path):
        p = tmp_path / "flat.csv"
        write_data_csv(np.ones((20, 2)), p)
        assert run(["select", "--input", p, "--model", "linear1", "--n", 6, "--out", tmp_path / "o"]) == 3

    def test_module_entry(self, tmp_path):
        r = subprocess.run([sys.executable, "-m", "obdsub", "simulate", "--N", "5", "--p", "1", "--out",
                            str(tmp_path / "d.csv")], capture_output=True, text=True)
        assert r.returncode == 0 and (tmp_path / "d.csv").exists()


class TestRunConfig:
    def test_round_trip(self):
        cfg = RunConfig(simulate="scenario3", N=100, n=30, criterion="A:1-5", obd={"epsilon": 1e-6})
        assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    def test_unknown_key(self):
        with pytest.raises(InvalidInput):
            RunConfig.from_dict({"nn": 3})

    def test_design_header_echo(self, data_csv, tmp_path):
        select(data_csv, tmp_path / "a", "--no-figures")
        _, meta = read_design_csv(tmp_path / "a" / "design.csv")
        assert meta["config"]["criterion"] == "D" and meta["n"] == 40
