import csv
import json
import os

import pytest

from moranrate.cli import main


@pytest.fixture(autouse=True)
def fixed_epoch(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


SIM = ["simulate", "--n", "1000", "--mu", "1", "--q", "0.6", "--gamma", "1",
       "--horizon", "10", "--seed", "7"]


class TestSimulate:
    def test_smoke(self, tmp_path):
        assert main(SIM + ["--out", str(tmp_path)]) == 0
        with open(tmp_path / "trajectory.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == ["t", "mean", "c2", "max", "median"]
        times = [float(r["t"]) for r in rows]
        assert times == sorted(times) and times[-1] == 10
        man = json.loads(read(tmp_path / "manifest.json"))
        assert man["subcommand"] == "simulate" and man["seed"] == 7

    def test_missing_flag(self, capsys):
        with pytest.raises(SystemExit) as err:
            main(SIM[:1] + SIM[3:])
        assert err.value.code == 2
        assert "--n" in capsys.readouterr().err

    def test_bad_value(self, tmp_path, capsys):
        assert main(SIM[:2] + ["1"] + SIM[3:] + ["--out", str(tmp_path)]) == 2
        assert "--n" in capsys.readouterr().err

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(SIM + ["--out", str(a), "--snapshot"]) == 0
        assert main(SIM + ["--out", str(b), "--snapshot"]) == 0
        for name in ("trajectory.csv", "snapshots.jsonl", "manifest.json"):
            assert read(a / name) == read(b / name)

    def test_writes_only_inside_out(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert main(SIM + ["--out", "o"]) == 0
        assert os.listdir(tmp_path) == ["o"]


def write_cfg(path, **kw):
    base = {"n_ladder": [20, 40, 80], "mu": 1, "q": 1, "gamma": 1, "replicates": 2,
            "seed": 1, "horizon": 20.0}
    base.update(kw)
    path.write_text(json.dumps(base))
    return str(path)


class TestSweep:
    def test_outputs(self, tmp_path):
        c = write_cfg(tmp_path / "c.json")
        out = tmp_path / "o"
        assert main(["sweep", c, "--out", str(out)]) == 0
        for name in ("results.csv", "ensemble.csv", "fit_report.json", "manifest.json"):
            assert (out / name).exists()
        man = json.loads(read(out / "manifest.json"))
        assert man["parameters"]["seed"] == 1

    def test_not_increasing(self, tmp_path, capsys):
        c = write_cfg(tmp_path / "c.json", n_ladder=[40, 20])
        assert main(["sweep", c]) == 2
        assert "/n_ladder" in capsys.readouterr().err

    def test_schema_pointer(self, tmp_path, capsys):
        c = write_cfg(tmp_path / "c.json", replicates="many")
        assert main(["sweep", c]) == 2
        assert "/replicates" in capsys.readouterr().err

    def test_dry_run(self, tmp_path, capsys, monkeypatch):
        monkeypatch.chdir(tmp_path)
        c = write_cfg(tmp_path / "c.json", out="never")
        assert main(["sweep", c, "--dry-run"]) == 0
        plan = json.loads(capsys.readouterr().out)
        assert plan["runs"] == 6 and not (tmp_path / "never").exists()

    def test_workers_do_not_change_bytes(self, tmp_path):
        c = write_cfg(tmp_path / "c.json")
        assert main(["sweep", c, "--out", str(tmp_path / "a"), "--workers", "1"]) == 0
        assert main(["sweep", c, "--out", str(tmp_path / "b"), "--workers", "2"]) == 0
        for name in ("results.csv", "ensemble.csv", "fit_report.json"):
            assert read(tmp_path / "a" / name) == read(tmp_path / "b" / name)


class TestAsymptotics:
    def test_decades(self, tmp_path):
        assert main(["asymptotics", "--log10n-ladder", "3:300:1", "--out", str(tmp_path)]) == 0
        with open(tmp_path / "asymptotics.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 298
        gaps = [float(r["abs_wf_T_minus_d"]) for r in rows if float(r["N_log10"]) >= 10]
        assert all(b < a for a, b in zip(gaps, gaps[1:]))
        for r in rows:
            assert float(r["wT_rel_error"]) < 1e-12
            assert float(r["lemma4_wt_rel_error"]) < 1e-12
            assert float(r["lemma4_w4w_rel_error"]) < 1e-12

    def test_single_point(self, tmp_path):
        assert main(["asymptotics", "--log10n-ladder", "50", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "asymptotics.csv").read_text().count("\n") == 2

    def test_domain(self, tmp_path):
        assert main(["asymptotics", "--log10n-ladder", "0.5", "--out", str(tmp_path)]) == 2


class TestBdCompare:
    ARGS = ["bd-compare", "--w", "2", "--d", "1", "--s", "1", "--paths", "20000", "--seed", "4"]

    def test_table(self, tmp_path):
        assert main(self.ARGS + ["--out", str(tmp_path)]) == 0
        with open(tmp_path / "bd_compare.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 21
        assert round(float(rows[0]["analytic"]), 5) == 0.38730
        assert all(float(r["empirical_with_advanced"]) == 0 for r in rows)
        assert json.loads(read(tmp_path / "bd_compare.json"))["p_value"] > 0.01

    def test_advanced_column(self, tmp_path):
        assert main(self.ARGS + ["--qmu", "0.5", "--out", str(tmp_path)]) == 0
        with open(tmp_path / "bd_compare.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert sum(float(r["empirical_with_advanced"]) for r in rows) > 0

    def test_bytes(self, tmp_path):
        assert main(self.ARGS + ["--out", str(tmp_path / "a")]) == 0
        assert main(self.ARGS + ["--out", str(tmp_path / "b")]) == 0
        for name in ("bd_compare.csv", "bd_compare.json", "manifest.json"):
            assert read(tmp_path / "a" / name) == read(tmp_path / "b" / name)

    def test_invalid(self, tmp_path):
        assert main(["bd-compare", "--w", "-1", "--d", "1", "--s", "1",
                     "--out", str(tmp_path)]) == 2
