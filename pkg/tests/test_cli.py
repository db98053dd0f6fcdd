import csv
import io
import json
import subprocess
import sys

import pytest

from immse_lab.catalog import (
    BUILTINS, ConfigError, builtin, config_hash, load_scenarios, parse_scenario, scenario_to_dict,
)
from immse_lab.cli import main

REQUIRED = ["gaussian-memoryless", "bpsk-memoryless", "linear-feedback-n4", "tanh-feedback-n4",
            "memory-channel-n4", "debruijn-gaussian", "debruijn-mixture", "ct-constant-message",
            "ct-linear-feedback"]


def write(tmp_path, doc, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def scalar_doc(**kw):
    d = {"label": "g", "identity": "IMMSE_MEMORYLESS", "kind": "discrete", "n": 1,
         "prior": {"family": "gaussian"}, "g": ["w"], "snr": 1.0, "backend": "oracle"}
    d.update(kw)
    return d


class TestCatalog:
    def test_required_builtins(self):
        assert set(REQUIRED) <= set(BUILTINS)

    def test_parameter_suffix(self):
        sc = builtin("gaussian-memoryless-snr1")
        assert sc.config.param == 1.0 and sc.config.parameterization == "snr"
        assert builtin("debruijn-gaussian-t4").config.param == 4.0
        with pytest.raises(ConfigError):
            builtin("nope")

    @pytest.mark.parametrize("name", REQUIRED)
    def test_round_trip(self, name):
        sc = BUILTINS[name]
        again = parse_scenario(scenario_to_dict(sc), name)
        assert scenario_to_dict(again) == scenario_to_dict(sc)
        assert config_hash([again]) == config_hash([sc])

    def test_hash_tracks_changes(self):
        d = scalar_doc()
        assert config_hash([parse_scenario(d)]) != config_hash([parse_scenario(dict(d, seed=2))])

    @pytest.mark.parametrize("doc,msg", [
        (scalar_doc(n=2, g=["w + y[1]", "w"]), "causality"),
        (scalar_doc(identity="NOPE"), "schema"),
        (scalar_doc(bogus=1), "schema"),
        (scalar_doc(rho=1.0), "exactly one"),
        (scalar_doc(g=["w +"]), "syntax"),
        (scalar_doc(prior={"family": "mixture", "weights": [0.5, 0.6], "means": [0, 1],
                           "variances": [1, 1]}), "sum to 1"),
        (scalar_doc(identity="DEBRUIJN"), "does not fit"),
        (scalar_doc(n=2, g=["w", "w + y[1]"]), "feedback"),
    ])
    def test_config_errors(self, doc, msg):
        with pytest.raises(ConfigError, match=msg):
            parse_scenario(doc)

    def test_multi_scenario_file(self, tmp_path):
        p = write(tmp_path, {"scenarios": [scalar_doc(label="a"), scalar_doc(label="b", snr=2.0)]})
        assert [s.name for s in load_scenarios(p)] == ["a", "b"]


class TestList:
    def test_lines(self, capsys):
        assert main(["list"]) == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert len(out) >= 9
        assert all(any(line.startswith(n) for line in out) for n in REQUIRED)

    def test_json(self, capsys):
        assert main(["list", "--json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert {d["name"] for d in doc} >= set(REQUIRED)

    def test_unknown_flag(self):
        r = subprocess.run([sys.executable, "-m", "immse_lab", "list", "--bogus"],
                           capture_output=True, text=True)
        assert r.returncode == 2 and "usage" in r.stderr


class TestVerify:
    def test_pass_and_outputs(self, tmp_path, capsys):
        out = tmp_path / "r"
        assert main(["verify", "gaussian-memoryless-snr1", "--backend", "oracle", "--out", str(out)]) == 0
        doc = json.loads((out / "gaussian-memoryless-snr1.json").read_text())
        rep = doc["report"]
        assert rep["lhs"]["value"] == pytest.approx(0.25, abs=1e-8)
        assert rep["rhs_total"] == pytest.approx(0.25, abs=1e-12)
        rows = list(csv.DictReader(io.StringIO((out / "summary.csv").read_text())))
        assert rows[0]["verdict"] == "pass"
        manifest = json.loads((out / "manifest.json").read_text())
        assert set(manifest["outputs"]) == {"gaussian-memoryless-snr1.json", "summary.csv", "manifest.json"}
        assert "PASS" in capsys.readouterr().out

    def test_byte_identical(self, tmp_path):
        args = ["verify", "tanh-feedback-n4", "--n", "200", "--k", "50", "--seed", "3"]
        assert main(args + ["--out", str(tmp_path / "a")]) in (0, 1)
        assert main(args + ["--out", str(tmp_path / "b")]) in (0, 1)
        a = (tmp_path / "a" / "tanh-feedback-n4.json").read_bytes()
        assert a == (tmp_path / "b" / "tanh-feedback-n4.json").read_bytes()
        assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()

    def test_causality_exit_2(self, tmp_path, capsys):
        doc = scalar_doc(identity="FEEDBACK_EXT", n=2, g=["w + y[1]", "w"])
        p = write(tmp_path, doc)
        assert main(["verify", p, "--out", str(tmp_path / "r")]) == 2
        assert "causality" in capsys.readouterr().err

    def test_tiny_budget_exit_1(self, tmp_path, capsys):
        assert main(["verify", "gaussian-memoryless", "--n", "10", "--k", "100",
                     "--out", str(tmp_path)]) == 1
        rep = json.loads((tmp_path / "gaussian-memoryless.json").read_text())["report"]
        assert rep["verdict"] == "fail" and "SE above tolerance" in rep["diagnosis"]

    @pytest.mark.parametrize("ref", ["missing.json", "no-such-builtin"])
    def test_missing(self, tmp_path, ref):
        assert main(["verify", str(tmp_path / ref) if ref.endswith(".json") else ref,
                     "--out", str(tmp_path)]) == 2

    def test_bad_override(self, tmp_path):
        assert main(["verify", "gaussian-memoryless", "--n", "0", "--out", str(tmp_path)]) == 2

    def test_fail_exit_1(self, tmp_path):
        assert main(["verify", "linear-feedback-n4", "--out", str(tmp_path)]) == 1
        assert main(["verify", "linear-feedback-n4", "--rhs-form", "complete", "--out", str(tmp_path)]) == 0

    def test_jobs_same_reports(self, tmp_path):
        p = write(tmp_path, {"scenarios": [scalar_doc(label="a"), scalar_doc(label="b", snr=2.0)]})
        assert main(["verify", p, "--jobs", "2", "--out", str(tmp_path / "j2")]) == 0
        assert main(["verify", p, "--out", str(tmp_path / "j1")]) == 0
        for f in ("a.json", "b.json", "summary.csv"):
            assert (tmp_path / "j1" / f).read_bytes() == (tmp_path / "j2" / f).read_bytes()


class TestSweep:
    def test_rho_axis(self, capsys):
        assert main(["sweep", "gaussian-memoryless", "--backend", "oracle",
                     "--axis", "rho", "--grid", "0.5,1,2"]) == 0
        rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
        assert len(rows) == 3
        for r in rows:
            rho = float(r["value"])
            assert float(r["rhs"]) == pytest.approx(rho / (1 + rho ** 2), abs=1e-12)
            assert r["axis"] == "rho"

    def test_m_axis_to_file(self, tmp_path):
        out = tmp_path / "s.csv"
        assert main(["sweep", "ct-linear-feedback", "--rhs-form", "complete", "--axis", "m",
                     "--grid", "4,8", "--out", str(out)]) == 0
        rows = list(csv.DictReader(out.open()))
        assert [r["value"] for r in rows] == ["4", "8"]

    @pytest.mark.parametrize("grid", ["", " , ", "a,b"])
    def test_bad_grid(self, grid):
        assert main(["sweep", "gaussian-memoryless", "--axis", "N", "--grid", grid]) == 2

    def test_bad_axis_for_scenario(self):
        assert main(["sweep", "gaussian-memoryless", "--axis", "t", "--grid", "1"]) == 2
        assert main(["sweep", "gaussian-memoryless", "--axis", "N", "--grid", "100,10"]) == 2

    def test_unknown_axis(self):
        with pytest.raises(SystemExit) as e:
            main(["sweep", "gaussian-memoryless", "--axis", "q", "--grid", "1"])
        assert e.value.code == 2
