import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from continuity_lab import validation
from continuity_lab.cli import ConfigError, format_config, main, parse_config, snapshot_field
from continuity_lab.experiments import StudyConfig
from continuity_lab.fields import field_names

MINIMAL = """\
[study]
study = oscillating   # sweep over k
k = 4, 8, 16
p = 2
t = 1
"""


class TestParse:
    def test_minimal(self):
        cfg = parse_config(MINIMAL)
        assert cfg.k == (4, 8, 16) and cfg.p == 2.0 and cfg.t == 1.0
        assert cfg.cells_per_wave == StudyConfig.defaults("oscillating").cells_per_wave

    def test_misspelled_key(self):
        with pytest.raises(ConfigError, match=r"line 2: unknown key 'kapa'; did you mean 'kappa'"):
            parse_config("study = diffusion\nkapa = 0.1\n")

    def test_non_dyadic_h(self):
        with pytest.raises(ConfigError, match="dyadic"):
            parse_config("[study]\nstudy = upwind\nh = 1/64, 1/100, 1/256\n")

    def test_fractions(self):
        cfg = parse_config("study = upwind\nh = 1/64, 1/128, 1/256\n")
        assert cfg.h == (1 / 64, 1 / 128, 1 / 256)

    @pytest.mark.parametrize("text,pattern", [
        ("p = 2\n", "missing required key 'study'"),
        ("study = oscillating\np = two\n", "line 2: cannot read 'two'"),
        ("study = oscillating\n[grid]\nk = 4, 8\n", "line 3: key 'k' belongs to section"),
        ("study = oscillating\n[gird]\n", r"unknown section \[gird\]; did you mean \[grid\]"),
        ("study = oscillating\np = 2\np = 3\n", "duplicate key 'p'"),
        ("study = oscillating\njust words\n", "line 2: expected key = value"),
        ("study = oscillating\n[grid\n", "malformed section header"),
        ("study = oscillating\np = 0.5\n", "p must exceed 1"),
        ("study = nonsense\n", "unknown study"),
    ])
    def test_errors(self, text, pattern):
        with pytest.raises(ConfigError, match=pattern):
            parse_config(text)

    def test_overrides(self):
        cfg = parse_config(MINIMAL, ["t=0.5", "grid.cells_per_wave=32"])
        assert cfg.t == 0.5 and cfg.cells_per_wave == 32
        with pytest.raises(ConfigError):
            parse_config(MINIMAL, ["field.t=0.5"])
        with pytest.raises(ConfigError):
            parse_config(MINIMAL, ["nonsense"])

    def test_round_trip_defaults(self):
        for s in ("oscillating", "diffusion", "upwind", "mixing", "lagrangian"):
            cfg = StudyConfig.defaults(s)
            assert parse_config(format_config(cfg)) == cfg


pow2 = st.integers(4, 11).map(lambda e: 2**e)


@given(st.sampled_from(["oscillating", "diffusion", "mixing", "lagrangian"]),
       st.floats(1.01, 10), st.floats(0.01, 10), pow2,
       st.lists(st.integers(1, 64), min_size=1, max_size=5, unique=True),
       st.lists(st.floats(1e-6, 1.0), min_size=1, max_size=4, unique=True),
       st.floats(0.05, 1.0), st.sampled_from(["results", "out/run 1"]))
def test_round_trip(study, p, t, cells, ks, kappas, safety, output):
    cfg = StudyConfig.defaults(study).replace(
        p=p, t=t, cells=cells, k=tuple(sorted(ks)), kappa=tuple(sorted(kappas)),
        safety=safety, output=output).validate()
    assert parse_config(format_config(cfg)) == cfg


class TestRun:
    def test_oscillating_run(self, tmp_path, capsys):
        path = tmp_path / "osc.cfg"
        path.write_text(MINIMAL)
        out = tmp_path / "nested" / "dir"
        assert main(["run", str(path), "-o", str(out)]) == 0
        text = capsys.readouterr().out
        assert text.count("PASS") == 4 and "FAIL" not in text
        rows = list(csv.reader(open(out / "oscillating.csv")))
        assert [r[0] for r in rows[1:]] == ["4.0", "8.0", "16.0"]
        summary = json.load(open(out / "oscillating.json"))
        assert summary["all_pass"] is True
        assert summary["config"]["cells_per_wave"] == 16
        assert parse_config((out / "oscillating.cfg").read_text()) == parse_config(MINIMAL)

    def test_rerun_is_byte_identical(self, tmp_path):
        path = tmp_path / "osc.cfg"
        path.write_text(MINIMAL)
        main(["run", str(path), "-o", str(tmp_path / "a")])
        main(["run", str(path), "-o", str(tmp_path / "b")])
        for name in ("oscillating.csv", "oscillating.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_contract_failure_exits_2(self, tmp_path, capsys):
        path = tmp_path / "osc.cfg"
        path.write_text(MINIMAL)
        # at t = 0.01 the density has barely moved, so the L^1 floor of 0.2 fails
        code = main(["run", str(path), "-o", str(tmp_path), "--set", "t=0.01"])
        assert code == 2
        assert "FAIL  oscillating: l1_at_least_0.2" in capsys.readouterr().out

    def test_bad_config_exits_1(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text("study = oscillating\nkk = 3\n")
        assert main(["run", str(path)]) == 1
        assert "line 2" in capsys.readouterr().err

    def test_missing_file_exits_1(self, tmp_path):
        assert main(["run", str(tmp_path / "absent.cfg")]) == 1

    def test_usage_error_exits_1(self):
        with pytest.raises(SystemExit) as exc:
            main(["export-snapshot", "--field", "oscillating"])
        assert exc.value.code == 1


def test_list_fields(capsys):
    assert main(["list-fields"]) == 0
    out = capsys.readouterr().out
    for name in field_names():
        assert name in out


def test_validate_dispatch(monkeypatch, capsys):
    seen = {}

    def fake(quick=False):
        seen["quick"] = quick
        return [validation.Check("a", True, "ok"), validation.Check("b", False, "bad")]

    monkeypatch.setattr(validation, "run_suite", fake)
    assert main(["validate", "--quick"]) == 2
    assert seen["quick"] is True
    out = capsys.readouterr().out
    assert "PASS  a" in out and "FAIL  b" in out and "1/2 checks passed" in out


class TestSnapshot:
    def test_figure_one_csv(self, tmp_path):
        path = tmp_path / "snap.csv"
        assert main(["export-snapshot", "--field", "oscillating", "--k", "10", "--t", "1",
                     "--cells", "400", "-o", str(path)]) == 0
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["time", "i", "x", "value"]
        assert len(rows) == 401
        x = np.array([float(r[2]) for r in rows[1:]])
        v = np.array([float(r[3]) for r in rows[1:]])
        h = 1 / 400
        assert np.mean(v) == pytest.approx(1.0, abs=1e-12)
        # minima at j/10 and maxima at (2j+1)/20, each within one cell width
        lat = np.arange(11) / 10
        half = (np.arange(10) + 0.5) / 10
        imin = np.argsort(v)[:10]
        imax = np.argsort(v)[-10:]
        assert all(np.abs(lat - xi).min() <= h for xi in x[imin])
        assert all(np.abs(half - xi).min() <= h for xi in x[imax])
        assert v.min() == pytest.approx(math.exp(-1), rel=0.02)
        assert v.max() == pytest.approx(math.e, rel=0.02)

    def test_stdout(self, capsys):
        assert main(["export-snapshot", "--field", "oscillating", "--k", "2", "--t", "0.5", "--cells", "8"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "time,i,x,value" and len(lines) == 9

    def test_zero_field(self):
        np.testing.assert_array_equal(snapshot_field("zero", 1, 3.0, 5).values, np.ones(5))

    @pytest.mark.parametrize("name", ["shear_x", "vortex"])
    def test_unsupported(self, name, capsys):
        assert main(["export-snapshot", "--field", name, "--k", "1", "--t", "1", "--cells", "4"]) == 1
        assert "error" in capsys.readouterr().err


def test_python_module_entry():
    import subprocess
    import sys
    out = subprocess.run([sys.executable, "-m", "continuity_lab", "list-fields"],
                         capture_output=True, text=True, check=True)
    assert "oscillating" in out.stdout
