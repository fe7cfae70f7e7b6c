"""Command-line harness tests: scenario files, run/check/sweep, exit
codes, and the golden-trace fixture."""

from pathlib import Path

import pytest

from ftcollect.cli import main
from ftcollect.failmodel import FailurePoint
from ftcollect.oracle import Scenario
from ftcollect.scenariofile import format_scenario, parse_scenario

FIXTURES = Path(__file__).parent / "fixtures"


class TestScenarioFile:
    def test_round_trip(self):
        scn = Scenario(n=9, f=2, collective="allreduce", op="max",
                       scheme="count", candidates=(0, 3), seed=17)
        assert parse_scenario(format_scenario(scn)) == scn

    def test_fail_directives(self):
        scn = parse_scenario("n 5\nf 1\nfail 2 pre\nfail 3 after-sends 1\n")
        assert scn.script.point(2).preoperational
        assert scn.script.point(3) == FailurePoint(after_sends=1)

    def test_comments_and_blank_lines_ignored(self):
        scn = parse_scenario("# header\n\nn 4\nf 0\n")
        assert (scn.n, scn.f) == (4, 0)

    @pytest.mark.parametrize("text, fragment", [
        ("n 4\nf 1\nbogus 3\n", "unknown key"),
        ("n 4\nf 1\nop mean\n", "op must be"),
        ("f 1\n", "must set n"),
        ("n 4\nf 1\nfail 2 pre\nfail 2 pre\n", "duplicate"),
        ("n 4\nf 1\nfail 9 pre\n", "unknown process"),
        ("n 4\nf 1\nroot 7\n", "out of range"),
    ])
    def test_rejections_carry_context(self, text, fragment):
        with pytest.raises(ValueError, match=fragment):
            parse_scenario(text)


class TestRunCommand:
    def test_worked_example_prints_result(self, tmp_path, capsys):
        scn = tmp_path / "s.scn"
        scn.write_text("n 7\nf 1\ncollective reduce\ninputs ids\nfail 1 pre\n")
        assert main(["run", str(scn)]) == 0
        out = capsys.readouterr().out
        assert "result 20" in out
        assert "R3 pass" in out

    def test_failure_free_message_counts(self, tmp_path, capsys):
        scn = tmp_path / "s.scn"
        scn.write_text("n 7\nf 1\n")
        assert main(["run", str(scn), "--quiet"]) == 0
        out = capsys.readouterr().out
        assert "up_correction=6" in out
        assert "tree=6" in out

    def test_parse_error_exits_2(self, tmp_path, capsys):
        scn = tmp_path / "s.scn"
        scn.write_text("n 7\nwat 3\n")
        assert main(["run", str(scn)]) == 2

    def test_missing_file_exits_2(self):
        assert main(["run", "/nonexistent.scn"]) == 2


class TestCheckCommand:
    def test_fresh_trace_passes(self, tmp_path, capsys):
        scn = tmp_path / "s.scn"
        scn.write_text("n 6\nf 2\ncollective allreduce\n")
        trace = tmp_path / "t.trace"
        assert main(["run", str(scn), "--trace", str(trace), "--quiet"]) == 0
        capsys.readouterr()
        assert main(["check", str(trace), str(scn)]) == 0
        assert "A5 pass" in capsys.readouterr().out

    def test_golden_trace_verdict_is_stable(self, capsys):
        rc = main(["check", str(FIXTURES / "worked_example.trace"),
                   str(FIXTURES / "worked_example.scn")])
        out = capsys.readouterr().out
        assert rc == 0
        assert out.count("pass") == 6 and "FAIL" not in out

    def test_tampered_trace_exits_1(self, tmp_path, capsys):
        lines = (FIXTURES / "worked_example.trace").read_text().splitlines()
        pruned = [ln for ln in lines
                  if not ("ev=deliver" in ln and "actor=3" in ln)]
        bad = tmp_path / "bad.trace"
        bad.write_text("".join(ln + "\n" for ln in pruned))
        assert main(["check", str(bad), str(FIXTURES / "worked_example.scn")]) == 1
        assert "R5 FAIL" in capsys.readouterr().out


class TestSweepCommand:
    def test_small_grid_passes(self, capsys):
        rc = main(["sweep", "--n-range", "4:8", "--f-range", "0:2",
                   "--trials", "3", "--seed", "1"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "up_formula" in out
        # f=0 rows have no up-correction traffic at all
        for line in out.splitlines()[1:]:
            cols = line.split()
            if cols[1] == "0":
                assert cols[2] == "0" and cols[3] == "0"

    def test_records_file(self, tmp_path, capsys):
        rec = tmp_path / "records.txt"
        assert main(["sweep", "--n-range", "4:5", "--f-range", "1:1",
                     "--trials", "2", "--records", str(rec)]) == 0
        capsys.readouterr()
        assert "n=4 f=1" in rec.read_text()
