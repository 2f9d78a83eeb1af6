import io
import json
from contextlib import redirect_stdout, redirect_stderr

import pytest

from prophecy.cli import main

LOOP = """
l0: x := 10
l1: if x <= 0 then l4
l2: x := x - 1
l3: goto l1
l4: halt
l5: done
"""

BRANCH = """
l0: if x <= 0 then l3
l1: z := y
l2: goto l4
l3: z := w
l4: halt
l5: done
"""


def run_cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        try:
            code = main(list(argv))
        except SystemExit as exc:  # argparse usage errors
            code = exc.code
    return code, out.getvalue(), err.getvalue()


@pytest.fixture()
def loop_prog(tmp_path):
    path = tmp_path / "loop.prog"
    path.write_text(LOOP)
    return str(path)


@pytest.fixture()
def branch_prog(tmp_path):
    path = tmp_path / "branch.prog"
    path.write_text(BRANCH)
    return str(path)


class TestAnalyze:
    def test_concrete_check_passes(self, loop_prog):
        code, out, _ = run_cli("analyze", loop_prog, "--mode", "concrete", "--check")
        assert code == 0
        assert "runs: 4" in out
        assert "progress: pass" in out

    def test_strict_paper_progress_violation(self, loop_prog):
        code, out, _ = run_cli(
            "analyze", loop_prog, "--mode", "concrete", "--strict-paper", "--check"
        )
        assert code == 1
        assert "progress: FAIL" in out
        assert "l3 -> l1" in out

    def test_all_paths_matches_oracle(self, branch_prog):
        code, out, _ = run_cli("analyze", branch_prog, "--mode", "all-paths", "--check")
        assert code == 0
        assert "oracle_match: pass" in out

    def test_json_format_round_trips(self, loop_prog):
        code, out, _ = run_cli(
            "analyze", loop_prog, "--mode", "concrete", "--check", "--format", "json"
        )
        assert code == 0
        record = json.loads(out)
        assert record["beta"]["l1"] == ["x"]
        assert record["runs"] == 4
        assert record["oracle_match"] is True
        assert record["preservation"] is True and record["progress"] is True

    def test_text_and_json_reports_agree(self, loop_prog):
        _, text, _ = run_cli("analyze", loop_prog, "--check")
        _, raw, _ = run_cli("analyze", loop_prog, "--check", "--format", "json")
        record = json.loads(raw)
        assert f"runs: {record['runs']}" in text
        assert f"mispredictions: {record['mispredictions']}" in text
        for label, live in record["beta"].items():
            assert f"{label}" in text and "{" + ", ".join(live) + "}" in text
        assert ("oracle_match: pass" in text) == (record["oracle_match"] is True)

    def test_init_seeds_state(self, tmp_path):
        path = tmp_path / "reads.prog"
        path.write_text("l0: y := x\nl1: halt\nl2: done")
        code, out, _ = run_cli("analyze", str(path), "--init", "x=5", "--check")
        assert code == 0
        code, _, err = run_cli("analyze", str(path), "--check")
        assert code == 1  # stuck without the seed
        assert "stuck" in err

    def test_parse_error_exit_2(self, tmp_path):
        path = tmp_path / "bad.prog"
        path.write_text("l0: garbage !!\nl1: done")
        code, _, err = run_cli("analyze", str(path))
        assert code == 2
        assert "parse error" in err

    def test_missing_file_exit_2(self):
        code, _, err = run_cli("analyze", "/nonexistent/x.prog")
        assert code == 2

    def test_usage_error_exit_2(self, loop_prog):
        code, _, _ = run_cli("analyze", loop_prog, "--mode", "sideways")
        assert code == 2


class TestStage:
    def test_emits_code_to_stdout_by_default(self):
        code, out, _ = run_cli(
            "stage", "--dsl", "einsum-matmul", "--m", "2", "--n", "2", "--o", "2",
            "--max-bid", "2", "--max-tid", "2",
        )
        assert code == 0
        assert out.startswith('#include "runtime.h"')
        assert "void matmul(" in out

    def test_emit_writes_file(self, tmp_path):
        target = tmp_path / "out.c"
        code, out, _ = run_cli(
            "stage", "--dsl", "nn-conv-relu", "--size", "8", "--filter-size", "3",
            "--emit", str(target),
        )
        assert code == 0
        assert target.read_text().startswith('#include "runtime.h"')

    def test_stats_report_states_count_and_derivation(self):
        code, out, _ = run_cli(
            "stage", "--dsl", "einsum-matmul", "--strategy", "prophecy", "--stats",
            "--m", "4", "--n", "4", "--o", "4", "--max-bid", "2", "--max-tid", "4",
        )
        assert code == 0
        assert "runs: 6" in out
        assert "derivation: runs = merges + 1 = 5 + 1 = 6" in out
        assert "needs_gpu[z] F -> T" in out
        assert "copied_to_device: ['x', 'y']" in out
        assert "copied_to_host: ['z']" in out

    def test_nn_stats_reports_four_runs(self):
        code, out, _ = run_cli(
            "stage", "--dsl", "nn-conv-relu", "--size", "8", "--filter-size", "3", "--stats"
        )
        assert code == 0
        assert "runs: 4" in out

    def test_diff_strategies_pass(self):
        code, out, _ = run_cli(
            "stage", "--dsl", "einsum-matmul", "--diff-strategies",
            "--m", "4", "--n", "3", "--o", "5", "--max-bid", "2", "--max-tid", "4",
        )
        assert code == 0
        assert "diff-strategies: pass" in out

    def test_strategy_rejected_for_nn(self):
        code, _, err = run_cli(
            "stage", "--dsl", "nn-conv-relu", "--strategy", "prophecy"
        )
        assert code == 2
        assert "einsum" in err

    def test_diff_strategies_rejected_for_nn(self):
        code, _, err = run_cli("stage", "--dsl", "nn-conv-relu", "--diff-strategies")
        assert code == 2

    def test_run_interp_deterministic_for_fixed_seed(self):
        args = (
            "stage", "--dsl", "einsum-matvec", "--strategy", "prophecy",
            "--m", "4", "--n", "4", "--max-bid", "2", "--max-tid", "4",
            "--run-interp", "--seed", "3",
        )
        first = run_cli(*args)
        second = run_cli(*args)
        assert first == second
        assert first[0] == 0
        assert "checksum[" in first[1]

    def test_dsl_error_exit_1(self):
        code, _, err = run_cli(
            "stage", "--dsl", "nn-conv-relu", "--size", "2", "--filter-size", "9"
        )
        assert code == 1
        assert "staging error" in err

    def test_seed_changes_checksums(self):
        base = (
            "stage", "--dsl", "einsum-matvec", "--strategy", "prophecy",
            "--m", "4", "--n", "4", "--max-bid", "2", "--max-tid", "4", "--run-interp",
        )
        _, out_a, _ = run_cli(*base, "--seed", "0")
        _, out_b, _ = run_cli(*base, "--seed", "1")
        assert out_a != out_b
