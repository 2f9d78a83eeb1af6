import pytest

from prophecy.core_lang import parse_program
from prophecy.engine import (
    Completed,
    ConstraintSet,
    Misprediction,
    PredictionConstraint,
    ProgramStuckError,
    RunStats,
    StepBudgetExceeded,
    analyze_all_paths,
    analyze_all_paths_with_stats,
    analyze_concrete,
    empty_results,
    execute_once,
    live_variables_oracle,
    reachable_labels,
    solve,
)
from prophecy.extended import check_preservation, check_progress

STRAIGHT = "l0: x := 1\nl1: y := x\nl2: halt\nl3: done"

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


class TestSolve:
    def test_direct_propagation(self):
        constraints = ConstraintSet()
        constraints.add(PredictionConstraint("l1", "l0", frozenset()))
        results = {"l0": frozenset(), "l1": frozenset({"x"})}
        solve("l1", results, constraints)
        assert results["l0"] == {"x"}

    def test_extra_absorbs(self):
        constraints = ConstraintSet()
        constraints.add(PredictionConstraint("l1", "l0", frozenset({"x"})))
        results = {"l0": frozenset(), "l1": frozenset({"x"})}
        solve("l1", results, constraints)
        assert results["l0"] == frozenset()

    def test_chain_propagation(self):
        constraints = ConstraintSet()
        constraints.add(PredictionConstraint("l2", "l1", frozenset()))
        constraints.add(PredictionConstraint("l1", "l0", frozenset()))
        results = {"l0": frozenset(), "l1": frozenset(), "l2": frozenset({"x"})}
        solve("l2", results, constraints)
        assert results["l1"] == {"x"}
        assert results["l0"] == {"x"}


class TestExecuteOnce:
    def test_first_run_mispredicts_at_read(self):
        program = parse_program(STRAIGHT)
        results = empty_results(program)
        constraints = ConstraintSet()
        outcome = execute_once(program, {}, results, constraints)
        assert outcome == Misprediction("l1", "precondition")
        assert results["l1"] == {"x"}

    def test_second_run_completes_and_collects_constraints(self):
        program = parse_program(STRAIGHT)
        results = empty_results(program)
        constraints = ConstraintSet()
        execute_once(program, {}, results, constraints)
        outcome = execute_once(program, {}, results, constraints)
        assert isinstance(outcome, Completed) and outcome.reached_done
        assert set(constraints) == {
            PredictionConstraint("l1", "l0", frozenset({"x"})),
            PredictionConstraint("l2", "l1", frozenset({"y"})),
            PredictionConstraint("l3", "l2", frozenset()),
        }

    def test_read_free_program_completes_first_run(self):
        program = parse_program("l0: x := 1\nl1: skip\nl2: halt\nl3: done")
        outcome = execute_once(program, {}, empty_results(program), ConstraintSet())
        assert isinstance(outcome, Completed) and outcome.reached_done

    def test_stuck_program_is_an_error_not_a_misprediction(self):
        program = parse_program("l0: y := x\nl1: halt\nl2: done")
        results = empty_results(program)
        constraints = ConstraintSet()
        # first run repairs the precondition at l0
        assert execute_once(program, {}, results, constraints) == Misprediction(
            "l0", "precondition"
        )
        with pytest.raises(ProgramStuckError):
            execute_once(program, {}, results, constraints)


class TestAnalyzeConcrete:
    def test_straight_line(self):
        program = parse_program(STRAIGHT)
        results, stats = analyze_concrete(program)
        assert results == {
            "l0": frozenset(),
            "l1": frozenset({"x"}),
            "l2": frozenset(),
            "l3": frozenset(),
        }
        assert stats == RunStats(runs=2, mispredictions=1, constraint_repairs=0)

    def test_loop_program_four_runs(self):
        program = parse_program(LOOP)
        results, stats = analyze_concrete(program)
        assert results == {
            "l0": frozenset(),
            "l1": frozenset({"x"}),
            "l2": frozenset({"x"}),
            "l3": frozenset({"x"}),
            "l4": frozenset(),
            "l5": frozenset(),
        }
        assert stats == RunStats(runs=4, mispredictions=2, constraint_repairs=1)

    def test_read_free_program_single_run(self):
        program = parse_program("l0: x := 7\nl1: halt\nl2: done")
        results, stats = analyze_concrete(program)
        assert all(not v for v in results.values())
        assert stats.runs == 1

    def test_strict_paper_misses_back_edge(self):
        program = parse_program(LOOP)
        results, stats = analyze_concrete(program, strict_paper=True)
        assert results["l3"] == frozenset()  # the gap: l3 -> l1 edge never repaired
        assert stats.constraint_repairs == 0
        report = check_progress(program, results)
        assert not report.passed
        assert report.violation.kind == "prediction"
        assert (report.violation.label, report.violation.next_label) == ("l3", "l1")

    def test_default_mode_passes_both_checks(self):
        program = parse_program(LOOP)
        results, _ = analyze_concrete(program)
        assert check_preservation(program, results).passed
        assert check_progress(program, results).passed

    def test_nontermination_reported(self):
        program = parse_program("l0: goto l0\nl1: halt\nl2: done")
        with pytest.raises(StepBudgetExceeded):
            analyze_concrete(program, max_steps=50)

    def test_deterministic_across_invocations(self):
        program = parse_program(LOOP)
        first = analyze_concrete(program)
        second = analyze_concrete(program)
        assert first == second

    def test_results_only_grow_across_runs(self):
        program = parse_program(LOOP)
        results = empty_results(program)
        constraints = ConstraintSet()
        snapshots = [dict(results)]
        while True:
            outcome = execute_once(program, {}, results, constraints)
            snapshots.append(dict(results))
            if isinstance(outcome, Completed):
                break
        for before, after in zip(snapshots, snapshots[1:]):
            for label in program.labels:
                assert before[label] <= after[label]


class TestAllPaths:
    def test_branch_program(self):
        program = parse_program(BRANCH)
        results = analyze_all_paths(program)
        assert results == {
            "l0": frozenset({"x", "y", "w"}),
            "l1": frozenset({"y"}),
            "l2": frozenset(),
            "l3": frozenset({"w"}),
            "l4": frozenset(),
            "l5": frozenset(),
        }

    def test_straight_line_matches_concrete(self):
        program = parse_program(STRAIGHT)
        concrete, _ = analyze_concrete(program)
        assert analyze_all_paths(program) == concrete

    def test_unreachable_label_stays_empty(self):
        program = parse_program(
            "l0: goto l2\nl1: q := r\nl2: halt\nl3: done"
        )
        results = analyze_all_paths(program)
        assert results["l1"] == frozenset()
        assert "l1" not in reachable_labels(program)

    def test_matches_oracle_on_loop_and_branch(self):
        for text in (LOOP, BRANCH, STRAIGHT):
            program = parse_program(text)
            oracle = live_variables_oracle(program)
            computed = analyze_all_paths(program)
            for label in reachable_labels(program):
                assert computed[label] == oracle[label], label

    def test_stats_accounting(self):
        program = parse_program(LOOP)
        _, stats = analyze_all_paths_with_stats(program)
        assert stats.passes == stats.mispredictions + stats.constraint_repairs + 1


class TestOracle:
    def test_loop_program(self):
        program = parse_program(LOOP)
        oracle = live_variables_oracle(program)
        concrete, _ = analyze_concrete(program)
        assert oracle == concrete

    def test_branch_program(self):
        program = parse_program(BRANCH)
        assert live_variables_oracle(program) == analyze_all_paths(program)

    def test_empty_read_program(self):
        program = parse_program("l0: x := 1\nl1: skip\nl2: halt\nl3: done")
        assert all(not v for v in live_variables_oracle(program).values())

    def test_oracle_on_unreachable_code_still_solves_equations(self):
        # the oracle is a whole-program fixpoint; unreachable labels may be
        # nonempty there, which is exactly why comparisons restrict to
        # reachable labels
        program = parse_program("l0: goto l2\nl1: q := r\nl2: halt\nl3: done")
        oracle = live_variables_oracle(program)
        assert oracle["l1"] == {"r"}


class TestRunStatsInvariant:
    def test_rejects_inconsistent_counts(self):
        with pytest.raises(ValueError):
            RunStats(runs=3, mispredictions=0, constraint_repairs=0)
