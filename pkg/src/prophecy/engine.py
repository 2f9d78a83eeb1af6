"""Live-variable analysis by repeated forward execution.

Instead of propagating liveness backward over an IR, the engine runs the
program forward and lets failed predictions drive the fixpoint:

* every analysis result starts empty;
* executing a command whose read set is not yet predicted live repairs the
  result at that label and aborts the run (a misprediction);
* every traversed edge contributes a prediction constraint — the successor's
  result may only exceed the current label's result by the assigned
  variable — and a constraint solver re-establishes all recorded constraints
  whenever a result grows;
* the driver reruns until a full execution raises no misprediction.

Because repairs only ever add elements that some precondition or constraint
forces, the fixpoint is the least one consistent with everything the
executions encountered.

One deliberate deviation from the literal pseudocode this follows: a
prediction constraint that is already violated when recorded (a loop back
edge first traversed after the last precondition repair) is repaired on the
spot and triggers one more rerun.  Without this, the computed results can
fail the progress check on that edge; ``strict_paper=True`` restores the
literal behavior so the gap stays demonstrable.

``analyze_all_paths`` explores both branches of every conditional at the
label level (no states) and matches ``live_variables_oracle`` — a classic
worklist solver kept entirely separate as the correctness reference —
on all labels reachable from the entry.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

from .core_lang import (
    AtDone,
    Configuration,
    Label,
    Program,
    State,
    Stuck,
    step,
)
from .extended import StepObligations, VarSet, command_obligations


class AnalysisError(Exception):
    """Base class for engine failures that are not mispredictions."""


class ProgramStuckError(AnalysisError):
    """The analyzed program itself got stuck (e.g. an undefined variable)."""

    def __init__(self, label: Label, reason: str):
        super().__init__(f"program stuck at {label}: {reason}")
        self.label = label
        self.reason = reason


class StepBudgetExceeded(AnalysisError):
    def __init__(self, max_steps: int):
        super().__init__(f"execution did not reach done within {max_steps} steps")
        self.max_steps = max_steps


@dataclass(frozen=True)
class PredictionConstraint:
    """results[successor] ⊆ results[predecessor] ∪ extra, for one CFG edge."""

    successor: Label
    predecessor: Label
    extra: VarSet


class ConstraintSet:
    """Insertion-ordered set of prediction constraints, indexed for solving."""

    def __init__(self) -> None:
        self._all: dict[PredictionConstraint, None] = {}
        self._by_successor: dict[Label, list[PredictionConstraint]] = {}

    def add(self, constraint: PredictionConstraint) -> bool:
        if constraint in self._all:
            return False
        self._all[constraint] = None
        self._by_successor.setdefault(constraint.successor, []).append(constraint)
        return True

    def with_successor(self, label: Label) -> list[PredictionConstraint]:
        return self._by_successor.get(label, [])

    def __iter__(self):
        return iter(self._all)

    def __len__(self) -> int:
        return len(self._all)

    def __contains__(self, constraint: PredictionConstraint) -> bool:
        return constraint in self._all


@dataclass(frozen=True)
class RunStats:
    runs: int
    mispredictions: int
    constraint_repairs: int

    def __post_init__(self) -> None:
        if self.runs != self.mispredictions + self.constraint_repairs + 1:
            raise ValueError(f"inconsistent run statistics: {self}")


@dataclass(frozen=True)
class Completed:
    reached_done: bool
    steps: int


@dataclass(frozen=True)
class Misprediction:
    label: Label
    kind: str  # precondition | constraint
    edge: tuple[Label, Label] | None = None


ExecutionOutcome = Union[Completed, Misprediction]


def solve(label: Label, results: dict[Label, VarSet], constraints: ConstraintSet) -> None:
    """Re-establish every recorded constraint after results[label] grew.

    Worklist version of the recursive repair: whenever the left side of a
    constraint exceeds its right side, the missing elements are forced into
    the predecessor's result, which in turn is enqueued.
    """
    pending = [label]
    while pending:
        current = pending.pop()
        for constraint in constraints.with_successor(current):
            missing = results[current] - constraint.extra - results[constraint.predecessor]
            if missing:
                results[constraint.predecessor] |= missing
                pending.append(constraint.predecessor)


def empty_results(program: Program) -> dict[Label, VarSet]:
    return {label: frozenset() for label in program.labels}


def execute_once(
    program: Program,
    initial_state: State | None,
    results: dict[Label, VarSet],
    constraints: ConstraintSet,
    max_steps: int = 10_000,
    *,
    repair_constraints: bool = True,
) -> ExecutionOutcome:
    """One forward run checking preconditions and collecting constraints.

    Returns Misprediction as soon as a repair happened (the caller reruns);
    Completed(reached_done=False) when the step budget ran out violation-free.
    Standard stuckness is a program error, not a misprediction.
    """
    config = Configuration.make(program.first, initial_state or {})
    for steps in range(max_steps + 1):
        label = config.label
        obligations = command_obligations(program, label)
        missing = obligations.precondition - results[label]
        if missing:
            results[label] |= missing
            solve(label, results, constraints)
            return Misprediction(label, "precondition")
        outcome = step(program, config)
        if isinstance(outcome, AtDone):
            return Completed(reached_done=True, steps=steps)
        if isinstance(outcome, Stuck):
            raise ProgramStuckError(label, outcome.reason)
        successor = outcome.label
        constraint = PredictionConstraint(successor, label, obligations.prediction_extra)
        constraints.add(constraint)
        if repair_constraints:
            excess = results[successor] - constraint.extra - results[label]
            if excess:
                results[label] |= excess
                solve(label, results, constraints)
                return Misprediction(label, "constraint", edge=(label, successor))
        config = outcome
    return Completed(reached_done=False, steps=max_steps)


def analyze_concrete(
    program: Program,
    initial_state: State | None = None,
    max_steps: int = 10_000,
    *,
    strict_paper: bool = False,
) -> tuple[dict[Label, VarSet], RunStats]:
    """Rerun the program until an execution completes without mispredictions.

    Results and constraints persist across reruns.  The returned results
    satisfy every precondition and prediction constraint the executions
    encountered and are the least such assignment (every addition was
    forced).  With ``strict_paper=True`` the constraint-repair deviation is
    disabled, so results may leave a late-recorded edge constraint
    unsatisfied.
    """
    results = empty_results(program)
    constraints = ConstraintSet()
    mispredictions = 0
    constraint_repairs = 0
    run_ceiling = len(program.labels) * max(1, len(program.variables())) + 2
    for runs in range(1, run_ceiling + 1):
        outcome = execute_once(
            program,
            initial_state,
            results,
            constraints,
            max_steps,
            repair_constraints=not strict_paper,
        )
        if isinstance(outcome, Completed):
            if not outcome.reached_done:
                raise StepBudgetExceeded(max_steps)
            return results, RunStats(runs, mispredictions, constraint_repairs)
        if outcome.kind == "precondition":
            mispredictions += 1
        else:
            constraint_repairs += 1
    raise AnalysisError("rerun ceiling exceeded; repair accounting is broken")


@dataclass(frozen=True)
class AllPathsStats:
    passes: int
    mispredictions: int
    constraint_repairs: int


def _all_paths_pass(
    program: Program,
    results: dict[Label, VarSet],
    constraints: ConstraintSet,
) -> Misprediction | None:
    """One label-level sweep over every reachable label and edge.

    Conditionals contribute both successors; each label is visited once
    (depth first, fall-through before branch target).  The first violation
    is repaired and ends the sweep, mirroring how a concrete run aborts.
    """
    visited: set[Label] = set()
    stack = [program.first]
    while stack:
        label = stack.pop()
        if label in visited:
            continue
        visited.add(label)
        obligations = command_obligations(program, label)
        missing = obligations.precondition - results[label]
        if missing:
            results[label] |= missing
            solve(label, results, constraints)
            return Misprediction(label, "precondition")
        successors = program.ordered_successors(label)
        for successor in successors:
            constraint = PredictionConstraint(successor, label, obligations.prediction_extra)
            constraints.add(constraint)
            excess = results[successor] - constraint.extra - results[label]
            if excess:
                results[label] |= excess
                solve(label, results, constraints)
                return Misprediction(label, "constraint", edge=(label, successor))
        for successor in reversed(successors):
            if successor not in visited:
                stack.append(successor)
    return None


def analyze_all_paths(program: Program) -> dict[Label, VarSet]:
    """Fixpoint over every path: all branch alternatives contribute obligations.

    Stand-in for exhaustively exploring dynamic control flow: instead of
    concrete executions, the sweep walks the control-flow graph and treats
    each conditional as taking both branches.  Unreachable labels keep
    empty results.
    """
    results, _ = analyze_all_paths_with_stats(program)
    return results


def analyze_all_paths_with_stats(program: Program) -> tuple[dict[Label, VarSet], AllPathsStats]:
    results = empty_results(program)
    constraints = ConstraintSet()
    mispredictions = 0
    constraint_repairs = 0
    pass_ceiling = len(program.labels) * max(1, len(program.variables())) + 2
    for passes in range(1, pass_ceiling + 1):
        outcome = _all_paths_pass(program, results, constraints)
        if outcome is None:
            return results, AllPathsStats(passes, mispredictions, constraint_repairs)
        if outcome.kind == "precondition":
            mispredictions += 1
        else:
            constraint_repairs += 1
    raise AnalysisError("sweep ceiling exceeded; repair accounting is broken")


def live_variables_oracle(program: Program) -> dict[Label, VarSet]:
    """Independent reference: backward may-live dataflow via a worklist.

    live_in(l) = use(l) ∪ (⋃ over successors s of live_in(s), minus def(l)),
    iterated to the least fixpoint.  Shares only the per-command use/def
    sets with the engine; the propagation is a conventional worklist over
    the control-flow graph, with no reexecution involved.
    """
    labels = program.labels
    obligations: dict[Label, StepObligations] = {
        label: command_obligations(program, label) for label in labels
    }
    live: dict[Label, VarSet] = {label: frozenset() for label in labels}
    pending = list(reversed(labels))
    in_queue = set(pending)
    while pending:
        label = pending.pop()
        in_queue.discard(label)
        out: frozenset[str] = frozenset()
        for successor in program.successors(label):
            out |= live[successor]
        updated = obligations[label].precondition | (out - obligations[label].prediction_extra)
        if updated != live[label]:
            live[label] = updated
            for predecessor in program.predecessors(label):
                if predecessor not in in_queue:
                    pending.append(predecessor)
                    in_queue.add(predecessor)
    return live


def reachable_labels(program: Program) -> frozenset[Label]:
    seen: set[Label] = set()
    stack = [program.first]
    while stack:
        label = stack.pop()
        if label in seen:
            continue
        seen.add(label)
        stack.extend(program.successors(label))
    return frozenset(seen)
