"""Prophecy-extended semantics for live-variable prediction, plus checkers.

The extended semantics augments each configuration with a predicted set of
live variables.  Two kinds of obligations attach to every transition out of
a command:

* a precondition: every variable the command reads must already be in the
  current prediction;
* a prediction constraint: the next prediction may only add the variable the
  command assigns (nothing, for commands that assign nothing).

For checking we substitute computed analysis results for the predictions:
the prediction before label ``l`` is ``results[l]``.  An extended step is
then deterministic and either mirrors the standard step or reports exactly
which inclusion failed and by which elements.

``check_preservation`` asserts extended steps introduce no new behavior
(each projects onto the standard step); ``check_progress`` asserts the
analysis results let the extended semantics follow every standard step.
When both pass, standard and extended configurations simulate each other
along the checked execution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

from .core_lang import (
    AT_DONE,
    AtDone,
    Assign,
    Configuration,
    If,
    Label,
    Program,
    State,
    Stuck,
    command_vars,
    step,
)

VarSet = frozenset[str]

AnalysisResults = Mapping[Label, VarSet]


@dataclass(frozen=True)
class StepObligations:
    """Per-command obligations: what must be predicted, what may be dropped.

    ``precondition`` is the set of variables the command reads (they must be
    predicted live before the command).  ``prediction_extra`` is the set the
    next prediction may add beyond the current one: the assigned variable
    for assignments, empty otherwise.  For the backward dataflow reading,
    precondition is use(l) and prediction_extra is def(l).
    """

    precondition: VarSet
    prediction_extra: VarSet


def command_obligations(program: Program, label: Label) -> StepObligations:
    command = program.command_at(label)
    reads = command_vars(command)
    writes = frozenset((command.var,)) if isinstance(command, Assign) else frozenset()
    return StepObligations(precondition=reads, prediction_extra=writes)


# --------------------------------------------------------------------------
# Extended step
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExtOk:
    next: Configuration


@dataclass(frozen=True)
class PreconditionViolation:
    label: Label
    missing: VarSet


@dataclass(frozen=True)
class PredictionViolation:
    label: Label
    next_label: Label
    excess: VarSet


@dataclass(frozen=True)
class ExtStuck:
    reason: str


@dataclass(frozen=True)
class ExtAtDone:
    pass


ExtStepOutcome = Union[ExtOk, PreconditionViolation, PredictionViolation, ExtStuck, ExtAtDone]


def ext_step_with_results(
    program: Program, config: Configuration, results: AnalysisResults
) -> ExtStepOutcome:
    """One extended step with predictions taken from analysis results.

    The prediction before the step is ``results[config.label]`` and the
    prediction after comes from the label the standard step reaches.  The
    step succeeds iff the standard step succeeds, the precondition holds,
    and the successor's result adds nothing beyond the allowed extra.
    """
    label = config.label
    obligations = command_obligations(program, label)
    current = results[label]
    missing = obligations.precondition - current
    if missing:
        return PreconditionViolation(label, missing)
    outcome = step(program, config)
    if isinstance(outcome, AtDone):
        return ExtAtDone()
    if isinstance(outcome, Stuck):
        return ExtStuck(outcome.reason)
    nxt = outcome.label
    excess = results[nxt] - (current | obligations.prediction_extra)
    if excess:
        return PredictionViolation(label, nxt, excess)
    return ExtOk(outcome)


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str  # precondition | prediction | projection
    label: Label
    witness: VarSet = frozenset()
    next_label: Label | None = None
    detail: str = ""

    def describe(self) -> str:
        witness = "{" + ", ".join(sorted(self.witness)) + "}"
        if self.kind == "precondition":
            return f"precondition violation at {self.label}: missing {witness}"
        if self.kind == "prediction":
            return (
                f"prediction violation on edge {self.label} -> {self.next_label}:"
                f" excess {witness}"
            )
        return f"projection failure at {self.label}: {self.detail}"

    def to_record(self) -> dict:
        record = {"kind": self.kind, "label": self.label, "witness": sorted(self.witness)}
        if self.next_label is not None:
            record["next_label"] = self.next_label
        if self.detail:
            record["detail"] = self.detail
        return record


@dataclass(frozen=True)
class CheckReport:
    check: str  # preservation | progress
    passed: bool
    steps_checked: int
    violation: Violation | None = None
    notes: tuple[str, ...] = field(default=())

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        head = f"{self.check}: {status} ({self.steps_checked} steps checked)"
        if self.violation is not None:
            head += "\n  " + self.violation.describe()
        for note in self.notes:
            head += f"\n  note: {note}"
        return head

    def to_record(self) -> dict:
        record = {"check": self.check, "passed": self.passed, "steps_checked": self.steps_checked}
        if self.violation is not None:
            record["violation"] = self.violation.to_record()
        return record


def check_preservation(
    program: Program,
    results: AnalysisResults,
    initial_state: State | None = None,
    max_steps: int = 10_000,
) -> CheckReport:
    """Replay the extended execution; every ok step must project onto a standard step.

    Holds for any results (even wrong ones): extended rules share the
    standard rules' preconditions over label and state.  A violation outcome
    simply ends the extended execution early; that cannot break preservation.
    """
    config = Configuration.make(program.first, initial_state or {})
    checked = 0
    notes: list[str] = []
    for _ in range(max_steps):
        outcome = ext_step_with_results(program, config, results)
        if isinstance(outcome, ExtAtDone):
            notes.append("extended execution complete")
            break
        if not isinstance(outcome, ExtOk):
            notes.append(f"extended execution stopped: {outcome!r}")
            break
        standard = step(program, config)
        if not isinstance(standard, Configuration) or standard != outcome.next:
            violation = Violation(
                kind="projection",
                label=config.label,
                detail=f"extended step reached {outcome.next} but standard semantics give {standard!r}",
            )
            return CheckReport("preservation", False, checked, violation, tuple(notes))
        checked += 1
        config = outcome.next
    return CheckReport("preservation", True, checked, None, tuple(notes))


def check_transition_log(
    program: Program, transitions: Iterable[tuple[Configuration, Configuration]]
) -> CheckReport:
    """Check an explicit log of claimed extended transitions for preservation.

    Negative-control hook: feed a fabricated transition and the report
    pinpoints the configuration whose standard step disagrees.
    """
    checked = 0
    for before, after in transitions:
        standard = step(program, before)
        if not isinstance(standard, Configuration) or standard != after:
            violation = Violation(
                kind="projection",
                label=before.label,
                detail=f"log claims {before} => {after} but standard semantics give {standard!r}",
            )
            return CheckReport("preservation", False, checked, violation)
        checked += 1
    return CheckReport("preservation", True, checked)


def check_progress(
    program: Program,
    results: AnalysisResults,
    initial_state: State | None = None,
    max_steps: int = 10_000,
) -> CheckReport:
    """Along the standard execution, every step must have an extended counterpart.

    A pass certifies that pairing each visited configuration with its
    analysis result simulates the standard run under the extended rules,
    i.e. the results correctly predict this execution's futures.
    """
    config = Configuration.make(program.first, initial_state or {})
    checked = 0
    notes: list[str] = []
    for _ in range(max_steps):
        standard = step(program, config)
        if isinstance(standard, AtDone):
            notes.append("standard execution complete")
            break
        if isinstance(standard, Stuck):
            notes.append(f"standard execution stuck: {standard.reason}")
            break
        outcome = ext_step_with_results(program, config, results)
        if isinstance(outcome, PreconditionViolation):
            violation = Violation("precondition", outcome.label, outcome.missing)
            return CheckReport("progress", False, checked, violation, tuple(notes))
        if isinstance(outcome, PredictionViolation):
            violation = Violation(
                "prediction", outcome.label, outcome.excess, next_label=outcome.next_label
            )
            return CheckReport("progress", False, checked, violation, tuple(notes))
        if not isinstance(outcome, ExtOk) or outcome.next != standard:
            violation = Violation(
                kind="projection",
                label=config.label,
                detail=f"extended semantics produced {outcome!r} for standard step to {standard}",
            )
            return CheckReport("progress", False, checked, violation, tuple(notes))
        checked += 1
        config = standard
    return CheckReport("progress", True, checked, None, tuple(notes))
