"""Staged execution with prophecy cells corrected by rerun.

A *generator* is a host procedure that runs in the first stage and records a
second-stage program.  It may consult *prophecy cells*: lattice-valued slots
whose values predict facts about the rest of the generator's own execution.
Requiring an unsatisfied value merges it upward and aborts the run with
``MispredictionSignal``; the driver then discards the partial recording and
reruns the generator.  Cell values persist across reruns (identified by
creation order, which is why generators must be deterministic given the cell
contents), so each rerun starts better informed, and the bounded rank of
every lattice guarantees the loop ends in a clean run.

*History variables* are the complement: first-stage state about the past
execution, reset at the start of every run.  Inside ``if_else`` both branch
procedures are recorded in a single pass, each observing the pre-branch
history state (history effects of a branch body are branch-local).

First-stage values embedded in recorded expressions are frozen into
literals, specializing the second-stage program to this run's knowledge.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass
from typing import Any, Callable

from .second_stage import (
    ArrayIndex,
    Assign,
    Binary,
    Declare,
    Expr,
    FloatLit,
    ForLoop,
    IfElse,
    IntLit,
    Return,
    RuntimeCall,
    RuntimeCallExpr,
    SecondStageProgram,
    Unary,
    VarRef,
)


class StagingError(Exception):
    """Misuse of the staging runtime (not a misprediction)."""


class LatticeContractError(StagingError):
    """A lattice's merge/rank behavior violates its termination contract."""


class MispredictionSignal(Exception):
    """A prophecy requirement failed; aborts the current first-stage run.

    This is the designed control flow of the driver, not an error: the cell
    has already been merged upward when the signal is raised.
    """

    def __init__(self, cell_id: int, old_value: Any, required: Any, new_value: Any):
        super().__init__(
            f"prophecy cell {cell_id} mispredicted: {old_value!r} lacked {required!r},"
            f" merged to {new_value!r}"
        )
        self.cell_id = cell_id
        self.old_value = old_value
        self.required = required
        self.new_value = new_value


class LatticeSpec(abc.ABC):
    """Value domain for a prophecy cell.

    ``merge`` is only invoked when ``satisfies`` failed and must strictly
    increase ``rank``; ranks are bounded by ``max_rank``.  Together these
    bound the number of reruns a cell can cause.
    """

    name: str = "lattice"
    max_rank: int = 1

    @abc.abstractmethod
    def satisfies(self, current: Any, required: Any) -> bool: ...

    @abc.abstractmethod
    def merge(self, current: Any, required: Any) -> Any: ...

    @abc.abstractmethod
    def rank(self, value: Any) -> int: ...

    def contains(self, value: Any) -> bool:
        """Domain membership; override to reject foreign values at require time."""
        return True


@dataclass
class _CellState:
    lattice: LatticeSpec
    initial: Any
    value: Any


@dataclass(frozen=True)
class MergeEvent:
    run: int
    cell_id: int
    old_value: Any
    new_value: Any
    required: Any


@dataclass(frozen=True)
class RequireEvent:
    cell_id: int
    required: Any
    satisfied: bool


class ProphecyStore:
    """Creation-order-keyed cell values that outlive individual runs."""

    def __init__(self) -> None:
        self.cells: list[_CellState] = []
        self.merge_log: list[MergeEvent] = []

    @property
    def merges(self) -> int:
        return len(self.merge_log)


class ProphecyCell:
    """Handle to one stored cell, valid for the run that created it."""

    __slots__ = ("cell_id", "lattice", "_ctx")

    def __init__(self, cell_id: int, lattice: LatticeSpec, ctx: "StageContext"):
        self.cell_id = cell_id
        self.lattice = lattice
        self._ctx = ctx

    def get(self) -> Any:
        return self._ctx.prophecy_get(self)

    def require(self, required: Any) -> None:
        self._ctx.prophecy_require(self, required)

    def destroy(self) -> None:
        self._ctx.destroy_cell(self)


class HistoryVar:
    """First-stage state about the past run; reset at every rerun.

    Generators create these afresh each run (that is the reset).  Inside
    ``if_else`` their values are snapshotted so both branch recordings see
    the pre-branch state.
    """

    __slots__ = ("_value",)

    def __init__(self, ctx: "StageContext", initial: Any):
        self._value = initial
        ctx._register_history(self)

    def get(self) -> Any:
        return self._value

    def set(self, value: Any) -> None:
        self._value = value


class StagedExpr:
    """Handle to a second-stage value; operators record expression trees."""

    __slots__ = ("node", "_ctx")

    def __init__(self, node: Expr, ctx: "StageContext"):
        self.node = node
        self._ctx = ctx

    def _bin(self, op: str, other: Any, reflected: bool = False) -> "StagedExpr":
        other_node = self._ctx.lift(other).node
        left, right = (other_node, self.node) if reflected else (self.node, other_node)
        return StagedExpr(Binary(op, left, right), self._ctx)

    def __add__(self, other):
        return self._bin("+", other)

    def __radd__(self, other):
        return self._bin("+", other, reflected=True)

    def __sub__(self, other):
        return self._bin("-", other)

    def __rsub__(self, other):
        return self._bin("-", other, reflected=True)

    def __mul__(self, other):
        return self._bin("*", other)

    def __rmul__(self, other):
        return self._bin("*", other, reflected=True)

    def __mod__(self, other):
        return self._bin("%", other)

    def __lt__(self, other):
        return self._bin("<", other)

    def __le__(self, other):
        return self._bin("<=", other)

    def __gt__(self, other):
        return self._bin(">", other)

    def __ge__(self, other):
        return self._bin(">=", other)

    def __neg__(self):
        return StagedExpr(Unary("-", self.node), self._ctx)

    def __getitem__(self, index) -> "StagedExpr":
        return StagedExpr(ArrayIndex(self.node, self._ctx.lift(index).node), self._ctx)


@dataclass(frozen=True)
class RunStats:
    """Rerun accounting for one staged session: runs == merges + 1."""

    runs: int
    merges: int
    merge_log: tuple[MergeEvent, ...]
    require_log: tuple[RequireEvent, ...] = ()

    def __post_init__(self) -> None:
        if self.merges != len(self.merge_log):
            raise ValueError("merge count disagrees with merge log")


class StageContext:
    """One first-stage run: prophecy access plus the statement recorder."""

    def __init__(self, store: ProphecyStore, run_index: int, name: str):
        self._store = store
        self._run_index = run_index
        self._name = name
        self._next_cell_id = 0
        self._active_cells: dict[int, ProphecyCell] = {}
        self._history_vars: list[HistoryVar] = []
        self._var_counter = 0
        self._param_counter = 0
        self._params: list[tuple[str, str]] = []
        self._root: list = []
        self._blocks: list[list] = [self._root]
        self.require_log: list[RequireEvent] = []
        self.program_meta: dict = {}

    @property
    def run_index(self) -> int:
        return self._run_index

    # -- prophecy cells ----------------------------------------------------

    def prophecy_cell(self, lattice: LatticeSpec, initial: Any) -> ProphecyCell:
        cell_id = self._next_cell_id
        self._next_cell_id += 1
        if cell_id < len(self._store.cells):
            state = self._store.cells[cell_id]
            if state.lattice is not lattice and state.lattice.name != lattice.name:
                raise StagingError(
                    f"cell {cell_id} created with lattice {lattice.name!r} but an earlier"
                    f" run used {state.lattice.name!r}; generators must be deterministic"
                )
            if state.initial != initial:
                raise StagingError(
                    f"cell {cell_id} created with initial {initial!r} but an earlier run"
                    f" used {state.initial!r}; generators must be deterministic"
                )
        else:
            self._store.cells.append(_CellState(lattice, initial, initial))
        cell = ProphecyCell(cell_id, lattice, self)
        self._active_cells[cell_id] = cell
        return cell

    def _cell_state(self, cell: ProphecyCell) -> _CellState:
        if self._active_cells.get(cell.cell_id) is not cell:
            raise StagingError(f"cell {cell.cell_id} is not active in this run")
        return self._store.cells[cell.cell_id]

    def prophecy_get(self, cell: ProphecyCell) -> Any:
        return self._cell_state(cell).value

    def prophecy_require(self, cell: ProphecyCell, required: Any) -> None:
        state = self._cell_state(cell)
        if not state.lattice.contains(required):
            raise StagingError(
                f"{required!r} is not a value of lattice {state.lattice.name!r}"
            )
        current = state.value
        if state.lattice.satisfies(current, required):
            self.require_log.append(RequireEvent(cell.cell_id, required, True))
            return
        self.require_log.append(RequireEvent(cell.cell_id, required, False))
        merged = state.lattice.merge(current, required)
        old_rank = state.lattice.rank(current)
        new_rank = state.lattice.rank(merged)
        if merged == current or new_rank <= old_rank:
            raise LatticeContractError(
                f"{state.lattice.name}: merge({current!r}, {required!r}) = {merged!r}"
                f" did not strictly increase rank ({old_rank} -> {new_rank})"
            )
        if new_rank > state.lattice.max_rank:
            raise LatticeContractError(
                f"{state.lattice.name}: rank {new_rank} exceeds max_rank"
                f" {state.lattice.max_rank}"
            )
        state.value = merged
        self._store.merge_log.append(
            MergeEvent(self._run_index, cell.cell_id, current, merged, required)
        )
        raise MispredictionSignal(cell.cell_id, current, required, merged)

    def destroy_cell(self, cell: ProphecyCell) -> None:
        """Deactivate the handle for this run; the stored value persists."""
        self._cell_state(cell)
        del self._active_cells[cell.cell_id]

    # -- history variables ---------------------------------------------------

    def _register_history(self, var: HistoryVar) -> None:
        self._history_vars.append(var)

    # -- recording -----------------------------------------------------------

    def lift(self, value: Any) -> StagedExpr:
        """First-stage constants freeze into literals; handles pass through."""
        if isinstance(value, StagedExpr):
            if value._ctx is not self:
                raise StagingError("staged handle belongs to a different run")
            return value
        if isinstance(value, bool):
            raise StagingError("no staged booleans; use int 0/1")
        if isinstance(value, int):
            return StagedExpr(IntLit(value), self)
        if isinstance(value, float):
            return StagedExpr(FloatLit(value), self)
        raise StagingError(f"cannot stage a value of type {type(value).__name__}")

    def _fresh_var(self) -> str:
        name = f"var{self._var_counter}"
        self._var_counter += 1
        return name

    def _record(self, stmt) -> None:
        self._blocks[-1].append(stmt)

    def parameter(self, kind: str) -> StagedExpr:
        name = f"arg{self._param_counter}"
        self._param_counter += 1
        self._params.append((name, kind))
        return StagedExpr(VarRef(name), self)

    def declare(self, kind: str, init: Any = None) -> StagedExpr:
        name = self._fresh_var()
        init_node = None if init is None else self.lift(init).node
        self._record(Declare(name, kind, init_node))
        return StagedExpr(VarRef(name), self)

    def assign(self, target: StagedExpr, value: Any) -> None:
        target = self.lift(target)
        if not isinstance(target.node, (VarRef, ArrayIndex)):
            raise StagingError("assignment target must be a variable or array element")
        self._record(Assign(target.node, self.lift(value).node))

    def runtime(self, name: str, *args: Any) -> None:
        self._record(RuntimeCall(name, tuple(self.lift(a).node for a in args)))

    def runtime_expr(self, name: str, *args: Any) -> StagedExpr:
        return StagedExpr(
            RuntimeCallExpr(name, tuple(self.lift(a).node for a in args)), self
        )

    def return_(self, value: Any = None) -> None:
        self._record(Return(None if value is None else self.lift(value).node))

    def for_loop(
        self,
        start: Any,
        bound: Any,
        step: Any,
        body: Callable[[StagedExpr], None],
    ) -> StagedExpr:
        """Record ``for (int v = start; v < bound; v = v + step)`` around body.

        The body procedure runs exactly once, receiving the loop variable
        handle; whatever it records lands inside the loop.
        """
        name = self._fresh_var()
        var = StagedExpr(VarRef(name), self)
        stmt = ForLoop(
            var=name,
            init=self.lift(start).node,
            cond=Binary("<", VarRef(name), self.lift(bound).node),
            step=Binary("+", VarRef(name), self.lift(step).node),
            body=[],
        )
        self._record(stmt)
        self._blocks.append(stmt.body)
        body(var)
        self._blocks.pop()
        return var

    def if_else(
        self,
        cond: Any,
        then_body: Callable[[], None],
        else_body: Callable[[], None] | None = None,
    ) -> None:
        """Record a second-stage conditional, running both branch procedures.

        Each branch records exactly once in this same pass, so prophecy
        requirements on every second-stage path are observed in one run.
        History-variable state is restored before the else branch and again
        at the join.
        """
        stmt = IfElse(self.lift(cond).node, [], [] if else_body is not None else None)
        self._record(stmt)
        snapshot = [(var, var._value) for var in self._history_vars]
        self._blocks.append(stmt.then_body)
        try:
            then_body()
        finally:
            self._blocks.pop()
        for var, value in snapshot:
            var._value = value
        if else_body is not None:
            self._blocks.append(stmt.else_body)
            try:
                else_body()
            finally:
                self._blocks.pop()
            for var, value in snapshot:
                var._value = value

    def finish(self) -> SecondStageProgram:
        if len(self._blocks) != 1:
            raise StagingError("recorder finished with an open block")
        return SecondStageProgram(
            self._name, tuple(self._params), self._root, meta=dict(self.program_meta)
        )


def run_staged(
    generator: Callable[[StageContext], None],
    *,
    name: str = "generated",
    max_runs: int = 1000,
) -> tuple[SecondStageProgram, RunStats]:
    """Rerun the generator until a run completes without mispredictions.

    The generator must be deterministic given identical prophecy store
    contents: cells are matched across runs by creation order.  On a
    misprediction the partial recording and all history state are discarded;
    merged cell values are retained.  The ``max_runs`` ceiling turns a
    broken (non-monotone) lattice into a diagnosable error instead of a
    hang; for well-formed lattices the store's rank headroom is the real
    bound.
    """
    store = ProphecyStore()
    for run_index in range(1, max_runs + 1):
        ctx = StageContext(store, run_index, name)
        try:
            generator(ctx)
        except MispredictionSignal:
            continue
        program = ctx.finish()
        stats = RunStats(
            runs=run_index,
            merges=store.merges,
            merge_log=tuple(store.merge_log),
            require_log=tuple(ctx.require_log),
        )
        return program, stats
    raise StagingError(f"no clean run within {max_runs} attempts; check the lattice contract")
