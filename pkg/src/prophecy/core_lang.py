"""Labeled imperative core language: syntax, parsing, and small-step semantics.

A program is a sequence of uniquely labeled commands::

    l0: x := 10
    l1: if x <= 0 then l4
    l2: x := x - 1
    l3: goto l1
    l4: halt
    l5: done

Commands are ``skip``, assignment, conditional branch, ``goto``, ``halt``
and ``done``.  Execution starts at the first label and proceeds through
configurations ``(label, state)`` where the state maps variable names to
integers.  A ``halt`` steps to the ``done`` command that must immediately
follow it; execution is complete once it reaches a ``done``.  Evaluating a
variable missing from the state makes the execution stuck.

Integers are 64-bit two's complement with wrap-around on overflow.
All values here are immutable after construction and safe to share.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Mapping, NamedTuple, Union

Label = str

_INT64_MASK = (1 << 64) - 1
_INT64_SIGN = 1 << 63

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_KEYWORDS = frozenset(
    {"skip", "if", "then", "goto", "halt", "done", "true", "false", "not", "and", "or"}
)


def _wrap64(value: int) -> int:
    value &= _INT64_MASK
    return value - (1 << 64) if value & _INT64_SIGN else value


class CoreLangError(Exception):
    """Base class for parse and execution errors of the core language."""


class ParseError(CoreLangError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{line}:{column}: {message}")
        self.line = line
        self.column = column


class ProgramStructureError(CoreLangError):
    """A syntactically valid command sequence that is not a valid Program."""


class UndefinedVariableError(CoreLangError):
    def __init__(self, name: str):
        super().__init__(f"undefined variable {name!r}")
        self.name = name


class UnknownLabelError(CoreLangError):
    def __init__(self, label: Label):
        super().__init__(f"unknown label {label!r}")
        self.label = label


# --------------------------------------------------------------------------
# Expressions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: int


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class ABin:
    op: str  # one of + - *
    left: "AExp"
    right: "AExp"


AExp = Union[Num, Var, ABin]


@dataclass(frozen=True)
class BoolLit:
    value: bool


@dataclass(frozen=True)
class Cmp:
    op: str  # one of = <=
    left: AExp
    right: AExp


@dataclass(frozen=True)
class Not:
    operand: "BExp"


@dataclass(frozen=True)
class BBin:
    op: str  # and | or
    left: "BExp"
    right: "BExp"


BExp = Union[BoolLit, Cmp, Not, BBin]


def expr_vars(expr: AExp | BExp) -> frozenset[str]:
    """All variable names read by an expression."""
    match expr:
        case Num() | BoolLit():
            return frozenset()
        case Var(name):
            return frozenset((name,))
        case ABin(_, left, right) | Cmp(_, left, right) | BBin(_, left, right):
            return expr_vars(left) | expr_vars(right)
        case Not(operand):
            return expr_vars(operand)
    raise TypeError(f"not an expression: {expr!r}")


# --------------------------------------------------------------------------
# Commands and programs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Skip:
    pass


@dataclass(frozen=True)
class Assign:
    var: str
    expr: AExp


@dataclass(frozen=True)
class If:
    cond: BExp
    target: Label


@dataclass(frozen=True)
class Goto:
    target: Label


@dataclass(frozen=True)
class Halt:
    pass


@dataclass(frozen=True)
class Done:
    pass


Command = Union[Skip, Assign, If, Goto, Halt, Done]


def command_vars(command: Command) -> frozenset[str]:
    """Variables read when the command executes (its whole expression)."""
    match command:
        case Assign(_, expr):
            return expr_vars(expr)
        case If(cond, _):
            return expr_vars(cond)
        case _:
            return frozenset()


class Program:
    """An ordered sequence of uniquely labeled commands.

    Validation happens at construction: labels must be unique, every
    ``halt`` must be immediately followed by a ``done``, branch targets
    must exist, and the final command must not fall through (only
    ``done`` or ``goto`` may end the sequence).
    """

    def __init__(self, commands: Iterator[tuple[Label, Command]] | list[tuple[Label, Command]]):
        self.commands: tuple[tuple[Label, Command], ...] = tuple(commands)
        if not self.commands:
            raise ProgramStructureError("a program must contain at least one command")
        self._by_label: dict[Label, Command] = {}
        self._position: dict[Label, int] = {}
        for pos, (label, command) in enumerate(self.commands):
            if label in self._by_label:
                raise ProgramStructureError(f"duplicate label {label!r}")
            self._by_label[label] = command
            self._position[label] = pos
        for pos, (label, command) in enumerate(self.commands):
            if isinstance(command, Halt):
                follower = self.commands[pos + 1][1] if pos + 1 < len(self.commands) else None
                if not isinstance(follower, Done):
                    raise ProgramStructureError(
                        f"halt at {label!r} is not immediately followed by done"
                    )
            if isinstance(command, (If, Goto)) and command.target not in self._by_label:
                raise ProgramStructureError(
                    f"command at {label!r} targets unknown label {command.target!r}"
                )
        last_label, last_command = self.commands[-1]
        if not isinstance(last_command, (Done, Goto)):
            raise ProgramStructureError(
                f"last command at {last_label!r} may fall through past the end"
            )
        self._predecessors: dict[Label, frozenset[Label]] | None = None

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Program) and self.commands == other.commands

    def __hash__(self) -> int:
        return hash(self.commands)

    def __repr__(self) -> str:
        return f"Program({len(self.commands)} commands, first={self.first!r})"

    @property
    def labels(self) -> tuple[Label, ...]:
        return tuple(label for label, _ in self.commands)

    @property
    def first(self) -> Label:
        return self.commands[0][0]

    def command_at(self, label: Label) -> Command:
        try:
            return self._by_label[label]
        except KeyError:
            raise UnknownLabelError(label) from None

    def next_label(self, label: Label) -> Label | None:
        """Label of the next command in sequence order, or None at the end."""
        pos = self._position.get(label)
        if pos is None:
            raise UnknownLabelError(label)
        if pos + 1 >= len(self.commands):
            return None
        return self.commands[pos + 1][0]

    def successors(self, label: Label) -> frozenset[Label]:
        command = self.command_at(label)
        match command:
            case Assign() | Skip() | Halt():
                nxt = self.next_label(label)
                return frozenset((nxt,)) if nxt is not None else frozenset()
            case Goto(target):
                return frozenset((target,))
            case If(_, target):
                nxt = self.next_label(label)
                result = {target}
                if nxt is not None:
                    result.add(nxt)
                return frozenset(result)
            case Done():
                return frozenset()
        raise TypeError(f"not a command: {command!r}")

    def ordered_successors(self, label: Label) -> tuple[Label, ...]:
        """Successors in a fixed order: fall-through first, then the branch target."""
        command = self.command_at(label)
        if isinstance(command, If):
            nxt = self.next_label(label)
            out = () if nxt is None else (nxt,)
            return out + ((command.target,) if command.target != nxt else ())
        return tuple(sorted(self.successors(label), key=self._position.__getitem__))

    def predecessors(self, label: Label) -> frozenset[Label]:
        if label not in self._by_label:
            raise UnknownLabelError(label)
        if self._predecessors is None:
            inverse: dict[Label, set[Label]] = {l: set() for l in self._by_label}
            for l in self._by_label:
                for succ in self.successors(l):
                    inverse[succ].add(l)
            self._predecessors = {l: frozenset(preds) for l, preds in inverse.items()}
        return self._predecessors[label]

    def variables(self) -> frozenset[str]:
        """All variable names mentioned anywhere in the program."""
        names: set[str] = set()
        for _, command in self.commands:
            names |= command_vars(command)
            if isinstance(command, Assign):
                names.add(command.var)
        return frozenset(names)


class StructureInfo(NamedTuple):
    next: Label | None
    successors: frozenset[Label]
    predecessors: frozenset[Label]


def program_structure(program: Program, label: Label) -> StructureInfo:
    """Control-flow neighborhood of one label."""
    return StructureInfo(
        next=program.next_label(label),
        successors=program.successors(label),
        predecessors=program.predecessors(label),
    )


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------


class _ExprParser:
    """Recursive-descent parser for one line's expression suffix."""

    def __init__(self, text: str, line_no: int, offset: int):
        self.text = text
        self.line_no = line_no
        self.offset = offset  # column of text[0] within the original line
        self.pos = 0

    def error(self, message: str) -> ParseError:
        return ParseError(message, self.line_no, self.offset + self.pos + 1)

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] in " \t":
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def take(self, literal: str) -> bool:
        self.skip_ws()
        if self.text.startswith(literal, self.pos):
            self.pos += len(literal)
            return True
        return False

    def take_word(self) -> str | None:
        self.skip_ws()
        m = _IDENT_RE.match(self.text, self.pos)
        if m is None:
            return None
        self.pos = m.end()
        return m.group()

    def peek_word(self) -> str | None:
        self.skip_ws()
        m = _IDENT_RE.match(self.text, self.pos)
        return m.group() if m else None

    def expect_end(self) -> None:
        self.skip_ws()
        if self.pos != len(self.text):
            raise self.error(f"unexpected trailing input {self.text[self.pos:]!r}")

    # arithmetic: term ((+|-) term)*, term: factor (* factor)*
    def aexp(self) -> AExp:
        node = self.aterm()
        while True:
            self.skip_ws()
            if self.take("+"):
                node = ABin("+", node, self.aterm())
            elif self.take("-"):
                node = ABin("-", node, self.aterm())
            else:
                return node

    def aterm(self) -> AExp:
        node = self.afactor()
        while self.take("*"):
            node = ABin("*", node, self.afactor())
        return node

    def afactor(self) -> AExp:
        self.skip_ws()
        if self.take("("):
            node = self.aexp()
            if not self.take(")"):
                raise self.error("expected ')'")
            return node
        if self.pos < len(self.text) and self.text[self.pos].isdigit():
            start = self.pos
            while self.pos < len(self.text) and self.text[self.pos].isdigit():
                self.pos += 1
            return Num(int(self.text[start : self.pos]))
        word = self.peek_word()
        if word is not None and word not in _KEYWORDS:
            self.take_word()
            return Var(word)
        raise self.error("expected integer, identifier, or '('")

    # boolean: bor := band ("or" band)*, band := bnot ("and" bnot)*
    def bexp(self) -> BExp:
        node = self.band()
        while self.peek_word() == "or":
            self.take_word()
            node = BBin("or", node, self.band())
        return node

    def band(self) -> BExp:
        node = self.bnot()
        while self.peek_word() == "and":
            self.take_word()
            node = BBin("and", node, self.bnot())
        return node

    def bnot(self) -> BExp:
        if self.peek_word() == "not":
            self.take_word()
            return Not(self.bnot())
        return self.batom()

    def batom(self) -> BExp:
        word = self.peek_word()
        if word == "true":
            self.take_word()
            return BoolLit(True)
        if word == "false":
            self.take_word()
            return BoolLit(False)
        if self.peek() == "(":
            # Could be a parenthesized boolean or the left side of a
            # comparison; try boolean first, fall back to comparison.
            saved = self.pos
            self.take("(")
            try:
                inner = self.bexp()
                if self.take(")"):
                    self.skip_ws()
                    if self.peek() not in {"=", "<", "+", "-", "*"}:
                        return inner
            except ParseError:
                pass
            self.pos = saved
        left = self.aexp()
        self.skip_ws()
        if self.take("<="):
            return Cmp("<=", left, self.aexp())
        if self.take("="):
            return Cmp("=", left, self.aexp())
        raise self.error("expected '=' or '<=' in comparison")


def _parse_command(rest: str, line_no: int, offset: int) -> Command:
    parser = _ExprParser(rest, line_no, offset)
    word = parser.peek_word()
    if word == "skip":
        parser.take_word()
        parser.expect_end()
        return Skip()
    if word == "halt":
        parser.take_word()
        parser.expect_end()
        return Halt()
    if word == "done":
        parser.take_word()
        parser.expect_end()
        return Done()
    if word == "goto":
        parser.take_word()
        target = parser.take_word()
        if target is None:
            raise parser.error("expected target label after 'goto'")
        parser.expect_end()
        return Goto(target)
    if word == "if":
        parser.take_word()
        cond = parser.bexp()
        if parser.take_word() != "then":
            raise parser.error("expected 'then'")
        target = parser.take_word()
        if target is None:
            raise parser.error("expected target label after 'then'")
        parser.expect_end()
        return If(cond, target)
    if word is not None and word not in _KEYWORDS:
        parser.take_word()
        if not parser.take(":="):
            raise parser.error("expected ':=' after variable name")
        expr = parser.aexp()
        parser.expect_end()
        return Assign(word, expr)
    raise parser.error("expected a command")


def parse_program(text: str) -> Program:
    """Parse program text (one ``label: command`` per line, ``#`` comments)."""
    pairs: list[tuple[Label, Command]] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        colon = line.find(":")
        if colon < 0:
            raise ParseError("expected 'label: command'", line_no, 1)
        label = line[:colon].strip()
        if not _IDENT_RE.fullmatch(label):
            raise ParseError(f"invalid label {label!r}", line_no, 1)
        command = _parse_command(line[colon + 1 :], line_no, colon + 2)
        pairs.append((label, command))
    if not pairs:
        raise ParseError("empty program", 1, 1)
    return Program(pairs)


# --------------------------------------------------------------------------
# Pretty-printing (inverse of the parser)
# --------------------------------------------------------------------------

_APREC = {"+": 1, "-": 1, "*": 2}


def _aexp_text(expr: AExp, parent_prec: int = 0, right_side: bool = False) -> str:
    match expr:
        case Num(value):
            return str(value)
        case Var(name):
            return name
        case ABin(op, left, right):
            prec = _APREC[op]
            text = (
                f"{_aexp_text(left, prec, False)} {op} {_aexp_text(right, prec, True)}"
            )
            # left-associative: a right child at equal precedence needs parens
            if prec < parent_prec or (prec == parent_prec and right_side):
                return f"({text})"
            return text
    raise TypeError(f"not an arithmetic expression: {expr!r}")


_BPREC = {"or": 1, "and": 2}


def _bexp_text(expr: BExp, parent_prec: int = 0, right_side: bool = False) -> str:
    match expr:
        case BoolLit(value):
            return "true" if value else "false"
        case Cmp(op, left, right):
            return f"{_aexp_text(left)} {op} {_aexp_text(right)}"
        case Not(operand):
            inner = _bexp_text(operand, parent_prec=3)
            return f"not {inner}"
        case BBin(op, left, right):
            prec = _BPREC[op]
            text = f"{_bexp_text(left, prec, False)} {op} {_bexp_text(right, prec, True)}"
            if prec < parent_prec or (prec == parent_prec and right_side):
                return f"({text})"
            return text
    raise TypeError(f"not a boolean expression: {expr!r}")


def _command_text(command: Command) -> str:
    match command:
        case Skip():
            return "skip"
        case Assign(var, expr):
            return f"{var} := {_aexp_text(expr)}"
        case If(cond, target):
            return f"if {_bexp_text(cond)} then {target}"
        case Goto(target):
            return f"goto {target}"
        case Halt():
            return "halt"
        case Done():
            return "done"
    raise TypeError(f"not a command: {command!r}")


def print_program(program: Program) -> str:
    """Canonical text form; parse_program(print_program(p)) == p."""
    return "\n".join(f"{label}: {_command_text(command)}" for label, command in program.commands)


# --------------------------------------------------------------------------
# Standard operational semantics
# --------------------------------------------------------------------------

State = Mapping[str, int]


@dataclass(frozen=True)
class Configuration:
    label: Label
    state: tuple[tuple[str, int], ...]

    @staticmethod
    def make(label: Label, state: State) -> "Configuration":
        return Configuration(label, tuple(sorted(state.items())))

    def state_dict(self) -> dict[str, int]:
        return dict(self.state)

    def __str__(self) -> str:
        bindings = ", ".join(f"{k}={v}" for k, v in self.state)
        return f"<{self.label}, {{{bindings}}}>"


def eval_expr(expr: AExp | BExp, state: State) -> tuple[int | bool, frozenset[str]]:
    """Evaluate an expression, returning its value and the variables read.

    There is no short-circuiting: every subterm evaluates, so the read set
    equals expr_vars(expr) whenever evaluation succeeds.  Reading a variable
    missing from the state raises UndefinedVariableError.
    """
    reads: set[str] = set()

    def arith(e: AExp) -> int:
        match e:
            case Num(value):
                return value
            case Var(name):
                reads.add(name)
                if name not in state:
                    raise UndefinedVariableError(name)
                return state[name]
            case ABin(op, left, right):
                a = arith(left)
                b = arith(right)
                if op == "+":
                    return _wrap64(a + b)
                if op == "-":
                    return _wrap64(a - b)
                return _wrap64(a * b)
        raise TypeError(f"not an arithmetic expression: {e!r}")

    def boolean(e: BExp) -> bool:
        match e:
            case BoolLit(value):
                return value
            case Cmp(op, left, right):
                a = arith(left)
                b = arith(right)
                return a == b if op == "=" else a <= b
            case Not(operand):
                return not boolean(operand)
            case BBin(op, left, right):
                a = boolean(left)
                b = boolean(right)
                return (a and b) if op == "and" else (a or b)
        raise TypeError(f"not a boolean expression: {e!r}")

    if isinstance(expr, (Num, Var, ABin)):
        value: int | bool = arith(expr)
    else:
        value = boolean(expr)
    return value, frozenset(reads)


@dataclass(frozen=True)
class Stuck:
    """No execution rule applies at the configuration."""

    reason: str


class AtDone:
    """The configuration sits at a ``done`` command; execution is complete."""

    _instance: "AtDone | None" = None

    def __new__(cls) -> "AtDone":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "AtDone()"


AT_DONE = AtDone()

StepResult = Union[Configuration, Stuck, AtDone]


def step(program: Program, config: Configuration) -> StepResult:
    """One transition of the standard execution rules."""
    command = program.command_at(config.label)
    state = config.state_dict()
    match command:
        case Done():
            return AT_DONE
        case Skip():
            return Configuration.make(program.next_label(config.label), state)
        case Halt():
            return Configuration.make(program.next_label(config.label), state)
        case Goto(target):
            return Configuration.make(target, state)
        case Assign(var, expr):
            try:
                value, _ = eval_expr(expr, state)
            except UndefinedVariableError as exc:
                return Stuck(str(exc))
            state[var] = int(value)
            return Configuration.make(program.next_label(config.label), state)
        case If(cond, target):
            try:
                value, _ = eval_expr(cond, state)
            except UndefinedVariableError as exc:
                return Stuck(str(exc))
            return Configuration.make(target if value else program.next_label(config.label), state)
    raise TypeError(f"not a command: {command!r}")


class TraceKind(str, Enum):
    COMPLETE = "complete"
    STUCK = "stuck"
    TRUNCATED = "truncated"


@dataclass(frozen=True)
class Trace:
    configurations: tuple[Configuration, ...]
    kind: TraceKind
    reason: str | None = None

    def __len__(self) -> int:
        return len(self.configurations)


def run_trace(program: Program, initial_state: State | None = None, max_steps: int = 10_000) -> Trace:
    """Run from the first label, collecting configurations until done/stuck/bound."""
    if max_steps < 1:
        raise ValueError("max_steps must be at least 1")
    config = Configuration.make(program.first, initial_state or {})
    seen = [config]
    for _ in range(max_steps):
        result = step(program, config)
        if isinstance(result, AtDone):
            return Trace(tuple(seen), TraceKind.COMPLETE)
        if isinstance(result, Stuck):
            return Trace(tuple(seen), TraceKind.STUCK, result.reason)
        config = result
        seen.append(config)
    if isinstance(step(program, config), AtDone):
        return Trace(tuple(seen), TraceKind.COMPLETE)
    return Trace(tuple(seen), TraceKind.TRUNCATED, f"no done within {max_steps} steps")
