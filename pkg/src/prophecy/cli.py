"""Command-line front door.

Two subcommands:

* ``analyze`` — run the rerun-based live-variable engine on a core-language
  program file (concrete single-trace mode or all-paths mode), optionally
  cross-checking against the classical worklist oracle and the
  preservation/progress checkers.
* ``stage`` — build one of the staged DSL benchmarks, emit its C-like code,
  report rerun statistics, execute it with the reference interpreter on
  seeded random inputs, and compare data-movement strategies.

Exit codes: 0 success, 1 a check or assertion failed (or the analyzed
program misbehaved), 2 usage or parse errors.  All output is deterministic
for fixed seeds.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from typing import Any, Callable

import numpy as np

from .core_lang import CoreLangError, parse_program
from .engine import (
    AnalysisError,
    analyze_all_paths_with_stats,
    analyze_concrete,
    live_variables_oracle,
    reachable_labels,
)
from .extended import check_preservation, check_progress
from .einsum import (
    DEFAULT_MAX_BID,
    DEFAULT_MAX_TID,
    EinsumError,
    build_matmul_benchmark,
    build_matvec_benchmark,
    movement_summary,
)
from .interp import interpret_program
from .nn import NnError, build_conv_relu_benchmark
from .second_stage import emit_c
from .staging import RunStats, StagingError

_STRATEGY_FLAGS = {"prophecy": "prophecy", "copy-all": "copy_all", "unified": "unified"}


def _parse_bindings(pairs: list[str] | None) -> dict[str, int]:
    state: dict[str, int] = {}
    for pair in pairs or []:
        name, sep, value = pair.partition("=")
        if not sep or not name:
            raise ValueError(f"--init expects name=value, got {pair!r}")
        state[name.strip()] = int(value)
    return state


# --------------------------------------------------------------------------
# analyze
# --------------------------------------------------------------------------


def cmd_analyze(args: argparse.Namespace) -> int:
    try:
        text = open(args.program, "r", encoding="utf-8").read()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        program = parse_program(text)
    except CoreLangError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 2
    try:
        initial = _parse_bindings(args.init)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    report: dict[str, Any] = {"mode": args.mode, "strict_paper": args.strict_paper}
    try:
        if args.mode == "concrete":
            results, stats = analyze_concrete(
                program, initial, args.max_steps, strict_paper=args.strict_paper
            )
            report["runs"] = stats.runs
            report["mispredictions"] = stats.mispredictions
            report["constraint_repairs"] = stats.constraint_repairs
        else:
            results, all_stats = analyze_all_paths_with_stats(program)
            report["runs"] = all_stats.passes
            report["mispredictions"] = all_stats.mispredictions
            report["constraint_repairs"] = all_stats.constraint_repairs
    except AnalysisError as exc:
        print(f"analysis error: {exc}", file=sys.stderr)
        return 1

    report["beta"] = {label: sorted(results[label]) for label in program.labels}
    report["oracle_match"] = None
    report["preservation"] = None
    report["progress"] = None

    if args.check:
        oracle = live_variables_oracle(program)
        reachable = reachable_labels(program)
        if args.mode == "all-paths":
            report["oracle_match"] = all(results[l] == oracle[l] for l in reachable)
        else:
            # a single trace constrains no more than all paths do
            report["oracle_match"] = all(results[l] <= oracle[l] for l in program.labels)
        preservation = check_preservation(program, results, initial, args.max_steps)
        progress = check_progress(program, results, initial, args.max_steps)
        report["preservation"] = preservation.passed
        report["progress"] = progress.passed
        if not preservation.passed:
            report["preservation_violation"] = preservation.violation.to_record()
        if not progress.passed:
            report["progress_violation"] = progress.violation.to_record()

    _print_analysis_report(report, args.format)
    checks = [report["oracle_match"], report["preservation"], report["progress"]]
    return 1 if any(c is False for c in checks) else 0


def _verdict(value: Any) -> str:
    if value is None:
        return "skipped"
    return "pass" if value else "FAIL"


def _print_analysis_report(report: dict[str, Any], fmt: str) -> None:
    if fmt == "json":
        print(json.dumps(report, indent=2, sort_keys=True))
        return
    print(f"mode: {report['mode']}")
    if report["strict_paper"]:
        print("strict-paper: constraint repairs at collection disabled")
    width = max(len(label) for label in report["beta"])
    for label, live in report["beta"].items():
        names = ", ".join(live)
        print(f"  {label:<{width}}  {{{names}}}")
    print(f"runs: {report['runs']}")
    print(f"mispredictions: {report['mispredictions']}")
    print(f"constraint_repairs: {report['constraint_repairs']}")
    print(f"oracle_match: {_verdict(report['oracle_match'])}")
    print(f"preservation: {_verdict(report['preservation'])}")
    print(f"progress: {_verdict(report['progress'])}")
    for key in ("preservation_violation", "progress_violation"):
        if key in report:
            v = report[key]
            where = v["label"] + (f" -> {v['next_label']}" if "next_label" in v else "")
            print(f"  {key.replace('_', ' ')}: {v['kind']} at {where}, witness {v['witness']}")


# --------------------------------------------------------------------------
# stage
# --------------------------------------------------------------------------


def _checksum(array: np.ndarray) -> str:
    return hashlib.sha256(np.asarray(array, dtype=np.float32).tobytes()).hexdigest()[:16]


def _build_benchmark(args: argparse.Namespace, strategy: str):
    if args.dsl == "einsum-matmul":
        return build_matmul_benchmark(
            args.m, args.n, args.o, strategy, max_bid=args.max_bid, max_tid=args.max_tid
        )
    if args.dsl == "einsum-matvec":
        return build_matvec_benchmark(
            args.m, args.n, strategy, max_bid=args.max_bid, max_tid=args.max_tid
        )
    return build_conv_relu_benchmark(args.size, args.filter_size)


def _benchmark_inputs(args: argparse.Namespace, rng: np.random.Generator) -> list[dict]:
    if args.dsl == "einsum-matmul":
        return [
            {
                "arg0": rng.random(args.m * args.n, dtype=np.float32),
                "arg1": rng.random(args.n * args.o, dtype=np.float32),
                "arg2": np.zeros(args.m * args.o, dtype=np.float32),
            }
        ]
    if args.dsl == "einsum-matvec":
        return [
            {
                "arg0": rng.random(args.m * args.n, dtype=np.float32),
                "arg1": rng.random(args.n, dtype=np.float32),
                "arg2": np.zeros(args.m, dtype=np.float32),
            }
        ]
    data = rng.standard_normal(args.size, dtype=np.float32) * 4
    weight = rng.standard_normal(args.filter_size, dtype=np.float32)
    base = {"arg0": data, "arg1": weight}
    return [
        {**base, "arg2": flag, "arg3": np.zeros(args.size), "arg4": np.zeros(args.size)}
        for flag in (1, 0)
    ]


def _print_stage_stats(args: argparse.Namespace, program, stats: RunStats) -> None:
    print(f"dsl: {args.dsl}")
    if args.dsl.startswith("einsum"):
        print(f"strategy: {program.meta['strategy']}")
    print(f"runs: {stats.runs}")
    print(f"merges: {stats.merges}")
    print(f"derivation: runs = merges + 1 = {stats.merges} + 1 = {stats.merges + 1}")
    cell_names = program.meta.get("cell_names", {})
    for event in stats.merge_log:
        name = cell_names.get(event.cell_id, f"cell {event.cell_id}")
        print(f"  run {event.run}: {name} {event.old_value} -> {event.new_value}")
    if args.dsl.startswith("einsum"):
        moves = movement_summary(program)
        print(f"device_allocations: {sorted(moves.device_allocations)}")
        print(f"copied_to_device: {sorted(moves.copied_to_device)}")
        print(f"copied_to_host: {sorted(moves.copied_to_host)}")


def cmd_stage(args: argparse.Namespace) -> int:
    einsum = args.dsl.startswith("einsum")
    if not einsum and args.strategy is not None:
        print("error: --strategy applies to einsum DSLs only", file=sys.stderr)
        return 2
    if not einsum and args.diff_strategies:
        print("error: --diff-strategies applies to einsum DSLs only", file=sys.stderr)
        return 2
    strategy = _STRATEGY_FLAGS[args.strategy or "prophecy"]

    try:
        program, stats = _build_benchmark(args, strategy)
    except (EinsumError, NnError, StagingError) as exc:
        print(f"staging error: {exc}", file=sys.stderr)
        return 1
    emitted = emit_c(program)
    if args.emit:
        with open(args.emit, "w", encoding="utf-8") as fh:
            fh.write(emitted)
        print(f"emitted: {args.emit}")
    if args.stats:
        _print_stage_stats(args, program, stats)
    if not (args.emit or args.stats or args.run_interp or args.diff_strategies):
        print(emitted, end="")

    failed = False
    if args.run_interp:
        rng = np.random.default_rng(args.seed)
        for case, inputs in enumerate(_benchmark_inputs(args, rng)):
            outputs = interpret_program(program, inputs)
            for name in sorted(outputs):
                if isinstance(outputs[name], np.ndarray):
                    print(f"checksum[case {case}][{name}]: {_checksum(outputs[name])}")

    if args.diff_strategies:
        rng = np.random.default_rng(args.seed)
        input_sets = _benchmark_inputs(args, rng)
        baselines: list[dict] | None = None
        for flag_name, strategy_name in _STRATEGY_FLAGS.items():
            variant, _ = _build_benchmark(args, strategy_name)
            outputs = [interpret_program(variant, inputs) for inputs in input_sets]
            if baselines is None:
                baselines = outputs
            else:
                for base, got in zip(baselines, outputs):
                    for name in base:
                        same = (
                            np.array_equal(base[name], got[name])
                            if isinstance(base[name], np.ndarray)
                            else base[name] == got[name]
                        )
                        if not same:
                            print(f"diff-strategies: FAIL ({flag_name} differs at {name})")
                            failed = True
        if not failed:
            print("diff-strategies: pass (outputs bit-identical across strategies)")

    return 1 if failed else 0


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prophecy",
        description="Prophecy-driven staged code generation and live-variable analysis",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    analyze = sub.add_parser("analyze", help="analyze a core-language program file")
    analyze.add_argument("program", help="path to the program text")
    analyze.add_argument("--mode", choices=["concrete", "all-paths"], default="concrete")
    analyze.add_argument(
        "--init", action="append", metavar="NAME=INT", help="seed an initial state binding"
    )
    analyze.add_argument("--max-steps", type=int, default=10_000)
    analyze.add_argument(
        "--check",
        action="store_true",
        help="compare against the dataflow oracle and run preservation/progress",
    )
    analyze.add_argument(
        "--strict-paper",
        action="store_true",
        help="disable constraint repair at collection time (literal pseudocode)",
    )
    analyze.add_argument("--format", choices=["text", "json"], default="text")
    analyze.set_defaults(func=cmd_analyze)

    stage = sub.add_parser("stage", help="build a staged DSL benchmark")
    stage.add_argument(
        "--dsl",
        required=True,
        choices=["einsum-matmul", "einsum-matvec", "nn-conv-relu"],
    )
    stage.add_argument("--strategy", choices=sorted(_STRATEGY_FLAGS), default=None)
    stage.add_argument("--m", type=int, default=8)
    stage.add_argument("--n", type=int, default=8)
    stage.add_argument("--o", type=int, default=8)
    stage.add_argument("--size", type=int, default=64)
    stage.add_argument("--filter-size", type=int, default=9)
    stage.add_argument("--max-bid", type=int, default=DEFAULT_MAX_BID)
    stage.add_argument("--max-tid", type=int, default=DEFAULT_MAX_TID)
    stage.add_argument("--emit", metavar="PATH", help="write the C-like code here")
    stage.add_argument("--stats", action="store_true", help="print rerun statistics")
    stage.add_argument(
        "--run-interp",
        action="store_true",
        help="interpret on seeded random inputs and print output checksums",
    )
    stage.add_argument(
        "--diff-strategies",
        action="store_true",
        help="assert bit-identical interpreted outputs across all strategies",
    )
    stage.add_argument("--seed", type=int, default=0)
    stage.set_defaults(func=cmd_stage)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handler: Callable[[argparse.Namespace], int] = args.func
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
