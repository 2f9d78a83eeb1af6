"""Live variables computed by running the program forward, repeatedly.

No backward pass over an IR: each run checks that every variable a command
reads was predicted live, repairs the prediction on failure, and reruns.
Edge constraints collected along the way keep predictions consistent across
transitions.  Watch the countdown loop converge in four runs.
"""

from prophecy import (
    analyze_concrete,
    check_preservation,
    check_progress,
    live_variables_oracle,
    parse_program,
)

LOOP = """
l0: x := 10
l1: if x <= 0 then l4
l2: x := x - 1
l3: goto l1
l4: halt
l5: done
"""


def show(results):
    for label in sorted(results, key=lambda l: int(l[1:])):
        print(f"  {label}: {{{', '.join(sorted(results[label]))}}}")


def main():
    program = parse_program(LOOP)

    print("== default engine (constraint repair on) ==")
    results, stats = analyze_concrete(program)
    show(results)
    print(f"runs={stats.runs} mispredictions={stats.mispredictions}"
          f" constraint_repairs={stats.constraint_repairs}")

    print("\nclassical worklist oracle agrees:",
          live_variables_oracle(program) == results)
    print("preservation:", check_preservation(program, results).passed)
    print("progress:", check_progress(program, results).passed)

    print("\n== literal pseudocode (no constraint repair at collection) ==")
    strict, strict_stats = analyze_concrete(program, strict_paper=True)
    show(strict)
    print(f"runs={strict_stats.runs}")
    print("the back edge l3 -> l1 was recorded after the last misprediction,")
    print("so l3's prediction never caught up; progress now fails there:")
    print(check_progress(program, strict))


if __name__ == "__main__":
    main()
