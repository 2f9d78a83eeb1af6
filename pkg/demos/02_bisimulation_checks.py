"""What the preservation and progress checkers actually certify.

Preservation: extended steps (carrying a live-variable prediction) never
invent behavior — each projects onto a standard step.  This holds for any
prediction table, even a wrong one.

Progress: the computed predictions let the extended semantics follow every
standard step.  Break the table by hand and the checker pinpoints which
inclusion failed, at which label or edge, and by which variables.
"""

from prophecy import (
    analyze_concrete,
    check_preservation,
    check_progress,
    parse_program,
)

BRANCHY = """
l0: n := 6
l1: acc := 1
l2: if n <= 1 then l6
l3: acc := acc * n
l4: n := n - 1
l5: goto l2
l6: halt
l7: done
"""


def main():
    program = parse_program(BRANCHY)
    results, stats = analyze_concrete(program)
    print(f"fixpoint after {stats.runs} runs:")
    for label in program.labels:
        print(f"  {label}: {{{', '.join(sorted(results[label]))}}}")

    print("\npreservation with the computed table:", check_preservation(program, results).passed)
    junk = {label: frozenset({"n", "acc", "zzz"}) for label in program.labels}
    print("preservation with a junk table (still true by construction):",
          check_preservation(program, junk).passed)

    print("\nprogress with the computed table:", check_progress(program, results).passed)

    broken = dict(results)
    broken["l3"] = frozenset()  # claim nothing is live before acc := acc * n
    print("\ndrop l3's prediction entirely:")
    print(check_progress(program, broken))

    padded = dict(results)
    padded["l2"] = results["l2"] | {"ghost"}  # predict a variable nobody defines
    print("\npad l2 with a ghost variable:")
    print(check_progress(program, padded))


if __name__ == "__main__":
    main()
