"""The staged runtime in miniature: record, mispredict, rerun, emit, run.

A generator records second-stage code while consulting a prophecy cell that
predicts whether the input buffer ever holds negatives (so the generated
code would need a clamping pass).  The initial prediction says no; the
require site says otherwise; one rerun later the recording reflects the
corrected knowledge.  First-stage loops unroll; first-stage values freeze
into literals.
"""

import numpy as np

from prophecy import LatticeSpec, emit_c, interpret_program, run_staged


class MayBeNegative(LatticeSpec):
    name = "may_be_negative"
    max_rank = 1

    def satisfies(self, current, required):
        return not required or current

    def merge(self, current, required):
        return True

    def rank(self, value):
        return int(value)


MAY_BE_NEGATIVE = MayBeNegative()


def generator(ctx):
    cell = ctx.prophecy_cell(MAY_BE_NEGATIVE, False)
    data = ctx.parameter("float*")
    n = 6  # first-stage constant: loops over it unroll or freeze

    # pretend some downstream site discovers clamping is required
    scale = ctx.declare("float", 2.0)
    def body(i):
        ctx.assign(data[i], data[i] * scale)
    ctx.for_loop(0, n, 1, body)

    cell.require(True)  # mispredicts on run 1, satisfied on run 2

    if cell.get():  # first-stage branch: only the corrected run records this
        def clamp(i):
            ctx.if_else(data[i] < 0.0, lambda: ctx.assign(data[i], 0.0))
        ctx.for_loop(0, n, 1, clamp)


def main():
    program, stats = run_staged(generator, name="scale_then_clamp")
    print(f"runs={stats.runs} merges={stats.merges}")
    for event in stats.merge_log:
        print(f"  run {event.run}: cell {event.cell_id} {event.old_value} -> {event.new_value}")
    print()
    print(emit_c(program))

    data = np.array([1.0, -2.0, 3.0, -4.0, 5.0, -6.0], dtype=np.float32)
    out = interpret_program(program, {"arg0": data})
    print("input: ", data)
    print("output:", out["arg0"])


if __name__ == "__main__":
    main()
