"""How much does knowing the recurring calls help initial placement?

Run with ``python3 demos/recurring_knowledge.py [seed]``.

``tetris-recurring`` places calls from a series with enough history by
their predicted peak and every other call like LLR does.  The trace
generator keeps the replayed day fixed for a given seed and only changes
which calls belong to a series, so raising the recurring fraction adds
knowledge without changing the workload.
"""

import sys

from callpack import RunConfig, TraceGenConfig, generate_trace, parse_policy, prepare, run

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 1

print(f"{'fraction':>9}{'llr':>9}{'tetris-recurring':>18}{'tetris':>9}")
for fraction in (0.1, 0.5, 0.7, 0.9):
    rp = prepare(generate_trace(TraceGenConfig(recurring_fraction=fraction, seed=seed)))
    h = {p: run(RunConfig(policy=parse_policy(p), seed=seed), rp).report.H
         for p in ("llr", "tetris-recurring", "tetris")}
    print(f"{fraction:>9}{h['llr']:>9}{h['tetris-recurring']:>18}{h['tetris']:>9}")

# LLR ignores predictions, so its column does not move.  The key-1 column
# usually falls as the fraction grows towards 0.7.  Past that point packing
# by predicted peak can pile known-big calls onto the same few cold MPs, and
# at 0.9 it often loses ground again.
