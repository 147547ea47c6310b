"""One planner round on a cluster small enough to read.

Run with ``python3 demos/repack_round.py``.

Four MPs, one of them hot.  We ask the branch-and-bound planner for the
assignment with the lowest peak load using at most two moves, then split
the moves into waves that never overfill a target on the way.
"""

import numpy as np

from callpack import BranchAndBound, RepackModel, schedule_waves

# calls 0-2 sit on MP 0 (90% together), call 3 on MP 1, call 4 on MP 2
P = np.array([40.0, 30.0, 20.0, 50.0, 45.0])
orig = np.array([0, 0, 0, 1, 2])
model = RepackModel(
    mp_ids=np.arange(4), call_ids=np.arange(5), P=P,
    B=np.array([0.0, 10.0, 5.0, 60.0]),      # load we are not allowed to move
    R=np.ones(4), cap=np.full(4, 75.0), orig=orig, L=2)

print("loads before:", model.loads(orig))
sol = BranchAndBound().solve(model, time_limit_s=5.0, gap=0.0)
print("status:", sol.status.value, " peak:", sol.y)
print("loads after: ", model.loads(sol.assign))
for c in sol.moves(model):
    print(f"  call {c}: MP {orig[c]} -> MP {sol.assign[c]}")

waves, deferred = schedule_waves(model, sol)
print("waves:", waves, " deferred:", deferred)

# MP 3 carries 60% of pinned load, so it can only take a call of 15% or
# less and none exist.  Moving the 20% call from MP 0 to MP 2 brings both to
# 70%.  No second move helps: each other call on MP 0 would push its new
# host past 75%, so the planner spends one move of the two it was allowed.
