"""Independent reference implementations used as test oracles."""

from __future__ import annotations

import itertools

import numpy as np


def enumerate_repack(P, B, R, cap, orig, L):
    """Exhaustive min of max MP load over all assignments honouring caps and budget.

    Every one of the M**C assignments is scored at once with numpy.
    Returns ``inf`` when nothing is feasible.
    """
    M, C = len(B), len(P)
    combos = np.array(list(itertools.product(range(M), repeat=C)), dtype=np.int64).reshape(-1, C)
    P, B, R, cap = (np.asarray(a, dtype=float) for a in (P, B, R, cap))
    loads = np.tile(B, (len(combos), 1))
    rows = np.arange(len(combos))
    for c in range(C):
        m = combos[:, c]
        loads[rows, m] += P[c] * R[m]
    moves = (combos != np.asarray(orig)[None, :]).sum(axis=1)
    ok = (moves <= L) & (loads <= cap[None, :]).all(axis=1)
    return float(loads[ok].max(axis=1).min()) if ok.any() else np.inf


def naive_nmax(p_t, c, n):
    """Direct double loop over sizes m and calls x for one (n, t) query."""
    num = den = 0
    for m in range(n, max(c, default=0) + 1):
        w = sum(1 for px, cx in zip(p_t, c) if px >= 0 and px <= n and cx >= m)
        num += w * m
        den += w
    return n if den == 0 else num / den
