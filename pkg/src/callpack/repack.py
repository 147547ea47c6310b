"""Min-max repacking of candidate calls onto candidate MPs.

The model: place every candidate call ``c`` on exactly one MP ``m``
(``X[m, c] = 1``), costing ``P[c] * R[m]`` CPU there on top of the
stationary load ``B[m]``; keep every MP at or under ``cap[m]``; move at
most ``L`` calls away from their original MP; minimize the busiest MP's
load ``y``.

``BranchAndBound`` is the built-in solver: a warm start from a
first-fit-decreasing heuristic, then depth-first branch and bound with a
water-filling lower bound.  Anything with a ``solve(model, time_limit_s,
gap)`` method can stand in for it; ``ScipyMilpSolver`` hands the same
model to HiGHS through scipy.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol, Sequence

import numba
import numpy as np

EPS = 1e-9


class SolveStatus(str, Enum):
    OPTIMAL = "optimal"
    GAP_REACHED = "gap_reached"
    TIME_LIMIT = "time_limit"
    INFEASIBLE_RELAXED = "infeasible_relaxed"


@dataclass(frozen=True)
class RepackModel:
    """One repacking instance.  Calls and MPs are positional; the id arrays map back."""

    mp_ids: np.ndarray          # (M,) cluster MP ids
    call_ids: np.ndarray        # (C,) call slots
    P: np.ndarray               # (C,) estimated peak CPU on the reference SKU
    B: np.ndarray               # (M,) stationary load
    R: np.ndarray               # (M,) SKU ratios
    cap: np.ndarray             # (M,)
    orig: np.ndarray            # (C,) index into mp_ids of each call's current MP
    L: int = 1000

    def __post_init__(self) -> None:
        c, m = len(self.P), len(self.B)
        if len(self.call_ids) != c or len(self.orig) != c:
            raise ValueError("call arrays disagree in length")
        if len(self.mp_ids) != m or len(self.R) != m or len(self.cap) != m:
            raise ValueError("MP arrays disagree in length")
        if c and (m == 0 or self.orig.min() < 0 or self.orig.max() >= m):
            raise ValueError("every call needs an original MP inside the model")
        if (self.P <= 0).any():
            raise ValueError("call demands must be positive")
        if (self.B < 0).any():
            raise ValueError("stationary loads must be non-negative")

    @property
    def n_calls(self) -> int:
        return len(self.P)

    @property
    def n_mps(self) -> int:
        return len(self.B)

    @property
    def O(self) -> np.ndarray:
        """Original-assignment indicator, shape (M, C)."""
        o = np.zeros((self.n_mps, self.n_calls), dtype=np.int64)
        o[self.orig, np.arange(self.n_calls)] = 1
        return o

    def loads(self, assign: np.ndarray) -> np.ndarray:
        return self.B + np.bincount(assign, self.P * self.R[assign], minlength=self.n_mps)


@dataclass(frozen=True)
class RepackSolution:
    assign: np.ndarray          # (C,) index into the model's MPs
    y: float
    status: SolveStatus
    bound: float = 0.0          # proven lower bound on the optimum of the solved problem
    nodes: int = 0
    relaxation: int = 0         # 0: caps enforced, 1: unplaceable calls placed first and caps raised to B, 2: no caps

    @property
    def gap(self) -> float:
        return 0.0 if self.y <= 0 else max(0.0, (self.y - self.bound) / self.y)

    def X(self, model: RepackModel) -> np.ndarray:
        x = np.zeros((model.n_mps, model.n_calls), dtype=np.int64)
        x[self.assign, np.arange(model.n_calls)] = 1
        return x

    def moves(self, model: RepackModel) -> np.ndarray:
        """Positions of calls whose MP changes."""
        return np.flatnonzero(self.assign != model.orig)


class RepackSolver(Protocol):
    def solve(self, model: RepackModel, time_limit_s: float = 120.0,
              gap: float = 0.10) -> RepackSolution: ...


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _node_bound(loads, R, cap, capped, rest_volume, big_p):
    """Lower bound on y below a node, or inf if caps make it infeasible.

    The water level only matters when it rises above the busiest MP, and
    in that case every MP is under water, so it has a closed form and no
    sort is needed.
    """
    b = loads.max()
    if rest_volume > 0:
        below = 0.0
        inv = 0.0
        best = np.inf
        room = 0.0
        for m in range(len(loads)):
            below += (b - loads[m]) / R[m]
            inv += 1.0 / R[m]
            v = loads[m] + big_p * R[m]
            if v < best:
                best = v
            if cap[m] > loads[m]:
                room += (cap[m] - loads[m]) / R[m]
        if rest_volume > below:
            w = b + (rest_volume - below) / inv
            if w > b:
                b = w
        if best > b:
            b = best
        if capped and room < rest_volume - EPS:
            return np.inf
    return b


@numba.njit(cache=True)
def _ffd_level(P, R, B, cap, orig, order, level, L, sender):
    """Keep calls home where they fit under min(cap, level), move the rest worst-fit.

    MPs flagged in ``sender`` (they host calls of the model) are used as
    destinations only when no other MP fits, which keeps dependency chains
    between moves short.

    Returns an assignment, or an array starting with -1 when it fails.
    """
    C = len(P)
    M = len(B)
    loads = B.copy()
    assign = np.full(C, -1, np.int64)
    for i in range(C):
        c = order[i]
        o = orig[c]
        lim = min(cap[o], level)
        if loads[o] + P[c] * R[o] <= lim + EPS:
            loads[o] += P[c] * R[o]
            assign[c] = o
    moves = 0
    for i in range(C):
        c = order[i]
        if assign[c] >= 0:
            continue
        moves += 1
        if moves > L:
            assign[0] = -1
            return assign
        best = -1
        best_v = np.inf
        for pass_ in range(2):
            for m in range(M):
                if sender[m] != pass_:
                    continue
                v = loads[m] + P[c] * R[m]
                if v <= min(cap[m], level) + EPS and v < best_v:
                    best_v = v
                    best = m
            if best >= 0:
                break
        if best < 0:
            assign[0] = -1
            return assign
        assign[c] = best
        loads[best] = best_v
    return assign


@numba.njit(cache=True)
def _expand(d, order, P, R, cap, orig, loads, moves, L, cand, ncand, sender):
    c = order[d]
    o = orig[c]
    k = 0
    if loads[o] + P[c] * R[o] <= cap[o] + EPS:
        cand[d, k] = o
        k += 1
    if moves < L:
        M = len(loads)
        vals = np.empty(M)
        for m in range(M):
            vals[m] = loads[m] + P[c] * R[m]
        idx = np.argsort(vals, kind="mergesort")
        for pass_ in range(2):
            for j in range(M):
                m = idx[j]
                if sender[m] == pass_ and m != o and vals[m] <= cap[m] + EPS:
                    cand[d, k] = m
                    k += 1
    ncand[d] = k


@numba.njit(cache=True)
def _bnb(P, R, B, cap, capped, orig, order, L, gap, suffix, state, loads, assign, cand,
         ncand, ptr, best, best_y, node_limit, sender):
    """Resumable depth-first branch and bound.

    ``state`` = [depth, moves, nodes, finished, gap_pruned, started].
    ``best_y[0]`` is the incumbent (inf if none); ``best`` its assignment.
    Runs until the search ends or ``node_limit`` more nodes were visited.
    """
    C = len(P)
    if state[5] == 0:
        state[5] = 1
        state[0] = 0
        _expand(0, order, P, R, cap, orig, loads, state[1], L, cand, ncand, sender)
        ptr[0] = 0
    stop_at = state[2] + node_limit
    while True:
        d = state[0]
        if state[2] >= stop_at:
            return
        if ptr[d] < ncand[d]:
            m = cand[d, ptr[d]]
            ptr[d] += 1
            c = order[d]
            loads[m] += P[c] * R[m]
            moved = 1 if m != orig[c] else 0
            state[1] += moved
            state[2] += 1
            thresh = best_y[0] * (1.0 - gap) if gap > 0 else best_y[0]
            big = P[order[d + 1]] if d + 1 < C else 0.0
            bound = _node_bound(loads, R, cap, capped, suffix[d + 1], big)
            if bound >= thresh - EPS:
                if gap > 0 and bound < best_y[0] - EPS and bound < np.inf:
                    state[4] = 1
                loads[m] -= P[c] * R[m]
                state[1] -= moved
                continue
            if d + 1 == C:
                y = loads.max()
                best_y[0] = y
                for i in range(C):
                    best[order[i]] = assign[i]
                best[c] = m
                loads[m] -= P[c] * R[m]
                state[1] -= moved
                continue
            assign[d] = m
            state[0] = d + 1
            _expand(d + 1, order, P, R, cap, orig, loads, state[1], L, cand, ncand, sender)
            ptr[d + 1] = 0
        else:
            if d == 0:
                state[3] = 1
                return
            d -= 1
            state[0] = d
            c = order[d]
            m = assign[d]
            loads[m] -= P[c] * R[m]
            if m != orig[c]:
                state[1] -= 1
            assign[d] = -1


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------

@dataclass
class BranchAndBound:
    """Built-in exact solver with a deterministic node budget.

    ``node_limit`` bounds the work per solve so simulated runs are
    reproducible; the wall-clock ``time_limit_s`` passed to ``solve`` is
    only a safety net on top of it.
    """

    node_limit: int = 20_000
    chunk: int = 5_000
    level_iters: int = 20
    _last_nodes: int = field(default=0, init=False, repr=False)

    def solve(self, model: RepackModel, time_limit_s: float = 120.0,
              gap: float = 0.10) -> RepackSolution:
        deadline = time.perf_counter() + time_limit_s
        if model.n_calls == 0:
            y = float(model.B.max()) if model.n_mps else 0.0
            return RepackSolution(np.zeros(0, np.int64), y, SolveStatus.OPTIMAL, y)
        caps = model.cap.astype(float)
        # stage 0 honours the caps.  Stage 1 finds every call that fits on
        # no MP (repeating until nothing changes, since each such call raises
        # its home MP's cap), parks each on the MP it loads least, then lets
        # each MP keep the load it cannot shed.  Stage 2 drops the caps.
        sol = self._solve_capped(model, caps, True, gap, deadline)
        if sol is not None:
            return sol
        pinned, _ = _pin_unplaceable(model, caps)
        placed, B1, left = _place_oversized(model, pinned)
        free = np.flatnonzero(~pinned)
        if len(free) == 0:
            y = float(model.loads(placed).max())
            return RepackSolution(placed, y, SolveStatus.INFEASIBLE_RELAXED, y, 0, 1)
        sub = RepackModel(model.mp_ids, model.call_ids[free], model.P[free], B1, model.R,
                          model.cap, model.orig[free], left)
        cap1 = np.maximum(caps, B1)
        # an MP a parked call just left takes no more than it already holds,
        # so the freed room does not start a cascade of moves between hot MPs
        left_home = np.unique(model.orig[placed != model.orig])
        if len(left_home):
            rest = model.loads(placed)[left_home]
            cap1[left_home] = np.maximum(B1[left_home], np.minimum(cap1[left_home], rest))
        sol = self._solve_capped(sub, cap1, True, gap, deadline)
        if sol is not None:
            assign = placed
            assign[free] = sol.assign
            return RepackSolution(assign, sol.y, SolveStatus.INFEASIBLE_RELAXED, sol.bound,
                                  sol.nodes, 1)
        sol = self._solve_capped(model, np.full(model.n_mps, np.inf), False, gap, deadline)
        return RepackSolution(sol.assign, sol.y, SolveStatus.INFEASIBLE_RELAXED, sol.bound,
                              sol.nodes, 2)

    def _solve_capped(self, model: RepackModel, cap: np.ndarray, capped: bool, gap: float,
                      deadline: float) -> RepackSolution | None:
        P, R, B = model.P.astype(float), model.R.astype(float), model.B.astype(float)
        orig = model.orig.astype(np.int64)
        C, M = model.n_calls, model.n_mps
        if capped and (B > cap + EPS).any():
            return None
        if capped and ((B[None, :] + P[:, None] * R[None, :]) > cap[None, :] + EPS).all(axis=1).any():
            return None  # some call fits on no MP at all
        order = np.lexsort((np.arange(C), -P)).astype(np.int64)
        sender = np.zeros(M, np.int64)
        sender[orig] = 1
        suffix = np.concatenate([np.cumsum(P[order][::-1])[::-1], [0.0]])
        root = _node_bound(B, R, cap, capped, suffix[0], P[order[0]])
        if root == np.inf:
            return None

        best_y, best = np.inf, None
        home = model.loads(orig)
        if (home <= cap + EPS).all():
            best_y, best = float(home.max()), orig.copy()
        hi = _ffd_level(P, R, B, cap, orig, order, np.inf, model.L, sender)
        if hi[0] >= 0:
            y = float(model.loads(hi).max())
            if y < best_y - EPS:
                best_y, best = y, hi
        if best is not None:
            lo_y, hi_y = root, best_y
            for _ in range(self.level_iters):
                if hi_y - lo_y <= 1e-6 * max(1.0, hi_y):
                    break
                mid = 0.5 * (lo_y + hi_y)
                a = _ffd_level(P, R, B, cap, orig, order, mid, model.L, sender)
                if a[0] >= 0:
                    y = float(model.loads(a).max())
                    if y < best_y - EPS:
                        best_y, best = y, a
                    hi_y = min(mid, y)
                else:
                    lo_y = mid

        thresh = best_y * (1 - gap) if gap > 0 else best_y
        if best is not None and root >= thresh - EPS:
            status = SolveStatus.OPTIMAL if root >= best_y - EPS else SolveStatus.GAP_REACHED
            return RepackSolution(best, best_y, status, min(root, best_y), 0)

        state = np.zeros(6, np.int64)
        loads = B.copy()
        assign = np.full(C, -1, np.int64)
        cand = np.zeros((C, M), np.int64)
        ncand = np.zeros(C, np.int64)
        ptr = np.zeros(C, np.int64)
        inc = best.copy() if best is not None else np.full(C, -1, np.int64)
        inc_y = np.array([best_y])
        budget = self.node_limit
        while not state[3] and budget > 0:
            step = min(self.chunk, budget)
            _bnb(P, R, B, cap, capped, orig, order, model.L, gap, suffix, state, loads, assign,
                 cand, ncand, ptr, inc, inc_y, step, sender)
            budget -= step
            if time.perf_counter() > deadline:
                break
        nodes = int(state[2])
        if not np.isfinite(inc_y[0]):
            return None
        y = float(inc_y[0])
        if not state[3]:
            status, bound = SolveStatus.TIME_LIMIT, min(root, y)
        elif state[4]:
            status, bound = SolveStatus.GAP_REACHED, min(y, max(root, y * (1 - gap)))
        else:
            status, bound = SolveStatus.OPTIMAL, y
        return RepackSolution(inc, y, status, bound, nodes)


def _pin_unplaceable(model: RepackModel, caps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Calls that fit on no MP given the stationary load, and the load they add at home."""
    pinned = np.zeros(model.n_calls, bool)
    B1 = model.B.astype(float)
    while True:
        cap1 = np.maximum(caps, B1)
        fits = (B1[None, :] + model.P[:, None] * model.R[None, :]) <= cap1[None, :] + EPS
        newly = ~pinned & ~fits.any(axis=1)
        if not newly.any():
            return pinned, B1
        pinned |= newly
        B1 = B1 + np.bincount(model.orig[newly], model.P[newly] * model.R[model.orig[newly]],
                              minlength=model.n_mps)


def _place_oversized(model: RepackModel, pinned: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    """Put each pinned call, largest first, where it leaves the lowest load.

    A call too big for any cap keeps its MP hot wherever it goes, so the
    best it can do is sit on the emptiest MP instead of staying next to
    calls the planner may not move.  Home wins ties and every move spends
    budget.  Returns the assignment, the stationary load including the
    placed calls, and the budget left for the rest.
    """
    assign = model.orig.copy()
    idx = np.flatnonzero(pinned)
    B1 = model.B.astype(float) + np.bincount(model.orig[idx], model.P[idx] * model.R[model.orig[idx]],
                                             minlength=model.n_mps)
    left = model.L
    for c in idx[np.lexsort((idx, -model.P[idx]))]:
        home = model.orig[c]
        B1[home] -= model.P[c] * model.R[home]
        after = B1 + model.P[c] * model.R
        m = int(np.argmin(after))
        if left > 0 and after[m] < after[home] - EPS:
            assign[c] = m
            left -= 1
        B1[assign[c]] += model.P[c] * model.R[assign[c]]
    return assign, B1, left


def solve_repack(model: RepackModel, time_limit_s: float = 120.0, gap: float = 0.10,
                 solver: RepackSolver | None = None) -> RepackSolution:
    return (solver or BranchAndBound()).solve(model, time_limit_s, gap)


# ---------------------------------------------------------------------------
# external solver adapter
# ---------------------------------------------------------------------------

def constraint_matrices(model: RepackModel, cap: np.ndarray | None = None):
    """Linear form of the model over variables ``[X (M*C, row-major by MP), y]``.

    Returns ``(c, A_eq, b_eq, A_ub, b_ub)`` with rows for: one MP per call,
    per-MP cap, the move budget, and y above every MP load.
    """
    M, C = model.n_mps, model.n_calls
    cap = model.cap if cap is None else cap
    nv = M * C + 1
    obj = np.zeros(nv)
    obj[-1] = 1.0
    a_eq = np.zeros((C, nv))
    for c in range(C):
        a_eq[c, [m * C + c for m in range(M)]] = 1.0
    b_eq = np.ones(C)
    rows, rhs = [], []
    demand = model.R[:, None] * model.P[None, :]
    finite = np.isfinite(cap)
    for m in range(M):
        if finite[m]:
            r = np.zeros(nv)
            r[m * C:(m + 1) * C] = demand[m]
            rows.append(r)
            rhs.append(cap[m] - model.B[m])
    # sum (O - X) * O <= L  ->  -sum O*X <= L - sum O
    o = model.O
    r = np.zeros(nv)
    r[:M * C] = -(o * o).ravel()
    rows.append(r)
    rhs.append(model.L - float((o * o).sum()))
    for m in range(M):
        r = np.zeros(nv)
        r[m * C:(m + 1) * C] = demand[m]
        r[-1] = -1.0
        rows.append(r)
        rhs.append(-model.B[m])
    return obj, a_eq, b_eq, np.array(rows), np.array(rhs)


@dataclass
class ScipyMilpSolver:
    """Hands the model to HiGHS via ``scipy.optimize.milp``.  Suited to small instances."""

    def solve(self, model: RepackModel, time_limit_s: float = 120.0,
              gap: float = 0.10) -> RepackSolution:
        from scipy.optimize import Bounds, LinearConstraint, milp

        if model.n_calls == 0:
            y = float(model.B.max()) if model.n_mps else 0.0
            return RepackSolution(np.zeros(0, np.int64), y, SolveStatus.OPTIMAL, y)
        caps = model.cap.astype(float)
        stages = [caps, np.maximum(caps, model.B), np.full(model.n_mps, np.inf)]
        for stage, cap in enumerate(stages):
            obj, a_eq, b_eq, a_ub, b_ub = constraint_matrices(model, cap)
            nv = len(obj)
            integrality = np.ones(nv)
            integrality[-1] = 0
            res = milp(obj, integrality=integrality,
                       bounds=Bounds(np.zeros(nv), np.r_[np.ones(nv - 1), np.inf]),
                       constraints=[LinearConstraint(a_eq, b_eq, b_eq),
                                    LinearConstraint(a_ub, -np.inf, b_ub)],
                       options={"time_limit": time_limit_s, "mip_rel_gap": gap})
            if res.x is None:
                continue
            x = np.rint(res.x[:-1]).reshape(model.n_mps, model.n_calls)
            assign = x.argmax(axis=0).astype(np.int64)
            y = float(model.loads(assign).max())
            status = (SolveStatus.INFEASIBLE_RELAXED if stage else
                      SolveStatus.OPTIMAL if res.status == 0 and gap == 0 else
                      SolveStatus.GAP_REACHED if res.status == 0 else SolveStatus.TIME_LIMIT)
            bound = float(getattr(res, "mip_dual_bound", y) or y)
            return RepackSolution(assign, y, status, min(bound, y), 0, stage)
        raise RuntimeError("HiGHS found no assignment even without caps")
