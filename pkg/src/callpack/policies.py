"""Initial-assignment policies.

Every policy reduces to ``choose(code, load, k, u1, u2, rr)``, a compiled
function shared by the simulator's event loop and ``pick_mp``.  The two
uniforms ``u1``/``u2`` are drawn by the caller, so a decision is a pure
function of the load vector and those draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .trace import InvalidConfig

RR, RANDOM, LL, LLR, P2 = 0, 1, 2, 3, 4
# which load a new call is ranked against: current CPU, expected peak, or
# expected peak only for calls with (or only for calls without) series history
RANK_CURRENT, RANK_EXPECTED, RANK_EXPECTED_IF_KNOWN, RANK_EXPECTED_IF_UNKNOWN = 0, 1, 2, 3

_BASE_CODES = {"rr": RR, "random": RANDOM, "ll": LL, "llr": LLR, "p2": P2}


class EmptyCluster(ValueError):
    pass


@dataclass(frozen=True)
class PolicyKind:
    """A named policy.  Tetris variants rank by expected peak instead of current CPU.

    ``use_recurring`` / ``use_nonrecurring`` switch the two predictors for
    Tetris; turning both off leaves LLR over current CPU.
    """

    name: str = "llr"
    k: int = 5
    use_recurring: bool = False
    use_nonrecurring: bool = False

    @property
    def code(self) -> int:
        return LLR if self.is_tetris else _BASE_CODES[self.name]

    @property
    def is_tetris(self) -> bool:
        return self.name.startswith("tetris")

    @property
    def rank_mode(self) -> int:
        """``tetris-recurring`` places only calls with series history by
        expected peak and the rest like LLR; ``tetris-nonrecurring`` is the
        mirror image.  Full Tetris ranks every call by expected peak."""
        if not self.is_tetris:
            return RANK_CURRENT
        if self.use_recurring and self.use_nonrecurring:
            return RANK_EXPECTED
        return RANK_EXPECTED_IF_KNOWN if self.use_recurring else RANK_EXPECTED_IF_UNKNOWN

    @property
    def uses_predictions(self) -> bool:
        return self.use_recurring or self.use_nonrecurring


POLICY_NAMES = ("rr", "random", "ll", "llr", "p2", "tetris", "tetris-recurring", "tetris-nonrecurring")


def parse_policy(name: str, k: int = 5) -> PolicyKind:
    """``tetris-recurring`` and ``tetris-nonrecurring`` keep one predictor each."""
    name = name.strip().lower()
    if k < 1:
        raise InvalidConfig("policies.k: must be at least 1")
    if name in _BASE_CODES:
        return PolicyKind(name, k)
    if name == "tetris":
        return PolicyKind(name, k, True, True)
    if name == "tetris-recurring":
        return PolicyKind(name, k, True, False)
    if name == "tetris-nonrecurring":
        return PolicyKind(name, k, False, True)
    raise InvalidConfig(f"policies.name: unknown policy {name!r} (expected one of {', '.join(POLICY_NAMES)})")


@numba.njit(cache=True)
def k_smallest(load, k):
    """Indices of the ``k`` smallest loads ordered by (load, index)."""
    n = len(load)
    k = min(k, n)
    idx = np.empty(k, np.int64)
    val = np.empty(k)
    filled = 0
    for m in range(n):
        v = load[m]
        if filled < k:
            j = filled
            filled += 1
        elif v < val[k - 1]:
            j = k - 1
        else:
            continue
        # shift larger entries right; equal loads keep the earlier index first
        while j > 0 and val[j - 1] > v:
            val[j] = val[j - 1]
            idx[j] = idx[j - 1]
            j -= 1
        val[j] = v
        idx[j] = m
    return idx


@numba.njit(cache=True)
def choose(code, load, k, u1, u2, rr):
    n = len(load)
    if code == RR:
        return rr % n
    if code == RANDOM:
        return min(int(u1 * n), n - 1)
    if code == LL:
        return np.argmin(load)
    if code == LLR:
        top = k_smallest(load, k)
        return top[min(int(u1 * len(top)), len(top) - 1)]
    # power of two choices, drawn without replacement
    if n == 1:
        return 0
    a = min(int(u1 * n), n - 1)
    b = min(int(u2 * (n - 1)), n - 2)
    if b >= a:
        b += 1
    return b if load[b] < load[a] else a


class Picker:
    """Stateful front end: holds the RR pointer and draws the uniforms."""

    def __init__(self, policy: PolicyKind, rng: np.random.Generator):
        self.policy = policy
        self.rng = rng
        self.rr = 0

    def pick(self, load: np.ndarray) -> int:
        if len(load) == 0:
            raise EmptyCluster("no MPs to choose from")
        u1, u2 = self.rng.random(2)
        m = int(choose(self.policy.code, np.asarray(load, dtype=float), self.policy.k, u1, u2, self.rr))
        if self.policy.code == RR:
            self.rr += 1
        return m


def pick_mp(policy: PolicyKind, load: np.ndarray, rng: np.random.Generator, rr: int = 0) -> int:
    """One decision over ``load`` (current CPU for baselines, expected peak for Tetris)."""
    if len(load) == 0:
        raise EmptyCluster("no MPs to choose from")
    u1, u2 = rng.random(2)
    return int(choose(policy.code, np.asarray(load, dtype=float), policy.k, u1, u2, rr))


def pick_mp_tetris(cluster, slot: int, estimate_ref: float, policy: PolicyKind,
                   rng: np.random.Generator) -> int:
    """Place a call by LLR over expected peaks and book its estimate on the chosen MP.

    ``estimate_ref`` is the call's predicted peak on the reference SKU
    (from ``predict_recurring`` or the non-recurring estimator).
    """
    m = pick_mp(policy, cluster.expected_peak_pct(), rng)
    cid = cluster.call_id(slot)
    cluster.update_call(cid, pred_ref=estimate_ref)
    cluster.assign_call(cid, m)
    return m
