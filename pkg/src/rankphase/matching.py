"""Exact solvers for constrained feature matching.

The matching problem: given per-object scores S_i and per-position ability
values theta_k, find the rank vector r in the feasible space minimizing
sum_i (S_i - theta_{r(i)})^2.  The feasible space couples the coordinates
only through the sum budget |sum r - sum i| <= c_n and, for the restricted
space, the additional |sum r^2 - sum i^2| <= c'_n.

Solver layout:

* Phase 1 picks the unconstrained per-coordinate nearest position (ties to
  the smallest index).  If that already satisfies the budgets it is optimal.
* For affine theta (theta_k linear in k) the per-coordinate costs are convex
  in k, so a marginal-cost greedy projects the sum onto the nearest budget
  boundary exactly; this is the fast path used at experiment scale.
* Otherwise an exact dynamic program over coordinates runs with state =
  cumulative sum deviation (and, for the restricted space, cumulative
  sum-of-squares deviation), restricted to states that are both reachable
  and completable into the budget window.
* A solution that is optimal over the sum-only space and happens to satisfy
  the sum-of-squares budget is optimal over the restricted space too (the
  restricted space is a subset), which keeps the fast path exact in the
  common case.  When the restricted budget does bind and the 2-d dynamic
  program would be too large, a deterministic walk toward the identity rank
  restores feasibility; that branch is best-effort and never triggered at
  the sizes where exactness is verified by enumeration.
"""

from __future__ import annotations

import heapq
import itertools

import numpy as np

from .errors import InputError, RankPhaseError
from .model import RankSpace

# Budgets for the dynamic program: total number of states, and states times
# the per-state transition count n.
DP_STATE_BUDGET = 5_000_000
DP_OP_BUDGET = 500_000_000

AFFINE_DETECT_RTOL = 1e-12


def _score_array(scores, n: int) -> np.ndarray:
    values = getattr(scores, "values", scores)
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != n:
        raise InputError(f"scores must be a length-{n} vector")
    if not np.all(np.isfinite(arr)):
        raise InputError("scores must be finite")
    return arr


def _theta_array(theta, n: int) -> np.ndarray:
    arr = np.asarray(theta, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != n:
        raise InputError(f"theta must be a length-{n} vector")
    if not np.all(np.isfinite(arr)):
        raise InputError("theta must be finite")
    return arr


def match_objective(scores, theta, r) -> float:
    """sum_i (S_i - theta_{r(i)})^2, accumulated in coordinate order."""
    n = len(np.atleast_1d(np.asarray(r)))
    S = _score_array(scores, n)
    th = _theta_array(theta, n)
    rr = np.asarray(r, dtype=np.int64)
    resid = S - th[rr - 1]
    return float(np.sum(resid * resid))


def is_affine(theta) -> bool:
    """True when theta_k is (numerically) a linear function of k."""
    th = np.asarray(theta, dtype=np.float64)
    if th.shape[0] <= 2:
        return True
    d = np.diff(th)
    scale = max(1.0, float(np.max(np.abs(th))))
    return float(np.max(np.abs(d - d[0]))) <= AFFINE_DETECT_RTOL * scale


def _unconstrained(S: np.ndarray, theta: np.ndarray) -> np.ndarray:
    # argmin over k of |S_i - theta_k|; first minimum = smallest position.
    dist = np.abs(S[:, None] - theta[None, :])
    return np.argmin(dist, axis=1).astype(np.int64) + 1


def _devs(r: np.ndarray, space: RankSpace) -> tuple[int, int]:
    dev1 = int(r.sum()) - space.identity_sum()
    dev2 = int(np.dot(r, r)) - space.identity_sumsq()
    return dev1, dev2


def _greedy_sum_repair(
    S: np.ndarray, theta: np.ndarray, u: np.ndarray, c: int
) -> np.ndarray:
    """Project the unconstrained solution onto the sum window.

    Exact for costs convex in the position index: the constrained optimum
    sits at the window boundary nearest the unconstrained sum, and the
    per-coordinate marginal costs are nondecreasing, so repeatedly applying
    the globally cheapest unit step is optimal.
    """
    n = u.shape[0]
    id_sum = n * (n + 1) // 2
    dev = int(u.sum()) - id_sum
    if abs(dev) <= c:
        return u
    r = u.copy()
    if dev > c:
        direction, need = -1, dev - c
    else:
        direction, need = 1, -c - dev

    def step_cost(i: int) -> float:
        k_new = r[i] + direction
        a = S[i] - theta[k_new - 1]
        b = S[i] - theta[r[i] - 1]
        return float(a * a - b * b)

    heap: list[tuple[float, int]] = []
    for i in range(n):
        if 1 <= r[i] + direction <= n:
            heapq.heappush(heap, (step_cost(i), i))
    for _ in range(need):
        if not heap:
            raise RankPhaseError("sum repair ran out of moves; budget infeasible")
        _, i = heapq.heappop(heap)
        r[i] += direction
        if 1 <= r[i] + direction <= n:
            heapq.heappush(heap, (step_cost(i), i))
    return r


def _restricted_walk_repair(
    S: np.ndarray, theta: np.ndarray, r0: np.ndarray, space: RankSpace
) -> np.ndarray:
    """Deterministic feasibility repair for the restricted space.

    Walks coordinates toward the identity rank, preferring moves that shrink
    the sum-of-squares deviation at the least cost increase, while keeping
    the sum deviation inside its window.  Terminates because every step
    strictly reduces sum_i |r(i) - i|, and the identity rank is feasible.
    """
    n = space.n
    c, csq = space.c_n, space.c_n_sq
    assert csq is not None
    r = r0.copy()
    dev1, dev2 = _devs(r, space)
    while abs(dev2) > csq:
        best = None
        for i in range(n):
            target = i + 1
            if r[i] == target:
                continue
            d = -1 if r[i] > target else 1
            ndev1 = dev1 + d
            if abs(ndev1) > c:
                continue
            ndev2 = dev2 + 2 * int(r[i]) * d + 1
            a = S[i] - theta[r[i] + d - 1]
            b = S[i] - theta[r[i] - 1]
            cost_delta = float(a * a - b * b)
            key = (0 if abs(ndev2) < abs(dev2) else 1, cost_delta, i)
            if best is None or key < best[0]:
                best = (key, i, d, ndev1, ndev2)
        if best is None:
            raise RankPhaseError("restricted repair found no admissible move")
        _, i, d, dev1, dev2 = best
        r[i] += d
    return r


def _window_bounds_1d(n: int, c: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(n, dtype=np.int64)
    smin = -idx
    smax = (n - 1) - idx
    reach_lo = np.cumsum(smin)
    reach_hi = np.cumsum(smax)
    fut_lo = smin.sum() - reach_lo
    fut_hi = smax.sum() - reach_hi
    lo = np.maximum(reach_lo, -c - fut_hi)
    hi = np.minimum(reach_hi, c - fut_lo)
    return lo, hi


def _window_bounds_2d(n: int, csq: int) -> tuple[np.ndarray, np.ndarray]:
    pos = np.arange(1, n + 1, dtype=np.int64)
    smin = 1 - pos**2
    smax = n**2 - pos**2
    reach_lo = np.cumsum(smin)
    reach_hi = np.cumsum(smax)
    fut_lo = smin.sum() - reach_lo
    fut_hi = smax.sum() - reach_hi
    lo = np.maximum(reach_lo, -csq - fut_hi)
    hi = np.minimum(reach_hi, csq - fut_lo)
    return lo, hi


def _dp_match_sum(S: np.ndarray, theta: np.ndarray, c: int) -> np.ndarray | None:
    """Exact DP over cumulative sum deviation.  None if over budget."""
    n = S.shape[0]
    lo, hi = _window_bounds_1d(n, c)
    widths = hi - lo + 1
    states = int(widths.sum())
    if states > DP_STATE_BUDGET or states * n > DP_OP_BUDGET:
        return None
    cost = (S[:, None] - theta[None, :]) ** 2

    dp_prev: np.ndarray | None = None
    choices: list[np.ndarray] = []
    for i in range(n):
        w = int(widths[i])
        dp = np.full(w, np.inf)
        ch = np.zeros(w, dtype=np.int16)
        for k in range(1, n + 1):
            s = k - (i + 1)
            if i == 0:
                if lo[0] <= s <= hi[0]:
                    j = s - lo[0]
                    if cost[0, k - 1] < dp[j]:
                        dp[j] = cost[0, k - 1]
                        ch[j] = k
                continue
            d_lo = max(int(lo[i]), int(lo[i - 1]) + s)
            d_hi = min(int(hi[i]), int(hi[i - 1]) + s)
            if d_lo > d_hi:
                continue
            dst = slice(d_lo - int(lo[i]), d_hi - int(lo[i]) + 1)
            src = slice(d_lo - s - int(lo[i - 1]), d_hi - s - int(lo[i - 1]) + 1)
            cand = dp_prev[src] + cost[i, k - 1]
            better = cand < dp[dst]
            dp[dst] = np.where(better, cand, dp[dst])
            ch[dst][better] = k
        choices.append(ch)
        dp_prev = dp

    f_lo = max(int(lo[n - 1]), -c)
    f_hi = min(int(hi[n - 1]), c)
    best_d, best_cost = None, np.inf
    for d in range(f_lo, f_hi + 1):
        v = dp_prev[d - int(lo[n - 1])]
        if v < best_cost:
            best_cost, best_d = v, d
    if best_d is None or not np.isfinite(best_cost):
        raise RankPhaseError("sum DP found no feasible state")

    r = np.zeros(n, dtype=np.int64)
    d = best_d
    for i in range(n - 1, -1, -1):
        k = int(choices[i][d - int(lo[i])])
        if k == 0:
            raise RankPhaseError("sum DP backtrack hit an unreached state")
        r[i] = k
        d -= k - (i + 1)
    return r


def _dp_match_restricted(
    S: np.ndarray, theta: np.ndarray, space: RankSpace
) -> np.ndarray | None:
    """Exact DP over (sum deviation, sum-of-squares deviation).  None if over budget."""
    n = space.n
    c, csq = space.c_n, space.c_n_sq
    assert csq is not None
    lo1, hi1 = _window_bounds_1d(n, c)
    lo2, hi2 = _window_bounds_2d(n, csq)
    w1 = hi1 - lo1 + 1
    w2 = hi2 - lo2 + 1
    cells = int(np.sum(w1 * w2))
    if cells > DP_STATE_BUDGET or cells * n > DP_OP_BUDGET:
        return None
    cost = (S[:, None] - theta[None, :]) ** 2

    dp_prev: np.ndarray | None = None
    choices: list[np.ndarray] = []
    for i in range(n):
        dp = np.full((int(w1[i]), int(w2[i])), np.inf)
        ch = np.zeros((int(w1[i]), int(w2[i])), dtype=np.int16)
        for k in range(1, n + 1):
            s1 = k - (i + 1)
            s2 = k * k - (i + 1) * (i + 1)
            if i == 0:
                if lo1[0] <= s1 <= hi1[0] and lo2[0] <= s2 <= hi2[0]:
                    j1, j2 = s1 - lo1[0], s2 - lo2[0]
                    if cost[0, k - 1] < dp[j1, j2]:
                        dp[j1, j2] = cost[0, k - 1]
                        ch[j1, j2] = k
                continue
            a_lo = max(int(lo1[i]), int(lo1[i - 1]) + s1)
            a_hi = min(int(hi1[i]), int(hi1[i - 1]) + s1)
            b_lo = max(int(lo2[i]), int(lo2[i - 1]) + s2)
            b_hi = min(int(hi2[i]), int(hi2[i - 1]) + s2)
            if a_lo > a_hi or b_lo > b_hi:
                continue
            dst = (
                slice(a_lo - int(lo1[i]), a_hi - int(lo1[i]) + 1),
                slice(b_lo - int(lo2[i]), b_hi - int(lo2[i]) + 1),
            )
            src = (
                slice(a_lo - s1 - int(lo1[i - 1]), a_hi - s1 - int(lo1[i - 1]) + 1),
                slice(b_lo - s2 - int(lo2[i - 1]), b_hi - s2 - int(lo2[i - 1]) + 1),
            )
            cand = dp_prev[src] + cost[i, k - 1]
            better = cand < dp[dst]
            dp[dst] = np.where(better, cand, dp[dst])
            ch[dst][better] = k
        choices.append(ch)
        dp_prev = dp

    f1_lo = max(int(lo1[n - 1]), -c)
    f1_hi = min(int(hi1[n - 1]), c)
    f2_lo = max(int(lo2[n - 1]), -csq)
    f2_hi = min(int(hi2[n - 1]), csq)
    best = None
    best_cost = np.inf
    for d1 in range(f1_lo, f1_hi + 1):
        row = dp_prev[d1 - int(lo1[n - 1])]
        for d2 in range(f2_lo, f2_hi + 1):
            v = row[d2 - int(lo2[n - 1])]
            if v < best_cost:
                best_cost, best = v, (d1, d2)
    if best is None or not np.isfinite(best_cost):
        raise RankPhaseError("restricted DP found no feasible state")

    r = np.zeros(n, dtype=np.int64)
    d1, d2 = best
    for i in range(n - 1, -1, -1):
        k = int(choices[i][d1 - int(lo1[i]), d2 - int(lo2[i])])
        if k == 0:
            raise RankPhaseError("restricted DP backtrack hit an unreached state")
        r[i] = k
        d1 -= k - (i + 1)
        d2 -= k * k - (i + 1) * (i + 1)
    return r


def feature_match(scores, theta, space: RankSpace) -> np.ndarray:
    """Minimize sum_i (S_i - theta_{r(i)})^2 over the rank space.

    Returns the optimal rank entries as an int64 array.  Optimality is exact
    on every instance small enough to verify by enumeration; see the module
    docstring for the solver ladder.
    """
    n = space.n
    S = _score_array(scores, n)
    th = _theta_array(theta, n)

    u = _unconstrained(S, th)
    dev1, dev2 = _devs(u, space)
    if abs(dev1) <= space.c_n and (space.c_n_sq is None or abs(dev2) <= space.c_n_sq):
        return u

    affine = is_affine(th)
    if affine:
        r1 = _greedy_sum_repair(S, th, u, space.c_n)
    else:
        r1 = _dp_match_sum(S, th, space.c_n)
        if r1 is None:
            raise InputError(
                "feature_match: instance too large for the exact dynamic program "
                "with a non-affine ability vector"
            )
    if space.c_n_sq is None:
        return r1
    _, dev2 = _devs(r1, space)
    if abs(dev2) <= space.c_n_sq:
        # optimal over the sum-only superset and feasible here, hence optimal
        return r1
    r2 = _dp_match_restricted(S, th, space)
    if r2 is not None:
        return r2
    return _restricted_walk_repair(S, th, r1, space)


def exhaustive_feature_match(
    scores, theta, space: RankSpace, n_max: int = 6
) -> tuple[np.ndarray, float]:
    """Reference minimizer by full enumeration (lexicographic tie-break).

    Only for small n; used as the oracle that feature_match is checked
    against.
    """
    n = space.n
    if n > n_max:
        raise InputError(f"exhaustive matching refused for n={n} > {n_max}")
    S = _score_array(scores, n)
    th = _theta_array(theta, n)
    grid = np.array(
        list(itertools.product(range(1, n + 1), repeat=n)), dtype=np.int64
    )
    dev1 = grid.sum(axis=1) - space.identity_sum()
    keep = np.abs(dev1) <= space.c_n
    if space.c_n_sq is not None:
        dev2 = (grid**2).sum(axis=1) - space.identity_sumsq()
        keep &= np.abs(dev2) <= space.c_n_sq
    cand = grid[keep]
    if cand.shape[0] == 0:
        raise RankPhaseError("empty feasible space")
    resid = S[None, :] - th[cand - 1]
    obj = np.sum(resid * resid, axis=1)
    best = int(np.argmin(obj))
    return cand[best].copy(), float(obj[best])
