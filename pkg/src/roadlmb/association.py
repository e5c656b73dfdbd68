"""Track-to-measurement association hypotheses for the LMB update.

All routines take a log-score matrix ``log_eta`` of shape (n_tracks, m + 1):
column 0 scores "no measurement" for a track, column j + 1 scores
assignment to measurement j, and ``-inf`` marks forbidden pairs. A
hypothesis assigns each track one column, with measurement columns used
at most once; its log weight is the sum of the chosen entries.
"""
from __future__ import annotations

import heapq
import itertools
import math

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

_BIG = 1e9
ENUMERATION_LIMIT = 20000


def gate_groups(gated: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a boolean (tracks x measurements) gating matrix into connected groups.

    Every track appears in exactly one group; measurements gated to no track
    appear in none.
    """
    n, m = gated.shape
    g = gated.astype(np.int64)
    # transitive closure of the track-track "share a measurement" relation
    reach = (g @ g.T > 0) | np.eye(n, dtype=bool)
    while True:
        nxt = (reach.astype(np.int64) @ reach.astype(np.int64)) > 0
        if (nxt == reach).all():
            break
        reach = nxt
    groups = []
    done = np.zeros(n, dtype=bool)
    for i in range(n):
        if done[i]:
            continue
        tracks = np.flatnonzero(reach[i])
        done[tracks] = True
        meas = np.flatnonzero(gated[tracks].any(axis=0))
        groups.append((tracks, meas))
    return groups


def enumerate_hypotheses(log_eta: np.ndarray) -> list[tuple[tuple[int, ...], float]]:
    """Every admissible assignment with its log weight (depth-first)."""
    n = log_eta.shape[0]
    options = [[j for j in range(log_eta.shape[1]) if np.isfinite(log_eta[i, j])] for i in range(n)]
    out = []
    assign = [0] * n
    used: set[int] = set()

    def visit(i: int, acc: float):
        if i == n:
            out.append((tuple(assign), acc))
            return
        for j in options[i]:
            if j and j in used:
                continue
            assign[i] = j
            if j:
                used.add(j)
            visit(i + 1, acc + log_eta[i, j])
            if j:
                used.discard(j)

    visit(0, 0.0)
    return out


def murty_k_best(log_eta: np.ndarray, k: int) -> list[tuple[tuple[int, ...], float]]:
    """The ``k`` highest-weight assignments via Murty's partitioning."""
    n, mp1 = log_eta.shape
    m = mp1 - 1
    C = np.full((n, m + n), _BIG)
    meas = log_eta[:, 1:]
    C[:, :m] = np.where(np.isfinite(meas), -meas, _BIG)
    miss = log_eta[:, 0]
    C[np.arange(n), m + np.arange(n)] = np.where(np.isfinite(miss), -miss, _BIG)

    def solve(Cm):
        r, c = linear_sum_assignment(Cm)
        vals = Cm[r, c]
        if np.any(vals >= _BIG / 2):
            return None
        return float(vals.sum()), c

    first = solve(C)
    if first is None:
        return []
    counter = itertools.count()
    heap = [(first[0], next(counter), first[1], C)]
    results = []
    while heap and len(results) < k:
        cost, _, sol, Cn = heapq.heappop(heap)
        results.append((tuple(int(j + 1) if j < m else 0 for j in sol), -cost))
        Cp = Cn.copy()
        for i in range(n):
            Cq = Cp.copy()
            Cq[i, sol[i]] = _BIG
            s = solve(Cq)
            if s is not None:
                heapq.heappush(heap, (s[0], next(counter), s[1], Cq))
            keep = Cp[i, sol[i]]
            Cp[i, :] = _BIG
            Cp[:, sol[i]] = _BIG
            Cp[i, sol[i]] = keep
    return results


def ranked_hypotheses(log_eta: np.ndarray, cap: int = 100) -> list[tuple[tuple[int, ...], float]]:
    """Up to ``cap`` best hypotheses, by exhaustive enumeration when small enough."""
    count = math.prod(int(np.isfinite(row).sum()) for row in log_eta)
    if count <= ENUMERATION_LIMIT:
        hyps = enumerate_hypotheses(log_eta)
        hyps.sort(key=lambda h: -h[1])
        return hyps[:cap]
    return murty_k_best(log_eta, cap)


def association_marginals(log_eta: np.ndarray, cap: int = 100) -> np.ndarray:
    """Posterior probability of each (track, column) pairing over the ranked hypotheses."""
    n, mp1 = log_eta.shape
    hyps = ranked_hypotheses(log_eta, cap)
    if not hyps:
        raise ValueError("no admissible association hypothesis")
    logw = np.array([h[1] for h in hyps])
    w = np.exp(logw - logsumexp(logw))
    marg = np.zeros((n, mp1))
    rows = np.arange(n)
    for (assign, _), wi in zip(hyps, w):
        marg[rows, list(assign)] += wi
    return marg
