"""Pure-Python partition DP, used when the compiled kernel is unavailable."""

import numpy as np

UNREACHABLE = np.int64(2 ** 62)


def grid_positions(n, c_R, divisible):
    """Candidate partition boundaries (record counts) the DP may end a prefix at."""
    if not divisible:
        return np.arange(n + 1, dtype=np.int64)
    first = n % c_R
    return np.arange(first, n + 1, c_R, dtype=np.int64)


def k_bounds(i, j, n, m, c_R):
    """Admissible end of the previous partition when partition j ends at record i."""
    lo = 0
    if i > c_R:
        lo = -(-(i - c_R) * (j - 1) // j)
    if j >= m:
        hi = i - 1
    else:
        hi = max(i - (n - i - 1) // (m - j) - 1 + c_R, 1)
    return lo, min(hi, i - 1)


def build_table(prefix, n, m, c_R, weakly=True, divisible=True):
    prefix = np.asarray(prefix, dtype=np.int64)
    pos = grid_positions(n, c_R, divisible)
    T = len(pos)
    cost = np.full((T, m + 1), UNREACHABLE, dtype=np.int64)
    last = np.zeros((T, m + 1), dtype=np.int64)
    psum = prefix[pos]
    first_cost = psum * (-(-pos // c_R))
    cost[:, 1] = first_cost
    if T == 0:
        return cost, last, pos
    # the seed prefix (n mod c_R records, or nothing) sits in partition 1 for every j
    cost[0, 1:] = first_cost[0]
    for j in range(2, m + 1):
        prev = cost[:, j - 1]
        for t in range(1, T):
            i = pos[t]
            if weakly:
                lo, hi = k_bounds(i, j, n, m, c_R)
                a = np.searchsorted(pos, lo, side="left")
                b = np.searchsorted(pos, hi, side="right")
                b = min(b, t)
                if a >= b:
                    continue
            else:
                a, b = 0, t
            ks = pos[a:b]
            cand = prev[a:b] + (psum[t] - psum[a:b]) * (-(-(i - ks) // c_R))
            cand = np.where(prev[a:b] >= UNREACHABLE, UNREACHABLE, cand)
            best = int(np.argmin(cand))
            if cand[best] < UNREACHABLE:
                cost[t, j] = cand[best]
                last[t, j] = a + best
    return cost, last, pos
