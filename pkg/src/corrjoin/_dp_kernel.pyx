# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled partition DP; same contract as corrjoin._dp_py.build_table."""

import numpy as np
cimport numpy as cnp

cdef long long UNREACHABLE = 2 ** 62


cdef inline long long cdiv_up(long long a, long long b) nogil:
    return -((-a) // b) if a < 0 else (a + b - 1) // b


cdef inline long long floor_div(long long a, long long b) nogil:
    cdef long long q = a // b
    if (a % b != 0) and ((a < 0) != (b < 0)):
        q -= 1
    return q


def build_table(prefix, long long n, long long m, long long c_R, bint weakly=True, bint divisible=True):
    cdef cnp.int64_t[:] pre = np.ascontiguousarray(prefix, dtype=np.int64)
    cdef long long first = n % c_R if divisible else 0
    cdef long long step = c_R if divisible else 1
    pos_arr = np.arange(first, n + 1, step, dtype=np.int64)
    cdef cnp.int64_t[:] pos = pos_arr
    cdef Py_ssize_t T = pos_arr.shape[0]
    cost_arr = np.full((T, m + 1), UNREACHABLE, dtype=np.int64)
    last_arr = np.zeros((T, m + 1), dtype=np.int64)
    cdef cnp.int64_t[:, :] cost = cost_arr
    cdef cnp.int64_t[:, :] last = last_arr
    cdef Py_ssize_t t, a, b, k, best_k
    cdef long long j, i, lo, hi, pk, cand, best, psum_t, prev
    if T == 0:
        return cost_arr, last_arr, pos_arr
    with nogil:
        for t in range(T):
            cost[t, 1] = pre[pos[t]] * cdiv_up(pos[t], c_R)
        for j in range(2, m + 1):
            cost[0, j] = cost[0, 1]
        for j in range(2, m + 1):
            for t in range(1, T):
                i = pos[t]
                if weakly:
                    lo = 0
                    if i > c_R:
                        lo = cdiv_up((i - c_R) * (j - 1), j)
                    if j >= m:
                        hi = i - 1
                    else:
                        hi = i - floor_div(n - i - 1, m - j) - 1 + c_R
                        if hi < 1:
                            hi = 1
                    if hi > i - 1:
                        hi = i - 1
                    # translate record bounds into grid indices
                    a = cdiv_up(lo - first, step) if lo > first else 0
                    b = floor_div(hi - first, step) + 1
                    if b > t:
                        b = t
                    if a >= b:
                        continue
                else:
                    a = 0
                    b = t
                best = UNREACHABLE
                best_k = 0
                psum_t = pre[i]
                for k in range(a, b):
                    prev = cost[k, j - 1]
                    if prev >= UNREACHABLE:
                        continue
                    pk = pos[k]
                    cand = prev + (psum_t - pre[pk]) * cdiv_up(i - pk, c_R)
                    if cand < best:
                        best = cand
                        best_k = k
                if best < UNREACHABLE:
                    cost[t, j] = best
                    last[t, j] = best_k
    return cost_arr, last_arr, pos_arr
