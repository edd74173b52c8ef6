# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled tree-growing kernels.

Must stay arithmetically identical to ``_split_py``: residuals accumulate
sequentially in presorted order, the gain expression and its parenthesisation
match, and ties keep the first maximum, so both backends grow identical
trees.
"""


def best_split(int[:, ::1] order, double[:, ::1] X, double[::1] g,
               Py_ssize_t min_leaf):
    """Best variance-reduction split for one node (same contract as the
    NumPy fallback: (p, m) presorted row table in, (feature, pos, gain,
    lo, hi) out)."""
    cdef Py_ssize_t p = order.shape[0]
    cdef Py_ssize_t m = order.shape[1]
    cdef Py_ssize_t j, i, pos, row
    cdef double total, run, rsum, gain, xv, x_next
    cdef double best_gain = 0.0
    cdef double best_lo = 0.0, best_hi = 0.0
    cdef Py_ssize_t best_j = -1
    cdef Py_ssize_t best_pos = -1

    if m < 2 * min_leaf or m < 2:
        return -1, -1, 0.0, 0.0, 0.0

    for j in range(p):
        total = 0.0
        for i in range(m):
            total += g[order[j, i]]
        run = 0.0
        for i in range(m - 1):
            row = order[j, i]
            run += g[row]
            pos = i + 1
            if pos < min_leaf or (m - pos) < min_leaf:
                continue
            xv = X[row, j]
            x_next = X[order[j, i + 1], j]
            if x_next <= xv:
                continue
            rsum = total - run
            gain = run * run / pos + rsum * rsum / (m - pos) - total * total / m
            if gain > best_gain:
                best_gain = gain
                best_j = j
                best_pos = pos
                best_lo = xv
                best_hi = x_next
    if best_j < 0:
        return -1, -1, 0.0, 0.0, 0.0
    return best_j, best_pos, best_gain, best_lo, best_hi


def apply_tree(int[::1] feature, double[::1] threshold, int[::1] left,
               int[::1] right, double[::1] value, double[:, ::1] X,
               double[::1] out):
    """Route every row of X to a leaf and write the leaf values into out."""
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t r
    cdef int node
    for r in range(n):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = value[node]
    return out
