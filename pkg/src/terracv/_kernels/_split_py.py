"""NumPy implementations of the tree-growing hot loops.

Arithmetic is arranged to mirror the compiled kernels operation for
operation (sequential accumulation in presorted order, identical gain
expression, first-maximum tie handling), so either backend grows the same
trees bit for bit.
"""

import numpy as np

_NO_SPLIT = (-1, -1, 0.0, 0.0, 0.0)


def best_split(order, X, g, min_leaf):
    """Best variance-reduction split for one node.

    ``order`` is the node's (p, m) table: row j lists the node's sample rows
    in ascending order of feature j.  Returns ``(feature, pos, gain, lo, hi)``
    where ``pos`` is the number of rows sent left and (lo, hi) bracket the
    threshold, or feature == -1 when no admissible split has positive gain.
    Ties resolve to the lowest feature index, then the lowest threshold.
    """
    p, m = order.shape
    if m < 2 * min_leaf or m < 2:
        return _NO_SPLIT

    xs = np.take_along_axis(X.T, order, axis=1)  # (p, m)
    gs = g[order]

    cs = np.cumsum(gs, axis=1)
    total = cs[:, -1:]
    sl = cs[:, :-1]
    nl = np.arange(1, m, dtype=np.float64)
    nr = np.float64(m) - nl
    sr = total - sl
    gain = sl * sl / nl + sr * sr / nr - total * total / m
    valid = (nl >= min_leaf) & (nr >= min_leaf) & (xs[:, 1:] > xs[:, :-1])
    gain = np.where(valid, gain, -np.inf)

    pos_per_row = np.argmax(gain, axis=1)
    gain_per_row = gain[np.arange(p), pos_per_row]
    best_j, best_pos, best_gain = -1, -1, 0.0
    for j in range(p):
        if gain_per_row[j] > best_gain:
            best_gain = float(gain_per_row[j])
            best_j = j
            best_pos = int(pos_per_row[j]) + 1
    if best_j < 0:
        return _NO_SPLIT
    lo = float(xs[best_j, best_pos - 1])
    hi = float(xs[best_j, best_pos])
    return best_j, best_pos, best_gain, lo, hi


def apply_tree(feature, threshold, left, right, value, X, out):
    """Route every row of X to a leaf and write the leaf values into out.

    Internal nodes have ``feature >= 0``; routing is ``x <= threshold`` goes
    left.  Works level by level with boolean masks instead of per-row loops.
    """
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int32)
    rows = np.arange(n)
    active = feature[node] >= 0
    while active.any():
        r = rows[active]
        cur = node[active]
        f = feature[cur]
        go_left = X[r, f] <= threshold[cur]
        node[active] = np.where(go_left, left[cur], right[cur])
        active = feature[node] >= 0
    out[:] = value[node]
    return out
