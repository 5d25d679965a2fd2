"""Pure-Python (numpy) tree kernel.

Same contract and the same floating-point operation order as the compiled
``_tree_kernel`` so that either backend yields bit-identical trees.
"""

import numpy as np


def build_tree(X, y, order, max_depth, min_samples_leaf):
    n, p = X.shape
    feature, threshold, left, right, nsamp, value = [], [], [], [], [], []
    leaf_of = np.zeros(n, dtype=np.int32)

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        nsamp.append(0)
        value.append(0.0)
        return len(feature) - 1

    new_node()
    stack = [(0, n, 0, 0)]
    while stack:
        start, end, depth, node = stack.pop()
        m = end - start
        nsamp[node] = m

        best_f, best_i, best_impr = -1, -1, 0.0
        if depth < max_depth and m >= 2 * min_samples_leaf:
            ys0 = y[order[0, start:end]]
            if not np.all(ys0 == ys0[0]):
                sumsq = np.cumsum(ys0 * ys0)[-1]
                nl = np.arange(1, m, dtype=np.float64)
                nr = m - nl
                size_ok = (nl >= min_samples_leaf) & (nr >= min_samples_leaf)
                imprs = []
                for f in range(p):
                    seg = order[f, start:end]
                    ys = y[seg]
                    xs = X[seg, f]
                    cs = np.cumsum(ys)
                    total = cs[-1]
                    sl = cs[:-1]
                    sr = total - sl
                    gain = sl * sl / nl + sr * sr / nr
                    impr = gain - total * total / float(m)
                    valid = size_ok & (xs[:-1] < xs[1:])
                    imprs.append(np.where(valid, impr, -np.inf))
                # lowest (feature, threshold) within rounding of the best
                best_impr = max(float(v.max()) if v.size else -np.inf for v in imprs)
                floor = 1e-13 * sumsq
                if best_impr > floor:
                    cut = best_impr - 1e-12 * sumsq
                    for f, v in enumerate(imprs):
                        hit = np.flatnonzero((v >= cut) & (v > floor))
                        if hit.size:
                            best_f, best_i = f, start + int(hit[0])
                            break

        if best_f < 0:
            seg = order[0, start:end]
            leaf_of[seg] = node
            # cumsum adds sequentially, matching the compiled loop
            value[node] = float(np.cumsum(y[seg])[-1] / float(m))
            continue

        a = X[order[best_f, best_i], best_f]
        b = X[order[best_f, best_i + 1], best_f]
        thr = 0.5 * a + 0.5 * b
        if not thr > a:
            thr = b
        feature[node] = best_f
        threshold[node] = float(thr)

        go_left = np.zeros(n, dtype=bool)
        go_left[order[best_f, start:best_i + 1]] = True
        for f in range(p):
            seg = order[f, start:end]
            mask = go_left[seg]
            order[f, start:end] = np.concatenate((seg[mask], seg[~mask]))

        nl_count = best_i - start + 1
        lid = new_node()
        rid = new_node()
        left[node] = lid
        right[node] = rid
        stack.append((start + nl_count, end, depth + 1, rid))
        stack.append((start, start + nl_count, depth + 1, lid))

    return (
        np.asarray(feature, dtype=np.int32),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int32),
        np.asarray(right, dtype=np.int32),
        np.asarray(nsamp, dtype=np.int64),
        np.asarray(value, dtype=np.float64),
        leaf_of,
    )


def apply_tree(X, feature, threshold, left, right):
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int32)
    active = feature[node] >= 0
    while active.any():
        rows = np.nonzero(active)[0]
        cur = node[rows]
        go = X[rows, feature[cur]] < threshold[cur]
        node[rows] = np.where(go, left[cur], right[cur])
        active = feature[node] >= 0
    return node
