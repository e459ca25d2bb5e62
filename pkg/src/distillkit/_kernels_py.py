"""Pure NumPy fallback for the compiled kernels.

Mirrors ``_kernels.pyx`` operation by operation: candidate orderings,
tie-breaks and floating-point accumulation orders match (``np.cumsum`` and
``np.bincount`` accumulate sequentially, like the C loops), so tree fitting
and cyclic boosting produce bit-identical results on either backend.  The
expression VM may differ from the compiled one in the last ulp of ``sin`` /
``tanh`` (SIMD libm vs scalar libm).
"""

import numpy as np

GAIN_EPS_FRAC = 1e-12

OP_VAR = 0
OP_CONST = 1
OP_ADD = 2
OP_SUB = 3
OP_MUL = 4
OP_SIN = 5
OP_TANH = 6
OP_SQUARE = 7
OP_CUBE = 8


# ---------------------------------------------------------------------------
# regression tree fitting
# ---------------------------------------------------------------------------

def fit_tree(X_t, y, sort_idx_t, max_depth, min_samples_leaf):
    """See the compiled kernel; depth-first preorder node arrays."""
    d, n = X_t.shape
    feature, threshold, left, right = [], [], [], []
    value, node_sse, n_samples, gain = [], [], [], []

    total = float(np.cumsum(y)[-1])
    tsq = float(np.cumsum(y * y)[-1])

    # stack entries: (node, depth, lists (d, nn), total, tsq); pop order and
    # child numbering replicate the compiled kernel's preorder layout
    stack = [(0, 0, sort_idx_t, total, tsq)]
    n_nodes = 1
    _append_blank = lambda: (feature.append(-1), threshold.append(0.0),
                             left.append(-1), right.append(-1),
                             value.append(0.0), node_sse.append(0.0),
                             n_samples.append(0), gain.append(0.0))
    _append_blank()

    while stack:
        node, depth, lists, total, tsq = stack.pop()
        nn = lists.shape[1]
        base = total * total / nn
        sse = tsq - base
        value[node] = total / nn
        node_sse[node] = sse
        n_samples[node] = nn

        if depth >= max_depth or nn < 2 * min_samples_leaf:
            continue
        yy0 = y[lists[0]]
        if not (yy0 != yy0[0]).any():
            continue

        best_f = -1
        best_pos = -1
        best_score = -np.inf
        best_thr = 0.0
        pos = np.arange(1, nn, dtype=np.float64)
        ok_size = (np.arange(1, nn) >= min_samples_leaf) & \
                  (nn - np.arange(1, nn) >= min_samples_leaf)
        for j in range(d):
            rows = lists[j]
            vv = X_t[j, rows]
            distinct = vv[1:] > vv[:-1]
            valid = ok_size & distinct
            if not valid.any():
                continue
            lsum = np.cumsum(y[rows])[:-1]
            score = lsum * lsum / pos + \
                (total - lsum) * (total - lsum) / (nn - pos)
            score[~valid | np.isnan(score)] = -np.inf
            k = int(np.argmax(score))
            if score[k] > best_score:
                best_f = j
                best_pos = k + 1
                best_score = float(score[k])
                best_thr = (vv[k] + vv[k + 1]) / 2.0

        if best_f < 0 or best_score - base <= GAIN_EPS_FRAC * sse:
            continue

        feature[node] = best_f
        threshold[node] = best_thr
        gain[node] = best_score - base

        wrows = lists[best_f]
        yw = y[wrows]
        lsum = float(np.cumsum(yw)[best_pos - 1])
        lsq = float(np.cumsum(yw * yw)[best_pos - 1])

        in_left = np.zeros(n, dtype=bool)
        in_left[wrows[:best_pos]] = True
        lmask = in_left[lists]  # (d, nn), per-feature stable partition masks
        llists = np.stack([lists[j][lmask[j]] for j in range(d)])
        rlists = np.stack([lists[j][~lmask[j]] for j in range(d)])

        left[node] = n_nodes
        right[node] = n_nodes + 1
        _append_blank()
        _append_blank()
        stack.append((n_nodes + 1, depth + 1, rlists, total - lsum, tsq - lsq))
        stack.append((n_nodes, depth + 1, llists, lsum, lsq))
        n_nodes += 2

    return (np.asarray(feature, dtype=np.int32),
            np.asarray(threshold, dtype=np.float64),
            np.asarray(left, dtype=np.int32),
            np.asarray(right, dtype=np.int32),
            np.asarray(value, dtype=np.float64),
            np.asarray(node_sse, dtype=np.float64),
            np.asarray(n_samples, dtype=np.int32),
            np.asarray(gain, dtype=np.float64))


def predict_tree(feature, threshold, left, right, value, X):
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int32)
    while True:
        internal = feature[node] >= 0
        if not internal.any():
            break
        idx = np.nonzero(internal)[0]
        f = feature[node[idx]]
        go_left = X[idx, f] <= threshold[node[idx]]
        node[idx] = np.where(go_left, left[node[idx]], right[node[idx]])
    return value[node].astype(np.float64, copy=True)


def predict_forest(feature, threshold, left, right, value, tree_offsets,
                   output_offsets, f0, lr, X):
    n = X.shape[0]
    m = len(f0)
    out = np.empty((n, m))
    for o in range(m):
        acc = np.zeros(n)
        for t in range(output_offsets[o], output_offsets[o + 1]):
            off = tree_offsets[t]
            node = np.full(n, off, dtype=np.int32)
            while True:
                internal = feature[node] >= 0
                if not internal.any():
                    break
                idx = np.nonzero(internal)[0]
                nd = node[idx]
                go_left = X[idx, feature[nd]] <= threshold[nd]
                node[idx] = off + np.where(go_left, left[nd], right[nd])
            acc += value[node]
        out[:, o] = f0[o] + lr * acc
    return out


# ---------------------------------------------------------------------------
# cyclic boosting on binned features
# ---------------------------------------------------------------------------

def _recip_table(n):
    r = np.zeros(n + 1)
    r[1:] = 1.0 / np.arange(1, n + 1, dtype=np.float64)
    return r


def cyclic_main_effects(bins, n_bins, residual, tables, rounds, lr, depth,
                        stop_tol=0.0):
    n, d = bins.shape
    recip = _recip_table(n)
    for _ in range(rounds):
        round_max = 0.0
        for j in range(d):
            B = int(n_bins[j])
            col = bins[:, j]
            bsum = np.bincount(col, weights=residual, minlength=B)
            bsq = np.bincount(col, weights=residual * residual, minlength=B)
            bcnt = np.bincount(col, minlength=B).astype(np.float64)
            upd = np.zeros(B)
            _segment_update(bsum, bsq, bcnt, upd, recip, 0, B, depth, lr)
            tables[j] += upd
            round_max = max(round_max, float(np.abs(upd).max()))
            residual -= upd[col]
        if round_max <= stop_tol:
            break


def _segment_update(bsum, bsq, bcnt, upd, recip, lo, hi, depth, lr):
    total = float(np.cumsum(bsum[lo:hi])[-1])
    tsq = float(np.cumsum(bsq[lo:hi])[-1])
    cnt = float(np.cumsum(bcnt[lo:hi])[-1])
    _segment_split(bsum, bsq, bcnt, upd, recip, lo, hi, depth, lr,
                   total, tsq, cnt)


def _segment_split(bsum, bsq, bcnt, upd, recip, lo, hi, depth, lr,
                   total, tsq, cnt):
    if cnt <= 0.0:
        upd[lo:hi] = 0.0
        return
    base = total * total * recip[int(cnt)]
    sse = tsq - base
    best = None
    if depth > 0 and hi - lo > 1:
        ps = np.cumsum(bsum[lo:hi])[:-1]
        pc = np.cumsum(bcnt[lo:hi])[:-1]
        pq = np.cumsum(bsq[lo:hi])[:-1]
        rc = cnt - pc
        score = ps * ps * recip[pc.astype(np.int64)] + \
            (total - ps) * (total - ps) * recip[rc.astype(np.int64)]
        score[(pc < 1.0) | (rc < 1.0) | np.isnan(score)] = -np.inf
        k = int(np.argmax(score))
        if score[k] > -np.inf:
            best = (lo + 1 + k, float(score[k]),
                    float(ps[k]), float(pq[k]), float(pc[k]))
    if best is None or best[1] - base <= GAIN_EPS_FRAC * sse:
        upd[lo:hi] = lr * (total * recip[int(cnt)])
        return
    b, _, blsum, blsq, blcnt = best
    _segment_split(bsum, bsq, bcnt, upd, recip, lo, b, depth - 1, lr,
                   blsum, blsq, blcnt)
    _segment_split(bsum, bsq, bcnt, upd, recip, b, hi, depth - 1, lr,
                   total - blsum, tsq - blsq, cnt - blcnt)


def _pair_prefix(gsum, gcnt, Bi, Bj):
    psum = np.zeros((Bi + 1, Bj + 1))
    pcnt = np.zeros((Bi + 1, Bj + 1))
    psum[1:, 1:] = np.cumsum(np.cumsum(gsum, axis=1), axis=0)
    pcnt[1:, 1:] = np.cumsum(np.cumsum(gcnt, axis=1), axis=0)
    return psum, pcnt


def _best_cross(psum, pcnt, Bi, Bj, total, cnt, recip):
    """Best jointly-chosen (row, col) cut; returns (r, c, score) or None."""
    if Bi < 2 or Bj < 2:
        return None
    a = psum[1:Bi, 1:Bj]
    na = pcnt[1:Bi, 1:Bj]
    b = psum[1:Bi, Bj:Bj + 1] - a
    nb = pcnt[1:Bi, Bj:Bj + 1] - na
    cq = psum[Bi:Bi + 1, 1:Bj] - a
    nc = pcnt[Bi:Bi + 1, 1:Bj] - na
    dq = total - a - b - cq
    nd = cnt - na - nb - nc
    wa = np.where(na > 0.0, a * a * recip[na.astype(np.int64)], 0.0)
    wb = np.where(nb > 0.0, b * b * recip[nb.astype(np.int64)], 0.0)
    wc = np.where(nc > 0.0, cq * cq * recip[nc.astype(np.int64)], 0.0)
    wd = np.where(nd > 0.0, dq * dq * recip[nd.astype(np.int64)], 0.0)
    score = wa + wb + wc + wd
    score[np.isnan(score)] = -np.inf
    k = int(np.argmax(score))
    if score.ravel()[k] == -np.inf:
        return None
    return 1 + k // (Bj - 1), 1 + k % (Bj - 1), float(score.ravel()[k])


SCORE_GROUPS = 8


def score_pairs(bins, n_bins, residual):
    """See the compiled kernel: capped-grid cell means, lexicographic."""
    n, d = bins.shape
    recip = _recip_table(n)
    total = float(np.cumsum(residual)[-1])
    base = total * total * recip[n]
    scores = []
    for fi in range(d):
        for fj in range(fi + 1, d):
            Bi, Bj = int(n_bins[fi]), int(n_bins[fj])
            Gi, Gj = min(Bi, SCORE_GROUPS), min(Bj, SCORE_GROUPS)
            gi = bins[:, fi].astype(np.int64) * Gi // Bi
            gj = bins[:, fj].astype(np.int64) * Gj // Bj
            cells = gi * Gj + gj
            gsum = np.bincount(cells, weights=residual, minlength=Gi * Gj)
            gcnt = np.bincount(cells, minlength=Gi * Gj)
            occ = gcnt > 0
            contrib = np.zeros(Gi * Gj)
            contrib[occ] = gsum[occ] * gsum[occ] * recip[gcnt[occ]]
            fit = float(np.cumsum(contrib)[-1]) if len(contrib) else 0.0
            scores.append((fit - base) / n)
    return np.asarray(scores)


def cyclic_pair_effects(bins, n_bins, pairs, tables, residual, rounds, lr,
                        stop_tol=0.0):
    """See the compiled kernel: jointly-chosen 2x2 cross per micro-step."""
    if len(pairs) == 0 or rounds <= 0:
        return
    n = bins.shape[0]
    recip = _recip_table(n)
    for _ in range(rounds):
        round_max = 0.0
        for p in range(len(pairs)):
            fi, fj = int(pairs[p, 0]), int(pairs[p, 1])
            Bi, Bj = int(n_bins[fi]), int(n_bins[fj])
            cells = bins[:, fi].astype(np.int64) * Bj + bins[:, fj]
            gsum = np.bincount(cells, weights=residual,
                               minlength=Bi * Bj).reshape(Bi, Bj)
            gcnt = np.bincount(cells, minlength=Bi * Bj) \
                .astype(np.float64).reshape(Bi, Bj)
            total = float(np.cumsum(residual)[-1])
            tsq = float(np.cumsum(residual * residual)[-1])
            cnt = float(n)
            base = total * total * recip[n]
            sse = tsq - base
            psum, pcnt = _pair_prefix(gsum, gcnt, Bi, Bj)
            best = _best_cross(psum, pcnt, Bi, Bj, total, cnt, recip)
            if best is None or best[2] - base <= GAIN_EPS_FRAC * sse:
                mean = lr * (total * recip[n])
                tables[p] += mean
                residual -= mean
                round_max = max(round_max, abs(mean))
                continue
            r, c, _ = best
            a = float(psum[r, c])
            na = float(pcnt[r, c])
            b = float(psum[r, Bj]) - a
            nb = float(pcnt[r, Bj]) - na
            cq = float(psum[Bi, c]) - a
            nc = float(pcnt[Bi, c]) - na
            dq = total - a - b - cq
            nd = cnt - na - nb - nc
            wa = lr * (a * recip[int(na)]) if na > 0.0 else 0.0
            wb = lr * (b * recip[int(nb)]) if nb > 0.0 else 0.0
            wc = lr * (cq * recip[int(nc)]) if nc > 0.0 else 0.0
            wd = lr * (dq * recip[int(nd)]) if nd > 0.0 else 0.0
            tables[p][:r, :c] += wa
            tables[p][:r, c:] += wb
            tables[p][r:, :c] += wc
            tables[p][r:, c:] += wd
            upd_row = np.where(bins[:, fi] < r,
                               np.where(bins[:, fj] < c, wa, wb),
                               np.where(bins[:, fj] < c, wc, wd))
            residual -= upd_row
            round_max = max(round_max, abs(wa), abs(wb), abs(wc), abs(wd))
        if round_max <= stop_tol:
            break


def ebm_policy_row(edges_flat, edge_off, uni_tables, uni_off, pairs,
                   pair_flat, pair_off, pair_out_off, pair_bj, intercepts,
                   x, bins_out):
    d = len(edge_off) - 1
    m = len(intercepts)
    out = np.empty(m)
    for j in range(d):
        lo, hi = int(edge_off[j]), int(edge_off[j + 1])
        bins_out[j] = int(np.searchsorted(edges_flat[lo:hi], x[j],
                                          side="left"))
    for o in range(m):
        acc = float(intercepts[o])
        for j in range(d):
            acc += uni_tables[o, uni_off[j] + bins_out[j]]
        for p in range(pair_out_off[o], pair_out_off[o + 1]):
            acc += pair_flat[pair_off[p]
                             + bins_out[pairs[p, 0]] * pair_bj[p]
                             + bins_out[pairs[p, 1]]]
        out[o] = acc
    return out


# ---------------------------------------------------------------------------
# symbolic expression programs
# ---------------------------------------------------------------------------

def eval_program(code, arg, consts, X, max_stack):
    n = X.shape[0]
    stack = []
    for op, a in zip(code, arg):
        if op == OP_VAR:
            stack.append(X[:, a].copy())
        elif op == OP_CONST:
            stack.append(np.full(n, consts[a]))
        elif op == OP_ADD:
            b = stack.pop()
            stack[-1] = stack[-1] + b
        elif op == OP_SUB:
            b = stack.pop()
            stack[-1] = stack[-1] - b
        elif op == OP_MUL:
            b = stack.pop()
            stack[-1] = stack[-1] * b
        elif op == OP_SIN:
            stack[-1] = np.sin(stack[-1])
        elif op == OP_TANH:
            stack[-1] = np.tanh(stack[-1])
        elif op == OP_SQUARE:
            stack[-1] = stack[-1] * stack[-1]
        else:
            v = stack[-1]
            stack[-1] = v * v * v
    return stack[0]


def mse_of_program(code, arg, consts, X, y, max_stack):
    d = eval_program(code, arg, consts, X, max_stack) - y
    acc = float(np.cumsum(d * d)[-1]) / len(d)
    if not (acc == acc) or acc > 1e300:
        return float("inf")
    return acc
