# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.

Semantics (candidate orderings, tie-breaks, summation order) are shared with
the pure NumPy fallback in ``_kernels_py``; the two must stay interchangeable
bit-for-bit for every tree/boosting kernel.  Keep loop accumulation orders in
sync with the fallback's ``np.cumsum``/``np.bincount`` equivalents.
"""

import numpy as np

from libc.math cimport sin, tanh, INFINITY

# Split acceptance: a split must reduce the node SSE by more than this
# fraction of the node SSE, which rejects float-noise "gains" on
# (near-)constant targets.
cdef double GAIN_EPS_FRAC = 1e-12

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

def fit_tree(double[:, ::1] X_t, double[::1] y, int[:, ::1] sort_idx_t,
             int max_depth, int min_samples_leaf):
    """Greedy CART regression tree on presorted columns.

    `X_t` is the feature matrix transposed to (d, n) for scan locality;
    `sort_idx_t[j]` lists row ids in ascending order of feature j.  Splits
    maximize the SSE reduction; candidates are midpoints between consecutive
    distinct values, scanned feature-ascending then threshold-ascending with
    strictly-greater acceptance (ties keep the earlier candidate).

    Returns (feature, threshold, left, right, value, sse, n_samples, gain)
    arrays in depth-first preorder; feature == -1 marks a leaf.
    """
    cdef int d = X_t.shape[0]
    cdef int n = X_t.shape[1]
    cdef int cap = 2 * n + 1
    cdef int[::1] feature = np.empty(cap, dtype=np.int32)
    cdef double[::1] threshold = np.zeros(cap)
    cdef int[::1] left = np.full(cap, -1, dtype=np.int32)
    cdef int[::1] right = np.full(cap, -1, dtype=np.int32)
    cdef double[::1] value = np.zeros(cap)
    cdef double[::1] node_sse = np.zeros(cap)
    cdef int[::1] n_samples = np.zeros(cap, dtype=np.int32)
    cdef double[::1] gain = np.zeros(cap)

    cdef unsigned char[::1] side = np.zeros(n, dtype=np.uint8)

    cdef int n_nodes = 0
    cdef int node, depth, nn, j, k, r, pos
    cdef int best_f, best_pos, nl, nr
    cdef double total, tsq, base, sse, best_score, best_thr, score
    cdef double lsum, vk, vp, yv, lsq
    cdef int[:, ::1] lists, llists, rlists

    # root sums accumulate in original row order
    total = 0.0
    tsq = 0.0
    for k in range(n):
        yv = y[k]
        total += yv
        tsq += yv * yv

    stack = [(0, 0, sort_idx_t, total, tsq)]
    n_nodes = 1

    while stack:
        node, depth, lists_arr, total, tsq = stack.pop()
        lists = lists_arr
        nn = lists.shape[1]
        base = total * total / nn
        sse = tsq - base
        value[node] = total / nn
        node_sse[node] = sse
        n_samples[node] = nn
        feature[node] = -1

        if depth >= max_depth or nn < 2 * min_samples_leaf:
            continue
        if _all_equal(y, lists, nn):
            continue

        best_f = -1
        best_pos = -1
        best_score = -INFINITY
        best_thr = 0.0
        for j in range(d):
            lsum = 0.0
            for pos in range(1, nn):
                r = lists[j, pos - 1]
                lsum += y[r]
                if pos < min_samples_leaf or nn - pos < min_samples_leaf:
                    continue
                vk = X_t[j, lists[j, pos]]
                vp = X_t[j, r]
                if vk <= vp:
                    continue
                score = lsum * lsum / pos + (total - lsum) * (total - lsum) / (nn - pos)
                if score > best_score:
                    best_f = j
                    best_pos = pos
                    best_score = score
                    best_thr = (vp + vk) / 2.0

        if best_f < 0 or best_score - base <= GAIN_EPS_FRAC * sse:
            continue

        feature[node] = best_f
        threshold[node] = best_thr
        gain[node] = best_score - base

        # child sums from the winning feature's prefix
        lsum = 0.0
        lsq = 0.0
        for pos in range(best_pos):
            yv = y[lists[best_f, pos]]
            lsum += yv
            lsq += yv * yv
        nl = best_pos
        nr = nn - best_pos

        for pos in range(nn):
            side[lists[best_f, pos]] = 0 if pos < best_pos else 1

        llists_arr = np.empty((d, nl), dtype=np.int32)
        rlists_arr = np.empty((d, nr), dtype=np.int32)
        llists = llists_arr
        rlists = rlists_arr
        for j in range(d):
            nl = 0
            nr = 0
            for pos in range(nn):
                r = lists[j, pos]
                if side[r] == 0:
                    llists[j, nl] = r
                    nl += 1
                else:
                    rlists[j, nr] = r
                    nr += 1

        left[node] = n_nodes
        right[node] = n_nodes + 1
        # push right first so the left child is processed next (preorder)
        stack.append((n_nodes + 1, depth + 1, rlists_arr,
                      total - lsum, tsq - lsq))
        stack.append((n_nodes, depth + 1, llists_arr, lsum, lsq))
        n_nodes += 2

    out = slice(0, n_nodes)
    return (np.asarray(feature)[out].copy(), np.asarray(threshold)[out].copy(),
            np.asarray(left)[out].copy(), np.asarray(right)[out].copy(),
            np.asarray(value)[out].copy(), np.asarray(node_sse)[out].copy(),
            np.asarray(n_samples)[out].copy(), np.asarray(gain)[out].copy())


cdef bint _all_equal(double[::1] y, int[:, ::1] lists, int nn):
    cdef int k
    cdef double v0 = y[lists[0, 0]]
    for k in range(1, nn):
        if y[lists[0, k]] != v0:
            return False
    return True


def predict_tree(int[::1] feature, double[::1] threshold, int[::1] left,
                 int[::1] right, double[::1] value, double[:, ::1] X):
    """Route every row of X to its leaf; returns the leaf values."""
    cdef int n = X.shape[0]
    cdef double[::1] out = np.empty(n)
    cdef int i, node
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return np.asarray(out)


def predict_forest(int[::1] feature, double[::1] threshold, int[::1] left,
                   int[::1] right, double[::1] value, int[::1] tree_offsets,
                   int[::1] output_offsets, double[::1] f0, double lr,
                   double[:, ::1] X):
    """Batch prediction for per-output boosted forests packed into flat arrays.

    Trees `output_offsets[o] .. output_offsets[o+1]` belong to output o; node
    ids inside tree t are relative to `tree_offsets[t]`.  Prediction is
    f0[o] + lr * sum(tree outputs), accumulated in tree order.
    """
    cdef int n = X.shape[0]
    cdef int m = f0.shape[0]
    cdef double[:, ::1] out = np.empty((n, m))
    cdef int i, o, t, node, off
    cdef double acc
    for i in range(n):
        for o in range(m):
            acc = 0.0
            for t in range(output_offsets[o], output_offsets[o + 1]):
                off = tree_offsets[t]
                node = off
                while feature[node] >= 0:
                    if X[i, feature[node]] <= threshold[node]:
                        node = off + left[node]
                    else:
                        node = off + right[node]
                acc += value[node]
            out[i, o] = f0[o] + lr * acc
    return np.asarray(out)


# ---------------------------------------------------------------------------
# cyclic boosting on binned features
# ---------------------------------------------------------------------------

def cyclic_main_effects(int[:, ::1] bins, int[::1] n_bins, double[::1] residual,
                        list tables, int rounds, double lr, int depth,
                        double stop_tol=0.0):
    """Round-robin shrunken updates of per-feature lookup tables.

    Each micro-step fits a depth-limited single-feature regression tree to
    the current residuals on the feature's bins and adds the lr-scaled leaf
    means to the feature's table, keeping `residual` in sync.  Iteration
    stops early once the largest table update of a full round is at most
    `stop_tol` (the fixed point of cyclic backfitting).
    """
    cdef int n = bins.shape[0]
    cdef int d = bins.shape[1]
    cdef int bmax = 0
    cdef int j, k
    for j in range(d):
        if n_bins[j] > bmax:
            bmax = n_bins[j]
    cdef double[::1] bsum = np.zeros(bmax)
    cdef double[::1] bsq = np.zeros(bmax)
    cdef double[::1] bcnt = np.zeros(bmax)
    cdef double[::1] upd = np.zeros(bmax)
    cdef double[::1] recip = np.zeros(n + 1)
    for k in range(1, n + 1):
        recip[k] = 1.0 / k
    cdef int r_i, i, b, B
    cdef double rv, round_max, av
    cdef double[::1] table

    for r_i in range(rounds):
        round_max = 0.0
        for j in range(d):
            B = n_bins[j]
            for b in range(B):
                bsum[b] = 0.0
                bsq[b] = 0.0
                bcnt[b] = 0.0
            for i in range(n):
                b = bins[i, j]
                rv = residual[i]
                bsum[b] += rv
                bsq[b] += rv * rv
                bcnt[b] += 1.0
            _segment_tree_update(bsum, bsq, bcnt, upd, recip, 0, B, depth, lr)
            table = tables[j]
            for b in range(B):
                table[b] += upd[b]
                av = upd[b] if upd[b] >= 0.0 else -upd[b]
                if av > round_max:
                    round_max = av
            for i in range(n):
                residual[i] -= upd[bins[i, j]]
        if round_max <= stop_tol:
            break


cdef void _segment_tree_update(double[::1] bsum, double[::1] bsq,
                               double[::1] bcnt, double[::1] upd,
                               double[::1] recip, int lo, int hi, int depth,
                               double lr):
    """Fill upd[lo:hi] with lr-scaled leaf means of a greedy segment tree."""
    cdef double total = 0.0, tsq = 0.0, cnt = 0.0
    cdef int b
    for b in range(lo, hi):
        total += bsum[b]
        tsq += bsq[b]
        cnt += bcnt[b]
    _segment_split(bsum, bsq, bcnt, upd, recip, lo, hi, depth, lr,
                   total, tsq, cnt)


cdef void _segment_split(double[::1] bsum, double[::1] bsq, double[::1] bcnt,
                         double[::1] upd, double[::1] recip, int lo, int hi,
                         int depth, double lr,
                         double total, double tsq, double cnt):
    cdef int b, best_b
    cdef double base, sse, lsum, lcnt, lsq, score, best_score
    cdef double blsum, blcnt, blsq, mean
    if cnt <= 0.0:
        for b in range(lo, hi):
            upd[b] = 0.0
        return
    base = total * total * recip[<int>cnt]
    sse = tsq - base
    best_b = -1
    best_score = -INFINITY
    if depth > 0:
        lsum = 0.0
        lcnt = 0.0
        lsq = 0.0
        for b in range(lo + 1, hi):
            lsum += bsum[b - 1]
            lcnt += bcnt[b - 1]
            lsq += bsq[b - 1]
            if lcnt < 1.0 or cnt - lcnt < 1.0:
                continue
            score = lsum * lsum * recip[<int>lcnt] + \
                (total - lsum) * (total - lsum) * recip[<int>(cnt - lcnt)]
            if score > best_score:
                best_b = b
                best_score = score
                blsum = lsum
                blcnt = lcnt
                blsq = lsq
    if best_b < 0 or best_score - base <= GAIN_EPS_FRAC * sse:
        mean = lr * (total * recip[<int>cnt])
        for b in range(lo, hi):
            upd[b] = mean
        return
    _segment_split(bsum, bsq, bcnt, upd, recip, lo, best_b, depth - 1, lr,
                   blsum, blsq, blcnt)
    _segment_split(bsum, bsq, bcnt, upd, recip, best_b, hi, depth - 1, lr,
                   total - blsum, tsq - blsq, cnt - blcnt)


SCORE_GROUPS = 8  # per-axis resolution cap for pair scoring


def score_pairs(int[:, ::1] bins, int[::1] n_bins, double[::1] residual):
    """Residual-MSE reduction of the best bin-grid predictor per pair,
    evaluated on a capped-resolution grid.

    Each axis is coarsened to at most SCORE_GROUPS contiguous bin groups
    (g = bin * G // B) and the predictor is the per-cell mean on that grid.
    The cap keeps scores comparable across pairs of any bin cardinality:
    full-resolution grids on continuous features would memorize single rows
    and dominate the ranking regardless of real interaction structure.
    Pairs are enumerated lexicographically (i < j).
    """
    cdef int n = bins.shape[0]
    cdef int d = bins.shape[1]
    cdef int n_pairs = d * (d - 1) // 2
    cdef double[::1] scores = np.zeros(max(n_pairs, 1))
    cdef double[::1] gsum = np.zeros(SCORE_GROUPS * SCORE_GROUPS)
    cdef double[::1] gcnt = np.zeros(SCORE_GROUPS * SCORE_GROUPS)
    cdef double[::1] recip = np.zeros(n + 1)
    cdef int k
    for k in range(1, n + 1):
        recip[k] = 1.0 / k
    cdef int i, p, c, fi, fj, Bi, Bj, Gi, Gj, ncells
    cdef double total, base, fit
    total = 0.0
    for i in range(n):
        total += residual[i]
    base = total * total * recip[n]
    p = 0
    for fi in range(d):
        for fj in range(fi + 1, d):
            Bi = n_bins[fi]
            Bj = n_bins[fj]
            Gi = Bi if Bi < SCORE_GROUPS else SCORE_GROUPS
            Gj = Bj if Bj < SCORE_GROUPS else SCORE_GROUPS
            ncells = Gi * Gj
            for c in range(ncells):
                gsum[c] = 0.0
                gcnt[c] = 0.0
            for i in range(n):
                c = (bins[i, fi] * Gi // Bi) * Gj + bins[i, fj] * Gj // Bj
                gsum[c] += residual[i]
                gcnt[c] += 1.0
            fit = 0.0
            for c in range(ncells):
                if gcnt[c] > 0.0:
                    fit += gsum[c] * gsum[c] * recip[<int>gcnt[c]]
            scores[p] = (fit - base) / n
            p += 1
    return np.asarray(scores)[:n_pairs]


def cyclic_pair_effects(int[:, ::1] bins, int[::1] n_bins, int[:, ::1] pairs,
                        list tables, double[::1] residual, int rounds,
                        double lr, double stop_tol=0.0):
    """Cyclic boosting of pairwise bin-grid tables.

    Each micro-step fits a 2x2 "cross" to one pair's occupancy grid: one cut
    per axis chosen jointly (exhaustive scan over cut combinations via 2-D
    prefix sums, row cut index ascending then column, strictly-greater
    acceptance), with quadrant means as leaf values.  The joint search keeps
    XOR-like interaction surfaces learnable, which separate axis-greedy
    splits cannot see.  lr-scaled leaf means update the pair table and the
    residuals; iteration stops early once a full round's largest update is
    at most `stop_tol`.
    """
    cdef int n = bins.shape[0]
    cdef int n_pairs = pairs.shape[0]
    if n_pairs == 0 or rounds <= 0:
        return
    cdef int bmax = 0
    cdef int j, k
    for j in range(n_bins.shape[0]):
        if n_bins[j] > bmax:
            bmax = n_bins[j]
    cdef double[::1] gsum = np.zeros(bmax * bmax)
    cdef double[::1] gcnt = np.zeros(bmax * bmax)
    cdef double[:, ::1] psum = np.zeros((bmax + 1, bmax + 1))
    cdef double[:, ::1] pcnt = np.zeros((bmax + 1, bmax + 1))
    cdef double[::1] recip = np.zeros(n + 1)
    for k in range(1, n + 1):
        recip[k] = 1.0 / k
    cdef int r_i, p, i, fi, fj, Bi, Bj, c, r, ncells, bi
    cdef int best_r, best_c
    cdef double rv, total, tsq, cnt, base, sse, score, best_score
    cdef double a, b, cq, dq, na, nb, nc, nd, wa, wb, wc, wd, mean
    cdef double round_max, av
    cdef double[:, ::1] table

    for r_i in range(rounds):
        round_max = 0.0
        for p in range(n_pairs):
            fi = pairs[p, 0]
            fj = pairs[p, 1]
            Bi = n_bins[fi]
            Bj = n_bins[fj]
            ncells = Bi * Bj
            for c in range(ncells):
                gsum[c] = 0.0
                gcnt[c] = 0.0
            total = 0.0
            tsq = 0.0
            for i in range(n):
                c = bins[i, fi] * Bj + bins[i, fj]
                rv = residual[i]
                gsum[c] += rv
                gcnt[c] += 1.0
                total += rv
                tsq += rv * rv
            cnt = n
            base = total * total * recip[n]
            sse = tsq - base

            # 2-D prefix sums: cumulative along columns inside each row,
            # then along rows (same order as the fallback's nested cumsum)
            for c in range(Bj + 1):
                psum[0, c] = 0.0
                pcnt[0, c] = 0.0
            for r in range(Bi + 1):
                psum[r, 0] = 0.0
                pcnt[r, 0] = 0.0
            for r in range(Bi):
                a = 0.0
                na = 0.0
                for c in range(Bj):
                    a += gsum[r * Bj + c]
                    na += gcnt[r * Bj + c]
                    psum[r + 1, c + 1] = psum[r, c + 1] + a
                    pcnt[r + 1, c + 1] = pcnt[r, c + 1] + na

            best_r = -1
            best_c = -1
            best_score = -INFINITY
            for r in range(1, Bi):
                for c in range(1, Bj):
                    a = psum[r, c]
                    na = pcnt[r, c]
                    b = psum[r, Bj] - a
                    nb = pcnt[r, Bj] - na
                    cq = psum[Bi, c] - a
                    nc = pcnt[Bi, c] - na
                    dq = total - a - b - cq
                    nd = cnt - na - nb - nc
                    wa = a * a * recip[<int>na] if na > 0.0 else 0.0
                    wb = b * b * recip[<int>nb] if nb > 0.0 else 0.0
                    wc = cq * cq * recip[<int>nc] if nc > 0.0 else 0.0
                    wd = dq * dq * recip[<int>nd] if nd > 0.0 else 0.0
                    score = wa + wb + wc + wd
                    if score > best_score:
                        best_score = score
                        best_r = r
                        best_c = c

            table = tables[p]
            if best_r < 0 or best_score - base <= GAIN_EPS_FRAC * sse:
                mean = lr * (total * recip[n])
                for r in range(Bi):
                    for c in range(Bj):
                        table[r, c] += mean
                av = mean if mean >= 0.0 else -mean
                if av > round_max:
                    round_max = av
                for i in range(n):
                    residual[i] -= mean
            else:
                r = best_r
                c = best_c
                a = psum[r, c]
                na = pcnt[r, c]
                b = psum[r, Bj] - a
                nb = pcnt[r, Bj] - na
                cq = psum[Bi, c] - a
                nc = pcnt[Bi, c] - na
                dq = total - a - b - cq
                nd = cnt - na - nb - nc
                wa = lr * (a * recip[<int>na]) if na > 0.0 else 0.0
                wb = lr * (b * recip[<int>nb]) if nb > 0.0 else 0.0
                wc = lr * (cq * recip[<int>nc]) if nc > 0.0 else 0.0
                wd = lr * (dq * recip[<int>nd]) if nd > 0.0 else 0.0
                for bi in range(Bi):
                    for j in range(Bj):
                        if bi < r:
                            table[bi, j] += wa if j < c else wb
                        else:
                            table[bi, j] += wc if j < c else wd
                for i in range(n):
                    bi = bins[i, fi]
                    j = bins[i, fj]
                    if bi < r:
                        residual[i] -= wa if j < c else wb
                    else:
                        residual[i] -= wc if j < c else wd
                av = wa if wa >= 0.0 else -wa
                if av > round_max:
                    round_max = av
                av = wb if wb >= 0.0 else -wb
                if av > round_max:
                    round_max = av
                av = wc if wc >= 0.0 else -wc
                if av > round_max:
                    round_max = av
                av = wd if wd >= 0.0 else -wd
                if av > round_max:
                    round_max = av
        if round_max <= stop_tol:
            break


def ebm_policy_row(double[::1] edges_flat, int[::1] edge_off,
                   double[:, ::1] uni_tables, int[::1] uni_off,
                   int[:, ::1] pairs, double[::1] pair_flat, int[::1] pair_off,
                   int[::1] pair_out_off, int[::1] pair_bj,
                   double[::1] intercepts, double[::1] x, int[::1] bins_out):
    """Single-observation prediction across all outputs of an EBM policy.

    Shared bin edges per feature; per-output univariate tables are rows of
    `uni_tables` indexed via `uni_off`; pair tables are flattened row-major.
    Fills `bins_out` with the resolved bin per feature as a side product.
    """
    cdef int d = edge_off.shape[0] - 1
    cdef int m = intercepts.shape[0]
    cdef double[::1] out = np.empty(m)
    cdef int j, b, lo, hi, o, p
    cdef double v, acc
    for j in range(d):
        lo = edge_off[j]
        hi = edge_off[j + 1]
        b = 0
        while lo + b < hi and x[j] > edges_flat[lo + b]:
            b += 1
        bins_out[j] = b
    for o in range(m):
        acc = intercepts[o]
        for j in range(d):
            acc += uni_tables[o, uni_off[j] + bins_out[j]]
        for p in range(pair_out_off[o], pair_out_off[o + 1]):
            acc += pair_flat[pair_off[p] + bins_out[pairs[p, 0]] * pair_bj[p]
                             + bins_out[pairs[p, 1]]]
        out[o] = acc
    return np.asarray(out)


# ---------------------------------------------------------------------------
# symbolic expression programs
# ---------------------------------------------------------------------------

def eval_program(int[::1] code, int[::1] arg, double[::1] consts,
                 double[:, ::1] X, int max_stack):
    """Evaluate a postfix expression program over the rows of X."""
    cdef int n = X.shape[0]
    cdef int L = code.shape[0]
    cdef double[:, ::1] stack = np.empty((max_stack, n))
    cdef int sp = 0
    cdef int k, i, op, a
    cdef double v
    for k in range(L):
        op = code[k]
        a = arg[k]
        if op == 0:  # var
            for i in range(n):
                stack[sp, i] = X[i, a]
            sp += 1
        elif op == 1:  # const
            v = consts[a]
            for i in range(n):
                stack[sp, i] = v
            sp += 1
        elif op == 2:  # add
            sp -= 1
            for i in range(n):
                stack[sp - 1, i] = stack[sp - 1, i] + stack[sp, i]
        elif op == 3:  # sub
            sp -= 1
            for i in range(n):
                stack[sp - 1, i] = stack[sp - 1, i] - stack[sp, i]
        elif op == 4:  # mul
            sp -= 1
            for i in range(n):
                stack[sp - 1, i] = stack[sp - 1, i] * stack[sp, i]
        elif op == 5:  # sin
            for i in range(n):
                stack[sp - 1, i] = sin(stack[sp - 1, i])
        elif op == 6:  # tanh
            for i in range(n):
                stack[sp - 1, i] = tanh(stack[sp - 1, i])
        elif op == 7:  # square
            for i in range(n):
                v = stack[sp - 1, i]
                stack[sp - 1, i] = v * v
        else:  # cube
            for i in range(n):
                v = stack[sp - 1, i]
                stack[sp - 1, i] = v * v * v
    return np.asarray(stack[0]).copy()


def mse_of_program(int[::1] code, int[::1] arg, double[::1] consts,
                   double[:, ::1] X, double[::1] y, int max_stack):
    """MSE of a program's predictions against y; inf if any output is non-finite."""
    pred = eval_program(code, arg, consts, X, max_stack)
    cdef double[::1] pv = pred
    cdef int n = pv.shape[0]
    cdef int i
    cdef double acc = 0.0, dd
    for i in range(n):
        dd = pv[i] - y[i]
        acc += dd * dd
    acc /= n
    if not (acc == acc) or acc > 1e300:  # NaN or effectively infinite
        return float("inf")
    return acc
