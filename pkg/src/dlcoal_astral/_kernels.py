"""Compiled simulation kernels.

Locus trees are flat node tables filled in depth-first preorder with child 0
visited first, so reversed id order is bottom-up and children of a node come
as contiguous blocks. Gene tree ids are assigned bottom-up: leaves first (in
locus-leaf preorder), then coalescences as they happen, so every parent id is
larger than its children's.

Kernels return status codes instead of raising; the Python wrappers turn them
into exceptions.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from ._rng import exponential, randbelow, seed_state, uniform

LEAF, SPEC, DUP, LOSS = 0, 1, 2, 3

OK = 0
CAPACITY = 1
REJECTION_CAP = 2
EMPTY = 3

MAX_LOCUS_NODES = 1 << 24

# pair index -> (x, y) for the six pairs of quartet positions
PAIR_X = np.array([0, 2, 0, 1, 0, 1], dtype=np.int64)
PAIR_Y = np.array([1, 3, 2, 3, 3, 2], dtype=np.int64)


# --------------------------------------------------------------------------
# Step 1: duplication and loss


@njit(cache=True)
def simulate_locus(state, sp_c0, sp_c1, sp_time, lam, mu,
                   parent, c0, c1, event, species, daughter, time,
                   st_sp, st_t, st_par, st_slot, st_dau):
    """Top-down birth-death of gene copies inside the species tree.

    Returns the number of nodes written, or -1 when the buffers are too small
    (the caller grows them and retries from a saved generator state).
    """
    cap = parent.shape[0]
    scap = st_sp.shape[0]
    rate = lam + mu
    pdup = lam / rate if rate > 0.0 else 0.0
    n = 0
    st_sp[0] = 0
    st_t[0] = sp_time[0]
    st_par[0] = -1
    st_slot[0] = 0
    st_dau[0] = 0
    top = 1
    while top > 0:
        top -= 1
        s = st_sp[top]
        t = st_t[top]
        p = st_par[top]
        slot = st_slot[top]
        d = st_dau[top]
        if n >= cap or top + 2 > scap:
            return -1
        v = n
        n += 1
        parent[v] = p
        c0[v] = -1
        c1[v] = -1
        species[v] = s
        daughter[v] = d
        if p >= 0:
            if slot == 0:
                c0[p] = v
            else:
                c1[p] = v
        tb = sp_time[s]
        w = np.inf
        if rate > 0.0 and t > tb:
            w = exponential(state, rate)
        if t - w > tb:
            te = t - w
            time[v] = te
            if uniform(state) < pdup:
                event[v] = DUP
                dchild = randbelow(state, 2)
                st_sp[top] = s
                st_t[top] = te
                st_par[top] = v
                st_slot[top] = 1
                st_dau[top] = 1 if dchild == 1 else 0
                top += 1
                st_sp[top] = s
                st_t[top] = te
                st_par[top] = v
                st_slot[top] = 0
                st_dau[top] = 1 if dchild == 0 else 0
                top += 1
            else:
                event[v] = LOSS
        else:
            time[v] = tb
            if sp_c0[s] < 0:
                event[v] = LEAF
            else:
                event[v] = SPEC
                st_sp[top] = sp_c1[s]
                st_t[top] = tb
                st_par[top] = v
                st_slot[top] = 1
                st_dau[top] = 0
                top += 1
                st_sp[top] = sp_c0[s]
                st_t[top] = tb
                st_par[top] = v
                st_slot[top] = 0
                st_dau[top] = 0
                top += 1
    return n


@njit(cache=True)
def mark_alive(n, c0, c1, event, alive):
    """alive[v] = v has an extant leaf below it. Returns the number of extant leaves."""
    leaves = 0
    for v in range(n - 1, -1, -1):
        if event[v] == LEAF:
            alive[v] = True
            leaves += 1
        elif event[v] == LOSS:
            alive[v] = False
        else:
            a = False
            if c0[v] >= 0 and alive[c0[v]]:
                a = True
            if c1[v] >= 0 and alive[c1[v]]:
                a = True
            alive[v] = a
    return leaves


# --------------------------------------------------------------------------
# Step 2: bounded multispecies coalescent


@njit(cache=True)
def _kingman_edge(state, lin, start, lin_top, t, t_top, v,
                  g_next, g_parent, g_c0, g_c1, g_time, g_locus):
    """Coalesce lin[start:lin_top] from time t up to t_top. Returns (lin_top, g_next)."""
    m = lin_top - start
    while m >= 2:
        t += exponential(state, 0.5 * m * (m - 1))
        if t >= t_top:
            break
        i = randbelow(state, m)
        j = randbelow(state, m - 1)
        if j >= i:
            j += 1
        a = lin[start + i]
        b = lin[start + j]
        g = g_next
        g_next += 1
        g_c0[g] = a
        g_c1[g] = b
        g_parent[g] = -1
        g_time[g] = t
        g_locus[g] = v
        g_parent[a] = g
        g_parent[b] = g
        lo = i if i < j else j
        hi = j if i < j else i
        lin[start + lo] = g
        lin[start + hi] = lin[lin_top - 1]
        lin_top -= 1
        m -= 1
    return lin_top, g_next


@njit(cache=True)
def simulate_bmsc(state, n, parent, c0, c1, event, daughter, time, alive, max_attempts, direct_after,
                  g_parent, g_c0, g_c1, g_time, g_locus, gene_of_leaf,
                  comp_root, comp_out, comp_nodes, lin, seg, bad):
    """Gene tree under the coalescent bounded by every daughter edge.

    A component is the subtree of the locus root or of a daughter child, with
    nested daughter subtrees cut out; each nested subtree enters as the single
    lineage it produced. Components are sampled innermost first, each by
    rejection on the event that it ends with one lineage at its top. After
    ``direct_after`` failed attempts (immediately when 0, never when negative)
    the component is drawn from the exact conditional law directly.

    Returns (status, number of gene nodes, number of gene leaves). On
    REJECTION_CAP, ``bad[0]`` holds the locus node whose parent edge failed.
    """
    if n == 0 or not alive[0]:
        return EMPTY, 0, 0
    n_leaves = 0
    for v in range(n):
        comp_root[v] = False
        if event[v] == LEAF:
            g = n_leaves
            n_leaves += 1
            gene_of_leaf[v] = g
            g_parent[g] = -1
            g_c0[g] = -1
            g_c1[g] = -1
            g_time[g] = time[v]
            g_locus[g] = v
        else:
            gene_of_leaf[v] = -1
    comp_root[0] = True
    for v in range(1, n):
        p = parent[v]
        if alive[v] and event[p] == DUP and daughter[v] == 1:
            comp_root[v] = True

    g_next = n_leaves
    for croot in range(n - 1, -1, -1):
        if not comp_root[croot] or not alive[croot]:
            continue
        # preorder (child 0 first) list of the component's nodes; nested
        # daughter roots appear as proxies. ``lin`` serves as the DFS stack.
        k = 0
        sp = 0
        lin[sp] = croot
        sp += 1
        while sp > 0:
            sp -= 1
            v = lin[sp]
            comp_nodes[k] = v
            k += 1
            if v != croot and comp_root[v]:
                continue
            if c1[v] >= 0 and alive[c1[v]]:
                lin[sp] = c1[v]
                sp += 1
            if c0[v] >= 0 and alive[c0[v]]:
                lin[sp] = c0[v]
                sp += 1
        t_bound = np.inf if croot == 0 else time[parent[croot]]
        g_start = g_next
        attempts = 0
        if croot != 0 and direct_after == 0:
            g_next = _direct_component(state, croot, comp_nodes, k, parent, c0, c1, event, time, alive,
                                       comp_root, comp_out, gene_of_leaf, g_start,
                                       g_parent, g_c0, g_c1, g_time, g_locus, lin, seg)
            if g_next < 0:
                bad[0] = croot
                return REJECTION_CAP, g_start, n_leaves
            continue
        while True:
            g_next = g_start
            lin_top = 0
            # seg[v] is the offset in lin of node v's lineage block; walking the
            # preorder backwards finishes each subtree right before its parent
            for jj in range(k - 1, -1, -1):
                v = comp_nodes[jj]
                if v != croot and comp_root[v]:
                    seg[v] = lin_top
                    lin[lin_top] = comp_out[v]
                    lin_top += 1
                    continue
                if event[v] == LEAF:
                    seg[v] = lin_top
                    lin[lin_top] = gene_of_leaf[v]
                    lin_top += 1
                else:
                    seg[v] = _gather(v, c0, c1, alive, seg, lin, lin_top)
                t_top = t_bound if v == croot else (np.inf if v == 0 else time[parent[v]])
                lin_top, g_next = _kingman_edge(state, lin, seg[v], lin_top, time[v], t_top, v,
                                                g_next, g_parent, g_c0, g_c1, g_time, g_locus)
            if lin_top == 1:
                comp_out[croot] = lin[0]
                break
            attempts += 1
            if direct_after >= 0 and attempts >= direct_after:
                g_next = _direct_component(state, croot, comp_nodes, k, parent, c0, c1, event, time, alive,
                                           comp_root, comp_out, gene_of_leaf, g_start,
                                           g_parent, g_c0, g_c1, g_time, g_locus, lin, seg)
                if g_next < 0:
                    bad[0] = croot
                    return REJECTION_CAP, g_start, n_leaves
                break
            if attempts >= max_attempts:
                bad[0] = croot
                return REJECTION_CAP, g_next, n_leaves
    g_parent[comp_out[0]] = -1
    return OK, g_next, n_leaves


@njit(cache=True)
def _gather(v, c0, c1, alive, seg, lin, lin_top):
    """Make the lineage blocks of v's alive children contiguous; return the block start.

    In reversed preorder the subtree of v is processed immediately before v,
    so everything from the earliest child block up to ``lin_top`` belongs to
    v's children.
    """
    start = lin_top
    if c0[v] >= 0 and alive[c0[v]] and seg[c0[v]] < start:
        start = seg[c0[v]]
    if c1[v] >= 0 and alive[c1[v]] and seg[c1[v]] < start:
        start = seg[c1[v]]
    return start


# --------------------------------------------------------------------------
# Direct conditional sampler for one daughter component
#
# The number of lineages along each locus edge is a pure-death chain (rate
# k(k-1)/2 from k lineages), independent across edges given the entering
# counts, and pair choices do not depend on the counts. So the component is
# drawn by (1) propagating count distributions upward, (2) drawing counts
# top-down given one lineage at the top, (3) drawing every edge's
# coalescence times as a bridge between its end counts, (4) replaying the
# coalescences with uniform pairs.


@njit(cache=True)
def _poisson_weight(j, mean, log_mean):
    return np.exp(-mean + j * log_mean - math.lgamma(j + 1.0))


@njit(cache=True)
def _terms(nmax, mean):
    return int(mean + 10.0 * np.sqrt(mean) + nmax + 40)


@njit(cache=True)
def transition_matrix(nmax, t, out):
    """out[i, k] = P(k lineages after time t | i lineages), for i, k <= nmax.

    Uniformization at rate nmax(nmax-1)/2: every term is nonnegative, so small
    probabilities keep full relative accuracy.
    """
    out[:, :] = 0.0
    if nmax <= 1 or t <= 0.0:
        for i in range(nmax + 1):
            out[i, i] = 1.0
        return
    lam = 0.5 * nmax * (nmax - 1)
    mean = lam * t
    log_mean = np.log(mean)
    size = nmax + 1
    M = np.zeros((size, size))
    for i in range(size):
        M[i, i] = 1.0
    jmax = _terms(nmax, mean)
    for j in range(jmax + 1):
        w = _poisson_weight(j, mean, log_mean)
        if w > 0.0:
            for i in range(size):
                for kk in range(i + 1):
                    out[i, kk] += w * M[i, kk]
        # M <- M B, B[s, s] = 1 - r_s / lam, B[s, s-1] = r_s / lam
        for i in range(size):
            for kk in range(i + 1):
                r_k = 0.5 * kk * (kk - 1)
                val = M[i, kk] * (1.0 - r_k / lam)
                if kk + 1 <= i:
                    val += M[i, kk + 1] * (0.5 * (kk + 1) * kk) / lam
                M[i, kk] = val


@njit(cache=True)
def _draw_index(state, w, lo, hi):
    """Index in [lo, hi] drawn proportionally to w; -1 if all weights vanish."""
    total = 0.0
    for i in range(lo, hi + 1):
        total += w[i]
    if not total > 0.0:
        return -1
    u = uniform(state) * total
    acc = 0.0
    last = -1
    for i in range(lo, hi + 1):
        if w[i] > 0.0:
            last = i
            acc += w[i]
            if u < acc:
                return i
    return last


@njit(cache=True)
def bridge_times(state, n, m, t, out):
    """Coalescence times (from the edge bottom, ascending) of a death chain going n -> m in time t.

    Returns the number of times written (n - m), or -1 on numeric failure.
    """
    if n == m:
        return 0
    lam = 0.5 * n * (n - 1)
    mean = lam * t
    log_mean = np.log(mean)
    jmax = _terms(n, mean)
    # forward: v = e_n B^j, weight of j steps = Pois(j) v[m]
    v = np.zeros(n + 1)
    v[n] = 1.0
    logw = np.full(jmax + 1, -np.inf)
    for j in range(jmax + 1):
        if v[m] > 0.0:
            logw[j] = -mean + j * log_mean - math.lgamma(j + 1.0) + np.log(v[m])
        for kk in range(m, n + 1):
            r_k = 0.5 * kk * (kk - 1)
            val = v[kk] * (1.0 - r_k / lam)
            if kk + 1 <= n:
                val += v[kk + 1] * (0.5 * (kk + 1) * kk) / lam
            v[kk] = val
    top = -np.inf
    for j in range(jmax + 1):
        if logw[j] > top:
            top = logw[j]
    if top == -np.inf:
        return -1
    w = np.zeros(jmax + 1)
    for j in range(jmax + 1):
        w[j] = np.exp(logw[j] - top)
    N = _draw_index(state, w, 0, jmax)
    if N < 0:
        return -1
    # backward messages beta[i, s] = P(reach m in N - i steps | state s)
    beta = np.zeros((N + 1, n + 1))
    beta[N, m] = 1.0
    for i in range(N - 1, -1, -1):
        for s in range(m, n + 1):
            r_s = 0.5 * s * (s - 1)
            val = (1.0 - r_s / lam) * beta[i + 1, s]
            if s - 1 >= m:
                val += (r_s / lam) * beta[i + 1, s - 1]
            beta[i, s] = val
    u = np.sort(np.array([uniform(state) for _ in range(N)])) if N > 0 else np.zeros(0)
    s = n
    written = 0
    for i in range(N):
        r_s = 0.5 * s * (s - 1)
        p_down = (r_s / lam) * beta[i + 1, s - 1] if s - 1 >= m else 0.0
        p_stay = (1.0 - r_s / lam) * beta[i + 1, s]
        if p_down + p_stay <= 0.0:
            return -1
        if uniform(state) * (p_down + p_stay) < p_down:
            out[written] = u[i] * t
            written += 1
            s -= 1
    if s != m:
        return -1
    return written


@njit(cache=True)
def _direct_component(state, croot, comp_nodes, k, parent, c0, c1, event, time, alive,
                      comp_root, comp_out, gene_of_leaf, g_next,
                      g_parent, g_c0, g_c1, g_time, g_locus, lin, seg):
    """Exact draw of one daughter component given one lineage at its top.

    Returns the next free gene id, or -1 if the conditional law underflows.
    """
    pos = np.full(parent.shape[0], -1, np.int64)
    L = 0
    for j in range(k):
        v = comp_nodes[j]
        pos[v] = j
        if event[v] == LEAF or (v != croot and comp_root[v]):
            L += 1
    S = L + 1
    g = np.zeros((k, S))
    f = np.zeros((k, S))
    P = np.zeros((k, S, S))
    nmax = np.zeros(k, np.int64)
    kid0 = np.full(k, -1, np.int64)
    kid1 = np.full(k, -1, np.int64)
    proxy = np.zeros(k, np.bool_)
    for j in range(k - 1, -1, -1):
        v = comp_nodes[j]
        if v != croot and comp_root[v]:
            proxy[j] = True
            f[j, 1] = 1.0
            nmax[j] = 1
            continue
        if event[v] == LEAF:
            g[j, 1] = 1.0
            nmax[j] = 1
        else:
            if c0[v] >= 0 and alive[c0[v]]:
                kid0[j] = pos[c0[v]]
            if c1[v] >= 0 and alive[c1[v]]:
                if kid0[j] < 0:
                    kid0[j] = pos[c1[v]]
                else:
                    kid1[j] = pos[c1[v]]
            a = kid0[j]
            b = kid1[j]
            if b < 0:
                nmax[j] = nmax[a]
                for x in range(S):
                    g[j, x] = f[a, x]
            else:
                nmax[j] = nmax[a] + nmax[b]
                for x in range(1, nmax[a] + 1):
                    for y in range(1, nmax[b] + 1):
                        g[j, x + y] += f[a, x] * f[b, y]
        transition_matrix(nmax[j], time[parent[v]] - time[v], P[j])
        for x in range(1, nmax[j] + 1):
            if g[j, x] > 0.0:
                for y in range(1, x + 1):
                    f[j, y] += g[j, x] * P[j, x, y]
    # counts at the top and bottom of every edge, top-down
    topc = np.zeros(k, np.int64)
    botc = np.zeros(k, np.int64)
    topc[0] = 1
    w = np.zeros(S)
    for j in range(k):
        if proxy[j]:
            continue
        m = topc[j]
        for x in range(S):
            w[x] = g[j, x] * P[j, x, m] if x >= m else 0.0
        nb = _draw_index(state, w, m, nmax[j])
        if nb < 0:
            return -1
        botc[j] = nb
        a = kid0[j]
        b = kid1[j]
        if a >= 0 and b < 0:
            topc[a] = nb
        elif b >= 0:
            for x in range(S):
                w[x] = 0.0
            for x in range(1, nb):
                if x <= nmax[a] and nb - x <= nmax[b]:
                    w[x] = f[a, x] * f[b, nb - x]
            x = _draw_index(state, w, 1, nb - 1)
            if x < 0:
                return -1
            topc[a] = x
            topc[b] = nb - x
    # coalescence times per edge
    offs = np.zeros(k + 1, np.int64)
    for j in range(k):
        offs[j + 1] = offs[j] + (0 if proxy[j] else botc[j] - topc[j])
    times = np.zeros(max(offs[k], 1))
    for j in range(k):
        if proxy[j] or botc[j] == topc[j]:
            continue
        v = comp_nodes[j]
        got = bridge_times(state, botc[j], topc[j], time[parent[v]] - time[v], times[offs[j]:])
        if got != botc[j] - topc[j]:
            return -1
    # replay bottom-up with uniform pairs
    lin_top = 0
    for j in range(k - 1, -1, -1):
        v = comp_nodes[j]
        if proxy[j]:
            seg[v] = lin_top
            lin[lin_top] = comp_out[v]
            lin_top += 1
            continue
        if event[v] == LEAF:
            seg[v] = lin_top
            lin[lin_top] = gene_of_leaf[v]
            lin_top += 1
        else:
            seg[v] = _gather(v, c0, c1, alive, seg, lin, lin_top)
        start = seg[v]
        if lin_top - start != botc[j]:
            return -1
        for e in range(offs[j], offs[j + 1]):
            m = lin_top - start
            i = randbelow(state, m)
            i2 = randbelow(state, m - 1)
            if i2 >= i:
                i2 += 1
            a = lin[start + i]
            b = lin[start + i2]
            gg = g_next
            g_next += 1
            g_c0[gg] = a
            g_c1[gg] = b
            g_parent[gg] = -1
            g_time[gg] = time[v] + times[e]
            g_locus[gg] = v
            g_parent[a] = gg
            g_parent[b] = gg
            lo = i if i < i2 else i2
            hi = i2 if i < i2 else i
            lin[start + lo] = gg
            lin[start + hi] = lin[lin_top - 1]
            lin_top -= 1
    if lin_top != 1:
        return -1
    comp_out[croot] = lin[0]
    return g_next


# --------------------------------------------------------------------------
# Gene tree queries


@njit(cache=True)
def mrca_time(u, v, g_parent, g_time):
    while u != v:
        if g_time[u] <= g_time[v]:
            u = g_parent[u]
        else:
            v = g_parent[v]
    return g_time[u]


@njit(cache=True)
def quartet_topology_of(leaves, g_parent, g_time):
    """Unrooted topology index of four gene leaves: the lowest pairwise MRCA is a cherry."""
    best = np.inf
    best_pair = -1
    for p in range(6):
        t = mrca_time(leaves[PAIR_X[p]], leaves[PAIR_Y[p]], g_parent, g_time)
        if t < best:
            best = t
            best_pair = p
    return best_pair // 2


@njit(cache=True)
def quartet_dp(order, c0, c1, leaf_q, weight, cnt, pp, sub, anc, out):
    """Number of one-copy-per-species 4-tuples inducing each quartet topology.

    ``order`` lists node ids children-first, the root last. ``leaf_q[v]`` is the
    quartet position (0..3) of leaf v or -1, ``weight[v]`` its multiplicity
    (0 or 1). ``out[s]`` receives the count of split s in (01|23, 02|13, 03|12).
    """
    m = order.shape[0]
    for jj in range(m):
        v = order[jj]
        a = c0[v]
        b = c1[v]
        if a < 0:
            for q in range(4):
                cnt[v, q] = 0
            if leaf_q[v] >= 0:
                cnt[v, leaf_q[v]] = weight[v]
            for p in range(6):
                pp[v, p] = 0
                sub[v, p] = 0
        else:
            for q in range(4):
                cnt[v, q] = cnt[a, q] + cnt[b, q]
            for p in range(6):
                x = PAIR_X[p]
                y = PAIR_Y[p]
                val = cnt[a, x] * cnt[b, y] + cnt[b, x] * cnt[a, y]
                pp[v, p] = val
                sub[v, p] = val + sub[a, p] + sub[b, p]
    root = order[m - 1]
    for p in range(6):
        anc[root, p] = 0
    for jj in range(m - 1, -1, -1):
        v = order[jj]
        a = c0[v]
        if a >= 0:
            b = c1[v]
            for p in range(6):
                anc[a, p] = anc[v, p] + pp[v, p]
                anc[b, p] = anc[v, p] + pp[v, p]
    for s in range(3):
        pxy = 2 * s
        pzw = 2 * s + 1
        x = PAIR_X[pxy]
        y = PAIR_Y[pxy]
        z = PAIR_X[pzw]
        w = PAIR_Y[pzw]
        total_xy = sub[root, pxy]
        total_zw = sub[root, pzw]
        cherry_xy = 0
        cherry_zw = 0
        both = 0
        for jj in range(m):
            v = order[jj]
            if c0[v] < 0:
                continue
            if pp[v, pxy] != 0:
                cherry_xy += pp[v, pxy] * (cnt[root, z] - cnt[v, z]) * (cnt[root, w] - cnt[v, w])
                both += pp[v, pxy] * (total_zw - sub[v, pzw] - anc[v, pzw])
            if pp[v, pzw] != 0:
                cherry_zw += pp[v, pzw] * (cnt[root, x] - cnt[v, x]) * (cnt[root, y] - cnt[v, y])
        out[s] = cherry_xy + cherry_zw - both


# --------------------------------------------------------------------------
# Fused replicate kernels


@njit(cache=True)
def _alloc_locus(cap):
    return (np.empty(cap, np.int64), np.empty(cap, np.int64), np.empty(cap, np.int64),
            np.empty(cap, np.int64), np.empty(cap, np.int64), np.empty(cap, np.int64),
            np.empty(cap, np.float64),
            np.empty(cap + 2, np.int64), np.empty(cap + 2, np.float64), np.empty(cap + 2, np.int64),
            np.empty(cap + 2, np.int64), np.empty(cap + 2, np.int64))


@njit(cache=True)
def _alloc_gene(cap):
    g = 2 * cap
    return (np.empty(g, np.int64), np.empty(g, np.int64), np.empty(g, np.int64),
            np.empty(g, np.float64), np.empty(g, np.int64), np.empty(cap, np.int64),
            np.empty(cap, np.bool_), np.empty(cap, np.int64), np.empty(cap, np.int64),
            np.empty(cap, np.int64), np.empty(cap, np.int64), np.empty(cap, np.bool_))


@njit(cache=True)
def _locus_with_growth(state, sp_c0, sp_c1, sp_time, lam, mu, cap):
    """Simulate one locus tree, growing buffers as needed. Returns (n, cap, arrays)."""
    saved = state.copy()
    while True:
        L = _alloc_locus(cap)
        n = simulate_locus(state, sp_c0, sp_c1, sp_time, lam, mu,
                           L[0], L[1], L[2], L[3], L[4], L[5], L[6],
                           L[7], L[8], L[9], L[10], L[11])
        if n >= 0:
            return n, cap, L
        if cap >= MAX_LOCUS_NODES:
            return -1, cap, L
        cap *= 2
        state[:] = saved


@njit(cache=True)
def simulate_replicate(state, sp_c0, sp_c1, sp_time, lam, mu, max_attempts, direct_after, cap):
    """One DLCoal draw: locus tree, pruning and gene tree on the observed part.

    Returns (status, n_locus, n_gene, n_gene_leaves, locus arrays, gene arrays, bad).
    """
    n, cap, L = _locus_with_growth(state, sp_c0, sp_c1, sp_time, lam, mu, cap)
    G = _alloc_gene(max(cap, 1))
    bad = np.full(1, -1, np.int64)
    if n < 0:
        return CAPACITY, 0, 0, 0, L, G, bad
    alive = G[6]
    mark_alive(n, L[1], L[2], L[3], alive)
    status, ng, nl = simulate_bmsc(state, n, L[0], L[1], L[2], L[3], L[5], L[6], alive, max_attempts, direct_after,
                                   G[0], G[1], G[2], G[3], G[4], G[5],
                                   G[11], G[7], G[8], G[9], G[10], bad)
    return status, n, ng, nl, L, G, bad


@njit(cache=True)
def _leaf_counts(n, event, species, sp_index, counts):
    for i in range(counts.shape[0]):
        counts[i] = 0
    for v in range(n):
        if event[v] == LEAF:
            k = sp_index[species[v]]
            if k >= 0:
                counts[k] += 1


@njit(cache=True)
def _pick_copy(state, ng_leaves, g_locus, species, target, count):
    """Uniform copy among the ``count`` gene leaves of species node ``target``."""
    r = randbelow(state, count)
    seen = 0
    for g in range(ng_leaves):
        if species[g_locus[g]] == target:
            if seen == r:
                return g
            seen += 1
    return -1


@njit(cache=True)
def _spec_rank(n, event, species, R, rank):
    I = 0
    for v in range(n):
        if event[v] == SPEC and species[v] == R:
            rank[v] = I
            I += 1
        else:
            rank[v] = -1
    return I


@njit(cache=True)
def _lineage_at(leaf_locus, parent, event, species, R, rank):
    v = leaf_locus
    while v >= 0:
        if event[v] == SPEC and species[v] == R:
            return rank[v]
        v = parent[v]
    return -1


@njit(cache=True)
def classify_event(ia, ib, ic, idd, caterpillar):
    """Code of the root configuration from the equality pattern of lineages at R."""
    if caterpillar:
        ab = ia == ib
        ac = ia == ic
        bc = ib == ic
        if ab and ac:
            return 14  # K
        if ab:
            return 7  # G_ab: ab - c
        if ac:
            return 8  # G_ac: ac - b
        if bc:
            return 15  # G_bc: bc - a
        return 0  # E
    ab = ia == ib
    ac = ia == ic
    ad = ia == idd
    bc = ib == ic
    bd = ib == idd
    cd = ic == idd
    n_eq = ab + ac + ad + bc + bd + cd
    if n_eq == 6:
        return 14
    if n_eq == 0:
        return 0
    if n_eq == 3:
        if ab and ac:
            return 10  # H_abc
        if ab and ad:
            return 11  # H_abd
        if ac and ad:
            return 12  # H_acd
        return 13  # H_bcd
    if n_eq == 2:
        if ab:
            return 7  # G_ab: ab - cd
        if ac:
            return 8
        return 9
    if ab:
        return 1
    if ac:
        return 2
    if ad:
        return 3
    if bc:
        return 4
    if bd:
        return 5
    return 6


@njit(cache=True)
def run_gap_chunk(key, start, count, sp_parent, sp_c0, sp_c1, sp_time, lam, mu,
                  quartet, R, caterpillar, max_attempts, direct_after,
                  out_counts, out_I, out_ix, out_event, out_topo, out_nc, out_cab):
    """Fused quartet replicates ``start .. start+count`` of the stream family ``key``.

    ``quartet`` holds the species node ids of A, B, C, D. Returns
    (status, failing replicate, failing locus node).
    """
    n_sp = sp_parent.shape[0]
    state = np.zeros(4, np.uint64)
    sp_index = np.full(n_sp, -1, np.int64)
    for k in range(4):
        sp_index[quartet[k]] = k
    t_R = sp_time[R]
    counts = np.zeros(4, np.int64)
    chosen = np.zeros(4, np.int64)
    ix = np.zeros(4, np.int64)
    cap = 64
    n_use = 3 if caterpillar else 4
    for r in range(count):
        idx = start + r
        seed_state(state, key, idx)
        n, cap, L = _locus_with_growth(state, sp_c0, sp_c1, sp_time, lam, mu, cap)
        if n < 0:
            return CAPACITY, idx, -1
        l_parent, l_c0, l_c1, l_event, l_species, l_daughter, l_time = L[0], L[1], L[2], L[3], L[4], L[5], L[6]
        _leaf_counts(n, l_event, l_species, sp_index, counts)
        for k in range(4):
            out_counts[r, k] = counts[k]
        rank = np.empty(n, np.int64)
        I = _spec_rank(n, l_event, l_species, R, rank)
        out_I[r] = I
        out_topo[r] = -1
        out_event[r] = -1
        out_nc[r] = False
        out_cab[r] = False
        for k in range(4):
            out_ix[r, k] = -1
        if counts[0] == 0 or counts[1] == 0 or counts[2] == 0 or counts[3] == 0:
            continue
        G = _alloc_gene(cap)
        alive = G[6]
        mark_alive(n, l_c0, l_c1, l_event, alive)
        bad = np.full(1, -1, np.int64)
        status, ng, nl = simulate_bmsc(state, n, l_parent, l_c0, l_c1, l_event, l_daughter, l_time, alive,
                                       max_attempts, direct_after, G[0], G[1], G[2], G[3], G[4], G[5],
                                       G[11], G[7], G[8], G[9], G[10], bad)
        if status != OK:
            return status, idx, bad[0]
        g_parent, g_time, g_locus = G[0], G[3], G[4]
        for k in range(4):
            chosen[k] = _pick_copy(state, nl, g_locus, l_species, quartet[k], counts[k])
        out_topo[r] = quartet_topology_of(chosen, g_parent, g_time)
        for k in range(4):
            ix[k] = _lineage_at(g_locus[chosen[k]], l_parent, l_event, l_species, R, rank)
            out_ix[r, k] = ix[k] if k < n_use else -1
        out_event[r] = classify_event(ix[0], ix[1], ix[2], ix[3], caterpillar)
        nc = True
        for a in range(n_use):
            for b in range(a + 1, n_use):
                if mrca_time(chosen[a], chosen[b], g_parent, g_time) < t_R:
                    nc = False
        out_nc[r] = nc
        out_cab[r] = mrca_time(chosen[0], chosen[1], g_parent, g_time) < t_R
    return OK, -1, -1


@njit(cache=True)
def run_survival_chunk(key, start, count, sp_c0, sp_c1, sp_time, lam, mu, out):
    """Per replicate and species node: copies at the vertex (SPEC nodes) or at the leaf."""
    state = np.zeros(4, np.uint64)
    cap = 64
    n_sp = sp_c0.shape[0]
    for r in range(count):
        seed_state(state, key, start + r)
        n, cap, L = _locus_with_growth(state, sp_c0, sp_c1, sp_time, lam, mu, cap)
        if n < 0:
            return CAPACITY, start + r
        for s in range(n_sp):
            out[r, s] = 0
        event, species = L[3], L[4]
        for v in range(n):
            if event[v] == SPEC or event[v] == LEAF:
                out[r, species[v]] += 1
    return OK, -1


@njit(cache=True)
def run_reconstruction_trial(key, trial, k_max, sp_c0, sp_c1, sp_time, lam, mu, species_leaves,
                             quartets, max_attempts, direct_after, out_one, out_multi):
    """Per-gene quartet tallies for one trial of ``k_max`` gene families.

    ``species_leaves`` lists the species leaf node ids in taxon order and
    ``quartets`` holds taxon indices. Gene family i of the trial uses stream
    ``trial * k_max + i``. ASTRAL-one picks one copy per species per gene tree
    and reuses it for every quartet.
    """
    n_taxa = species_leaves.shape[0]
    n_q = quartets.shape[0]
    n_sp = sp_c0.shape[0]
    taxon_of = np.full(n_sp, -1, np.int64)
    for i in range(n_taxa):
        taxon_of[species_leaves[i]] = i
    state = np.zeros(4, np.uint64)
    counts = np.zeros(n_taxa, np.int64)
    sel = np.zeros(n_taxa, np.int64)
    four = np.zeros(4, np.int64)
    res = np.zeros(3, np.int64)
    cap = 64
    for i in range(k_max):
        for q in range(n_q):
            for s in range(3):
                out_one[i, q, s] = 0
                out_multi[i, q, s] = 0
        seed_state(state, key, trial * k_max + i)
        n, cap, L = _locus_with_growth(state, sp_c0, sp_c1, sp_time, lam, mu, cap)
        if n < 0:
            return CAPACITY, i, -1
        l_parent, l_c0, l_c1, l_event, l_species, l_daughter, l_time = L[0], L[1], L[2], L[3], L[4], L[5], L[6]
        G = _alloc_gene(cap)
        alive = G[6]
        n_leaves = mark_alive(n, l_c0, l_c1, l_event, alive)
        if n_leaves == 0:
            continue
        bad = np.full(1, -1, np.int64)
        status, ng, nl = simulate_bmsc(state, n, l_parent, l_c0, l_c1, l_event, l_daughter, l_time, alive,
                                       max_attempts, direct_after, G[0], G[1], G[2], G[3], G[4], G[5],
                                       G[11], G[7], G[8], G[9], G[10], bad)
        if status != OK:
            return status, i, bad[0]
        g_parent, g_c0, g_c1, g_time, g_locus = G[0], G[1], G[2], G[3], G[4]
        for s in range(n_taxa):
            counts[s] = 0
        for g in range(nl):
            counts[taxon_of[l_species[g_locus[g]]]] += 1
        for s in range(n_taxa):
            sel[s] = -1
            if counts[s] > 0:
                sel[s] = _pick_copy(state, nl, g_locus, l_species, species_leaves[s], counts[s])
        order = np.arange(ng)
        leaf_q = np.full(ng, -1, np.int64)
        weight = np.zeros(ng, np.int64)
        cnt = np.empty((ng, 4), np.int64)
        pp = np.empty((ng, 6), np.int64)
        sub = np.empty((ng, 6), np.int64)
        anc = np.empty((ng, 6), np.int64)
        for q in range(n_q):
            ok = True
            for k in range(4):
                if counts[quartets[q, k]] == 0:
                    ok = False
            if not ok:
                continue
            for k in range(4):
                four[k] = sel[quartets[q, k]]
            out_one[i, q, quartet_topology_of(four, g_parent, g_time)] = 1
            for g in range(nl):
                leaf_q[g] = -1
                weight[g] = 0
                t = taxon_of[l_species[g_locus[g]]]
                for k in range(4):
                    if quartets[q, k] == t:
                        leaf_q[g] = k
                        weight[g] = 1
            quartet_dp(order, g_c0, g_c1, leaf_q, weight, cnt, pp, sub, anc, res)
            for s in range(3):
                out_multi[i, q, s] = res[s]
    return OK, -1, -1


@njit(cache=True)
def tally_all_quartets(order, c0, c1, leaf_taxon, weight, n_taxa, quartets, out):
    """Add one gene tree's 4-tuple counts for every quartet to ``out`` (Q x 3).

    ``leaf_taxon`` gives the taxon index of each leaf (-1 to ignore) and
    ``weight`` whether the leaf takes part (1) or not (0).
    """
    m = order.shape[0]
    n_nodes = c0.shape[0]
    cnt = np.empty((n_nodes, 4), np.int64)
    pp = np.empty((n_nodes, 6), np.int64)
    sub = np.empty((n_nodes, 6), np.int64)
    anc = np.empty((n_nodes, 6), np.int64)
    leaf_q = np.full(n_nodes, -1, np.int64)
    res = np.zeros(3, np.int64)
    present = np.zeros(n_taxa, np.int64)
    for jj in range(m):
        v = order[jj]
        if c0[v] < 0 and leaf_taxon[v] >= 0 and weight[v] > 0:
            present[leaf_taxon[v]] += 1
    slot = np.full(n_taxa, -1, np.int64)
    for q in range(quartets.shape[0]):
        ok = True
        for k in range(4):
            if present[quartets[q, k]] == 0:
                ok = False
        if not ok:
            continue
        for k in range(4):
            slot[quartets[q, k]] = k
        for jj in range(m):
            v = order[jj]
            leaf_q[v] = slot[leaf_taxon[v]] if (c0[v] < 0 and leaf_taxon[v] >= 0) else -1
        quartet_dp(order, c0, c1, leaf_q, weight, cnt, pp, sub, anc, res)
        for s in range(3):
            out[q, s] += res[s]
        for k in range(4):
            slot[quartets[q, k]] = -1
