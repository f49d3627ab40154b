"""Boykov-Kolmogorov max-flow / min-cut on graphs with two terminals.

Arcs are stored in pairs: arc ``2e`` runs tail->head of edge ``e`` and arc
``2e + 1`` is its reverse, so ``a ^ 1`` is always the sister arc.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_TERMINAL = -2
_ORPHAN = -3
_NONE = -1
_INF_D = 1 << 40


@njit(cache=True)
def _push_back(buf, start, size, x):
    n = buf.shape[0]
    buf[(start + size) % n] = x
    return size + 1


@njit(cache=True)
def _bk_solve(n, first, adj, head, rcap, trcap):
    parent = np.full(n, _NONE, np.int64)
    is_sink = np.zeros(n, np.bool_)
    ts = np.zeros(n, np.int64)
    dist = np.zeros(n, np.int64)

    active = np.empty(n, np.int64)
    in_active = np.zeros(n, np.bool_)
    a_start = 0
    a_size = 0

    orph = np.empty(n, np.int64)
    o_start = 0
    o_size = 0

    for i in range(n):
        if trcap[i] != 0.0:
            parent[i] = _TERMINAL
            is_sink[i] = trcap[i] < 0.0
            dist[i] = 1
            a_size = _push_back(active, a_start, a_size, i)
            in_active[i] = True

    flow = 0.0
    time = 0
    current = -1
    while True:
        i = current
        if i >= 0 and parent[i] == _NONE:
            i = -1
        if i < 0:
            while a_size > 0:
                i = active[a_start]
                a_start = (a_start + 1) % n
                a_size -= 1
                in_active[i] = False
                if parent[i] != _NONE:
                    break
                i = -1
            if i < 0:
                break

        # grow the tree of i
        mid = -1
        if not is_sink[i]:
            for k in range(first[i], first[i + 1]):
                a = adj[k]
                if rcap[a] > 0.0:
                    j = head[a]
                    if parent[j] == _NONE:
                        is_sink[j] = False
                        parent[j] = a ^ 1
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
                        if not in_active[j]:
                            a_size = _push_back(active, a_start, a_size, j)
                            in_active[j] = True
                    elif is_sink[j]:
                        mid = a
                        break
                    elif ts[j] <= ts[i] and dist[j] > dist[i]:
                        parent[j] = a ^ 1
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
        else:
            for k in range(first[i], first[i + 1]):
                a = adj[k]
                if rcap[a ^ 1] > 0.0:
                    j = head[a]
                    if parent[j] == _NONE:
                        is_sink[j] = True
                        parent[j] = a ^ 1
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
                        if not in_active[j]:
                            a_size = _push_back(active, a_start, a_size, j)
                            in_active[j] = True
                    elif not is_sink[j]:
                        mid = a ^ 1
                        break
                    elif ts[j] <= ts[i] and dist[j] > dist[i]:
                        parent[j] = a ^ 1
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1

        time += 1
        if mid < 0:
            current = -1
            continue
        current = i

        # augment along source-tree path, mid, sink-tree path
        b = rcap[mid]
        x = head[mid ^ 1]
        while parent[x] != _TERMINAL:
            pa = parent[x]
            if rcap[pa ^ 1] < b:
                b = rcap[pa ^ 1]
            x = head[pa]
        if trcap[x] < b:
            b = trcap[x]
        x = head[mid]
        while parent[x] != _TERMINAL:
            pa = parent[x]
            if rcap[pa] < b:
                b = rcap[pa]
            x = head[pa]
        if -trcap[x] < b:
            b = -trcap[x]

        rcap[mid ^ 1] += b
        rcap[mid] -= b
        x = head[mid ^ 1]
        while parent[x] != _TERMINAL:
            pa = parent[x]
            rcap[pa] += b
            rcap[pa ^ 1] -= b
            if rcap[pa ^ 1] == 0.0:
                parent[x] = _ORPHAN
                o_start = (o_start - 1) % n
                orph[o_start] = x
                o_size += 1
            x = head[pa]
        trcap[x] -= b
        if trcap[x] == 0.0:
            parent[x] = _ORPHAN
            o_start = (o_start - 1) % n
            orph[o_start] = x
            o_size += 1
        x = head[mid]
        while parent[x] != _TERMINAL:
            pa = parent[x]
            rcap[pa ^ 1] += b
            rcap[pa] -= b
            if rcap[pa] == 0.0:
                parent[x] = _ORPHAN
                o_start = (o_start - 1) % n
                orph[o_start] = x
                o_size += 1
            x = head[pa]
        trcap[x] += b
        if trcap[x] == 0.0:
            parent[x] = _ORPHAN
            o_start = (o_start - 1) % n
            orph[o_start] = x
            o_size += 1
        flow += b

        # adopt orphans
        while o_size > 0:
            o = orph[o_start]
            o_start = (o_start + 1) % n
            o_size -= 1
            sink_side = is_sink[o]
            best = -1
            d_min = _INF_D
            for k in range(first[o], first[o + 1]):
                a0 = adj[k]
                cap = rcap[a0] if sink_side else rcap[a0 ^ 1]
                if cap <= 0.0:
                    continue
                j = head[a0]
                if is_sink[j] != sink_side or parent[j] == _NONE:
                    continue
                d = 0
                jj = j
                while True:
                    if ts[jj] == time:
                        d += dist[jj]
                        break
                    pa = parent[jj]
                    d += 1
                    if pa == _TERMINAL:
                        ts[jj] = time
                        dist[jj] = 1
                        break
                    if pa == _ORPHAN:
                        d = _INF_D
                        break
                    jj = head[pa]
                if d < _INF_D:
                    if d < d_min:
                        best = a0
                        d_min = d
                    jj = j
                    while ts[jj] != time:
                        ts[jj] = time
                        dist[jj] = d
                        d -= 1
                        jj = head[parent[jj]]
            if best >= 0:
                parent[o] = best
                ts[o] = time
                dist[o] = d_min + 1
                continue
            parent[o] = _NONE
            for k in range(first[o], first[o + 1]):
                a0 = adj[k]
                j = head[a0]
                if is_sink[j] != sink_side or parent[j] == _NONE:
                    continue
                cap = rcap[a0] if sink_side else rcap[a0 ^ 1]
                if cap > 0.0 and not in_active[j]:
                    a_size = _push_back(active, a_start, a_size, j)
                    in_active[j] = True
                pa = parent[j]
                if pa != _TERMINAL and pa != _ORPHAN and head[pa] == o:
                    parent[j] = _ORPHAN
                    o_size = _push_back(orph, o_start, o_size, j)

    sink = np.zeros(n, np.bool_)
    for i in range(n):
        sink[i] = parent[i] != _NONE and is_sink[i]
    return flow, sink


def maxflow(n_nodes, tails, heads, caps, rev_caps, source_caps, sink_caps):
    """Solve an s-t min cut.

    Parameters
    ----------
    n_nodes : int
    tails, heads : int arrays of length m
        Endpoints of the non-terminal edges.
    caps, rev_caps : float arrays of length m
        Capacities tail->head and head->tail.
    source_caps, sink_caps : float arrays of length n_nodes
        Terminal capacities s->i and i->t.

    Returns
    -------
    flow : float
        Max-flow value, equal to the min-cut capacity.
    in_sink : bool array
        True for nodes on the sink side of a minimum cut.
    """
    n = int(n_nodes)
    if n == 0:
        return 0.0, np.zeros(0, bool)
    tails = np.asarray(tails, np.int64)
    heads = np.asarray(heads, np.int64)
    caps = np.asarray(caps, np.float64)
    rev_caps = np.asarray(rev_caps, np.float64)
    src = np.asarray(source_caps, np.float64)
    snk = np.asarray(sink_caps, np.float64)
    if np.any(caps < 0) or np.any(rev_caps < 0) or np.any(src < 0) or np.any(snk < 0):
        raise ValueError("capacities must be non-negative")

    keep = (caps > 0) | (rev_caps > 0)
    tails, heads, caps, rev_caps = tails[keep], heads[keep], caps[keep], rev_caps[keep]
    m = len(tails)
    arc_tail = np.empty(2 * m, np.int64)
    arc_tail[0::2] = tails
    arc_tail[1::2] = heads
    head = np.empty(2 * m, np.int64)
    head[0::2] = heads
    head[1::2] = tails
    rcap = np.empty(2 * m, np.float64)
    rcap[0::2] = caps
    rcap[1::2] = rev_caps
    adj = np.argsort(arc_tail, kind="stable").astype(np.int64)
    first = np.searchsorted(arc_tail[adj], np.arange(n + 1)).astype(np.int64)

    base = np.minimum(src, snk)
    trcap = src - snk
    flow, sink = _bk_solve(n, first, adj, head, rcap, trcap)
    return float(flow + base.sum()), sink
