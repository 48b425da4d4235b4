"""Vectorized numpy kernels. Reference path when numba is disabled."""

from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi
_MAX_CELLS = 1 << 30
_OFFSETS = [(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)]


def _cell_keys(xs, ys, radius):
    cx = np.floor((xs - xs.min()) / radius).astype(np.int64)
    cy = np.floor((ys - ys.min()) / radius).astype(np.int64)
    ny = int(cy.max()) + 3
    if int(cx.max()) + 3 > _MAX_CELLS or ny > _MAX_CELLS:
        raise ValueError("point spread too large for the hash grid")
    # shift by one so that neighbor offsets never go negative
    return cx + 1, cy + 1, ny


def pairs_within(xs, ys, radius):
    """Index pairs (i < j) with Euclidean distance <= radius.

    Uniform hash grid with cell size ``radius``; returns ``(ia, ib, dist)``
    sorted by ``(ia, ib)``.
    """
    n = xs.shape[0]
    if n < 2:
        return (np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.float64))
    cx, cy, ny = _cell_keys(xs, ys, radius)
    keys = cx * ny + cy
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    idx = np.arange(n, dtype=np.int64)
    ia_parts, ib_parts = [], []
    for dx, dy in _OFFSETS:
        nk = (cx + dx) * ny + (cy + dy)
        lo = np.searchsorted(sorted_keys, nk, side="left")
        hi = np.searchsorted(sorted_keys, nk, side="right")
        counts = hi - lo
        total = int(counts.sum())
        if total == 0:
            continue
        starts = np.repeat(lo - (np.cumsum(counts) - counts), counts)
        jj = order[starts + np.arange(total)]
        ii = np.repeat(idx, counts)
        keep = ii < jj
        ia_parts.append(ii[keep])
        ib_parts.append(jj[keep])
    if not ia_parts:
        return (np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.float64))
    ia = np.concatenate(ia_parts)
    ib = np.concatenate(ib_parts)
    ddx = xs[ia] - xs[ib]
    ddy = ys[ia] - ys[ib]
    d = np.sqrt(ddx * ddx + ddy * ddy)
    hit = d <= radius
    ia, ib, d = ia[hit], ib[hit], d[hit]
    srt = np.argsort(ia * n + ib, kind="stable")
    return ia[srt], ib[srt], d[srt]


def _walk(i, node_x, node_y, paths, path_len, seg, off, step, xs, ys):
    """Scalar walk along a path; returns True on arrival at the path end."""
    remaining = step
    last = path_len[i] - 1
    while True:
        u = paths[i, seg[i]]
        v = paths[i, seg[i] + 1]
        ex = node_x[v] - node_x[u]
        ey = node_y[v] - node_y[u]
        seglen = math.sqrt(ex * ex + ey * ey)
        if off[i] + remaining < seglen:
            off[i] = off[i] + remaining
            frac = off[i] / seglen
            xs[i] = node_x[u] + ex * frac
            ys[i] = node_y[u] + ey * frac
            return False
        remaining = remaining - (seglen - off[i])
        seg[i] += 1
        off[i] = 0.0
        if seg[i] >= last:
            xs[i] = node_x[v]
            ys[i] = node_y[v]
            return True


def _move(m, step, node_x, node_y, paths, path_len, seg, off, xs, ys, arrived):
    u = paths[m, seg[m]]
    v = paths[m, seg[m] + 1]
    ex = node_x[v] - node_x[u]
    ey = node_y[v] - node_y[u]
    seglen = np.sqrt(ex * ex + ey * ey)
    new_off = off[m] + step
    inside = new_off < seglen
    mi = m[inside]
    off[mi] = new_off[inside]
    frac = off[mi] / seglen[inside]
    xs[mi] = node_x[u[inside]] + ex[inside] * frac
    ys[mi] = node_y[u[inside]] + ey[inside] * frac
    for k in np.flatnonzero(~inside):
        i = m[k]
        if _walk(i, node_x, node_y, paths, path_len, seg, off, step[k], xs, ys):
            arrived[i] = True


def advance(
    node_x, node_y, paths, path_len, seg, off, moving, speed, dt,
    distancing, radius, wait, patience, xs, ys, arrived, paused,
):
    """Move every walking agent one tick along its routed path.

    With ``distancing`` on, a walker pauses when its step would end within
    ``radius`` of a walker ahead of it on its own remaining route (further
    along the same directed edge, or on any later edge of the route) and
    closer to it than before. Walkers on other routes, oncoming ones
    included, never block. A walker blocked for more than ``patience`` ticks
    moves anyway (0 disables this). Decisions use start-of-tick positions;
    ``wait`` counts consecutive blocked ticks; ``arrived`` and ``paused``
    are overwritten.
    """
    arrived[:] = False
    paused[:] = False
    wait[~moving] = 0
    m = np.flatnonzero(moving)
    if m.size == 0:
        return
    step = speed[m] * dt
    if not distancing:
        wait[m] = 0
        _move(m, step, node_x, node_y, paths, path_len, seg, off, xs, ys, arrived)
        return
    seg2, off2, xs2, ys2 = seg.copy(), off.copy(), xs.copy(), ys.copy()
    arr2 = np.zeros_like(arrived)
    _move(m, step, node_x, node_y, paths, path_len, seg2, off2, xs2, ys2, arr2)

    # directed-edge codes of each walker's remaining route, -1 elsewhere
    n_nodes = node_x.shape[0]
    k = np.arange(paths.shape[1] - 1)
    codes = paths[m, :-1] * n_nodes + paths[m, 1:]
    live = (k[None, :] >= seg[m][:, None]) & (k[None, :] < path_len[m][:, None] - 1)
    codes = np.where(live, codes, -1)
    cur = paths[m, seg[m]] * n_nodes + paths[m, seg[m] + 1]
    hit = codes[:, None, :] == cur[None, :, None]
    on_route = hit.any(axis=2)
    same_edge = np.argmax(hit, axis=2) == seg[m][:, None]
    o = off[m]
    further = (o[None, :] > o[:, None]) | ((o[None, :] == o[:, None]) & (m[None, :] < m[:, None]))
    ahead = on_route & (~same_edge | further)
    np.fill_diagonal(ahead, False)

    d_old = np.hypot(xs[m][None, :] - xs[m][:, None], ys[m][None, :] - ys[m][:, None])
    d_new = np.hypot(xs[m][None, :] - xs2[m][:, None], ys[m][None, :] - ys2[m][:, None])
    blocked = np.any(ahead & (d_new <= radius) & (d_new < d_old), axis=1)
    wait[m] = np.where(blocked, wait[m] + 1, 0)
    hold = blocked & ((patience <= 0) | (wait[m] <= patience))
    paused[m[hold]] = True
    go = m[~hold]
    seg[go] = seg2[go]
    off[go] = off2[go]
    xs[go] = xs2[go]
    ys[go] = ys2[go]
    arrived[go] = arr2[go]


def torus_gap(R, r, a, b, t0, dt, n):
    """Embedded 3-D distance between two linear torus flows at n samples."""
    t = t0 + dt * np.arange(n, dtype=np.float64)
    pts = []
    for x0, y0, lam, mu in (a, b):
        th = np.mod(x0 + lam * t, TWO_PI)
        ph = np.mod(y0 + mu * t, TWO_PI)
        ring = R + r * np.cos(th)
        pts.append((ring * np.cos(ph), ring * np.sin(ph), r * np.sin(th)))
    (ax, ay, az), (bx, by, bz) = pts
    return np.sqrt((ax - bx) ** 2 + (ay - by) ** 2 + (az - bz) ** 2)


def hit_runs(dist, radius):
    """Maximal runs of consecutive samples with dist <= radius.

    Returns ``(starts, ends, argmins)`` as inclusive sample indices.
    """
    hit = dist <= radius
    if not hit.any():
        empty = np.empty(0, np.int64)
        return empty, empty, empty
    padded = np.concatenate(([False], hit, [False])).astype(np.int8)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    argmins = np.array(
        [s + int(np.argmin(dist[s : e + 1])) for s, e in zip(starts, ends)],
        dtype=np.int64,
    )
    return starts.astype(np.int64), ends.astype(np.int64), argmins


def track_step(tick, keys, dist, x, y, bridge, last, start, dmin, px, py, open_keys, n_open):
    """Advance dense per-pair run state by one tick.

    ``last[k] < 0`` marks pair k as not open. Runs whose pair has been absent
    for more than ``bridge`` ticks close; they are returned sorted by key as
    (keys, start, last, dmin, x, y) and their slot is reset.
    """
    keys = np.asarray(keys, dtype=np.int64)
    new = last[keys] < 0
    kn = keys[new]
    start[kn] = tick
    dmin[kn] = dist[new]
    px[kn] = x[new]
    py[kn] = y[new]
    old = ~new
    ko = keys[old]
    better = dist[old] < dmin[ko]
    kb = ko[better]
    dmin[kb] = dist[old][better]
    px[kb] = x[old][better]
    py[kb] = y[old][better]
    last[keys] = tick
    ok = np.concatenate((open_keys[:n_open], kn))
    stale = (tick - last[ok]) > bridge
    ck = np.sort(ok[stale])
    out = (ck, start[ck].copy(), last[ck].copy(), dmin[ck].copy(), px[ck].copy(), py[ck].copy())
    last[ck] = -1
    keep = ok[~stale]
    open_keys[: keep.shape[0]] = keep
    return (keep.shape[0],) + out


def countdown(timed, remaining):
    """Decrement running timers; return indices that reached zero."""
    remaining[timed] -= 1
    return np.flatnonzero(timed & (remaining <= 0))


def accumulate_timers(state, paused, timer_ticks):
    """Add one tick to each in-store agent's timer column (shopping, idle,
    waiting, checkout); return (in_store, shopping, queuing, at_checkout, idle)."""
    present = (state != 0) & (state != 4)
    queue = present & (state == 2)
    idle = present & ~queue & paused
    active = present & ~queue & ~paused
    shop = active & (state == 1)
    check = active & (state == 3)
    timer_ticks[shop, 0] += 1
    timer_ticks[idle, 1] += 1
    timer_ticks[queue, 2] += 1
    timer_ticks[check, 3] += 1
    return (
        int(present.sum()), int(shop.sum()), int(queue.sum()), int(check.sum()), int(idle.sum())
    )


def proximity_step(
    tick, xs, ys, idx, key_base, radius, near_radius, bridge,
    h_last, h_start, h_dmin, h_x, h_y, h_open, h_n,
    n_last, n_start, n_dmin, n_x, n_y, n_open, n_n,
):
    """One tick of contact tracking for the agents listed in ``idx``.

    Pairs within ``near_radius`` feed the near-contact runs; the subset
    within ``radius`` feeds the contact runs. Returns (contact runs still
    open, near runs still open, closed contact runs as six arrays, number
    of closed near runs that never came within ``radius``).
    """
    if idx.shape[0] >= 2:
        ia, ib, d = pairs_within(xs[idx], ys[idx], near_radius)
    else:
        ia = ib = np.empty(0, np.int64)
        d = np.empty(0, np.float64)
    a = idx[ia]
    b = idx[ib]
    keys = a * key_base + b
    mx = 0.5 * (xs[a] + xs[b])
    my = 0.5 * (ys[a] + ys[b])
    hit = d <= radius
    h = track_step(
        tick, keys[hit], d[hit], mx[hit], my[hit], bridge,
        h_last, h_start, h_dmin, h_x, h_y, h_open, h_n,
    )
    nr = track_step(tick, keys, d, mx, my, bridge, n_last, n_start, n_dmin, n_x, n_y, n_open, n_n)
    return (h[0], nr[0]) + tuple(h[1:]) + (int(np.count_nonzero(nr[4] > radius)),)
