"""Numba-compiled kernels; same contracts as the numpy versions."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi
_MAX_CELLS = 1 << 30


@njit(cache=True)
def _grid(xs, ys, radius):
    n = xs.shape[0]
    xmin = xs.min()
    ymin = ys.min()
    cx = np.empty(n, np.int64)
    cy = np.empty(n, np.int64)
    ny = 0
    nx = 0
    for i in range(n):
        cx[i] = np.int64(math.floor((xs[i] - xmin) / radius)) + 1
        cy[i] = np.int64(math.floor((ys[i] - ymin) / radius)) + 1
        if cy[i] > ny:
            ny = cy[i]
        if cx[i] > nx:
            nx = cx[i]
    ny += 2
    keys = cx * ny + cy
    return cx, cy, ny, nx + 2, keys


@njit(cache=True)
def _scan(xs, ys, radius, cx, cy, ny, order, sorted_keys, out_a, out_b, out_d, fill):
    n = xs.shape[0]
    count = 0
    for i in range(n):
        for dx in range(-1, 2):
            for dy in range(-1, 2):
                nk = (cx[i] + dx) * ny + (cy[i] + dy)
                lo = np.searchsorted(sorted_keys, nk, side="left")
                hi = np.searchsorted(sorted_keys, nk, side="right")
                for s in range(lo, hi):
                    j = order[s]
                    if j <= i:
                        continue
                    ddx = xs[i] - xs[j]
                    ddy = ys[i] - ys[j]
                    d = math.sqrt(ddx * ddx + ddy * ddy)
                    if d <= radius:
                        if fill:
                            out_a[count] = i
                            out_b[count] = j
                            out_d[count] = d
                        count += 1
    return count


@njit(cache=True)
def _pairs_within(xs, ys, radius):
    n = xs.shape[0]
    cx, cy, ny, nx, keys = _grid(xs, ys, radius)
    order = np.argsort(keys, kind="mergesort")
    sorted_keys = keys[order]
    dummy_i = np.empty(0, np.int64)
    dummy_d = np.empty(0, np.float64)
    k = _scan(xs, ys, radius, cx, cy, ny, order, sorted_keys, dummy_i, dummy_i, dummy_d, False)
    out_a = np.empty(k, np.int64)
    out_b = np.empty(k, np.int64)
    out_d = np.empty(k, np.float64)
    _scan(xs, ys, radius, cx, cy, ny, order, sorted_keys, out_a, out_b, out_d, True)
    srt = np.argsort(out_a * n + out_b, kind="mergesort")
    return out_a[srt], out_b[srt], out_d[srt], nx, ny


def pairs_within(xs, ys, radius):
    """Index pairs (i < j) with Euclidean distance <= radius, sorted."""
    if xs.shape[0] < 2:
        return (np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.float64))
    span = max(float(xs.max() - xs.min()), float(ys.max() - ys.min()))
    if span / radius + 3 > _MAX_CELLS:
        raise ValueError("point spread too large for the hash grid")
    ia, ib, d, _, _ = _pairs_within(
        np.ascontiguousarray(xs, np.float64), np.ascontiguousarray(ys, np.float64), float(radius)
    )
    return ia, ib, d


@njit(cache=True)
def _walk(i, step, node_x, node_y, paths, path_len, seg, off, xs, ys):
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


@njit(cache=True)
def _ahead_on_route(i, j, paths, path_len, seg, off):
    uj = paths[j, seg[j]]
    vj = paths[j, seg[j] + 1]
    for k in range(seg[i], path_len[i] - 1):
        if paths[i, k] == uj and paths[i, k + 1] == vj:
            if k > seg[i]:
                return True
            return off[j] > off[i] or (off[j] == off[i] and j < i)
    return False


@njit(cache=True)
def advance(
    node_x, node_y, paths, path_len, seg, off, moving, speed, dt,
    distancing, radius, wait, patience, xs, ys, arrived, paused,
):
    n = moving.shape[0]
    for i in range(n):
        arrived[i] = False
        paused[i] = False
        if not moving[i]:
            wait[i] = 0
    if not distancing:
        for i in range(n):
            if moving[i]:
                wait[i] = 0
                arrived[i] = _walk(i, speed[i] * dt, node_x, node_y, paths, path_len, seg, off, xs, ys)
        return

    seg2 = seg.copy()
    off2 = off.copy()
    xs2 = xs.copy()
    ys2 = ys.copy()
    arr2 = np.zeros(n, np.bool_)
    for i in range(n):
        if moving[i]:
            arr2[i] = _walk(i, speed[i] * dt, node_x, node_y, paths, path_len, seg2, off2, xs2, ys2)

    for i in range(n):
        if not moving[i]:
            continue
        blocked = False
        for j in range(n):
            if j == i or not moving[j]:
                continue
            if not _ahead_on_route(i, j, paths, path_len, seg, off):
                continue
            d_new = math.hypot(xs[j] - xs2[i], ys[j] - ys2[i])
            if d_new <= radius and d_new < math.hypot(xs[j] - xs[i], ys[j] - ys[i]):
                blocked = True
                break
        if blocked:
            wait[i] += 1
            if patience <= 0 or wait[i] <= patience:
                paused[i] = True
        else:
            wait[i] = 0

    for i in range(n):
        if moving[i] and not paused[i]:
            seg[i] = seg2[i]
            off[i] = off2[i]
            xs[i] = xs2[i]
            ys[i] = ys2[i]
            arrived[i] = arr2[i]


@njit(cache=True)
def torus_gap(R, r, a, b, t0, dt, n):
    out = np.empty(n, np.float64)
    for k in range(n):
        t = t0 + dt * k
        th_a = (a[0] + a[2] * t) % TWO_PI
        ph_a = (a[1] + a[3] * t) % TWO_PI
        th_b = (b[0] + b[2] * t) % TWO_PI
        ph_b = (b[1] + b[3] * t) % TWO_PI
        ring_a = R + r * math.cos(th_a)
        ring_b = R + r * math.cos(th_b)
        dx = ring_a * math.cos(ph_a) - ring_b * math.cos(ph_b)
        dy = ring_a * math.sin(ph_a) - ring_b * math.sin(ph_b)
        dz = r * math.sin(th_a) - r * math.sin(th_b)
        out[k] = math.sqrt(dx * dx + dy * dy + dz * dz)
    return out


@njit(cache=True)
def hit_runs(dist, radius):
    n = dist.shape[0]
    starts = np.empty(n, np.int64)
    ends = np.empty(n, np.int64)
    argmins = np.empty(n, np.int64)
    k = 0
    inside = False
    for i in range(n):
        if dist[i] <= radius:
            if not inside:
                inside = True
                starts[k] = i
                argmins[k] = i
            elif dist[i] < dist[argmins[k]]:
                argmins[k] = i
        elif inside:
            inside = False
            ends[k] = i - 1
            k += 1
    if inside:
        ends[k] = n - 1
        k += 1
    return starts[:k].copy(), ends[:k].copy(), argmins[:k].copy()


@njit(cache=True)
def track_step(tick, keys, dist, x, y, bridge, last, start, dmin, px, py, open_keys, n_open):
    for j in range(keys.shape[0]):
        k = keys[j]
        if last[k] < 0:
            start[k] = tick
            dmin[k] = dist[j]
            px[k] = x[j]
            py[k] = y[j]
            open_keys[n_open] = k
            n_open += 1
        elif dist[j] < dmin[k]:
            dmin[k] = dist[j]
            px[k] = x[j]
            py[k] = y[j]
        last[k] = tick
    m = 0
    for q in range(n_open):
        if tick - last[open_keys[q]] > bridge:
            m += 1
    ck = np.empty(m, np.int64)
    keep = 0
    c = 0
    for q in range(n_open):
        k = open_keys[q]
        if tick - last[k] > bridge:
            ck[c] = k
            c += 1
        else:
            open_keys[keep] = k
            keep += 1
    ck.sort()
    cs = np.empty(m, np.int64)
    cl = np.empty(m, np.int64)
    cd = np.empty(m, np.float64)
    cx = np.empty(m, np.float64)
    cy = np.empty(m, np.float64)
    for q in range(m):
        k = ck[q]
        cs[q] = start[k]
        cl[q] = last[k]
        cd[q] = dmin[k]
        cx[q] = px[k]
        cy[q] = py[k]
        last[k] = -1
    return keep, ck, cs, cl, cd, cx, cy


@njit(cache=True)
def countdown(timed, remaining):
    n = 0
    for i in range(timed.shape[0]):
        if timed[i]:
            remaining[i] -= 1
            if remaining[i] <= 0:
                n += 1
    done = np.empty(n, np.int64)
    c = 0
    for i in range(timed.shape[0]):
        if timed[i] and remaining[i] <= 0:
            done[c] = i
            c += 1
    return done


@njit(cache=True)
def accumulate_timers(state, paused, timer_ticks):
    """Add one tick to each in-store agent's timer column; return
    (in_store, shopping, queuing, at_checkout, idle) head counts."""
    n_in = 0
    n_shop = 0
    n_queue = 0
    n_check = 0
    n_idle = 0
    for i in range(state.shape[0]):
        s = state[i]
        if s == 0 or s == 4:
            continue
        n_in += 1
        if s == 2:
            timer_ticks[i, 2] += 1
            n_queue += 1
        elif paused[i]:
            timer_ticks[i, 1] += 1
            n_idle += 1
        elif s == 1:
            timer_ticks[i, 0] += 1
            n_shop += 1
        else:
            timer_ticks[i, 3] += 1
            n_check += 1
    return n_in, n_shop, n_queue, n_check, n_idle


@njit(cache=True)
def proximity_step(
    tick, xs, ys, idx, key_base, radius, near_radius, bridge,
    h_last, h_start, h_dmin, h_x, h_y, h_open, h_n,
    n_last, n_start, n_dmin, n_x, n_y, n_open, n_n,
):
    if idx.shape[0] >= 2:
        ia, ib, d, _, _ = _pairs_within(xs[idx], ys[idx], near_radius)
    else:
        ia = np.empty(0, np.int64)
        ib = np.empty(0, np.int64)
        d = np.empty(0, np.float64)
    m = ia.shape[0]
    keys = np.empty(m, np.int64)
    mx = np.empty(m, np.float64)
    my = np.empty(m, np.float64)
    n_hit = 0
    for q in range(m):
        a = idx[ia[q]]
        b = idx[ib[q]]
        keys[q] = a * key_base + b
        mx[q] = 0.5 * (xs[a] + xs[b])
        my[q] = 0.5 * (ys[a] + ys[b])
        if d[q] <= radius:
            n_hit += 1
    hk = np.empty(n_hit, np.int64)
    hd = np.empty(n_hit, np.float64)
    hx = np.empty(n_hit, np.float64)
    hy = np.empty(n_hit, np.float64)
    c = 0
    for q in range(m):
        if d[q] <= radius:
            hk[c] = keys[q]
            hd[c] = d[q]
            hx[c] = mx[q]
            hy[c] = my[q]
            c += 1
    h = track_step(tick, hk, hd, hx, hy, bridge, h_last, h_start, h_dmin, h_x, h_y, h_open, h_n)
    nr = track_step(tick, keys, d, mx, my, bridge, n_last, n_start, n_dmin, n_x, n_y, n_open, n_n)
    near = 0
    for q in range(nr[4].shape[0]):
        if nr[4][q] > radius:
            near += 1
    return h[0], nr[0], h[1], h[2], h[3], h[4], h[5], h[6], near
