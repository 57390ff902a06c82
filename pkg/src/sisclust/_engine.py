"""Compiled event-loop kernels for exact SIS simulation and SVDE stepping.

The RNG is splitmix64: a named 64-bit counter-based generator whose integer
stream is identical on every platform, so trajectories are reproducible
for a fixed seed. Node selection uses a Fenwick tree over per-node event
rates (healing rate while infected, accumulated infection pressure while
healthy), updated incrementally from the out-adjacency on each flip and
rebuilt periodically to cancel float drift.
"""

import math

import numpy as np
from numba import njit, uint64, float64

_REBUILD_EVERY = 1 << 20

_SM_GAMMA = uint64(0x9E3779B97F4A7C15)
_SM_MUL1 = uint64(0xBF58476D1CE4E5B9)
_SM_MUL2 = uint64(0x94D049BB133111EB)


@njit(inline="always", cache=True)
def _next_u64(state):
    state = state + _SM_GAMMA
    z = state
    z = (z ^ (z >> uint64(30))) * _SM_MUL1
    z = (z ^ (z >> uint64(27))) * _SM_MUL2
    z = z ^ (z >> uint64(31))
    return state, z


@njit(inline="always", cache=True)
def _next_unit(state):
    # uniform in (0, 1]; never 0 so log() is safe
    state, z = _next_u64(state)
    return state, (float64(z >> uint64(11)) + 1.0) * (2.0 ** -53)


@njit(cache=True)
def _fen_add(tree, n, i, d):
    i1 = i + 1
    while i1 <= n:
        tree[i1] += d
        i1 += i1 & (-i1)


@njit(cache=True)
def _fen_total(tree, n):
    s = 0.0
    idx = n
    while idx > 0:
        s += tree[idx]
        idx -= idx & (-idx)
    return s


@njit(cache=True)
def _fen_find(tree, n, u):
    # largest idx such that prefix(idx) < u; returns 0-based slot
    idx = 0
    bit = 1
    while (bit << 1) <= n:
        bit <<= 1
    while bit > 0:
        nxt = idx + bit
        if nxt <= n and tree[nxt] < u:
            u -= tree[nxt]
            idx = nxt
        bit >>= 1
    if idx >= n:
        idx = n - 1
    return idx


@njit(cache=True)
def _fen_build(tree, leaf, n):
    for i in range(n + 1):
        tree[i] = 0.0
    for i in range(n):
        i1 = i + 1
        tree[i1] += leaf[i]
        j = i1 + (i1 & (-i1))
        if j <= n:
            tree[j] += tree[i1]


@njit(cache=True)
def _rebuild_sparse(indptr, indices, rates, delta, state, pressure, leaf, tree, n):
    for i in range(n):
        pressure[i] = 0.0
    for i in range(n):
        if state[i] == 1:
            for p in range(indptr[i], indptr[i + 1]):
                pressure[indices[p]] += rates[p]
    for i in range(n):
        leaf[i] = delta[i] if state[i] == 1 else pressure[i]
    _fen_build(tree, leaf, n)


@njit(cache=True)
def sim_sparse(
    indptr,
    indices,
    rates,
    delta,
    state,
    t_start,
    sample_start,
    sample_interval,
    n_samples,
    samples,
    occupancy,
    seed,
    ev_cap,
    ev_times,
    ev_nodes,
    ev_kinds,
):
    """Run the exact chain from `state` at `t_start` to the end of the
    sampling window (or plain horizon when n_samples == 0, in which case
    sample_start is the horizon). Optionally records events up to ev_cap
    (ev_cap < 0 disables recording; overflowing the cap aborts with code 2).

    Returns (status, t_final, n_events, n_filled_samples) where status is
    0 = completed, 1 = absorbed, 2 = event capacity exhausted.
    Occupancy accumulates per-node infected time inside the window.
    """
    n = delta.shape[0]
    rng = uint64(seed)
    pressure = np.zeros(n)
    leaf = np.zeros(n)
    tree = np.zeros(n + 1)
    last_flip = np.full(n, t_start)
    _rebuild_sparse(indptr, indices, rates, delta, state, pressure, leaf, tree, n)

    infected = 0
    for i in range(n):
        if state[i] == 1:
            infected += 1

    end_time = sample_start + sample_interval * n_samples if n_samples > 0 else sample_start
    occ_start = sample_start
    t = t_start
    isample = 0
    n_events = 0

    if infected == 0:
        return 1, t, 0, 0

    while t < end_time:
        total = _fen_total(tree, n)
        if total <= 0.0:
            return 1, t, n_events, isample
        rng, u1 = _next_unit(rng)
        t_next = t + (-math.log(u1) / total)

        while isample < n_samples and occ_start + sample_interval * (isample + 1) <= t_next:
            samples[isample] = infected
            isample += 1
        if t_next >= end_time:
            t = end_time
            break

        rng, u2 = _next_unit(rng)
        node = _fen_find(tree, n, u2 * total)
        t = t_next

        if state[node] == 1:
            # heal
            if t > occ_start:
                seg = max(last_flip[node], occ_start)
                if t > seg:
                    occupancy[node] += t - seg
            state[node] = 0
            last_flip[node] = t
            infected -= 1
            _fen_add(tree, n, node, pressure[node] - leaf[node])
            leaf[node] = pressure[node]
            for p in range(indptr[node], indptr[node + 1]):
                k = indices[p]
                r = rates[p]
                pressure[k] -= r
                if state[k] == 0:
                    _fen_add(tree, n, k, -r)
                    leaf[k] -= r
            kind = 0
        else:
            state[node] = 1
            last_flip[node] = t
            infected += 1
            _fen_add(tree, n, node, delta[node] - leaf[node])
            leaf[node] = delta[node]
            for p in range(indptr[node], indptr[node + 1]):
                k = indices[p]
                r = rates[p]
                pressure[k] += r
                if state[k] == 0:
                    _fen_add(tree, n, k, r)
                    leaf[k] += r
            kind = 1

        if ev_cap >= 0:
            if n_events >= ev_cap:
                return 2, t, n_events, isample
            ev_times[n_events] = t
            ev_nodes[n_events] = node
            ev_kinds[n_events] = kind
        n_events += 1

        if infected == 0:
            return 1, t, n_events, isample
        if n_events % _REBUILD_EVERY == 0:
            _rebuild_sparse(indptr, indices, rates, delta, state, pressure, leaf, tree, n)

    # close occupancy segments for nodes still infected at the end
    for i in range(n):
        if state[i] == 1 and end_time > occ_start:
            seg = max(last_flip[i], occ_start)
            if end_time > seg:
                occupancy[i] += end_time - seg
    return 0, t, n_events, isample


@njit(cache=True)
def _rebuild_rank1(w, h, delta, state, leaf_h, tree_h, leaf_d, tree_d, n):
    sw = 0.0
    for i in range(n):
        if state[i] == 1:
            sw += w[i]
            leaf_h[i] = 0.0
            leaf_d[i] = delta[i]
        else:
            leaf_h[i] = h[i]
            leaf_d[i] = 0.0
    _fen_build(tree_h, leaf_h, n)
    _fen_build(tree_d, leaf_d, n)
    return sw


@njit(cache=True)
def sim_rank1(
    w,
    h,
    delta,
    state,
    t_start,
    sample_start,
    sample_interval,
    n_samples,
    samples,
    occupancy,
    seed,
):
    """Exact chain for rank-1 rates a~_ij = w_i * h_j (i != j, diagonal 0).

    Infection pressure on a healthy node j factorizes as h_j * sum of w
    over infected nodes, so two Fenwick trees (susceptibilities of healthy
    nodes, curing rates of infected nodes) give O(log n) events without
    touching the dense rate matrix. Same protocol/returns as sim_sparse.
    """
    n = delta.shape[0]
    rng = uint64(seed)
    leaf_h = np.zeros(n)
    tree_h = np.zeros(n + 1)
    leaf_d = np.zeros(n)
    tree_d = np.zeros(n + 1)
    last_flip = np.full(n, t_start)
    sw = _rebuild_rank1(w, h, delta, state, leaf_h, tree_h, leaf_d, tree_d, n)

    infected = 0
    for i in range(n):
        if state[i] == 1:
            infected += 1

    end_time = sample_start + sample_interval * n_samples if n_samples > 0 else sample_start
    occ_start = sample_start
    t = t_start
    isample = 0
    n_events = 0

    if infected == 0:
        return 1, t, 0, 0

    while t < end_time:
        tot_inf = sw * _fen_total(tree_h, n)
        tot_heal = _fen_total(tree_d, n)
        total = tot_inf + tot_heal
        if total <= 0.0:
            return 1, t, n_events, isample
        rng, u1 = _next_unit(rng)
        t_next = t + (-math.log(u1) / total)

        while isample < n_samples and occ_start + sample_interval * (isample + 1) <= t_next:
            samples[isample] = infected
            isample += 1
        if t_next >= end_time:
            t = end_time
            break

        rng, u2 = _next_unit(rng)
        x = u2 * total
        t = t_next
        if x < tot_inf:
            node = _fen_find(tree_h, n, x / sw)
            state[node] = 1
            last_flip[node] = t
            infected += 1
            sw += w[node]
            _fen_add(tree_h, n, node, -leaf_h[node])
            leaf_h[node] = 0.0
            _fen_add(tree_d, n, node, delta[node] - leaf_d[node])
            leaf_d[node] = delta[node]
        else:
            node = _fen_find(tree_d, n, x - tot_inf)
            if t > occ_start:
                seg = max(last_flip[node], occ_start)
                if t > seg:
                    occupancy[node] += t - seg
            state[node] = 0
            last_flip[node] = t
            infected -= 1
            sw -= w[node]
            _fen_add(tree_d, n, node, -leaf_d[node])
            leaf_d[node] = 0.0
            _fen_add(tree_h, n, node, h[node] - leaf_h[node])
            leaf_h[node] = h[node]

        n_events += 1
        if infected == 0:
            return 1, t, n_events, isample
        if n_events % _REBUILD_EVERY == 0:
            sw = _rebuild_rank1(w, h, delta, state, leaf_h, tree_h, leaf_d, tree_d, n)

    for i in range(n):
        if state[i] == 1 and end_time > occ_start:
            seg = max(last_flip[i], occ_start)
            if end_time > seg:
                occupancy[i] += end_time - seg
    return 0, t, n_events, isample


@njit(cache=True)
def svde_euler(
    K0,
    MpD,
    C,
    sigma0,
    d0,
    sqrt_n,
    d_lo,
    d_hi,
    dt,
    n_steps,
    thin,
    linear,
    seed,
):
    """Euler-Maruyama on the deviation process D.

    Nonlinear mode: drift K0 @ D - diag(D) @ C @ D / sqrt(n), diffusion
    componentwise sqrt of MpD @ D / sqrt(n) - diag(D) @ C @ D / n + sigma0
    (negative arguments clamped to 0, counted). After each nonlinear step
    D is clipped to [d_lo, d_hi] (the image of 0 <= N_j <= n_j), steps
    with any clipped component are counted. d_lo is the extinct state,
    where drift and diffusion both vanish; a step that lands every
    component there is an absorption and restarts the process from d0
    (counted), keeping the path on the metastable regime like the event
    simulator's protocol. Linear mode keeps drift K0 @ D and constant
    diffusion sqrt(sigma0) and runs unclipped: the OU process is
    unbounded and its extinct state is not absorbing.

    Returns (trajectory [n_rec x r], n_var_clamps, n_clip_steps, n_restarts).
    """
    r = d0.shape[0]
    d = d0.copy()
    n_rec = n_steps // thin + 1
    out = np.empty((n_rec, r))
    out[0] = d
    rng = uint64(seed)
    sq_dt = math.sqrt(dt)
    n_var_clamps = 0
    n_clip_steps = 0
    n_restarts = 0

    drift = np.empty(r)
    var = np.empty(r)
    cd = np.empty(r)
    rec = 1

    have_spare = False
    spare = 0.0

    for step in range(1, n_steps + 1):
        for j in range(r):
            acc = 0.0
            for l in range(r):
                acc += K0[j, l] * d[l]
            drift[j] = acc
        if linear:
            for j in range(r):
                var[j] = sigma0[j]
        else:
            for j in range(r):
                acc = 0.0
                for l in range(r):
                    acc += C[j, l] * d[l]
                cd[j] = acc
            for j in range(r):
                drift[j] -= d[j] * cd[j] / sqrt_n
            for j in range(r):
                acc = 0.0
                for l in range(r):
                    acc += MpD[j, l] * d[l]
                v = acc / sqrt_n - d[j] * cd[j] / (sqrt_n * sqrt_n) + sigma0[j]
                if v < 0.0:
                    v = 0.0
                    n_var_clamps += 1
                var[j] = v

        clipped = False
        for j in range(r):
            if have_spare:
                z = spare
                have_spare = False
            else:
                rng, u1 = _next_unit(rng)
                rng, u2 = _next_unit(rng)
                mag = math.sqrt(-2.0 * math.log(u1))
                z = mag * math.cos(2.0 * math.pi * u2)
                spare = mag * math.sin(2.0 * math.pi * u2)
                have_spare = True
            dj = d[j] + drift[j] * dt + math.sqrt(var[j]) * sq_dt * z
            if not linear:
                if dj < d_lo[j]:
                    dj = d_lo[j]
                    clipped = True
                elif dj > d_hi[j]:
                    dj = d_hi[j]
                    clipped = True
            d[j] = dj
        if clipped:
            n_clip_steps += 1
            absorbed = True
            for j in range(r):
                if d[j] != d_lo[j]:
                    absorbed = False
                    break
            if absorbed and not linear:
                for j in range(r):
                    d[j] = d0[j]
                n_restarts += 1
        if step % thin == 0:
            out[rec] = d
            rec += 1

    return out[:rec], n_var_clamps, n_clip_steps, n_restarts
