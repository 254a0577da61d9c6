"""Independent numeric oracles.

Everything here works on dense numpy time grids with ``np.interp`` and never
calls into the package's PWL algebra, so it can serve as ground truth for
the recursion machinery.
"""

import itertools

import numpy as np

NEG = -1e18


def _curve_arrays(inst, station):
    c = inst.curve(station)
    return np.asarray(c.xs), np.asarray(c.ys)


def grid_route_duration(inst, seq, dt=1e-3):
    """Minimal duration of a concrete node sequence by grid dynamic programming.

    Returns None when infeasible.  State: max battery when departing node k
    at each grid time (NEG where infeasible); interpolation only ever reads
    the feasible part of the previous state.
    """
    T = inst.T
    ts = np.arange(0.0, T + dt / 2, dt)
    val = np.full_like(ts, inst.B)  # depot start: full battery, any time
    for k in range(1, len(seq)):
        i, j = seq[k - 1], seq[k]
        t_arc, b_arc = inst.t(i, j), inst.b(i, j)
        feas = val > NEG / 2
        if not feas.any():
            return None
        ft, fv = ts[feas], val[feas]
        if inst.is_station(j):
            ct, cv = _curve_arrays(inst, j)
            have = fv - b_arc
            reach = have >= -1e-9
            if not reach.any():
                return None
            rt, rh = ft[reach], have[reach]
            w = np.interp(np.clip(rh, 0.0, inst.B), cv, ct) - rt
            best = np.maximum.accumulate(w)
            arr = ts - t_arc
            bq = np.interp(np.clip(arr, rt[0], rt[-1]), rt, best)
            clock = np.clip(bq + arr, 0.0, ct[-1])
            newval = np.interp(clock, ct, cv)
            e_j, l_j = inst.window(j)
            lo_t = max(rt[0] + t_arc, e_j)
            ok = (ts >= lo_t - dt / 2) & (ts <= l_j + dt / 2)
            val = np.where(ok, newval, NEG)
        else:
            s_j = inst.s(j)
            e_j, l_j = inst.window(j)
            arg = ts - s_j - t_arc
            moved = np.interp(np.clip(arg, ft[0], ft[-1]), ft, fv) - b_arc
            reach = moved >= -1e-9
            if not reach.any():
                return None
            lo_t = max(float(ts[reach][0]), e_j + s_j)
            ok = reach & (arg >= ft[0] - dt / 2) & (ts >= lo_t - dt / 2) & (
                ts <= l_j + s_j + dt / 2
            )
            val = np.where(ok, moved, NEG)
        if not (val > NEG / 2).any():
            return None
    good = val > NEG / 2
    if not good.any():
        return None
    return float(ts[np.argmax(good)])


def enumerate_concrete_routes(inst, customers, max_per_gap=1):
    """All station-insertion variants for one customer order."""
    gaps = len(customers) + 1
    stations = list(inst.station_ids)
    options = [()]
    options += [(s,) for s in stations]
    if max_per_gap >= 2:
        options += [(s1, s2) for s1 in stations for s2 in stations]
    for pattern in itertools.product(options, repeat=gaps):
        seq = [0]
        for g in range(gaps):
            seq.extend(pattern[g])
            if g < len(customers):
                seq.append(customers[g])
        seq.append(0)
        yield tuple(seq)


def best_duration_for_order(inst, customers, evaluator, max_per_gap=1):
    """Cheapest concrete route over station patterns; None when all infeasible."""
    best = None
    best_seq = None
    for seq in enumerate_concrete_routes(inst, customers, max_per_gap):
        d = evaluator(seq)
        if d is not None and (best is None or d < best - 1e-12):
            best, best_seq = d, seq
    return best, best_seq


def enumerate_route_sets(inst, route_costs, K):
    """Optimal set partitioning by subset DP over customer sets.

    ``route_costs``: dict mapping frozenset of customers -> cost.  Returns
    (optimal cost, list of customer subsets) or (None, None).
    """
    customers = sorted(inst.customers)
    idx = {c: k for k, c in enumerate(customers)}
    n = len(customers)
    full = (1 << n) - 1
    by_mask = {}
    for cs, cost in route_costs.items():
        m = 0
        for c in cs:
            m |= 1 << idx[c]
        if m not in by_mask or cost < by_mask[m]:
            by_mask[m] = cost
    INF = float("inf")
    dp = [[INF] * (K + 1) for _ in range(full + 1)]
    choice = [[None] * (K + 1) for _ in range(full + 1)]
    for k in range(K + 1):
        dp[0][k] = 0.0
    masks = sorted(by_mask)
    for m in range(1, full + 1):
        low = m & (-m)
        for k in range(1, K + 1):
            for rm in masks:
                if rm & low and (rm & m) == rm:
                    cand = by_mask[rm] + dp[m ^ rm][k - 1]
                    if cand < dp[m][k]:
                        dp[m][k] = cand
                        choice[m][k] = rm
    if dp[full][K] == INF:
        return None, None
    # reconstruct
    sets = []
    m, k = full, K
    while m:
        rm = choice[m][k]
        sets.append(frozenset(customers[i] for i in range(n) if rm >> i & 1))
        m ^= rm
        k -= 1
    return dp[full][K], sets
