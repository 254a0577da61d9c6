"""Tabu search over customer sequences with exact resource caching.

Each route caches forward states (prefix) and backward states (suffix) per
position, so splicing a candidate move needs only a couple of extensions
plus one forward/backward join.  Move savings are evaluated against the
routes' current station placements; exact station re-placement runs every
``opt_iter`` iterations through a small labeling over the fixed customer
sequence (direct hop or one charging detour per gap).
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from . import charge
from .model import Instance, Route
from .pwl import PwlFunction, upper_envelope, dominates_on, TIME_TOL


@dataclass
class TabuParams:
    max_iter: int = 1000
    tenure: float = 5.0
    shake_iter: int = 20
    shake_tenure: int = 80
    opt_iter: int = 5
    beta: float = 0.9
    seed: int = 42

    @classmethod
    def for_size(cls, n_customers: int, seed: int = 42) -> "TabuParams":
        if n_customers <= 20:
            return cls(max_iter=1000, tenure=max(1.0, n_customers / 2), shake_iter=20,
                       shake_tenure=80, opt_iter=5, beta=0.9, seed=seed)
        if n_customers <= 80:
            return cls(max_iter=2000, tenure=max(1.0, n_customers / 3), shake_iter=20,
                       shake_tenure=160, opt_iter=5, beta=0.9, seed=seed)
        return cls(max_iter=4000, tenure=max(1.0, n_customers / 3), shake_iter=20,
                   shake_tenure=160, opt_iter=5, beta=0.9, seed=seed)


def effective_tenure(initial: float, decays: int, beta: float) -> int:
    """Tenure after k decay steps, floored and never below one iteration."""
    return max(1, int(math.floor(initial * beta ** decays)))


class ConstructionError(RuntimeError):
    pass


_route_serial = iter(range(1, 1 << 62))


class RouteState:
    """A concrete route (stations included) plus per-position resources."""

    __slots__ = ("seq", "fwd", "bwd", "load", "duration", "suffix_ts", "serial", "_memo")

    def __init__(self, inst: Instance, seq: list[int]):
        self.seq = list(seq)
        self.rebuild(inst)

    def rebuild(self, inst: Instance) -> bool:
        self.serial = next(_route_serial)
        self._memo = {}
        seq = self.seq
        assert seq[0] == 0 and seq[-1] == 0
        fwd = [charge.forward_root(inst)]
        for j in seq[1:]:
            nxt = charge.forward_extend(inst, fwd[-1], j)
            if nxt is None:
                return False
            fwd.append(nxt)
        bwd_rev = [charge.backward_root(inst)]
        for j in reversed(seq[:-1]):
            nxt = charge.backward_extend(inst, bwd_rev[-1], j)
            if nxt is None:
                return False
            bwd_rev.append(nxt)
        self.fwd = fwd
        self.bwd = bwd_rev[::-1]
        self.load = sum(inst.q(v) for v in seq if inst.is_customer(v))
        self.duration = fwd[-1].a
        sts = [0.0] * len(seq)
        for k in range(len(seq) - 2, -1, -1):
            sts[k] = sts[k + 1] + inst.t(seq[k], seq[k + 1]) + inst.s(seq[k + 1])
        self.suffix_ts = sts
        return True

    @property
    def customers(self) -> list[int]:
        return [v for v in self.seq[1:-1]]

    def customer_positions(self, inst: Instance) -> list[int]:
        return [p for p, v in enumerate(self.seq) if inst.is_customer(v)]

    def is_empty(self, inst: Instance) -> bool:
        return not any(inst.is_customer(v) for v in self.seq)


class TabuSolution:
    def __init__(self, inst: Instance, routes: list[RouteState]):
        self.inst = inst
        self.routes = routes

    @property
    def cost(self) -> float:
        return sum(r.duration for r in self.routes)

    def copy(self) -> "TabuSolution":
        dup = TabuSolution.__new__(TabuSolution)
        dup.inst = self.inst
        dup.routes = []
        for r in self.routes:
            rr = RouteState.__new__(RouteState)
            rr.seq = list(r.seq)
            rr.fwd = r.fwd
            rr.bwd = r.bwd
            rr.load = r.load
            rr.duration = r.duration
            rr.suffix_ts = r.suffix_ts
            rr.serial = r.serial
            rr._memo = r._memo
            dup.routes.append(rr)
        return dup

    def non_empty(self) -> list[RouteState]:
        return [r for r in self.routes if not r.is_empty(self.inst)]


@dataclass(frozen=True)
class Move:
    kind: str                   # "relocate" | "cross" | "exchange"
    r1: int
    r2: int
    p1: int
    p2: int
    saving: float = 0.0


# -- splice evaluation -----------------------------------------------------------


def _join(inst: Instance, fwd: charge.ForwardState | None,
          bwd: charge.BackwardState | None) -> float | None:
    if fwd is None or bwd is None:
        return None
    return charge.split_duration(fwd, bwd, inst.T)


def _without_position(inst: Instance, route: RouteState, p: int) -> float | None:
    """Duration of the route with position p spliced out."""
    if len(route.seq) == 3:
        return 0.0
    prev = route.fwd[p - 1]
    nxt = charge.forward_extend(inst, prev, route.seq[p + 1])
    return _join(inst, nxt, route.bwd[p + 1])


def _with_insertion(inst: Instance, route: RouteState, gap: int, node: int) -> float | None:
    """Duration with ``node`` inserted right before position gap+1."""
    fwd = charge.forward_extend(inst, route.fwd[gap], node)
    if fwd is None:
        return None
    bwd = charge.backward_extend(inst, route.bwd[gap + 1], node)
    return _join(inst, fwd, bwd)


def _with_replacement(inst: Instance, route: RouteState, p: int, node: int) -> float | None:
    fwd = charge.forward_extend(inst, route.fwd[p - 1], node)
    if fwd is None:
        return None
    bwd = charge.backward_extend(inst, route.bwd[p + 1], node)
    return _join(inst, fwd, bwd)


def _cross_tail(inst: Instance, r1: RouteState, p: int, r2: RouteState, q: int) -> float | None:
    """Duration of r1[:p+1] + r2[q+1:]."""
    head_end = r1.seq[p]
    tail_start = r2.seq[q + 1]
    if head_end == 0 and tail_start == 0:
        return 0.0
    fwd = charge.forward_extend(inst, r1.fwd[p], tail_start)
    return _join(inst, fwd, r2.bwd[q + 1])


# -- move scanning -----------------------------------------------------------------


def _memo(route: RouteState) -> dict:
    return route._memo


def _removed_duration(inst, route: RouteState, p: int) -> float | None:
    memo = _memo(route)
    key = ("rm", p)
    if key not in memo:
        memo[key] = _without_position(inst, route, p)
    return memo[key]


def _inserted_duration(inst, route: RouteState, gap: int, node: int) -> float | None:
    memo = _memo(route)
    key = ("ins", gap, node)
    if key not in memo:
        memo[key] = _with_insertion(inst, route, gap, node)
    return memo[key]


def _replaced_duration(inst, route: RouteState, p: int, node: int) -> float | None:
    memo = _memo(route)
    key = ("rep", p, node)
    if key not in memo:
        memo[key] = _with_replacement(inst, route, p, node)
    return memo[key]


def _tail_duration(inst, r1: RouteState, p: int, r2: RouteState, q: int) -> float | None:
    memo = _memo(r1)
    key = ("tail", p, r2.serial, q)
    if key not in memo:
        memo[key] = _cross_tail(inst, r1, p, r2, q)
    return memo[key]


def _prefix_loads(inst: Instance, route: RouteState) -> list[float]:
    out = [0.0]
    for v in route.seq[1:]:
        out.append(out[-1] + (inst.q(v) if inst.is_customer(v) else 0.0))
    return out


def scan_pair_moves(inst: Instance, sol: TabuSolution, i: int, j: int) -> list[Move]:
    """Every feasible inter-route move between routes i and j, with exact
    savings under the current charging plans (worsening moves included)."""
    out: list[Move] = []
    r1, r2 = sol.routes[i], sol.routes[j]
    base = r1.duration + r2.duration
    Q = inst.Q

    # relocate, both directions
    for (src_i, dst_i, src, dst) in ((i, j, r1, r2), (j, i, r2, r1)):
        for p in src.customer_positions(inst):
            c = src.seq[p]
            if dst.load + inst.q(c) > Q + 1e-9:
                continue
            removed = _removed_duration(inst, src, p)
            if removed is None:
                continue
            for gap in range(len(dst.seq) - 1):
                inserted = _inserted_duration(inst, dst, gap, c)
                if inserted is None:
                    continue
                out.append(
                    Move("relocate", src_i, dst_i, p, gap,
                         base - (removed + inserted))
                )

    # cross: swap tails at gaps (p, p+1) x (q, q+1)
    pre1 = _prefix_loads(inst, r1)
    pre2 = _prefix_loads(inst, r2)
    for p in range(len(r1.seq) - 1):
        for q in range(len(r2.seq) - 1):
            if p == 0 and q == 0:
                continue
            moved_any = any(inst.is_customer(v) for v in r1.seq[p + 1:-1]) or any(
                inst.is_customer(v) for v in r2.seq[q + 1:-1]
            )
            if not moved_any:
                continue
            if pre1[p] + (r2.load - pre2[q]) > Q + 1e-9:
                continue
            if pre2[q] + (r1.load - pre1[p]) > Q + 1e-9:
                continue
            d1 = _tail_duration(inst, r1, p, r2, q)
            if d1 is None:
                continue
            d2 = _tail_duration(inst, r2, q, r1, p)
            if d2 is None:
                continue
            out.append(Move("cross", i, j, p, q, base - (d1 + d2)))

    # exchange customers at (p, q)
    for p in r1.customer_positions(inst):
        c1 = r1.seq[p]
        for q in r2.customer_positions(inst):
            c2 = r2.seq[q]
            if r1.load - inst.q(c1) + inst.q(c2) > Q + 1e-9:
                continue
            if r2.load - inst.q(c2) + inst.q(c1) > Q + 1e-9:
                continue
            d1 = _replaced_duration(inst, r1, p, c2)
            if d1 is None:
                continue
            d2 = _replaced_duration(inst, r2, q, c1)
            if d2 is None:
                continue
            out.append(Move("exchange", i, j, p, q, base - (d1 + d2)))
    return out


def feasibility_check(inst: Instance, sol: TabuSolution, move: Move) -> bool:
    """O(1)-per-position re-check of a move using the cached resources."""
    return _apply_to_sequences(inst, sol, move, dry_run=True)


def _apply_to_sequences(inst: Instance, sol: TabuSolution, move: Move,
                        dry_run: bool = False) -> bool:
    r1, r2 = sol.routes[move.r1], sol.routes[move.r2]
    s1, s2 = list(r1.seq), list(r2.seq)
    if move.kind == "relocate":
        c = s1.pop(move.p1)
        s2.insert(move.p2 + 1, c)
    elif move.kind == "cross":
        tail1 = s1[move.p1 + 1:]
        tail2 = s2[move.p2 + 1:]
        s1 = s1[: move.p1 + 1] + tail2
        s2 = s2[: move.p2 + 1] + tail1
    else:
        s1[move.p1], s2[move.p2] = s2[move.p2], s1[move.p1]
    t1 = RouteState.__new__(RouteState)
    t1.seq = _strip_leading_stations(inst, s1)
    t2 = RouteState.__new__(RouteState)
    t2.seq = _strip_leading_stations(inst, s2)
    ok = t1.rebuild(inst) and t2.rebuild(inst)
    if ok and not dry_run:
        sol.routes[move.r1] = t1
        sol.routes[move.r2] = t2
    return ok


def _strip_leading_stations(inst: Instance, seq: list[int]) -> list[int]:
    """Drop stations left dangling when no customer remains in a route."""
    if any(inst.is_customer(v) for v in seq):
        return seq
    return [0, 0]


# -- charging optimization --------------------------------------------------------


class _ChargeLabel:
    __slots__ = ("a", "fn", "via", "pred")

    def __init__(self, a, fn, via, pred):
        self.a = a
        self.fn = fn
        self.via = via          # station inserted on the incoming arc, or -1
        self.pred = pred


def optimize_charging(inst: Instance, customer_seq) -> tuple[float, tuple[int, ...]] | None:
    """Best station insertions for a fixed customer order.

    Labeling over positions; each hop goes direct or through exactly one
    station.  Labels carry (earliest departure, battery function, incoming
    station); a label is discarded when earlier-departing labels' battery
    envelope covers it.  Returns (duration, concrete sequence) or None.
    """
    seq = list(customer_seq)
    assert seq[0] == 0 and seq[-1] == 0
    if len(seq) == 2:
        return 0.0, (0, 0)
    root = charge.forward_root(inst)
    labels: list[list[_ChargeLabel]] = [[_ChargeLabel(root.a, root.f, -1, None)]]
    for pos in range(1, len(seq)):
        target = seq[pos]
        nxt: list[_ChargeLabel] = []
        for lab in labels[pos - 1]:
            state = charge.ForwardState(seq[pos - 1], lab.a, lab.fn)
            direct = charge.forward_extend(inst, state, target)
            if direct is not None:
                nxt.append(_ChargeLabel(direct.a, direct.f, -1, lab))
            for cs in inst.station_ids:
                mid = charge.forward_extend(inst, state, cs)
                if mid is None:
                    continue
                through = charge.forward_extend(inst, mid, target)
                if through is not None:
                    nxt.append(_ChargeLabel(through.a, through.f, cs, lab))
        kept = _filter_charge_labels(inst, target, nxt)
        if not kept:
            return None
        labels.append(kept)
    best = min(labels[-1], key=lambda l: l.a)
    # reconstruct the concrete sequence
    vias = []
    lab = best
    while lab.pred is not None:
        vias.append(lab.via)
        lab = lab.pred
    vias.reverse()
    out = [0]
    for pos in range(1, len(seq)):
        if vias[pos - 1] != -1:
            out.append(vias[pos - 1])
        out.append(seq[pos])
    return best.a, tuple(out)


def _filter_charge_labels(inst: Instance, node: int, labs: list[_ChargeLabel]):
    labs.sort(key=lambda l: l.a)
    hi = inst.latest_departure(node)
    kept: list[_ChargeLabel] = []
    for lab in labs:
        covered = False
        pool = [k.fn.restrict(lab.a, hi) for k in kept if k.a <= lab.a + TIME_TOL]
        if pool:
            env = pool[0] if len(pool) == 1 else upper_envelope(pool)
            covered = dominates_on(env, lab.fn, lab.a, hi, eps=1e-9)
        if not covered:
            kept.append(lab)
    return kept


# -- construction -------------------------------------------------------------------


def initial_solution(inst: Instance, max_station_level: int = 4) -> TabuSolution:
    """Greedy cheapest insertion, with charging-station route templates for
    customers unreachable on battery alone."""
    routes: list[RouteState] = [RouteState(inst, [0, 0]) for _ in range(max(1, inst.K))]
    sol = TabuSolution(inst, routes)
    unserved = [c for c in inst.customers]
    level = 0
    while unserved:
        best = None
        for c in unserved:
            for ri, route in enumerate(sol.routes):
                if route.load + inst.q(c) > inst.Q + 1e-9:
                    continue
                for gap in range(len(route.seq) - 1):
                    d = _inserted_duration(inst, route, gap, c)
                    if d is None:
                        continue
                    delta = d - route.duration
                    if best is None or delta < best[0]:
                        best = (delta, c, ri, gap)
        if best is not None:
            _delta, c, ri, gap = best
            seq = list(sol.routes[ri].seq)
            seq.insert(gap + 1, c)
            nr = RouteState.__new__(RouteState)
            nr.seq = seq
            if not nr.rebuild(inst):
                raise ConstructionError(f"insertion of {c} failed to rebuild")
            sol.routes[ri] = nr
            unserved.remove(c)
            continue
        # battery failure: add station templates of increasing length
        level += 1
        if level > max_station_level:
            raise ConstructionError(
                f"customers {unserved} cannot be placed even with "
                f"{max_station_level} station visits per route"
            )
        for cs in inst.station_ids:
            seq = [0] + [cs] * level + [0]
            nr = RouteState.__new__(RouteState)
            nr.seq = seq
            if nr.rebuild(inst):
                sol.routes.append(nr)
    sol.routes = [r for r in sol.routes if not r.is_empty(inst)]
    if len(sol.routes) > inst.K:
        raise ConstructionError(
            f"construction used {len(sol.routes)} routes but only {inst.K} vehicles exist"
        )
    _ensure_open_slot(inst, sol)
    return sol


def _ensure_open_slot(inst: Instance, sol: TabuSolution) -> None:
    """Keep one empty route available as a relocation target (fleet permitting)."""
    nonempty = sum(1 for r in sol.routes if not r.is_empty(inst))
    have_empty = any(r.is_empty(inst) for r in sol.routes)
    if not have_empty and nonempty < inst.K:
        sol.routes.append(RouteState(inst, [0, 0]))


# -- the search ------------------------------------------------------------------------


@dataclass
class TabuStats:
    iterations: int = 0
    moves_applied: int = 0
    shakes: int = 0
    tenure_decays: int = 0
    charging_optimizations: int = 0


def tabu_search(
    inst: Instance,
    params: TabuParams | None = None,
    trace=None,
) -> tuple[list[Route], float, TabuStats]:
    """Alg.-3 style search; returns realized routes, total cost and stats."""
    params = params or TabuParams.for_size(inst.n_customers)
    rng = random.Random(params.seed)
    stats = TabuStats()
    sol = initial_solution(inst)
    _optimize_all(inst, sol, stats)
    best = sol.copy()
    best_cost = sol.cost
    tabu_until: dict[tuple[int, int], int] = {}
    decays = 0
    non_imp = 0
    inner_non_imp = 0

    for it in range(params.max_iter):
        stats.iterations = it + 1
        tenure_now = effective_tenure(params.tenure, decays, params.beta)

        def is_tabu(c, route_idx, _it=it):
            return tabu_until.get((c, route_idx), -1) >= _it

        move = _best_move(inst, sol, is_tabu, best_cost)
        if move is not None:
            moved = _moved_customers(inst, sol, move)
            if _apply_to_sequences(inst, sol, move):
                stats.moves_applied += 1
                for c, from_route in moved:
                    tabu_until[(c, from_route)] = it + tenure_now
                _ensure_open_slot(inst, sol)
        if params.opt_iter and it % params.opt_iter == 0:
            _optimize_all(inst, sol, stats)
        if non_imp >= params.shake_tenure:
            if _random_move(inst, sol, rng):
                stats.shakes += 1
                _ensure_open_slot(inst, sol)
            if inner_non_imp >= params.shake_iter:
                decays += 1
                stats.tenure_decays += 1
                inner_non_imp = 0
            inner_non_imp += 1
        cost = sol.cost
        if cost < best_cost - 1e-9:
            best = sol.copy()
            best_cost = cost
            non_imp = 0
        else:
            non_imp += 1
        if trace is not None:
            trace(
                {
                    "iteration": it,
                    "incumbent": round(best_cost, 6),
                    "current": round(cost, 6),
                    "tenure": tenure_now,
                }
            )

    _optimize_all(inst, best, stats)
    if best.cost < best_cost:
        best_cost = best.cost
    routes = [
        charge.simulate_route(inst, tuple(r.seq)) for r in best.non_empty()
    ]
    total = sum(r.duration for r in routes)
    return routes, total, stats


def _moved_customers(inst: Instance, sol: TabuSolution, move: Move):
    r1, r2 = sol.routes[move.r1], sol.routes[move.r2]
    if move.kind == "relocate":
        return [(r1.seq[move.p1], move.r1)]
    if move.kind == "exchange":
        return [(r1.seq[move.p1], move.r1), (r2.seq[move.p2], move.r2)]
    out = [(v, move.r1) for v in r1.seq[move.p1 + 1:-1] if inst.is_customer(v)]
    out += [(v, move.r2) for v in r2.seq[move.p2 + 1:-1] if inst.is_customer(v)]
    return out


def _best_move(inst, sol, is_tabu, best_cost) -> Move | None:
    """Highest-saving feasible move; tabu moves pass only under aspiration
    (they would produce a new global best).  Worsening moves are allowed."""
    best: Move | None = None
    best_saving = -math.inf
    current = sol.cost
    for i in range(len(sol.routes)):
        for j in range(i + 1, len(sol.routes)):
            for mv in scan_pair_moves(inst, sol, i, j):
                if mv.saving <= best_saving + 1e-12:
                    continue
                moved = _moved_customers(inst, sol, mv)
                if any(is_tabu(c, _dest(mv, frm)) for c, frm in moved):
                    if current - mv.saving >= best_cost - 1e-9:
                        continue
                best, best_saving = mv, mv.saving
    return best


def _dest(move: Move, from_route: int) -> int:
    return move.r2 if from_route == move.r1 else move.r1


def _random_move(inst, sol, rng) -> bool:
    idx = [i for i in range(len(sol.routes))]
    if len(idx) < 2:
        return False
    for _attempt in range(30):
        i, j = rng.sample(idx, 2)
        r1, r2 = sol.routes[i], sol.routes[j]
        kind = rng.choice(("relocate", "cross", "exchange"))
        if kind == "relocate":
            ps = r1.customer_positions(inst)
            if not ps:
                continue
            p = rng.choice(ps)
            gap = rng.randrange(len(r2.seq) - 1)
            mv = Move("relocate", i, j, p, gap)
        elif kind == "cross":
            p = rng.randrange(len(r1.seq) - 1)
            q = rng.randrange(len(r2.seq) - 1)
            mv = Move("cross", i, j, p, q)
        else:
            ps, qs = r1.customer_positions(inst), r2.customer_positions(inst)
            if not ps or not qs:
                continue
            mv = Move("exchange", i, j, rng.choice(ps), rng.choice(qs))
        snap1, snap2 = sol.routes[mv.r1], sol.routes[mv.r2]
        if _apply_to_sequences(inst, sol, mv):
            new_load_ok = all(r.load <= inst.Q + 1e-9 for r in (sol.routes[mv.r1], sol.routes[mv.r2]))
            if new_load_ok:
                return True
            sol.routes[mv.r1], sol.routes[mv.r2] = snap1, snap2
    return False


def _optimize_all(inst, sol, stats) -> None:
    for k, route in enumerate(sol.routes):
        if route.is_empty(inst):
            continue
        customers = [0] + [v for v in route.seq[1:-1] if inst.is_customer(v)] + [0]
        got = optimize_charging(inst, customers)
        stats.charging_optimizations += 1
        if got is None:
            continue
        duration, seq = got
        if duration < route.duration - 1e-9:
            nr = RouteState.__new__(RouteState)
            nr.seq = list(seq)
            if nr.rebuild(inst):
                sol.routes[k] = nr
