"""Pricing: elementary shortest paths with charging, by bidirectional labeling.

Labels carry (collected duals r, load h, departure time a, battery function,
visited-customer memory); non-dominated sets are kept per node in a
dominance graph whose per-node envelopes let a *set* of labels dominate one
label.  Forward and backward runs are bounded by time thresholds and merged
into complete routes; ng-relaxation and 2-cycle-free completion bounds keep
the label counts manageable.

Conventions: ``r`` collects customer duals, subset-row pair credits and
arc-branch duals only (the fleet and vehicle-branch duals are constants per
route, applied when a candidate's exact reduced cost is computed).  ``a``
is the earliest departure for forward labels and the latest departure for
backward ones.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field

from . import charge
from .master import Duals, make_column, reduced_cost
from .model import Instance
from .pwl import (
    TIME_TOL,
    VALUE_TOL,
    PwlFunction,
    dominates_on,
    lower_envelope,
    upper_envelope,
)

R_EPS = 1e-6
H_EPS = 1e-6
A_EPS = 1e-6


class Label:
    __slots__ = (
        "node", "r", "h", "a", "fn", "visited", "sr", "ts",
        "pred", "alive", "order",
    )

    def __init__(self, node, r, h, a, fn, visited, sr, ts, pred=None, order=0):
        self.node = node
        self.r = r
        self.h = h
        self.a = a
        self.fn = fn
        self.visited = visited
        self.sr = sr
        self.ts = ts
        self.pred = pred
        self.alive = True
        self.order = order

    def path(self, backward: bool = False) -> tuple[int, ...]:
        """Nodes in route order (pred chains of backward labels already are)."""
        out = []
        lab = self
        while lab is not None:
            out.append(lab.node)
            lab = lab.pred
        return tuple(out) if backward else tuple(reversed(out))

    def attrs(self):
        return (self.r, self.h, self.a, self.visited, self.sr)


def _sr_correction(sr_u, sr_v, sigma) -> float:
    """Worst-case subset-row credit the dominating side must surrender."""
    corr = 0.0
    for k, sig in enumerate(sigma):
        if sig and (sr_u[k] & 1) and not (sr_v[k] & 1):
            corr += sig
    return corr


def _attr_dominates(u, v, sigma, backward: bool) -> bool:
    r_u, h_u, a_u, V_u, sr_u = u
    r_v, h_v, a_v, V_v, sr_v = v
    if h_u > h_v + H_EPS:
        return False
    if backward:
        if a_u < a_v - A_EPS:
            return False
    else:
        if a_u > a_v + A_EPS:
            return False
    if V_u & ~V_v:
        return False
    r_adj = r_u + (_sr_correction(sr_u, sr_v, sigma) if sigma else 0.0)
    return r_adj >= r_v - R_EPS


def dominance1(
    inst: Instance, l1: Label, l2: Label, sigma=(), backward: bool = False
) -> bool:
    """Single-label dominance: attributes plus pointwise battery comparison."""
    if l1.node != l2.node:
        raise ValueError("labels must sit at the same node")
    if not _attr_dominates(l1.attrs(), l2.attrs(), sigma, backward):
        return False
    if backward:
        # needing less battery everywhere the dominated label can depart
        return dominates_on(l2.fn, l1.fn, 0.0, l2.a, eps=VALUE_TOL)
    hi = inst.latest_departure(l1.node)
    return dominates_on(l1.fn, l2.fn, l2.a, hi, eps=VALUE_TOL)


class _GraphNode:
    __slots__ = ("key", "attrs", "labels", "env", "preds", "succs")

    def __init__(self, key, attrs, label, env):
        self.key = key
        self.attrs = attrs
        self.labels = [label]
        self.env = env
        self.preds: set[_GraphNode] = set()
        self.succs: set[_GraphNode] = set()


class DominanceGraph:
    """Acyclic digraph of label-attribute classes with envelope functions.

    Arcs run from attribute-dominating classes to dominated ones; each
    node's envelope covers its own labels and every ancestor's, so testing
    the deepest dominating classes realizes set dominance.
    """

    def __init__(self, inst: Instance, node: int, sigma, backward: bool):
        self.inst = inst
        self.node = node
        self.sigma = tuple(sigma)
        self.backward = backward
        self.hi = inst.latest_departure(node)
        self.nodes: dict[tuple, _GraphNode] = {}
        self.dominated = 0
        self.purged = 0

    # window of a label / class with departure resource `a`
    def _window(self, a: float) -> tuple[float, float]:
        return (0.0, a) if self.backward else (a, self.hi)

    def _env_covers(self, env: PwlFunction, lab: Label) -> bool:
        lo, hi = self._window(lab.a)
        if self.backward:
            return dominates_on(lab.fn, env, lo, hi, eps=VALUE_TOL)
        return dominates_on(env, lab.fn, lo, hi, eps=VALUE_TOL)

    def _merge_env(self, env: PwlFunction, fn: PwlFunction, a: float) -> PwlFunction:
        lo, hi = self._window(a)
        fns = [env, fn.restrict(lo, hi)]
        return lower_envelope(fns) if self.backward else upper_envelope(fns)

    @staticmethod
    def _key(attrs):
        r, h, a, V, sr = attrs
        return (round(r, 9), round(h, 9), round(a, 9), V, sr)

    def alive_labels(self):
        for gn in self.nodes.values():
            yield from gn.labels

    def label_count(self) -> int:
        return sum(len(gn.labels) for gn in self.nodes.values())

    def add(self, lab: Label) -> bool:
        """AddLabel: leaf test, frontier set-dominance test, insert, update
        envelopes downstream and purge labels that no longer contribute."""
        attrs = lab.attrs()
        candidates = [
            gn
            for gn in self.nodes.values()
            if _attr_dominates(gn.attrs, attrs, self.sigma, self.backward)
        ]
        if candidates:
            cand = set(candidates)
            leaves = [gn for gn in candidates if not gn.succs]
            for gn in leaves:
                if self._env_covers(gn.env, lab):
                    self.dominated += 1
                    return False
            frontier = [
                gn for gn in candidates
                if gn not in leaves and not (gn.succs & cand)
            ]
            for gn in frontier:
                if self._env_covers(gn.env, lab):
                    self.dominated += 1
                    return False

        key = self._key(attrs)
        home = self.nodes.get(key)
        if home is not None:
            home.labels.append(lab)
            home.env = self._merge_env(home.env, lab.fn, home.attrs[2])
        else:
            lo, hi = self._window(attrs[2])
            env = lab.fn.restrict(lo, hi)
            home = _GraphNode(key, attrs, lab, env)
            for gn in self.nodes.values():
                fwd = _attr_dominates(gn.attrs, attrs, self.sigma, self.backward)
                rev = _attr_dominates(attrs, gn.attrs, self.sigma, self.backward)
                if fwd and not rev:
                    gn.succs.add(home)
                    home.preds.add(gn)
                elif rev and not fwd:
                    home.succs.add(gn)
                    gn.preds.add(home)
            for p in home.preds:
                home.env = self._merge_env(home.env, p.env, attrs[2])
            self.nodes[key] = home

        # push the new battery function through every descendant class
        stack = list(home.succs)
        seen = {home}
        touched = [home]
        while stack:
            gn = stack.pop()
            if gn in seen:
                continue
            seen.add(gn)
            gn.env = self._merge_env(gn.env, lab.fn, gn.attrs[2])
            touched.append(gn)
            stack.extend(gn.succs)
        for gn in touched:
            self._purge(gn, keep=lab)
        return True

    def _purge(self, gn: _GraphNode, keep: Label) -> None:
        if not gn.labels:
            return
        for cand in list(gn.labels):
            if cand is keep or len(gn.labels) == 1 and not gn.preds:
                continue
            others = [o.fn.restrict(*self._window(gn.attrs[2]))
                      for o in gn.labels if o is not cand]
            others += [p.env for p in gn.preds]
            if not others:
                continue
            if self.backward:
                env = lower_envelope(others)
                redundant = dominates_on(cand.fn, env, 0.0, cand.a, eps=1e-9)
            else:
                env = upper_envelope(others)
                redundant = dominates_on(env, cand.fn, cand.a, self.hi, eps=1e-9)
            if redundant:
                gn.labels.remove(cand)
                cand.alive = False
                self.purged += 1
        if not gn.labels:
            for p in gn.preds:
                p.succs.discard(gn)
            for s in gn.succs:
                s.preds.discard(gn)
            del self.nodes[gn.key]


class _PlainPool:
    """Pool with pairwise Dominance-1 filtering, or none at all."""

    def __init__(self, inst, node, sigma, backward, use_dominance):
        self.inst = inst
        self.node = node
        self.sigma = sigma
        self.backward = backward
        self.use_dominance = use_dominance
        self.labels: list[Label] = []
        self.dominated = 0

    def alive_labels(self):
        return [l for l in self.labels if l.alive]

    def label_count(self):
        return sum(1 for l in self.labels if l.alive)

    def add(self, lab: Label) -> bool:
        if self.use_dominance:
            for old in self.labels:
                if old.alive and dominance1(
                    self.inst, old, lab, self.sigma, self.backward
                ):
                    self.dominated += 1
                    return False
            for old in self.labels:
                if old.alive and dominance1(
                    self.inst, lab, old, self.sigma, self.backward
                ):
                    old.alive = False
            self.labels = [l for l in self.labels if l.alive]
        self.labels.append(lab)
        return True


# -- completion bounds ------------------------------------------------------------


@dataclass
class QRouteBounds:
    """2-cycle-free completion lower bounds over demand buckets.

    ``valid`` is False when the hop-capped value iteration failed to
    converge (negative dual cycles are possible with zero demands); bounds
    are then unusable and queries return -inf.
    """

    table: dict[int, list[float]]
    capacity: float
    valid: bool

    def query(self, node: int, load: float) -> float:
        if not self.valid:
            return -math.inf
        d = int(math.floor(self.capacity - load + 1e-9))
        if d < 0:
            return math.inf
        return self.table[node][min(d, len(self.table[node]) - 1)]


def qroute_bounds(
    inst: Instance,
    duals: Duals,
    forbidden: frozenset[tuple[int, int]] = frozenset(),
    reverse: bool = False,
) -> QRouteBounds:
    """Demand-bucketed DP toward the depot (reverse=True: from the depot).

    Arc costs are travel plus the entered node's service minus its dual
    (interior nodes only), so the value at (v, d) lower-bounds the
    travel+service-minus-duals part of any 2-cycle-free completion using at
    most d demand units.  Each state keeps the two best values over
    distinct first hops, which is what immediate-cycle avoidance needs.
    """
    nodes = list(range(len(inst.nodes)))
    D = int(math.floor(inst.Q + 1e-9))

    def units(q: float) -> int:
        return int(math.floor(q + 1e-9))

    arcs: dict[int, list[tuple[int, float, int]]] = {}
    for v in nodes:
        out = []
        for w in nodes:
            if w == v:
                continue
            real = (w, v) if reverse else (v, w)
            if real in forbidden:
                continue
            t_leg = inst.t(real[0], real[1])
            cost = t_leg if w == 0 else t_leg + inst.s(w) - duals.mu.get(w, 0.0)
            cost -= duals.arc.get(real, 0.0)
            out.append((w, cost, units(inst.q(w)) if w != 0 else 0))
        arcs[v] = out

    # state[v][d]: up to two (value, first-hop) pairs with distinct first hops
    state: dict[int, list[list[tuple[float, int | None]]]] = {
        v: [([(0.0, None)] if v == 0 else []) for _ in range(D + 1)] for v in nodes
    }

    def push(cell: list[tuple[float, int | None]], val: float, w: int) -> bool:
        for k, (v0, w0) in enumerate(cell):
            if w0 == w:
                if val < v0 - 1e-12:
                    cell[k] = (val, w)
                    cell.sort(key=lambda p: p[0])
                    return True
                return False
        cell.append((val, w))
        cell.sort(key=lambda p: p[0])
        if len(cell) > 2:
            cell.pop()
            return cell[-1] == (val, w) or cell[0] == (val, w)
        return True

    hop_cap = 2 * len(nodes) + 6
    converged = False
    for _ in range(hop_cap):
        changed = False
        for v in nodes:
            if v == 0:
                continue
            for d in range(D + 1):
                for w, cost, qw in arcs[v]:
                    dd = d - qw
                    if dd < 0:
                        continue
                    tail = math.inf
                    for tv, tw in state[w][dd]:
                        if tw != v:
                            tail = tv
                            break
                    if tail == math.inf:
                        continue
                    if push(state[v][d], cost + tail, w):
                        changed = True
        if not changed:
            converged = True
            break

    table: dict[int, list[float]] = {}
    for v in nodes:
        row = []
        run = math.inf
        for d in range(D + 1):
            if state[v][d]:
                run = min(run, state[v][d][0][0])
            row.append(run)
        table[v] = row
    return QRouteBounds(table=table, capacity=float(inst.Q), valid=converged)


# -- the pricer ----------------------------------------------------------------------


@dataclass
class PricingConfig:
    dominance: str = "graph"        # "graph" | "dom1" | "none"
    bidirectional: bool = True
    use_bounds: bool = True
    ng_size: int = 8
    elementary: bool = False        # full elementarity (disables ng relaxation)
    max_columns: int = 150
    slots: int = 16                 # depot-window slices for the thresholds
    max_ng_iterations: int = 64


@dataclass
class PricedRoute:
    nodes: tuple[int, ...]
    duration: float
    reduced_cost: float

    @property
    def is_elementary(self) -> bool:
        seen = set()
        for v in self.nodes[1:-1]:
            if v in seen:
                return False
            seen.add(v)
        return True


@dataclass
class PricingStats:
    created_fwd: int = 0
    created_bwd: int = 0
    dominated: int = 0
    purged: int = 0
    pruned_by_bound: int = 0
    surviving: int = 0
    graph_nodes: int = 0
    candidates: int = 0
    ng_iterations: int = 0
    complete: bool = False
    min_reduced_cost: float = math.inf

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class PricingResult:
    min_reduced_cost: float
    routes: list[PricedRoute]
    stats: PricingStats


class Pricer:
    """Bidirectional label-setting pricer with persistent thresholds/ng state."""

    def __init__(self, inst: Instance, config: PricingConfig | None = None):
        self.inst = inst
        self.config = config or PricingConfig()
        self.full_mask = (1 << inst.n_customers) - 1
        self.ng_masks = self._initial_ng_masks()
        width = inst.T - 0.0
        self.slot = width / self.config.slots
        self.tf = 0.0 + self.slot
        self.tb = inst.T - self.slot
        if not self.config.bidirectional:
            self.tf, self.tb = inst.T, inst.T
        self.total_fwd = 0
        self.total_bwd = 0

    # -- ng machinery ------------------------------------------------------------

    def _initial_ng_masks(self) -> list[int]:
        inst = self.inst
        if self.config.elementary:
            return [self.full_mask] * len(inst.nodes)
        masks = []
        for v in range(len(inst.nodes)):
            near = sorted(
                (c for c in inst.customers if c != v),
                key=lambda c: inst.t(v, c) + inst.t(c, v),
            )[: self.config.ng_size]
            m = 0
            for c in near:
                m |= 1 << (c - 1)
            if inst.is_customer(v):
                m |= 1 << (v - 1)
            masks.append(m)
        return masks

    def _grow_ng_from(self, seq: tuple[int, ...]) -> bool:
        """Add each cycled customer to the ng-sets of the cycle's nodes."""
        grew = False
        positions: dict[int, list[int]] = {}
        for pos, v in enumerate(seq):
            if self.inst.is_customer(v):
                positions.setdefault(v, []).append(pos)
        for c, ps in positions.items():
            bit = 1 << (c - 1)
            for p1, p2 in zip(ps, ps[1:]):
                for v in seq[p1 : p2 + 1]:
                    if not (self.ng_masks[v] & bit):
                        self.ng_masks[v] |= bit
                        grew = True
        return grew

    # -- thresholds ---------------------------------------------------------------

    def update_thresholds(self) -> tuple[float, float]:
        """One balancing step after a pricing round, clamped to not cross."""
        if not self.config.bidirectional:
            return self.tf, self.tb
        if self.total_fwd > self.total_bwd:
            self.tb = max(self.tb - self.slot, self.tf)
        else:
            self.tf = min(self.tf + self.slot, self.tb)
        return self.tf, self.tb

    @property
    def complete(self) -> bool:
        return self.tf >= self.tb - 1e-12

    def force_complete(self) -> None:
        mid = 0.5 * (self.tf + self.tb)
        self.tf = self.tb = mid

    # -- label extension -----------------------------------------------------------

    def _extend(self, lab: Label, j: int, duals: Duals, sr_sets, backward: bool,
                counter: itertools.count) -> Label | None:
        inst = self.inst
        i = lab.node
        if inst.is_customer(j):
            bit = 1 << (j - 1)
            if lab.visited & bit:
                return None
            if lab.h + inst.q(j) > inst.Q + H_EPS:
                return None
        if backward:
            st = charge.backward_extend(
                inst, charge.BackwardState(i, lab.a, lab.fn), j
            )
            if st is None:
                return None
            a_new, fn = st.d, st.g
            arc = (j, i)
        else:
            st = charge.forward_extend(
                inst, charge.ForwardState(i, lab.a, lab.fn), j
            )
            if st is None:
                return None
            a_new, fn = st.a, st.f
            arc = (i, j)
        r = lab.r + duals.arc.get(arc, 0.0)
        h = lab.h
        visited = lab.visited & self.ng_masks[j]
        sr = lab.sr
        if inst.is_customer(j):
            r += duals.mu.get(j, 0.0)
            h += inst.q(j)
            visited |= 1 << (j - 1)
            if sr_sets:
                bit = 1 << (j - 1)
                sr = list(sr)
                for k, (mask, sig) in enumerate(sr_sets):
                    if mask & bit:
                        sr[k] += 1
                        if sr[k] % 2 == 0:
                            r += sig
                sr = tuple(sr)
        ts = lab.ts + inst.t(arc[0], arc[1]) + inst.s(j)
        return Label(j, r, h, a_new, fn, visited, sr, ts, pred=lab,
                     order=next(counter))

    # -- one labeling run ------------------------------------------------------------

    def _make_pools(self, sigma, backward):
        inst = self.inst
        if self.config.dominance == "graph":
            return [DominanceGraph(inst, v, sigma, backward)
                    for v in range(len(inst.nodes))]
        use_dom = self.config.dominance == "dom1"
        return [_PlainPool(inst, v, sigma, backward, use_dom)
                for v in range(len(inst.nodes))]

    def _run_direction(self, duals: Duals, sr_sets, forbidden, bounds,
                       backward: bool, stats: PricingStats):
        inst = self.inst
        sigma = tuple(sig for _m, sig in sr_sets)
        pools = self._make_pools(sigma, backward)
        counter = itertools.count()
        if backward:
            root = Label(0, 0.0, 0.0, inst.T,
                         PwlFunction.constant(0.0, inst.T, 0.0),
                         0, (0,) * len(sr_sets), 0.0, order=next(counter))
        else:
            root = Label(0, 0.0, 0.0, 0.0,
                         PwlFunction.constant(0.0, inst.T, inst.B),
                         0, (0,) * len(sr_sets), 0.0, order=next(counter))
        pools[0].add(root)
        sign = -1.0 if backward else 1.0
        heap: list[tuple[float, float, int, Label]] = []
        heapq.heappush(heap, (sign * root.a, root.h, root.order, root))
        threshold = self.tb if backward else self.tf
        route_const = duals.route_constant()
        targets_all = [
            [j for j in range(1, len(inst.nodes))]
            for _ in range(len(inst.nodes))
        ]
        close_depot = not self.config.bidirectional and not backward
        created = 0
        while heap:
            _, _, _, lab = heapq.heappop(heap)
            if not lab.alive:
                continue
            if backward:
                if lab.a < threshold - 1e-12:
                    break
            elif lab.a > threshold + 1e-12:
                break
            targets = targets_all[lab.node]
            if close_depot and lab.node != 0:
                targets = targets + [0]
            for j in targets:
                if j == lab.node:
                    continue
                arc = (j, lab.node) if backward else (lab.node, j)
                if arc in forbidden:
                    continue
                child = self._extend(lab, j, duals, sr_sets, backward, counter)
                if child is None:
                    continue
                created += 1
                if bounds is not None and j != 0:
                    anchor = child.ts if backward else child.a
                    if anchor - child.r - route_const + bounds.query(j, child.h) >= -R_EPS:
                        stats.pruned_by_bound += 1
                        continue
                if pools[j].add(child):
                    heapq.heappush(
                        heap, (sign * child.a, child.h, child.order, child)
                    )
        if backward:
            stats.created_bwd += created
            self.total_bwd += created
        else:
            stats.created_fwd += created
            self.total_fwd += created
        for p in pools:
            stats.dominated += getattr(p, "dominated", 0)
            stats.purged += getattr(p, "purged", 0)
            if isinstance(p, DominanceGraph):
                stats.graph_nodes += len(p.nodes)
        return pools

    # -- merging -------------------------------------------------------------------

    def _merge_all(self, fwd_pools, bwd_pools, duals: Duals, stats: PricingStats):
        inst = self.inst
        seen: dict[tuple[int, ...], PricedRoute] = {}

        def consider(seq: tuple[int, ...], duration: float):
            if seq in seen:
                return
            col = make_column(inst, seq, duration)
            rc = reduced_cost(col, duals)
            seen[seq] = PricedRoute(seq, duration, rc)

        if bwd_pools is None:
            for lab in fwd_pools[0].alive_labels():
                if lab.pred is None:
                    continue
                consider(lab.path(), lab.a)
        else:
            for v in range(len(inst.nodes)):
                fls = list(fwd_pools[v].alive_labels())
                bls = list(bwd_pools[v].alive_labels())
                if not fls or not bls:
                    continue
                q_v = inst.q(v)
                allowed = (1 << (v - 1)) if inst.is_customer(v) else 0
                for lf in fls:
                    for lb in bls:
                        if lf.pred is None and lb.pred is None:
                            continue
                        if lf.h + lb.h - q_v > inst.Q + H_EPS:
                            continue
                        if lf.a > lb.a + TIME_TOL:
                            continue
                        if (lf.visited & lb.visited) & ~allowed:
                            continue
                        got = charge.merge_slack(lf.fn, lb.fn)
                        if got is None:
                            continue
                        consider(
                            lf.path() + lb.path(backward=True)[1:],
                            inst.T - got[0],
                        )
        stats.candidates += len(seen)
        return list(seen.values())

    # -- main entry -------------------------------------------------------------------

    def solve(self, duals: Duals,
              forbidden: frozenset[tuple[int, int]] = frozenset()) -> PricingResult:
        """One pricing round: ng iterations until the best route is elementary."""
        stats = PricingStats()
        cfg = self.config
        sr_sets = []
        for members, sig in duals.sigma:
            mask = 0
            for c in members:
                mask |= 1 << (c - 1)
            sr_sets.append((mask, sig))
        bounds = None
        if cfg.use_bounds:
            fb = qroute_bounds(self.inst, duals, forbidden)
            bb = qroute_bounds(self.inst, duals, forbidden, reverse=True)
            fwd_bounds = fb if fb.valid else None
            bwd_bounds = bb if bb.valid else None
        else:
            fwd_bounds = bwd_bounds = None

        elementary: dict[tuple[int, ...], PricedRoute] = {}
        min_rc = math.inf
        for _ in range(cfg.max_ng_iterations):
            stats.ng_iterations += 1
            fwd_pools = self._run_direction(
                duals, sr_sets, forbidden, fwd_bounds, False, stats
            )
            bwd_pools = (
                self._run_direction(duals, sr_sets, forbidden, bwd_bounds, True, stats)
                if cfg.bidirectional
                else None
            )
            cand = self._merge_all(fwd_pools, bwd_pools, duals, stats)
            cand.sort(key=lambda pr: pr.reduced_cost)
            stats.surviving = sum(p.label_count() for p in fwd_pools) + (
                sum(p.label_count() for p in bwd_pools) if bwd_pools else 0
            )
            min_rc = min((pr.reduced_cost for pr in cand), default=math.inf)
            for pr in cand:
                if pr.is_elementary and pr.nodes not in elementary:
                    elementary[pr.nodes] = pr
            if not cand or cand[0].is_elementary or cfg.elementary:
                break
            if not self._grow_ng_from(cand[0].nodes):
                break
        stats.min_reduced_cost = min_rc
        stats.complete = self.complete
        self.update_thresholds()
        negatives = sorted(
            (pr for pr in elementary.values() if pr.reduced_cost < -R_EPS),
            key=lambda pr: pr.reduced_cost,
        )
        return PricingResult(
            min_reduced_cost=min_rc,
            routes=negatives[: cfg.max_columns],
            stats=stats,
        )
