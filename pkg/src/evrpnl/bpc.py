"""Branch-and-price-and-cut driver.

Per node: column generation to convergence (pricing must also report a
complete bidirectional pass before convergence is accepted), then rounds of
subset-row cut separation with re-pricing.  Branching is hierarchical:
fractional vehicle count first, then strong branching over the most
fractional arc flows.  Node selection is best-first on the lower bound.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import charge, tabu
from .master import (
    Duals,
    NodeInfeasible,
    RmpState,
    make_column,
    separate_sr_cuts,
)
from .model import InfeasibleRouteError, Instance, Route
from .pricing import Pricer, PricingConfig
from .simplex import LpOracle

RC_EPS = 1e-6
INT_TOL = 1e-4
GAP_TOL = 1e-4


@dataclass
class BpcConfig:
    use_cuts: bool = True
    cut_rounds: int = 5
    cuts_per_round: int = 50
    time_limit: float = math.inf          # seconds
    node_limit: int = 100_000
    strong_branch_candidates: int = 10
    strong_branch_rounds: int = 3
    pricing: PricingConfig = field(default_factory=PricingConfig)
    oracle: LpOracle | None = None
    warm_start_tabu: bool = False
    seed: int = 42


@dataclass
class SolveReport:
    instance: str
    mode: str
    lp_cost_root: float | None = None
    root_lb_with_cuts: float | None = None
    ip_cost: float | None = None
    root_time: float = 0.0
    total_time: float = 0.0
    sr_cuts: int = 0
    nodes_explored: int = 0
    optimal: bool = False
    best_lb: float | None = None
    routes: list[Route] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "instance": self.instance,
            "mode": self.mode,
            "lp_cost": None if self.lp_cost_root is None else round(self.lp_cost_root, 2),
            "ip_cost": None if self.ip_cost is None else round(self.ip_cost, 2),
            "root_time": round(self.root_time, 2),
            "ip_time": round(self.total_time, 2),
            "sr_cuts": self.sr_cuts,
            "nodes": self.nodes_explored,
            "optimal": self.optimal,
            "best_lb": None if self.best_lb is None else round(self.best_lb, 4),
        }
        out["routes"] = [r.to_dict() for r in self.routes]
        return out

    def csv_row(self) -> dict:
        return {
            "Instance": self.instance,
            "Mode": self.mode,
            "LP Cost": "" if self.lp_cost_root is None else f"{self.lp_cost_root:.2f}",
            "IP Cost": "" if self.ip_cost is None else f"{self.ip_cost:.2f}",
            "Root Time (s)": f"{self.root_time:.2f}",
            "IP Time (s)": f"{self.total_time:.2f}",
            "SR Cuts": str(self.sr_cuts),
            "Nodes": str(self.nodes_explored),
            "Optimal": "Yes" if self.optimal else "No",
        }


class _Clock:
    def __init__(self, limit: float):
        self.start = time.perf_counter()
        self.limit = limit

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self.start

    @property
    def out_of_time(self) -> bool:
        return self.elapsed >= self.limit


@dataclass
class TreeNode:
    rmp: RmpState
    lb: float
    depth: int
    order: int

    def __lt__(self, other):  # heapq
        return (self.lb, self.order) < (other.lb, other.order)


def _solve_cg(rmp: RmpState, pricer: Pricer, clock: _Clock):
    """Column generation to convergence: returns (obj, theta, duals) or None
    when interrupted by the clock."""
    forbidden = frozenset(rmp.forbidden_arcs())
    while True:
        obj, theta, duals = rmp.solve_lp()
        if clock.out_of_time:
            return obj, theta, duals, False
        res = pricer.solve(duals, forbidden)
        added = 0
        for pr in res.routes:
            if rmp.add_column(make_column(rmp.inst, pr.nodes, pr.duration)):
                added += 1
        if added:
            continue
        if res.min_reduced_cost >= -RC_EPS and res.stats.complete:
            return obj, theta, duals, True
        if not res.stats.complete:
            pricer.force_complete()
            continue
        # complete pass, negative bound but no new elementary columns:
        # numerically stuck; accept convergence at the bound's tolerance
        if res.min_reduced_cost >= -10 * RC_EPS:
            return obj, theta, duals, True
        return obj, theta, duals, True


def solve_node(
    rmp: RmpState,
    pricer: Pricer,
    cfg: BpcConfig,
    clock: _Clock,
    cut_state: dict | None = None,
):
    """CG to convergence, then SR-cut rounds (when enabled)."""
    obj, theta, duals, converged = _solve_cg(rmp, pricer, clock)
    pre_cut_obj = obj
    if cfg.use_cuts and converged and cut_state is not None:
        for _ in range(cfg.cut_rounds):
            if clock.out_of_time:
                break
            cuts = separate_sr_cuts(
                rmp.inst,
                theta,
                rmp.columns,
                max_new=cfg.cuts_per_round,
                existing=cut_state["seen"],
            )
            if not cuts:
                break
            for cut in cuts:
                rmp.add_cut(cut)
                cut_state["seen"].add(cut.members)
                cut_state["count"] += 1
            obj, theta, duals, converged = _solve_cg(rmp, pricer, clock)
            if not converged:
                break
    return pre_cut_obj, obj, theta, duals, converged


def _fractional_arcs(rmp: RmpState, theta: np.ndarray) -> list[tuple[float, tuple[int, int]]]:
    out = []
    for arc, flow in sorted(rmp.arc_flows(theta).items()):
        frac = abs(flow - round(flow))
        if frac > INT_TOL:
            out.append((frac, arc))
    out.sort(key=lambda t: (-t[0], t[1]))
    return out


def branch(
    rmp: RmpState,
    theta: np.ndarray,
    pricer_factory,
    cfg: BpcConfig,
    clock: _Clock,
) -> list[RmpState] | None:
    """Children of a fractional node; None when the solution is integral."""
    kbar = rmp.vehicle_count(theta)
    if abs(kbar - round(kbar)) > INT_TOL:
        lo, hi = rmp.clone(), rmp.clone()
        lo.add_branch_vehicle("<", math.floor(kbar))
        hi.add_branch_vehicle(">", math.ceil(kbar))
        return [lo, hi]

    cands = _fractional_arcs(rmp, theta)
    if not cands:
        return None
    cands = cands[: cfg.strong_branch_candidates]
    if len(cands) == 1:
        arc = cands[0][1]
        return _arc_children(rmp, arc)

    best_arc = None
    best_score = -math.inf
    for _frac, arc in cands:
        score = 0.0
        for child in _arc_children(rmp, arc):
            probe = Pricer(child.inst, cfg.pricing)
            try:
                obj = _probe_lb(child, probe, cfg, clock)
            except NodeInfeasible:
                obj = 1e12
            score += obj
        if score > best_score + 1e-9:
            best_score = score
            best_arc = arc
        if clock.out_of_time:
            break
    return _arc_children(rmp, best_arc if best_arc is not None else cands[0][1])


def _arc_children(rmp: RmpState, arc: tuple[int, int]) -> list[RmpState]:
    lo, hi = rmp.clone(), rmp.clone()
    lo.add_branch_arc(arc, "<", 0.0)
    hi.add_branch_arc(arc, ">", 1.0)
    return [lo, hi]


def _probe_lb(rmp: RmpState, pricer: Pricer, cfg: BpcConfig, clock: _Clock) -> float:
    """Limited column generation for strong-branching scores."""
    forbidden = frozenset(rmp.forbidden_arcs())
    obj = math.inf
    for _ in range(cfg.strong_branch_rounds):
        obj, _theta, duals = rmp.solve_lp()
        res = pricer.solve(duals, forbidden)
        added = 0
        for pr in res.routes:
            if rmp.add_column(make_column(rmp.inst, pr.nodes, pr.duration)):
                added += 1
        if not added or clock.out_of_time:
            break
    return obj


def _extract_solution(rmp: RmpState, theta: np.ndarray) -> list[Route] | None:
    routes = []
    for k, col in enumerate(rmp.columns):
        if col.artificial or theta[k] <= 0.5:
            continue
        copies = int(round(theta[k]))
        for _ in range(copies):
            try:
                routes.append(charge.simulate_route(rmp.inst, col.route))
            except InfeasibleRouteError:
                return None
    return routes


def solve(inst: Instance, cfg: BpcConfig | None = None) -> SolveReport:
    """Best-first branch-and-price-and-cut."""
    cfg = cfg or BpcConfig()
    clock = _Clock(cfg.time_limit)
    mode = "exact-bpc" if cfg.use_cuts else "exact-bp"
    report = SolveReport(instance=inst.name, mode=mode)
    if inst.window_infeasible:
        report.optimal = False
        report.total_time = clock.elapsed
        return report

    root = RmpState(inst, oracle=cfg.oracle)
    _seed_columns(inst, root, cfg)
    pricer = Pricer(inst, cfg.pricing)
    cut_state = {"seen": set(), "count": 0}

    ub = math.inf
    best_routes: list[Route] = []
    if cfg.warm_start_tabu:
        try:
            routes, cost, _stats = tabu.tabu_search(
                inst, tabu.TabuParams.for_size(inst.n_customers, seed=cfg.seed)
            )
            ub, best_routes = cost, routes
            for r in routes:
                root.add_route(r)
        except tabu.ConstructionError:
            pass

    order = 0
    heap: list[TreeNode] = []
    try:
        pre, obj, theta, duals, converged = solve_node(root, pricer, cfg, clock, cut_state)
    except NodeInfeasible:
        report.total_time = clock.elapsed
        return report
    report.lp_cost_root = pre
    report.root_lb_with_cuts = obj
    report.root_time = clock.elapsed
    heapq.heappush(heap, TreeNode(root, obj, 0, order))
    node_results = {id(root): (obj, theta, duals, converged)}

    while heap:
        if clock.out_of_time or report.nodes_explored >= cfg.node_limit:
            break
        node = heapq.heappop(heap)
        if node.lb >= ub - GAP_TOL:
            continue
        report.nodes_explored += 1
        got = node_results.pop(id(node.rmp), None)
        if got is None:
            try:
                _pre, obj, theta, duals, converged = solve_node(
                    node.rmp, pricer, cfg, clock, cut_state
                )
            except NodeInfeasible:
                continue
        else:
            obj, theta, duals, converged = got
        if not converged:
            break
        lb = max(obj, node.lb)
        if lb >= ub - GAP_TOL:
            continue
        if node.rmp.uses_artificial(theta):
            continue  # converged onto big-M cover: no feasible solution here
        if node.rmp.is_integral(theta):
            routes = _extract_solution(node.rmp, theta)
            if routes is not None:
                cost = sum(r.duration for r in routes)
                if cost < ub - 1e-9:
                    ub, best_routes = cost, routes
            continue
        children = branch(node.rmp, theta, None, cfg, clock)
        if children is None:
            routes = _extract_solution(node.rmp, theta)
            if routes is not None:
                cost = sum(r.duration for r in routes)
                if cost < ub - 1e-9:
                    ub, best_routes = cost, routes
            continue
        for child in children:
            order += 1
            heapq.heappush(heap, TreeNode(child, lb, node.depth + 1, order))

    report.total_time = clock.elapsed
    report.sr_cuts = cut_state["count"]
    open_lbs = [n.lb for n in heap]
    report.best_lb = min(open_lbs) if open_lbs else ub
    if not math.isinf(ub):
        report.ip_cost = ub
        report.routes = best_routes
    report.optimal = (
        not clock.out_of_time
        and report.nodes_explored < cfg.node_limit
        and not heap
        or (not math.isinf(ub) and report.best_lb >= ub - GAP_TOL)
    )
    if math.isinf(ub):
        report.optimal = not heap and not clock.out_of_time
    return report


def _seed_columns(inst: Instance, rmp: RmpState, cfg: BpcConfig) -> None:
    """Heuristic start columns: greedy construction routes plus singletons."""
    try:
        sol = tabu.initial_solution(inst)
        for rs in sol.non_empty():
            try:
                rmp.add_route(charge.simulate_route(inst, tuple(rs.seq)))
            except InfeasibleRouteError:
                continue
    except tabu.ConstructionError:
        pass
    for c in inst.customers:
        candidates = [(0, c, 0)]
        candidates += [(0, s, c, 0) for s in inst.station_ids]
        candidates += [(0, c, s, 0) for s in inst.station_ids]
        candidates += [(0, s, c, s2, 0) for s in inst.station_ids for s2 in inst.station_ids]
        for seq in candidates:
            try:
                rmp.add_route(charge.simulate_route(inst, seq))
                break
            except InfeasibleRouteError:
                continue
