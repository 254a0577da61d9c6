"""Restricted master problem: set-partitioning LP over route columns.

Rows: one equality per customer (visited exactly once), the fleet bound,
subset-row cuts over 3-customer sets, and branching constraints.  Big-M
artificial columns keep every node LP-feasible so duals always exist; a
node whose optimum still uses an artificial is infeasible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import Instance, Route
from .simplex import INFEASIBLE, LpOracle, LpSolution, OPTIMAL, SimplexOracle

EPS = 1e-6
INT_TOL = 1e-4


@dataclass(frozen=True)
class Column:
    route: tuple[int, ...]
    cost: float
    alpha: tuple[int, ...]          # visit count per customer (index id-1)
    gamma: tuple[tuple[tuple[int, int], int], ...]  # arc -> traversal count
    artificial: bool = False
    art_row: tuple[str, int] | None = None  # which row an artificial covers

    @property
    def covered(self) -> tuple[int, ...]:
        return tuple(i + 1 for i, a in enumerate(self.alpha) if a)

    def arc_count(self, arc: tuple[int, int]) -> int:
        for a, cnt in self.gamma:
            if a == arc:
                return cnt
        return 0


def make_column(inst: Instance, route: Route | tuple[int, ...], cost: float | None = None) -> Column:
    if isinstance(route, Route):
        seq, cost = route.nodes, route.duration if cost is None else cost
    else:
        seq = tuple(route)
        assert cost is not None
    n = inst.n_customers
    alpha = [0] * n
    for v in seq[1:-1]:
        if inst.is_customer(v):
            alpha[v - 1] += 1
    arcs: dict[tuple[int, int], int] = {}
    for a, b in zip(seq, seq[1:]):
        arcs[(a, b)] = arcs.get((a, b), 0) + 1
    return Column(
        route=seq,
        cost=float(cost),
        alpha=tuple(alpha),
        gamma=tuple(sorted(arcs.items())),
    )


@dataclass(frozen=True)
class SrCut:
    members: frozenset[int]

    def coefficient(self, col: Column) -> int:
        return sum(col.alpha[i - 1] for i in self.members) // 2


@dataclass(frozen=True)
class BranchConstraint:
    kind: str                      # "vehicle" | "arc"
    sense: str                     # "<" | ">"
    bound: float
    arc: tuple[int, int] | None = None

    def coefficient(self, col: Column) -> float:
        if col.artificial:
            return 0.0
        if self.kind == "vehicle":
            return 1.0
        return float(col.arc_count(self.arc))


@dataclass
class Duals:
    """Dual values in the sign convention of a minimization LP."""

    mu0: float
    mu: dict[int, float]
    sigma: list[tuple[frozenset[int], float]] = field(default_factory=list)
    arc: dict[tuple[int, int], float] = field(default_factory=dict)
    vehicle: float = 0.0

    def route_constant(self) -> float:
        """Per-route dual credit independent of the node sequence."""
        return self.mu0 + self.vehicle


def reduced_cost(col: Column, duals: Duals) -> float:
    """c_p minus everything the duals pay for this column."""
    rc = col.cost - duals.route_constant()
    for i, a in enumerate(col.alpha):
        if a:
            rc -= a * duals.mu.get(i + 1, 0.0)
    for members, sig in duals.sigma:
        if sig:
            k = sum(col.alpha[i - 1] for i in members) // 2
            if k:
                rc -= k * sig
    if duals.arc:
        for arc, cnt in col.gamma:
            pi = duals.arc.get(arc)
            if pi:
                rc -= cnt * pi
    return rc


class NodeInfeasible(Exception):
    """The node's constraints admit no fractional solution."""


class RmpState:
    """Columns + cuts + branching rows with an LP oracle behind them."""

    def __init__(self, inst: Instance, oracle: LpOracle | None = None):
        self.inst = inst
        self.oracle = oracle or SimplexOracle()
        self.columns: list[Column] = []
        self._route_index: dict[tuple[int, ...], int] = {}
        self.cuts: list[SrCut] = []
        self.branches: list[BranchConstraint] = []
        self.big_m = 10.0 * inst.T
        self._last_surplus = 0.0
        self._add_artificials()

    def clone(self) -> "RmpState":
        dup = RmpState.__new__(RmpState)
        dup.inst = self.inst
        dup.oracle = self.oracle
        dup.columns = list(self.columns)
        dup._route_index = dict(self._route_index)
        dup.cuts = list(self.cuts)
        dup.branches = list(self.branches)
        dup.big_m = self.big_m
        dup._last_surplus = 0.0
        return dup

    # -- columns -----------------------------------------------------------

    def _add_artificials(self) -> None:
        n = self.inst.n_customers
        for i in self.inst.customers:
            alpha = [0] * n
            alpha[i - 1] = 1
            self.columns.append(
                Column(
                    route=(),
                    cost=self.big_m,
                    alpha=tuple(alpha),
                    gamma=(),
                    artificial=True,
                    art_row=("customer", i),
                )
            )

    def add_column(self, col: Column) -> bool:
        """Dedup by route signature; returns True when newly added."""
        if col.route in self._route_index:
            return False
        self._route_index[col.route] = len(self.columns)
        self.columns.append(col)
        return True

    def add_route(self, inst_route: Route) -> bool:
        return self.add_column(make_column(self.inst, inst_route))

    def prune_columns(self, duals: Duals, keep_rc: float, basic: set[int]) -> int:
        """Trim non-basic columns with reduced cost above ``keep_rc``."""
        kept: list[Column] = []
        dropped = 0
        for k, col in enumerate(self.columns):
            if col.artificial or k in basic or reduced_cost(col, duals) <= keep_rc:
                kept.append(col)
            else:
                dropped += 1
        self.columns = kept
        self._route_index = {
            c.route: k for k, c in enumerate(kept) if not c.artificial
        }
        return dropped

    # -- cuts and branches ------------------------------------------------------

    def add_cut(self, cut: SrCut) -> None:
        self.cuts.append(cut)

    def add_branch_vehicle(self, sense: str, bound: float) -> None:
        self._check_branch_consistency("vehicle", None, sense, bound)
        self.branches.append(BranchConstraint("vehicle", sense, bound))

    def add_branch_arc(self, arc: tuple[int, int], sense: str, bound: float) -> None:
        self._check_branch_consistency("arc", arc, sense, bound)
        self.branches.append(BranchConstraint("arc", sense, bound, arc=arc))

    def _check_branch_consistency(self, kind, arc, sense, bound) -> None:
        lo, hi = -math.inf, math.inf
        for br in self.branches:
            if br.kind != kind or br.arc != arc:
                continue
            if br.sense == "<":
                hi = min(hi, br.bound)
            else:
                lo = max(lo, br.bound)
        if sense == "<":
            hi = min(hi, bound)
        else:
            lo = max(lo, bound)
        if lo > hi + EPS:
            raise NodeInfeasible(f"{kind} {arc or ''} bounds [{lo}, {hi}] conflict")

    def forbidden_arcs(self) -> set[tuple[int, int]]:
        """Arcs forced to zero by branching; pricing must never use them."""
        out = set()
        for br in self.branches:
            if br.kind == "arc" and br.sense == "<" and br.bound <= EPS:
                out.add(br.arc)
        return out

    # -- LP ------------------------------------------------------------------------

    def _rows(self) -> list[tuple[str, object, str, float]]:
        rows: list[tuple[str, object, str, float]] = []
        for i in self.inst.customers:
            rows.append(("customer", i, "=", 1.0))
        rows.append(("fleet", None, "<", float(self.inst.K)))
        for cut in self.cuts:
            rows.append(("cut", cut, "<", 1.0))
        for br in self.branches:
            rows.append(("branch", br, br.sense, br.bound))
        return rows

    def _matrix(self) -> tuple[np.ndarray, np.ndarray, list[str], np.ndarray]:
        rows = self._rows()
        ncols = len(self.columns) + sum(1 for r in rows if r[0] == "branch" and r[2] == ">")
        A = np.zeros((len(rows), ncols))
        c = np.zeros(ncols)
        senses = [r[2] for r in rows]
        b = np.array([r[3] for r in rows], dtype=float)
        for k, col in enumerate(self.columns):
            c[k] = col.cost
            for ri, (kind, obj, _s, _b) in enumerate(rows):
                if kind == "customer":
                    if col.artificial:
                        A[ri, k] = 1.0 if col.art_row == ("customer", obj) else 0.0
                    else:
                        A[ri, k] = col.alpha[obj - 1]
                elif kind == "fleet":
                    A[ri, k] = 0.0 if col.artificial else 1.0
                elif kind == "cut":
                    A[ri, k] = 0.0 if col.artificial else obj.coefficient(col)
                else:
                    A[ri, k] = obj.coefficient(col)
        # big-M surplus for >= branch rows keeps the RMP feasible during CG
        extra = len(self.columns)
        for ri, (kind, _obj, s, _b) in enumerate(rows):
            if kind == "branch" and s == ">":
                A[ri, extra] = 1.0
                c[extra] = self.big_m
                extra += 1
        return A, c, senses, b

    def solve_lp(self) -> tuple[float, np.ndarray, Duals]:
        """Optimal basis of the current RMP; raises NodeInfeasible when the
        LP itself is infeasible (conflicting branch rows)."""
        A, c, senses, b = self._matrix()
        sol: LpSolution = self.oracle.solve(c, A, senses, b)
        if sol.status == INFEASIBLE:
            raise NodeInfeasible("restricted master LP infeasible")
        if sol.status != OPTIMAL:
            raise RuntimeError(f"LP oracle returned {sol.status}")
        rows = self._rows()
        mu: dict[int, float] = {}
        duals = Duals(mu0=0.0, mu=mu)
        for ri, (kind, obj, _s, _b) in enumerate(rows):
            y = float(sol.duals[ri])
            if kind == "customer":
                mu[obj] = y
            elif kind == "fleet":
                duals.mu0 = y
            elif kind == "cut":
                duals.sigma.append((obj.members, y))
            else:
                if obj.kind == "vehicle":
                    duals.vehicle += y
                else:
                    duals.arc[obj.arc] = duals.arc.get(obj.arc, 0.0) + y
        theta = sol.x[: len(self.columns)]
        self._last_surplus = float(sol.x[len(self.columns):].sum()) if sol.x.size > len(self.columns) else 0.0
        return float(sol.objective), theta, duals

    # -- solution inspection -----------------------------------------------------

    def uses_artificial(self, theta: np.ndarray) -> bool:
        if self._last_surplus > 1e-6:
            return True
        return any(
            col.artificial and theta[k] > 1e-6 for k, col in enumerate(self.columns)
        )

    def vehicle_count(self, theta: np.ndarray) -> float:
        return float(
            sum(theta[k] for k, col in enumerate(self.columns) if not col.artificial)
        )

    def arc_flows(self, theta: np.ndarray) -> dict[tuple[int, int], float]:
        flows: dict[tuple[int, int], float] = {}
        for k, col in enumerate(self.columns):
            if col.artificial or theta[k] <= EPS:
                continue
            for arc, cnt in col.gamma:
                flows[arc] = flows.get(arc, 0.0) + cnt * theta[k]
        return flows

    def is_integral(self, theta: np.ndarray) -> bool:
        return all(
            abs(v - round(v)) <= INT_TOL
            for k, v in enumerate(theta)
            if not self.columns[k].artificial
        ) and not self.uses_artificial(theta)


def separate_sr_cuts(
    inst: Instance,
    theta: np.ndarray,
    columns: list[Column],
    max_new: int = 50,
    existing: set[frozenset[int]] | None = None,
    min_violation: float = 1e-4,
) -> list[SrCut]:
    """Full enumeration of 3-customer subset-row cuts, most violated first."""
    customers = list(inst.customers)
    if len(customers) < 3:
        return []
    active = [
        (k, col) for k, col in enumerate(columns)
        if not col.artificial and theta[k] > EPS
    ]
    existing = existing or set()
    found: list[tuple[float, frozenset[int]]] = []
    nc = len(customers)
    for ai in range(nc):
        for bi in range(ai + 1, nc):
            for ci in range(bi + 1, nc):
                s = (customers[ai], customers[bi], customers[ci])
                fs = frozenset(s)
                if fs in existing:
                    continue
                lhs = 0.0
                for k, col in active:
                    cov = col.alpha[s[0] - 1] + col.alpha[s[1] - 1] + col.alpha[s[2] - 1]
                    if cov >= 2:
                        lhs += (cov // 2) * theta[k]
                if lhs > 1.0 + min_violation:
                    found.append((lhs - 1.0, fs))
    found.sort(key=lambda t: -t[0])
    return [SrCut(members=fs) for _v, fs in found[:max_new]]
