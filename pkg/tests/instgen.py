"""Seeded random instances for the test and acceptance suites.

Geometry is drawn in a 10x10 box with the depot at the center; energies are
scaled so single arcs burn 25-45% of the battery, which keeps one charging
detour per customer-gap sufficient while still forcing charging decisions.
"""

import math
import random

from evrpnl.model import (
    Instance,
    KIND_CUSTOMER,
    KIND_DEPOT,
    KIND_STATION,
    Node,
    Station,
    derive_windows,
)
from evrpnl.pwl import PwlFunction


def random_curve(rng: random.Random, B: float) -> PwlFunction:
    """2-3 segment concave charging curve from empty to B.

    Strictly decreasing segment slopes, scaled so the last breakpoint lands
    exactly on the battery capacity.
    """
    t_full = rng.uniform(1.5, 3.0)
    segs = rng.choice([2, 3])
    cuts = sorted(rng.uniform(0.25, 0.85) for _ in range(segs - 1))
    ts = [0.0] + [c * t_full for c in cuts] + [t_full]
    slope = 1.0
    pts = [(0.0, 0.0)]
    v = 0.0
    for a, b in zip(ts, ts[1:]):
        v += slope * (b - a)
        pts.append((b, v))
        slope *= rng.uniform(0.25, 0.7)
    scale = B / v
    return PwlFunction([(t, y * scale) for t, y in pts])


def random_instance(
    seed: int,
    n_customers: int = 4,
    n_stations: int = 2,
    with_demands: bool = True,
    name: str | None = None,
) -> Instance:
    rng = random.Random(seed)
    B = 16000.0
    for _attempt in range(50):
        pts = [(5.0, 5.0)]
        pts += [(rng.uniform(0, 10), rng.uniform(0, 10)) for _ in range(n_customers)]
        pts += [
            (rng.uniform(2.5, 7.5), rng.uniform(2.5, 7.5)) for _ in range(n_stations)
        ]
        dmax = max(
            math.hypot(ax - bx, ay - by)
            for ax, ay in pts
            for bx, by in pts
        )
        if dmax < 1e-6:
            continue
        speed = rng.uniform(4.0, 6.0)
        rate = rng.uniform(0.25, 0.45) * B / dmax
        dist = [
            [math.hypot(ax - bx, ay - by) for bx, by in pts] for ax, ay in pts
        ]
        travel = [[d / speed for d in row] for row in dist]
        energy = [[d * rate for d in row] for row in dist]
        service = [0.0] + [rng.uniform(0.1, 0.4) for _ in range(n_customers)]
        round_trips = [
            travel[0][i] + service[i] + travel[i][0]
            for i in range(1, n_customers + 1)
        ]
        T = max(round_trips) * rng.uniform(1.8, 2.5) + 1.0
        demands = [0.0] + [
            float(rng.randint(1, 10)) if with_demands else 0.0
            for _ in range(n_customers)
        ]
        total_q = sum(demands)
        Q = max(max(demands) * 2.0, total_q * rng.uniform(0.45, 0.8)) if with_demands else 1.0
        nodes = [Node(id=0, kind=KIND_DEPOT)]
        for i in range(1, n_customers + 1):
            nodes.append(
                Node(
                    id=i,
                    kind=KIND_CUSTOMER,
                    x=pts[i][0],
                    y=pts[i][1],
                    service_time=service[i],
                    demand=demands[i],
                )
            )
        stations = []
        for k in range(n_stations):
            sid = n_customers + 1 + k
            nodes.append(Node(id=sid, kind=KIND_STATION, x=pts[sid][0], y=pts[sid][1]))
            stations.append(Station(id=sid, curve=random_curve(rng, B), tech="fast"))
        inst = derive_windows(
            Instance(
                name=name or f"rand-{seed}",
                K=n_customers,
                Q=Q,
                B=B,
                T=T,
                nodes=tuple(nodes),
                stations=tuple(stations),
                travel=tuple(tuple(r) for r in travel),
                energy=tuple(tuple(r) for r in energy),
            )
        )
        if inst.window_infeasible:
            continue
        if _all_customers_servable(inst):
            return inst
    raise RuntimeError(f"could not draw a feasible instance for seed {seed}")


def _all_customers_servable(inst: Instance) -> bool:
    from evrpnl.charge import simulate_route
    from evrpnl.model import InfeasibleRouteError

    for c in inst.customers:
        candidates = [(0, c, 0)]
        for s in inst.station_ids:
            candidates += [(0, s, c, 0), (0, c, s, 0), (0, s, c, s, 0)]
        ok = False
        for seq in candidates:
            try:
                simulate_route(inst, seq)
                ok = True
                break
            except InfeasibleRouteError:
                continue
        if not ok:
            return False
    return True
