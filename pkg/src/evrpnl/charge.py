"""Battery-level recursions over piecewise-linear charging curves.

Forward states track the maximum battery level ``f(t)`` attainable when
departing a node at time ``t`` (earliest departure ``a``); backward states
track the minimum level ``g(t)`` required when departing at ``t`` to finish
the route (latest departure ``d``).  Both are nondecreasing PWL functions
and stay closed under the extension rules implemented here, which is what
makes exact simultaneous routing + charging evaluation possible.

Time convention: ``a`` and ``d`` are departure times with service already
included; ``f``/``g`` domains are the feasible departure ranges
``[a, l_i + s_i]`` and ``[0, d]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from .model import ChargeStop, InfeasibleRouteError, Instance, Route
from .pwl import (
    TIME_TOL,
    VALUE_TOL,
    PwlFunction,
    PwlRangeError,
    compose,
)


@dataclass(eq=False, slots=True)
class ForwardState:
    """Resources after a forward partial path ending at ``node``."""

    node: int
    a: float
    f: PwlFunction
    prev: "ForwardState | None" = None
    # extension artifacts kept for plan reconstruction
    psi: PwlFunction | None = None
    tau_req: float | None = None


@dataclass(eq=False, slots=True)
class BackwardState:
    """Resources for a backward partial path starting at ``node``."""

    node: int
    d: float
    g: PwlFunction
    prev: "BackwardState | None" = None


def forward_root(inst: Instance) -> ForwardState:
    """Depot state: full battery over the whole depot window."""
    return ForwardState(0, 0.0, PwlFunction.constant(0.0, inst.T, inst.B))


def backward_root(inst: Instance) -> BackwardState:
    """End-depot state: no battery needed, any departure up to the horizon."""
    return BackwardState(0, inst.T, PwlFunction.constant(0.0, inst.T, 0.0))


def tau(state: ForwardState, y: float) -> float:
    """Earliest departure from the state's node with battery level >= y."""
    if y <= 0:
        return state.a
    return state.f.first_time_at_or_above(y)


def rho(state: BackwardState, x: float) -> float:
    """Latest departure from the state's node needing battery level <= x."""
    return state.g.last_time_at_or_below(x)


@lru_cache(maxsize=512)
def _curve_inverse(curve: PwlFunction) -> PwlFunction:
    return curve.inverse()


def forward_extend(inst: Instance, prev: ForwardState, j: int) -> ForwardState | None:
    """Extend a forward state along arc (prev.node, j); None when infeasible."""
    i = prev.node
    t_arc = inst.t(i, j)
    b_arc = inst.b(i, j)
    if b_arc > prev.f.max_value + VALUE_TOL:
        return None
    try:
        depart = tau(prev, b_arc)
    except PwlRangeError:
        return None
    ld_j = inst.latest_departure(j)

    if not inst.is_station(j):
        s_j = inst.s(j)
        a_j = max(inst.e(j), depart + t_arc) + s_j
        if a_j > ld_j + TIME_TOL:
            return None
        a_j = min(a_j, ld_j)
        # f_j(t) = f_i(min{t - s_j - t_arc, end of f_i's domain}) - b_arc
        shifted = prev.f.shift(s_j + t_arc, -b_arc)
        f_j = shifted.extend_domain(hi=ld_j).restrict(a_j, ld_j)
        if f_j.eval(a_j) < -VALUE_TOL:
            return None
        f_j = PwlFunction(f_j.clamp_min(0.0).points())
        return ForwardState(j, a_j, f_j, prev=prev)

    # station: battery on arrival may be topped up along the curve
    a_j = depart + t_arc
    if a_j > ld_j + TIME_TOL:
        return None
    a_j = min(a_j, ld_j)
    curve = inst.curve(j)
    inv = _curve_inverse(curve)
    x_end = prev.f.domain[1]
    # psi(x) = charging-clock offset reachable when leaving prev at x
    inner = prev.f.restrict(depart, x_end).shift(0.0, -b_arc).clamp_min(0.0)
    psi = compose(inv, inner).add_linear(-1.0)
    best = psi.prefix_max().extend_domain(hi=ld_j - t_arc).restrict(depart, ld_j - t_arc)
    clock = best.add_linear(1.0).shift(t_arc, 0.0).clamp_max(curve.domain[1])
    f_j = compose(curve, clock).clamp_max(inst.B)
    f_j = PwlFunction(f_j.points())
    return ForwardState(j, a_j, f_j, prev=prev, psi=psi, tau_req=depart)


def backward_extend(inst: Instance, prev: BackwardState, j: int) -> BackwardState | None:
    """Extend a backward state along arc (j, prev.node); None when infeasible.

    The case split follows the kind of ``prev.node`` (the node the vehicle
    travels to next in route direction).
    """
    i = prev.node
    t_arc = inst.t(j, i)
    b_arc = inst.b(j, i)
    if inst.B - b_arc < prev.g.min_value - VALUE_TOL:
        return None
    try:
        leave_i = rho(prev, inst.B - b_arc)
    except PwlRangeError:
        return None
    earliest_j = inst.e(j) + inst.s(j)

    if not inst.is_station(i):
        s_i = inst.s(i)
        e_i = inst.e(i)
        d_j = min(inst.latest_departure(j), leave_i - t_arc - s_i)
        if d_j + TIME_TOL < earliest_j or d_j < -TIME_TOL:
            return None
        d_j = max(d_j, 0.0)
        # g_j(t) = g_i(max{t + t_arc, e_i} + s_i) + b_arc
        core = prev.g.shift(-(t_arc + s_i), b_arc)
        lo_cut = min(max(0.0, e_i - t_arc), d_j)
        g_j = core.restrict(lo_cut, d_j).extend_domain(lo=0.0)
    else:
        d_j = leave_i - t_arc
        if d_j + TIME_TOL < earliest_j or d_j < -TIME_TOL:
            return None
        d_j = max(d_j, 0.0)
        curve = inst.curve(i)
        inv = _curve_inverse(curve)
        # phi(x) = time already "on the clock" at i when departing it at x
        inner = prev.g.restrict(min(t_arc, leave_i), leave_i)
        phi = compose(inv, inner).add_linear(-1.0)
        need = phi.suffix_min()
        clock = need.add_linear(1.0).shift(-t_arc, 0.0).restrict(0.0, d_j)
        clock = clock.clamp_min(0.0).clamp_max(curve.domain[1])
        g_j = compose(curve, clock).shift(0.0, b_arc)
    if g_j.min_value > inst.B + VALUE_TOL:
        return None
    g_j = PwlFunction(g_j.clamp_max(inst.B).clamp_min(0.0).points())
    return BackwardState(j, d_j, g_j, prev=prev)


# -- joining forward and backward resources -----------------------------------------


def merge_slack(f: PwlFunction, g: PwlFunction) -> tuple[float, float, float] | None:
    """max{t2 - t1 : t1 <= t2, f(t1) >= g(t2)} over the two domains.

    Returns (slack, t1, t2) or None when no battery level works.  The
    optimum is attained at a breakpoint value of f or g, so scanning those
    levels is exact.
    """
    if f.max_value < g.min_value - VALUE_TOL:
        return None
    levels = set(f.ys) | set(g.ys)
    lo = g.min_value
    hi = f.max_value
    best: tuple[float, float, float] | None = None
    for y in levels:
        y = min(max(y, lo), hi)
        t1 = f.first_time_at_or_above(y)
        t2 = g.last_time_at_or_below(y)
        if t1 > t2 + TIME_TOL:
            continue
        slack = t2 - t1
        if best is None or slack > best[0]:
            best = (slack, t1, t2)
    return best


def split_duration(fwd: ForwardState, bwd: BackwardState, horizon: float) -> float | None:
    """Minimal route duration certified by a forward/backward state pair."""
    if fwd.node != bwd.node:
        raise ValueError("states must sit at the same node")
    if fwd.a > bwd.d + TIME_TOL:
        return None
    got = merge_slack(fwd.f, bwd.g)
    if got is None:
        return None
    return horizon - got[0]


# -- full-route simulation ------------------------------------------------------------


def simulate_route(inst: Instance, nodes: tuple[int, ...] | list[int]) -> Route:
    """Chain forward extensions over a depot-to-depot sequence.

    Returns the minimal-duration :class:`Route` with a realized charging
    plan; raises :class:`InfeasibleRouteError` (carrying the violating arc
    index) when the sequence cannot be driven.
    """
    seq = tuple(nodes)
    if len(seq) < 2:
        return Route(nodes=(0, 0), duration=0.0)
    if seq[0] != 0 or seq[-1] != 0:
        raise InfeasibleRouteError("route must start and end at the depot")
    if len(seq) == 2:
        return Route(nodes=seq, duration=0.0)

    states = [forward_root(inst)]
    for k, j in enumerate(seq[1:], start=1):
        nxt = forward_extend(inst, states[-1], j)
        if nxt is None:
            raise InfeasibleRouteError(
                f"arc {k - 1} ({seq[k - 1]} -> {j}) cannot be driven feasibly"
            )
        states.append(nxt)

    duration = states[-1].a
    plan = _reconstruct_plan(inst, seq, states)
    return Route(nodes=seq, duration=duration, plan=plan)


def validate_route(inst: Instance, route: Route, tol: float = 1e-4) -> list[str]:
    """Re-check a realized route by plain forward arithmetic.

    Walks the sequence with a clock and a battery level, replaying the
    charging plan, and returns the list of violations (empty when valid).
    Deliberately avoids the PWL recursion machinery.
    """
    bad: list[str] = []
    seq = route.nodes
    if len(seq) < 2 or seq[0] != 0 or seq[-1] != 0:
        return ["route must start and end at the depot"]
    stops = {c.position: c for c in route.plan}
    load = sum(inst.q(i) for i in seq if inst.is_customer(i))
    if load > inst.Q + tol:
        bad.append(f"load {load} exceeds capacity {inst.Q}")
    clock = 0.0
    battery = inst.B
    for k in range(1, len(seq)):
        i, j = seq[k - 1], seq[k]
        clock += inst.t(i, j)
        battery -= inst.b(i, j)
        if battery < -tol:
            bad.append(f"battery {battery:.3f} below 0 arriving at position {k}")
            battery = 0.0
        if inst.is_station(j):
            stop = stops.get(k)
            if stop is not None:
                if stop.charge_start < clock - tol:
                    bad.append(f"position {k}: charging starts before arrival")
                if stop.energy_on_arrival > battery + max(tol, 1e-3) + 1e-6 * inst.B:
                    bad.append(
                        f"position {k}: plan claims arrival energy "
                        f"{stop.energy_on_arrival:.1f} > actual {battery:.1f}"
                    )
                inv = _curve_inverse(inst.curve(j))
                expect = inst.curve(j).eval(
                    min(inv.eval(min(battery, inst.B)) + stop.charge_time,
                        inst.curve(j).domain[1])
                )
                if stop.energy_on_departure > expect + max(tol * inst.B, 1.0):
                    bad.append(
                        f"position {k}: charging {stop.charge_time:.4f}h cannot yield "
                        f"{stop.energy_on_departure:.1f} Wh"
                    )
                clock = max(clock, stop.charge_start) + stop.charge_time
                battery = min(stop.energy_on_departure, inst.B)
        else:
            e_j, l_j = inst.window(j)
            clock = max(clock, e_j)
            if clock > l_j + tol:
                bad.append(f"position {k}: arrival {clock:.4f} after window close {l_j}")
            clock += inst.s(j)
        if battery > inst.B + tol:
            bad.append(f"battery {battery:.3f} above capacity at position {k}")
    if clock > route.duration + max(tol, 1e-6):
        bad.append(f"replayed duration {clock:.4f} exceeds stated {route.duration:.4f}")
    if clock > inst.T + tol:
        bad.append(f"duration {clock:.4f} exceeds horizon {inst.T}")
    return bad


def _argmax_on(psi: PwlFunction, lo: float, hi: float, target: float) -> float:
    """Earliest x in [lo, hi] with psi(x) within tolerance of the running max."""
    for x in sorted({lo, hi, *(t for t in psi.xs if lo < t < hi)}):
        if psi.eval(x) >= target - 1e-9:
            return x
    return hi


def _reconstruct_plan(
    inst: Instance, seq: tuple[int, ...], states: list[ForwardState]
) -> tuple[ChargeStop, ...]:
    """Fix departure times backwards from the arrival at the end depot."""
    departures = [0.0] * len(seq)
    departures[-1] = states[-1].a
    for k in range(len(seq) - 1, 0, -1):
        st = states[k]
        prev = states[k - 1]
        i, j = seq[k - 1], seq[k]
        t_arc = inst.t(i, j)
        t_k = departures[k]
        if not inst.is_station(j):
            dep = min(t_k - inst.s(j) - t_arc, prev.f.domain[1])
        else:
            assert st.psi is not None and st.tau_req is not None
            hi = min(t_k - t_arc, st.psi.domain[1])
            lo = min(st.tau_req, hi)
            target = max(
                st.psi.eval(x)
                for x in {lo, hi, *(t for t in st.psi.xs if lo < t < hi)}
            )
            dep = _argmax_on(st.psi, lo, hi, target)
        departures[k - 1] = max(dep, prev.a)

    stops: list[ChargeStop] = []
    for k in range(1, len(seq)):
        j = seq[k]
        if not inst.is_station(j):
            continue
        prev = states[k - 1]
        b_arc = inst.b(seq[k - 1], j)
        arrival = departures[k - 1] + inst.t(seq[k - 1], j)
        on_arrival = max(0.0, min(prev.f.eval(departures[k - 1]) - b_arc, inst.B))
        on_departure = max(on_arrival, min(states[k].f.eval(departures[k]), inst.B))
        inv = _curve_inverse(inst.curve(j))
        charge_time = max(0.0, inv.eval(on_departure) - inv.eval(on_arrival))
        stops.append(
            ChargeStop(
                position=k,
                station=j,
                arrival=arrival,
                charge_start=departures[k] - charge_time,
                charge_time=charge_time,
                energy_on_arrival=on_arrival,
                energy_on_departure=on_departure,
            )
        )
    return tuple(stops)
