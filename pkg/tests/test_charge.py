"""Battery recursion tests.

The worked-example fixture (uniform 2 h / 2000 Wh arcs, 16 kWh battery,
10 h horizon, 0.5 h service) has hand-derivable forward/backward functions;
everything else is cross-checked against the dense-grid DP oracle.
"""

import random

import pytest

from evrpnl.charge import (
    BackwardState,
    ForwardState,
    backward_extend,
    backward_root,
    forward_extend,
    forward_root,
    merge_slack,
    rho,
    simulate_route,
    split_duration,
    tau,
    validate_route,
)
from evrpnl.model import InfeasibleRouteError, demo_instance
from evrpnl.pwl import PwlFunction, PwlRangeError

from instgen import random_instance
from oracles import grid_route_duration

INST = demo_instance(n_customers=2, n_stations=2)
CUST = 1
STATION = 3


# --- windows of the fixture -----------------------------------------------------


def test_fixture_windows():
    assert INST.window(0) == (0.0, 10.0)
    assert INST.window(CUST) == (2.0, 7.5)
    assert INST.window(STATION) == (2.0, 8.0)


# --- tau / rho -------------------------------------------------------------------


def test_tau_zero_requirement_gives_domain_start():
    root = forward_root(INST)
    assert tau(root, 0.0) == 0.0


def test_tau_on_full_battery_depot():
    root = forward_root(INST)
    assert tau(root, 2000.0) == 0.0


def test_tau_unreachable_level_raises():
    root = forward_root(INST)
    with pytest.raises(PwlRangeError):
        tau(root, 17000.0)


def test_rho_on_backward_fixture():
    st = backward_extend(INST, backward_root(INST), STATION)
    assert st is not None
    assert st.g.approx_equal(PwlFunction.constant(0, 8, 2000.0), tol=1e-9)
    assert rho(st, 2000.0) == pytest.approx(8.0)
    assert rho(st, 16000.0) == pytest.approx(8.0)
    with pytest.raises(PwlRangeError):
        rho(st, 1000.0)


# --- forward extension ------------------------------------------------------------


def test_forward_depot_to_customer_constant_14000():
    st = forward_extend(INST, forward_root(INST), CUST)
    assert st is not None
    assert st.a == pytest.approx(2.5)
    assert st.f.domain == (2.5, 8.0)
    assert st.f.min_value == pytest.approx(14000.0)
    assert st.f.max_value == pytest.approx(14000.0)


def test_forward_depot_to_station_matches_grid_oracle():
    st = forward_extend(INST, forward_root(INST), STATION)
    assert st is not None
    assert st.a == pytest.approx(2.0)
    ys = st.f.ys
    assert all(b >= a - 1e-9 for a, b in zip(ys, ys[1:]))
    assert st.f.max_value == pytest.approx(16000.0)
    # independent check: arrive at 2.0 with 14000, then charge along the curve
    curve = INST.curve(STATION)
    inv_points = [(v, t) for t, v in curve.points()]
    start_clock = 1.5  # time on the charging clock equivalent to 14000 Wh

    def expect(t):
        import numpy as np

        clock = min(start_clock + (t - 2.0), 3.0)
        xs = [p[0] for p in inv_points]
        return float(np.interp(clock, [c[1] for c in inv_points], [c[0] for c in inv_points])) if False else float(
            np.interp(clock, [p[0] for p in curve.points()], [p[1] for p in curve.points()])
        )

    for t in (2.0, 2.5, 3.0, 3.49, 3.5, 5.0, 8.0):
        assert st.f.eval(t) == pytest.approx(expect(t), abs=1e-6)


def test_forward_identity_extension():
    inst = demo_instance(n_customers=2)
    # zero-cost arc into a zero-service customer with an open window
    import dataclasses

    travel = [list(r) for r in inst.travel]
    energy = [list(r) for r in inst.energy]
    travel[1][2] = travel[2][1] = 0.0
    energy[1][2] = energy[2][1] = 0.0
    nodes = list(inst.nodes)
    nodes[2] = dataclasses.replace(nodes[2], service_time=0.0, window=(0.0, 8.0))
    inst = dataclasses.replace(
        inst,
        travel=tuple(tuple(r) for r in travel),
        energy=tuple(tuple(r) for r in energy),
        nodes=tuple(nodes),
    )
    first = forward_extend(inst, forward_root(inst), 1)
    second = forward_extend(inst, first, 2)
    assert second.a == pytest.approx(first.a)
    lo, hi = second.f.domain
    assert second.f.eval(lo) == pytest.approx(first.f.eval(lo))
    assert second.f.eval(hi) == pytest.approx(first.f.eval(hi))


def test_forward_unreachable_arc_is_infeasible():
    inst = demo_instance(n_customers=1)
    import dataclasses

    energy = [[0.0 if i == j else 17000.0 for j in range(len(inst.nodes))] for i in range(len(inst.nodes))]
    inst = dataclasses.replace(inst, energy=tuple(tuple(r) for r in energy))
    assert forward_extend(inst, forward_root(inst), 1) is None


# --- backward extension -------------------------------------------------------------


def test_backward_one_hop_constant_2000_on_0_8():
    for node in (CUST, STATION):
        st = backward_extend(INST, backward_root(INST), node)
        assert st is not None
        assert st.d == pytest.approx(8.0)
        assert st.g.domain == (0.0, 8.0)
        assert st.g.min_value == pytest.approx(2000.0)
        assert st.g.max_value == pytest.approx(2000.0)


def test_backward_two_hops_via_customer_constant_4000():
    mid = backward_extend(INST, backward_root(INST), 2)  # customer k
    st = backward_extend(INST, mid, CUST)
    assert st is not None
    assert st.d == pytest.approx(5.5)  # min(8, 8 - 2 - 0.5)
    assert st.g.min_value == pytest.approx(4000.0)
    assert st.g.max_value == pytest.approx(4000.0)


def test_backward_two_hops_via_station_kink():
    # derived from the recursion with the fixture curve: flat 2000 Wh until
    # 6 - r^{-1}(2000) = 35/6 h, then rising to 4000 Wh at the 6 h domain end
    mid = backward_extend(INST, backward_root(INST), STATION)
    st = backward_extend(INST, mid, CUST)
    assert st is not None
    assert st.d == pytest.approx(6.0)
    expected = PwlFunction([(0.0, 2000.0), (35.0 / 6.0, 2000.0), (6.0, 4000.0)])
    assert st.g.approx_equal(expected, tol=1e-6)


def test_backward_identity_extension():
    import dataclasses

    inst = demo_instance(n_customers=2)
    travel = [list(r) for r in inst.travel]
    energy = [list(r) for r in inst.energy]
    travel[1][2] = travel[2][1] = 0.0
    energy[1][2] = energy[2][1] = 0.0
    nodes = list(inst.nodes)
    nodes[2] = dataclasses.replace(nodes[2], service_time=0.0, window=(0.0, 10.0))
    inst = dataclasses.replace(
        inst,
        travel=tuple(tuple(r) for r in travel),
        energy=tuple(tuple(r) for r in energy),
        nodes=tuple(nodes),
    )
    first = backward_extend(inst, backward_root(inst), 2)
    second = backward_extend(inst, first, 1)
    assert second.d == pytest.approx(min(first.d, inst.latest_departure(1)))
    assert second.g.eval(0) == pytest.approx(first.g.eval(0))


# --- simulate_route -----------------------------------------------------------------


def test_simulate_empty_route():
    assert simulate_route(INST, (0, 0)).duration == 0.0
    assert simulate_route(INST, ()).duration == 0.0


def test_simulate_single_customer():
    route = simulate_route(INST, (0, CUST, 0))
    assert route.duration == pytest.approx(4.5)
    assert route.plan == ()
    assert validate_route(INST, route) == []


def test_simulate_battery_violation_reports_arc():
    import dataclasses

    inst = demo_instance(n_customers=1)
    energy = [[0.0 if i == j else 9000.0 for j in range(len(inst.nodes))] for i in range(len(inst.nodes))]
    inst = dataclasses.replace(inst, energy=tuple(tuple(r) for r in energy))
    with pytest.raises(InfeasibleRouteError, match="arc 1"):
        simulate_route(inst, (0, 1, 0))


def test_simulate_with_station_matches_brute_force_grid():
    # long arcs force one charging stop; compare to the 1e-3 grid oracle
    import dataclasses

    inst = demo_instance(n_customers=1, n_stations=1)
    energy = [list(r) for r in inst.energy]
    for i in range(3):
        for j in range(3):
            if i != j:
                energy[i][j] = 7000.0
    inst = dataclasses.replace(inst, energy=tuple(tuple(r) for r in energy))
    seq = (0, 2, 1, 0)  # depot -> station -> customer -> depot
    route = simulate_route(inst, seq)
    oracle = grid_route_duration(inst, seq)
    assert oracle is not None
    assert route.duration == pytest.approx(oracle, abs=2e-3)
    assert len(route.plan) == 1
    stop = route.plan[0]
    assert stop.energy_charged > 0
    assert validate_route(inst, route) == []


@pytest.mark.parametrize("seed", range(20))
def test_random_routes_match_grid_oracle(seed):
    rng = random.Random(seed)
    inst = random_instance(seed, n_customers=3, n_stations=2)
    nodes = list(inst.customers) + list(inst.station_ids)
    for _ in range(10):
        k = rng.randint(1, 3)
        mid = rng.sample(nodes, k)
        if not any(inst.is_customer(v) for v in mid):
            continue
        seq = (0, *mid, 0)
        try:
            route = simulate_route(inst, seq)
            got = route.duration
        except InfeasibleRouteError:
            got = None
        want = grid_route_duration(inst, seq)
        if got is None or want is None:
            # grid fuzz can flip strictly-boundary cases; both must agree
            # whenever the verdict is clear
            if got is not None:
                assert validate_route(inst, route) == []
            continue
        assert got == pytest.approx(want, abs=2e-3)


# --- forward/backward consistency ----------------------------------------------------


@pytest.mark.parametrize("seed", range(10))
def test_split_duration_consistency(seed):
    inst = random_instance(100 + seed, n_customers=4, n_stations=2)
    rng = random.Random(seed)
    for _ in range(8):
        mid = rng.sample(list(inst.customers), rng.randint(1, 3))
        if rng.random() < 0.5:
            mid.insert(rng.randrange(len(mid) + 1), rng.choice(list(inst.station_ids)))
        seq = (0, *mid, 0)
        try:
            full = simulate_route(inst, seq).duration
        except InfeasibleRouteError:
            continue
        # forward states over prefixes
        fstates = [forward_root(inst)]
        for j in seq[1:]:
            fstates.append(forward_extend(inst, fstates[-1], j))
        bstates = [backward_root(inst)]
        for j in reversed(seq[:-1]):
            bstates.append(backward_extend(inst, bstates[-1], j))
        bstates.reverse()
        for k in range(len(seq)):
            if fstates[k] is None or bstates[k] is None:
                continue
            d = split_duration(fstates[k], bstates[k], inst.T)
            assert d is not None
            assert d == pytest.approx(full, abs=1e-6)


def test_monotone_resources_along_forward_chain():
    inst = random_instance(55, n_customers=4, n_stations=2)
    state = forward_root(inst)
    seq = [0, 1, 2, 3]
    for j in seq[1:]:
        nxt = forward_extend(inst, state, j)
        if nxt is None:
            break
        assert nxt.a >= state.a - 1e-9
        if not inst.is_station(j):
            assert nxt.f.max_value <= state.f.max_value + 1e-6
        state = nxt


def test_merge_slack_on_fixture():
    fwd = forward_extend(INST, forward_root(INST), CUST)
    bwd = backward_extend(INST, backward_root(INST), CUST)
    got = merge_slack(fwd.f, bwd.g)
    assert got is not None
    slack, t1, t2 = got
    assert slack == pytest.approx(5.5)  # duration 10 - 5.5 = 4.5
    assert t1 == pytest.approx(2.5)
    assert t2 == pytest.approx(8.0)
