"""Instance model, canonical format, windows and curve linearization."""

import json
import math

import pytest

from evrpnl.model import (
    InfeasibleRouteError,
    ParseError,
    demo_instance,
    derive_windows,
    convert_montoya,
    linearize_curve,
    parse_instance,
    route_cost,
)
from evrpnl.pwl import PwlFunction

C1 = PwlFunction([(0, 0), (1, 12000), (1.8, 15200), (3, 16000)])


def make_doc(**overrides):
    doc = {
        "name": "t",
        "K": 2,
        "Q": 10.0,
        "B": 16000.0,
        "T": 10.0,
        "nodes": [
            {"id": 0, "kind": "depot", "x": 0.0, "y": 0.0},
            {"id": 1, "kind": "customer", "x": 3.0, "y": 4.0, "service_time": 0.5,
             "demand": 2.0},
            {"id": 2, "kind": "station", "x": 1.0, "y": 1.0},
        ],
        "speed": 2.5,
        "consumption_rate": 1000.0,
        "stations": [{"id": 2, "curve": C1.to_pairs(), "tech": "fast"}],
    }
    doc.update(overrides)
    return doc


# --- parsing ---------------------------------------------------------------------


def test_parse_demo_fixture_windows():
    inst = demo_instance()
    assert inst.window(0) == (0.0, 10.0)
    assert inst.window(1) == (2.0, 7.5)


def test_parse_from_coordinates():
    inst = parse_instance(json.dumps(make_doc()))
    assert inst.t(0, 1) == pytest.approx(2.0)  # dist 5 / speed 2.5
    assert inst.b(0, 1) == pytest.approx(5000.0)
    assert inst.window(1) == (2.0, 10.0 - 0.5 - 2.0)


def test_parse_flags_window_infeasible_customer():
    doc = make_doc(T=4.0)  # t_{0,1} = 2, needs 2 + 0.5 + 2 > 4
    inst = parse_instance(doc)
    assert inst.window_infeasible == (1,)


def test_parse_empty_customer_list_is_trivial():
    doc = make_doc()
    doc["nodes"] = [doc["nodes"][0]]
    doc["stations"] = []
    inst = parse_instance(doc)
    assert inst.n_customers == 0
    assert route_cost(inst, (0, 0)) == 0.0


def test_parse_rejects_negative_quantities():
    doc = make_doc()
    doc["nodes"][1]["demand"] = -1
    with pytest.raises(ParseError, match="demand"):
        parse_instance(doc)


def test_parse_rejects_curve_not_reaching_capacity():
    doc = make_doc()
    doc["stations"][0]["curve"] = [[0, 0], [1, 9000]]
    with pytest.raises(ParseError, match="reach"):
        parse_instance(doc)


def test_parse_rejects_bad_json():
    with pytest.raises(ParseError):
        parse_instance(b"{nope")


def test_parse_triangle_violation_warns_not_raises():
    doc = make_doc()
    tt = [[0.0, 9.0, 1.0], [9.0, 0.0, 1.0], [1.0, 1.0, 0.0]]
    doc["travel_time"] = tt
    doc["energy"] = [[0.0, 10.0, 10.0], [10.0, 0.0, 10.0], [10.0, 10.0, 0.0]]
    with pytest.warns(UserWarning, match="triangle"):
        parse_instance(doc)


def test_round_trip_is_bit_identical():
    inst = parse_instance(make_doc())
    text = inst.to_json()
    again = parse_instance(text)
    assert again.to_json() == text


def test_derive_windows_idempotent():
    inst = parse_instance(make_doc())
    assert derive_windows(inst).to_json() == inst.to_json()


def test_derive_windows_formula():
    # T=10, t_{0,i}=2, s=0.5, t_{i,0}=2 -> [2, 7.5]
    inst = demo_instance()
    assert inst.window(1) == (2.0, 7.5)


def test_derive_windows_zero_distance_node():
    doc = make_doc()
    doc["nodes"][1]["x"] = 0.0
    doc["nodes"][1]["y"] = 0.0
    inst = parse_instance(doc)
    assert inst.window(1) == (0.0, 10.0 - 0.5)


def test_derive_windows_boundary_empty():
    doc = make_doc(T=2.0)  # t_{0,i} = 2 = T
    inst = parse_instance(doc)
    assert 1 in inst.window_infeasible


# --- route_cost ---------------------------------------------------------------------


def test_route_cost_empty():
    assert route_cost(demo_instance(), (0, 0)) == 0.0


def test_route_cost_single_customer():
    assert route_cost(demo_instance(), (0, 1, 0)) == pytest.approx(4.5)


def test_route_cost_battery_violation_raises():
    import dataclasses

    inst = demo_instance(n_customers=1)
    energy = [[0.0 if i == j else 9000.0 for j in range(3)] for i in range(3)]
    inst = dataclasses.replace(inst, energy=tuple(tuple(r) for r in energy))
    with pytest.raises(InfeasibleRouteError):
        route_cost(inst, (0, 1, 0))


# --- linearization ---------------------------------------------------------------------


def test_linearize_under_is_chord():
    lu = linearize_curve(C1, "under")
    assert lu.points() == [(0, 0), (3, 16000)]


def test_linearize_over_extends_first_slope():
    lo = linearize_curve(C1, "over")
    assert lo.eval(0) == 0
    assert lo.eval(1) == pytest.approx(12000)
    assert lo.eval(4 / 3) == pytest.approx(16000)
    assert lo.eval(3) == pytest.approx(16000)


def test_linearize_fixpoint_on_linear_curve():
    lin = PwlFunction([(0, 0), (2, 16000)])
    assert linearize_curve(lin, "under").approx_equal(lin, tol=1e-9)
    assert linearize_curve(lin, "over").approx_equal(lin, tol=1e-9)


def test_linearize_bounds_hold_on_concave_curves():
    import random

    from instgen import random_curve

    rng = random.Random(1)
    for _ in range(50):
        curve = random_curve(rng, 16000.0)
        lu = linearize_curve(curve, "under")
        lo = linearize_curve(curve, "over")
        knots = sorted(set(curve.xs) | set(lu.xs) | set(lo.xs))
        for t in knots:
            c = curve.eval(t)
            assert lu.eval(t) <= c + 1e-6
            assert lo.eval(t) >= c - 1e-6


def test_linearize_nonconcave_warns():
    convex = PwlFunction([(0, 0), (1, 1000), (2, 16000)])
    with pytest.warns(UserWarning, match="concave"):
        linearize_curve(convex, "over")


# --- Montoya XML import -------------------------------------------------------------

MONTOYA_XML = """<?xml version="1.0" encoding="UTF-8"?>
<instance>
  <info><name>tc0c2s1cf0</name></info>
  <network>
    <nodes>
      <node id="0" type="0"><cx>0.0</cx><cy>0.0</cy></node>
      <node id="1" type="1"><cx>30.0</cx><cy>40.0</cy></node>
      <node id="2" type="1"><cx>-30.0</cx><cy>40.0</cy></node>
      <node id="3" type="2"><cx>0.0</cx><cy>20.0</cy>
        <custom><cs_type>fast</cs_type></custom></node>
    </nodes>
  </network>
  <fleet>
    <vehicle_profile type="0">
      <custom>
        <battery_capacity>16.0</battery_capacity>
        <consumption_rate>0.125</consumption_rate>
        <speed_factor>25.0</speed_factor>
        <max_travel_time>10.0</max_travel_time>
        <charging_functions>
          <function cs_type="fast">
            <breakpoint><battery_level>0.0</battery_level><charging_time>0.0</charging_time></breakpoint>
            <breakpoint><battery_level>12.0</battery_level><charging_time>1.0</charging_time></breakpoint>
            <breakpoint><battery_level>16.0</battery_level><charging_time>2.0</charging_time></breakpoint>
          </function>
        </charging_functions>
      </custom>
    </vehicle_profile>
  </fleet>
  <requests>
    <request id="1" node="1"><service_time>0.5</service_time></request>
    <request id="2" node="2"><service_time>0.25</service_time></request>
  </requests>
</instance>
"""


def test_convert_montoya_units_and_layout():
    inst = convert_montoya(MONTOYA_XML)
    assert inst.name == "tc0c2s1cf0"
    assert inst.B == pytest.approx(16000.0)
    assert inst.T == pytest.approx(10.0)
    assert inst.n_customers == 2
    assert inst.n_stations == 1
    # dist(0,1) = 50 km, speed 25 -> 2 h, energy 50 * 125 Wh
    assert inst.t(0, 1) == pytest.approx(2.0)
    assert inst.b(0, 1) == pytest.approx(6250.0)
    assert inst.s(1) == 0.5
    curve = inst.curve(3)
    assert curve.eval(1.0) == pytest.approx(12000.0)
    assert curve.max_value == pytest.approx(16000.0)


def test_convert_montoya_garbage_raises():
    with pytest.raises(ParseError):
        convert_montoya("not xml at all")
    with pytest.raises(ParseError, match="battery"):
        convert_montoya("<instance><network><nodes><node id='0' type='0'><cx>0</cx><cy>0</cy></node></nodes></network></instance>")
