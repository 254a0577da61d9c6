"""Instance data model, canonical JSON format and derived quantities.

Node numbering is fixed: 0 is the depot, 1..n are customers, n+1..n+m are
charging stations.  Customer time windows, when not given, are derived from
the horizon as [t_{0,i}, T - s_i - t_{i,0}]; stations get the analogous
physical bounds with zero service time.  Charging curves are stored as
state-of-charge versus charging time from empty.
"""

from __future__ import annotations

import json
import math
import warnings
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace

from .pwl import PwlFunction

DEPOT = 0

KIND_DEPOT = "depot"
KIND_CUSTOMER = "customer"
KIND_STATION = "station"


class ParseError(ValueError):
    """Instance file violates the schema or basic sanity checks."""


class InfeasibleRouteError(ValueError):
    """A route violates a constraint; the message names the first violation."""


@dataclass(frozen=True)
class Node:
    id: int
    kind: str
    x: float | None = None
    y: float | None = None
    service_time: float = 0.0
    demand: float = 0.0
    window: tuple[float, float] | None = None


@dataclass(frozen=True)
class Station:
    id: int
    curve: PwlFunction
    tech: str = "fast"


@dataclass(frozen=True)
class ChargeStop:
    """One station visit in a realized route plan."""

    position: int
    station: int
    arrival: float
    charge_start: float
    charge_time: float
    energy_on_arrival: float
    energy_on_departure: float

    @property
    def energy_charged(self) -> float:
        return self.energy_on_departure - self.energy_on_arrival


@dataclass(frozen=True)
class Route:
    """A depot-to-depot node sequence with its realized charging plan."""

    nodes: tuple[int, ...]
    duration: float
    plan: tuple[ChargeStop, ...] = ()

    def to_dict(self) -> dict:
        return {
            "nodes": list(self.nodes),
            "duration": round(self.duration, 6),
            "plan": [
                {
                    "position": c.position,
                    "station": c.station,
                    "arrival": round(c.arrival, 6),
                    "charge_start": round(c.charge_start, 6),
                    "charge_time": round(c.charge_time, 6),
                    "energy_on_arrival": round(c.energy_on_arrival, 3),
                    "energy_on_departure": round(c.energy_on_departure, 3),
                }
                for c in self.plan
            ],
        }


@dataclass(frozen=True)
class Instance:
    name: str
    K: int
    Q: float
    B: float
    T: float
    nodes: tuple[Node, ...]
    stations: tuple[Station, ...]
    travel: tuple[tuple[float, ...], ...]
    energy: tuple[tuple[float, ...], ...]
    speed: float | None = None
    consumption_rate: float | None = None
    window_infeasible: tuple[int, ...] = field(default=())

    # -- structure ---------------------------------------------------------

    @property
    def n_customers(self) -> int:
        return sum(1 for nd in self.nodes if nd.kind == KIND_CUSTOMER)

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    @property
    def customers(self) -> range:
        return range(1, self.n_customers + 1)

    @property
    def station_ids(self) -> range:
        n = self.n_customers
        return range(n + 1, n + 1 + self.n_stations)

    def is_customer(self, i: int) -> bool:
        return 1 <= i <= self.n_customers

    def is_station(self, i: int) -> bool:
        return i > self.n_customers

    def kind(self, i: int) -> str:
        return self.nodes[i].kind

    # -- per-node quantities -------------------------------------------------

    def s(self, i: int) -> float:
        return self.nodes[i].service_time

    def q(self, i: int) -> float:
        return self.nodes[i].demand

    def window(self, i: int) -> tuple[float, float]:
        w = self.nodes[i].window
        assert w is not None
        return w

    def e(self, i: int) -> float:
        return self.window(i)[0]

    def l(self, i: int) -> float:
        return self.window(i)[1]

    def latest_departure(self, i: int) -> float:
        return self.l(i) + self.s(i)

    def t(self, i: int, j: int) -> float:
        return self.travel[i][j]

    def b(self, i: int, j: int) -> float:
        return self.energy[i][j]

    def curve(self, i: int) -> PwlFunction:
        for st in self.stations:
            if st.id == i:
                return st.curve
        raise KeyError(f"node {i} is not a station")

    # -- serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        out: dict = {
            "name": self.name,
            "K": self.K,
            "Q": self.Q,
            "B": self.B,
            "T": self.T,
        }
        if self.speed is not None:
            out["speed"] = self.speed
        if self.consumption_rate is not None:
            out["consumption_rate"] = self.consumption_rate
        out["nodes"] = [
            {
                k: v
                for k, v in (
                    ("id", nd.id),
                    ("kind", nd.kind),
                    ("x", nd.x),
                    ("y", nd.y),
                    ("service_time", nd.service_time),
                    ("demand", nd.demand),
                    ("window", list(nd.window) if nd.window else None),
                )
                if v is not None
            }
            for nd in self.nodes
        ]
        out["travel_time"] = [list(row) for row in self.travel]
        out["energy"] = [list(row) for row in self.energy]
        out["stations"] = [
            {"id": st.id, "curve": st.curve.to_pairs(), "tech": st.tech}
            for st in self.stations
        ]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def with_curves(self, curves: dict[int, PwlFunction]) -> "Instance":
        """Copy of the instance with some station curves replaced."""
        sts = tuple(
            replace(st, curve=curves.get(st.id, st.curve)) for st in self.stations
        )
        return replace(self, stations=sts)


# -- parsing --------------------------------------------------------------------


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ParseError(msg)


def parse_instance(data: bytes | str | dict) -> Instance:
    """Parse and fully validate an instance in the canonical JSON format."""
    if isinstance(data, (bytes, str)):
        try:
            raw = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ParseError(f"not valid JSON: {exc}") from exc
    else:
        raw = data
    _require(isinstance(raw, dict), "top level must be a JSON object")
    for key in ("name", "K", "Q", "B", "T", "nodes"):
        _require(key in raw, f"missing required key {key!r}")

    name = str(raw["name"])
    K = int(raw["K"])
    Q = float(raw["Q"])
    B = float(raw["B"])
    T = float(raw["T"])
    _require(K >= 0, "K must be nonnegative")
    _require(Q >= 0, "Q must be nonnegative")
    _require(B > 0, "B must be positive")
    _require(T > 0, "T must be positive")
    speed = float(raw["speed"]) if raw.get("speed") is not None else None
    rate = (
        float(raw["consumption_rate"])
        if raw.get("consumption_rate") is not None
        else None
    )

    nodes: list[Node] = []
    for entry in raw["nodes"]:
        _require(isinstance(entry, dict), "each node must be an object")
        _require("id" in entry and "kind" in entry, "node needs id and kind")
        kind = entry["kind"]
        _require(
            kind in (KIND_DEPOT, KIND_CUSTOMER, KIND_STATION),
            f"unknown node kind {kind!r}",
        )
        st = float(entry.get("service_time", 0.0))
        qd = float(entry.get("demand", 0.0))
        _require(st >= 0, f"node {entry['id']}: negative service time")
        _require(qd >= 0, f"node {entry['id']}: negative demand")
        win = entry.get("window")
        nodes.append(
            Node(
                id=int(entry["id"]),
                kind=kind,
                x=None if entry.get("x") is None else float(entry["x"]),
                y=None if entry.get("y") is None else float(entry["y"]),
                service_time=st,
                demand=qd,
                window=None if win is None else (float(win[0]), float(win[1])),
            )
        )
    nodes.sort(key=lambda nd: nd.id)
    _require(nodes and nodes[0].kind == KIND_DEPOT and nodes[0].id == 0,
             "node 0 must be the depot")
    n = sum(1 for nd in nodes if nd.kind == KIND_CUSTOMER)
    for nd in nodes:
        if nd.kind == KIND_CUSTOMER:
            _require(1 <= nd.id <= n, f"customer ids must be 1..{n}, got {nd.id}")
        elif nd.kind == KIND_STATION:
            _require(nd.id > n, f"station ids must follow customers, got {nd.id}")
    _require([nd.id for nd in nodes] == list(range(len(nodes))),
             "node ids must be contiguous 0..n+m")

    travel = raw.get("travel_time")
    energy = raw.get("energy")
    nn = len(nodes)
    if travel is None or energy is None:
        _require(
            all(nd.x is not None and nd.y is not None for nd in nodes),
            "coordinates required when travel_time/energy matrices are absent",
        )
        _require(speed is not None or travel is not None,
                 "speed required to derive travel times")
        _require(rate is not None or energy is not None,
                 "consumption_rate required to derive energies")
        dist = [
            [
                math.hypot(a.x - b.x, a.y - b.y)  # type: ignore[operator]
                for b in nodes
            ]
            for a in nodes
        ]
        if travel is None:
            travel = [[d / speed for d in row] for row in dist]  # type: ignore[operator]
        if energy is None:
            energy = [[d * rate for d in row] for row in dist]  # type: ignore[operator]
    _require(len(travel) == nn and all(len(r) == nn for r in travel),
             "travel_time matrix has wrong shape")
    _require(len(energy) == nn and all(len(r) == nn for r in energy),
             "energy matrix has wrong shape")
    for i in range(nn):
        for j in range(nn):
            if i == j:
                continue
            _require(travel[i][j] >= 0, f"negative travel time on arc ({i},{j})")
            _require(energy[i][j] >= 0, f"negative energy on arc ({i},{j})")

    stations: list[Station] = []
    station_ids = {nd.id for nd in nodes if nd.kind == KIND_STATION}
    for entry in raw.get("stations", []):
        sid = int(entry["id"])
        _require(sid in station_ids, f"stations[] id {sid} is not a station node")
        try:
            curve = PwlFunction.from_pairs(entry["curve"])
        except Exception as exc:
            raise ParseError(f"station {sid}: bad curve: {exc}") from exc
        _require(abs(curve.eval(curve.domain[0])) <= 1e-6,
                 f"station {sid}: curve must start at charge 0")
        _require(curve.domain[0] == 0, f"station {sid}: curve domain must start at 0")
        _require(abs(curve.max_value - B) <= 1e-3,
                 f"station {sid}: curve must reach battery capacity {B}")
        ys = curve.ys
        _require(all(b > a for a, b in zip(ys, ys[1:])),
                 f"station {sid}: curve must be strictly increasing")
        stations.append(Station(id=sid, curve=curve, tech=entry.get("tech", "fast")))
    _require(len(stations) == len(station_ids),
             "every station node needs a curve in stations[]")
    stations.sort(key=lambda st: st.id)

    inst = Instance(
        name=name,
        K=K,
        Q=Q,
        B=B,
        T=T,
        nodes=tuple(nodes),
        stations=tuple(stations),
        travel=tuple(tuple(float(v) for v in row) for row in travel),
        energy=tuple(tuple(float(v) for v in row) for row in energy),
        speed=speed,
        consumption_rate=rate,
    )
    _check_triangle(inst)
    return derive_windows(inst)


def _check_triangle(inst: Instance) -> None:
    import random as _random

    nn = len(inst.nodes)
    worst = 0.0
    if nn <= 80:
        triples = (
            (i, j, k)
            for i in range(nn)
            for j in range(nn)
            if i != j
            for k in range(nn)
            if k not in (i, j)
        )
    else:  # spot-check big instances; full cubic scan is too slow to run per parse
        rng = _random.Random(0)
        triples = (
            tuple(rng.sample(range(nn), 3)) for _ in range(200_000)  # type: ignore[misc]
        )
    for i, j, k in triples:
        gap = inst.travel[i][j] - (inst.travel[i][k] + inst.travel[k][j])
        worst = max(worst, gap)
    if worst > 1e-6:
        warnings.warn(
            f"travel times violate the triangle inequality by up to {worst:.6g}",
            stacklevel=3,
        )


def derive_windows(inst: Instance) -> Instance:
    """Fill missing time windows; idempotent.

    Depot: [0, T].  Customer i: [t_{0,i}, T - s_i - t_{i,0}].  Station i:
    [t_{0,i}, T - t_{i,0}].  Customers whose derived window is empty are
    collected in ``window_infeasible``.
    """
    out: list[Node] = []
    bad: list[int] = []
    for nd in inst.nodes:
        if nd.kind == KIND_DEPOT:
            win = (0.0, inst.T)
        elif nd.window is not None:
            win = nd.window
        elif nd.kind == KIND_CUSTOMER:
            win = (inst.t(0, nd.id), inst.T - nd.service_time - inst.t(nd.id, 0))
        else:
            win = (inst.t(0, nd.id), inst.T - inst.t(nd.id, 0))
        if win[1] < win[0] - 1e-9:
            bad.append(nd.id)
        out.append(replace(nd, window=win))
    return replace(inst, nodes=tuple(out), window_infeasible=tuple(bad))


def route_cost(inst: Instance, route: Route | tuple[int, ...]) -> float:
    """Minimal duration of the route's node sequence (exact charging).

    Raises :class:`InfeasibleRouteError` when the sequence is infeasible.
    """
    from . import charge

    nodes = route.nodes if isinstance(route, Route) else tuple(route)
    result = charge.simulate_route(inst, nodes)
    return result.duration


# -- curve linearization (single-segment under/over estimates) ---------------------


def linearize_curve(curve: PwlFunction, mode: str) -> PwlFunction:
    """Single-segment linear estimate of a concave charging curve.

    ``under``: the chord from (0,0) to (time-to-full, B) — pointwise below a
    concave curve.  ``over``: the initial slope extended and clamped at the
    curve maximum — pointwise above.  Non-concave input only warns (the
    two-stage charging model is concave by construction).
    """
    if mode not in ("under", "over"):
        raise ValueError(f"mode must be 'under' or 'over', got {mode!r}")
    pts = curve.points()
    slopes = [
        (v1 - v0) / (t1 - t0) for (t0, v0), (t1, v1) in zip(pts, pts[1:])
    ]
    if any(b > a + 1e-9 for a, b in zip(slopes, slopes[1:])):
        warnings.warn("charging curve is not concave; linearization bounds may not hold",
                      stacklevel=2)
    t0, v0 = pts[0]
    t_full, vmax = pts[-1]
    if mode == "under":
        return PwlFunction([(t0, v0), (t_full, vmax)])
    line = PwlFunction([(t0, v0), (t_full, v0 + slopes[0] * (t_full - t0))])
    return line.clamp_max(vmax)


# -- fixtures -----------------------------------------------------------------------


#: 3-segment concave demo charging curve (reaches 16 kWh after 3 h).
DEMO_CURVE_POINTS = ((0.0, 0.0), (1.0, 12000.0), (1.8, 15200.0), (3.0, 16000.0))


def demo_instance(n_customers: int = 1, n_stations: int = 1,
                  curve_points=DEMO_CURVE_POINTS) -> Instance:
    """Uniform-geometry fixture: every arc takes 2 h and 2000 Wh.

    Battery 16000 Wh, horizon 10 h, service 0.5 h; customer windows derive
    to [2, 7.5] and the depot window is [0, 10].
    """
    nn = 1 + n_customers + n_stations
    nodes = [Node(id=0, kind=KIND_DEPOT)]
    for i in range(1, n_customers + 1):
        nodes.append(Node(id=i, kind=KIND_CUSTOMER, service_time=0.5, demand=0.0))
    for i in range(n_customers + 1, nn):
        nodes.append(Node(id=i, kind=KIND_STATION))
    travel = [[0.0 if i == j else 2.0 for j in range(nn)] for i in range(nn)]
    energy = [[0.0 if i == j else 2000.0 for j in range(nn)] for i in range(nn)]
    curve = PwlFunction.from_pairs(curve_points)
    stations = [
        Station(id=i, curve=curve, tech="fast") for i in range(n_customers + 1, nn)
    ]
    inst = Instance(
        name="demo",
        K=max(1, n_customers),
        Q=1.0,
        B=16000.0,
        T=10.0,
        nodes=tuple(nodes),
        stations=tuple(stations),
        travel=tuple(tuple(row) for row in travel),
        energy=tuple(tuple(row) for row in energy),
    )
    return derive_windows(inst)


# -- Montoya (VRP-REP XML) import ----------------------------------------------------


def _strip_ns(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _find_text(elem, names: tuple[str, ...]) -> str | None:
    for child in elem.iter():
        if _strip_ns(child.tag) in names and child.text and child.text.strip():
            return child.text.strip()
    return None


def convert_montoya(xml_text: str | bytes, name: str | None = None) -> Instance:
    """Import an instance from its VRP-REP XML distribution.

    Battery capacities and consumption rates are given in kWh there and are
    scaled to Wh; travel times are euclidean distance over the speed factor.
    The fleet size is not part of the files, so K defaults to the customer
    count (effectively unlimited), demands to zero.
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise ParseError(f"not parseable as VRP-REP XML: {exc}") from exc

    raw_nodes: list[dict] = []
    for el in root.iter():
        if _strip_ns(el.tag) != "node":
            continue
        attrs = {k.rsplit("}", 1)[-1]: v for k, v in el.attrib.items()}
        cx = _find_text(el, ("cx",))
        cy = _find_text(el, ("cy",))
        if cx is None or cy is None:
            raise ParseError(f"node {attrs.get('id')} has no coordinates")
        cs_type = _find_text(el, ("cs_type",))
        raw_nodes.append(
            {
                "id": int(attrs["id"]),
                "type": int(attrs.get("type", "1")),
                "x": float(cx),
                "y": float(cy),
                "cs_type": cs_type,
            }
        )
    if not raw_nodes:
        raise ParseError("no <node> elements found")

    service: dict[int, float] = {}
    for el in root.iter():
        if _strip_ns(el.tag) != "request":
            continue
        attrs = {k.rsplit("}", 1)[-1]: v for k, v in el.attrib.items()}
        stime = _find_text(el, ("service_time",))
        service[int(attrs["node"])] = float(stime) if stime else 0.0

    battery = _find_text(root, ("battery_capacity",))
    rate = _find_text(root, ("consumption_rate",))
    speed = _find_text(root, ("speed_factor", "speed"))
    horizon = _find_text(root, ("max_travel_time", "max_t", "horizon"))
    for label, val in (
        ("battery_capacity", battery),
        ("consumption_rate", rate),
        ("speed_factor", speed),
        ("max_travel_time", horizon),
    ):
        if val is None:
            raise ParseError(f"missing fleet field {label}")
    B = float(battery) * 1000.0
    rate_wh = float(rate) * 1000.0
    speed_f = float(speed)
    T = float(horizon)

    curves: dict[str, list[tuple[float, float]]] = {}
    for el in root.iter():
        if _strip_ns(el.tag) != "function":
            continue
        attrs = {k.rsplit("}", 1)[-1]: v for k, v in el.attrib.items()}
        cs_type = attrs.get("cs_type", "default")
        pts: list[tuple[float, float]] = []
        for bp in el.iter():
            if _strip_ns(bp.tag) != "breakpoint":
                continue
            lvl = _find_text(bp, ("battery_level",))
            ct = _find_text(bp, ("charging_time",))
            if lvl is None or ct is None:
                raise ParseError(f"charging function {cs_type}: bad breakpoint")
            pts.append((float(ct), float(lvl) * 1000.0))
        if pts:
            if pts[0][0] > 1e-12:
                pts.insert(0, (0.0, 0.0))
            curves[cs_type] = sorted(pts)
    if not curves:
        raise ParseError("no charging functions found")

    depot = [nd for nd in raw_nodes if nd["type"] == 0]
    custs = sorted((nd for nd in raw_nodes if nd["type"] == 1), key=lambda d: d["id"])
    stats = sorted((nd for nd in raw_nodes if nd["type"] == 2), key=lambda d: d["id"])
    if len(depot) != 1:
        raise ParseError(f"expected exactly one depot node, found {len(depot)}")

    ordered = depot + custs + stats
    nodes = []
    stations = []
    for new_id, nd in enumerate(ordered):
        kind = (KIND_DEPOT, KIND_CUSTOMER, KIND_STATION)[nd["type"]]
        nodes.append(
            {
                "id": new_id,
                "kind": kind,
                "x": nd["x"],
                "y": nd["y"],
                "service_time": service.get(nd["id"], 0.0),
                "demand": 0.0,
            }
        )
        if kind == KIND_STATION:
            cs = nd["cs_type"] or next(iter(curves))
            if cs not in curves:
                raise ParseError(f"station {nd['id']}: unknown cs_type {cs!r}")
            stations.append({"id": new_id, "curve": curves[cs], "tech": cs})

    doc = {
        "name": name or (_find_text(root, ("name",)) or "montoya"),
        "K": len(custs),
        "Q": 1.0,
        "B": B,
        "T": T,
        "speed": speed_f,
        "consumption_rate": rate_wh,
        "nodes": nodes,
        "stations": stations,
    }
    return parse_instance(doc)
