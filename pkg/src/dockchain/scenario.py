"""Scenario files: a JSON document describing a charge point, its initial
adapter topology, a timestamped event timeline, and run parameters.

Topology nodes::

    null                                         empty socket
    {"ev": "E1", "authorized": true,
     "demand_ah": null, "draw_current": null}    EV plugged straight into the socket
    {"adapter": "A1", "token": "...",
     "sockets": [<node>, <node>]}                adapter
    {"chain": 3, "prefix": "C"}                  linear chain of adapters, one EV each;
                                                 the length may name a sweep variable

Event types: ``arrival``, ``direct_ev``, ``unlock``, ``remove_end``,
``remove_mid``, ``remove_unauthorized``.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Union

from .discovery import DiscoveryConfig
from .electrical import EvBattery, NoiseModel
from .errors import DockChainError, ParseError, ValidationError
from .policy import EqualCharge, FcfsWaterFilling, PolicyKind, PriorityWeighted
from .topology import (
    EMPTY,
    AdapterLink,
    ArrivalWithAdapter,
    ChainNetwork,
    ChargePoint,
    DirectEvPlug,
    EvPlug,
    RemoveEnd,
    RemoveMid,
    RemoveUnauthorized,
    UnlockRequest,
    build,
    ev,
)


@dataclass(frozen=True)
class EvNode:
    id: str
    authorized: bool = True
    demand_ah: float | None = None
    draw_current: float | None = None


@dataclass(frozen=True)
class AdapterNode:
    id: str
    token: str | None = None
    sockets: tuple = (None, None)


@dataclass(frozen=True)
class ChainNode:
    length: Union[int, str]
    prefix: str = "C"


Node = Union[None, EvNode, AdapterNode, ChainNode]


@dataclass(frozen=True)
class TimedEvent:
    t: float
    event: Any


@dataclass(frozen=True)
class Scenario:
    charge_point: ChargePoint = field(default_factory=ChargePoint)
    topology: Node = None
    events: tuple = ()
    policy: PolicyKind = field(default_factory=EqualCharge)
    updates_per_phase: int | None = 1  # None: iterate the filter to its fixed point
    discovery: DiscoveryConfig = field(default_factory=DiscoveryConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    seed: int = 0
    duration: float | None = None
    sweep: tuple = ()  # ((name, (values...)), ...) in nesting order, outermost first
    name: str = ""
    params: tuple = ()  # sweep values bound by expand_sweep

    def total_slots(self) -> int:
        if self.duration is not None:
            return int(round(self.duration / self.discovery.tau))
        last = self.events[-1].t if self.events else 0.0
        return int(last / self.discovery.tau) + 1 + 2 * self.discovery.slots

    def with_overrides(self, *, seed=None, slots=None, tau=None, alpha=None, threshold=None, noise_sigma=None, cap=None):
        disc = self.discovery
        disc = dataclasses.replace(
            disc,
            slots=disc.slots if slots is None else slots,
            tau=disc.tau if tau is None else tau,
            threshold=disc.threshold if threshold is None else threshold,
            cap=disc.cap if cap is None else cap,
        )
        policy = self.policy
        if alpha is not None:
            if not isinstance(policy, EqualCharge):
                raise ValidationError("--alpha only applies to the equal_charge policy")
            policy = EqualCharge(alpha)
        return dataclasses.replace(
            self,
            discovery=disc,
            policy=policy,
            seed=self.seed if seed is None else seed,
            noise=self.noise if noise_sigma is None else NoiseModel(noise_sigma),
        )


# -- parsing ------------------------------------------------------------------


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.path = path

    def fail(self, msg):
        raise ParseError(msg, field=self.path or "<root>")

    def sub(self, key):
        return _Reader(self.data[key], f"{self.path}.{key}" if self.path else str(key))

    def item(self, i):
        return _Reader(self.data[i], f"{self.path}[{i}]")

    def obj(self, allowed):
        if not isinstance(self.data, dict):
            self.fail("expected an object")
        extra = set(self.data) - set(allowed)
        if extra:
            self.fail(f"unknown keys {sorted(extra)}")
        return self

    def get(self, key, kind, default=None, required=False):
        if key not in self.data or self.data[key] is None:
            if required:
                self.fail(f"missing required key {key!r}")
            return default
        v = self.data[key]
        r = self.sub(key)
        if kind is float:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                r.fail("expected a number")
            return float(v)
        if kind is int:
            if isinstance(v, bool) or not isinstance(v, int):
                r.fail("expected an integer")
            return v
        if not isinstance(v, kind):
            r.fail(f"expected {kind.__name__}")
        return v


def _node(r: _Reader) -> Node:
    d = r.data
    if d is None or d == "empty":
        return None
    if not isinstance(d, dict):
        r.fail("expected null or an object")
    if "ev" in d:
        r.obj({"ev", "authorized", "demand_ah", "draw_current"})
        return EvNode(
            r.get("ev", str, required=True),
            r.get("authorized", bool, True),
            r.get("demand_ah", float),
            r.get("draw_current", float),
        )
    if "adapter" in d:
        r.obj({"adapter", "token", "sockets"})
        sockets = (None, None)
        if r.get("sockets", list) is not None:
            s = r.sub("sockets")
            if len(s.data) != 2:
                s.fail("an adapter has exactly two sockets")
            sockets = (_node(s.item(0)), _node(s.item(1)))
        return AdapterNode(r.get("adapter", str, required=True), r.get("token", str), sockets)
    if "chain" in d:
        r.obj({"chain", "prefix"})
        length = d["chain"]
        if isinstance(length, bool) or not isinstance(length, (int, str)):
            r.sub("chain").fail("expected an integer or a sweep variable name")
        if isinstance(length, int) and length < 0:
            r.sub("chain").fail("chain length must be >= 0")
        return ChainNode(length, r.get("prefix", str, "C"))
    r.fail("node needs one of 'ev', 'adapter', 'chain'")


_EVENT_KEYS = {
    "arrival": {"adapter", "ev", "token", "demand_ah", "draw_current"},
    "direct_ev": {"ev", "demand_ah", "draw_current"},
    "unlock": {"adapter", "token"},
    "remove_end": {"adapter", "token"},
    "remove_mid": {"adapter", "token", "reconnect"},
    "remove_unauthorized": {"ev"},
}


def _event(r: _Reader) -> TimedEvent:
    r.obj({"t", "type"} | set().union(*_EVENT_KEYS.values()))
    kind = r.get("type", str, required=True)
    if kind not in _EVENT_KEYS:
        r.sub("type").fail(f"unknown event type {kind!r}")
    r.obj({"t", "type"} | _EVENT_KEYS[kind])
    t = r.get("t", float, required=True)
    if t < 0:
        r.sub("t").fail("timestamps must be nonnegative")
    if kind == "arrival":
        e = ArrivalWithAdapter(
            r.get("adapter", str, required=True),
            r.get("ev", str, required=True),
            r.get("token", str),
            r.get("demand_ah", float),
            r.get("draw_current", float),
        )
    elif kind == "direct_ev":
        e = DirectEvPlug(r.get("ev", str, required=True), r.get("demand_ah", float), r.get("draw_current", float))
    elif kind == "unlock":
        e = UnlockRequest(r.get("adapter", str, required=True), r.get("token", str))
    elif kind == "remove_end":
        e = RemoveEnd(r.get("adapter", str, required=True), r.get("token", str))
    elif kind == "remove_mid":
        e = RemoveMid(r.get("adapter", str, required=True), r.get("token", str), r.get("reconnect", bool, True))
    else:
        e = RemoveUnauthorized(r.get("ev", str, required=True))
    return TimedEvent(t, e)


def _policy(r: _Reader) -> tuple[PolicyKind, int | None]:
    r.obj({"kind", "alpha", "updates_per_phase", "weights"})
    kind = r.get("kind", str, required=True)
    updates = r.get("updates_per_phase", int, 1)
    if "updates_per_phase" in r.data and r.data["updates_per_phase"] is None:
        updates = None
    if updates is not None and updates < 1:
        r.sub("updates_per_phase").fail("must be >= 1 or null")
    try:
        if kind == "fcfs":
            return FcfsWaterFilling(), updates
        if kind == "equal_charge":
            return EqualCharge(r.get("alpha", float, 0.9)), updates
        if kind == "priority":
            w = r.get("weights", dict, required=True)
            for k, v in w.items():
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    r.sub("weights").sub(k).fail("expected a number")
            return PriorityWeighted({k: float(v) for k, v in w.items()}), updates
    except (ValueError, DockChainError) as exc:
        if isinstance(exc, ParseError):
            raise
        r.fail(str(exc))
    r.sub("kind").fail(f"unknown policy {kind!r}")


def from_dict(data) -> Scenario:
    r = _Reader(data, "").obj(
        {"name", "charge_point", "topology", "events", "policy", "discovery", "noise", "seed", "duration", "sweep"}
    )
    cp = ChargePoint()
    if "charge_point" in data:
        c = r.sub("charge_point").obj({"max_current", "phases", "public"})
        try:
            cp = ChargePoint(c.get("max_current", float, 32.0), c.get("phases", int, 3), c.get("public", bool, True))
        except ValueError as exc:
            c.fail(str(exc))
    topology = _node(r.sub("topology")) if "topology" in data else None
    events = tuple(_event(r.sub("events").item(i)) for i in range(len(r.get("events", list, []))))
    policy, updates = (EqualCharge(), 1) if "policy" not in data else _policy(r.sub("policy"))
    disc = DiscoveryConfig()
    if "discovery" in data:
        d = r.sub("discovery").obj({"slots", "tau", "threshold", "cap"})
        try:
            disc = DiscoveryConfig(
                d.get("slots", int, 10_000), d.get("tau", float, 1.0), d.get("threshold", float), d.get("cap", int, 6)
            )
        except ValueError as exc:
            d.fail(str(exc))
    noise = NoiseModel()
    if "noise" in data:
        n = r.sub("noise").obj({"sigma"})
        try:
            noise = NoiseModel(n.get("sigma", float, 0.0))
        except ValueError as exc:
            n.fail(str(exc))
    sweep = ()
    if "sweep" in data:
        s = r.sub("sweep")
        for k, vals in r.get("sweep", dict, {}).items():
            if not isinstance(vals, list) or not all(isinstance(v, int) and not isinstance(v, bool) and v >= 0 for v in vals):
                s.sub(k).fail("expected a list of nonnegative integers")
        sweep = tuple((k, tuple(v)) for k, v in data["sweep"].items())
    duration = r.get("duration", float)
    if duration is not None and duration <= 0:
        r.sub("duration").fail("duration must be positive")
    scenario = Scenario(
        charge_point=cp,
        topology=topology,
        events=events,
        policy=policy,
        updates_per_phase=updates,
        discovery=disc,
        noise=noise,
        seed=r.get("seed", int, 0),
        duration=duration,
        sweep=sweep,
        name=r.get("name", str, ""),
    )
    validate(scenario)
    return scenario


def parse_scenario(text: str) -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    return from_dict(data)


def load_scenario(path) -> Scenario:
    return parse_scenario(Path(path).read_text())


def shipped_scenario(name: str) -> Scenario:
    return parse_scenario((resources.files("dockchain") / "data" / name).read_text())


# -- validation ---------------------------------------------------------------


def _ids(node, adapters, evs, variables):
    if isinstance(node, EvNode):
        evs.append(node.id)
    elif isinstance(node, AdapterNode):
        adapters.append(node.id)
        for s in node.sockets:
            _ids(s, adapters, evs, variables)
    elif isinstance(node, ChainNode):
        if isinstance(node.length, str):
            variables.add(node.length)
        else:
            layout_ids = _chain_ids(node.prefix, node.length)
            adapters.extend(layout_ids[0])
            evs.extend(layout_ids[1])


def _chain_ids(prefix, n):
    return [f"{prefix}{i}" for i in range(1, n + 1)], [f"{prefix}ev{i}" for i in range(1, n + 1)]


def validate(s: Scenario):
    times = [e.t for e in s.events]
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValidationError("event timeline is not sorted by timestamp")
    adapters, evs, variables = [], [], set()
    _ids(s.topology, adapters, evs, variables)
    names = dict(s.sweep)
    missing = variables - set(names)
    if missing:
        raise ValidationError(f"chain length names undefined sweep variables {sorted(missing)}")
    for e in s.events:
        if isinstance(e.event, ArrivalWithAdapter):
            adapters.append(e.event.adapter_id)
            evs.append(e.event.ev_id)
        elif isinstance(e.event, DirectEvPlug):
            evs.append(e.event.ev_id)
    for kind, ids in (("adapter", adapters), ("EV", evs)):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        if dup:
            raise ValidationError(f"duplicate {kind} ids {dup}")
    known = set(adapters)
    for e in s.events:
        aid = getattr(e.event, "adapter_id", None)
        if aid is not None and aid not in known:
            raise ValidationError(f"event at t={e.t:g} references unknown adapter {aid!r}")
    if isinstance(s.policy, PriorityWeighted):
        unweighted = set(evs) - set(s.policy.weights)
        if unweighted:
            raise ValidationError(f"priority policy lacks weights for {sorted(unweighted)}")
    for variant in expand_sweep(s) if s.sweep else [s]:
        try:
            build_network(variant)
        except DockChainError as exc:
            raise ValidationError(f"initial topology: {exc}") from None


def expand_sweep(s: Scenario) -> list[Scenario]:
    """One concrete scenario per combination of sweep values (outermost variable first)."""
    if not s.sweep:
        return [s]
    names = [k for k, _ in s.sweep]
    out = []
    for combo in itertools.product(*(v for _, v in s.sweep)):
        binding = dict(zip(names, combo))
        label = ",".join(f"{k}={v}" for k, v in binding.items())
        out.append(
            dataclasses.replace(
                s,
                topology=_bind(s.topology, binding),
                sweep=(),
                name=f"{s.name}[{label}]",
                params=tuple(binding.items()),
            )
        )
    return out


def _bind(node, binding):
    if isinstance(node, ChainNode) and isinstance(node.length, str):
        return ChainNode(binding[node.length], node.prefix)
    if isinstance(node, AdapterNode):
        return dataclasses.replace(node, sockets=tuple(_bind(x, binding) for x in node.sockets))
    return node


# -- building -----------------------------------------------------------------


def _layout(node, tokens, batteries):
    if node is None:
        return None
    if isinstance(node, EvNode):
        if node.demand_ah is not None or node.draw_current is not None:
            batteries[node.id] = (node.demand_ah, node.draw_current)
        return ev(node.id, authorized=node.authorized)
    if isinstance(node, AdapterNode):
        if node.token is not None:
            tokens[node.id] = node.token
        return (node.id, _layout(node.sockets[0], tokens, batteries), _layout(node.sockets[1], tokens, batteries))
    if isinstance(node.length, str):
        raise ValidationError(f"unbound sweep variable {node.length!r}")
    adapters, evs = _chain_ids(node.prefix, node.length)
    layout = None
    for aid, eid in reversed(list(zip(adapters, evs))):
        layout = (aid, layout, ev(eid))
    return layout


def build_network(s: Scenario) -> tuple[ChainNetwork, dict[str, EvBattery]]:
    tokens, raw = {}, {}
    net = build(_layout(s.topology, tokens, raw), s.charge_point, tokens)
    batteries = {
        k: EvBattery(demand, s.charge_point.max_current if draw is None else draw) for k, (demand, draw) in raw.items()
    }
    return net, batteries


# -- serialization ------------------------------------------------------------


def _node_dict(node):
    if node is None:
        return None
    if isinstance(node, EvNode):
        return {"ev": node.id, "authorized": node.authorized, "demand_ah": node.demand_ah, "draw_current": node.draw_current}
    if isinstance(node, AdapterNode):
        return {"adapter": node.id, "token": node.token, "sockets": [_node_dict(x) for x in node.sockets]}
    return {"chain": node.length, "prefix": node.prefix}


def _event_dict(te: TimedEvent):
    e = te.event
    if isinstance(e, ArrivalWithAdapter):
        body = {"type": "arrival", "adapter": e.adapter_id, "ev": e.ev_id, "token": e.token,
                "demand_ah": e.demand, "draw_current": e.draw_current}
    elif isinstance(e, DirectEvPlug):
        body = {"type": "direct_ev", "ev": e.ev_id, "demand_ah": e.demand, "draw_current": e.draw_current}
    elif isinstance(e, UnlockRequest):
        body = {"type": "unlock", "adapter": e.adapter_id, "token": e.token}
    elif isinstance(e, RemoveEnd):
        body = {"type": "remove_end", "adapter": e.adapter_id, "token": e.token}
    elif isinstance(e, RemoveMid):
        body = {"type": "remove_mid", "adapter": e.adapter_id, "token": e.token, "reconnect": e.reconnect}
    else:
        body = {"type": "remove_unauthorized", "ev": e.ev_id}
    return {"t": te.t, **body}


def _policy_dict(s: Scenario):
    p = s.policy
    if isinstance(p, FcfsWaterFilling):
        d = {"kind": "fcfs"}
    elif isinstance(p, EqualCharge):
        d = {"kind": "equal_charge", "alpha": p.alpha}
    else:
        d = {"kind": "priority", "weights": dict(p.weights)}
    d["updates_per_phase"] = s.updates_per_phase
    return d


def to_dict(s: Scenario) -> dict:
    cp, disc = s.charge_point, s.discovery
    out = {
        "name": s.name,
        "charge_point": {"max_current": cp.max_current, "phases": cp.phases, "public": cp.public},
        "topology": _node_dict(s.topology),
        "events": [_event_dict(e) for e in s.events],
        "policy": _policy_dict(s),
        "discovery": {"slots": disc.slots, "tau": disc.tau, "threshold": disc.threshold, "cap": disc.cap},
        "noise": {"sigma": s.noise.sigma},
        "seed": s.seed,
        "duration": s.duration,
    }
    if s.sweep:
        out["sweep"] = {k: list(v) for k, v in s.sweep}
    return out


def serialize_scenario(s: Scenario) -> str:
    return json.dumps(to_dict(s), indent=2) + "\n"


def network_to_dict(net: ChainNetwork) -> dict:
    """Snapshot of a network's current state (tokens omitted)."""

    def occ(o):
        if o == EMPTY:
            return None
        if isinstance(o, EvPlug):
            return {"ev": o.ev_id, "authorized": o.authorized, "locked": o.locked}
        a = net.adapters[o.adapter_id]
        return {"adapter": a.id, "p": a.p, "sockets": [occ(x) for x in a.sockets]}

    return {
        "charge_point": {"max_current": net.root.max_current, "phases": net.root.phases, "public": net.root.public},
        "root": occ(net.root_occupant),
        "orphans": [occ(AdapterLink(h)) for h in net.orphan_heads()],
    }
