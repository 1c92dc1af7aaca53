"""Current propagation through the adapter tree.

Within one slot every powered adapter passes the full current to exactly one
of its sockets, so the current follows a single root-to-sink path and ends at
one sink: an EV, an empty socket, a refused EV, or nothing at all when the
start point is an unpowered fragment.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple

import numpy as np

from .topology import EMPTY, AdapterLink, ChainNetwork, EvPlug


class SinkKind(str, enum.Enum):
    EV = "ev"
    EMPTY = "empty"
    UNAUTHORIZED = "unauthorized"
    ORPHANED = "orphaned"


class Sink(NamedTuple):
    kind: SinkKind
    ev_id: str | None = None


EMPTY_SINK = Sink(SinkKind.EMPTY)
ORPHANED_SINK = Sink(SinkKind.ORPHANED)


@dataclass(frozen=True)
class SlotOutcome:
    slot_index: int
    choices: Mapping[str, int]
    powered_path: tuple[str, ...]
    sink: Sink
    delivered_current: float


@dataclass(frozen=True)
class NoiseModel:
    """Additive Gaussian measurement noise; ``sigma == 0`` means noiseless."""

    sigma: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("noise sigma must be >= 0")

    @property
    def noiseless(self) -> bool:
        return self.sigma == 0.0

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.noiseless:
            return np.zeros(size)
        return rng.normal(0.0, self.sigma, size)


@dataclass
class EvBattery:
    demand: float | None = None  # amp-hours; None means never full
    draw_current: float = 32.0
    received: float = 0.0

    @property
    def full(self) -> bool:
        return self.demand is not None and self.received >= self.demand


TRACE_COLUMNS = ("slot", "adapter_id", "chosen_socket", "powered", "draw_flag", "sink_kind", "sink_id", "delivered_A")


class TraceRow(NamedTuple):
    slot: int
    adapter_id: str
    chosen_socket: int
    powered: bool
    draw_flag: bool
    sink_kind: str
    sink_id: str
    delivered_A: float


CurrentFn = Callable[[str], float]


def _resolve_current(network: ChainNetwork, supply: float | None, ev_current) -> tuple[float, CurrentFn]:
    supply = network.root.max_current if supply is None else supply
    if ev_current is None:
        return supply, lambda ev_id: supply
    if isinstance(ev_current, Mapping):
        return supply, lambda ev_id: ev_current.get(ev_id, supply)
    return supply, ev_current


def _sink_for(plug: EvPlug) -> Sink:
    return Sink(SinkKind.EV if plug.authorized else SinkKind.UNAUTHORIZED, plug.ev_id)


def _delivered(plug: EvPlug, supply: float, current: CurrentFn) -> float:
    if not plug.charging:
        return 0.0
    return min(supply, current(plug.ev_id))


def propagate_current(
    network: ChainNetwork,
    choices: Mapping[str, int],
    supply: float | None = None,
    ev_current: Mapping[str, float] | CurrentFn | None = None,
    *,
    slot: int = 0,
    start: str | None = None,
) -> SlotOutcome:
    """Follow the chosen sockets from the charge point (or from ``start``) to the sink."""
    supply, current = _resolve_current(network, supply, ev_current)
    if start is not None and not network.is_powered(start):
        return SlotOutcome(slot, dict(choices), (), ORPHANED_SINK, 0.0)
    occ = network.root_occupant if start is None else AdapterLink(start)
    path = []
    while isinstance(occ, AdapterLink):
        a = network.adapters[occ.adapter_id]
        path.append(a.id)
        occ = a.sockets[choices[a.id]]
    if isinstance(occ, EvPlug):
        return SlotOutcome(slot, dict(choices), tuple(path), _sink_for(occ), _delivered(occ, supply, current))
    return SlotOutcome(slot, dict(choices), tuple(path), EMPTY_SINK, 0.0)


@dataclass
class BatchRouting:
    """Vectorized routing of many slots at once (fixed topology and EV states)."""

    order: list[str]
    choices: dict[str, np.ndarray]
    powered: dict[str, np.ndarray]
    sinks: list[Sink]
    sink_code: np.ndarray
    delivered: np.ndarray = field(repr=False)

    @property
    def slots(self) -> int:
        return len(self.sink_code)


def route_batch(
    network: ChainNetwork,
    choices: Mapping[str, np.ndarray],
    supply: float | None = None,
    ev_current: Mapping[str, float] | CurrentFn | None = None,
    *,
    slots: int | None = None,
) -> BatchRouting:
    supply, current = _resolve_current(network, supply, ev_current)
    order = network.powered_adapters()
    n = slots if slots is not None else len(next(iter(choices.values())))
    sinks: list[Sink] = []
    sink_amps: list[float] = []
    sink_code = np.zeros(n, dtype=np.int64)
    powered: dict[str, np.ndarray] = {}

    def sink(occ) -> int:
        s = EMPTY_SINK if occ == EMPTY else _sink_for(occ)
        sinks.append(s)
        sink_amps.append(_delivered(occ, supply, current) if isinstance(occ, EvPlug) else 0.0)
        return len(sinks) - 1

    # explicit stack; depth is bounded by chain length anyway
    stack = [(network.root_occupant, np.ones(n, dtype=bool))]
    while stack:
        occ, mask = stack.pop()
        if isinstance(occ, AdapterLink):
            a = network.adapters[occ.adapter_id]
            powered[a.id] = mask
            x = choices[a.id]
            for s in (1, 0):
                stack.append((a.sockets[s], mask & (x == s)))
        else:
            sink_code[mask] = sink(occ)
    delivered = np.asarray(sink_amps, dtype=float)[sink_code]
    return BatchRouting(order, dict(choices), powered, sinks, sink_code, delivered)


def batch_trace(routing: BatchRouting, draws: Mapping[str, np.ndarray], offset: int = 0):
    """Yield :class:`TraceRow` records for every slot and adapter of a batch."""
    for i in range(routing.slots):
        sink = routing.sinks[routing.sink_code[i]]
        delivered = float(routing.delivered[i])
        for aid in routing.order:
            yield TraceRow(
                offset + i,
                aid,
                int(routing.choices[aid][i]),
                bool(routing.powered[aid][i]),
                bool(draws[aid][i]),
                sink.kind.value,
                sink.ev_id or "",
                delivered,
            )


def path_probabilities(network: ChainNetwork, probs: Mapping[str, float] | None = None) -> dict[Sink, object]:
    """Exact per-sink probability: the product of routing probabilities along each path.

    Preserves the numeric type of ``probs`` (pass Fractions for exact results).
    """
    out: dict[Sink, object] = {}

    def visit(occ, weight):
        if isinstance(occ, AdapterLink):
            a = network.adapters[occ.adapter_id]
            p = a.p if probs is None else probs.get(a.id, a.p)
            visit(a.sockets[0], weight * p)
            visit(a.sockets[1], weight * (1 - p))
        else:
            s = EMPTY_SINK if occ == EMPTY else _sink_for(occ)
            out[s] = out.get(s, 0) + weight

    visit(network.root_occupant, 1)
    return out
