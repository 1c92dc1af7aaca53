"""Network structure and the adapter connect/lock/remove protocol.

A :class:`ChainNetwork` is a tree of two-socket adapters hanging off a single
charge point.  Every mutation goes through one of the protocol methods
(``connect_first``, ``connect_subsequent``, ``attempt_direct_ev``,
``request_unlock``, ``remove_end``, ``remove_mid``), which re-check the
structural invariants and return the ``Reconfigured`` notifications raised.

By convention a newly connected adapter hosts its EV on socket 1 and keeps
socket 0 as the downstream continuation.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

from .errors import (
    AuthFailure,
    DuplicateId,
    InvariantViolation,
    NoEmptySocket,
    NoSuchAdapter,
    NotMid,
    NotTerminal,
    ProtocolError,
    RootOccupied,
)

CHARGE_POINT = "charge-point"

EV_SOCKET = 1
CHAIN_SOCKET = 0


@dataclass(frozen=True)
class ChargePoint:
    max_current: float = 32.0
    phases: int = 3
    public: bool = True

    def __post_init__(self):
        if self.phases not in (1, 3):
            raise ValueError(f"phases must be 1 or 3, got {self.phases}")
        limit = 32.0 if self.public else 16.0
        if not 0 < self.max_current <= limit:
            raise ValueError(f"max_current must be in (0, {limit:g}] A, got {self.max_current}")


# -- socket occupants ---------------------------------------------------------


@dataclass(frozen=True)
class Empty:
    def __repr__(self):
        return "EMPTY"


EMPTY = Empty()


@dataclass
class EvPlug:
    ev_id: str
    locked: bool = True
    authorized: bool = True

    @property
    def charging(self) -> bool:
        """An authorized EV whose session is still active (i.e. still locked)."""
        return self.authorized and self.locked


@dataclass(frozen=True)
class AdapterLink:
    adapter_id: str


Occupant = Union[Empty, EvPlug, AdapterLink]

# (adapter_id, socket); adapter_id None addresses the charge point's own socket.
Location = tuple


def ev(ev_id: str, *, authorized: bool = True) -> EvPlug:
    return EvPlug(ev_id, locked=authorized, authorized=authorized)


@dataclass
class Adapter:
    id: str
    pairing_token: str = field(default_factory=lambda: secrets.token_hex(8), repr=False)
    sockets: list = field(default_factory=lambda: [EMPTY, EMPTY])
    # CHARGE_POINT, (parent_id, socket), or None for the head of an orphaned fragment
    upstream: object = None
    p: float = 0.5

    def hosted_ev(self) -> EvPlug | None:
        for occ in self.sockets:
            if isinstance(occ, EvPlug) and occ.authorized:
                return occ
        return None

    def downstream(self) -> list[tuple[int, str]]:
        return [(s, occ.adapter_id) for s, occ in enumerate(self.sockets) if isinstance(occ, AdapterLink)]


# -- events and notifications -------------------------------------------------


@dataclass(frozen=True)
class ArrivalWithAdapter:
    adapter_id: str
    ev_id: str
    token: str | None = None
    demand: float | None = None
    draw_current: float | None = None


@dataclass(frozen=True)
class DirectEvPlug:
    ev_id: str
    demand: float | None = None
    draw_current: float | None = None


@dataclass(frozen=True)
class UnlockRequest:
    adapter_id: str
    token: str | None = None


@dataclass(frozen=True)
class RemoveEnd:
    adapter_id: str
    token: str | None = None


@dataclass(frozen=True)
class RemoveMid:
    adapter_id: str
    token: str | None = None
    reconnect: bool = True


@dataclass(frozen=True)
class RemoveUnauthorized:
    ev_id: str


@dataclass(frozen=True)
class Reconfigured:
    """Raised once per chain segment whose structure changed.

    ``segment`` is None for the powered chain hanging off the charge point,
    otherwise the head adapter id of an orphaned fragment.
    """

    segment: str | None = None


NetworkEvent = Union[
    ArrivalWithAdapter, DirectEvPlug, UnlockRequest, RemoveEnd, RemoveMid, RemoveUnauthorized, Reconfigured
]


@dataclass(frozen=True)
class RejectionNotice:
    ev_id: str
    location: Location
    message: str = "This vehicle will not receive any charge. Please unplug it and leave the socket free."


# -- the network --------------------------------------------------------------


class ChainNetwork:
    def __init__(self, root: ChargePoint | None = None):
        self.root = root or ChargePoint()
        self.root_occupant: Occupant = EMPTY
        self.adapters: dict[str, Adapter] = {}
        self.arrivals: list[str] = []
        self.notifications: list[Reconfigured] = []

    def __repr__(self):
        return f"ChainNetwork(adapters={list(self.adapters)}, root={self.root_occupant!r})"

    # lookups

    def adapter(self, adapter_id: str) -> Adapter:
        try:
            return self.adapters[adapter_id]
        except KeyError:
            raise NoSuchAdapter(f"no adapter {adapter_id!r}") from None

    def occupant(self, loc: Location) -> Occupant:
        aid, s = loc
        if aid is None:
            return self.root_occupant
        return self.adapter(aid).sockets[s]

    def _set(self, loc: Location, occ: Occupant):
        aid, s = loc
        if aid is None:
            self.root_occupant = occ
        else:
            self.adapters[aid].sockets[s] = occ

    def _upstream_location(self, a: Adapter) -> Location | None:
        if a.upstream == CHARGE_POINT:
            return (None, 0)
        if a.upstream is None:
            return None
        return tuple(a.upstream)

    def orphan_heads(self) -> list[str]:
        return [aid for aid, a in self.adapters.items() if a.upstream is None]

    def walk(self, head: str | None = None) -> Iterator[Adapter]:
        """Adapters of one segment in breadth-first order (socket 0 before 1)."""
        if head is None:
            if not isinstance(self.root_occupant, AdapterLink):
                return
            head = self.root_occupant.adapter_id
        queue = [head]
        while queue:
            a = self.adapters[queue.pop(0)]
            yield a
            queue.extend(child for _, child in a.downstream())

    def powered_adapters(self) -> list[str]:
        return [a.id for a in self.walk()]

    def segment_of(self, adapter_id: str) -> str | None:
        a = self.adapter(adapter_id)
        while isinstance(a.upstream, tuple):
            a = self.adapters[a.upstream[0]]
        return None if a.upstream == CHARGE_POINT else a.id

    def is_powered(self, adapter_id: str) -> bool:
        return self.segment_of(adapter_id) is None

    def location_powered(self, loc: Location) -> bool:
        return loc[0] is None or self.is_powered(loc[0])

    def evs(self) -> Iterator[tuple[Location, EvPlug]]:
        if isinstance(self.root_occupant, EvPlug):
            yield (None, 0), self.root_occupant
        for a in self.adapters.values():
            for s, occ in enumerate(a.sockets):
                if isinstance(occ, EvPlug):
                    yield (a.id, s), occ

    def find_ev(self, ev_id: str) -> tuple[Location, EvPlug]:
        for loc, plug in self.evs():
            if plug.ev_id == ev_id:
                return loc, plug
        raise KeyError(ev_id)

    def ev_order(self) -> list[str]:
        """EV ids still plugged in, in arrival order."""
        present = {plug.ev_id for _, plug in self.evs()}
        return [e for e in self.arrivals if e in present]

    def subtree_evs(self, loc: Location) -> list[EvPlug]:
        occ = self.occupant(loc)
        if isinstance(occ, EvPlug):
            return [occ]
        if isinstance(occ, AdapterLink):
            a = self.adapters[occ.adapter_id]
            return [p for s in (0, 1) for p in self.subtree_evs((a.id, s))]
        return []

    def path_to(self, loc: Location) -> list[tuple[str, int]]:
        """(adapter_id, socket) hops from the charge point down to ``loc``."""
        hops = []
        aid, s = loc
        while aid is not None:
            hops.append((aid, s))
            up = self.adapters[aid].upstream
            if up == CHARGE_POINT:
                break
            if up is None:
                raise ProtocolError(f"location {loc} is in an orphaned fragment")
            aid, s = up
        return hops[::-1]

    def terminal_socket(self, head: str | None = None) -> Location:
        """The free socket at the end of a linear segment."""
        if head is None:
            occ = self.root_occupant
            if not isinstance(occ, AdapterLink):
                return (None, 0)
            a = self.adapters[occ.adapter_id]
        else:
            a = self.adapter(head)
        while True:
            down = a.downstream()
            if len(down) > 1:
                raise ProtocolError(f"adapter {a.id!r} branches; the terminal socket is ambiguous")
            if down:
                a = self.adapters[down[0][1]]
                continue
            for s in (CHAIN_SOCKET, EV_SOCKET):
                occ = a.sockets[s]
                if occ == EMPTY or (isinstance(occ, EvPlug) and not occ.authorized):
                    return (a.id, s)
            raise NoEmptySocket(f"terminal adapter {a.id!r} has no free socket")

    # protocol

    def _check_fresh(self, adapter: Adapter, ev_id: str | None):
        if adapter.id in self.adapters:
            raise DuplicateId(f"adapter {adapter.id!r} already in the network")
        if ev_id is not None and any(p.ev_id == ev_id for _, p in self.evs()):
            raise DuplicateId(f"EV {ev_id!r} already plugged in")

    def _attach(self, adapter: Adapter, loc: Location, ev_id: str | None):
        adapter.sockets = [EMPTY, EMPTY]
        if ev_id is not None:
            adapter.sockets[EV_SOCKET] = EvPlug(ev_id, locked=True, authorized=True)
            self.arrivals.append(ev_id)
        adapter.upstream = CHARGE_POINT if loc[0] is None else loc
        self.adapters[adapter.id] = adapter
        self._set(loc, AdapterLink(adapter.id))

    def _notify(self, *segments) -> list[Reconfigured]:
        raised = [Reconfigured(s) for s in segments]
        self.notifications.extend(raised)
        return raised

    def connect_first(self, adapter: Adapter, ev_id: str) -> list[Reconfigured]:
        if self.root_occupant != EMPTY:
            raise RootOccupied("the charge point already hosts a device")
        self._check_fresh(adapter, ev_id)
        self._attach(adapter, (None, 0), ev_id)
        self.check_invariants()
        return self._notify(None)

    def connect_subsequent(self, adapter: Adapter, ev_id: str, at: Location | None = None) -> list[Reconfigured]:
        if at is None:
            if self.root_occupant == EMPTY:
                raise ProtocolError("no chain to extend; use connect_first")
            at = self.terminal_socket()
        occ = self.occupant(at)
        if occ != EMPTY:
            raise NoEmptySocket(f"socket {at} is occupied by {occ!r}; remove it first")
        self._check_fresh(adapter, ev_id)
        self._attach(adapter, at, ev_id)
        self.check_invariants()
        return self._notify(self.segment_of(adapter.id))

    def connect(self, adapter: Adapter, ev_id: str) -> list[Reconfigured]:
        if self.root_occupant == EMPTY:
            return self.connect_first(adapter, ev_id)
        return self.connect_subsequent(adapter, ev_id)

    def attempt_direct_ev(self, ev_id: str, at: Location | None = None) -> RejectionNotice:
        if at is None:
            at = self.terminal_socket()
        if self.occupant(at) != EMPTY:
            raise NoEmptySocket(f"socket {at} is occupied")
        if any(p.ev_id == ev_id for _, p in self.evs()):
            raise DuplicateId(f"EV {ev_id!r} already plugged in")
        self._set(at, EvPlug(ev_id, locked=False, authorized=False))
        self.arrivals.append(ev_id)
        self.check_invariants()
        return RejectionNotice(ev_id, at)

    def remove_unauthorized(self, ev_id: str) -> Location:
        """Unplug a refused EV.  Needs no token: it was never locked."""
        try:
            loc, plug = self.find_ev(ev_id)
        except KeyError:
            raise ProtocolError(f"no EV {ev_id!r} plugged in") from None
        if plug.authorized:
            raise AuthFailure(f"EV {ev_id!r} is authorized; only its owner may remove it")
        self._set(loc, EMPTY)
        self.check_invariants()
        return loc

    def _authenticate(self, adapter_id: str, token: str | None) -> Adapter:
        a = self.adapter(adapter_id)
        if token != a.pairing_token:
            raise AuthFailure(f"token rejected by adapter {adapter_id!r}")
        return a

    def request_unlock(self, adapter_id: str, token: str | None) -> bool:
        """Release the adapter's EV lock.  Returns False when there was nothing to release."""
        a = self._authenticate(adapter_id, token)
        plug = a.hosted_ev()
        if plug is None or not plug.locked:
            return False
        plug.locked = False
        return True

    def _detach(self, a: Adapter):
        a.sockets = [EMPTY, EMPTY]
        a.upstream = None
        del self.adapters[a.id]

    def remove_end(self, adapter_id: str, token: str | None) -> list[Reconfigured]:
        a = self._authenticate(adapter_id, token)
        if a.downstream():
            raise NotTerminal(f"adapter {adapter_id!r} has downstream adapters; use remove_mid")
        segment = self.segment_of(adapter_id)
        up = self._upstream_location(a)
        if plug := a.hosted_ev():
            plug.locked = False
        self._detach(a)
        raised = []
        if up is not None:
            self._set(up, EMPTY)
            raised = self._notify(segment)
        self.check_invariants()
        return raised

    def remove_mid(self, adapter_id: str, token: str | None, reconnect: bool = True) -> list[Reconfigured]:
        a = self._authenticate(adapter_id, token)
        down = a.downstream()
        if not down:
            raise NotMid(f"adapter {adapter_id!r} is terminal; use remove_end")
        segment = self.segment_of(adapter_id)
        up = self._upstream_location(a)
        if plug := a.hosted_ev():
            plug.locked = False
        self._detach(a)
        children = [self.adapters[cid] for _, cid in down]
        for child in children:
            child.upstream = None
        if up is not None:
            self._set(up, EMPTY)
        raised = []
        if reconnect:
            # only one plug fits the vacated socket; any second branch stays orphaned
            head = children[0]
            if up is not None:
                head.upstream = CHARGE_POINT if up[0] is None else up
                self._set(up, AdapterLink(head.id))
                raised = self._notify(segment)
            else:
                raised = self._notify(head.id)
        elif up is not None:
            raised = self._notify(segment)
        self.check_invariants()
        return raised

    def apply(self, event: NetworkEvent, tokens: dict[str, str] | None = None) -> list[Reconfigured]:
        """Dispatch a timeline event.  ``tokens`` supplies owner tokens for events that omit one."""
        tokens = tokens or {}

        def tok(e):
            return e.token if e.token is not None else tokens.get(e.adapter_id, self.adapter(e.adapter_id).pairing_token)

        if isinstance(event, ArrivalWithAdapter):
            adapter = Adapter(event.adapter_id) if event.token is None else Adapter(event.adapter_id, event.token)
            return self.connect(adapter, event.ev_id)
        if isinstance(event, DirectEvPlug):
            self.attempt_direct_ev(event.ev_id)
            return []
        if isinstance(event, UnlockRequest):
            self.request_unlock(event.adapter_id, tok(event))
            return []
        if isinstance(event, RemoveEnd):
            return self.remove_end(event.adapter_id, tok(event))
        if isinstance(event, RemoveMid):
            return self.remove_mid(event.adapter_id, tok(event), event.reconnect)
        if isinstance(event, RemoveUnauthorized):
            self.remove_unauthorized(event.ev_id)
            return []
        if isinstance(event, Reconfigured):
            return self._notify(event.segment)
        raise TypeError(f"unknown event {event!r}")

    # invariants

    def check_invariants(self):
        refs: dict[str, Location] = {}

        def note(occ, loc):
            if isinstance(occ, AdapterLink):
                if occ.adapter_id not in self.adapters:
                    raise InvariantViolation(f"{loc} links to unknown adapter {occ.adapter_id!r}")
                if occ.adapter_id in refs:
                    raise InvariantViolation(f"adapter {occ.adapter_id!r} plugged into two sockets")
                refs[occ.adapter_id] = loc

        note(self.root_occupant, (None, 0))
        seen_evs = set()
        for loc, plug in self.evs():
            if plug.ev_id in seen_evs:
                raise InvariantViolation(f"EV {plug.ev_id!r} appears twice")
            seen_evs.add(plug.ev_id)
            if not plug.authorized and plug.locked:
                raise InvariantViolation(f"unauthorized EV {plug.ev_id!r} is locked")
        for a in self.adapters.values():
            if not 0.0 <= a.p <= 1.0:
                raise InvariantViolation(f"adapter {a.id!r} has p={a.p}")
            if sum(isinstance(o, EvPlug) and o.authorized for o in a.sockets) > 1:
                raise InvariantViolation(f"adapter {a.id!r} hosts two authorized EVs")
            for s, occ in enumerate(a.sockets):
                note(occ, (a.id, s))
        for aid, a in self.adapters.items():
            loc = refs.get(aid)
            if a.upstream is None:
                if loc is not None:
                    raise InvariantViolation(f"orphan {aid!r} is still referenced from {loc}")
            elif a.upstream == CHARGE_POINT:
                if loc != (None, 0):
                    raise InvariantViolation(f"adapter {aid!r} claims the charge point but is not plugged there")
            elif loc != tuple(a.upstream):
                raise InvariantViolation(f"adapter {aid!r} upstream {a.upstream} disagrees with {loc}")
        visited = set()
        for head in [None, *self.orphan_heads()]:
            for a in self.walk(head):
                if a.id in visited:
                    raise InvariantViolation(f"cycle through adapter {a.id!r}")
                visited.add(a.id)
        if visited != set(self.adapters):
            raise InvariantViolation(f"unreachable adapters {set(self.adapters) - visited}")

    def free_socket_count(self, head: str | None = None) -> int:
        """Sockets in a segment that are Empty or hold a refused EV."""

        def free(occ):
            return occ == EMPTY or (isinstance(occ, EvPlug) and not occ.authorized)

        count = 0
        if head is None and not isinstance(self.root_occupant, AdapterLink):
            return int(free(self.root_occupant))
        for a in self.walk(head):
            count += sum(free(o) for o in a.sockets)
        return count

    def chain_property_holds(self) -> bool:
        """Every segment is linear and ends in exactly one free socket."""
        for head in [None, *self.orphan_heads()]:
            if any(len(a.downstream()) > 1 for a in self.walk(head)):
                return False
            if self.free_socket_count(head) != 1:
                return False
        return True


# -- builders -----------------------------------------------------------------

# A layout node is None (empty socket), an EvPlug, or (adapter_id, socket0, socket1).


def sub_chain(length: int, prefix: str = "A", ev_prefix: str | None = None, start: int = 1):
    """Layout of a linear chain of ``length`` adapters, each hosting one EV."""
    ev_prefix = ev_prefix or f"{prefix}_ev"
    node = None
    for i in reversed(range(start, start + length)):
        node = (f"{prefix}{i}", node, ev(f"{ev_prefix}{i}"))
    return node


def build(layout, charge_point: ChargePoint | None = None, tokens: dict[str, str] | None = None) -> ChainNetwork:
    """Build a network directly from a nested layout, bypassing the arrival protocol."""
    net = ChainNetwork(charge_point)
    tokens = tokens or {}
    order: list[str] = []

    def place(node, loc):
        if node is None:
            net._set(loc, EMPTY)
        elif isinstance(node, EvPlug):
            net._set(loc, EvPlug(node.ev_id, node.locked, node.authorized))
            order.append(node.ev_id)
        else:
            aid, s0, s1 = node
            if aid in net.adapters:
                raise DuplicateId(f"adapter {aid!r} appears twice in the layout")
            a = Adapter(aid, tokens[aid]) if aid in tokens else Adapter(aid)
            a.upstream = CHARGE_POINT if loc[0] is None else loc
            net.adapters[aid] = a
            net._set(loc, AdapterLink(aid))
            # hosted EV first so a linear chain lists EVs root-first
            for s in sorted((0, 1), key=lambda s: not isinstance((s0, s1)[s], EvPlug)):
                place((s0, s1)[s], (aid, s))

    place(layout, (None, 0))
    net.arrivals = order
    if len(set(order)) != len(order):
        raise DuplicateId("duplicate EV id in layout")
    net.check_invariants()
    return net


def linear_chain(n: int, charge_point: ChargePoint | None = None, prefix: str = "A") -> ChainNetwork:
    """A chain of ``n`` adapters built through the arrival protocol."""
    net = ChainNetwork(charge_point)
    for i in range(1, n + 1):
        net.connect(Adapter(f"{prefix}{i}"), f"E{i}")
    return net


def measured_chain(n: int, root: str = "R") -> ChainNetwork:
    """Root adapter whose socket 0 leads to ``n`` chained adapters; its own EV sits on socket 1."""
    return build((root, sub_chain(n, "A", "E"), ev(f"{root}_ev")))


def two_chains(l0: int, l1: int, root: str = "R") -> ChainNetwork:
    """Root adapter (no EV of its own) with linear chains of l0 and l1 adapters on its sockets."""
    return build((root, sub_chain(l0, "S0_", "S0_ev"), sub_chain(l1, "S1_", "S1_ev")))


# -- reconfiguration detection --------------------------------------------------


@dataclass(frozen=True)
class PowerSample:
    """What one adapter observed during one slot.

    ``line`` is whether the adapter's upstream supply was electrically present,
    ``socket`` the socket current was offered to (None if upstream routed elsewhere),
    ``drew`` whether current above threshold flowed.
    """

    line: bool
    socket: int | None = None
    drew: bool = False


def _window_fractions(window: Sequence[PowerSample]) -> list[float | None]:
    out = []
    for s in (0, 1):
        hits = [x.drew for x in window if x.socket == s]
        out.append(sum(hits) / len(hits) if hits else None)
    return out


def detect_reconfiguration(trace: Sequence[PowerSample], window: int = 32, jump: float = 0.25) -> bool:
    lines = [x.line for x in trace]
    if any(a != b for a, b in zip(lines, lines[1:])):
        return True
    for end in range(2 * window, len(trace) + 1):
        prev = _window_fractions(trace[end - 2 * window : end - window])
        cur = _window_fractions(trace[end - window : end])
        for a, b in zip(prev, cur):
            if a is not None and b is not None and abs(a - b) > jump:
                return True
    return False
