"""Charging policies: first-come-first-served, equal charge, and priority weighting.

Equal charge sets each adapter's socket-0 probability to the share of EVs
downstream of socket 0, smoothed by a first-order IIR filter.  Applied at
every adapter of a linear chain, the product of probabilities along the path
to each EV is ``1/N``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Mapping, Sequence, Union

from .errors import DegenerateChain, ZeroWeight
from .topology import ChainNetwork

DEFAULT_ALPHA = 0.9


@dataclass(frozen=True)
class FcfsWaterFilling:
    pass


@dataclass(frozen=True)
class EqualCharge:
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must be in [0, 1), got {self.alpha}")


@dataclass(frozen=True)
class PriorityWeighted:
    weights: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for ev_id, w in self.weights.items():
            if not w > 0:
                raise ZeroWeight(f"EV {ev_id!r} has non-positive weight {w}")


PolicyKind = Union[FcfsWaterFilling, EqualCharge, PriorityWeighted]


@dataclass(frozen=True)
class IirState:
    p: float = 0.5
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must be in [0, 1], got {self.p}")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must be in [0, 1), got {self.alpha}")


def _length(x) -> float:
    return getattr(x, "rounded", x)


def update_p(state: IirState, l0, l1) -> IirState:
    """One filter step toward ``l0 / (l0 + l1)``; a no-op when both sockets are empty."""
    l0, l1 = _length(l0), _length(l1)
    if l0 < 0 or l1 < 0:
        raise ValueError("chain lengths must be >= 0")
    if l0 + l1 == 0:
        return state
    p = state.alpha * state.p + (1 - state.alpha) * l0 / (l0 + l1)
    return IirState(min(1.0, max(0.0, p)), state.alpha)


def iterate_p(state: IirState, l0, l1, steps: int) -> list[float]:
    """Trajectory ``[p_0, p_1, ..., p_steps]`` of repeated updates."""
    out = [state.p]
    for _ in range(steps):
        state = update_p(state, l0, l1)
        out.append(state.p)
    return out


def converge_p(state: IirState, l0, l1, tol: float = 1e-12, max_steps: int = 10_000) -> tuple[IirState, int]:
    for k in range(max_steps):
        nxt = update_p(state, l0, l1)
        if abs(nxt.p - state.p) <= tol:
            return nxt, k + 1
        state = nxt
    return state, max_steps


def steady_state_p(l0, l1):
    """Fixed point of :func:`update_p`.  Exact (a Fraction) for integer or rational input."""
    l0, l1 = _length(l0), _length(l1)
    if l0 + l1 == 0:
        raise DegenerateChain("both sockets have zero chain length")
    if isinstance(l0, Rational) and isinstance(l1, Rational):
        return Fraction(l0) / (Fraction(l0) + Fraction(l1))
    return l0 / (l0 + l1)


def ev_counts(network: ChainNetwork) -> dict[str, tuple[int, int]]:
    """Ground-truth number of charging EVs below each socket of each powered adapter."""
    out = {}
    for a in network.walk():
        out[a.id] = tuple(sum(p.charging for p in network.subtree_evs((a.id, s))) for s in (0, 1))
    return out


def equal_charge_probabilities(network: ChainNetwork, lengths: Mapping[str, Sequence] | None = None) -> dict:
    """Socket-0 probability per adapter from per-socket EV counts (estimates or exact)."""
    lengths = ev_counts(network) if lengths is None else lengths
    out = {}
    for a in network.walk():
        l0, l1 = lengths[a.id]
        out[a.id] = steady_state_p(l0, l1)
    return out


def priority_probabilities(network: ChainNetwork, weights: Mapping[str, float]) -> dict:
    """Like equal charge, but each socket counts the summed weight of its EVs."""
    for w in weights.values():
        if not w > 0:
            raise ZeroWeight(f"non-positive weight {w}")

    def weight(loc):
        total = 0
        for plug in network.subtree_evs(loc):
            if not plug.charging:
                continue
            if plug.ev_id not in weights:
                raise ZeroWeight(f"EV {plug.ev_id!r} has no weight")
            total += weights[plug.ev_id]
        return total

    return {a.id: steady_state_p(weight((a.id, 0)), weight((a.id, 1))) for a in network.walk()}


def route_to(network: ChainNetwork, ev_id: str) -> dict[str, int]:
    """Deterministic probabilities (0 or 1) steering all current to one EV."""
    loc, _ = network.find_ev(ev_id)
    return {aid: 1 if s == 0 else 0 for aid, s in network.path_to(loc)}


@dataclass
class FcfsPlan:
    allocation: list  # per slot: EV id served, or None
    completion: dict  # EV id -> 1-based slot in which its demand was met (0 if none was needed)
    quantum: float  # amp-hours per slot


def fcfs_schedule(order: Sequence[str], demands: Mapping[str, float], supply: float, tau: float = 1.0) -> FcfsPlan:
    """Water filling: all supply goes to the earliest-arrived EV until its demand is met."""
    if supply <= 0:
        raise ValueError("supply must be positive")
    if any(demands[e] < 0 for e in order):
        raise ValueError("demands must be nonnegative")
    quantum = supply * tau / 3600.0
    allocation, completion = [], {}
    slot = 0
    for ev_id in order:
        received = 0.0
        if demands[ev_id] <= 0:
            completion[ev_id] = slot
            continue
        while received < demands[ev_id]:
            slot += 1
            allocation.append(ev_id)
            received += quantum
        completion[ev_id] = slot
    return FcfsPlan(allocation, completion, quantum)


def apply_probabilities(network: ChainNetwork, probs: Mapping[str, float]):
    for aid, p in probs.items():
        network.adapters[aid].p = float(p)

