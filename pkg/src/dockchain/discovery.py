"""Randomized chain-length discovery.

During a discovery phase every adapter routes current to socket 0 or 1 with
equal probability, independently, once per slot.  A socket with ``n`` adapters
chained below it reaches the chain's trailing empty socket with probability
``2**-n``, so the fraction of its activations that drew current estimates
``1 - 2**-n`` and hence ``n``.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Mapping

import numpy as np

from .electrical import BatchRouting, NoiseModel, TraceRow, batch_trace, route_batch
from .errors import NoSamples, TooLarge
from .topology import EMPTY, AdapterLink, ChainNetwork, EvPlug

DEFAULT_CAP = 6
BRUTE_FORCE_LIMIT = 20


@dataclass(frozen=True)
class DiscoveryConfig:
    slots: int = 10_000
    tau: float = 1.0
    threshold: float | None = None  # None: 0 A when noiseless, half an EV's draw otherwise
    cap: int = DEFAULT_CAP
    p: float = 0.5

    def __post_init__(self):
        if self.slots < 1:
            raise ValueError("discovery needs at least one slot")
        if self.tau <= 0:
            raise ValueError("slot duration must be positive")
        if self.threshold is not None and self.threshold < 0:
            raise ValueError("threshold must be >= 0")
        if self.p != 0.5:
            raise ValueError("discovery routes with p = 0.5")
        if self.cap < 1:
            raise ValueError("cap must be >= 1")

    def resolve_threshold(self, noise: NoiseModel, draw_current: float) -> float:
        t = self.threshold
        if t is None:
            t = 0.0 if noise.noiseless else 0.5 * draw_current
        if t >= draw_current:
            raise ValueError(f"threshold {t} A must be below the EV draw current {draw_current} A")
        return t


@dataclass
class UtilizationStats:
    socket_utilization: list = field(default_factory=lambda: [0, 0])
    activations: list = field(default_factory=lambda: [0, 0])
    valid_samples: int = 0

    @property
    def fraction_utilization(self) -> tuple[float | None, float | None]:
        return tuple(u / a if a else None for u, a in zip(self.socket_utilization, self.activations))

    def record(self, socket: int, drew: bool):
        self.valid_samples += 1
        self.activations[socket] += 1
        self.socket_utilization[socket] += int(drew)


class LengthSource(str, enum.Enum):
    DISCOVERED = "discovered"
    KNOWN_EV = "known_ev"
    KNOWN_EMPTY = "known_empty"


@dataclass(frozen=True)
class LengthEstimate:
    raw: float
    rounded: int
    source: LengthSource = LengthSource.DISCOVERED
    saturated: bool = False


KNOWN_EV = LengthEstimate(1.0, 1, LengthSource.KNOWN_EV)
KNOWN_EMPTY = LengthEstimate(0.0, 0, LengthSource.KNOWN_EMPTY)


@dataclass(frozen=True)
class UtilizationMoments:
    p: float
    mean: float
    variance: float
    chain_length: int
    samples: int


def no_draw_probability(chain_length: int) -> Fraction:
    """Chance that one slot's routing runs all the way to the trailing empty socket."""
    if chain_length < 0:
        raise ValueError("chain length must be >= 0")
    return Fraction(1, 2**chain_length)


def utilization_moments(chain_length: int, samples: int) -> UtilizationMoments:
    if samples < 1:
        raise ValueError("need at least one sample")
    p = float(1 - no_draw_probability(chain_length))
    return UtilizationMoments(p, p, p * (1 - p) / samples, chain_length, samples)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def estimate_length(fraction: float, cap: int = DEFAULT_CAP) -> LengthEstimate:
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction {fraction} outside [0, 1]")
    if fraction == 1.0:
        return LengthEstimate(math.inf, cap, LengthSource.DISCOVERED, saturated=True)
    raw = -math.log2(1.0 - fraction) + 0.0  # avoid -0.0
    return LengthEstimate(raw, round_half_up(raw))


def known_estimate(occ) -> LengthEstimate | None:
    """Estimate an adapter can read off its own sockets without measuring."""
    if isinstance(occ, AdapterLink):
        return None
    if isinstance(occ, EvPlug) and occ.charging:
        return KNOWN_EV
    return KNOWN_EMPTY


@dataclass
class AdapterDiscovery:
    stats: UtilizationStats
    estimates: tuple[LengthEstimate | None, LengthEstimate | None]


def estimates_from_stats(
    network: ChainNetwork, stats: Mapping[str, UtilizationStats], cap: int = DEFAULT_CAP, strict: bool = True
) -> dict[str, AdapterDiscovery]:
    out = {}
    for aid, st in stats.items():
        a = network.adapters[aid]
        ests = []
        for s, occ in enumerate(a.sockets):
            est = known_estimate(occ)
            if est is None:
                if st.activations[s] == 0:
                    if strict:
                        raise NoSamples(aid, s)
                else:
                    est = estimate_length(st.socket_utilization[s] / st.activations[s], cap)
            ests.append(est)
        out[aid] = AdapterDiscovery(st, tuple(ests))
    return out


@dataclass
class DiscoveryResult:
    adapters: dict[str, AdapterDiscovery]
    routing: BatchRouting = field(repr=False)
    draws: dict[str, np.ndarray] = field(repr=False)

    def __getitem__(self, adapter_id: str) -> AdapterDiscovery:
        return self.adapters[adapter_id]

    def __iter__(self):
        return iter(self.adapters)

    def lengths(self) -> dict[str, tuple[int, int]]:
        return {aid: tuple(e.rounded for e in d.estimates) for aid, d in self.adapters.items()}

    def samples(self, adapter_id: str, socket: int) -> np.ndarray:
        """Draw outcomes of one socket, one entry per activation, in slot order."""
        active = self.routing.powered[adapter_id] & (self.routing.choices[adapter_id] == socket)
        return self.draws[adapter_id][active]

    def trace(self) -> Iterator[TraceRow]:
        return batch_trace(self.routing, self.draws)


def draw_choices(rng: np.random.Generator, order: list[str], slots: int, probs: Mapping[str, float]) -> dict[str, np.ndarray]:
    u = rng.random((slots, len(order)))
    return {aid: (u[:, j] >= probs[aid]).astype(np.int8) for j, aid in enumerate(order)}


def run_discovery(
    network: ChainNetwork,
    config: DiscoveryConfig | None = None,
    seed=None,
    *,
    noise: NoiseModel | None = None,
    ev_current: Mapping[str, float] | None = None,
    strict: bool = True,
) -> DiscoveryResult:
    """Run one discovery phase over the powered part of ``network``.

    Orphaned fragments are skipped.  An adapter only records a sample in slots
    where it actually received current from upstream.
    """
    config = config or DiscoveryConfig()
    noise = noise or NoiseModel()
    supply = network.root.max_current
    threshold = config.resolve_threshold(noise, supply)
    rng = np.random.default_rng(seed)
    order = network.powered_adapters()
    n = config.slots
    choices = draw_choices(rng, order, n, {aid: config.p for aid in order})
    routing = route_batch(network, choices, supply, ev_current, slots=n)
    jitter = noise.sample(rng, (n, len(order)))
    draws, stats = {}, {}
    for j, aid in enumerate(order):
        powered = routing.powered[aid]
        drew = powered & (routing.delivered + jitter[:, j] > threshold)
        draws[aid] = drew
        x = choices[aid]
        st = UtilizationStats()
        for s in (0, 1):
            on = powered & (x == s)
            st.activations[s] = int(on.sum())
            st.socket_utilization[s] = int((drew & on).sum())
        st.valid_samples = int(powered.sum())
        stats[aid] = st
    return DiscoveryResult(estimates_from_stats(network, stats, config.cap, strict), routing, draws)


def sample_socket(
    network: ChainNetwork,
    adapter_id: str,
    socket: int,
    samples: int,
    seed=None,
    config: DiscoveryConfig | None = None,
    noise: NoiseModel | None = None,
) -> np.ndarray:
    """Run the discovery slot clock until ``socket`` has been activated ``samples`` times.

    Returns the per-activation draw outcomes (the utilisation samples).
    """
    config = config or DiscoveryConfig()
    slots = 2 * samples + 64
    while True:
        cfg = DiscoveryConfig(slots, config.tau, config.threshold, config.cap)
        got = run_discovery(network, cfg, seed, noise=noise, strict=False).samples(adapter_id, socket)
        if len(got) >= samples:
            return got[:samples]
        slots *= 2


# -- exhaustive oracles -------------------------------------------------------


def _subtree_adapters(network: ChainNetwork, occ) -> list[str]:
    out = []
    stack = [occ]
    while stack:
        o = stack.pop()
        if isinstance(o, AdapterLink):
            out.append(o.adapter_id)
            stack.extend(network.adapters[o.adapter_id].sockets)
    return sorted(out)


def enumerate_sinks(network: ChainNetwork, probs: Mapping[str, object] | None = None, start=None) -> dict:
    """Sink distribution by enumerating every joint routing choice of every adapter.

    ``start`` is a location (adapter_id, socket); by default the charge point.
    Probabilities keep the type of ``probs`` (default: exact halves).
    """
    occ0 = network.root_occupant if start is None else network.occupant(start)
    ids = _subtree_adapters(network, occ0)
    if len(ids) > BRUTE_FORCE_LIMIT:
        raise TooLarge(f"{len(ids)} adapters exceed the enumeration limit of {BRUTE_FORCE_LIMIT}")
    probs = probs if probs is not None else {aid: Fraction(1, 2) for aid in ids}
    out: dict = {}
    for combo in itertools.product((0, 1), repeat=len(ids)):
        pick = dict(zip(ids, combo))
        weight = 1
        for aid, x in pick.items():
            weight *= probs[aid] if x == 0 else 1 - probs[aid]
        occ = occ0
        while isinstance(occ, AdapterLink):
            occ = network.adapters[occ.adapter_id].sockets[pick[occ.adapter_id]]
        if occ == EMPTY:
            key = ("empty", None)
        else:
            key = ("ev" if occ.authorized else "unauthorized", occ.ev_id)
        out[key] = out.get(key, 0) + weight
    return out


def brute_force_draw_frequency(network: ChainNetwork, adapter_id: str | None = None, socket: int = 0) -> Fraction:
    """Exact probability that current offered at a socket ends at a charging EV.

    Counts, over all ``2**k`` equally likely routing choices of the ``k``
    adapters below the socket, those whose path terminates at an EV.
    Measuring from the charge point when ``adapter_id`` is None.
    """
    start = None if adapter_id is None else (adapter_id, socket)
    occ0 = network.root_occupant if start is None else network.occupant(start)
    ids = _subtree_adapters(network, occ0)
    k = len(ids)
    if k > BRUTE_FORCE_LIMIT:
        raise TooLarge(f"{k} adapters exceed the enumeration limit of {BRUTE_FORCE_LIMIT}")
    hits = 0
    for combo in itertools.product((0, 1), repeat=k):
        pick = dict(zip(ids, combo))
        occ = occ0
        while isinstance(occ, AdapterLink):
            occ = network.adapters[occ.adapter_id].sockets[pick[occ.adapter_id]]
        hits += isinstance(occ, EvPlug) and occ.charging
    return Fraction(hits, 2**k)
