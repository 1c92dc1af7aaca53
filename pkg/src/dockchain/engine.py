"""Slot-by-slot simulation engine with battery accounting and traces."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .discovery import UtilizationStats
from .electrical import EvBattery, NoiseModel, SinkKind, SlotOutcome, TraceRow, propagate_current
from .policy import (
    EqualCharge,
    FcfsWaterFilling,
    PriorityWeighted,
    apply_probabilities,
    equal_charge_probabilities,
    priority_probabilities,
    route_to,
)
from .topology import ChainNetwork

SECONDS_PER_HOUR = 3600.0


@dataclass(frozen=True)
class SimConfig:
    tau: float = 1.0
    supply: float | None = None  # defaults to the charge point rating
    threshold: float | None = None  # None: 0 A noiseless, half the supply with noise
    noise: NoiseModel = field(default_factory=NoiseModel)

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")


class Simulator:
    """Steps a network one slot at a time.

    Each adapter routes to socket 0 with its own ``p``.  With ``fcfs=True`` the
    probabilities are re-steered every slot toward the earliest-arrived EV that
    still wants charge.
    """

    def __init__(
        self,
        network: ChainNetwork,
        config: SimConfig | None = None,
        seed=None,
        *,
        batteries: Mapping[str, EvBattery] | None = None,
        fcfs: bool = False,
        record_trace: bool = True,
    ):
        self.network = network
        self.config = config or SimConfig()
        self.rng = np.random.default_rng(seed)
        self.supply = network.root.max_current if self.config.supply is None else self.config.supply
        if self.supply > network.root.max_current:
            raise ValueError("supply exceeds the charge point rating")
        noise = self.config.noise
        self.threshold = self.config.threshold
        if self.threshold is None:
            self.threshold = 0.0 if noise.noiseless else 0.5 * self.supply
        self.batteries: dict[str, EvBattery] = dict(batteries or {})
        self.fcfs = fcfs
        self.record_trace = record_trace
        self.trace: list[TraceRow] = []
        self.stats: dict[str, UtilizationStats] = {}
        self.slot = 0
        self.refresh()

    def refresh(self):
        """Pick up topology changes."""
        self.order = self.network.powered_adapters()
        for _, plug in self.network.evs():
            self.battery(plug.ev_id)

    def reset_stats(self):
        self.stats = {}

    def battery(self, ev_id: str) -> EvBattery:
        if ev_id not in self.batteries:
            self.batteries[ev_id] = EvBattery(None, self.supply)
        return self.batteries[ev_id]

    def ev_current(self, ev_id: str) -> float:
        b = self.battery(ev_id)
        return 0.0 if b.full else b.draw_current

    def _steer_fcfs(self):
        for ev_id in self.network.ev_order():
            loc, plug = self.network.find_ev(ev_id)
            if plug.charging and not self.battery(ev_id).full and self.network.location_powered(loc):
                apply_probabilities(self.network, route_to(self.network, ev_id))
                return

    def step(self) -> SlotOutcome:
        if self.fcfs:
            self._steer_fcfs()
        adapters = self.network.adapters
        u = self.rng.random(len(self.order))
        choices = {aid: 0 if u[j] < adapters[aid].p else 1 for j, aid in enumerate(self.order)}
        outcome = propagate_current(self.network, choices, self.supply, self.ev_current, slot=self.slot)
        jitter = self.config.noise.sample(self.rng, len(outcome.powered_path))
        on_path = dict(zip(outcome.powered_path, jitter))
        for aid in self.order:
            powered = aid in on_path
            drew = powered and outcome.delivered_current + on_path[aid] > self.threshold
            if powered:
                self.stats.setdefault(aid, UtilizationStats()).record(choices[aid], drew)
            if self.record_trace:
                self.trace.append(
                    TraceRow(
                        self.slot,
                        aid,
                        choices[aid],
                        powered,
                        bool(drew),
                        outcome.sink.kind.value,
                        outcome.sink.ev_id or "",
                        outcome.delivered_current,
                    )
                )
        if outcome.sink.kind is SinkKind.EV and outcome.delivered_current > 0:
            self.battery(outcome.sink.ev_id).received += outcome.delivered_current * self.config.tau / SECONDS_PER_HOUR
        self.slot += 1
        return outcome

    def run(self, slots: int) -> list[SlotOutcome]:
        return [self.step() for _ in range(slots)]

    def energy(self) -> dict[str, float]:
        return {ev_id: b.received for ev_id, b in self.batteries.items()}


@dataclass
class RunResult:
    outcomes: list[SlotOutcome]
    trace: list[TraceRow]
    energy: dict[str, float]
    utilization: dict[str, UtilizationStats]
    tau: float

    def sink_counts(self) -> dict:
        counts: dict = {}
        for o in self.outcomes:
            counts[o.sink] = counts.get(o.sink, 0) + 1
        return counts

    def running_average(self, adapter_id: str, socket: int) -> list[float]:
        """Cumulative utilisation of one socket after each slot (NaN before its first activation)."""
        out, hits, n = [], 0, 0
        for row in self.trace:
            if row.adapter_id != adapter_id:
                continue
            if row.powered and row.chosen_socket == socket:
                n += 1
                hits += row.draw_flag
            out.append(hits / n if n else math.nan)
        return out

    def delivered_total(self) -> float:
        return sum(o.delivered_current for o in self.outcomes) * self.tau / SECONDS_PER_HOUR


def run_slots(
    network: ChainNetwork,
    policy=None,
    config: SimConfig | None = None,
    seed=None,
    slots: int = 1000,
    *,
    batteries: Mapping[str, EvBattery] | None = None,
    record_trace: bool = True,
) -> RunResult:
    """Run ``slots`` steps under a routing policy.

    ``policy`` may be None (keep each adapter's current ``p``), ``"discovery"``
    (p = 0.5 everywhere), a mapping of adapter id to p, or a policy kind.
    Equal charge and priority use the network's true EV counts here.
    """
    fcfs = False
    if policy == "discovery":
        apply_probabilities(network, {aid: 0.5 for aid in network.adapters})
    elif isinstance(policy, Mapping):
        apply_probabilities(network, policy)
    elif isinstance(policy, EqualCharge):
        apply_probabilities(network, equal_charge_probabilities(network))
    elif isinstance(policy, PriorityWeighted):
        apply_probabilities(network, priority_probabilities(network, policy.weights))
    elif isinstance(policy, FcfsWaterFilling):
        fcfs = True
    elif policy is not None:
        raise TypeError(f"unsupported policy {policy!r}")
    sim = Simulator(network, config, seed, batteries=batteries, fcfs=fcfs, record_trace=record_trace)
    outcomes = sim.run(slots)
    return RunResult(outcomes, sim.trace, sim.energy(), sim.stats, sim.config.tau)
