"""Experiment drivers behind the CLI: timeline replay, the utilisation
convergence curve, and the steady-state probability table."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .discovery import (
    DiscoveryConfig,
    UtilizationStats,
    estimates_from_stats,
    run_discovery,
    sample_socket,
    utilization_moments,
)
from .electrical import TRACE_COLUMNS, EvBattery, TraceRow
from .engine import SimConfig, Simulator
from .errors import AuthFailure, DegenerateChain, ProtocolError, SimulationError
from .policy import (
    EqualCharge,
    FcfsWaterFilling,
    IirState,
    PriorityWeighted,
    apply_probabilities,
    converge_p,
    iterate_p,
    priority_probabilities,
    update_p,
)
from .scenario import AdapterNode, ChainNode, EvNode, Scenario, build_network, expand_sweep, network_to_dict, shipped_scenario
from .topology import ArrivalWithAdapter, DirectEvPlug, measured_chain

FIG3_CHAIN = 4
TABLE2_TOLERANCE = 0.05


def write_trace(rows: Iterable[TraceRow], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for r in rows:
            w.writerow([r.slot, r.adapter_id, r.chosen_socket, int(r.powered), int(r.draw_flag), r.sink_kind, r.sink_id, repr(r.delivered_A)])


def _estimate_dict(e):
    if e is None:
        return None
    return {"raw": None if math.isinf(e.raw) else e.raw, "rounded": e.rounded, "source": e.source.value, "saturated": e.saturated}


# -- timeline replay ------------------------------------------------------------


@dataclass
class SimulationReport:
    scenario: Scenario
    slots: int
    trace: list[TraceRow]
    energy: dict[str, float]
    unauthorized: set[str]
    phases: list[dict]
    log: list[dict]
    network: dict = field(repr=False)

    def summary(self) -> dict:
        return {
            "name": self.scenario.name,
            "seed": self.scenario.seed,
            "slots": self.slots,
            "tau": self.scenario.discovery.tau,
            "evs": {
                ev_id: {"energy_ah": e, "authorized": ev_id not in self.unauthorized}
                for ev_id, e in sorted(self.energy.items())
            },
            "total_energy_ah": sum(self.energy.values()),
            "discovery_phases": self.phases,
            "events": self.log,
        }


def _describe(event) -> dict:
    d = {"type": type(event).__name__}
    for k in ("adapter_id", "ev_id", "reconnect"):
        if hasattr(event, k):
            d[k] = getattr(event, k)
    return d


def simulate(scenario: Scenario, *, record_trace: bool = True) -> SimulationReport:
    """Replay a scenario timeline slot by slot.

    Every structural change to the powered chain restarts a discovery phase
    (all adapters at p = 0.5); when a phase completes the policy is applied.
    """
    net, batteries = build_network(scenario)
    disc = scenario.discovery
    threshold = disc.resolve_threshold(scenario.noise, net.root.max_current)
    cfg = SimConfig(tau=disc.tau, threshold=threshold, noise=scenario.noise)
    sim = Simulator(net, cfg, scenario.seed, batteries=batteries, record_trace=record_trace)
    unauthorized = {plug.ev_id for _, plug in net.evs() if not plug.authorized}
    iir: dict[str, IirState] = {}
    policy = scenario.policy
    events = list(scenario.events)
    total = scenario.total_slots()
    phases, log = [], []
    ei = 0
    phase_start = None

    def start_phase(slot):
        apply_probabilities(net, {aid: 0.5 for aid in net.adapters})
        sim.fcfs = False
        sim.reset_stats()
        return slot

    def finish_phase(start, slot):
        powered = net.powered_adapters()
        stats = {aid: sim.stats.get(aid, UtilizationStats()) for aid in powered}
        found = estimates_from_stats(net, stats, disc.cap, strict=False)
        if isinstance(policy, EqualCharge):
            for aid, d in found.items():
                if None in d.estimates:
                    continue
                state = iir.get(aid, IirState(0.5, policy.alpha))
                l0, l1 = d.estimates
                if scenario.updates_per_phase is None:
                    state, _ = converge_p(state, l0, l1)
                else:
                    for _ in range(scenario.updates_per_phase):
                        state = update_p(state, l0, l1)
                iir[aid] = state
                net.adapters[aid].p = float(state.p)
        elif isinstance(policy, PriorityWeighted):
            try:
                apply_probabilities(net, priority_probabilities(net, policy.weights))
            except DegenerateChain:
                pass
        elif isinstance(policy, FcfsWaterFilling):
            sim.fcfs = True
        phases.append(
            {
                "start_slot": start,
                "end_slot": slot + 1,
                "estimates": {aid: [_estimate_dict(e) for e in d.estimates] for aid, d in found.items()},
                "p": {aid: net.adapters[aid].p for aid in powered},
            }
        )

    for slot in range(total):
        now = slot * disc.tau
        restart = slot == 0 and bool(net.adapters)
        while ei < len(events) and events[ei].t <= now:
            te = events[ei]
            ei += 1
            entry = {"t": te.t, **_describe(te.event)}
            try:
                raised = net.apply(te.event)
            except AuthFailure as exc:
                entry["rejected"] = str(exc)
                log.append(entry)
                continue
            except ProtocolError as exc:
                raise SimulationError(te.t, exc) from exc
            e = te.event
            if isinstance(e, (ArrivalWithAdapter, DirectEvPlug)) and (e.demand is not None or e.draw_current is not None):
                sim.batteries[e.ev_id] = EvBattery(e.demand, sim.supply if e.draw_current is None else e.draw_current)
            if isinstance(e, DirectEvPlug):
                unauthorized.add(e.ev_id)
            entry["reconfigured"] = [r.segment for r in raised]
            log.append(entry)
            sim.refresh()
            if any(r.segment is None for r in raised):
                restart = True
        if restart:
            phase_start = start_phase(slot)
        sim.step()
        if phase_start is not None and slot + 1 - phase_start == disc.slots:
            finish_phase(phase_start, slot)
            phase_start = None

    for _, plug in net.evs():
        sim.battery(plug.ev_id)
    return SimulationReport(scenario, total, sim.trace, sim.energy(), unauthorized, phases, log, network_to_dict(net))


def write_simulation(report: SimulationReport, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trace(report.trace, out / "trace.csv")
    (out / "summary.json").write_text(json.dumps(report.summary(), indent=2) + "\n")
    (out / "network.json").write_text(json.dumps(report.network, indent=2) + "\n")


# -- utilisation convergence curve ------------------------------------------------


FIG3_COLUMNS = ("slot", "running_avg", "mu", "mu_plus_sigma", "mu_minus_sigma")


@dataclass
class Fig3Result:
    rows: list[tuple]
    mu: float
    final: float
    deviation: float
    tolerance: float

    @property
    def within(self) -> bool:
        return abs(self.deviation) <= self.tolerance


def fig3(slots: int = 2000, seed=0, chain_length: int = FIG3_CHAIN) -> Fig3Result:
    """Running average of the root's socket-0 utilisation, one row per socket-0 activation."""
    net = measured_chain(chain_length)
    samples = sample_socket(net, "R", 0, slots, seed=seed)
    mu = utilization_moments(chain_length, 1).mean
    running = np.cumsum(samples) / np.arange(1, slots + 1)
    rows = []
    for n, avg in enumerate(running, start=1):
        sigma = math.sqrt(mu * (1 - mu) / n)
        rows.append((n, float(avg), mu, mu + sigma, mu - sigma))
    final = float(running[-1])
    tol = 4 * math.sqrt(utilization_moments(chain_length, slots).variance)
    return Fig3Result(rows, mu, final, final - mu, tol)


def write_rows(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in r])


# -- steady-state probability table ---------------------------------------------

TABLE2_COLUMNS = ("L0", "L1", "expected_p", "simulated_p", "abs_error", "estimated_L0", "estimated_L1", "empirical_p", "p_trajectory")
TRAJECTORY_STEPS = 50


@dataclass
class Table2Row:
    l0: int
    l1: int
    expected_p: float
    simulated_p: float
    estimated: tuple[int, int]
    empirical_p: float
    trajectory: list[float]

    @property
    def abs_error(self) -> float:
        return abs(self.simulated_p - self.expected_p)

    def as_tuple(self):
        return (
            self.l0,
            self.l1,
            self.expected_p,
            self.simulated_p,
            self.abs_error,
            self.estimated[0],
            self.estimated[1],
            self.empirical_p,
            ";".join(f"{p:.6f}" for p in self.trajectory),
        )


def table2(scenario: Scenario | None = None, root: str = "R") -> list[Table2Row]:
    """Discovery, then the probability filter run to its fixed point, for every sweep row."""
    scenario = scenario or shipped_scenario("table2.scenario")
    alpha = scenario.policy.alpha if isinstance(scenario.policy, EqualCharge) else 0.9
    rows = []
    for i, variant in enumerate(expand_sweep(scenario)):
        params = dict(variant.params)
        net, _ = build_network(variant)
        l0, l1 = params.get("L0"), params.get("L1")
        rng_seed = np.random.SeedSequence([variant.seed, i])
        found = run_discovery(net, variant.discovery, rng_seed, noise=variant.noise)[root]
        e0, e1 = found.estimates
        start = IirState(0.5, alpha)
        state, _ = converge_p(start, e0, e1)
        traj = iterate_p(start, e0, e1, TRAJECTORY_STEPS)
        policy_slots = np.random.default_rng(rng_seed.spawn(1)[0]).random(variant.discovery.slots)
        empirical = float(np.mean(policy_slots < state.p))
        expected = l0 / (l0 + l1)
        rows.append(Table2Row(l0, l1, expected, float(state.p), (e0.rounded, e1.rounded), empirical, traj))
    return rows


# -- seed sweeps ------------------------------------------------------------------


def discovery_lengths(args) -> dict[str, tuple[int, int]]:
    scenario, seed = args
    net, _ = build_network(scenario)
    return run_discovery(net, scenario.discovery, seed, noise=scenario.noise, strict=False).lengths()


def discovery_trials(scenario: Scenario, trials: int, workers: int | None = None) -> list[tuple[int, dict]]:
    """Independent discovery runs for seeds ``seed .. seed+trials-1``, returned in seed order."""
    seeds = [scenario.seed + k for k in range(trials)]
    jobs = [(scenario, s) for s in seeds]
    if trials > 1 and workers != 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(discovery_lengths, jobs))
    else:
        results = [discovery_lengths(j) for j in jobs]
    return list(zip(seeds, results))


def measured_chain_scenario(n: int, **overrides) -> Scenario:
    """Root adapter with its own EV on socket 1 and ``n`` chained adapters on socket 0."""
    topo = AdapterNode("R", None, (ChainNode(n, "A"), EvNode("R_ev")))
    return Scenario(topology=topo, name=f"chain{n}", discovery=DiscoveryConfig(**overrides) if overrides else DiscoveryConfig())
