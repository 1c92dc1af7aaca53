"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import math
import random
import time
from fractions import Fraction

import numpy as np
import pytest

from dockchain.discovery import DiscoveryConfig, brute_force_draw_frequency, run_discovery, sample_socket
from dockchain.electrical import EMPTY_SINK, Sink, SinkKind, path_probabilities
from dockchain.engine import SimConfig, Simulator, run_slots
from dockchain.errors import AuthFailure, ProtocolError
from dockchain.experiments import TABLE2_TOLERANCE, fig3, table2
from dockchain.policy import EqualCharge, IirState, equal_charge_probabilities, update_p
from dockchain.scenario import network_to_dict
from dockchain.topology import (
    ArrivalWithAdapter,
    ChainNetwork,
    DirectEvPlug,
    RemoveEnd,
    RemoveMid,
    RemoveUnauthorized,
    UnlockRequest,
    linear_chain,
    measured_chain,
)

MU4 = 0.9375


@pytest.fixture
def report(capsys):
    def emit(number, name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {name} -- {detail}")
        assert ok, detail

    return emit


def test_criterion_1_fig3(report):
    t0 = time.perf_counter()
    res = fig3(slots=2000, seed=0)
    elapsed = time.perf_counter() - t0
    tol = 4 * math.sqrt(MU4 * (1 - MU4) / 2000)
    ok = abs(res.final - MU4) <= tol and elapsed < 1.0
    report(1, "utilisation convergence", ok, f"final {res.final:.5f}, |dev| {abs(res.final - MU4):.5f} <= {tol:.5f}, {elapsed:.3f}s")


def test_criterion_2_moments(report):
    n, seeds = 1000, 200
    net = measured_chain(4)
    fractions = np.array([sample_socket(net, "R", 0, n, seed=s).mean() for s in range(seeds)])
    mean = fractions.mean()
    var = fractions.var(ddof=1)
    expected_var = MU4 * (1 - MU4) / n
    ratio = var / expected_var
    ok = abs(mean - MU4) <= 0.002 and 0.5 <= ratio <= 1.5
    report(2, "utilisation moments", ok, f"mean {mean:.5f}, variance ratio {ratio:.3f}")


def test_criterion_3_table2(report):
    t0 = time.perf_counter()
    rows = table2()
    elapsed = time.perf_counter() - t0
    worst = max(r.abs_error for r in rows)
    ok = len(rows) == 21 and worst <= TABLE2_TOLERANCE and elapsed < 30
    report(3, "steady-state table", ok, f"{len(rows)} rows, worst |error| {worst:.4f}, {elapsed:.2f}s")


def test_criterion_4_oracle(report):
    bad = [n for n in range(1, 11) if brute_force_draw_frequency(linear_chain(n)) != 1 - Fraction(1, 2**n)]
    report(4, "enumeration oracle", not bad, f"exact for chain lengths 1..10, mismatches {bad}")


def test_criterion_5_length_recovery(report):
    hits = {}
    for n_o in range(1, 7):
        net = measured_chain(n_o)
        cfg = DiscoveryConfig(slots=10_000)
        hits[n_o] = sum(run_discovery(net, cfg, seed=s)["R"].estimates[0].rounded == n_o for s in range(100))
    ok = all(h >= 95 for h in hits.values())
    report(5, "length recovery", ok, f"exact recoveries per 100 runs {hits}")


def test_criterion_6_equal_share(report):
    slots = 30_000
    exact_ok = True
    worst_z = 0.0
    for n in range(1, 7):
        net = linear_chain(n)
        probs = equal_charge_probabilities(net)
        paths = path_probabilities(net, probs)
        exact_ok &= all(paths[Sink(SinkKind.EV, f"E{i}")] == Fraction(1, n) for i in range(1, n + 1))
        exact_ok &= paths.get(EMPTY_SINK, 0) == 0
        res = run_slots(net, EqualCharge(), seed=1, slots=slots, record_trace=False)
        total = sum(res.energy.values())
        sigma = math.sqrt(slots * (1 / n) * (1 - 1 / n))
        for i in range(1, n + 1):
            dev = abs(res.energy[f"E{i}"] / total * slots - slots / n)
            worst_z = max(worst_z, dev / sigma if sigma else (0.0 if dev < 1e-6 else math.inf))
    ok = exact_ok and worst_z <= 3
    report(6, "equal share", ok, f"exact 1/N paths {exact_ok}, worst simulated deviation {worst_z:.2f} sigma")


class _Fuzzer:
    """Random event sequences against one network, with owner and forged tokens."""

    def __init__(self, rng):
        self.rng = rng
        self.net = ChainNetwork()
        self.sim = Simulator(self.net, SimConfig(), seed=rng.randrange(2**32))
        self.tokens = {}
        self.unlocked = set()
        self.refused = set()
        self.n = 0
        self.refused_hits = 0

    def event(self):
        r, net = self.rng, self.net
        self.n += 1
        kind = r.choices(["arrive", "direct", "clear", "unlock", "end", "mid"], [30, 15, 10, 15, 15, 15])[0]
        ids = sorted(net.adapters) or ["ghost"]
        aid = r.choice(ids)
        forged = r.random() < 0.3
        token = "forged" if forged else self.tokens.get(aid)
        if kind == "arrive":
            aid = f"A{self.n}"
            self.tokens[aid] = f"tok{self.n}"
            return ArrivalWithAdapter(aid, f"E{self.n}", self.tokens[aid]), False
        if kind == "direct":
            return DirectEvPlug(f"X{self.n}"), False
        if kind == "clear":
            live = sorted(p.ev_id for _, p in net.evs() if not p.authorized)
            return RemoveUnauthorized(r.choice(live) if live else "nobody"), False
        if kind == "unlock":
            return UnlockRequest(aid, token), forged
        if kind == "end":
            return RemoveEnd(aid, token), forged
        return RemoveMid(aid, token, r.random() < 0.5), forged

    def run(self, length):
        net = self.net
        for _ in range(length):
            event, forged = self.event()
            before = network_to_dict(net)
            hosted = {aid: a.hosted_ev() for aid, a in net.adapters.items()}
            try:
                net.apply(event)
            except AuthFailure:
                if network_to_dict(net) != before:
                    return "forged token changed the network"
            except ProtocolError:
                if network_to_dict(net) != before:
                    return f"rejected {type(event).__name__} changed the network"
            else:
                if forged:
                    return f"forged {type(event).__name__} was accepted"
                if isinstance(event, UnlockRequest) and hosted.get(event.adapter_id):
                    self.unlocked.add(hosted[event.adapter_id].ev_id)
                if isinstance(event, DirectEvPlug):
                    self.refused.add(event.ev_id)
            net.check_invariants()
            if not net.chain_property_holds():
                return "segment without exactly one free socket"
            for _, plug in net.evs():
                if plug.authorized and plug.ev_id not in self.unlocked and not plug.locked:
                    return f"{plug.ev_id} unlocked without its owner"
                if not plug.authorized and plug.locked:
                    return f"refused {plug.ev_id} is locked"
            self.sim.refresh()
            for _ in range(2):
                out = self.sim.step()
                self.refused_hits += out.sink.kind is SinkKind.UNAUTHORIZED
        leaked = {e: self.sim.battery(e).received for e in self.refused if self.sim.battery(e).received != 0}
        return f"refused EVs charged {leaked}" if leaked else None


def test_criterion_7_protocol_fuzz(report):
    rng = random.Random(2024)
    sequences, problems, refused_hits, events = 10_000, [], 0, 0
    for i in range(sequences):
        length = rng.randint(1, 50)
        fz = _Fuzzer(random.Random(rng.randrange(2**63)))
        err = fz.run(length)
        events += length
        refused_hits += fz.refused_hits
        if err:
            problems.append((i, err))
    ok = not problems and refused_hits > 0
    report(
        7,
        "protocol properties",
        ok,
        f"{sequences} sequences, {events} events, {refused_hits} slots routed to refused EVs, problems {problems[:3]}",
    )


def test_criterion_8_filter_convergence(report):
    rng = random.Random(7)
    worst = 0.0
    exact_ok = True
    for _ in range(300):
        p0 = rng.random()
        alpha = rng.uniform(0, 0.99)
        l0, l1 = rng.randint(0, 10), rng.randint(0, 10)
        if l0 + l1 == 0:
            l1 = 1
        star = l0 / (l0 + l1)
        s = IirState(p0, alpha)
        for k in range(1, 101):
            s = update_p(s, l0, l1)
            predicted = alpha**k * abs(p0 - star)
            # probabilities live on [0, 1], so 1e-12 relative to unit scale
            worst = max(worst, abs(abs(s.p - star) - predicted))
        # the identity itself holds exactly in rational arithmetic
        fp0, fa = Fraction(p0), Fraction(alpha)
        fstar = Fraction(l0, l0 + l1)
        fs = IirState(fp0, fa)
        for k in range(1, 21):
            fs = update_p(fs, l0, l1)
            exact_ok &= abs(fs.p - fstar) == fa**k * abs(fp0 - fstar)
    ok = worst <= 1e-12 and exact_ok
    report(8, "filter convergence", ok, f"worst float deviation {worst:.2e}, exact identity {exact_ok}")
