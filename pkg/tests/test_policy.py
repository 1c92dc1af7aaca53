from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dockchain.discovery import KNOWN_EMPTY, KNOWN_EV, LengthEstimate
from dockchain.electrical import EMPTY_SINK, Sink, SinkKind, path_probabilities
from dockchain.errors import DegenerateChain, ZeroWeight
from dockchain.policy import (
    EqualCharge,
    IirState,
    PriorityWeighted,
    converge_p,
    equal_charge_probabilities,
    ev_counts,
    fcfs_schedule,
    iterate_p,
    priority_probabilities,
    route_to,
    steady_state_p,
    update_p,
)
from dockchain.topology import build, ev, linear_chain, sub_chain, two_chains


def ev_sink(ev_id):
    return Sink(SinkKind.EV, ev_id)


# -- filter ------------------------------------------------------------------------


def test_update_examples():
    assert update_p(IirState(0.5, 0.0), 3, 2).p == pytest.approx(0.6)
    assert update_p(IirState(0.8, 0.9), 1, 1).p == pytest.approx(0.77)


def test_update_converges_to_zero_for_empty_socket_zero():
    state, _ = converge_p(IirState(0.5, 0.9), 0, 1)
    assert state.p == pytest.approx(0.0, abs=1e-11)


def test_update_is_noop_when_both_empty():
    s = IirState(0.3, 0.9)
    assert update_p(s, 0, 0) == s


def test_update_accepts_estimates():
    s = update_p(IirState(0.5, 0.0), LengthEstimate(2.9, 3), KNOWN_EV)
    assert s.p == pytest.approx(0.75)
    assert update_p(IirState(0.5, 0.0), KNOWN_EMPTY, KNOWN_EV).p == 0


def test_update_rejects_negative_length():
    with pytest.raises(ValueError):
        update_p(IirState(), -1, 2)


def test_state_validation():
    with pytest.raises(ValueError):
        IirState(1.2, 0.5)
    with pytest.raises(ValueError):
        IirState(0.5, 1.0)
    with pytest.raises(ValueError):
        EqualCharge(1.0)


@given(
    p=st.floats(0, 1),
    alpha=st.floats(0, 0.999),
    l0=st.integers(0, 50),
    l1=st.integers(0, 50),
)
def test_range_preservation(p, alpha, l0, l1):
    assert 0.0 <= update_p(IirState(p, alpha), l0, l1).p <= 1.0


def test_trajectory_shape():
    traj = iterate_p(IirState(0.5, 0.9), 6, 2, 50)
    assert len(traj) == 51 and traj[0] == 0.5
    assert all(a <= b for a, b in zip(traj, traj[1:]))


# -- steady state ----------------------------------------------------------------------


def test_steady_state_examples():
    assert steady_state_p(6, 2) == Fraction(3, 4)
    assert steady_state_p(1, 6) == Fraction(1, 7)
    assert round(float(steady_state_p(1, 6)), 3) == 0.143
    for k in range(1, 8):
        assert steady_state_p(k, k) == Fraction(1, 2)
    with pytest.raises(DegenerateChain):
        steady_state_p(0, 0)


def test_steady_state_float_inputs():
    assert steady_state_p(1.5, 0.5) == 0.75


@pytest.mark.parametrize("l0", range(0, 7))
@pytest.mark.parametrize("l1", [1, 2, 6])
def test_filter_reaches_table_fixed_point(l0, l1):
    state, steps = converge_p(IirState(0.5, 0.9), l0, l1)
    assert state.p == pytest.approx(l0 / (l0 + l1), abs=1e-10)
    assert steps < 400


# -- equal charge -------------------------------------------------------------------------


def test_equal_charge_three_ev_chain():
    net = linear_chain(3)
    probs = equal_charge_probabilities(net)
    assert probs == {"A1": Fraction(2, 3), "A2": Fraction(1, 2), "A3": 0}
    paths = path_probabilities(net, probs)
    for e in ("E1", "E2", "E3"):
        assert paths[ev_sink(e)] == Fraction(1, 3)
    assert paths[EMPTY_SINK] == 0


def test_equal_charge_single_ev():
    net = linear_chain(1)
    paths = path_probabilities(net, equal_charge_probabilities(net))
    assert paths[ev_sink("E1")] == 1
    assert paths[EMPTY_SINK] == 0


def test_equal_charge_split_sub_chains():
    net = two_chains(3, 2)
    assert equal_charge_probabilities(net)["R"] == Fraction(3, 5)


def test_equal_charge_from_estimates():
    net = linear_chain(2)
    lengths = {"A1": (LengthEstimate(1.1, 1), KNOWN_EV), "A2": (KNOWN_EMPTY, KNOWN_EV)}
    assert equal_charge_probabilities(net, lengths) == {"A1": Fraction(1, 2), "A2": 0}


@pytest.mark.parametrize("n", range(1, 7))
def test_equal_share_and_zero_waste(n):
    net = linear_chain(n)
    paths = path_probabilities(net, equal_charge_probabilities(net))
    for i in range(1, n + 1):
        assert paths[ev_sink(f"E{i}")] == Fraction(1, n)
    assert paths.get(EMPTY_SINK, 0) == 0


def test_ev_counts_skip_refused_evs():
    net = linear_chain(2)
    net.attempt_direct_ev("X")
    assert ev_counts(net) == {"A1": (1, 1), "A2": (0, 1)}


# -- priority ----------------------------------------------------------------------------


def test_priority_uniform_reduces_to_equal_charge():
    net = two_chains(3, 2)
    weights = {p.ev_id: 1 for _, p in net.evs()}
    assert priority_probabilities(net, weights) == equal_charge_probabilities(net)


def test_priority_three_to_one():
    net = linear_chain(2)
    probs = priority_probabilities(net, {"E1": 3, "E2": 1})
    paths = path_probabilities(net, probs)
    assert paths[ev_sink("E1")] == Fraction(3, 4)
    assert paths[ev_sink("E2")] == Fraction(1, 4)


def test_priority_share_is_weight_fraction():
    net = build(("A1", sub_chain(2, "B", "F"), ev("E1")))
    weights = {"E1": 2, "F1": 5, "F2": 1}
    paths = path_probabilities(net, priority_probabilities(net, weights))
    for e, w in weights.items():
        assert paths[ev_sink(e)] == Fraction(w, 8)


def test_zero_weight():
    with pytest.raises(ZeroWeight):
        priority_probabilities(linear_chain(2), {"E1": 1, "E2": 0})
    with pytest.raises(ZeroWeight):
        PriorityWeighted({"E1": 1, "E2": 0})
    with pytest.raises(ZeroWeight):
        priority_probabilities(linear_chain(2), {"E1": 1})


# -- steering and FCFS -------------------------------------------------------------------


def test_route_to_targets_one_ev():
    net = linear_chain(3)
    probs = route_to(net, "E2")
    assert probs == {"A1": 1, "A2": 0}
    paths = path_probabilities(net, {**probs, "A3": 0.5})
    assert paths[ev_sink("E2")] == 1


def test_fcfs_sequential_fill():
    # 3600 A for a one-second slot is one amp-hour per slot
    plan = fcfs_schedule(["E1", "E2"], {"E1": 2, "E2": 2}, supply=3600, tau=1)
    assert plan.quantum == 1
    assert plan.completion == {"E1": 2, "E2": 4}
    assert plan.allocation == ["E1", "E1", "E2", "E2"]


def test_fcfs_zero_demand_is_skipped():
    plan = fcfs_schedule(["E1", "E2"], {"E1": 0, "E2": 5}, supply=3600)
    assert plan.allocation[0] == "E2"
    assert plan.completion["E2"] == 5


def test_fcfs_rejects_bad_input():
    with pytest.raises(ValueError):
        fcfs_schedule(["E1"], {"E1": 1}, supply=0)
    with pytest.raises(ValueError):
        fcfs_schedule(["E1"], {"E1": -1}, supply=32)


@given(st.lists(st.floats(0, 20), min_size=1, max_size=8), st.floats(100, 5000))
def test_fcfs_never_serves_out_of_order(demands, supply):
    order = [f"E{i}" for i in range(len(demands))]
    plan = fcfs_schedule(order, dict(zip(order, demands)), supply)
    rank = {e: i for i, e in enumerate(order)}
    served = [rank[e] for e in plan.allocation]
    assert served == sorted(served)
    completions = [plan.completion[e] for e in order]
    assert completions == sorted(completions)
    for e, d in zip(order, demands):
        got = plan.allocation.count(e) * plan.quantum
        assert d <= got < d + plan.quantum + 1e-9


def test_fcfs_completion_follows_arrival():
    plan = fcfs_schedule(["E1", "E2", "E3"], {"E1": 3, "E2": 1, "E3": 2}, supply=3600)
    assert plan.completion == {"E1": 3, "E2": 4, "E3": 6}
