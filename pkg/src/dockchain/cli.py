"""Command-line front end.

Exit codes: 0 success, 1 invalid input, 2 a reproduction fell outside its tolerance.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import experiments
from .errors import DockChainError, ParseError, SimulationError, ValidationError
from .scenario import load_scenario, shipped_scenario

EXIT_OK, EXIT_INVALID, EXIT_TOLERANCE = 0, 1, 2


def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, help="RNG seed (default: scenario seed or 0)")
    p.add_argument("--slots", type=int, help="slots per discovery phase")
    p.add_argument("--tau", type=float, help="slot duration in seconds")
    p.add_argument("--alpha", type=float, help="IIR smoothing factor for equal charge")
    p.add_argument("--threshold", type=float, help="current (A) above which a draw registers")
    p.add_argument("--noise-sigma", type=float, help="std dev (A) of measurement noise")
    p.add_argument("--cap", type=int, help="length reported for a saturated socket")
    p.add_argument("--out", help="output path")


def _overrides(args):
    return dict(
        seed=args.seed,
        slots=args.slots,
        tau=args.tau,
        alpha=args.alpha,
        threshold=args.threshold,
        noise_sigma=args.noise_sigma,
        cap=args.cap,
    )


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario).with_overrides(**_overrides(args))
    report = experiments.simulate(scenario)
    out = Path(args.out or "simulate_out")
    experiments.write_simulation(report, out)
    total = report.summary()["total_energy_ah"]
    print(f"{report.slots} slots, {len(report.energy)} EVs, {total:.3f} Ah delivered -> {out}/")
    return EXIT_OK


def cmd_discover(args) -> int:
    if args.scenario:
        scenario = load_scenario(args.scenario)
    else:
        scenario = experiments.measured_chain_scenario(args.chain)
    scenario = scenario.with_overrides(**_overrides(args))
    if args.trials > 1:
        rows = experiments.discovery_trials(scenario, args.trials, args.workers)
        result = [{"seed": s, "lengths": lengths} for s, lengths in rows]
    else:
        net, _ = experiments.build_network(scenario)
        found = experiments.run_discovery(net, scenario.discovery, scenario.seed, noise=scenario.noise, strict=False)
        result = {
            aid: {
                "valid_samples": d.stats.valid_samples,
                "activations": d.stats.activations,
                "socket_utilization": d.stats.socket_utilization,
                "estimates": [experiments._estimate_dict(e) for e in d.estimates],
            }
            for aid, d in found.adapters.items()
        }
        if args.trace:
            experiments.write_trace(found.trace(), args.trace)
    text = json.dumps(result, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_fig3(args) -> int:
    slots = args.slots or 2000
    t0 = time.perf_counter()
    res = experiments.fig3(slots, args.seed or 0)
    elapsed = time.perf_counter() - t0
    out = args.out or "fig3.csv"
    experiments.write_rows(out, experiments.FIG3_COLUMNS, res.rows)
    status = "within" if res.within else "OUTSIDE"
    print(
        f"final running average {res.final:.6f} vs {res.mu:.4f}: deviation {res.deviation:+.6f} "
        f"({status} +/-{res.tolerance:.6f}) in {elapsed:.2f}s -> {out}"
    )
    return EXIT_OK if res.within else EXIT_TOLERANCE


def cmd_table2(args) -> int:
    scenario = load_scenario(args.scenario) if args.scenario else shipped_scenario("table2.scenario")
    scenario = scenario.with_overrides(**_overrides(args))
    rows = experiments.table2(scenario)
    out = args.out or "table2.csv"
    experiments.write_rows(out, experiments.TABLE2_COLUMNS, [r.as_tuple() for r in rows])
    worst = max(r.abs_error for r in rows)
    for r in rows:
        print(f"{r.l0} | {r.l1} | {r.expected_p:.3f} | {r.simulated_p:.3f}")
    print(f"{len(rows)} rows, worst abs error {worst:.4f} -> {out}")
    return EXIT_OK if worst <= experiments.TABLE2_TOLERANCE else EXIT_TOLERANCE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dockchain", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="replay a scenario timeline")
    p.add_argument("scenario")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("discover", help="run one discovery phase and print length estimates")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("scenario", nargs="?")
    src.add_argument("--chain", type=int, help="measure a root adapter with this many adapters on socket 0")
    p.add_argument("--trace", help="write the per-slot trace CSV here")
    p.add_argument("--trials", type=int, default=1, help="independent seeds to run")
    p.add_argument("--workers", type=int, help="processes for --trials (default: CPU count)")
    _common(p)
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("fig3", help="socket-0 utilisation convergence for a 4-adapter chain")
    _common(p)
    p.set_defaults(func=cmd_fig3)

    p = sub.add_parser("table2", help="steady-state socket-0 probability for 21 chain-length pairs")
    p.add_argument("--scenario", help="sweep scenario (default: the shipped table2.scenario)")
    _common(p)
    p.set_defaults(func=cmd_table2)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValidationError, SimulationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (DockChainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
