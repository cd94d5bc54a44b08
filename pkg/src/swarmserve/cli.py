"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or missing flag, 2 runtime failure.
Every output file is written to a temporary sibling and renamed into place.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .attention import equivalence_sweep
from .core import Rng
from .engine import (
    comparison_csv,
    compare_modes,
    ledger_csv,
    load_scenario,
    report_csv,
    report_json,
    run_scenario,
    trace_csv,
)
from .errors import ConfigError, SimError
from .optimizer import Nsga2Config
from .routing import (
    Chain,
    brute_force_pareto,
    chain_objectives,
    decode_chain,
    knee_index,
    max_throughput_chain,
    pareto_chains,
    shortest_chain,
)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
ROUTE_MODES = ("min_latency", "max_throughput", "latency_throughput_tradeoff")
ROUTE_COLUMNS = ["chain_id", "segments", "f1_latency_ms", "f2_throughput_blocks_per_ms"]
PARETO_COLUMNS = ROUTE_COLUMNS + ["knee"]
ATTN_TOLERANCE = 1e-9


class UsageError(Exception):
    """Bad command line; reported with exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from None
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _num(v: float) -> str:
    return repr(round(float(v), 9))


def front_rows(rows: Sequence[tuple[Chain | str, float, float]]) -> list[dict]:
    """Sort (chain, f1, f2) rows by f1 and mark the knee point."""
    ordered = sorted(rows, key=lambda r: (r[1], r[2], str(r[0])))
    knee = knee_index([(r[1], r[2]) for r in ordered]) if ordered else -1
    return [
        {
            "chain_id": i,
            "segments": str(chain),
            "f1_latency_ms": _num(f1),
            "f2_throughput_blocks_per_ms": _num(f2),
            "knee": "true" if i == knee else "false",
        }
        for i, (chain, f1, f2) in enumerate(ordered)
    ]


def _csv_text(columns: Sequence[str], rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def emit_pareto_csv(front: Sequence[tuple[Chain | str, float, float]], path: str | Path) -> None:
    """Write a front as CSV sorted by f1; f2 is the negated throughput (minimization form)."""
    if not front:
        raise SimError("cannot emit an empty front")
    write_atomic(path, _csv_text(PARETO_COLUMNS, front_rows(front)))


def _seed(args) -> Optional[int]:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("SIM_SEED")
    if env is None or env == "":
        return None
    try:
        return int(env)
    except ValueError:
        raise ConfigError("SIM_SEED", f"expected an integer, got {env!r}") from None


def _nsga_config(args, seed: int) -> Nsga2Config:
    try:
        return Nsga2Config(population_size=args.pop, generations=args.generations, seed=seed)
    except (SimError, ValueError) as exc:
        raise ConfigError("--pop" if "population" in str(exc) else "--generations", str(exc)) from None


def _topology(args):
    scenario = load_scenario(args.scenario)
    if scenario.topology is None:
        raise ConfigError("servers", "scenario has no swarm topology (num_blocks and servers)")
    return scenario, scenario.topology


# -- subcommands -------------------------------------------------------------


def cmd_route(args) -> int:
    scenario, topo = _topology(args)
    seed = _seed(args)
    seed = scenario.seed if seed is None else seed
    if args.mode == "latency_throughput_tradeoff":
        entries = pareto_chains(topo, _nsga_config(args, seed))
        rows = [(e.chain, e.f1, e.f2) for e in entries]
        for row in front_rows(rows):
            print(f"{row['segments']}\t{row['f1_latency_ms']}\t{row['f2_throughput_blocks_per_ms']}\tknee={row['knee']}")
        if args.out:
            emit_pareto_csv(rows, args.out)
        return EXIT_OK
    chain, _ = shortest_chain(topo) if args.mode == "min_latency" else max_throughput_chain(topo)
    total = chain.total_ms(topo)
    f1, f2 = chain_objectives(chain, topo)
    print(f"{chain}\ttotal_ms={_num(total)}")
    if args.out:
        row = {"chain_id": 0, "segments": str(chain), "f1_latency_ms": _num(f1), "f2_throughput_blocks_per_ms": _num(f2)}
        write_atomic(args.out, _csv_text(ROUTE_COLUMNS, [row]))
    return EXIT_OK


def cmd_pareto(args) -> int:
    scenario, topo = _topology(args)
    seed = _seed(args)
    seed = scenario.seed if seed is None else seed
    entries = pareto_chains(topo, _nsga_config(args, seed))
    rows = [(e.chain, e.f1, e.f2) for e in entries]
    text = _csv_text(PARETO_COLUMNS, front_rows(rows))
    if args.out:
        emit_pareto_csv(rows, args.out)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_oracle(args) -> int:
    _, topo = _topology(args)
    seen = {}
    for entry in brute_force_pareto(topo):
        key = (entry.f1, entry.f2)
        if key not in seen:
            seen[key] = decode_chain(entry.genome, topo)
    rows = [(chain, f1, f2) for (f1, f2), chain in seen.items()]
    text = _csv_text(PARETO_COLUMNS, front_rows(rows))
    if args.out:
        emit_pareto_csv(rows, args.out)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _apply_seed(scenario, args):
    seed = _seed(args)
    return scenario if seed is None else replace(scenario, seed=seed)


def cmd_serve_sim(args) -> int:
    scenario = _apply_seed(load_scenario(args.scenario), args)
    if args.mode:
        scenario = scenario.with_mode(args.mode)
    result = run_scenario(scenario)
    report = result.report
    text = report_json(report) if args.out and args.out.endswith(".json") else report_csv([report])
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    if args.trace:
        write_atomic(args.trace, trace_csv(result.trace))
    if args.ledger:
        write_atomic(args.ledger, ledger_csv(result.ledger_rows))
    print(
        f"{report.mode}: {report.completed}/{report.num_requests} completed, "
        f"mean {report.mean_norm_latency_ms_per_tok:.4f} ms/token",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_compare(args) -> int:
    scenario = _apply_seed(load_scenario(args.scenario), args)
    modes = [m for m in (args.mode or "iteration,batch").split(",") if m]
    table = compare_modes(scenario, modes)
    text = comparison_csv(table)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_attn_check(args) -> int:
    seed = _seed(args)
    stats = equivalence_sweep(Rng(0 if seed is None else seed).stream("attn-check"), instances=args.instances)
    ok = stats["max_err_paged"] <= ATTN_TOLERANCE and stats["max_err_micro"] <= ATTN_TOLERANCE
    stats = dict(stats, tolerance=ATTN_TOLERANCE, passed=ok)
    text = json.dumps(stats, indent=2, sort_keys=True) + "\n"
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if ok else EXIT_RUNTIME


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="swarmserve", description="Distributed LLM serving simulator.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    seed_help = "random seed (default: $SIM_SEED, then the scenario's seed)"

    def nsga_flags(sp):
        sp.add_argument("--generations", type=int, default=200, help="NSGA-II generations (default 200)")
        sp.add_argument("--pop", type=int, default=100, help="NSGA-II population size, even and >= 4 (default 100)")

    r = sub.add_parser("route", help="build a serving chain over the swarm")
    r.add_argument("--scenario", required=True, help="scenario JSON with num_blocks and servers")
    r.add_argument("--mode", required=True, choices=ROUTE_MODES, help="routing objective")
    r.add_argument("--seed", type=int, help=seed_help)
    r.add_argument("--out", help="CSV file for the chain(s)")
    nsga_flags(r)
    r.set_defaults(func=cmd_route)

    pa = sub.add_parser("pareto", help="NSGA-II latency/throughput front as CSV")
    pa.add_argument("--scenario", required=True, help="scenario JSON with num_blocks and servers")
    pa.add_argument("--seed", type=int, help=seed_help)
    pa.add_argument("--out", help="CSV file (default: stdout)")
    nsga_flags(pa)
    pa.set_defaults(func=cmd_pareto)

    s = sub.add_parser("serve-sim", help="simulate serving one scenario")
    s.add_argument("--scenario", required=True, help="scenario JSON")
    s.add_argument("--seed", type=int, help=seed_help)
    s.add_argument("--mode", help="override policy words joined by '+', e.g. batch+contiguous")
    s.add_argument("--out", help="report file; .json gives JSON, anything else CSV (default: CSV on stdout)")
    s.add_argument("--trace", help="per-iteration trace CSV")
    s.add_argument("--ledger", help="final debt-ledger snapshot CSV (distmem runs)")
    s.set_defaults(func=cmd_serve_sim)

    c = sub.add_parser("compare", help="run one scenario under several modes")
    c.add_argument("--scenario", required=True, help="scenario JSON")
    c.add_argument("--seed", type=int, help=seed_help)
    c.add_argument("--mode", help="comma-separated modes, first is the baseline (default iteration,batch)")
    c.add_argument("--out", help="comparison CSV (default: stdout)")
    c.set_defaults(func=cmd_compare)

    a = sub.add_parser("attn-check", help="check paged and micro attention against dense attention")
    a.add_argument("--seed", type=int, help="random seed (default: $SIM_SEED, then 0)")
    a.add_argument("--instances", type=int, default=1000, help="random instances to test (default 1000)")
    a.add_argument("--out", help="JSON summary file (default: stdout)")
    a.set_defaults(func=cmd_attn_check)

    o = sub.add_parser("oracle", help="exact Pareto front by exhaustive enumeration (small swarms)")
    o.add_argument("--scenario", required=True, help="scenario JSON with num_blocks and servers")
    o.add_argument("--seed", type=int, help="accepted for symmetry; enumeration is not random")
    o.add_argument("--out", help="CSV file (default: stdout)")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc.path}: {exc.message}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (SimError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
