"""Command-line front end: scenario generation, simulation, benchmarks.

Every result-bearing output file is byte-deterministic for fixed inputs,
seed and worker count; wall-clock measurements go to dedicated *timing*
files, which are the only outputs allowed to differ between reruns.

Exit codes: 0 ok, 2 input error, 3 routing/simulation infeasibility,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time as _time
from pathlib import Path

from .errors import (
    InternalInvariantError,
    MacroflowError,
    NetworkFormatError,
    QueryFormatError,
    RoutingError,
    ScenarioError,
    SimulationError,
    StoreError,
)
from .latency import BprLatency, LatencyModel, TabulatedLatency
from .network import load_network
from .optimize import OptimizerConfig, initial_assignment, metrics_csv, metrics_timing_csv, optimize
from .scenarios import ScenarioSpec, generate, load_queries
from .simulation import insert_routes_batch_parallel, simulate_full
from .version import __version__

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_INTERNAL = 4


def _config_hash(args: argparse.Namespace) -> str:
    payload = json.dumps({k: str(v) for k, v in sorted(vars(args).items()) if k != "func"}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _meta_comments(seed: int, config_hash: str) -> list[str]:
    return [f"engine: macroflow {__version__}", f"seed: {seed}", f"config_hash: {config_hash}"]


def _meta_obj(seed: int, config_hash: str) -> dict:
    return {"engine": f"macroflow {__version__}", "seed": seed, "config_hash": config_hash}


def _write(out_dir: Path, name: str, content: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / name).write_text(content, encoding="utf-8")


def _load_inputs(args: argparse.Namespace):
    network = load_network(Path(args.network).read_text(encoding="utf-8"))
    queries = load_queries(Path(args.queries).read_text(encoding="utf-8"))
    return network, queries


def _latency_model(args: argparse.Namespace) -> LatencyModel:
    if args.table_max_flow == 0:
        return BprLatency()
    return TabulatedLatency(args.table_max_flow)


def _routes_csv(store, comments: list[str]) -> str:
    lines = [f"# {c}" for c in comments]
    lines.append("route_id,hop,vertex,arrive_ms")
    for rid in sorted(store.routes):
        route = store.routes[rid]
        for hop, (v, t) in enumerate(zip(route.vertices, route.times)):
            lines.append(f"{rid},{hop},{v},{t}")
    return "\n".join(lines) + "\n"


def cmd_gen(args: argparse.Namespace) -> int:
    spec = ScenarioSpec(
        kind=args.kind,
        rows=args.rows,
        cols=args.cols,
        query_count=args.queries,
        od=args.od,
        depart_window_ms=args.window,
        seed=args.seed,
        length_range_m=(args.length, args.length),
        speed_mps=args.speed,
        capacity_range=(args.capacity, args.capacity),
        corridor_hops=args.corridor_hops,
        bottleneck_capacity=args.bottleneck_capacity,
    )
    network_csv, queries_csv = generate(spec)
    out = Path(args.out)
    _write(out, "network.csv", network_csv)
    _write(out, "queries.csv", queries_csv)
    print(f"wrote {out / 'network.csv'} and {out / 'queries.csv'}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    network, queries = _load_inputs(args)
    latency = _latency_model(args)
    start = _time.perf_counter()
    paths = initial_assignment(network, latency, queries)
    store, result = simulate_full(network, latency, paths)
    wall_ms = (_time.perf_counter() - start) * 1000.0
    chash = _config_hash(args)
    out = Path(args.out)
    _write(out, "routes.csv", _routes_csv(store, _meta_comments(args.seed, chash)))
    summary = {
        "meta": _meta_obj(args.seed, chash),
        "total_travel_ms": result.total_ms,
        "vehicle_count": len(store.routes),
        "state_signature": store.state_signature(),
    }
    _write(out, "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _write(out, "timing.json", json.dumps({"wall_ms": round(wall_ms, 3)}) + "\n")
    print(f"simulated {len(store.routes)} routes: total travel {result.total_ms} ms ({wall_ms:.1f} ms wall)")
    return EXIT_OK


def cmd_update_bench(args: argparse.Namespace) -> int:
    network, queries = _load_inputs(args)
    latency = _latency_model(args)
    stored_sizes = [int(x) for x in args.stored.split(",") if x]
    update_sizes = [int(x) for x in args.updates.split(",") if x]
    if not stored_sizes or not update_sizes:
        raise ScenarioError("need at least one stored size and one update size")
    need = max(stored_sizes) + max(update_sizes)
    if need > len(queries):
        raise ScenarioError(f"query pool has {len(queries)} entries, grid needs {need}")
    chash = _config_hash(args)
    rows = ["stored,updates,incremental_signature,full_signature,match"]
    timing_rows = ["stored,updates,incremental_ms,full_ms,speedup"]
    for stored_n in stored_sizes:
        base_paths = initial_assignment(network, latency, queries[:stored_n])
        for update_n in update_sizes:
            batch_queries = queries[stored_n : stored_n + update_n]
            batch_paths = initial_assignment(network, latency, batch_queries)
            store, _ = simulate_full(network, latency, base_paths)
            t0 = _time.perf_counter()
            insert_routes_batch_parallel(store, network, latency, batch_paths, args.workers)
            inc_ms = (_time.perf_counter() - t0) * 1000.0
            inc_sig = store.state_signature()
            del store
            t0 = _time.perf_counter()
            full_store, _ = simulate_full(network, latency, base_paths + batch_paths)
            full_ms = (_time.perf_counter() - t0) * 1000.0
            full_sig = full_store.state_signature()
            del full_store
            match = inc_sig == full_sig
            rows.append(f"{stored_n},{update_n},{inc_sig},{full_sig},{int(match)}")
            speedup = full_ms / inc_ms if inc_ms > 0 else float("inf")
            timing_rows.append(f"{stored_n},{update_n},{inc_ms:.3f},{full_ms:.3f},{speedup:.2f}")
            print(
                f"stored={stored_n} updates={update_n}: incremental {inc_ms:.1f} ms, "
                f"full {full_ms:.1f} ms, speedup {speedup:.2f}x, match={match}"
            )
            if not match:
                raise InternalInvariantError(
                    f"incremental and full stores diverge at stored={stored_n} updates={update_n}"
                )
    comments = [f"# {c}" for c in _meta_comments(args.seed, chash)]
    out = Path(args.out)
    _write(out, "bench.csv", "\n".join(comments + rows) + "\n")
    _write(out, "bench_timing.csv", "\n".join(comments + timing_rows) + "\n")
    return EXIT_OK


def cmd_optimize(args: argparse.Namespace) -> int:
    network, queries = _load_inputs(args)
    latency = _latency_model(args)
    config = OptimizerConfig(
        strategy=args.strategy,
        fraction=args.fraction,
        iterations=args.iterations,
        seed=args.seed,
        congestion_threshold=args.threshold,
        workers=args.workers,
    )
    try:
        config.validate()
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    result, store = optimize(network, latency, queries, config)
    chash = _config_hash(args)
    comments = _meta_comments(args.seed, chash)
    prefixed = [f"# {c}" for c in comments]
    out = Path(args.out)
    _write(out, "trace.csv", "\n".join(prefixed) + "\n" + metrics_csv(result.metrics))
    _write(out, "trace_timing.csv", "\n".join(prefixed) + "\n" + metrics_timing_csv(result.metrics))
    _write(out, "final_routes.csv", _routes_csv(store, comments))

    best_paths = [(rid, path, dep) for rid, (path, dep) in sorted(result.best_routes.items())]
    best_store, best_sim = simulate_full(network, latency, best_paths)
    if best_sim.total_ms != result.best_total_ms:
        raise InternalInvariantError(
            f"best route set re-simulates to {best_sim.total_ms} ms, recorded {result.best_total_ms}"
        )
    _write(out, "best_routes.csv", _routes_csv(best_store, comments))
    payload = {
        "meta": _meta_obj(args.seed, chash),
        "strategy": config.strategy,
        "fraction": config.fraction,
        "iterations": config.iterations,
        "selfish_total_ms": result.metrics[0].total_ms,
        "final_total_ms": result.final_total_ms,
        "best_total_ms": result.best_total_ms,
        "best_iteration": result.best_iteration,
        "trace": [
            {
                "iter": m.iteration,
                "total_ms": m.total_ms,
                "reroutes": m.reroutes,
                "improved": m.improved,
                "affected_edges": m.affected_edges,
            }
            for m in result.metrics
        ],
    }
    _write(out, "metrics.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(
        f"optimize[{config.strategy}, p={config.fraction}]: selfish {result.metrics[0].total_ms} ms"
        f" -> best {result.best_total_ms} ms (iteration {result.best_iteration})"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="macroflow", description=__doc__)
    parser.add_argument("--version", action="version", version=f"macroflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a deterministic scenario")
    gen.add_argument("--kind", required=True, choices=["grid", "bottleneck_grid", "two_corridor", "fig3_pattern"])
    gen.add_argument("--rows", type=int, default=8)
    gen.add_argument("--cols", type=int, default=8)
    gen.add_argument("--queries", type=int, default=100)
    gen.add_argument("--od", default="uniform", choices=["uniform", "hotspot"])
    gen.add_argument("--window", type=int, default=300_000, help="departure window in ms")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--length", type=int, default=300, help="edge length in meters")
    gen.add_argument("--speed", type=float, default=15.0, help="speed limit in m/s")
    gen.add_argument("--capacity", type=int, default=40)
    gen.add_argument("--corridor-hops", type=int, default=3)
    gen.add_argument("--bottleneck-capacity", type=int, default=8)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_gen)

    sim = sub.add_parser("simulate", help="route all queries selfishly and simulate")
    sim.add_argument("--network", required=True)
    sim.add_argument("--queries", required=True)
    sim.add_argument("--out", required=True)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument("--table-max-flow", type=int, default=1024)
    sim.set_defaults(func=cmd_simulate)

    bench = sub.add_parser("update-bench", help="incremental vs full re-simulation grid")
    bench.add_argument("--network", required=True)
    bench.add_argument("--queries", required=True)
    bench.add_argument("--out", required=True)
    bench.add_argument("--stored", required=True, help="comma list of stored-route counts")
    bench.add_argument("--updates", required=True, help="comma list of update batch sizes")
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--workers", type=int, default=1)
    bench.add_argument("--table-max-flow", type=int, default=1024)
    bench.set_defaults(func=cmd_update_bench)

    opt = sub.add_parser("optimize", help="iterative global re-routing")
    opt.add_argument("--network", required=True)
    opt.add_argument("--queries", required=True)
    opt.add_argument("--out", required=True)
    opt.add_argument("--strategy", default="congestion", choices=["random", "latency", "path", "congestion"])
    opt.add_argument("--fraction", type=float, default=0.10)
    opt.add_argument("--iterations", type=int, default=10)
    opt.add_argument("--threshold", type=float, default=0.9)
    opt.add_argument("--seed", type=int, default=0)
    opt.add_argument("--workers", type=int, default=1)
    opt.add_argument("--table-max-flow", type=int, default=1024)
    opt.set_defaults(func=cmd_optimize)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (NetworkFormatError, QueryFormatError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FileNotFoundError, IsADirectoryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InternalInvariantError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (RoutingError, SimulationError, StoreError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except MacroflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
