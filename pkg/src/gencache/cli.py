"""Command-line entry point: serve, bench, inspect, snapshot, restore."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .bench.datasets import FAMILIES
from .bench.runner import STRATEGIES, run_dataset, write_report
from .codegen import HttpChatBackend, CodegenConfig
from .config import ConfigError, ServiceConfig, load_config
from .embeddings import build_embedder
from .runtime import CacheRuntime, SnapshotError


def _build_runtime(cfg: ServiceConfig) -> CacheRuntime:
    codegen_backend = HttpChatBackend(cfg.backend_endpoint, cfg.backend_model) if cfg.backend_endpoint else _NoBackend()
    return CacheRuntime(
        embedder=build_embedder(cfg.embedder),
        codegen_backend=codegen_backend,
        validator_backend=codegen_backend,
        thresholds=cfg.thresholds,
        codegen=cfg.codegen,
        cache_config=cfg.cache,
        exec_limits=cfg.exec_limits,
        codegen_workers=cfg.codegen_workers,
    )


class _NoBackend:
    def complete(self, messages):
        from .codegen import BackendError

        raise BackendError("no backend endpoint configured")


def _cmd_serve(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config)
    except (OSError, ConfigError) as exc:
        print(f"cannot load config: {exc}", file=sys.stderr)
        return 1
    import uvicorn

    from .service import create_app

    runtime = _build_runtime(cfg)
    if os.path.exists(os.path.join(cfg.data_dir, "clusters.ndjson")):
        try:
            runtime.load_state(cfg.data_dir)
        except SnapshotError as exc:
            print(f"cannot restore state: {exc}", file=sys.stderr)
            return 1
    backend = (
        HttpChatBackend(cfg.backend_endpoint, cfg.backend_model)
        if cfg.backend_endpoint
        else _NoBackend()
    )
    app = create_app(runtime, backend)
    host, _, port = cfg.listen_addr.rpartition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port))
    runtime.save_state(cfg.data_dir)
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    try:
        report = run_dataset(args.dataset, args.strategy, args.n, args.seed, window=args.window)
    except ValueError as exc:
        print(f"bench failed: {exc}", file=sys.stderr)
        return 1
    write_report(report, args.report)
    print(
        f"{args.strategy} on {args.dataset} (n={args.n}, seed={args.seed}): "
        f"hit_rate={report.hit_rate:.2f}% "
        f"+ve={report.positive_hit_rate:.2f}% -ve={report.negative_hit_rate:.2f}% "
        f"codegen_calls={report.codegen_calls}"
    )
    print(f"report written to {args.report}")
    return 0


def _cmd_inspect(args: argparse.Namespace) -> int:
    clusters_path = os.path.join(args.data_dir, "clusters.ndjson")
    index_path = os.path.join(args.data_dir, "cache", "index")
    if not os.path.exists(clusters_path):
        print(f"no cluster database under {args.data_dir}", file=sys.stderr)
        return 1
    with open(clusters_path, "r", encoding="utf-8") as handle:
        records = [json.loads(line) for line in handle if line.strip()]
    print(f"clusters: {len(records)}")
    for record in records:
        print(
            f"  cluster {record['id']}: {len(record.get('exemplars', []))} exemplars, "
            f"sealed={record.get('sealed', False)}, has_cache={record.get('has_cache', False)}, "
            f"retries_used={record.get('retries_used', 0)}"
        )
    if os.path.exists(index_path):
        with open(index_path, "r", encoding="utf-8") as handle:
            entries = [json.loads(line) for line in handle if line.strip()]
        print(f"cache entries: {len(entries)}")
        for entry in entries:
            print(f"  cluster {entry['cluster_id']}: {entry['size']} bytes ({entry['file']})")
    else:
        print("cache entries: 0")
    return 0


def _state_runtime() -> CacheRuntime:
    # Snapshot handling only needs the default embedder and dummy backends.
    return CacheRuntime(
        embedder=build_embedder(ServiceConfig().embedder),
        codegen_backend=_NoBackend(),
        validator_backend=_NoBackend(),
        codegen=CodegenConfig(),
        codegen_workers=0,
    )


def _cmd_snapshot(args: argparse.Namespace) -> int:
    runtime = _state_runtime()
    try:
        runtime.load_state(args.data_dir)
    except SnapshotError as exc:
        print(f"cannot read state: {exc}", file=sys.stderr)
        return 1
    runtime.save_state(args.out)
    print(f"snapshot of {args.data_dir} written to {args.out}")
    return 0


def _cmd_restore(args: argparse.Namespace) -> int:
    runtime = _state_runtime()
    try:
        runtime.load_state(args.snapshot)
    except SnapshotError as exc:
        print(f"cannot read snapshot: {exc}", file=sys.stderr)
        return 1
    runtime.save_state(args.data_dir)
    print(f"state restored into {args.data_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gencache", description="generative LLM cache")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--config", required=True, help="path to the key-value config file")
    serve.set_defaults(func=_cmd_serve)

    bench = sub.add_parser("bench", help="run a benchmark strategy over a synthetic dataset")
    bench.add_argument("--dataset", required=True, choices=FAMILIES)
    bench.add_argument("--n", required=True, type=int)
    bench.add_argument("--strategy", required=True, choices=STRATEGIES)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--report", required=True, help="path for the JSON report")
    bench.add_argument("--window", type=int, default=100, help="ratio series window size")
    bench.set_defaults(func=_cmd_bench)

    inspect = sub.add_parser("inspect", help="dump the cluster database and cache index")
    inspect.add_argument("--data-dir", required=True)
    inspect.set_defaults(func=_cmd_inspect)

    snapshot = sub.add_parser("snapshot", help="copy persisted state into a snapshot directory")
    snapshot.add_argument("--data-dir", required=True)
    snapshot.add_argument("--out", required=True)
    snapshot.set_defaults(func=_cmd_snapshot)

    restore = sub.add_parser("restore", help="restore persisted state from a snapshot")
    restore.add_argument("--snapshot", required=True)
    restore.add_argument("--data-dir", required=True)
    restore.set_defaults(func=_cmd_restore)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
