"""``care-rag`` command line: index, run, eval, repair, sweep, cache.

Exit codes: 0 success, 2 usage or configuration error, 3 partial failure.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from dataclasses import replace
from pathlib import Path

from .cache import DiskCache
from .config import RunConfig, load_config
from .data import load_dataset, read_jsonl
from .errors import CareRagError, ConfigError
from .evaluation import SweepSpec, evaluate_run, run_sweep
from .repair import repair_dataset
from .retrieval import INDEX_FILE, build_index, read_corpus
from .runner import MANIFEST_FILE, TRACES_FILE, Manifest, build_backends, build_retriever, run_batch, write_traces

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL = 0, 2, 3


class UsageError(Exception):
    pass


def _err(msg: str) -> int:
    print(f"care-rag: error: {msg}", file=sys.stderr)
    return EXIT_USAGE


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="run configuration (JSON) or a run manifest")
    p.add_argument("--out", help="output directory or file")
    p.add_argument("--seed", type=int)
    p.add_argument("--concurrency", type=int)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--strict", dest="strict", action="store_true", default=None)
    mode.add_argument("--lenient", dest="strict", action="store_false")
    cache = p.add_mutually_exclusive_group()
    cache.add_argument("--cache", dest="cache", action="store_true", default=None)
    cache.add_argument("--no-cache", dest="cache", action="store_false")
    return p


def _load_config(args, required: bool = True) -> RunConfig | None:
    if not args.config:
        if required:
            raise ConfigError("--config is required")
        return None
    config = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.concurrency is not None:
        changes["concurrency"] = args.concurrency
    if args.strict is not None:
        changes["strict"] = args.strict
    if args.cache is not None:
        changes["cache_enabled"] = args.cache
    return replace(config, **changes) if changes else config


def cmd_index(args) -> int:
    if not args.out:
        return _err("--out (index directory) is required")
    corpus = Path(args.corpus)
    if not corpus.is_file():
        return _err(f"corpus not found: {corpus}")
    out = Path(args.out)
    if (out / INDEX_FILE).exists() and not args.force:
        return _err(f"index already exists at {out}; pass --force to rebuild")
    try:
        index = build_index(read_corpus(corpus))
    except (CareRagError, OSError) as exc:
        return _err(str(exc))
    index.save(out)
    print(json.dumps(index.stats.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        config = _load_config(args)
        if not args.out:
            raise ConfigError("--out is required")
        dataset = load_dataset(args.dataset)
        backends = build_backends(config)
        retriever = build_retriever(config)
    except FileNotFoundError as exc:
        return _err(f"file not found: {exc.filename}")
    except (CareRagError, OSError, json.JSONDecodeError) as exc:
        return _err(str(exc))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest("run", config, dataset_path=args.dataset)
    traces = run_batch(dataset, config, backends, retriever)
    write_traces(out / TRACES_FILE, traces)
    failed = sum(t.failed for t in traces)
    manifest.extra["counts"] = {"instances": len(traces), "failed": failed}
    manifest.finish()
    manifest.write(out / MANIFEST_FILE)
    print(json.dumps({"instances": len(traces), "failed": failed, "traces": str(out / TRACES_FILE)}))
    if failed:
        print(f"care-rag: {failed} of {len(traces)} instances failed", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        dataset = load_dataset(args.dataset)
        traces = list(read_jsonl(args.traces))
        result = evaluate_run(traces, dataset, args.use_repaired, dataset_id=os.path.basename(args.dataset))
    except FileNotFoundError as exc:
        return _err(f"file not found: {exc.filename}")
    except (CareRagError, OSError, json.JSONDecodeError, KeyError) as exc:
        return _err(str(exc))
    if args.out:
        result.write(args.out)
    print(json.dumps(result.summary(), sort_keys=True))
    return EXIT_OK


def cmd_repair(args) -> int:
    try:
        config = _load_config(args)
        if not args.out:
            raise ConfigError("--out is required")
        if not os.path.isfile(args.input):
            raise ConfigError(f"dataset not found: {args.input}")
        backends = build_backends(config)
        retriever = build_retriever(config) if args.with_context else None
    except (CareRagError, OSError) as exc:
        return _err(str(exc))
    reference_date = args.reference_date or config.reference_date
    manifest = Manifest("repair", config, dataset_path=args.input)
    try:
        report = repair_dataset(
            args.input, args.out, backends.generator, args.sample_limit,
            seed=config.seed, strict=config.strict, reference_date=reference_date,
            retriever=retriever, k=config.k, concurrency=config.concurrency,
        )
    except (CareRagError, OSError, json.JSONDecodeError) as exc:
        return _err(str(exc))
    manifest.extra["report"] = report.to_dict()
    manifest.extra["repair"] = {"reference_date": reference_date, "sample_limit": args.sample_limit}
    manifest.finish()
    manifest.write(f"{args.out}.manifest.json")
    print(json.dumps(report.to_dict(), sort_keys=True))
    return EXIT_PARTIAL if report.errors else EXIT_OK


def cmd_sweep(args) -> int:
    try:
        config = _load_config(args)
        if not args.out:
            raise ConfigError("--out is required")
        with open(args.spec, encoding="utf-8") as fh:
            spec = SweepSpec.from_dict(json.load(fh), config)
        dataset = load_dataset(args.dataset)
        backends = build_backends(config)
        retriever = build_retriever(config)
    except FileNotFoundError as exc:
        return _err(f"file not found: {exc.filename}")
    except (CareRagError, OSError, json.JSONDecodeError) as exc:
        return _err(str(exc))
    manifest = Manifest("sweep", config, dataset_path=args.dataset)
    rows = run_sweep(spec, dataset, backends, retriever, use_repaired=not args.original_answers,
                     dataset_id=os.path.basename(args.dataset), out_dir=args.out)
    manifest.extra["sweep"] = {"parameter": spec.parameter, "values": list(spec.values)}
    manifest.extra["new_backend_calls"] = backends.generator.call_log.count(from_cache=False) + (
        backends.detector.call_log.count(from_cache=False) if backends.detector else 0)
    manifest.finish()
    manifest.write(Path(args.out) / MANIFEST_FILE)
    for r in rows:
        print(json.dumps(r.to_dict(), sort_keys=True))
    failed_values = sum(r.error is not None or (r.result is not None and r.result.failed > 0) for r in rows)
    return EXIT_PARTIAL if failed_values else EXIT_OK


def cmd_cache(args) -> int:
    root = args.dir
    if root is None:
        try:
            config = _load_config(args, required=False)
        except CareRagError as exc:
            return _err(str(exc))
        if config is None:
            return _err("pass --dir or --config to locate the cache")
        root = config.cache_dir
    cache = DiskCache(root)
    if args.action == "stats":
        print(json.dumps({"dir": str(root), **cache.stats().to_dict()}, sort_keys=True))
    elif args.action == "gc":
        removed = cache.gc(args.older_than_days)
        print(json.dumps({"dir": str(root), "removed": removed, **cache.stats().to_dict()}, sort_keys=True))
    elif args.action == "clear":
        if Path(root).is_dir():
            shutil.rmtree(root)
        print(json.dumps({"dir": str(root), "cleared": True}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="care-rag", description=__doc__.splitlines()[0])
    glob = _global_flags()
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", parents=[glob], help="build a BM25 index from a JSONL corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--force", action="store_true", help="overwrite an existing index")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("run", parents=[glob], help="run the pipeline over a dataset")
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", parents=[glob], help="score traces with EM/F1")
    p.add_argument("--traces", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--use-repaired", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("repair", parents=[glob], help="flag and repair gold answers")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--reference-date", help="ISO date the repaired answers are valid for")
    p.add_argument("--sample-limit", type=int)
    p.add_argument("--with-context", action="store_true", help="show retrieved passages to the classifier")
    p.set_defaults(func=cmd_repair)

    p = sub.add_parser("sweep", parents=[glob], help="evaluate over a list of k, n or ablation values")
    p.add_argument("--spec", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--original-answers", action="store_true", help="score against unrepaired gold answers")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("cache", parents=[glob], help="inspect or prune the completion cache")
    p.add_argument("action", choices=("stats", "gc", "clear"))
    p.add_argument("--dir")
    p.add_argument("--older-than-days", type=float)
    p.set_defaults(func=cmd_cache)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
