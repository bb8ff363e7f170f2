"""Command-line pipeline: ingest, embed, pool, classify, eval, compare,
ablate.

Each run is driven by a single config (file plus flag overrides); the
merged effective config is dumped next to the outputs and its hash stamps
every artifact. With a mock endpoint the whole pipeline is deterministic:
re-running an unchanged config overwrites byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path
from typing import Optional

from .config import RunConfig
from .corpus import (
    ContentItem,
    DatasetError,
    LabelMapping,
    load_dataset,
    write_dataset,
)
from .coverage import CandidatePool, CoverageError, build_candidate_pool, order_for_query
from .embedding import EmbeddingCache, EmbeddingError, embed_item, embed_many, load_provider
from .evaluation import EvaluationError, mcnemar, score
from .llm import ChatCompletionsClient, LLMConfig, PredictionRecord, classify_batch, mock_from_spec
from .prompting import FIELD_GRID, FieldConfig, PromptError, render
from .selection import DemonstrationSet, SelectionError, balanced_select, random_select

K_GRID = (0, 4, 8, 12)

ORDER_MODES = {"set-bsr": "set_bsr_greedy", "bsr": "independent_bsr"}


class CliError(Exception):
    """Fatal condition with a user-facing message."""


def derive_seed(master_seed: int, tag: str) -> int:
    """Stable per-item seed derived from the master seed and a tag."""
    digest = hashlib.sha256(f"{master_seed}:{tag}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def _write_jsonl(path: Path, header: Optional[dict], rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _read_predictions(path) -> tuple[dict, list[PredictionRecord]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise CliError(f"{path}: empty predictions file")
    header = json.loads(lines[0])
    if header.get("kind") != "predictions":
        raise CliError(f"{path}: missing predictions header line")
    records = [PredictionRecord.from_json_dict(json.loads(line)) for line in lines[1:]]
    hashes = {r.config_hash for r in records} | {header.get("config_hash")}
    if len(hashes) != 1:
        raise CliError(f"{path}: mixed config hashes in predictions: {sorted(map(str, hashes))}")
    return header, records


def _require(cfg: RunConfig, **fields) -> None:
    for name, label in fields.items():
        if not getattr(cfg, name):
            raise CliError(f"missing required config value: {label}")


def _llm_config(cfg: RunConfig) -> LLMConfig:
    return LLMConfig(
        model_name=cfg.model_name,
        temperature=cfg.temperature,
        max_in_flight=cfg.max_in_flight,
        max_retries=cfg.max_retries,
        timeout=cfg.timeout,
        char_budget=cfg.char_budget,
        chat_turns=cfg.chat_turns,
    )


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump_effective_config(cfg: RunConfig, out: Path) -> None:
    payload = dict(cfg.to_json_dict(), config_hash=cfg.config_hash)
    (out / "effective_config.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def cmd_ingest(cfg: RunConfig) -> int:
    _require(cfg, dataset="--dataset")
    out = _out_dir(cfg)
    scheme = LabelMapping.for_scheme(cfg.label_scheme)
    items = load_dataset(cfg.dataset, scheme)
    write_dataset(items, out / "ingested.jsonl")
    counts = {"liberal": 0, "neutral": 0, "conservative": 0, "unlabeled": 0}
    for item in items:
        counts[item.label.wire if item.label is not None else "unlabeled"] += 1
    summary = {"config_hash": cfg.config_hash, "n_items": len(items), "label_counts": counts}
    (out / "ingest_summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    _dump_effective_config(cfg, out)
    print(f"ingested {len(items)} items -> {out / 'ingested.jsonl'} ({counts})")
    return 0


def cmd_embed(cfg: RunConfig) -> int:
    _require(cfg, dataset="--dataset", cache_dir="--cache-dir")
    scheme = LabelMapping.for_scheme(cfg.label_scheme)
    items = load_dataset(cfg.dataset, scheme)
    provider = load_provider(cfg.embed_provider, cfg.embed_dim)
    cache = EmbeddingCache(cfg.cache_dir)
    fields = FieldConfig.from_key(cfg.fields)
    embed_many(items, fields, provider, cache)
    print(f"embedded {len(items)} items into cache {cfg.cache_dir}")
    return 0


def cmd_pool(cfg: RunConfig) -> int:
    _require(cfg, train_dataset="--train-dataset")
    out = _out_dir(cfg)
    scheme = LabelMapping.for_scheme(cfg.label_scheme)
    train = load_dataset(cfg.train_dataset, scheme)
    provider = load_provider(cfg.embed_provider, cfg.embed_dim)
    cache = EmbeddingCache(cfg.cache_dir) if cfg.cache_dir else None
    fields = FieldConfig.from_key(cfg.fields)
    embeddings = embed_many(train, fields, provider, cache)
    n = cfg.pool_size or len(train)
    pool = build_candidate_pool(train, embeddings, n, probe_size=cfg.probe_size, seed=cfg.seed)
    pool_path = out / "pool.jsonl"
    pool.save(pool_path, extra_header={"config_hash": cfg.config_hash})
    _dump_effective_config(cfg, out)
    print(f"built pool of {len(pool)} candidates -> {pool_path}")
    return 0


def _resolve_pool_path(cfg: RunConfig, out: Path) -> Path:
    return Path(cfg.pool_file) if cfg.pool_file else out / "pool.jsonl"


def run_classify(cfg: RunConfig, dump_prompts: bool = False) -> Path:
    """select -> prompt -> LLM (or mock) -> predictions; returns the
    predictions path."""
    _require(cfg, dataset="--dataset")
    out = _out_dir(cfg)
    config_hash = cfg.config_hash
    scheme = LabelMapping.for_scheme(cfg.label_scheme)
    test_items = load_dataset(cfg.dataset, scheme)
    fields = FieldConfig.from_key(cfg.fields)
    if cfg.order not in ORDER_MODES:
        raise CliError(f"--order must be one of {sorted(ORDER_MODES)}, got {cfg.order!r}")

    demo_items: dict[str, ContentItem] = {}
    pool = None
    pool_embeddings = {}
    provider = None
    cache = EmbeddingCache(cfg.cache_dir) if cfg.cache_dir else None
    if cfg.k > 0:
        _require(cfg, train_dataset="--train-dataset")
        train = load_dataset(cfg.train_dataset, scheme)
        demo_items = {item.id: item for item in train}
        pool_path = _resolve_pool_path(cfg, out)
        if not pool_path.exists():
            raise CliError(f"pool file not found: {pool_path} (run the pool subcommand first)")
        pool = CandidatePool.load(pool_path)
        missing = [i for i in pool.ids() if i not in demo_items]
        if missing:
            raise CliError(f"pool references ids missing from the training set, e.g. {missing[:3]}")
        provider = load_provider(cfg.embed_provider, cfg.embed_dim)
        pool_members = [demo_items[i] for i in pool.ids()]
        pool_embeddings = embed_many(pool_members, fields, provider, cache)

    tasks = []
    traces = []
    labels = pool.labels() if pool is not None else {}
    for item in test_items:
        if cfg.k == 0:
            demos = DemonstrationSet(query_id=item.id, members=[], k_requested=0)
        elif cfg.select == "random":
            demos = random_select(pool, cfg.k, derive_seed(cfg.seed, item.id), query_id=item.id)
        elif cfg.select == "balanced":
            query_emb = embed_item(item, fields, provider, cache)
            ordering = order_for_query(query_emb, pool, pool_embeddings, mode=ORDER_MODES[cfg.order])
            demos = balanced_select(ordering, labels, cfg.k)
        else:
            raise CliError(f"--select must be balanced or random, got {cfg.select!r}")
        prompt = render(item, demos, demo_items, fields, cot=cfg.cot)
        tasks.append((item.id, item.label, prompt))
        traces.append(demos.to_trace())

    llm_cfg = _llm_config(cfg)
    llm = mock_from_spec(cfg.mock) if cfg.mock else ChatCompletionsClient(llm_cfg)
    records = classify_batch(tasks, llm_cfg, llm, config_hash=config_hash)

    header = {"kind": "predictions", "config": cfg.hashed_dict(), "config_hash": config_hash}
    predictions_path = out / "predictions.jsonl"
    _write_jsonl(predictions_path, header, (r.to_json_dict() for r in records))

    traces.sort(key=lambda t: t["query_id"])
    trace_header = {"kind": "selection_trace", "config_hash": config_hash}
    _write_jsonl(out / "selection_trace.jsonl", trace_header, traces)

    if dump_prompts:
        prompt_rows = sorted(
            ({"query_id": qid, "prompt": prompt.text} for qid, _, prompt in tasks),
            key=lambda r: r["query_id"],
        )
        _write_jsonl(out / "prompts.jsonl", {"kind": "prompts", "config_hash": config_hash}, prompt_rows)

    _dump_effective_config(cfg, out)
    return predictions_path


def cmd_classify(cfg: RunConfig, dump_prompts: bool = False) -> int:
    path = run_classify(cfg, dump_prompts=dump_prompts)
    print(f"wrote predictions -> {path}")
    return 0


def run_eval(cfg: RunConfig, predictions_path) -> Path:
    header, records = _read_predictions(predictions_path)
    report = score(
        records,
        config=header.get("config", {}),
        bootstrap_resamples=cfg.bootstrap_resamples,
        seed=cfg.seed,
    )
    out = _out_dir(cfg)
    report_path = out / "report.json"
    report_path.write_text(
        json.dumps(report.to_json_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return report_path


def cmd_eval(cfg: RunConfig, predictions: Optional[str]) -> int:
    predictions_path = Path(predictions) if predictions else Path(cfg.out) / "predictions.jsonl"
    if not predictions_path.exists():
        raise CliError(f"predictions file not found: {predictions_path}")
    report_path = run_eval(cfg, predictions_path)
    report = json.loads(report_path.read_text(encoding="utf-8"))
    print(f"accuracy {report['accuracy']:.4f} (n={report['n']}) -> {report_path}")
    return 0


def cmd_compare(path_a: str, path_b: str, exact: bool, out: Optional[str]) -> int:
    header_a, records_a = _read_predictions(path_a)
    header_b, records_b = _read_predictions(path_b)
    result = mcnemar(records_a, records_b, method="exact" if exact else "chi2")
    payload = {
        "pair": [header_a.get("config_hash"), header_b.get("config_hash")],
        "statistic": result.statistic,
        "p": result.p,
        "b": result.b,
        "c": result.c,
        "stars": result.stars,
    }
    text = json.dumps(payload, sort_keys=True)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_ablate(cfg: RunConfig, dump_prompts: bool = False) -> int:
    """Sweep the k grid against the four field configurations."""
    base_out = _out_dir(cfg)
    pool_file = str(_resolve_pool_path(cfg, base_out))
    cells = []
    for k in K_GRID:
        for fields in FIELD_GRID:
            cell_cfg = dataclasses.replace(
                cfg, k=k, fields=fields, pool_file=pool_file, out=str(base_out / f"k{k}_{fields}")
            )
            predictions_path = run_classify(cell_cfg, dump_prompts=dump_prompts)
            report_path = run_eval(cell_cfg, predictions_path)
            report = json.loads(report_path.read_text(encoding="utf-8"))
            cells.append(
                {
                    "k": k,
                    "fields": fields,
                    "config_hash": report["config_hash"],
                    "accuracy": report["accuracy"],
                    "report": str(report_path),
                }
            )
            print(f"k={k:<3} fields={fields:<18} accuracy={report['accuracy']:.4f}")
    summary = {"config_hash": cfg.config_hash, "cells": cells}
    (base_out / "ablation_summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(f"wrote {len(cells)} reports under {base_out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ideolab",
        description="Coverage-based, label-balanced demonstration selection "
        "and evaluation pipeline for LLM ideology classification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--dataset", help="dataset JSONL to classify/ingest")
        p.add_argument("--train-dataset", dest="train_dataset", help="training dataset JSONL")
        p.add_argument("--label-scheme", dest="label_scheme", choices=("youtube_slant", "adfontes", "direct"))
        p.add_argument("--fields", choices=FIELD_GRID)
        p.add_argument("--k", type=int)
        p.add_argument("--select", choices=("balanced", "random"))
        p.add_argument("--order", choices=tuple(ORDER_MODES))
        p.add_argument("--pool-size", dest="pool_size", type=int)
        p.add_argument("--probe-size", dest="probe_size", type=int)
        p.add_argument("--pool-file", dest="pool_file", help="pool file (default <out>/pool.jsonl)")
        p.add_argument("--seed", type=int)
        p.add_argument("--cot", action="store_const", const=True, default=None)
        p.add_argument("--mock", help="echo_majority | nearest_demo | fixed:<label>")
        p.add_argument("--model", dest="model_name")
        p.add_argument("--embed-provider", dest="embed_provider", help="hashed | file:<path> | http(s)://<url>")
        p.add_argument("--embed-dim", dest="embed_dim", type=int)
        p.add_argument("--cache-dir", dest="cache_dir")
        p.add_argument("--source-map", dest="source_map")
        p.add_argument("--out")

    for name in ("ingest", "embed", "pool", "classify", "eval", "ablate"):
        p = sub.add_parser(name)
        add_common(p)
        if name in ("classify", "ablate"):
            p.add_argument("--dump-prompts", action="store_true")
        if name == "eval":
            p.add_argument("--predictions", help="predictions JSONL (default <out>/predictions.jsonl)")

    p = sub.add_parser("compare")
    p.add_argument("--a", required=True, help="first predictions JSONL")
    p.add_argument("--b", required=True, help="second predictions JSONL")
    p.add_argument("--exact", action="store_true", help="exact binomial test instead of chi-square")
    p.add_argument("--out", help="also write the result JSON here")
    return parser


_OVERRIDE_KEYS = (
    "dataset",
    "train_dataset",
    "label_scheme",
    "fields",
    "k",
    "select",
    "order",
    "pool_size",
    "probe_size",
    "pool_file",
    "seed",
    "cot",
    "mock",
    "model_name",
    "embed_provider",
    "embed_dim",
    "cache_dir",
    "source_map",
    "out",
)


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {key: getattr(args, key, None) for key in _OVERRIDE_KEYS}
    return cfg.merged(overrides)


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "compare":
            return cmd_compare(args.a, args.b, args.exact, args.out)
        cfg = _config_from_args(args)
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "embed":
            return cmd_embed(cfg)
        if args.command == "pool":
            return cmd_pool(cfg)
        if args.command == "classify":
            return cmd_classify(cfg, dump_prompts=args.dump_prompts)
        if args.command == "eval":
            return cmd_eval(cfg, args.predictions)
        if args.command == "ablate":
            return cmd_ablate(cfg, dump_prompts=getattr(args, "dump_prompts", False))
        raise CliError(f"unknown command: {args.command}")  # pragma: no cover
    except (
        CliError,
        DatasetError,
        CoverageError,
        EmbeddingError,
        EvaluationError,
        PromptError,
        SelectionError,
        ValueError,
        OSError,
    ) as exc:
        message = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
