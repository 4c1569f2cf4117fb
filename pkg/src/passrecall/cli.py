"""Command-line front end: build artifacts, run recalls, evaluate, sweep.

Exit codes: 0 success, 1 usage, 2 data error (unreadable or malformed
inputs, missing artifacts, unreachable endpoint), 3 internal inconsistency
(index and text disagree, which means a bug, not bad data).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

from . import __version__
from .corpus import Corpus, IngestError, load_corpus, load_jsonl_corpus, save_corpus
from .evaluation import (
    EvalItem,
    GoldFormatError,
    aggregate,
    evaluate_item,
    load_gold,
    report_json,
    report_table,
)
from .fmindex import BWTIndex, load_index, save_index
from .pipeline import (
    DeadEndError,
    InternalInconsistencyError,
    RecallConfig,
    RecallEngine,
    Reference,
)
from .scorer import (
    STAGE_ONE,
    STAGE_TWO,
    PromptTemplate,
    RemoteScorer,
    ScorerError,
    corpus_scorer,
    default_templates,
)
from .storage import StorageError
from .trie import TitleTrie, build_trie, load_trie, save_trie

logger = logging.getLogger(__name__)

ENDPOINT_ENV = "PASSRECALL_ENDPOINT"
MANIFEST_NAME = "manifest.json"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class DataError(RuntimeError):
    """Anything wrong with inputs or on-disk artifacts; maps to exit 2."""


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this project reserves 2 for data."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


# -- build -------------------------------------------------------------------


def cmd_build(args: argparse.Namespace) -> int:
    try:
        corpus = load_jsonl_corpus(args.corpus)
    except FileNotFoundError as exc:
        raise DataError(f"cannot read corpus: {exc}") from exc

    out_dir = args.out
    fm_dir = os.path.join(out_dir, "fm")
    os.makedirs(fm_dir, exist_ok=True)

    corpus_path = os.path.join(out_dir, "corpus.bin")
    save_corpus(corpus, corpus_path)
    trie = build_trie(corpus)
    trie_path = os.path.join(out_dir, "trie.bin")
    save_trie(trie, trie_path)

    index_files: dict[str, str] = {}
    total_bytes = 0
    for position, doc in enumerate(corpus.documents):
        index = BWTIndex.build(doc.body_tokens, reverse=True, doc_id=doc.doc_id)
        rel_path = os.path.join("fm", f"{position:06d}.bin")
        save_index(index, os.path.join(out_dir, rel_path))
        index_files[doc.doc_id] = rel_path
        total_bytes += os.path.getsize(os.path.join(out_dir, rel_path))

    manifest = {
        "format_version": 1,
        "corpus_file": "corpus.bin",
        "trie_file": "trie.bin",
        "index_files": dict(sorted(index_files.items())),
        "document_count": len(corpus.documents),
        "vocab_size": corpus.codec.vocab_size,
        "corpus_digest": _sha256_file(corpus_path),
        "trie_digest": _sha256_file(trie_path),
        "total_index_bytes": total_bytes,
        "skipped_empty": corpus.skipped_empty,
    }
    with open(os.path.join(out_dir, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")

    print(
        f"documents: {len(corpus.documents)}\n"
        f"vocabulary: {corpus.codec.vocab_size}\n"
        f"index bytes: {total_bytes}"
    )
    return EXIT_OK


# -- artifact loading --------------------------------------------------------


@dataclass
class Artifacts:
    corpus: Corpus
    trie: TitleTrie
    indexes: dict[str, BWTIndex]
    manifest: dict


def load_artifacts(index_dir: str) -> Artifacts:
    manifest_path = os.path.join(index_dir, MANIFEST_NAME)
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"no manifest at {manifest_path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest unreadable: {exc}") from exc

    corpus = load_corpus(os.path.join(index_dir, manifest["corpus_file"]))
    trie = load_trie(os.path.join(index_dir, manifest["trie_file"]))
    index_files: Mapping[str, str] = manifest.get("index_files", {})
    indexes: dict[str, BWTIndex] = {}
    for doc in corpus.documents:
        rel = index_files.get(doc.doc_id)
        if rel is None:
            raise DataError(f"manifest lists no index for document {doc.doc_id!r}")
        path = os.path.join(index_dir, rel)
        try:
            indexes[doc.doc_id] = load_index(path)
        except FileNotFoundError as exc:
            raise DataError(
                f"missing index file for document {doc.doc_id!r}: {path}"
            ) from exc
    return Artifacts(corpus=corpus, trie=trie, indexes=indexes, manifest=manifest)


# -- recall ------------------------------------------------------------------


def _read_queries(path: str) -> list[str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return [line.strip() for line in fh if line.strip()]
    except FileNotFoundError as exc:
        raise DataError(f"cannot read queries: {exc}") from exc


def _build_config(args: argparse.Namespace) -> RecallConfig:
    """Defaults, then config file, then explicit flags, in rising precedence."""
    settings: dict = {}
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                file_conf = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config file: {exc}") from exc
        if not isinstance(file_conf, dict):
            raise DataError("config file must hold a JSON object")
        settings.update(file_conf)

    for name in ("alpha", "k", "beam1", "beam2", "prefix_len", "passage_len"):
        value = getattr(args, name)
        if value is not None:
            settings[name] = value
    if args.rescore_full_passage:
        settings["rescore_full_passage"] = True

    task = settings.pop("task", None)
    if args.task is not None:
        task = args.task
    templates = default_templates()
    if task is not None:
        if task not in templates:
            raise DataError(f"unknown task {task!r}")
        settings.setdefault("stage1_template", templates[task][STAGE_ONE].template)
        settings.setdefault("stage2_template", templates[task][STAGE_TWO].template)
    if args.stage1_template is not None:
        settings["stage1_template"] = args.stage1_template
    if args.stage2_template is not None:
        settings["stage2_template"] = args.stage2_template
    if "stage1_template" in settings:
        settings["stage1_template"] = PromptTemplate(
            settings["stage1_template"], STAGE_ONE
        )
    if "stage2_template" in settings:
        settings["stage2_template"] = PromptTemplate(
            settings["stage2_template"], STAGE_TWO
        )
    try:
        return RecallConfig(**settings)
    except (TypeError, ValueError) as exc:
        raise DataError(f"bad configuration: {exc}") from exc


def _make_scorer(args: argparse.Namespace, artifacts: Artifacts):
    if args.scorer == "ngram":
        return corpus_scorer(artifacts.corpus, order=args.ngram_order), {
            "type": "ngram",
            "order": args.ngram_order,
        }
    endpoint = args.endpoint or os.environ.get(ENDPOINT_ENV)
    if not endpoint:
        raise DataError(
            f"remote scorer needs --endpoint or ${ENDPOINT_ENV}"
        )
    if args.strict_determinism:
        raise DataError(
            "--strict-determinism only admits the in-process ngram scorer"
        )
    scorer = RemoteScorer(
        endpoint=endpoint,
        vocab_hash=artifacts.corpus.codec.vocab_hash(),
        timeout=args.timeout,
        retries=args.retries,
    )
    return scorer, {"type": "remote", "endpoint": endpoint}


def _reference_record(ref: Reference) -> dict:
    return {
        "doc_id": ref.doc_id,
        "title": ref.title,
        "start": ref.start,
        "passage_text": ref.passage_text,
        "score1": ref.score1,
        "score2": ref.score2,
        "combined": ref.combined,
    }


def run_recall_batch(
    engine: RecallEngine,
    queries: Sequence[str],
    parallelism: int = 1,
) -> list[dict]:
    """One record per query, input order preserved."""

    def one(query: str) -> dict:
        try:
            references = engine.recall(query)
        except DeadEndError as exc:
            logger.warning("query %r: %s", query, exc)
            return {"query": query, "references": []}
        return {
            "query": query,
            "references": [_reference_record(r) for r in references],
        }

    if parallelism <= 1:
        return [one(q) for q in queries]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(one, queries))


def _metadata_line(args, artifacts: Artifacts, config: RecallConfig, scorer_info) -> str:
    metadata = {
        "config": config.described(),
        "corpus_digest": artifacts.manifest.get("corpus_digest"),
        "document_count": len(artifacts.corpus.documents),
        "scorer": scorer_info,
        "strict_determinism": bool(args.strict_determinism),
        "tool_version": __version__,
    }
    return json.dumps({"metadata": metadata}, ensure_ascii=False, sort_keys=True)


def cmd_recall(args: argparse.Namespace) -> int:
    artifacts = load_artifacts(args.index_dir)
    config = _build_config(args)
    scorer, scorer_info = _make_scorer(args, artifacts)
    engine = RecallEngine(
        artifacts.corpus, artifacts.trie, artifacts.indexes, scorer, config
    )
    queries = _read_queries(args.queries)

    started = time.monotonic()
    records = run_recall_batch(engine, queries, parallelism=args.parallelism)
    elapsed = time.monotonic() - started
    logger.info("recalled %d queries in %.2fs", len(queries), elapsed)

    lines = [_metadata_line(args, artifacts, config, scorer_info)]
    lines += [json.dumps(r, ensure_ascii=False, sort_keys=True) for r in records]
    payload = "\n".join(lines) + "\n"
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(payload)
    else:
        sys.stdout.write(payload)
    return EXIT_OK


# -- evaluate ----------------------------------------------------------------


def read_recall_output(path: str) -> tuple[dict, list[dict]]:
    """Split a recall output file into its metadata header and records."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [line for line in fh if line.strip()]
    except FileNotFoundError as exc:
        raise DataError(f"cannot read recall output: {exc}") from exc
    if not lines:
        raise DataError("recall output is empty")
    try:
        header = json.loads(lines[0])
        records = [json.loads(line) for line in lines[1:]]
    except json.JSONDecodeError as exc:
        raise DataError(f"recall output unreadable: {exc}") from exc
    if "metadata" not in header:
        raise DataError("recall output lacks the metadata header line")
    return header["metadata"], records


def _evaluate_records(
    items: Sequence[EvalItem], records: Sequence[dict]
):
    by_query: dict[str, dict] = {}
    for record in records:
        by_query.setdefault(record["query"], record)
    results = []
    for item in items:
        record = by_query.get(item.query)
        if record is None:
            raise DataError(f"no recall output for query {item.query!r}")
        refs = record.get("references", [])
        doc_ids = [r["doc_id"] for r in refs]
        top_passage = refs[0]["passage_text"] if refs else ""
        results.append(evaluate_item(item, doc_ids, top_passage))
    return aggregate(results)


def cmd_evaluate(args: argparse.Namespace) -> int:
    _, records = read_recall_output(args.recall_output)
    items = load_gold(args.gold)
    report = _evaluate_records(items, records)
    text = report_table(report) if args.table else report_json(report)
    print(text)
    return EXIT_OK


# -- sweep -------------------------------------------------------------------

_SWEEP_AXES = {
    "alpha": float,
    "prefix_len": int,
    "k": int,
    "beam1": int,
    "beam2": int,
}


def cmd_sweep(args: argparse.Namespace) -> int:
    caster = _SWEEP_AXES.get(args.axis)
    if caster is None:
        raise DataError(f"unknown sweep axis {args.axis!r}")
    try:
        values = [caster(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise DataError(f"bad sweep values: {exc}") from exc
    if not values:
        raise DataError("no sweep values given")

    artifacts = load_artifacts(args.index_dir)
    base_config = _build_config(args)
    scorer, _ = _make_scorer(args, artifacts)
    items = load_gold(args.gold)
    queries = [item.query for item in items]

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow([args.axis, "r_precision", "in_context"])
    for value in values:
        config = replace(base_config, **{args.axis: value})
        engine = RecallEngine(
            artifacts.corpus, artifacts.trie, artifacts.indexes, scorer, config
        )
        records = run_recall_batch(engine, queries, parallelism=args.parallelism)
        report = _evaluate_records(items, records)
        writer.writerow(
            [
                value,
                "" if report.r_precision_mean is None else report.r_precision_mean,
                "" if report.in_context_rate is None else report.in_context_rate,
            ]
        )
        logger.info("sweep %s=%s done", args.axis, value)

    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(buffer.getvalue())
    else:
        sys.stdout.write(buffer.getvalue())
    return EXIT_OK


# -- argument wiring ---------------------------------------------------------


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("recall configuration")
    group.add_argument("--config", help="JSON file with configuration fields")
    group.add_argument("--alpha", type=float, default=None)
    group.add_argument("--k", type=int, default=None)
    group.add_argument("--beam1", type=int, default=None)
    group.add_argument("--beam2", type=int, default=None)
    group.add_argument("--prefix-len", dest="prefix_len", type=int, default=None)
    group.add_argument("--passage-len", dest="passage_len", type=int, default=None)
    group.add_argument(
        "--rescore-full-passage",
        dest="rescore_full_passage",
        action="store_true",
        help="re-score the whole extracted passage instead of the prefix",
    )
    group.add_argument(
        "--task",
        choices=("qa", "fact", "dialogue"),
        default=None,
        help="select the packaged prompt templates for this task form",
    )
    group.add_argument("--stage1-template", dest="stage1_template", default=None)
    group.add_argument("--stage2-template", dest="stage2_template", default=None)

    scorer = parser.add_argument_group("scorer")
    scorer.add_argument(
        "--scorer", choices=("ngram", "remote"), default="ngram"
    )
    scorer.add_argument("--ngram-order", dest="ngram_order", type=int, default=3)
    scorer.add_argument(
        "--endpoint",
        default=None,
        help=f"remote scorer URL (or set ${ENDPOINT_ENV})",
    )
    scorer.add_argument("--timeout", type=float, default=10.0)
    scorer.add_argument("--retries", type=int, default=2)

    run = parser.add_argument_group("execution")
    run.add_argument("--parallelism", type=int, default=1)
    run.add_argument(
        "--strict-determinism",
        dest="strict_determinism",
        action="store_true",
        help="refuse any scorer whose outputs this process cannot pin down",
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="passrecall", description=__doc__)
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="log progress to stderr"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_build = sub.add_parser("build", help="ingest a corpus and build artifacts")
    p_build.add_argument("--corpus", required=True, help="JSONL corpus file")
    p_build.add_argument("--out", required=True, help="artifact directory")
    p_build.set_defaults(func=cmd_build)

    p_recall = sub.add_parser("recall", help="run queries against built artifacts")
    p_recall.add_argument("--index-dir", dest="index_dir", required=True)
    p_recall.add_argument("--queries", required=True, help="one query per line")
    p_recall.add_argument("--output", default=None, help="default stdout")
    _add_config_flags(p_recall)
    p_recall.set_defaults(func=cmd_recall)

    p_eval = sub.add_parser("evaluate", help="score a recall output against gold")
    p_eval.add_argument("--recall-output", dest="recall_output", required=True)
    p_eval.add_argument("--gold", required=True, help="JSONL gold file")
    p_eval.add_argument(
        "--table", action="store_true", help="print the aligned table, not JSON"
    )
    p_eval.set_defaults(func=cmd_evaluate)

    p_sweep = sub.add_parser("sweep", help="evaluate across one axis of values")
    p_sweep.add_argument("--index-dir", dest="index_dir", required=True)
    p_sweep.add_argument("--gold", required=True)
    p_sweep.add_argument("--axis", required=True, choices=sorted(_SWEEP_AXES))
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("--output", default=None, help="CSV out, default stdout")
    _add_config_flags(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (DataError, IngestError, StorageError, GoldFormatError, ScorerError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA
    except InternalInconsistencyError as exc:
        logger.error("internal inconsistency: %s", exc)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
