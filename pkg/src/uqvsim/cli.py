"""Command-line interface: ``uqvsim <command> [options]``.

Commands
    index     build the postings index from the corpus
    simulate  generate simulated query variants for every configured simulator
    run       retrieve per-query and pooled-session rankings for each source
    evaluate  score the run files into evaluation matrices
    compare   write the comparison report against the reference source
    synth     write a small synthetic collection and a matching config

Exit codes: 0 success, 1 configuration error, 2 data error, 3 internal
invariant violation.
"""

import argparse
import json
import logging
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional

from uqvsim import __version__
from uqvsim.collection import (
    CollectionFormatError,
    EvalMatrix,
    QueryVariantSet,
    parse_qrels,
    parse_topics,
    parse_uqv,
    write_eval_matrix,
    write_qrels,
    write_topics,
    write_uqv,
)
from uqvsim.config import ConfigError, ExperimentConfig, load_config
from uqvsim.evaluation import evaluate_run
from uqvsim.index import (
    DuplicateDocumentError,
    IndexFormatError,
    build_index,
    load_index,
    read_corpus_jsonl,
    save_index,
    write_stats,
)
from uqvsim.lm import NoRelevantDocumentsError, background_model
from uqvsim.report import compare_sources, format_arp_table
from uqvsim.retrieval import make_searcher, read_run, write_run
from uqvsim.simulate import SimulationWarning, pool_runs, search_session, sessions_to_uqv, simulate

log = logging.getLogger("uqvsim")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

MODES = ("per_query", "pooled")


class DataError(Exception):
    pass


# -- helpers -------------------------------------------------------------------------


def _map(fn, items, threads: int) -> list:
    """Order-preserving map, optionally on a thread pool."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _load_index(cfg: ExperimentConfig):
    if not cfg.index_path.exists():
        raise DataError(f"index {cfg.index_path} not found; run 'uqvsim index' first")
    return load_index(cfg.index_path)


def _load_queries(cfg: ExperimentConfig) -> QueryVariantSet:
    """Real query variants (if configured) merged with the simulated ones (if present)."""
    queries = QueryVariantSet()
    if cfg.uqv is not None:
        queries = queries.merge(parse_uqv(cfg.uqv))
    if cfg.simulated_path.exists():
        queries = queries.merge(parse_uqv(cfg.simulated_path))
    if not len(queries):
        raise DataError("no query variants: configure paths.uqv or run 'uqvsim simulate'")
    return queries


def _real_sources(cfg: ExperimentConfig) -> List[str]:
    return parse_uqv(cfg.uqv).sources() if cfg.uqv is not None and cfg.uqv.exists() else []


def _select_sources(cfg: ExperimentConfig, available: List[str]) -> List[str]:
    sources = cfg.sources if cfg.sources is not None else available
    unknown = [s for s in sources if s not in available]
    if unknown:
        raise DataError(f"unknown source(s) {unknown}; available: {available}")
    return list(sources)


def _run_path(cfg: ExperimentConfig, source: str, mode: str) -> Path:
    return cfg.runs_dir / f"{source}.{mode}.run"


def _qidx(iteration: str) -> int:
    if not iteration.startswith("Q") or not iteration[1:].isdigit():
        raise DataError(f"unexpected iteration column {iteration!r} in run file")
    return int(iteration[1:])


# -- commands ------------------------------------------------------------------------


def cmd_index(cfg: ExperimentConfig, args) -> int:
    cfg.require("corpus")
    if cfg.index_path.exists() and not args.force:
        raise ConfigError(f"{cfg.index_path} exists; pass --force to rebuild")
    index = build_index(read_corpus_jsonl(cfg.corpus))
    if index.N == 0:
        raise DataError(f"corpus {cfg.corpus} contains no documents")
    index.check_invariants()
    cfg.index_path.parent.mkdir(parents=True, exist_ok=True)
    save_index(index, cfg.index_path)
    write_stats(index, cfg.index_path.with_name("index_stats.json"))
    print(f"N={index.N} vocabulary={index.vocabulary_size} total_tokens={index.total_tokens}")
    return EXIT_OK


def cmd_simulate(cfg: ExperimentConfig, args) -> int:
    if not cfg.simulators:
        raise ConfigError("simulation.simulators is empty")
    cfg.require("topics")
    needs_qrels = any(s.needs_qrels for s in cfg.simulators)
    if needs_qrels:
        cfg.require("qrels")
    topics = parse_topics(cfg.topics)
    index = qrels = background = None
    if needs_qrels:
        qrels = parse_qrels(cfg.qrels)
        index = _load_index(cfg)
        background = background_model(index)

    sessions = []
    for spec in cfg.simulators:
        def one(topic, spec=spec):
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", SimulationWarning)
                try:
                    sess = simulate(spec, topic, index, qrels, background)
                except NoRelevantDocumentsError:
                    return None, [f"{spec.label}: topic {topic.id} has no relevant documents; skipped"]
            return sess, [str(w.message) for w in caught]

        for sess, notes in _map(one, topics, args.threads):
            for note in notes:
                log.warning(note)
            if sess is not None:
                sessions.append(sess)

    uqv = QueryVariantSet()
    for spec in cfg.simulators:
        uqv = uqv.merge(sessions_to_uqv([s for s in sessions if s.spec.label == spec.label]))
    cfg.output.mkdir(parents=True, exist_ok=True)
    write_uqv(uqv, cfg.simulated_path)
    print(f"wrote {len(uqv)} sessions for {len(cfg.simulators)} simulators to {cfg.simulated_path}")
    return EXIT_OK


def cmd_run(cfg: ExperimentConfig, args) -> int:
    queries = _load_queries(cfg)
    sources = _select_sources(cfg, queries.sources())
    index = _load_index(cfg)
    search = make_searcher(cfg.model, **cfg.model_params)
    cfg.runs_dir.mkdir(parents=True, exist_ok=True)
    for source in sources:
        sessions = queries.by_source(source)

        def one(item):
            topic, qs = item
            per_query = search_session(qs, index, search, cfg.depth, topic)
            pooled = pool_runs(search_session(qs, index, search, cfg.session_depth, topic), topic)
            return topic, per_query, pooled

        blocks, pooled_blocks = [], []
        for topic, per_query, pooled in _map(one, sessions.items(), args.threads):
            for run in per_query + [pooled]:
                run.check_invariants()
            blocks.extend((f"Q{i}", run) for i, run in enumerate(per_query, 1))
            pooled_blocks.append((f"Q{len(per_query)}", pooled))
        write_run(_run_path(cfg, source, "per_query"), blocks, source)
        write_run(_run_path(cfg, source, "pooled"), pooled_blocks, source)
    print(f"wrote runs for {len(sources)} sources to {cfg.runs_dir}")
    return EXIT_OK


def evaluate_run_file(path: Path, qrels, measures, mode: str, source: str = "") -> EvalMatrix:
    """EvalMatrix of one run file; pooled sessions are stored as query index 1."""
    runs = read_run(path)
    unjudged = sorted({t for t, _ in runs if not qrels.grades(t)})
    for t in unjudged:
        log.warning(f"{path}: topic {t} has no relevance judgments; scores are undefined")
    matrix = EvalMatrix(metadata={"source": source, "mode": mode, "unjudged": " ".join(unjudged)})
    for (topic, iteration), run in sorted(runs.items(), key=lambda kv: (kv[0][0], _qidx(kv[0][1]))):
        qidx = 1 if mode == "pooled" else _qidx(iteration)
        for name, value in evaluate_run(run, qrels, topic, measures).items():
            matrix.set(topic, qidx, name, value)
    return matrix


def cmd_evaluate(cfg: ExperimentConfig, args) -> int:
    cfg.require("qrels")
    if not cfg.runs_dir.is_dir():
        raise DataError(f"no runs in {cfg.runs_dir}; run 'uqvsim run' first")
    available = sorted({p.name.rsplit(".", 2)[0] for p in cfg.runs_dir.glob("*.run")})
    sources = _select_sources(cfg, available)
    qrels = parse_qrels(cfg.qrels)
    cfg.eval_dir.mkdir(parents=True, exist_ok=True)
    for source in sources:
        for mode in MODES:
            path = _run_path(cfg, source, mode)
            if not path.exists():
                raise DataError(f"missing run file {path}")
            matrix = evaluate_run_file(path, qrels, cfg.measures, mode, source)
            write_eval_matrix(matrix, cfg.eval_dir / f"{source}.{mode}.csv")
    print(f"wrote evaluation matrices for {len(sources)} sources to {cfg.eval_dir}")
    return EXIT_OK


def cmd_compare(cfg: ExperimentConfig, args) -> int:
    if not cfg.reference:
        raise ConfigError("evaluation.reference is not set")
    cfg.require("qrels")
    queries = _load_queries(cfg)
    available = queries.sources()
    if cfg.reference not in available:
        raise DataError(f"reference source {cfg.reference!r} not found; available: {available}")
    sources = [s for s in _select_sources(cfg, available) if s != cfg.reference] or [cfg.reference]
    index = _load_index(cfg)
    qrels = parse_qrels(cfg.qrels)
    report = compare_sources(
        queries, sources, cfg.reference, index, qrels,
        model=cfg.model, model_params=cfg.model_params, depth=cfg.depth,
        session_depth=cfg.session_depth, measures=cfg.measures, depths=cfg.depths,
        session_lengths=cfg.session_lengths, gain_levels=cfg.gain_levels,
        max_queries=cfg.max_queries, max_depth=cfg.max_depth, qld_mus=cfg.qld_mus,
        sdcg_b=cfg.sdcg_b, sdcg_bq=cfg.sdcg_bq, alpha=cfg.alpha,
        real_sources=_real_sources(cfg),
    )
    cfg.output.mkdir(parents=True, exist_ok=True)
    with open(cfg.output / "compare.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    table = format_arp_table(report["arp"]["rows"], report["arp"]["measures"])
    (cfg.output / "arp_table.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    return EXIT_OK


def cmd_synth(cfg: ExperimentConfig, args) -> int:
    from uqvsim.synthetic import generate_collection

    out = cfg.output
    if (out / "config.ini").exists() and not args.force:
        raise ConfigError(f"{out / 'config.ini'} exists; pass --force to overwrite")
    coll = generate_collection(n_docs=args.docs, n_topics=args.topics, seed=args.synth_seed)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "corpus.jsonl", "w", encoding="utf-8") as fh:
        for doc_id, text in coll.docs:
            fh.write(json.dumps({"id": doc_id, "contents": text}) + "\n")
    write_topics(coll.topics, out / "topics.jsonl")
    write_qrels(coll.qrels, out / "qrels.txt")
    write_uqv(coll.uqv, out / "uqv.tsv")
    (out / "config.ini").write_text(
        "[paths]\n"
        "corpus = corpus.jsonl\n"
        "topics = topics.jsonl\n"
        "qrels = qrels.txt\n"
        "uqv = uqv.tsv\n"
        "output = work\n\n"
        "[simulation]\n"
        "simulators = TTS_S1, TTS_S2P, KIS_S2P, TTS_S4, KIS_S4\n\n"
        "[evaluation]\n"
        "reference = UQV_1\n",
        encoding="utf-8",
    )
    print(f"wrote synthetic collection ({len(coll.docs)} docs, {len(coll.topics)} topics) to {out}")
    return EXIT_OK


COMMANDS = {
    "index": cmd_index,
    "simulate": cmd_simulate,
    "run": cmd_run,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uqvsim", description="Simulate and evaluate user query variants.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", "-c", help="experiment config file (INI)")
    parser.add_argument("--output", "-o", help="output directory (overrides paths.output)")
    parser.add_argument("--force", action="store_true", help="overwrite existing index / synthetic files")
    parser.add_argument("--threads", type=int, default=1, help="worker threads over topics")
    parser.add_argument("--seed", type=int, default=None, help="reserved; all algorithms are deterministic")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config value (repeatable)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "index": "build the postings index from the corpus",
        "simulate": "simulate query variants for the configured simulators",
        "run": "write per-query and pooled-session run files",
        "evaluate": "score run files into evaluation matrices",
        "compare": "write the comparison report against the reference source",
    }
    for name, text in helps.items():
        sub.add_parser(name, help=text)
    synth = sub.add_parser("synth", help="write a small synthetic collection and config")
    synth.add_argument("--docs", type=int, default=500, help="number of documents")
    synth.add_argument("--topics", type=int, default=20, help="number of topics")
    synth.add_argument("--synth-seed", type=int, default=13, help="generator seed")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, args.overrides, args.output)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AssertionError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (DataError, CollectionFormatError, IndexFormatError, DuplicateDocumentError,
            NoRelevantDocumentsError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
