import json

import pytest

from uqvsim import cli
from uqvsim.collection import parse_qrels, parse_topics, parse_uqv, read_eval_matrix
from uqvsim.config import ConfigError, load_config
from uqvsim.evaluation import ndcg, paired_ttest, rmse
from uqvsim.index import PostingsIndex, load_index
from uqvsim.retrieval import make_searcher, read_run
from uqvsim.simulate import as_terms, run_session, simulate, simulator


def write_experiment(root, docs, topics, qrels, uqv, extra=""):
    root.mkdir(parents=True, exist_ok=True)
    (root / "corpus.jsonl").write_text("".join(json.dumps({"id": d, "contents": t}) + "\n" for d, t in docs))
    (root / "topics.jsonl").write_text("".join(json.dumps(t) + "\n" for t in topics))
    (root / "qrels.txt").write_text("".join(f"{t} 0 {d} {g}\n" for t, d, g in qrels))
    (root / "uqv.tsv").write_text("".join(f"{t}\t{s}\t{i}\t{q}\n" for t, s, i, q in uqv))
    cfg = root / "config.ini"
    cfg.write_text(
        "[paths]\ncorpus = corpus.jsonl\ntopics = topics.jsonl\nqrels = qrels.txt\nuqv = uqv.tsv\n"
        "output = work\n\n" + extra
    )
    return cfg


TOY_DOCS = [("d1", "alpha alpha alpha"), ("d2", "alpha"), ("d3", "beta gamma"), ("d4", "gamma delta")]
TOY_TOPICS = [{"id": "1", "title": "alpha", "description": "alpha beta"},
              {"id": "2", "title": "gamma", "description": "delta"}]
TOY_QRELS = [("1", "d1", 2), ("1", "d2", 1), ("1", "d3", 0), ("2", "d4", 1), ("2", "d3", 1)]
TOY_UQV = [("1", "U", 1, "alpha"), ("2", "U", 1, "gamma delta")]


def run(cfg, *args):
    return cli.main(["--config", str(cfg), *args])


@pytest.fixture
def toy(tmp_path):
    return write_experiment(tmp_path / "exp", TOY_DOCS, TOY_TOPICS, TOY_QRELS, TOY_UQV,
                            "[retrieval]\nsession_depth = 1000\n\n[evaluation]\nreference = U\n")


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert cli.main(["--output", str(out), "synth", "--docs", "120", "--topics", "4"]) == 0
    return out


def test_index_hand_counts(toy, capsys):
    assert run(toy, "index") == 0
    assert "N=4 vocabulary=4 total_tokens=8" in capsys.readouterr().out
    index = load_index(toy.parent / "work" / "index.bin")
    assert index.cf["alpha"] == 4 and index.df["gamma"] == 2
    stats = json.loads((toy.parent / "work" / "index_stats.json").read_text())
    assert stats["documents"] == 4


def test_index_refuses_rebuild(toy, capsys):
    assert run(toy, "index") == 0
    assert run(toy, "index") == cli.EXIT_CONFIG
    assert "--force" in capsys.readouterr().err
    assert run(toy, "--force", "index") == 0


def test_index_empty_corpus(tmp_path):
    cfg = write_experiment(tmp_path, [], TOY_TOPICS, TOY_QRELS, TOY_UQV)
    assert run(cfg, "index") == cli.EXIT_DATA
    assert not (tmp_path / "work" / "index.bin").exists()


def test_index_bad_corpus_line(tmp_path, capsys):
    cfg = write_experiment(tmp_path, TOY_DOCS, TOY_TOPICS, TOY_QRELS, TOY_UQV)
    with open(tmp_path / "corpus.jsonl", "a") as fh:
        fh.write("{broken\n")
    assert run(cfg, "index") == cli.EXIT_DATA
    assert "corpus.jsonl:5" in capsys.readouterr().err


def test_internal_invariant_violation(toy, monkeypatch):
    def broken(docs):
        return PostingsIndex(["d1"], {"x": [(0, 2)]}, [1], {"x": "x"})

    monkeypatch.setattr(cli, "build_index", broken)
    assert run(toy, "index") == cli.EXIT_INTERNAL


def test_simulate_tts_s1(toy):
    assert run(toy, "--set", "simulation.simulators=TTS_S1", "--set", "simulation.n_queries=3", "simulate") == 0
    sims = parse_uqv(toy.parent / "work" / "simulated.tsv")
    assert sims.queries("1", "TTS_S1") == ["alpha", "beta"]
    assert all(len(x.split()) == 1 for qs in sims.variants.values() for x in qs)


def test_simulate_duplicate_labels(toy):
    assert run(toy, "--set", "simulation.simulators=TTS_S1, TTS_S1", "simulate") == cli.EXIT_CONFIG


def test_simulate_matches_library(synth_dir):
    cfg = synth_dir / "config.ini"
    assert run(cfg, "index") == 0
    assert run(cfg, "--set", "simulation.simulators=TTS_S4, KIS_S4", "--threads", "3", "simulate") == 0
    sims = parse_uqv(synth_dir / "work" / "simulated.tsv")
    index = load_index(synth_dir / "work" / "index.bin")
    qrels = parse_qrels(synth_dir / "qrels.txt")
    for topic in parse_topics(synth_dir / "topics.jsonl"):
        for name in ("TTS_S4", "KIS_S4"):
            assert sims.queries(topic.id, name) == simulate(simulator(name), topic, index, qrels).strings()


def test_simulate_skips_topics_without_relevant_docs(toy, caplog):
    with open(toy.parent / "topics.jsonl", "a") as fh:
        fh.write(json.dumps({"id": "3", "title": "delta"}) + "\n")
    assert run(toy, "index") == 0
    assert run(toy, "--set", "simulation.simulators=KIS_S1", "simulate") == 0
    sims = parse_uqv(toy.parent / "work" / "simulated.tsv")
    assert sims.topics() == ["1", "2"]
    assert "no relevant documents" in caplog.text


def test_run_single_query_modes_identical(toy):
    assert run(toy, "index") == 0
    assert run(toy, "run") == 0
    runs = toy.parent / "work" / "runs"
    assert (runs / "U.per_query.run").read_bytes() == (runs / "U.pooled.run").read_bytes()


def test_run_depth_zero(toy):
    assert run(toy, "--set", "retrieval.depth=0", "run") == cli.EXIT_CONFIG


def test_run_unknown_source(toy):
    assert run(toy, "index") == 0
    assert run(toy, "--set", "evaluation.sources=NOPE", "run") == cli.EXIT_DATA


def test_run_pooled_matches_run_session(synth_dir):
    cfg = synth_dir / "config.ini"
    if not (synth_dir / "work" / "index.bin").exists():
        assert run(cfg, "index") == 0
    assert run(cfg, "--set", "evaluation.sources=UQV_2", "run") == 0
    pooled = read_run(synth_dir / "work" / "runs" / "UQV_2.pooled.run")
    index = load_index(synth_dir / "work" / "index.bin")
    uqv = parse_uqv(synth_dir / "uqv.tsv")
    search = make_searcher("bm25")
    for topic, qs in uqv.by_source("UQV_2").items():
        want = run_session(qs, index, search, 100, topic)
        got = pooled[(topic, f"Q{len(qs)}")]
        assert got.doc_ids == want.doc_ids


def test_evaluate_perfect_run(toy):
    assert run(toy, "index") == 0 and run(toy, "run") == 0
    assert run(toy, "evaluate") == 0
    m = read_eval_matrix(toy.parent / "work" / "eval" / "U.per_query.csv")
    assert m.get("1", 1, "nDCG") == 1.0
    assert m.metadata["mode"] == "per_query"


def test_evaluate_matches_library(toy):
    assert run(toy, "index") == 0 and run(toy, "run") == 0 and run(toy, "evaluate") == 0
    m = read_eval_matrix(toy.parent / "work" / "eval" / "U.per_query.csv")
    index = load_index(toy.parent / "work" / "index.bin")
    qrels = parse_qrels(toy.parent / "qrels.txt")
    search = make_searcher("bm25")
    r = search(index, as_terms("gamma delta"), cutoff=1000, topic_id="2")
    assert m.get("2", 1, "nDCG") == pytest.approx(ndcg(r, qrels, "2"), rel=1e-9)


def test_evaluate_missing_qrels(toy):
    assert run(toy, "index") == 0 and run(toy, "run") == 0
    (toy.parent / "qrels.txt").unlink()
    assert run(toy, "evaluate") == cli.EXIT_CONFIG


def test_evaluate_unjudged_topic(toy):
    assert run(toy, "index") == 0 and run(toy, "run") == 0
    (toy.parent / "qrels.txt").write_text("1 0 d1 2\n")
    assert run(toy, "evaluate") == 0
    m = read_eval_matrix(toy.parent / "work" / "eval" / "U.per_query.csv")
    assert m.metadata["unjudged"] == "2"


def test_compare_self(toy):
    assert run(toy, "index") == 0
    assert run(toy, "--set", "evaluation.qld_mu=50,500,5000", "--set", "evaluation.max_queries=1", "compare") == 0
    report = json.loads((toy.parent / "work" / "compare.json").read_text())
    assert report["rmse"]["first_query"]["U"] == {"AP": 0.0, "P@10": 0.0, "nDCG": 0.0}
    assert report["ttest"]["p_values"]["U"] == 1.0
    assert report["kendall_tau"]["by_query_index"]["U"] == [1.0]
    assert report["jaccard"]["vs_reference"]["U"] == 1.0
    assert all(v in (0.0, None) for v in report["isoquants"]["msle"]["U"].values())
    assert (toy.parent / "work" / "arp_table.txt").read_text().startswith(" ")


def test_compare_two_sources_matches_library(synth_dir):
    cfg = synth_dir / "config.ini"
    if not (synth_dir / "work" / "index.bin").exists():
        assert run(cfg, "index") == 0
    assert run(cfg, "--set", "evaluation.sources=UQV_2", "--set", "evaluation.max_queries=3", "compare") == 0
    report = json.loads((synth_dir / "work" / "compare.json").read_text())
    index = load_index(synth_dir / "work" / "index.bin")
    qrels = parse_qrels(synth_dir / "qrels.txt")
    uqv = parse_uqv(synth_dir / "uqv.tsv")
    search = make_searcher("bm25")

    def first(source):
        return {t: ndcg(search(index, as_terms(qs[0]), cutoff=1000, topic_id=t), qrels, t)
                for t, qs in uqv.by_source(source).items()}

    a, b = first("UQV_2"), first("UQV_1")
    assert report["rmse"]["first_query"]["UQV_2"]["nDCG"] == pytest.approx(rmse(a, b), abs=1e-12)
    assert report["ttest"]["p_values"]["UQV_2"] == pytest.approx(paired_ttest(a, b), abs=1e-12)


def test_compare_mismatched_topics(toy, capsys):
    with open(toy.parent / "uqv.tsv", "a") as fh:
        fh.write("1\tV\t1\talpha beta\n")
    assert run(toy, "index") == 0
    assert run(toy, "--set", "evaluation.sources=V", "compare") == cli.EXIT_DATA
    assert "'2'" in capsys.readouterr().err


def test_compare_without_reference(toy):
    assert run(toy, "--set", "evaluation.reference=", "compare") == cli.EXIT_CONFIG
    assert run(toy, "--set", "evaluation.reference=ZZZ", "index") == 0
    assert run(toy, "--set", "evaluation.reference=ZZZ", "compare") == cli.EXIT_DATA


def test_validation_before_side_effects(toy):
    assert run(toy, "--set", "evaluation.measures=MRR", "index") == cli.EXIT_CONFIG
    assert not (toy.parent / "work").exists()
    assert run(toy, "--set", "nosuch.key=1", "index") == cli.EXIT_CONFIG


def test_end_to_end_byte_identical(synth_dir, tmp_path):
    cfg = synth_dir / "config.ini"
    outputs = []
    for i, threads in enumerate(("1", "4")):
        out = tmp_path / f"o{i}"
        base = ["--config", str(cfg), "--output", str(out), "--threads", threads,
                "--set", "evaluation.max_queries=2", "--set", "evaluation.qld_mu=50,5000"]
        for cmd in ("index", "simulate", "run", "evaluate", "compare"):
            assert cli.main(base + [cmd]) == 0
        outputs.append({p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()})
    assert outputs[0] == outputs[1]


def test_config_custom_simulator(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text(
        "[simulation]\nsimulators = TTS_S2P\nn_queries = 5\n\n"
        "[simulator.MINE]\nsearcher = KIS\nstrategy = S4\nalpha = 1.0\nm = 10\n"
    )
    cfg = load_config(path)
    assert [s.label for s in cfg.simulators] == ["TTS_S2P", "MINE"]
    mine = cfg.simulators[1]
    assert mine.params.alpha == 1.0 and mine.params.delta == 0.6 and mine.vocab_cap == 10
    assert mine.n_queries == 5


def test_config_errors(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[retrieval]\nmodel = tfidf\n")
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")
    with pytest.raises(ConfigError):
        load_config(None, ["noequals"])
    with pytest.raises(ConfigError):
        load_config(None, ["evaluation.gain_levels=1.5"])
    with pytest.raises(ConfigError):
        load_config(None, ["evaluation.measures=sDCG_b2_bq4"])
    path.write_text("[simulation]\nsimulators = X\n\n[simulator.X]\nsearcher = KIS\nstrategy = S1\n")
    with pytest.raises(ConfigError):
        load_config(path)
