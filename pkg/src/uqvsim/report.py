"""Comparison reports between query sources (real users and simulators)."""

import math
import warnings
from typing import Dict, Mapping, Optional, Sequence

from uqvsim.collection import EvalMatrix, QueryVariantSet, Qrels
from uqvsim.evaluation import (
    ALL,
    BEST,
    FIRST,
    EvaluationWarning,
    SessionGain,
    arp,
    bonferroni_alpha,
    evaluate_run,
    isoquant,
    jaccard_terms,
    kendall_tau,
    msle,
    paired_ttest,
    query_count,
    rmse,
    score_runs,
    sdcg,
    system_ordering,
)
from uqvsim.index import PostingsIndex
from uqvsim.retrieval import make_searcher
from uqvsim.simulate import as_terms, pool_runs, search_session

ARP_MEASURES = ("nDCG", "P@10", "AP")


def per_query_matrix(queries: Mapping[str, Sequence], index: PostingsIndex, qrels: Qrels, search,
                     depth: int, measures: Sequence[str], source: str = "") -> EvalMatrix:
    """Score every query of every topic on its own ranking."""
    runs = {}
    for topic, qs in queries.items():
        for i, run in enumerate(search_session(qs, index, search, depth, topic), 1):
            runs[(topic, i)] = run
    meta = {"source": source, "mode": "per_query", "depth": str(depth)}
    return score_runs(runs, qrels, measures, meta)


def _check_topics(name: str, topics: Sequence[str], ref_name: str, ref_topics: Sequence[str]) -> None:
    if set(topics) != set(ref_topics):
        raise ValueError(
            f"topic sets of {name!r} and reference {ref_name!r} differ: "
            f"only in {name!r} {sorted(set(topics) - set(ref_topics))}, "
            f"only in {ref_name!r} {sorted(set(ref_topics) - set(topics))}"
        )


def arp_rows(matrices: Mapping[str, EvalMatrix], measures: Sequence[str] = ARP_MEASURES) -> Dict[str, dict]:
    rows = {}
    for source, matrix in matrices.items():
        row = {}
        for mode in (ALL, FIRST, BEST):
            vals = arp(matrix, mode)
            row[mode] = {"q": query_count(matrix, mode), **{m: vals.get(m) for m in measures}}
        rows[source] = row
    return rows


def format_arp_table(rows: Mapping[str, dict], measures: Sequence[str] = ARP_MEASURES) -> str:
    """Plain-text table: one row per source, q and measures for all/first/best queries."""
    head1 = f"{'':<14}" + "".join(f"| {title:<{8 + 8 * len(measures)}}" for title in ("All queries", "First queries", "Best queries"))
    cols = "".join(f"{'q':>7} " + "".join(f"{m:>8}" for m in measures) + " " for _ in range(3))
    lines = [head1, f"{'':<14}" + cols]
    for source, row in rows.items():
        cells = ""
        for mode in (ALL, FIRST, BEST):
            r = row[mode]
            vals = "".join(f"{r[m]:>8.4f}" if r.get(m) is not None else f"{'-':>8}" for m in measures)
            cells += f"{r['q']:>7} {vals} "
        lines.append(f"{source:<14}{cells}")
    return "\n".join(lines) + "\n"


def compare_sources(
    queries: QueryVariantSet,
    sources: Sequence[str],
    reference: str,
    index: PostingsIndex,
    qrels: Qrels,
    *,
    model: str = "bm25",
    model_params: Optional[Mapping[str, float]] = None,
    depth: int = 1000,
    session_depth: int = 100,
    measures: Sequence[str] = ARP_MEASURES,
    depths: Sequence[int] = (10, 20, 50, 100),
    session_lengths: Sequence[int] = (3, 5, 10),
    gain_levels: Sequence[float] = (0.3, 0.4, 0.5),
    max_queries: int = 10,
    max_depth: int = 100,
    qld_mus: Sequence[float] = (50, 250, 500, 1250, 2500, 5000),
    sdcg_b: float = 2.0,
    sdcg_bq: float = 4.0,
    alpha: float = 0.05,
    real_sources: Sequence[str] = (),
) -> dict:
    """Build the full comparison report of ``sources`` against ``reference``.

    Sections: ARP tables, RMSE (first queries and pooled sessions by depth),
    paired t-test p-values, Kendall's tau of QLD system orderings per query
    index, sDCG curves, isoquants with MSLE, and Jaccard term similarity.
    """
    available = set(queries.sources())
    for s in list(sources) + [reference]:
        if s not in available:
            raise ValueError(f"unknown source {s!r}; available: {sorted(available)}")
    search = make_searcher(model, **(model_params or {}))
    all_sources = list(dict.fromkeys(list(sources) + [reference]))
    sessions = {s: {t: [as_terms(q) for q in qs] for t, qs in queries.by_source(s).items()} for s in all_sources}
    ref_topics = sorted(sessions[reference])
    for s in sources:
        _check_topics(s, sorted(sessions[s]), reference, ref_topics)

    report: dict = {
        "reference": reference,
        "sources": list(sources),
        "topics": ref_topics,
        "retrieval": {"model": model, "params": dict(search.params.__dict__), "depth": depth,
                      "session_depth": session_depth},
    }

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EvaluationWarning)

        matrices = {
            s: per_query_matrix(sessions[s], index, qrels, search, depth, measures, s) for s in all_sources
        }
        report["arp"] = {"measures": list(measures), "rows": arp_rows(matrices, measures)}

        # RMSE on first queries and on pooled sessions by per-query depth.
        first = {s: {m: matrices[s].topic_scores(m, 1) for m in measures} for s in all_sources}
        pooled = {}
        for s in all_sources:
            runs = {t: search_session(qs, index, search, max(depths), t) for t, qs in sessions[s].items()}
            pooled[s] = {
                d: {t: evaluate_run(pool_runs(rs, t, d), qrels, t, measures) for t, rs in runs.items()}
                for d in depths
            }
        report["rmse"] = {
            "first_query": {s: {m: rmse(first[s][m], first[reference][m]) for m in measures} for s in sources},
            "by_depth": {
                "depths": list(depths),
                "values": {
                    s: {
                        m: [
                            rmse({t: v[m] for t, v in pooled[s][d].items()},
                                 {t: v[m] for t, v in pooled[reference][d].items()})
                            for d in depths
                        ]
                        for m in measures
                    }
                    for s in sources
                },
            },
        }

        # Paired t-tests on the first-query distributions.
        tmeasure = "nDCG" if "nDCG" in measures else measures[0]
        grid = {}
        for a in all_sources:
            grid[a] = {}
            for b in all_sources:
                try:
                    grid[a][b] = paired_ttest(first[a][tmeasure], first[b][tmeasure])
                except ValueError:
                    grid[a][b] = None
        sims = [s for s in all_sources if s not in set(real_sources)]
        reals = [s for s in all_sources if s in set(real_sources)]
        comparisons = len(sims) * len(reals) if sims and reals else max(len(all_sources) * (len(all_sources) - 1) // 2, 1)
        report["ttest"] = {
            "measure": tmeasure,
            "alpha": alpha,
            "bonferroni_alpha": bonferroni_alpha(alpha, comparisons),
            "p_values": {s: grid[s][reference] for s in sources},
            "grid": grid,
        }

        # Kendall's tau between QLD system orderings, per query index.
        systems = {f"QLD_mu{mu:g}": make_searcher("qld", mu=mu) for mu in qld_mus}
        tau_measure = tmeasure
        per_index: Dict[str, Dict[int, Dict[str, Dict[str, float]]]] = {}
        for s in all_sources:
            per_index[s] = {}
            for t, qs in sessions[s].items():
                for i, q in enumerate(qs[:max_queries], 1):
                    scores = {}
                    for name, sys_search in systems.items():
                        run = search_session([q], index, sys_search, depth, t)[0]
                        scores[name] = evaluate_run(run, qrels, t, [tau_measure])[tau_measure]
                    per_index[s].setdefault(i, {})[t] = scores
        taus = {}
        for s in sources:
            row = []
            for i in range(1, max_queries + 1):
                vals = []
                for t, scores in per_index[s].get(i, {}).items():
                    ref_scores = per_index[reference].get(i, {}).get(t)
                    if ref_scores is not None:
                        vals.append(kendall_tau(system_ordering(scores), system_ordering(ref_scores)))
                row.append(math.fsum(vals) / len(vals) if vals else None)
            taus[s] = row
        report["kendall_tau"] = {"measure": tau_measure, "systems": list(systems), "by_query_index": taus}

        # sDCG of sessions with the first n queries at growing per-query depth.
        sdcg_vals = {}
        for s in all_sources:
            runs = {t: search_session(qs, index, search, max(depths), t) for t, qs in sessions[s].items()}
            sdcg_vals[s] = {
                str(n): [
                    math.fsum(sdcg(rs[:n], qrels, t, sdcg_b, sdcg_bq, d) for t, rs in runs.items()) / len(runs)
                    for d in depths
                ]
                for n in session_lengths
            }
        report["sdcg"] = {"b": sdcg_b, "bq": sdcg_bq, "depths": list(depths),
                          "session_lengths": list(session_lengths), "values": sdcg_vals}

        # Isoquants and MSLE against the reference.
        gains = {s: SessionGain(sessions[s], index, qrels, search, max_depth, ref_topics) for s in all_sources}
        iso = {s: {g: isoquant(gains[s], g, max_queries) for g in gain_levels} for s in all_sources}
        msle_vals, excluded = {}, {}
        for s in sources:
            msle_vals[s], excluded[s] = {}, {}
            for g in gain_levels:
                ok, skipped = iso[s][g].shared(iso[reference][g])
                excluded[s][str(g)] = skipped
                msle_vals[s][str(g)] = msle(iso[s][g], iso[reference][g]) if ok else None
        report["isoquants"] = {
            "gain_levels": list(gain_levels),
            "max_depth": max_depth,
            "points": {s: {str(g): iso[s][g].to_json()["points"] for g in gain_levels} for s in all_sources},
            "msle": msle_vals,
            "msle_excluded": excluded,
        }

    # Jaccard similarity of normalized unique query terms, averaged over topics.
    raw = {s: queries.by_source(s) for s in all_sources}

    def mean_jaccard(a, b):
        shared = sorted(set(raw[a]) & set(raw[b]))
        if not shared:
            return None
        return math.fsum(jaccard_terms(raw[a][t], raw[b][t]) for t in shared) / len(shared)

    report["jaccard"] = {
        "vs_reference": {s: mean_jaccard(s, reference) for s in sources},
        "matrix": {a: {b: mean_jaccard(a, b) for b in all_sources} for a in all_sources},
    }
    return report
