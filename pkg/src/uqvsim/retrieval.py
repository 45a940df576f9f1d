"""BM25 and Dirichlet-smoothed query likelihood over a PostingsIndex.

Both scorers only consider documents that contain at least one query term
and break score ties by ascending external document id.
"""

import math
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

from uqvsim.index import PostingsIndex
from uqvsim.text import stem


class EmptyQueryWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 0.9
    b: float = 0.4

    def __post_init__(self):
        if self.k1 < 0:
            raise ValueError(f"k1 must be >= 0, got {self.k1}")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError(f"b must be in [0, 1], got {self.b}")


@dataclass(frozen=True)
class QldParams:
    mu: float = 1000.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be > 0, got {self.mu}")


@dataclass
class RankedList:
    topic_id: str
    entries: List[Tuple[str, float]] = field(default_factory=list)
    cutoff: int = 1000
    empty_query: bool = False

    @property
    def doc_ids(self) -> List[str]:
        return [d for d, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def check_invariants(self) -> None:
        ids = self.doc_ids
        assert len(ids) == len(set(ids)), "duplicate documents in ranked list"
        assert len(ids) <= self.cutoff, "ranked list longer than its cutoff"
        scores = [s for _, s in self.entries]
        assert all(a >= b for a, b in zip(scores, scores[1:])), "scores increase"


def _query_counts(query: Sequence[str]) -> Dict[str, int]:
    return Counter(stem(t) for t in query)


def _candidates(index: PostingsIndex, terms) -> Dict[int, Dict[str, int]]:
    """ordinal -> {query term: tf} for every document matching a query term."""
    hits: Dict[int, Dict[str, int]] = defaultdict(dict)
    for term in terms:
        for ordn, tf in index.postings.get(term, ()):
            hits[ordn][term] = tf
    return hits


def _rank(index: PostingsIndex, scored: Dict[int, float], topic_id: str, cutoff: int) -> RankedList:
    order = sorted(scored.items(), key=lambda kv: (-kv[1], index.doc_ids[kv[0]]))
    entries = [(index.doc_ids[o], s) for o, s in order[:cutoff]]
    return RankedList(topic_id, entries, cutoff)


def _check(index: PostingsIndex, cutoff: int) -> None:
    if index.N == 0:
        raise ValueError("cannot search an empty index")
    if cutoff < 1:
        raise ValueError(f"cutoff must be >= 1, got {cutoff}")


def bm25_search(
    index: PostingsIndex,
    query: Sequence[str],
    params: Bm25Params = Bm25Params(),
    cutoff: int = 1000,
    topic_id: str = "",
) -> RankedList:
    """Rank documents with Lucene-style BM25 (no ``k1 + 1`` numerator).

    ``query`` holds normalized terms; they are stemmed here. A repeated
    query term counts once per occurrence.
    """
    _check(index, cutoff)
    qtf = _query_counts(query)
    if not qtf:
        warnings.warn(f"empty query for topic {topic_id!r}", EmptyQueryWarning, stacklevel=2)
        return RankedList(topic_id, [], cutoff, empty_query=True)

    terms = sorted(qtf)
    n = index.N
    avgdl = index.avgdl
    idf = {}
    for t in terms:
        df = index.df.get(t, 0)
        idf[t] = math.log(1.0 + (n - df + 0.5) / (df + 0.5))

    scored = {}
    for ordn, tfs in _candidates(index, terms).items():
        norm = params.k1 * (1.0 - params.b + params.b * index.doc_len[ordn] / avgdl)
        score = 0.0
        for t in terms:
            tf = tfs.get(t, 0)
            if tf:
                score += qtf[t] * idf[t] * (tf / (tf + norm))
        scored[ordn] = score
    return _rank(index, scored, topic_id, cutoff)


def qld_search(
    index: PostingsIndex,
    query: Sequence[str],
    params: QldParams = QldParams(),
    cutoff: int = 1000,
    topic_id: str = "",
) -> RankedList:
    """Rank documents by Dirichlet-smoothed query log-likelihood.

    Query terms absent from the collection are skipped; they would add
    ``log(0)`` to every document.
    """
    _check(index, cutoff)
    qtf = {t: c for t, c in _query_counts(query).items() if index.cf.get(t, 0) > 0}
    if not qtf:
        warnings.warn(f"empty query for topic {topic_id!r}", EmptyQueryWarning, stacklevel=2)
        return RankedList(topic_id, [], cutoff, empty_query=True)

    terms = sorted(qtf)
    mu = params.mu
    smooth = {t: mu * index.cf[t] / index.total_tokens for t in terms}

    scored = {}
    for ordn, tfs in _candidates(index, terms).items():
        denom = index.doc_len[ordn] + mu
        score = 0.0
        for t in terms:
            score += qtf[t] * math.log((tfs.get(t, 0) + smooth[t]) / denom)
        scored[ordn] = score
    return _rank(index, scored, topic_id, cutoff)


def make_searcher(model: str, **params):
    """Return ``f(index, query, cutoff, topic_id)`` for ``bm25`` or ``qld``."""
    model = model.lower()
    if model == "bm25":
        p = Bm25Params(**params)

        def search(index, query, cutoff=1000, topic_id=""):
            return bm25_search(index, query, p, cutoff, topic_id)
    elif model == "qld":
        p = QldParams(**params)

        def search(index, query, cutoff=1000, topic_id=""):
            return qld_search(index, query, p, cutoff, topic_id)
    else:
        raise ValueError(f"unknown retrieval model {model!r}")
    search.model = model
    search.params = p
    return search


# -- TREC run files -------------------------------------------------------------


def format_run(runs: Sequence[RankedList], tag: str, iteration: str = "Q0") -> List[str]:
    lines = []
    for run in runs:
        for rank, (doc_id, score) in enumerate(run.entries, 1):
            lines.append(f"{run.topic_id} {iteration} {doc_id} {rank} {score:.6f} {tag}")
    return lines


def write_run(path, blocks, tag: str) -> None:
    """Write ranked lists in TREC format.

    ``blocks`` is either a sequence of RankedList (iteration column ``Q0``) or
    of ``(iteration, RankedList)`` pairs.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for block in blocks:
            if isinstance(block, RankedList):
                lines = format_run([block], tag)
            else:
                iteration, run = block
                lines = format_run([run], tag, iteration)
            for line in lines:
                fh.write(line + "\n")


def read_run(path) -> Dict[Tuple[str, str], RankedList]:
    """Parse a TREC run file into ``(topic, iteration) -> RankedList``.

    Entries keep the order given by the rank column.
    """
    rows: Dict[Tuple[str, str], List[Tuple[int, str, float]]] = defaultdict(list)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 columns, got {len(parts)}")
            topic, iteration, doc_id, rank, score, _tag = parts
            try:
                rows[(topic, iteration)].append((int(rank), doc_id, float(score)))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad rank or score") from None
    runs = {}
    for key, items in rows.items():
        items.sort()
        runs[key] = RankedList(key[0], [(d, s) for _, d, s in items], cutoff=max(len(items), 1))
    return runs
