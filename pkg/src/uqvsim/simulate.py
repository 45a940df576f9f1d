"""Query-variant simulators.

Two families share one entry point, :func:`simulate`:

* conventional strategies S1, S2, S2', S3, S3' that walk a candidate term
  list in a fixed pattern, and
* QCM-scored strategies S4, S4', S4'' that enumerate every 3/4/5-term
  combination of the candidate terms and greedily pick, step by step, the
  combination scoring best against the previous query (the topic title for
  the first step).
"""

import itertools
import math
import warnings
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from uqvsim.collection import QueryVariantSet, Qrels, Topic
from uqvsim.index import PostingsIndex
from uqvsim.lm import (
    DEFAULT_LAMBDA,
    REL,
    TOPIC,
    TOPIC_PLUS_REL,
    CandidateList,
    TermDistribution,
    candidates_rel,
    candidates_topic,
    candidates_topic_plus_rel,
    idf,
    title_terms,
    topic_stems,
)
from uqvsim.retrieval import RankedList
from uqvsim.text import normalize, query_string, stem, unique_terms

Query = Tuple[str, ...]

# Scores closer than this to the best score count as tied.
TIE_TOLERANCE = 1e-12


class SimulationWarning(UserWarning):
    pass


class Strategy(str, Enum):
    S1 = "S1"
    S2 = "S2"
    S2P = "S2P"
    S3 = "S3"
    S3P = "S3P"
    S4 = "S4"
    S4P = "S4P"
    S4PP = "S4PP"

    @property
    def is_qcm(self) -> bool:
        return self in (Strategy.S4, Strategy.S4P, Strategy.S4PP)


@dataclass(frozen=True)
class QcmParams:
    """Weights of the reformulation score.

    alpha rewards title terms, beta damps added topic terms, epsilon scales
    the idf of added non-topic terms and delta penalizes removed terms.
    ``m`` caps how many of the top candidate terms are combined (None = all).
    """

    alpha: float
    beta: float
    epsilon: float
    delta: float
    ngram_sizes: Tuple[int, ...] = (3, 4, 5)
    m: Optional[int] = None

    def __post_init__(self):
        for name in ("alpha", "beta", "epsilon", "delta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        sizes = tuple(sorted(set(self.ngram_sizes)))
        if not sizes or sizes[0] < 1:
            raise ValueError("ngram_sizes must be non-empty and >= 1")
        object.__setattr__(self, "ngram_sizes", sizes)
        if self.m is not None and self.m < sizes[-1]:
            raise ValueError(f"vocabulary cap m={self.m} is below the largest n-gram size")


QCM_PRESETS: Dict[Strategy, QcmParams] = {
    Strategy.S4: QcmParams(alpha=2.2, beta=0.2, epsilon=0.05, delta=0.6),
    Strategy.S4P: QcmParams(alpha=2.2, beta=0.2, epsilon=0.25, delta=0.1),
    Strategy.S4PP: QcmParams(alpha=0.2, beta=0.2, epsilon=0.025, delta=0.5),
}

KIS_VOCAB_CAP = 20
TTS_TOPIC_PLUS_REL_K = 4


@dataclass(frozen=True)
class SimulatorSpec:
    label: str
    source: str  # TOPIC | REL | TOPIC_PLUS_REL
    strategy: Strategy
    n_queries: int = 10
    k: int = TTS_TOPIC_PLUS_REL_K
    params: Optional[QcmParams] = None
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if self.source not in (TOPIC, REL, TOPIC_PLUS_REL):
            raise ValueError(f"unknown candidate source {self.source!r}")
        if self.n_queries < 1:
            raise ValueError("n_queries must be >= 1")
        if self.strategy.is_qcm:
            if self.source == TOPIC:
                raise ValueError("QCM strategies draw from REL or TOPIC_PLUS_REL candidates")
            if self.params is None:
                object.__setattr__(self, "params", QCM_PRESETS[self.strategy])
        else:
            if self.source == TOPIC_PLUS_REL:
                raise ValueError("conventional strategies draw from TOPIC or REL candidates")
            if self.params is not None:
                raise ValueError("conventional strategies take no QCM parameters")
        if self.source == TOPIC_PLUS_REL and self.k < 0:
            raise ValueError("k must be >= 0")

    @property
    def searcher(self) -> str:
        return "KIS" if self.source == REL else "TTS"

    @property
    def needs_qrels(self) -> bool:
        return self.source != TOPIC

    @property
    def vocab_cap(self) -> Optional[int]:
        if self.params is not None and self.params.m is not None:
            return self.params.m
        return KIS_VOCAB_CAP if self.source == REL else None


def simulator(name: str, n_queries: int = 10, **overrides) -> SimulatorSpec:
    """Build one of the sixteen named simulators, e.g. ``TTS_S2P`` or ``KIS_S4PP``."""
    searcher, _, strat = name.partition("_")
    strategy = Strategy(strat)
    if searcher == "TTS":
        source = TOPIC_PLUS_REL if strategy.is_qcm else TOPIC
    elif searcher == "KIS":
        source = REL
    else:
        raise ValueError(f"unknown simulator {name!r}")
    return SimulatorSpec(label=name, source=source, strategy=strategy, n_queries=n_queries, **overrides)


SIMULATOR_NAMES = [f"{s}_{x.value}" for s in ("TTS", "KIS") for x in Strategy]


@dataclass
class SimulatedSession:
    topic_id: str
    queries: List[Query]
    spec: Optional[SimulatorSpec] = None

    def strings(self) -> List[str]:
        return [query_string(q) for q in self.queries]


# -- conventional strategies -------------------------------------------------------


def _pattern(strategy: Strategy, i: int, terms: Sequence[str]) -> Optional[Query]:
    """Query i (1-based) of a conventional strategy, or None if terms run out."""
    needed = {
        Strategy.S1: i,
        Strategy.S2: i + 1,
        Strategy.S2P: i + 2,
        Strategy.S3: i,
        Strategy.S3P: i + 2,
    }[strategy]
    if needed > len(terms):
        return None
    t = terms
    if strategy is Strategy.S1:
        return (t[i - 1],)
    if strategy is Strategy.S2:
        return (t[0], t[i])
    if strategy is Strategy.S2P:
        return (t[0], t[1], t[i + 1])
    if strategy is Strategy.S3:
        return tuple(t[:i])
    return tuple(t[:i + 2])


def generate_conventional(candidates, strategy, n: int) -> List[Query]:
    """Apply a conventional pattern to an ordered candidate list.

    S1: {t_i}; S2: {t_1, t_i+1}; S2': {t_1, t_2, t_i+2}; S3: {t_1..t_i};
    S3': {t_1..t_i+2}. Fewer than ``n`` queries come back (with a warning)
    when the list is too short.
    """
    strategy = Strategy(strategy)
    if strategy.is_qcm:
        raise ValueError(f"{strategy.value} is not a conventional strategy")
    terms = candidates.words if isinstance(candidates, CandidateList) else list(candidates)
    out = []
    for i in range(1, n + 1):
        q = _pattern(strategy, i, terms)
        if q is None:
            break
        out.append(q)
    if len(out) < n:
        warnings.warn(
            f"{strategy.value}: only {len(out)} of {n} queries from {len(terms)} candidate terms",
            SimulationWarning,
            stacklevel=2,
        )
    return out


# -- QCM-scored strategies ---------------------------------------------------------


def enumerate_query_candidates(terms, sizes: Sequence[int], m: Optional[int] = None) -> List[Query]:
    """All combinations of the top-``m`` terms with a size in ``sizes``, in candidate order."""
    words = terms.words if isinstance(terms, CandidateList) else list(terms)
    sizes = sorted(set(sizes))
    if m is not None:
        if m < max(sizes):
            raise ValueError(f"cap m={m} is below the largest size {max(sizes)}")
        words = words[:m]
    out: List[Query] = []
    for s in sizes:
        out.extend(itertools.combinations(words, s))
    return out


@dataclass
class QcmContext:
    """Everything the term score needs besides the two queries."""

    title: frozenset  # stems of the title terms
    topic: frozenset  # stems of all topic terms
    model: TermDistribution  # mixture model over stems
    idf: Callable[[str], float]
    params: QcmParams

    @classmethod
    def build(cls, topic: Topic, model: TermDistribution, index: PostingsIndex, params: QcmParams):
        return cls(
            title=frozenset(stem(t) for t in title_terms(topic)),
            topic=frozenset(topic_stems(topic)),
            model=model,
            idf=lambda t: idf(index, t),
            params=params,
        )


def qcm_theta(term: str, candidate: Sequence[str], reference: Sequence[str], ctx: QcmContext) -> float:
    """Score of one term of a reformulation ``reference -> candidate``.

    Terms of the candidate: title terms get alpha * (1 - P); added topic terms
    get 1 - beta * P; added non-topic terms get epsilon * idf; kept
    non-title terms get 0. Terms dropped from the reference get -delta * P.
    """
    st = stem(term)
    p = ctx.model.prob(st)
    par = ctx.params
    in_candidate = st in {stem(t) for t in candidate}
    in_reference = st in {stem(t) for t in reference}
    if in_candidate:
        if st in ctx.title:
            return par.alpha * (1.0 - p)
        if not in_reference:
            if st in ctx.topic:
                return 1.0 - par.beta * p
            return par.epsilon * ctx.idf(term)
        return 0.0
    if in_reference:
        return -par.delta * p
    return 0.0


def qcm_query_score(candidate: Sequence[str], reference: Sequence[str], ctx: QcmContext) -> float:
    """Sum of term scores over the candidate and the removed terms, divided by ``len(candidate)``."""
    if not candidate:
        raise ValueError("cannot score an empty candidate query")
    cand_stems = {stem(t) for t in candidate}
    total = 0.0
    for t in candidate:
        total += qcm_theta(t, candidate, reference, ctx)
    removed = {}
    for t in reference:
        st = stem(t)
        if st not in cand_stems and st not in removed:
            removed[st] = t
    for t in removed.values():
        total += qcm_theta(t, candidate, reference, ctx)
    return total / len(candidate)


@lru_cache(maxsize=32)
def _combination_table(n: int, size: int) -> np.ndarray:
    count = math.comb(n, size)
    flat = np.fromiter(
        itertools.chain.from_iterable(itertools.combinations(range(n), size)),
        dtype=np.int16,
        count=count * size,
    )
    table = flat.reshape(count, size)
    table.setflags(write=False)
    return table


class _QcmSearch:
    """Vectorized greedy search over every candidate combination.

    The score of a candidate c against reference r decomposes as
    ``(sum_{t in c} w_r(t) + R_r) / |c|`` where ``w_r`` is the term's
    candidate-side score plus ``delta * P`` when the term also occurs in r,
    and ``R_r`` is the total removal penalty of all reference terms.
    """

    def __init__(self, pool: CandidateList, ctx: QcmContext):
        self.words = pool.words
        self.stems = pool.stems
        self.ctx = ctx
        n = len(self.words)
        self.sizes = [s for s in ctx.params.ngram_sizes if s <= n]
        self.tables = {s: _combination_table(n, s) for s in self.sizes}
        self.used = {s: np.zeros(len(self.tables[s]), dtype=bool) for s in self.sizes}
        alpha_order = sorted(range(n), key=lambda i: self.words[i])
        self.alpha_rank = np.empty(n, dtype=np.int64)
        self.alpha_rank[alpha_order] = np.arange(n)
        par = ctx.params
        self.p = np.array([ctx.model.prob(s) for s in self.stems])
        self.is_title = np.array([s in ctx.title for s in self.stems])
        self.is_topic = np.array([s in ctx.topic for s in self.stems])
        idf_vals = np.array([ctx.idf(w) for w in self.words]) if n else np.zeros(0)
        self.added_score = np.where(self.is_topic, 1.0 - par.beta * self.p, par.epsilon * idf_vals)
        self.title_score = par.alpha * (1.0 - self.p)

    def weights(self, reference: Sequence[str]) -> Tuple[np.ndarray, float]:
        par = self.ctx.params
        ref_stems = unique_terms(stem(t) for t in reference)
        ref_set = set(ref_stems)
        in_ref = np.array([s in ref_set for s in self.stems], dtype=bool)
        kept_or_added = np.where(in_ref, 0.0, self.added_score)
        w = np.where(self.is_title, self.title_score, kept_or_added)
        w = w + np.where(in_ref, par.delta * self.p, 0.0)
        removal = -par.delta * math.fsum(self.ctx.model.prob(s) for s in ref_stems)
        return w, removal

    def step(self, reference: Sequence[str]) -> Optional[Query]:
        w, removal = self.weights(reference)
        scores = {}
        best = -math.inf
        for s in self.sizes:
            sc = (w[self.tables[s]].sum(axis=1) + removal) / s
            sc[self.used[s]] = -math.inf
            scores[s] = sc
            if sc.size:
                best = max(best, float(sc.max()))
        if best == -math.inf:
            return None
        for s in self.sizes:  # ascending: shorter queries win ties
            tied = np.flatnonzero(scores[s] >= best - TIE_TOLERANCE)
            if tied.size == 0:
                continue
            # compare term sets by their alphabetically sorted words
            ranks = np.sort(self.alpha_rank[self.tables[s][tied]], axis=1)
            pick = tied[np.lexsort(ranks.T[::-1])[0]]
            self.used[s][pick] = True
            return tuple(self.words[i] for i in self.tables[s][pick])
        raise AssertionError("best score not found in any size bucket")


def select_best(candidates: Sequence[Query], score: Callable[[Query], float]) -> Optional[Query]:
    """Argmax with the session tie rule: within TIE_TOLERANCE of the best,
    prefer fewer terms, then the smallest alphabetically sorted term tuple."""
    scored = [(score(c), c) for c in candidates]
    if not scored:
        return None
    best = max(s for s, _ in scored)
    tied = [c for s, c in scored if s >= best - TIE_TOLERANCE]
    return min(tied, key=lambda c: (len(c), tuple(sorted(c))))


def qcm_pool(spec: SimulatorSpec, topic: Topic, rel: CandidateList) -> CandidateList:
    if spec.source == TOPIC_PLUS_REL:
        pool = candidates_topic_plus_rel(topic, rel, spec.k)
    else:
        pool = rel
    cap = spec.vocab_cap
    return pool.top(cap) if cap is not None else pool


def simulate_qcm(
    spec: SimulatorSpec,
    topic: Topic,
    qrels: Qrels,
    index: PostingsIndex,
    background: Optional[TermDistribution] = None,
) -> SimulatedSession:
    if not spec.strategy.is_qcm:
        raise ValueError(f"{spec.label} is not a QCM simulator")
    rel, model = candidates_rel(index, qrels, topic.id, spec.lam, background)
    pool = qcm_pool(spec, topic, rel)
    ctx = QcmContext.build(topic, model, index, spec.params)
    search = _QcmSearch(pool, ctx)
    reference: Sequence[str] = title_terms(topic)
    queries: List[Query] = []
    for _ in range(spec.n_queries):
        q = search.step(reference)
        if q is None:
            warnings.warn(
                f"{spec.label}: candidate pool of topic {topic.id!r} exhausted after {len(queries)} queries",
                SimulationWarning,
                stacklevel=2,
            )
            break
        queries.append(q)
        reference = q
    return SimulatedSession(topic.id, queries, spec)


def simulate(
    spec: SimulatorSpec,
    topic: Topic,
    index: Optional[PostingsIndex] = None,
    qrels: Optional[Qrels] = None,
    background: Optional[TermDistribution] = None,
) -> SimulatedSession:
    """Simulate one session of ``spec.n_queries`` queries for ``topic``."""
    if spec.needs_qrels and (index is None or qrels is None):
        raise ValueError(f"{spec.label} needs an index and qrels")
    if spec.strategy.is_qcm:
        return simulate_qcm(spec, topic, qrels, index, background)
    if spec.source == TOPIC:
        cands = candidates_topic(topic)
    else:
        cands, _ = candidates_rel(index, qrels, topic.id, spec.lam, background)
    queries = generate_conventional(cands, spec.strategy, spec.n_queries)
    return SimulatedSession(topic.id, queries, spec)


def sessions_to_uqv(sessions: Sequence[SimulatedSession], label: Optional[str] = None) -> QueryVariantSet:
    uqv = QueryVariantSet()
    for sess in sessions:
        if sess.queries:
            source = label or (sess.spec.label if sess.spec else "SIM")
            uqv.add(sess.topic_id, source, sess.strings())
    return uqv


# -- sessions against an index -------------------------------------------------------


def as_terms(query) -> List[str]:
    """Accept a raw query string or an already-normalized term sequence."""
    return normalize(query) if isinstance(query, str) else list(query)


def search_session(queries, index: PostingsIndex, search, depth: int, topic_id: str) -> List[RankedList]:
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return [search(index, as_terms(q), cutoff=depth, topic_id=topic_id) for q in queries]


def pool_runs(runs: Sequence[RankedList], topic_id: str, depth: Optional[int] = None) -> RankedList:
    """Concatenate per-query rankings, dropping documents seen in earlier queries.

    Only the first ``depth`` entries of each ranking count. Scores of a later
    block are shifted below the previous block when needed, so the pooled list
    keeps non-increasing scores in (query, rank) order.
    """
    seen = set()
    entries: List[Tuple[str, float]] = []
    for run in runs:
        block = []
        for doc_id, score in (run.entries if depth is None else run.entries[:depth]):
            if doc_id not in seen:
                seen.add(doc_id)
                block.append((doc_id, score))
        if not block:
            continue
        if entries:
            floor = entries[-1][1]
            top = block[0][1]
            if top >= floor:
                shift = floor - top - 1.0
                block = [(d, s + shift) for d, s in block]
        entries.extend(block)
    cutoff = max(len(entries), 1)
    return RankedList(topic_id, entries, cutoff)


def run_session(queries, index: PostingsIndex, search, depth: int, topic_id: str = "") -> RankedList:
    """Pooled ranking of a whole session, ``depth`` documents retrieved per query."""
    return pool_runs(search_session(queries, index, search, depth, topic_id), topic_id)
