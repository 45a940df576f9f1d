"""Effectiveness measures and the measures comparing two query sources.

Per-ranking measures follow trec_eval conventions: binary relevance at
grade >= 1 for AP and P@k, raw grades with a ``1/log2(i + 1)`` discount for
nDCG.
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from uqvsim.collection import EvalMatrix, Qrels
from uqvsim.measures import MeasureId, parse_measure
from uqvsim.retrieval import RankedList
from uqvsim.simulate import pool_runs, search_session
from uqvsim.text import normalize

MISS = None


class EvaluationWarning(UserWarning):
    pass


def _doc_ids(run) -> List[str]:
    return run.doc_ids if isinstance(run, RankedList) else list(run)


# -- single-ranking measures ---------------------------------------------------------


def average_precision(run, qrels: Qrels, topic: str) -> float:
    relevant = set(qrels.relevant(topic))
    if not relevant:
        warnings.warn(f"topic {topic!r} has no relevant documents; AP = 0", EvaluationWarning, stacklevel=2)
        return 0.0
    hits = 0
    total = 0.0
    for i, doc in enumerate(_doc_ids(run), 1):
        if doc in relevant:
            hits += 1
            total += hits / i
    return total / len(relevant)


def dcg(grades: Sequence[float]) -> float:
    return math.fsum(g / math.log2(i + 1) for i, g in enumerate(grades, 1) if g)


def ndcg(run, qrels: Qrels, topic: str, cutoff: Optional[int] = None) -> float:
    judged = qrels.grades(topic)
    docs = _doc_ids(run)
    if cutoff is not None:
        docs = docs[:cutoff]
    ideal = sorted((g for g in judged.values() if g > 0), reverse=True)
    if cutoff is not None:
        ideal = ideal[:cutoff]
    idcg = dcg(ideal)
    if idcg == 0:
        warnings.warn(f"topic {topic!r} has zero ideal DCG; nDCG = 0", EvaluationWarning, stacklevel=2)
        return 0.0
    return dcg([judged.get(d, 0) for d in docs]) / idcg


def precision_at(run, qrels: Qrels, topic: str, k: int) -> float:
    """Relevant documents in the top ``k`` divided by ``k``, also for shorter runs."""
    if k < 1:
        raise ValueError("k must be >= 1")
    relevant = set(qrels.relevant(topic))
    return sum(1 for d in _doc_ids(run)[:k] if d in relevant) / k


def evaluate_run(run, qrels: Qrels, topic: str, measures: Sequence) -> Dict[str, float]:
    """Score one ranking under every non-session measure in ``measures``."""
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EvaluationWarning)
        for m in measures:
            mid = m if isinstance(m, MeasureId) else parse_measure(m)
            if mid.kind == "AP":
                out[mid.name] = average_precision(run, qrels, topic)
            elif mid.kind == "NDCG":
                out[mid.name] = ndcg(run, qrels, topic, mid.cutoff)
            elif mid.kind == "P":
                out[mid.name] = precision_at(run, qrels, topic, mid.cutoff)
            else:
                raise ValueError(f"{mid.name} scores sessions, not single rankings")
    return out


def score_runs(
    runs: Mapping[Tuple[str, int], RankedList],
    qrels: Qrels,
    measures: Sequence,
    metadata: Optional[Mapping[str, str]] = None,
) -> EvalMatrix:
    """EvalMatrix from ``(topic, query index) -> ranking``."""
    matrix = EvalMatrix(metadata=dict(metadata or {}))
    for (topic, qidx), run in sorted(runs.items()):
        for name, value in evaluate_run(run, qrels, topic, measures).items():
            matrix.set(topic, qidx, name, value)
    return matrix


# -- aggregation ---------------------------------------------------------------------

ALL, FIRST, BEST = "all", "first", "best"


def arp(matrix: EvalMatrix, mode: str = ALL) -> Dict[str, float]:
    """Average retrieval performance per measure over all, first or best queries."""
    if not matrix.scores:
        raise ValueError("empty evaluation matrix")
    mode = mode.lower()
    per_measure: Dict[str, Dict[str, Dict[int, float]]] = {}
    for (topic, qidx, m), v in matrix.scores.items():
        if not math.isnan(v):
            per_measure.setdefault(m, {}).setdefault(topic, {})[qidx] = v
    out = {}
    for m, by_topic in sorted(per_measure.items()):
        if mode == ALL:
            vals = [v for qs in by_topic.values() for v in qs.values()]
        elif mode == FIRST:
            missing = sorted(t for t, qs in by_topic.items() if 1 not in qs)
            if missing:
                raise ValueError(f"{m}: no first-query score for topics {missing}")
            vals = [qs[1] for qs in by_topic.values()]
        elif mode == BEST:
            vals = [max(qs.values()) for qs in by_topic.values()]
        else:
            raise ValueError(f"unknown ARP mode {mode!r}")
        out[m] = math.fsum(vals) / len(vals)
    return out


def query_count(matrix: EvalMatrix, mode: str = ALL) -> int:
    keys = {(t, q) for t, q, _ in matrix.scores}
    if mode == ALL:
        return len(keys)
    return len({t for t, _ in keys})


# -- reproducibility ---------------------------------------------------------------------


def _paired(a: Mapping[str, float], b: Mapping[str, float]) -> Tuple[List[float], List[float]]:
    if set(a) != set(b):
        only_a = sorted(set(a) - set(b))
        only_b = sorted(set(b) - set(a))
        raise ValueError(f"topic sets differ: only in first {only_a}, only in second {only_b}")
    keys = sorted(a)
    return [a[k] for k in keys], [b[k] for k in keys]


def rmse(sim: Mapping[str, float], ref: Mapping[str, float]) -> float:
    xs, ys = _paired(sim, ref)
    if not xs:
        raise ValueError("no topics to compare")
    return math.sqrt(math.fsum((x - y) ** 2 for x, y in zip(xs, ys)) / len(xs))


def _betacf(a: float, b: float, x: float) -> float:
    # Continued fraction for the incomplete beta function (modified Lentz).
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, 1000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must be in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, dof: float) -> float:
    if math.isinf(t):
        return 0.0
    return betainc(dof / 2.0, 0.5, dof / (dof + t * t))


def paired_ttest(sim: Mapping[str, float], ref: Mapping[str, float]) -> float:
    """Two-sided p-value of a paired t-test over the shared topics.

    All-zero differences give p = 1; constant non-zero differences give p = 0.
    """
    xs, ys = _paired(sim, ref)
    n = len(xs)
    if n < 2:
        raise ValueError("paired t-test needs at least two topics")
    diffs = [x - y for x, y in zip(xs, ys)]
    mean = math.fsum(diffs) / n
    var = math.fsum((d - mean) ** 2 for d in diffs) / (n - 1)
    if var == 0.0:
        return 1.0 if mean == 0.0 else 0.0
    t = mean / math.sqrt(var / n)
    return t_two_sided_p(t, n - 1)


def bonferroni_alpha(alpha: float, comparisons: int) -> float:
    return alpha / max(comparisons, 1)


# -- system orderings ---------------------------------------------------------------------


def system_ordering(scores: Mapping[str, float]) -> List[str]:
    """Systems by score descending, ties by label ascending."""
    if len(scores) < 2:
        raise ValueError("an ordering needs at least two systems")
    return sorted(scores, key=lambda s: (-scores[s], s))


def kendall_tau(order_a: Sequence[str], order_b: Sequence[str]) -> float:
    """Kendall's tau between two tie-free orderings of the same systems."""
    if set(order_a) != set(order_b) or len(order_a) != len(order_b) or len(set(order_a)) != len(order_a):
        raise ValueError(f"orderings cover different systems: {list(order_a)} vs {list(order_b)}")
    n = len(order_a)
    if n < 2:
        raise ValueError("kendall's tau needs at least two systems")
    pos_b = {s: i for i, s in enumerate(order_b)}
    concordant = discordant = 0
    for i in range(n):
        for j in range(i + 1, n):
            if pos_b[order_a[i]] < pos_b[order_a[j]]:
                concordant += 1
            else:
                discordant += 1
    return (concordant - discordant) / (n * (n - 1) / 2)


# -- sessions --------------------------------------------------------------------------------


def sdcg(
    session_runs: Sequence,
    qrels: Qrels,
    topic: str,
    b: float = 2.0,
    bq: float = 4.0,
    depth: Optional[int] = None,
) -> float:
    """Session DCG with rank discount ``max(1, log_b i)`` and query discount ``1 + log_bq j``.

    A document already seen at an earlier query adds no gain; its rank
    position still counts.
    """
    if not (b > 1 and bq > 1):
        raise ValueError("sDCG needs b > 1 and bq > 1")
    judged = qrels.grades(topic)
    seen = set()
    total = 0.0
    for j, run in enumerate(session_runs, 1):
        docs = _doc_ids(run)
        if depth is not None:
            docs = docs[:depth]
        gain = 0.0
        for i, doc in enumerate(docs, 1):
            if doc in seen:
                continue
            seen.add(doc)
            g = judged.get(doc, 0)
            if g:
                gain += g / max(1.0, math.log(i, b))
        total += gain / (1.0 + math.log(j, bq))
    return total


@dataclass
class Isoquant:
    """Minimal per-query depth reaching ``gain_level`` for 1..Q queries (None = MISS)."""

    gain_level: float
    points: Dict[int, Optional[int]] = field(default_factory=dict)

    def shared(self, other: "Isoquant") -> Tuple[List[int], List[int]]:
        """Query counts present on both sides, and those excluded because one side misses."""
        keys = sorted(set(self.points) & set(other.points))
        ok = [q for q in keys if self.points[q] is not None and other.points[q] is not None]
        return ok, [q for q in keys if q not in ok]

    def to_json(self) -> dict:
        return {"gain_level": self.gain_level, "points": {str(q): d for q, d in sorted(self.points.items())}}


class SessionGain:
    """Mean pooled-session nDCG over topics as a function of (queries, depth).

    Each query is retrieved once at ``max_depth``; shallower depths reuse the
    prefix of that ranking.
    """

    def __init__(self, sessions: Mapping[str, Sequence], index, qrels: Qrels, search, max_depth: int,
                 topics: Optional[Sequence[str]] = None):
        if max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        self.qrels = qrels
        self.max_depth = max_depth
        self.topics = sorted(topics if topics is not None else sessions)
        self.runs = {
            t: search_session(sessions.get(t, []), index, search, max_depth, t) for t in self.topics
        }
        self._cache: Dict[Tuple[int, int], float] = {}

    def __call__(self, n_queries: int, depth: int) -> float:
        key = (n_queries, depth)
        if key not in self._cache:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", EvaluationWarning)
                vals = [
                    ndcg(pool_runs(self.runs[t][:n_queries], t, depth), self.qrels, t)
                    for t in self.topics
                ]
            self._cache[key] = math.fsum(vals) / len(vals) if vals else 0.0
        return self._cache[key]


def _min_depth_linear(f: Callable[[int], float], level: float, max_depth: int) -> Optional[int]:
    for d in range(1, max_depth + 1):
        if f(d) >= level:
            return d
    return MISS


def _min_depth_search(f: Callable[[int], float], level: float, max_depth: int) -> Optional[int]:
    # Exponential probe for an upper bracket, then binary search inside it.
    lo, hi = 0, 1
    while hi < max_depth and f(hi) < level:
        lo, hi = hi, min(2 * hi, max_depth)
    if f(hi) < level:
        return MISS
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if f(mid) >= level:
            hi = mid
        else:
            lo = mid
    return hi


def isoquant(
    gain: SessionGain,
    gain_level: float,
    max_queries: int,
    max_depth: Optional[int] = None,
    method: str = "search",
) -> Isoquant:
    """For each query count, the smallest per-query depth whose mean nDCG reaches ``gain_level``."""
    if not 0.0 < gain_level < 1.0:
        raise ValueError("gain_level must be in (0, 1)")
    max_depth = gain.max_depth if max_depth is None else min(max_depth, gain.max_depth)
    find = {"search": _min_depth_search, "linear": _min_depth_linear}[method]
    points = {}
    for q in range(1, max_queries + 1):
        points[q] = find(lambda d: gain(q, d), gain_level, max_depth)
    return Isoquant(gain_level, points)


def msle(iso_a: Isoquant, iso_b: Isoquant) -> float:
    """Mean squared log error ``(ln(1 + d_a) - ln(1 + d_b))^2`` over points where neither side misses."""
    ok, excluded = iso_a.shared(iso_b)
    if excluded:
        warnings.warn(f"MSLE skips query counts {excluded} (MISS on one side)", EvaluationWarning, stacklevel=2)
    if not ok:
        raise ValueError("isoquants share no attainable points")
    errs = [(math.log1p(iso_a.points[q]) - math.log1p(iso_b.points[q])) ** 2 for q in ok]
    return math.fsum(errs) / len(errs)


# -- term similarity ---------------------------------------------------------------------------


def jaccard_terms(queries_a: Sequence[str], queries_b: Sequence[str]) -> float:
    """Jaccard similarity of the unique normalized terms of two query lists.

    The longer list is cut to the length of the shorter one first, keeping
    the earliest queries.
    """
    if not queries_a or not queries_b:
        raise ValueError("both query lists must be non-empty")
    n = min(len(queries_a), len(queries_b))

    def terms(qs):
        out = set()
        for q in qs[:n]:
            out.update(normalize(q) if isinstance(q, str) else q)
        return out

    a, b = terms(queries_a), terms(queries_b)
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)

