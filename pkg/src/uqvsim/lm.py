"""Term distributions and term-candidate lists for query simulation.

The background, topic and mixture models live in the stemmed index
vocabulary. Candidate lists hold readable surface terms; stems are used
whenever membership between topic text and index vocabulary is tested.
"""

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

from uqvsim.collection import Qrels, Topic
from uqvsim.index import PostingsIndex
from uqvsim.text import normalize, stem, unique_terms

DEFAULT_LAMBDA = 0.4

TOPIC = "TOPIC"
REL = "REL"
TOPIC_PLUS_REL = "TOPIC_PLUS_REL"


class NoRelevantDocumentsError(ValueError):
    def __init__(self, topic_id: str):
        super().__init__(f"topic {topic_id!r} has no judged-relevant documents in the index")
        self.topic_id = topic_id


class TermDistribution:
    """A normalized term -> probability table with strictly positive support."""

    def __init__(self, probs: Mapping[str, float], tol: float = 1e-9):
        self.probs: Dict[str, float] = {t: float(p) for t, p in probs.items() if p > 0}
        if any(p < 0 for p in probs.values()):
            raise ValueError("negative probability")
        total = math.fsum(self.probs.values())
        if abs(total - 1.0) > tol:
            raise ValueError(f"probabilities sum to {total!r}, not 1")

    @classmethod
    def from_counts(cls, counts: Mapping[str, int]) -> "TermDistribution":
        total = sum(counts.values())
        if total <= 0:
            raise ValueError("cannot normalize empty counts")
        return cls({t: c / total for t, c in counts.items()})

    @property
    def support_size(self) -> int:
        return len(self.probs)

    def prob(self, term: str) -> float:
        return self.probs.get(term, 0.0)

    def __contains__(self, term: str) -> bool:
        return term in self.probs

    def ranked(self) -> List[Tuple[str, float]]:
        """Terms by probability descending, then term ascending."""
        return sorted(self.probs.items(), key=lambda kv: (-kv[1], kv[0]))

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["term", "probability"])
            for term, p in self.ranked():
                writer.writerow([term, repr(p)])


def background_model(index: PostingsIndex) -> TermDistribution:
    if index.total_tokens <= 0:
        raise ValueError("background model of an empty index")
    total = index.total_tokens
    return TermDistribution({t: cf / total for t, cf in index.cf.items()})


def relevant_ordinals(index: PostingsIndex, qrels: Qrels, topic_id: str) -> List[int]:
    return [index.ordinal[d] for d in qrels.relevant(topic_id) if d in index.ordinal]


def topic_model(index: PostingsIndex, qrels: Qrels, topic_id: str) -> TermDistribution:
    """Maximum-likelihood model of the concatenated relevant documents."""
    counts: Counter = Counter()
    for ordn in relevant_ordinals(index, qrels, topic_id):
        counts.update(index.doc_terms(ordn))
    if not counts:
        raise NoRelevantDocumentsError(topic_id)
    return TermDistribution.from_counts(counts)


def cqg_model(topic: TermDistribution, background: TermDistribution, lam: float = DEFAULT_LAMBDA) -> TermDistribution:
    """Pointwise mixture ``(1 - lam) * topic + lam * background``."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    support = set(topic.probs) | set(background.probs)
    return TermDistribution(
        {t: (1.0 - lam) * topic.prob(t) + lam * background.prob(t) for t in support}
    )


def idf(index: PostingsIndex, term: str) -> float:
    """``ln(N / df)``; a term missing from the index gets ``df = 0.5``."""
    if index.N == 0:
        raise ValueError("idf on an empty index")
    df = index.df.get(stem(term), 0)
    return math.log(index.N / (df if df > 0 else 0.5))


@dataclass
class CandidateList:
    """Ordered query-term candidates.

    ``terms`` are ``(surface term, weight)`` pairs. For REL-derived lists the
    weight is the mixture probability; for TOPIC lists it is a rank surrogate.
    """

    terms: List[Tuple[str, float]]
    source: str
    k: Optional[int] = None
    _stems: List[str] = field(default_factory=list, repr=False)

    def __post_init__(self):
        words = [t for t, _ in self.terms]
        if len(set(words)) != len(words):
            raise ValueError("candidate terms must be unique")
        self._stems = [stem(t) for t in words]

    @property
    def words(self) -> List[str]:
        return [t for t, _ in self.terms]

    @property
    def stems(self) -> List[str]:
        return list(self._stems)

    def __len__(self) -> int:
        return len(self.terms)

    def top(self, m: int) -> "CandidateList":
        return CandidateList(self.terms[:m], self.source, self.k)


def candidates_topic(topic: Topic) -> CandidateList:
    """Unique topic terms in order of first appearance in title, description, narrative."""
    terms = unique_terms(normalize(topic.text))
    if not terms:
        raise ValueError(f"topic {topic.id!r} has no terms left after normalization")
    n = len(terms)
    return CandidateList([(t, float(n - i)) for i, t in enumerate(terms)], TOPIC)


def candidates_rel(
    index: PostingsIndex,
    qrels: Qrels,
    topic_id: str,
    lam: float = DEFAULT_LAMBDA,
    background: Optional[TermDistribution] = None,
) -> Tuple[CandidateList, TermDistribution]:
    """Index vocabulary ranked by the mixture model; also returns the model."""
    bg = background if background is not None else background_model(index)
    model = cqg_model(topic_model(index, qrels, topic_id), bg, lam)
    ranked = sorted(
        ((index.surface_form(t), p) for t, p in model.probs.items()),
        key=lambda kv: (-kv[1], kv[0]),
    )
    return CandidateList(ranked, REL), model


def candidates_topic_plus_rel(topic: Topic, rel: CandidateList, k: int) -> CandidateList:
    """Topic terms present in ``rel`` plus the ``k`` best ``rel`` terms not in the topic.

    Membership is decided on stems. Topic terms keep their topic spelling and
    only the first topic term per stem is kept.
    """
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    weight = dict(zip(rel.stems, (w for _, w in rel.terms)))
    topic_stems = set()
    picked: List[Tuple[str, float]] = []
    for term in candidates_topic(topic).words:
        st = stem(term)
        if st in topic_stems:
            continue
        topic_stems.add(st)
        if st in weight:
            picked.append((term, weight[st]))
    extra = [(t, w) for (t, w), st in zip(rel.terms, rel.stems) if st not in topic_stems]
    picked.extend(extra[:k])
    picked.sort(key=lambda kv: (-kv[1], kv[0]))
    return CandidateList(picked, TOPIC_PLUS_REL, k)


def topic_stems(topic: Topic) -> set:
    return {stem(t) for t in normalize(topic.text)}


def title_terms(topic: Topic) -> List[str]:
    return unique_terms(normalize(topic.title))

