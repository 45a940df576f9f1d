"""Small synthetic test collections for demos and tests.

Each topic owns a set of *discriminative* terms that its relevant documents
use heavily, and a set of *topical* terms that also appear in off-topic
distractor documents. Topic statements are written mostly in topical terms,
so queries built from topic text are weaker than queries built from the
relevant documents.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from uqvsim.collection import QueryVariantSet, Qrels, Topic


@dataclass
class SyntheticCollection:
    docs: List[Tuple[str, str]]
    topics: List[Topic]
    qrels: Qrels
    uqv: QueryVariantSet
    vocab: Dict[str, List[str]] = field(default_factory=dict)


def _background_word(i: int) -> str:
    return f"g{i:04d}"


def generate_collection(
    n_docs: int = 500,
    n_topics: int = 20,
    seed: int = 13,
    rel_per_topic: int = 10,
    distractors_per_topic: int = 10,
    n_background: int = 2000,
    n_discriminative: int = 12,
    n_topical: int = 8,
    doc_length: Tuple[int, int] = (80, 160),
    n_users: int = 3,
    queries_per_user: int = 10,
) -> SyntheticCollection:
    rng = np.random.default_rng(seed)
    if n_topics * (rel_per_topic + distractors_per_topic) > n_docs:
        raise ValueError("not enough documents for the requested topics")

    ranks = np.arange(1, n_background + 1)
    zipf = 1.0 / ranks
    zipf /= zipf.sum()
    background = [_background_word(i) for i in range(n_background)]

    def filler(n: int) -> List[str]:
        return [background[i] for i in rng.choice(n_background, size=n, p=zipf)]

    disc = {t: [f"t{t:02d}d{j:02d}" for j in range(n_discriminative)] for t in range(n_topics)}
    topical = {t: [f"t{t:02d}k{j:02d}" for j in range(n_topical)] for t in range(n_topics)}

    docs: List[Tuple[str, str]] = []
    qrels = Qrels()
    ordinal = 0

    def add_doc(words: List[str]) -> str:
        nonlocal ordinal
        doc_id = f"doc{ordinal:05d}"
        ordinal += 1
        order = rng.permutation(len(words))
        docs.append((doc_id, " ".join(words[i] for i in order)))
        return doc_id

    for t in range(n_topics):
        tid = str(301 + t)
        d_weights = 1.0 / np.arange(1, n_discriminative + 1)
        d_weights /= d_weights.sum()
        for _ in range(rel_per_topic):
            length = int(rng.integers(*doc_length))
            n_disc = int(length * rng.uniform(0.15, 0.3))
            n_top = int(length * rng.uniform(0.03, 0.08))
            words = [disc[t][i] for i in rng.choice(n_discriminative, size=n_disc, p=d_weights)]
            words += [topical[t][i] for i in rng.integers(0, n_topical, size=n_top)]
            words += filler(length - n_disc - n_top)
            doc_id = add_doc(words)
            qrels.set(tid, doc_id, int(rng.choice([1, 2], p=[0.6, 0.4])))
        for _ in range(distractors_per_topic):
            length = int(rng.integers(*doc_length))
            n_top = int(length * rng.uniform(0.1, 0.2))
            words = [topical[t][i] for i in rng.integers(0, n_topical, size=n_top)]
            words += filler(length - n_top)
            doc_id = add_doc(words)
            qrels.set(tid, doc_id, 0)

    while ordinal < n_docs:
        add_doc(filler(int(rng.integers(*doc_length))))

    topics = []
    for t in range(n_topics):
        tid = str(301 + t)
        k = topical[t]
        d = disc[t]
        title = f"{k[0]} {k[1]} {d[0]}"
        description = f"Documents about {k[2]} and {k[0]} {k[3]} in {background[5]} {background[9]}."
        narrative = (
            f"A relevant document discusses {k[4]} {k[1]} or {d[1]}; mentions of {k[5]} "
            f"alone or of {background[2]} {background[14]} are not relevant."
        )
        topics.append(Topic(tid, title, description, narrative))

    uqv = QueryVariantSet()
    for t, topic in enumerate(topics):
        pool_topic = topical[t][:6]
        pool_disc = disc[t][:6]
        for u in range(1, n_users + 1):
            # users differ in how often they recall document vocabulary
            recall = 0.15 + 0.2 * (u - 1)
            queries = []
            seen = set()
            attempts = 0
            while len(queries) < queries_per_user and attempts < 200:
                attempts += 1
                size = int(rng.integers(2, 5))
                words = []
                for _ in range(size):
                    src = pool_disc if rng.random() < recall else pool_topic
                    words.append(src[int(rng.integers(0, len(src)))])
                words = list(dict.fromkeys(words))
                q = " ".join(words)
                if q not in seen:
                    seen.add(q)
                    queries.append(q)
            uqv.add(topic.id, f"UQV_{u}", queries)

    return SyntheticCollection(docs, topics, qrels, uqv, {"background": background})
