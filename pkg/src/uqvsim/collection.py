"""Readers and writers for topics, qrels, query variants and evaluation matrices."""

import csv
import json
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

from uqvsim.measures import parse_measure

RELEVANCE_THRESHOLD = 1


class CollectionFormatError(ValueError):
    """Malformed input file; the message carries path and line number."""


class DataWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Topic:
    id: str
    title: str
    description: str = ""
    narrative: str = ""

    @property
    def text(self) -> str:
        return " ".join((self.title, self.description, self.narrative))


def parse_topics(path) -> List[Topic]:
    """Read JSON-lines topics with ``id``, ``title``, ``description``, ``narrative``."""
    topics = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CollectionFormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise CollectionFormatError(f"{path}:{lineno}: topic record must be an object")
            for key in ("id", "title"):
                if key not in rec or not str(rec[key]).strip():
                    raise CollectionFormatError(f"{path}:{lineno}: topic record lacks {key!r}")
            topic = Topic(
                id=str(rec["id"]).strip(),
                title=str(rec["title"]).strip(),
                description=str(rec.get("description") or "").strip(),
                narrative=str(rec.get("narrative") or "").strip(),
            )
            if topic.id in seen:
                raise CollectionFormatError(f"{path}:{lineno}: duplicate topic id {topic.id!r}")
            seen.add(topic.id)
            topics.append(topic)
    return topics


def write_topics(topics: Iterable[Topic], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in topics:
            rec = {"id": t.id, "title": t.title, "description": t.description, "narrative": t.narrative}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


class Qrels:
    """Graded relevance judgments, ``topic -> doc -> grade``."""

    def __init__(self, judgments: Optional[Mapping[str, Mapping[str, int]]] = None):
        self.judgments: Dict[str, Dict[str, int]] = {}
        for topic, docs in (judgments or {}).items():
            for doc, grade in docs.items():
                self.set(topic, doc, grade)

    def set(self, topic: str, doc: str, grade: int) -> None:
        if grade < 0:
            raise ValueError(f"negative grade {grade} for ({topic}, {doc})")
        self.judgments.setdefault(topic, {})[doc] = int(grade)

    def grade(self, topic: str, doc: str) -> int:
        return self.judgments.get(topic, {}).get(doc, 0)

    def grades(self, topic: str) -> Dict[str, int]:
        return self.judgments.get(topic, {})

    def relevant(self, topic: str, threshold: int = RELEVANCE_THRESHOLD) -> List[str]:
        return sorted(d for d, g in self.grades(topic).items() if g >= threshold)

    def topics(self) -> List[str]:
        return sorted(self.judgments)

    def __contains__(self, topic: str) -> bool:
        return topic in self.judgments

    def __eq__(self, other) -> bool:
        return isinstance(other, Qrels) and self.judgments == other.judgments


def parse_qrels(path) -> Qrels:
    """Read 4-column qrels ``topic iteration docid grade``; a repeated pair keeps the last grade."""
    qrels = Qrels()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise CollectionFormatError(f"{path}:{lineno}: expected 4 columns, got {len(parts)}")
            topic, _, doc, grade_s = parts
            try:
                grade = int(grade_s)
            except ValueError:
                raise CollectionFormatError(f"{path}:{lineno}: non-integer grade {grade_s!r}") from None
            if grade < 0:
                raise CollectionFormatError(f"{path}:{lineno}: negative grade {grade}")
            if doc in qrels.grades(topic):
                warnings.warn(
                    f"{path}:{lineno}: duplicate judgment for ({topic}, {doc}); keeping the last",
                    DataWarning,
                    stacklevel=2,
                )
            qrels.set(topic, doc, grade)
    return qrels


def write_qrels(qrels: Qrels, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for topic in qrels.topics():
            for doc, grade in sorted(qrels.grades(topic).items()):
                fh.write(f"{topic} 0 {doc} {grade}\n")


class QueryVariantSet:
    """Ordered query formulations per ``(topic, source)``.

    Sources are real users (``UQV_1`` ...) or simulator labels. Queries are
    kept as raw strings; normalization happens at use.
    """

    def __init__(self, variants: Optional[Mapping[Tuple[str, str], List[str]]] = None):
        self.variants: Dict[Tuple[str, str], List[str]] = {}
        for key, queries in (variants or {}).items():
            self.add(key[0], key[1], queries)

    def add(self, topic: str, source: str, queries: List[str]) -> None:
        if not queries:
            raise ValueError(f"empty query list for ({topic}, {source})")
        if any(not q.strip() for q in queries):
            raise ValueError(f"empty query string for ({topic}, {source})")
        self.variants[(topic, source)] = list(queries)

    def queries(self, topic: str, source: str) -> List[str]:
        return self.variants.get((topic, source), [])

    def sources(self) -> List[str]:
        return sorted({s for _, s in self.variants})

    def topics(self, source: Optional[str] = None) -> List[str]:
        return sorted({t for t, s in self.variants if source is None or s == source})

    def by_source(self, source: str) -> Dict[str, List[str]]:
        return {t: q for (t, s), q in sorted(self.variants.items()) if s == source}

    def merge(self, other: "QueryVariantSet") -> "QueryVariantSet":
        merged = QueryVariantSet(self.variants)
        for (t, s), q in other.variants.items():
            if (t, s) in merged.variants:
                raise ValueError(f"source {s!r} defined twice for topic {t!r}")
            merged.add(t, s, q)
        return merged

    def __eq__(self, other) -> bool:
        return isinstance(other, QueryVariantSet) and self.variants == other.variants

    def __len__(self) -> int:
        return len(self.variants)


def parse_uqv(path) -> QueryVariantSet:
    """Read ``topic<TAB>source<TAB>seq<TAB>query`` lines.

    Sequence numbers of every ``(topic, source)`` group must be exactly
    ``1..n`` in any line order.
    """
    groups: Dict[Tuple[str, str], Dict[int, str]] = defaultdict(dict)
    first_line: Dict[Tuple[str, str], int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise CollectionFormatError(f"{path}:{lineno}: expected 4 tab-separated columns")
            topic, source, seq_s, query = (p.strip() for p in parts)
            if not topic or not source:
                raise CollectionFormatError(f"{path}:{lineno}: empty topic or source")
            try:
                seq = int(seq_s)
            except ValueError:
                raise CollectionFormatError(f"{path}:{lineno}: non-integer sequence {seq_s!r}") from None
            if not query:
                raise CollectionFormatError(f"{path}:{lineno}: empty query string")
            key = (topic, source)
            if seq in groups[key]:
                raise CollectionFormatError(f"{path}:{lineno}: repeated sequence {seq} for {key}")
            groups[key][seq] = query
            first_line.setdefault(key, lineno)

    uqv = QueryVariantSet()
    for key, seqs in groups.items():
        if sorted(seqs) != list(range(1, len(seqs) + 1)):
            raise CollectionFormatError(
                f"{path}:{first_line[key]}: sequence numbers of topic {key[0]!r} source {key[1]!r} "
                f"are not contiguous from 1: {sorted(seqs)}"
            )
        uqv.add(key[0], key[1], [seqs[i] for i in sorted(seqs)])
    return uqv


def write_uqv(uqv: QueryVariantSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (topic, source), queries in sorted(uqv.variants.items()):
            for seq, q in enumerate(queries, 1):
                fh.write(f"{topic}\t{source}\t{seq}\t{q}\n")


# -- evaluation matrices ---------------------------------------------------------


@dataclass
class EvalMatrix:
    """Scores keyed by ``(topic, query index, measure name)``; query index starts at 1."""

    scores: Dict[Tuple[str, int, str], float] = field(default_factory=dict)
    metadata: Dict[str, str] = field(default_factory=dict)

    def set(self, topic: str, qidx: int, measure: str, value: float) -> None:
        value = float(value)
        if not parse_measure(measure).in_range(value):
            raise ValueError(f"{measure} value {value} out of range for ({topic}, {qidx})")
        self.scores[(topic, int(qidx), measure)] = value

    def measures(self) -> List[str]:
        return sorted({m for _, _, m in self.scores})

    def topics(self) -> List[str]:
        return sorted({t for t, _, _ in self.scores})

    def query_indices(self, topic: str) -> List[int]:
        return sorted({q for t, q, _ in self.scores if t == topic})

    def get(self, topic: str, qidx: int, measure: str) -> Optional[float]:
        v = self.scores.get((topic, qidx, measure))
        return None if v is None or math.isnan(v) else v

    def topic_scores(self, measure: str, qidx: int = 1) -> Dict[str, float]:
        return {
            t: v for (t, q, m), v in self.scores.items()
            if m == measure and q == qidx and not math.isnan(v)
        }


def write_eval_matrix(matrix: EvalMatrix, path) -> None:
    """CSV with ``# key=value`` metadata lines, then a ``topic,query,<measures>`` table.

    Values are written with 10 significant digits; NaN becomes an empty cell.
    """
    measures = matrix.measures()
    for m in measures:
        parse_measure(m)
    rows = sorted({(t, q) for t, q, _ in matrix.scores}, key=lambda k: (k[0], k[1]))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for key, value in sorted(matrix.metadata.items()):
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["topic", "query"] + measures)
        for t, q in rows:
            cells = []
            for m in measures:
                v = matrix.scores.get((t, q, m))
                cells.append("" if v is None or math.isnan(v) else format(v, ".10g"))
            writer.writerow([t, q] + cells)


def read_eval_matrix(path) -> EvalMatrix:
    matrix = EvalMatrix()
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    body_start = 0
    for i, line in enumerate(lines):
        if line.startswith("#"):
            key, sep, value = line[1:].strip().partition("=")
            if not sep:
                raise CollectionFormatError(f"{path}:{i + 1}: metadata line needs key=value")
            matrix.metadata[key.strip()] = value.strip()
            body_start = i + 1
        else:
            break
    reader = csv.reader(lines[body_start:])
    try:
        header = next(reader)
    except StopIteration:
        raise CollectionFormatError(f"{path}: missing header row") from None
    if header[:2] != ["topic", "query"]:
        raise CollectionFormatError(f"{path}:{body_start + 1}: header must start with topic,query")
    measures = header[2:]
    for m in measures:
        try:
            parse_measure(m)
        except ValueError:
            raise CollectionFormatError(f"{path}:{body_start + 1}: unknown measure column {m!r}") from None
    if len(set(measures)) != len(measures):
        raise CollectionFormatError(f"{path}:{body_start + 1}: repeated measure column")
    seen = set()
    for offset, row in enumerate(reader):
        lineno = body_start + 2 + offset
        if not row:
            continue
        if len(row) != len(header):
            raise CollectionFormatError(f"{path}:{lineno}: expected {len(header)} cells")
        topic, q_s = row[0], row[1]
        try:
            qidx = int(q_s)
        except ValueError:
            raise CollectionFormatError(f"{path}:{lineno}: bad query index {q_s!r}") from None
        if (topic, qidx) in seen:
            raise CollectionFormatError(f"{path}:{lineno}: duplicate key ({topic}, {qidx})")
        seen.add((topic, qidx))
        for m, cell in zip(measures, row[2:]):
            if cell == "":
                continue
            try:
                matrix.set(topic, qidx, m, float(cell))
            except ValueError:
                raise CollectionFormatError(f"{path}:{lineno}: bad value {cell!r}") from None
    return matrix
