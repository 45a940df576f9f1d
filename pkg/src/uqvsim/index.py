"""In-memory inverted index with the collection statistics used for scoring."""

import json
import struct
from collections import Counter, defaultdict
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

from uqvsim.text import normalize, stem

MAGIC = b"UQVIDX\x00\x01"
FORMAT_VERSION = 1


class IndexFormatError(ValueError):
    pass


class DuplicateDocumentError(ValueError):
    def __init__(self, doc_id: str):
        super().__init__(f"duplicate document id: {doc_id!r}")
        self.doc_id = doc_id


class PostingsIndex:
    """Immutable inverted index over stemmed terms.

    Attributes:
        doc_ids: external document ids, position = document ordinal.
        postings: stemmed term -> list of ``(ordinal, tf)`` sorted by ordinal.
        doc_len: token count per document (after stopword removal).
        surface: stemmed term -> most frequent unstemmed form in the corpus,
            used to turn index vocabulary back into readable query terms.
    """

    def __init__(
        self,
        doc_ids: List[str],
        postings: Dict[str, List[Tuple[int, int]]],
        doc_len: List[int],
        surface: Dict[str, str],
    ):
        self.doc_ids = list(doc_ids)
        self.postings = postings
        self.doc_len = list(doc_len)
        self.surface = surface
        self.ordinal = {d: i for i, d in enumerate(self.doc_ids)}
        self.df = {t: len(p) for t, p in postings.items()}
        self.cf = {t: sum(tf for _, tf in p) for t, p in postings.items()}
        self.total_tokens = sum(self.doc_len)
        self._forward: Optional[List[Dict[str, int]]] = None

    @property
    def N(self) -> int:
        return len(self.doc_ids)

    @property
    def avgdl(self) -> float:
        if self.N == 0:
            raise IndexFormatError("average document length of an empty index")
        return self.total_tokens / self.N

    @property
    def vocabulary_size(self) -> int:
        return len(self.postings)

    def doc_terms(self, ordinal: int) -> Dict[str, int]:
        """Term frequencies of one document (forward view, built lazily)."""
        if self._forward is None:
            forward: List[Dict[str, int]] = [dict() for _ in self.doc_ids]
            for term, plist in self.postings.items():
                for ordn, tf in plist:
                    forward[ordn][term] = tf
            self._forward = forward
        return self._forward[ordinal]

    def surface_form(self, term: str) -> str:
        return self.surface.get(term, term)

    def stats(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "documents": self.N,
            "vocabulary_size": self.vocabulary_size,
            "total_tokens": self.total_tokens,
            "avgdl": self.total_tokens / self.N if self.N else 0.0,
        }

    def check_invariants(self) -> None:
        lengths = [0] * self.N
        for term, plist in self.postings.items():
            df, cf = self.df[term], self.cf[term]
            if not (1 <= df <= self.N and cf >= df):
                raise AssertionError(f"bad df/cf for {term!r}: df={df} cf={cf}")
            prev = -1
            for ordn, tf in plist:
                if ordn <= prev or tf < 1:
                    raise AssertionError(f"postings of {term!r} not strictly sorted")
                prev = ordn
                lengths[ordn] += tf
        if lengths != self.doc_len:
            raise AssertionError("sum of term frequencies differs from doc_len")


def build_index(docs: Iterable[Tuple[str, str]]) -> PostingsIndex:
    """Index ``(doc_id, text)`` pairs; raises DuplicateDocumentError on a repeated id."""
    doc_ids: List[str] = []
    seen = set()
    doc_len: List[int] = []
    postings: Dict[str, List[Tuple[int, int]]] = defaultdict(list)
    surface_counts: Dict[str, Counter] = defaultdict(Counter)

    for doc_id, text in docs:
        if doc_id in seen:
            raise DuplicateDocumentError(doc_id)
        seen.add(doc_id)
        ordn = len(doc_ids)
        doc_ids.append(doc_id)
        tokens = normalize(text)
        tf = Counter()
        for tok in tokens:
            st = stem(tok)
            tf[st] += 1
            surface_counts[st][tok] += 1
        doc_len.append(len(tokens))
        for term, freq in tf.items():
            postings[term].append((ordn, freq))

    surface = {
        st: min(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        for st, counts in surface_counts.items()
    }
    return PostingsIndex(doc_ids, dict(postings), doc_len, surface)


def read_corpus_jsonl(path) -> Iterator[Tuple[str, str]]:
    """Yield ``(id, contents)`` from a JSON-lines corpus file."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict) or "id" not in rec or "contents" not in rec:
                raise ValueError(f"{path}:{lineno}: record needs 'id' and 'contents'")
            yield str(rec["id"]), str(rec["contents"])


# -- persistence --------------------------------------------------------------
# Layout (all integers little-endian u32):
#   magic(8) version n_docs {len id_bytes doc_len}*n_docs
#   n_terms {len term_bytes len surface_bytes n_post {ordinal tf}*n_post}*n_terms


def _pack_str(buf: bytearray, s: str) -> None:
    raw = s.encode("utf-8")
    buf += struct.pack("<I", len(raw))
    buf += raw


def save_index(index: PostingsIndex, path) -> None:
    buf = bytearray(MAGIC)
    buf += struct.pack("<II", FORMAT_VERSION, index.N)
    for doc_id, dl in zip(index.doc_ids, index.doc_len):
        _pack_str(buf, doc_id)
        buf += struct.pack("<I", dl)
    terms = sorted(index.postings)
    buf += struct.pack("<I", len(terms))
    for term in terms:
        _pack_str(buf, term)
        _pack_str(buf, index.surface_form(term))
        plist = index.postings[term]
        buf += struct.pack("<I", len(plist))
        flat = [x for pair in plist for x in pair]
        buf += struct.pack(f"<{len(flat)}I", *flat)
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise IndexFormatError(f"{self.path}: truncated index file")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u32s(self, count: int) -> Tuple[int, ...]:
        return struct.unpack(f"<{count}I", self.take(4 * count))

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def load_index(path) -> PostingsIndex:
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise IndexFormatError(f"{path}: not an index file (bad magic header)")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise IndexFormatError(f"{path}: unsupported index version {version}")
    n_docs = r.u32()
    doc_ids, doc_len = [], []
    for _ in range(n_docs):
        doc_ids.append(r.string())
        doc_len.append(r.u32())
    postings, surface = {}, {}
    for _ in range(r.u32()):
        term = r.string()
        surface[term] = r.string()
        n_post = r.u32()
        if n_post == 0:
            raise IndexFormatError(f"{path}: term {term!r} has no postings")
        flat = r.u32s(2 * n_post)
        postings[term] = list(zip(flat[0::2], flat[1::2]))
    if r.pos != len(data):
        raise IndexFormatError(f"{path}: trailing bytes after index payload")
    return PostingsIndex(doc_ids, postings, doc_len, surface)


def write_stats(index: PostingsIndex, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(index.stats(), fh, indent=2, sort_keys=True)
        fh.write("\n")
