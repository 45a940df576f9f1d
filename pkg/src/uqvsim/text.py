"""Text normalization shared by indexing, topic parsing and query generation.

Two views of a text exist:

* ``normalize`` gives lowercase, stopword-free surface terms. Query strings,
  topic term lists and Jaccard comparisons live in this view.
* ``analyze`` additionally stems every term. Only the index and the scoring
  functions use it.
"""

import re
from functools import lru_cache
from importlib import resources
from typing import Iterable, List, Sequence

from nltk.stem.porter import PorterStemmer

STOPWORDS_RESOURCE = "stopwords_en.txt"

_TOKEN_RE = re.compile(r"[^\W_]+")
_stemmer = PorterStemmer(mode=PorterStemmer.MARTIN_EXTENSIONS)


def load_stopwords(path=None) -> frozenset:
    """Read a stopword list, one word per line. ``#`` starts a comment line."""
    if path is None:
        text = resources.files("uqvsim.data").joinpath(STOPWORDS_RESOURCE).read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    words = set()
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.add(line.lower())
    return frozenset(words)


STOPWORDS = load_stopwords()


def tokenize(text: str) -> List[str]:
    """Lowercase and split on every non-alphanumeric character."""
    return _TOKEN_RE.findall(text.lower())


def normalize(text: str, stopwords: frozenset = STOPWORDS) -> List[str]:
    """Turn raw text into its term sequence.

    Duplicates are kept; single-character fragments produced by the split
    (``"U.S."`` -> ``u``, ``s``) are kept too.

    >>> normalize("Women in Parliaments")
    ['women', 'parliaments']
    """
    return [tok for tok in tokenize(text) if tok not in stopwords]


def unique_terms(terms: Iterable[str]) -> List[str]:
    """Drop repeated terms, keeping the first occurrence."""
    return list(dict.fromkeys(terms))


@lru_cache(maxsize=1 << 18)
def stem(term: str) -> str:
    # Porter is not idempotent on every input; iterate to a fixed point so
    # that stem(stem(t)) == stem(t) always holds.
    current = term
    for _ in range(8):
        nxt = _stemmer.stem(current)
        if nxt == current or not nxt:
            break
        current = nxt
    return current


def stem_all(terms: Sequence[str]) -> List[str]:
    return [stem(t) for t in terms]


def analyze(text: str) -> List[str]:
    """Index-side pipeline: normalize, then stem."""
    return [stem(t) for t in normalize(text)]


def query_string(terms: Sequence[str]) -> str:
    return " ".join(terms)
