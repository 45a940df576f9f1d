"""Measure identifiers and their textual names.

Names used in files and configs:

    AP          average precision over the full run
    nDCG        nDCG over the full run
    nDCG@k      nDCG truncated at rank k
    P@k         precision at rank k
    sDCG_b2_bq4 session DCG with rank base b and query base bq
"""

import math
import re
from dataclasses import dataclass
from typing import Optional

_NAME_RE = re.compile(
    r"^(?:(?P<ap>AP)|nDCG(?:@(?P<ndcg>\d+))?|P@(?P<p>\d+)"
    r"|sDCG_b(?P<b>\d+(?:\.\d+)?)_bq(?P<bq>\d+(?:\.\d+)?))$"
)


@dataclass(frozen=True)
class MeasureId:
    kind: str  # AP | NDCG | P | SDCG
    cutoff: Optional[int] = None
    b: float = 2.0
    bq: float = 4.0

    def __post_init__(self):
        if self.kind not in ("AP", "NDCG", "P", "SDCG"):
            raise ValueError(f"unknown measure kind {self.kind!r}")
        if self.kind == "P" and self.cutoff is None:
            raise ValueError("P needs a cutoff")
        if self.cutoff is not None and self.cutoff < 1:
            raise ValueError(f"cutoff must be >= 1, got {self.cutoff}")
        if self.kind == "SDCG" and not (self.b > 1 and self.bq > 1):
            raise ValueError("sDCG needs b > 1 and bq > 1")

    @property
    def name(self) -> str:
        if self.kind == "AP":
            return "AP"
        if self.kind == "NDCG":
            return "nDCG" if self.cutoff is None else f"nDCG@{self.cutoff}"
        if self.kind == "P":
            return f"P@{self.cutoff}"
        return f"sDCG_b{_num(self.b)}_bq{_num(self.bq)}"

    @property
    def bounded(self) -> bool:
        return self.kind != "SDCG"

    def in_range(self, value: float) -> bool:
        if math.isnan(value):
            return True
        if self.bounded:
            return -1e-12 <= value <= 1.0 + 1e-12
        return value >= 0.0

    def __str__(self) -> str:
        return self.name


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else str(x)


def parse_measure(name: str) -> MeasureId:
    m = _NAME_RE.match(name.strip())
    if not m:
        raise ValueError(f"unknown measure {name!r}")
    if m.group("ap"):
        return MeasureId("AP")
    if m.group("p"):
        return MeasureId("P", int(m.group("p")))
    if m.group("b"):
        return MeasureId("SDCG", None, float(m.group("b")), float(m.group("bq")))
    cutoff = m.group("ndcg")
    return MeasureId("NDCG", int(cutoff) if cutoff else None)
