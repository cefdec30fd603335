"""Corpus ingestion: arXiv metadata snapshots, category/date filtering, and
keyword screening for annotation-candidate selection.

The snapshot format is the monthly arXiv metadata JSON-lines export; only the
id, title, abstract, categories, and first-version date are read. Keyword
screening is used to pick likely annotation candidates; large-scale mining
deliberately skips it.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import date
from email.utils import parsedate_to_datetime
from importlib import resources
from pathlib import Path
from typing import Iterator

from .model import AbstractDoc, parse_date

# arXiv categories the annotated corpus was drawn from.
DEFAULT_CATEGORIES = (
    "cs.AI", "cs.CL", "cs.CV", "cs.CY", "cs.HC", "cs.IR", "cs.LG", "cs.RO", "cs.SI",
)


def default_keywords() -> list[str]:
    """The packaged screening keyword list (one keyword per line)."""
    text = resources.files("recombkb.data").joinpath("keywords.txt").read_text("utf-8")
    return [line.strip() for line in text.splitlines() if line.strip()]


@dataclass(frozen=True)
class CorpusFilter:
    allowed_categories: frozenset[str]
    date_min: date | None = None
    date_max: date | None = None

    def __post_init__(self):
        if self.date_min and self.date_max and self.date_min > self.date_max:
            raise ValueError("date_min must not exceed date_max")

    def admits(self, doc: AbstractDoc) -> bool:
        cats = {c.lower() for c in doc.arxiv_categories}
        allowed = {c.lower() for c in self.allowed_categories}
        if not cats & allowed:
            return False
        if doc.published is None:
            return self.date_min is None and self.date_max is None
        if self.date_min and doc.published < self.date_min:
            return False
        if self.date_max and doc.published > self.date_max:
            return False
        return True


def _parse_snapshot_line(line: str) -> AbstractDoc:
    obj = json.loads(line)
    paper_id = obj.get("paper_id") or obj["id"]
    if not paper_id:
        raise ValueError("empty paper id")
    abstract = (obj.get("abstract") or "").strip()
    if not abstract:
        raise ValueError("empty abstract")
    raw_cats = obj.get("arxiv_categories", obj.get("categories", []))
    if isinstance(raw_cats, str):
        categories = raw_cats.split()
    else:
        categories = list(raw_cats)
    published = _first_version_date(obj)
    return AbstractDoc(
        paper_id=str(paper_id),
        title=(obj.get("title") or "").strip(),
        abstract=abstract,
        arxiv_categories=categories,
        published=published,
    )


def _first_version_date(obj: dict) -> date | None:
    versions = obj.get("versions") or []
    if versions:
        created = versions[0].get("created")
        if created:
            try:
                return parsedate_to_datetime(created).date()
            except (TypeError, ValueError):
                pass
    for key in ("published", "update_date"):
        if obj.get(key):
            return parse_date(str(obj[key]))
    return None


class SnapshotStream:
    """Iterator over the docs admitted by a filter.

    Malformed lines are counted in ``skipped`` and skipped; an unreadable file
    raises immediately.
    """

    def __init__(self, path: str | Path, corpus_filter: CorpusFilter):
        self.path = Path(path)
        self.filter = corpus_filter
        self.skipped = 0
        self.total_lines = 0
        if not self.path.exists():
            raise FileNotFoundError(self.path)

    def __iter__(self) -> Iterator[AbstractDoc]:
        with open(self.path, encoding="utf-8") as fp:
            for line in fp:
                if not line.strip():
                    continue
                self.total_lines += 1
                try:
                    doc = _parse_snapshot_line(line)
                except (ValueError, KeyError, TypeError):
                    self.skipped += 1
                    continue
                if self.filter.admits(doc):
                    yield doc


def load_snapshot(path: str | Path, corpus_filter: CorpusFilter) -> SnapshotStream:
    return SnapshotStream(path, corpus_filter)


def screen_keywords(doc: AbstractDoc, keywords: list[str], include_title: bool = True) -> list[str]:
    """Case-insensitive whole-word keyword matches over title+abstract.

    Returns matched keywords ordered by first occurrence. ``include_title``
    can be dropped to screen the abstract alone.
    """
    if not keywords:
        raise ValueError("keywords must be nonempty")
    text = (doc.title + "\n" + doc.abstract) if include_title else doc.abstract
    hits: list[tuple[int, str]] = []
    for kw in keywords:
        m = re.search(r"\b" + re.escape(kw) + r"\b", text, flags=re.IGNORECASE)
        if m:
            hits.append((m.start(), kw))
    hits.sort(key=lambda t: (t[0], t[1]))
    return [kw for _, kw in hits]


@dataclass
class CorpusSummary:
    docs: int = 0
    skipped: int = 0
    per_category: dict[str, int] = field(default_factory=dict)
    per_year: dict[int, int] = field(default_factory=dict)

    def add(self, doc: AbstractDoc) -> None:
        self.docs += 1
        for cat in doc.arxiv_categories:
            self.per_category[cat] = self.per_category.get(cat, 0) + 1
        if doc.published:
            self.per_year[doc.published.year] = self.per_year.get(doc.published.year, 0) + 1

    def to_json(self) -> dict:
        return {
            "docs": self.docs,
            "skipped": self.skipped,
            "per_category": dict(sorted(self.per_category.items())),
            "per_year": {str(y): n for y, n in sorted(self.per_year.items())},
        }
