"""Core record types for recombination mining.

A recombination is either a *blend* (symmetric fusion of two or more
concepts) or an *inspiration* (directed transfer from a source concept to
a target). Records hold free-form entity spans tagged with a role, plus
provenance describing how the record was produced.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from datetime import date
from typing import Iterable, Iterator, TextIO

BLEND = "blend"
INSPIRATION = "inspiration"
NOT_PRESENT = "not-present"
RELATION_TYPES = (BLEND, INSPIRATION)

ROLE_ELEMENT = "combination-element"
ROLE_SOURCE = "inspiration-source"
ROLE_TARGET = "inspiration-target"
ROLES = (ROLE_ELEMENT, ROLE_SOURCE, ROLE_TARGET)

_WS = re.compile(r"\s+")


class SchemaViolation(ValueError):
    """A record failed validation. ``rule`` identifies the first broken rule."""

    def __init__(self, rule: str, message: str = ""):
        self.rule = rule
        super().__init__(f"{rule}: {message}" if message else rule)


@dataclass
class AbstractDoc:
    """One paper abstract as read from a metadata snapshot."""

    paper_id: str
    title: str
    abstract: str
    arxiv_categories: list[str] = field(default_factory=list)
    published: date | None = None
    matched_keywords: list[str] = field(default_factory=list)


@dataclass
class EntitySpan:
    """A free-form concept span with its relation role.

    ``refined_text`` is an optional post-processed version of the span; the
    original ``text`` is never overwritten.
    """

    text: str
    role: str
    refined_text: str | None = None


@dataclass
class Provenance:
    model: str
    prompt_digest: str
    timestamp: str


@dataclass
class RecombinationRecord:
    paper_id: str
    relation_type: str
    entities: list[EntitySpan]
    provenance: Provenance | None = None
    parent_id: str | None = None  # set on pair-expanded blends


@dataclass
class GoldAnnotation:
    """One annotator's decision for one paper."""

    paper_id: str
    annotator_id: str
    label: str  # blend | inspiration | not-present
    entities: list[EntitySpan] = field(default_factory=list)


def normalize_span(text: str) -> str:
    """Lowercase and collapse internal/surrounding whitespace."""
    return _WS.sub(" ", text).strip().lower()


def validate_record(record: RecombinationRecord) -> None:
    """Check all type invariants; raise :class:`SchemaViolation` on the first failure.

    Rules, in order: paper-id, relation-type, entity-text, entity-role,
    blend-arity, blend-roles, inspiration-roles.
    """
    if not record.paper_id:
        raise SchemaViolation("paper-id", "paper_id must be nonempty")
    if record.relation_type not in RELATION_TYPES:
        raise SchemaViolation("relation-type", f"unknown type {record.relation_type!r}")
    for ent in record.entities:
        if not ent.text or not ent.text.strip():
            raise SchemaViolation("entity-text", "entity text must be nonempty")
        if ent.refined_text is not None and not ent.refined_text.strip():
            raise SchemaViolation("entity-text", "refined_text must be nonempty when present")
        if ent.role not in ROLES:
            raise SchemaViolation("entity-role", f"unknown role {ent.role!r}")
    if record.relation_type == BLEND:
        if len(record.entities) < 2:
            raise SchemaViolation("blend-arity", "blend needs at least 2 elements")
        if any(e.role != ROLE_ELEMENT for e in record.entities):
            raise SchemaViolation("blend-roles", "blend entities must all be combination-element")
    else:
        sources = sum(1 for e in record.entities if e.role == ROLE_SOURCE)
        targets = sum(1 for e in record.entities if e.role == ROLE_TARGET)
        if sources != 1 or targets != 1 or len(record.entities) != 2:
            raise SchemaViolation(
                "inspiration-roles",
                "inspiration needs exactly one source and one target",
            )


def is_valid(record: RecombinationRecord) -> bool:
    try:
        validate_record(record)
    except SchemaViolation:
        return False
    return True


def canonical_blend_key(record: RecombinationRecord) -> tuple[str, ...]:
    """Order-insensitive key for a blend: normalized element texts, sorted.

    Two blends over the same element multiset yield identical keys. Raises
    ``ValueError`` for inspiration records (inspiration is directed).
    """
    validate_record(record)
    if record.relation_type != BLEND:
        raise ValueError("canonical_blend_key is defined for blends only")
    return tuple(sorted(normalize_span(e.text) for e in record.entities))


def inspiration_source(record: RecombinationRecord) -> EntitySpan:
    return next(e for e in record.entities if e.role == ROLE_SOURCE)


def inspiration_target(record: RecombinationRecord) -> EntitySpan:
    return next(e for e in record.entities if e.role == ROLE_TARGET)


# --- date handling ----------------------------------------------------------

def parse_date(value: str) -> date:
    """Parse an ISO-8601 calendar date; year-only or year-month values are
    padded to the first of January / the month."""
    value = value.strip()
    if re.fullmatch(r"\d{4}", value):
        return date(int(value), 1, 1)
    if re.fullmatch(r"\d{4}-\d{2}", value):
        year, month = value.split("-")
        return date(int(year), int(month), 1)
    return date.fromisoformat(value[:10])


# --- JSON-lines serialization ------------------------------------------------

def span_to_json(span: EntitySpan) -> dict:
    out: dict = {"text": span.text, "role": span.role}
    if span.refined_text is not None:
        out["refined_text"] = span.refined_text
    return out


def span_from_json(obj: dict) -> EntitySpan:
    return EntitySpan(text=obj["text"], role=obj["role"], refined_text=obj.get("refined_text"))


def record_to_json(record: RecombinationRecord) -> dict:
    out: dict = {
        "paper_id": record.paper_id,
        "relation_type": record.relation_type,
        "entities": [span_to_json(e) for e in record.entities],
    }
    if record.provenance is not None:
        out["provenance"] = {
            "model": record.provenance.model,
            "prompt_digest": record.provenance.prompt_digest,
            "timestamp": record.provenance.timestamp,
        }
    if record.parent_id is not None:
        out["parent_id"] = record.parent_id
    return out


def record_from_json(obj: dict) -> RecombinationRecord:
    prov = None
    if "provenance" in obj:
        p = obj["provenance"]
        prov = Provenance(model=p["model"], prompt_digest=p["prompt_digest"], timestamp=p["timestamp"])
    return RecombinationRecord(
        paper_id=obj["paper_id"],
        relation_type=obj["relation_type"],
        entities=[span_from_json(e) for e in obj["entities"]],
        provenance=prov,
        parent_id=obj.get("parent_id"),
    )


def doc_to_json(doc: AbstractDoc) -> dict:
    return {
        "paper_id": doc.paper_id,
        "title": doc.title,
        "abstract": doc.abstract,
        "arxiv_categories": list(doc.arxiv_categories),
        "published": doc.published.isoformat() if doc.published else None,
        "matched_keywords": list(doc.matched_keywords),
    }


def doc_from_json(obj: dict) -> AbstractDoc:
    published = obj.get("published")
    return AbstractDoc(
        paper_id=obj["paper_id"],
        title=obj.get("title", ""),
        abstract=obj["abstract"],
        arxiv_categories=list(obj.get("arxiv_categories", [])),
        published=parse_date(published) if published else None,
        matched_keywords=list(obj.get("matched_keywords", [])),
    )


def dump_jsonl(objs: Iterable[dict], fp: TextIO) -> int:
    """Write one canonical JSON object per line; returns the line count."""
    n = 0
    for obj in objs:
        fp.write(json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":")))
        fp.write("\n")
        n += 1
    return n


def load_jsonl(fp: TextIO) -> Iterator[dict]:
    for line in fp:
        line = line.strip()
        if line:
            yield json.loads(line)


def with_refined(record: RecombinationRecord, refined: dict[int, str]) -> RecombinationRecord:
    """Return a copy with ``refined_text`` set for the given entity indices."""
    entities = [
        replace(e, refined_text=refined.get(i, e.refined_text))
        for i, e in enumerate(record.entities)
    ]
    return replace(record, entities=entities)
