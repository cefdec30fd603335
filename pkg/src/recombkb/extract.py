"""Salient-recombination extraction: prompt construction, reply parsing,
entity refinement, and pair expansion of n-ary blends.

Backends reply with a strict JSON object (``recombination_type`` plus
role-keyed entity arrays); anything else becomes a ``parse-failure`` outcome
and the abstract is excluded from downstream KB building.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from itertools import combinations
from typing import Iterable

from .gateway import GenRequest, Gateway, prompt_digest
from .model import (
    BLEND,
    INSPIRATION,
    ROLE_ELEMENT,
    ROLE_SOURCE,
    ROLE_TARGET,
    AbstractDoc,
    EntitySpan,
    Provenance,
    RecombinationRecord,
    SchemaViolation,
    inspiration_source,
    inspiration_target,
    record_to_json,
    validate_record,
    with_refined,
)

PRESENT = "present"
NOT_PRESENT = "not-present"
PARSE_FAILURE = "parse-failure"


@dataclass
class ExtractionOutcome:
    kind: str  # present | not-present | parse-failure
    record: RecombinationRecord | None = None
    reason: str | None = None

    @classmethod
    def present(cls, record: RecombinationRecord) -> "ExtractionOutcome":
        return cls(kind=PRESENT, record=record)

    @classmethod
    def absent(cls) -> "ExtractionOutcome":
        return cls(kind=NOT_PRESENT)

    @classmethod
    def failure(cls, reason: str) -> "ExtractionOutcome":
        return cls(kind=PARSE_FAILURE, reason=reason)


def load_prompt(name: str) -> str:
    return resources.files("recombkb.prompts").joinpath(f"{name}.txt").read_text("utf-8")


def fill_template(template: str, **values: str) -> str:
    out = template
    for key, val in values.items():
        out = out.replace("{{" + key.upper() + "}}", val)
    return out


def extraction_prompt(doc: AbstractDoc) -> str:
    return fill_template(load_prompt("extraction"), abstract=doc.abstract)


def first_json_object(raw: str) -> dict | None:
    """Extract the first balanced JSON object from free text, or None."""
    decoder = json.JSONDecoder()
    for start, ch in enumerate(raw):
        if ch != "{":
            continue
        try:
            obj, _ = decoder.raw_decode(raw[start:])
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    return None


def first_json_array(raw: str) -> list | None:
    """Extract the first balanced JSON array from free text, or None."""
    decoder = json.JSONDecoder()
    for start, ch in enumerate(raw):
        if ch != "[":
            continue
        try:
            obj, _ = decoder.raw_decode(raw[start:])
        except json.JSONDecodeError:
            continue
        if isinstance(obj, list):
            return obj
    return None


def _string_list(obj: dict, key: str) -> list[str]:
    value = obj.get(key, [])
    if isinstance(value, str):
        value = [value]
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ValueError(f"field {key!r} must be a list of strings")
    return value


def parse_output(raw: str, paper_id: str = "",
                 provenance: Provenance | None = None) -> ExtractionOutcome:
    """Parse a backend extraction reply into an outcome.

    Accepts a strict JSON object with ``recombination_type`` in
    {combination, inspiration, none} and role-keyed entity arrays;
    surrounding prose is tolerated (the first balanced object wins) and
    "combination" maps to the blend relation type. Schema-invalid replies
    become parse-failure values, never exceptions.
    """
    obj = first_json_object(raw)
    if obj is None:
        return ExtractionOutcome.failure("unparseable")
    rtype = obj.get("recombination_type")
    if rtype == "none":
        return ExtractionOutcome.absent()
    try:
        if rtype == "combination":
            elements = _string_list(obj, "combination-element")
            entities = [EntitySpan(text=t, role=ROLE_ELEMENT) for t in elements]
            record = RecombinationRecord(paper_id=paper_id, relation_type=BLEND,
                                         entities=entities, provenance=provenance)
        elif rtype == "inspiration":
            sources = _string_list(obj, "inspiration-source")
            targets = _string_list(obj, "inspiration-target")
            entities = [EntitySpan(text=t, role=ROLE_SOURCE) for t in sources]
            entities += [EntitySpan(text=t, role=ROLE_TARGET) for t in targets]
            record = RecombinationRecord(paper_id=paper_id, relation_type=INSPIRATION,
                                         entities=entities, provenance=provenance)
        else:
            return ExtractionOutcome.failure(f"unknown recombination_type {rtype!r}")
    except ValueError as exc:
        return ExtractionOutcome.failure(str(exc))
    try:
        validate_record(record)
    except SchemaViolation as exc:
        return ExtractionOutcome.failure(f"schema:{exc.rule}")
    return ExtractionOutcome.present(record)


def extract_salient(doc: AbstractDoc, gateway: Gateway, model_id: str,
                    max_tokens: int = 512) -> ExtractionOutcome:
    """Run the extraction prompt for one abstract and parse the reply.

    At most one relation is produced per abstract; backend errors propagate
    while malformed replies come back as parse-failure outcomes.
    """
    prompt = extraction_prompt(doc)
    result = gateway.generate_detailed(GenRequest(model_id=model_id, prompt=prompt,
                                                  max_tokens=max_tokens))
    provenance = Provenance(model=model_id, prompt_digest=prompt_digest(prompt),
                            timestamp=result.created)
    return parse_output(result.text, paper_id=doc.paper_id, provenance=provenance)


# --- post-processing -----------------------------------------------------------

def refine_prompt(record: RecombinationRecord, doc: AbstractDoc) -> str:
    payload = record_to_json(record)
    payload.pop("provenance", None)
    return fill_template(
        load_prompt("refine"),
        abstract=doc.abstract,
        recombination=json.dumps(payload, ensure_ascii=False, sort_keys=True),
    )


def postprocess_record(record: RecombinationRecord, doc: AbstractDoc,
                       gateway: Gateway, model_id: str) -> RecombinationRecord:
    """Ask the backend to improve entity strings; store results in
    ``refined_text`` next to the originals. An unparseable reply leaves the
    record unchanged."""
    validate_record(record)
    reply = gateway.generate(GenRequest(model_id=model_id,
                                        prompt=refine_prompt(record, doc)))
    obj = first_json_object(reply)
    if obj is None:
        return record
    refined: dict[int, str] = {}
    if record.relation_type == BLEND:
        values = obj.get("combination-element")
        if isinstance(values, list):
            for i, val in enumerate(values[: len(record.entities)]):
                if isinstance(val, str) and val.strip():
                    refined[i] = val
    else:
        src, tgt = obj.get("inspiration-source"), obj.get("inspiration-target")
        for i, ent in enumerate(record.entities):
            val = src if ent.role == ROLE_SOURCE else tgt
            if isinstance(val, str) and val.strip():
                refined[i] = val
    if not refined:
        return record
    return with_refined(record, refined)


# --- pair expansion ------------------------------------------------------------

def record_digest(record: RecombinationRecord) -> str:
    payload = record_to_json(record)
    payload.pop("provenance", None)
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    import hashlib

    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def binarize(record: RecombinationRecord) -> list[RecombinationRecord]:
    """Expand an n-ary blend into all unordered element pairs.

    Inspirations (and 2-element blends) pass through; expanded pairs carry
    the parent record digest so they can be traced back.
    """
    validate_record(record)
    if record.relation_type == INSPIRATION:
        return [record]
    if len(record.entities) == 2:
        return [record]
    parent = record_digest(record)
    out = []
    for a, b in combinations(record.entities, 2):
        out.append(RecombinationRecord(
            paper_id=record.paper_id,
            relation_type=BLEND,
            entities=[a, b],
            provenance=record.provenance,
            parent_id=parent,
        ))
    return out


def binarize_all(records: Iterable[RecombinationRecord]) -> list[RecombinationRecord]:
    out: list[RecombinationRecord] = []
    for record in records:
        out.extend(binarize(record))
    return out


def record_pair_texts(record: RecombinationRecord) -> tuple[str, str]:
    """(source, target) texts for an inspiration; element texts for a binary
    blend, in record order."""
    if record.relation_type == INSPIRATION:
        return inspiration_source(record).text, inspiration_target(record).text
    if len(record.entities) != 2:
        raise ValueError("record_pair_texts needs a binarized record")
    return record.entities[0].text, record.entities[1].text
