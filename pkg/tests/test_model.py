import json
from datetime import date
from io import StringIO

import pytest
from hypothesis import given, strategies as st

from recombkb.model import (
    BLEND,
    INSPIRATION,
    ROLE_ELEMENT,
    ROLE_SOURCE,
    ROLE_TARGET,
    EntitySpan,
    Provenance,
    RecombinationRecord,
    SchemaViolation,
    canonical_blend_key,
    dump_jsonl,
    is_valid,
    load_jsonl,
    normalize_span,
    parse_date,
    record_from_json,
    record_to_json,
    validate_record,
)


def blend(*texts, paper_id="p1"):
    return RecombinationRecord(
        paper_id=paper_id,
        relation_type=BLEND,
        entities=[EntitySpan(text=t, role=ROLE_ELEMENT) for t in texts],
    )


def inspiration(source, target, paper_id="p1"):
    return RecombinationRecord(
        paper_id=paper_id,
        relation_type=INSPIRATION,
        entities=[EntitySpan(text=source, role=ROLE_SOURCE),
                  EntitySpan(text=target, role=ROLE_TARGET)],
    )


class TestValidateRecord:
    def test_valid_blend(self):
        record = blend("advanced deep learning techniques", "archaeological knowledge")
        validate_record(record)  # no exception

    def test_valid_inspiration(self):
        record = inspiration("the Global Workspace Theory in conscious processing",
                             "learning effective feature embeddings for CTR prediction")
        validate_record(record)

    def test_two_sources_no_target(self):
        record = RecombinationRecord(
            paper_id="p1", relation_type=INSPIRATION,
            entities=[EntitySpan("a", ROLE_SOURCE), EntitySpan("b", ROLE_SOURCE)])
        with pytest.raises(SchemaViolation) as err:
            validate_record(record)
        assert err.value.rule == "inspiration-roles"

    def test_single_element_blend(self):
        with pytest.raises(SchemaViolation) as err:
            validate_record(blend("only one"))
        assert err.value.rule == "blend-arity"

    def test_blend_with_wrong_role(self):
        record = RecombinationRecord(
            paper_id="p1", relation_type=BLEND,
            entities=[EntitySpan("a", ROLE_ELEMENT), EntitySpan("b", ROLE_SOURCE)])
        with pytest.raises(SchemaViolation) as err:
            validate_record(record)
        assert err.value.rule == "blend-roles"

    def test_empty_paper_id(self):
        with pytest.raises(SchemaViolation) as err:
            validate_record(blend("a", "b", paper_id=""))
        assert err.value.rule == "paper-id"

    def test_empty_entity_text(self):
        with pytest.raises(SchemaViolation) as err:
            validate_record(blend("a", "  "))
        assert err.value.rule == "entity-text"

    def test_empty_refined_text(self):
        record = blend("a", "b")
        record.entities[0].refined_text = ""
        with pytest.raises(SchemaViolation) as err:
            validate_record(record)
        assert err.value.rule == "entity-text"

    def test_unknown_relation_type(self):
        record = blend("a", "b")
        record.relation_type = "fusion"
        with pytest.raises(SchemaViolation) as err:
            validate_record(record)
        assert err.value.rule == "relation-type"


# independent rule list used to cross-check the validator
def independently_valid(record):
    if not record.paper_id:
        return False
    if record.relation_type not in (BLEND, INSPIRATION):
        return False
    for e in record.entities:
        if not e.text.strip():
            return False
        if e.refined_text is not None and not e.refined_text.strip():
            return False
        if e.role not in (ROLE_ELEMENT, ROLE_SOURCE, ROLE_TARGET):
            return False
    if record.relation_type == BLEND:
        return len(record.entities) >= 2 and all(
            e.role == ROLE_ELEMENT for e in record.entities)
    roles = sorted(e.role for e in record.entities)
    return roles == [ROLE_SOURCE, ROLE_TARGET]


span_strategy = st.builds(
    EntitySpan,
    text=st.sampled_from(["", " ", "a", "graph coloring", "neural nets"]),
    role=st.sampled_from([ROLE_ELEMENT, ROLE_SOURCE, ROLE_TARGET, "bogus"]),
    refined_text=st.sampled_from([None, "", "refined"]),
)
record_strategy = st.builds(
    RecombinationRecord,
    paper_id=st.sampled_from(["", "p1"]),
    relation_type=st.sampled_from([BLEND, INSPIRATION, "other"]),
    entities=st.lists(span_strategy, max_size=4),
)


@given(record_strategy)
def test_validator_matches_independent_rules(record):
    assert is_valid(record) == independently_valid(record)


class TestCanonicalBlendKey:
    def test_sorts_elements(self):
        assert canonical_blend_key(blend("b", "a")) == ("a", "b")

    def test_symmetry(self):
        assert canonical_blend_key(blend("a", "b")) == canonical_blend_key(blend("b", "a"))

    def test_whitespace_case_normalization(self):
        assert canonical_blend_key(blend("X ", "x")) == ("x", "x")

    def test_rejects_inspiration(self):
        with pytest.raises(ValueError):
            canonical_blend_key(inspiration("s", "t"))

    @given(st.lists(st.text(alphabet="abcXYZ ", min_size=1).filter(str.strip),
                    min_size=2, max_size=5))
    def test_key_is_permutation_and_idempotent(self, texts):
        record = blend(*texts)
        key = canonical_blend_key(record)
        assert sorted(key) == sorted(normalize_span(t) for t in texts)
        rebuilt = blend(*key)
        assert canonical_blend_key(rebuilt) == key


class TestDates:
    def test_full_date(self):
        assert parse_date("2024-03-01") == date(2024, 3, 1)

    def test_year_only_pads_to_january(self):
        assert parse_date("2023") == date(2023, 1, 1)

    def test_year_month(self):
        assert parse_date("2023-07") == date(2023, 7, 1)


class TestSerialization:
    def test_record_round_trip(self):
        record = inspiration("s", "t")
        record.provenance = Provenance(model="m", prompt_digest="abc", timestamp="t0")
        record.entities[0].refined_text = "the refined source"
        assert record_from_json(record_to_json(record)) == record

    def test_field_names(self):
        obj = record_to_json(blend("a", "b"))
        assert set(obj) == {"paper_id", "relation_type", "entities"}
        assert set(obj["entities"][0]) == {"text", "role"}

    def test_refined_text_serialized_only_when_present(self):
        record = blend("a", "b")
        record.entities[1].refined_text = "bb"
        obj = record_to_json(record)
        assert "refined_text" not in obj["entities"][0]
        assert obj["entities"][1]["refined_text"] == "bb"

    def test_jsonl_round_trip(self):
        rows = [record_to_json(blend("a", "b")), record_to_json(inspiration("s", "t"))]
        buf = StringIO()
        assert dump_jsonl(rows, buf) == 2
        buf.seek(0)
        assert list(load_jsonl(buf)) == rows

    def test_canonical_lines_are_stable(self):
        buf1, buf2 = StringIO(), StringIO()
        row = record_to_json(blend("a", "b"))
        dump_jsonl([row], buf1)
        dump_jsonl([json.loads(json.dumps(row))], buf2)
        assert buf1.getvalue() == buf2.getvalue()
