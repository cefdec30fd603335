import json
from itertools import combinations

from hypothesis import given, strategies as st

from recombkb.extract import (
    binarize,
    binarize_all,
    extract_salient,
    extraction_prompt,
    fill_template,
    first_json_array,
    first_json_object,
    parse_output,
    postprocess_record,
    record_pair_texts,
)
from recombkb.gateway import Gateway, GenRequest, MockBackend
from recombkb.model import (
    BLEND,
    INSPIRATION,
    ROLE_ELEMENT,
    ROLE_SOURCE,
    ROLE_TARGET,
    AbstractDoc,
    EntitySpan,
    RecombinationRecord,
    is_valid,
)

BRONZE_ABSTRACT = (
    "Dating bronze artifacts is still carried out manually by trained experts. "
    "We propose to integrate advanced deep learning techniques and archaeological "
    "knowledge to automate the estimation of casting periods."
)
BRONZE_REPLY = json.dumps({
    "recombination_type": "combination",
    "combination-element": ["advanced deep learning techniques",
                            "archaeological knowledge"],
})

CTR_ABSTRACT = (
    "Recommendation quality hinges on learning effective feature embeddings for "
    "CTR prediction. Inspired by the Global Workspace Theory in conscious "
    "processing, we route a compact set of informative features through a shared "
    "workspace that is rebuilt for every request."
)
CTR_REPLY = json.dumps({
    "recombination_type": "inspiration",
    "inspiration-source": ["the Global Workspace Theory in conscious processing"],
    "inspiration-target": ["learning effective feature embeddings for CTR prediction"],
})


def doc(paper_id, abstract):
    return AbstractDoc(paper_id=paper_id, title="", abstract=abstract)


def quiet_gateway(backend):
    return Gateway(backend, sleep=lambda s: None)


class TestParseOutput:
    def test_none_reply(self):
        outcome = parse_output('{"recombination_type":"none"}')
        assert outcome.kind == "not-present"

    def test_inspiration_round_trip(self):
        raw = ('{"recombination_type":"inspiration",'
               '"inspiration-source":["S"],"inspiration-target":["T"]}')
        outcome = parse_output(raw, paper_id="p")
        assert outcome.kind == "present"
        record = outcome.record
        assert record.relation_type == INSPIRATION
        assert [(e.text, e.role) for e in record.entities] == \
            [("S", ROLE_SOURCE), ("T", ROLE_TARGET)]

    def test_combination_maps_to_blend(self):
        outcome = parse_output(BRONZE_REPLY, paper_id="p")
        assert outcome.record.relation_type == BLEND

    def test_garbage_is_parse_failure(self):
        outcome = parse_output("garbage{{{")
        assert outcome.kind == "parse-failure"
        assert outcome.reason == "unparseable"

    def test_surrounding_prose_tolerated(self):
        raw = "Sure! Here is the answer:\n" + BRONZE_REPLY + "\nHope that helps."
        assert parse_output(raw, paper_id="p").kind == "present"

    def test_two_objects_first_wins(self):
        raw = CTR_REPLY + "\n" + BRONZE_REPLY
        outcome = parse_output(raw, paper_id="p")
        assert outcome.record.relation_type == INSPIRATION

    def test_schema_invalid_combination(self):
        raw = '{"recombination_type":"combination","combination-element":["only"]}'
        outcome = parse_output(raw, paper_id="p")
        assert outcome.kind == "parse-failure"
        assert outcome.reason == "schema:blend-arity"

    def test_unknown_type(self):
        outcome = parse_output('{"recombination_type":"analogy"}')
        assert outcome.kind == "parse-failure"

    def test_non_string_entities(self):
        raw = '{"recombination_type":"combination","combination-element":[1,2]}'
        assert parse_output(raw).kind == "parse-failure"


def test_first_json_helpers():
    assert first_json_object('x {"a": 1} y {"b": 2}') == {"a": 1}
    assert first_json_object("no json") is None
    assert first_json_array('noise [1, 2] [3]') == [1, 2]
    assert first_json_array("{}") is None


class TestExtractSalient:
    def make_gateway(self):
        backend = MockBackend()
        backend.add_rule(["Dating bronze artifacts"], BRONZE_REPLY)
        backend.add_rule(["Global Workspace Theory"], CTR_REPLY)
        backend.add_rule(["unparseable abstract"], "garbage{{{")
        return quiet_gateway(backend)

    def test_blend_extraction(self):
        outcome = extract_salient(doc("p1", BRONZE_ABSTRACT), self.make_gateway(), "m")
        assert outcome.kind == "present"
        assert [e.text for e in outcome.record.entities] == \
            ["advanced deep learning techniques", "archaeological knowledge"]
        assert outcome.record.paper_id == "p1"
        assert outcome.record.provenance.model == "m"

    def test_inspiration_extraction(self):
        outcome = extract_salient(doc("p2", CTR_ABSTRACT), self.make_gateway(), "m")
        assert outcome.kind == "present"
        src = next(e for e in outcome.record.entities if e.role == ROLE_SOURCE)
        tgt = next(e for e in outcome.record.entities if e.role == ROLE_TARGET)
        assert src.text == "the Global Workspace Theory in conscious processing"
        assert tgt.text == "learning effective feature embeddings for CTR prediction"

    def test_parse_failure_outcome(self):
        outcome = extract_salient(doc("p3", "unparseable abstract"), self.make_gateway(), "m")
        assert outcome.kind == "parse-failure"

    def test_composes_template_generate_parse(self):
        gateway = self.make_gateway()
        d = doc("p1", BRONZE_ABSTRACT)
        direct = extract_salient(d, gateway, "m")
        raw = gateway.generate(GenRequest(model_id="m", prompt=extraction_prompt(d)))
        recomposed = parse_output(raw, paper_id=d.paper_id)
        assert direct.kind == recomposed.kind
        assert [e.text for e in direct.record.entities] == \
            [e.text for e in recomposed.record.entities]


class TestPostprocess:
    def record(self):
        return RecombinationRecord(
            paper_id="p", relation_type=BLEND,
            entities=[EntitySpan("real", ROLE_ELEMENT),
                      EntitySpan("synthetic humans", ROLE_ELEMENT)])

    def test_refinement_kept_alongside_original(self):
        reply = json.dumps({"combination-element": ["real human images",
                                                    "synthetic human renders"]})
        backend = MockBackend().set_default(reply)
        refined = postprocess_record(self.record(), doc("p", "abs"),
                                     quiet_gateway(backend), "m")
        assert [e.text for e in refined.entities] == ["real", "synthetic humans"]
        assert [e.refined_text for e in refined.entities] == \
            ["real human images", "synthetic human renders"]

    def test_unparseable_reply_keeps_record(self):
        backend = MockBackend().set_default("not json at all")
        record = self.record()
        assert postprocess_record(record, doc("p", "abs"),
                                  quiet_gateway(backend), "m") == record

    def test_echo_refinement_near_identity(self):
        record = self.record()
        reply = json.dumps({"combination-element": [e.text for e in record.entities]})
        backend = MockBackend().set_default(reply)
        refined = postprocess_record(record, doc("p", "abs"), quiet_gateway(backend), "m")
        assert [e.refined_text for e in refined.entities] == \
            [e.text for e in record.entities]

    def test_inspiration_refinement(self):
        record = RecombinationRecord(
            paper_id="p", relation_type=INSPIRATION,
            entities=[EntitySpan("s", ROLE_SOURCE), EntitySpan("t", ROLE_TARGET)])
        reply = json.dumps({"inspiration-source": "the full source concept",
                            "inspiration-target": "the full target problem"})
        backend = MockBackend().set_default(reply)
        refined = postprocess_record(record, doc("p", "abs"), quiet_gateway(backend), "m")
        assert refined.entities[0].refined_text == "the full source concept"
        assert refined.entities[1].refined_text == "the full target problem"


class TestBinarize:
    def blend_of(self, *texts):
        return RecombinationRecord(
            paper_id="p", relation_type=BLEND,
            entities=[EntitySpan(t, ROLE_ELEMENT) for t in texts])

    def test_binary_blend_identity(self):
        record = self.blend_of("A", "B")
        assert binarize(record) == [record]

    def test_three_way_pair_expansion(self):
        out = binarize(self.blend_of("A", "B", "C"))
        pairs = [tuple(e.text for e in r.entities) for r in out]
        assert pairs == [("A", "B"), ("A", "C"), ("B", "C")]
        assert all(r.parent_id for r in out)
        assert len({r.parent_id for r in out}) == 1

    def test_inspiration_identity(self):
        record = RecombinationRecord(
            paper_id="p", relation_type=INSPIRATION,
            entities=[EntitySpan("S", ROLE_SOURCE), EntitySpan("T", ROLE_TARGET)])
        assert binarize(record) == [record]

    @given(st.integers(min_value=2, max_value=7))
    def test_output_size_and_validity(self, n):
        record = self.blend_of(*[f"e{i}" for i in range(n)])
        out = binarize(record)
        assert len(out) == len(list(combinations(range(n), 2)))
        assert all(is_valid(r) for r in out)

    def test_binarize_all(self):
        records = [self.blend_of("A", "B", "C"), self.blend_of("X", "Y")]
        assert len(binarize_all(records)) == 4


def test_record_pair_texts():
    record = RecombinationRecord(
        paper_id="p", relation_type=INSPIRATION,
        entities=[EntitySpan("T", ROLE_TARGET), EntitySpan("S", ROLE_SOURCE)])
    assert record_pair_texts(record) == ("S", "T")


def test_fill_template():
    assert fill_template("a {{X}} b {{Y}}", x="1", y="2") == "a 1 b 2"
