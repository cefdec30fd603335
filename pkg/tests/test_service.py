from datetime import date

import pytest
from fastapi.testclient import TestClient

from recombkb.categorize import DomainLabel, KIND_ARXIV, KIND_BRANCH
from recombkb.gateway import Gateway, MockBackend
from recombkb.kb import ConceptNode, KbSnapshot, RecombinationEdge
from recombkb.model import BLEND, INSPIRATION
from recombkb.predict import question_for
from recombkb.service import SuggestBackend, create_app, install_snapshot


def node(nid, canonical, kind, value, grouped=None):
    return ConceptNode(node_id=nid, canonical=canonical, surface_forms=[canonical],
                       domain=DomainLabel(kind, value, grouped or value),
                       first_seen=None)


def make_snapshot():
    nodes = {
        "n1": node("n1", "the shepherding behavior of herding dogs",
                   KIND_BRANCH, "Zoology"),
        "n2": node("n2", "frontier exploration", KIND_ARXIV, "cs.ro"),
        "n3": node("n3", "the human storytelling process",
                   KIND_BRANCH, "Cognitive Science"),
        "n4": node("n4", "story writing", KIND_ARXIV, "cs.cl"),
        "n5": node("n5", "narrative structure designs", KIND_ARXIV, "cs.cl"),
        "n6": node("n6", "data-driven storytelling", KIND_ARXIV, "cs.hc"),
    }
    edges = [
        RecombinationEdge("e0", INSPIRATION, "n1", "n2", "p020", date(2024, 4, 1),
                          ["cs.RO"], True, False),
        RecombinationEdge("e1", INSPIRATION, "n3", "n6", "p027", date(2024, 5, 12),
                          ["cs.HC"], True, False),
        RecombinationEdge("e2", BLEND, "n4", "n5", "p040", date(2023, 2, 1),
                          ["cs.CL"], False, False),
    ]
    return KbSnapshot(nodes=nodes, edges=edges, meta={"fixture": True})


STORY_CONTEXT = "Large language models still struggle to produce complete data stories."
STORY_QUESTION = question_for(INSPIRATION, "data-driven storytelling")
STORY_QUERY_TEXT = f"{STORY_CONTEXT}\n{STORY_QUESTION}"


def suggest_backend(pool=("n1", "n3", "n4", "n5")):
    backend = MockBackend()
    backend.script_embedding(STORY_QUERY_TEXT, [1.0, 0.0, 0.0])
    backend.script_embedding("the human storytelling process", [1.0, 0.0, 0.0])
    backend.script_embedding("story writing", [0.8, 0.6, 0.0])
    backend.script_embedding("narrative structure designs", [0.6, 0.8, 0.0])
    backend.script_embedding("the shepherding behavior of herding dogs", [0.0, 0.0, 1.0])
    gateway = Gateway(backend, sleep=lambda s: None)
    return SuggestBackend(gateway, "embed-v1", list(pool))


@pytest.fixture
def client():
    app = create_app(make_snapshot(), suggest_backend())
    return TestClient(app)


class TestHealth:
    def test_contract(self, client):
        body = client.get("/health").json()
        assert body == {"status": "ok", "nodes": 6, "edges": 3}


class TestNodes:
    def test_known_node_with_papers(self, client):
        body = client.get("/nodes/n1").json()
        assert body["canonical"] == "the shepherding behavior of herding dogs"
        assert body["papers"] == ["p020"]

    def test_unknown_node_404(self, client):
        assert client.get("/nodes/nope").status_code == 404


class TestEdges:
    def test_faceted_zoology_edge(self, client):
        body = client.get("/edges", params={
            "type": "inspiration", "source_domain": "zoology"}).json()
        assert body["total"] == 1
        (edge,) = body["edges"]
        assert edge["edge_id"] == "e0"
        assert edge["source"]["canonical"] == "the shepherding behavior of herding dogs"
        assert edge["target"]["domain"]["value"] == "cs.ro"

    def test_no_facets_returns_everything_paged(self, client):
        body = client.get("/edges").json()
        assert body["total"] == 3
        assert len(body["edges"]) == 3
        assert body["limit"] == 50

    def test_pagination(self, client):
        page1 = client.get("/edges", params={"limit": 2, "offset": 0}).json()
        page2 = client.get("/edges", params={"limit": 2, "offset": 2}).json()
        assert [e["edge_id"] for e in page1["edges"]] + \
            [e["edge_id"] for e in page2["edges"]] == ["e1", "e0", "e2"]

    def test_bad_year_param_is_400(self, client):
        resp = client.get("/edges", params={"year_from": "twenty"})
        assert resp.status_code == 400
        assert "year_from" in resp.json()["detail"]

    def test_bad_type_param(self, client):
        assert client.get("/edges", params={"type": "fusion"}).status_code == 400

    def test_repeated_gets_identical(self, client):
        a = client.get("/edges", params={"q": "storytelling"})
        b = client.get("/edges", params={"q": "storytelling"})
        assert a.content == b.content


class TestAnalytics:
    def test_domain_pairs(self, client):
        body = client.get("/analytics/domain-pairs",
                          params={"type": "inspiration", "quantile": "0"}).json()
        rows = {(r["source"], r["target"]): r["count"] for r in body["rows"]}
        assert rows == {("Zoology", "cs.ro"): 1, ("Cognitive Science", "cs.hc"): 1}

    def test_quantile_out_of_range_400(self, client):
        resp = client.get("/analytics/domain-pairs", params={"quantile": "2"})
        assert resp.status_code == 400
        assert "quantile" in resp.json()["detail"]

    def test_summary(self, client):
        body = client.get("/analytics/summary").json()
        assert body["edges_total"]["total"] == 3
        assert body["edges_total"]["interdisciplinary"] == 2

    def test_timeseries_requires_source_domain(self, client):
        assert client.get("/analytics/timeseries").status_code == 400

    def test_timeseries_rows(self, client):
        body = client.get("/analytics/timeseries",
                          params={"source_domain": "cognitive science"}).json()
        assert body["years"] == [{"year": 2024, "targets": {"cs.hc": 100.0}}]


class TestSuggest:
    def payload(self, top_k=3):
        return {"context": STORY_CONTEXT, "entity": "data-driven storytelling",
                "relation_type": "inspiration", "top_k": top_k}

    def test_top_suggestion_is_storytelling_process(self, client):
        body = client.post("/suggest", json=self.payload()).json()
        assert body["suggestions"][0]["canonical"] == "the human storytelling process"
        assert body["suggestions"][0]["papers"] == ["p027"]

    def test_top_k_truncates(self, client):
        body = client.post("/suggest", json=self.payload(top_k=1)).json()
        assert len(body["suggestions"]) == 1

    def test_every_suggestion_cites_provenance(self, client):
        body = client.post("/suggest", json=self.payload()).json()
        assert all(s["papers"] for s in body["suggestions"])

    def test_identity_reranker_matches_disabled(self):
        snapshot = make_snapshot()
        plain = suggest_backend()
        with_reranker = suggest_backend()
        with_reranker.rerank_model = "rerank-v1"
        identity = " > ".join(f"[{i}]" for i in range(1, 11))
        with_reranker.gateway.backend.set_default(identity, model="rerank-v1")
        a = TestClient(create_app(snapshot, plain)).post("/suggest", json=self.payload())
        b = TestClient(create_app(snapshot, with_reranker)).post("/suggest",
                                                                 json=self.payload())
        assert a.json() == b.json()

    def test_no_backend_is_503(self):
        client = TestClient(create_app(make_snapshot(), None))
        assert client.post("/suggest", json=self.payload()).status_code == 503

    def test_backend_failure_is_503(self):
        backend = MockBackend()  # nothing scripted -> BackendError
        gateway = Gateway(backend, sleep=lambda s: None)
        cfg = SuggestBackend(gateway, "embed-v1", ["n1"])
        client = TestClient(create_app(make_snapshot(), cfg))
        assert client.post("/suggest", json=self.payload()).status_code == 503

    def test_validation(self, client):
        bad = dict(self.payload(), entity="")
        assert client.post("/suggest", json=bad).status_code == 422
        bad = dict(self.payload(), top_k=0)
        assert client.post("/suggest", json=bad).status_code == 422
        bad = dict(self.payload(), relation_type="fusion")
        assert client.post("/suggest", json=bad).status_code == 400


def test_snapshot_swap_is_atomic_view():
    app = create_app(make_snapshot(), None)
    client = TestClient(app)
    assert client.get("/health").json()["edges"] == 3
    install_snapshot(app, KbSnapshot(nodes={}, edges=[], meta={}))
    assert client.get("/health").json() == {"status": "ok", "nodes": 0, "edges": 0}
