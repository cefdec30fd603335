"""Read-only HTTP facade over a KB snapshot, plus a live /suggest endpoint
for ideation queries.

Every GET is side-effect free over an immutable snapshot; swapping in a new
snapshot replaces the whole object atomically, so concurrent readers never
see a half-built graph.
"""

from __future__ import annotations

from typing import Sequence

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .gateway import BackendError, Gateway, RetryExhausted, TransportError
from .kb import (
    KbSnapshot,
    RecombinationEdge,
    domain_pair_table,
    inspiration_timeseries,
    interdisciplinary_summary,
    query_edges,
)
from .model import BLEND, INSPIRATION
from .predict import RERANK_TOP, CandidateIndex, question_for, rerank_top_k

DEFAULT_PAGE_LIMIT = 50


class SuggestRequest(BaseModel):
    context: str = ""
    entity: str = Field(min_length=1)
    relation_type: str
    top_k: int = Field(default=10, ge=1, le=50)


class SuggestBackend:
    """Embedding (and optional reranking) configuration for /suggest."""

    def __init__(self, gateway: Gateway, embed_model: str, pool: Sequence[str],
                 rerank_model: str | None = None):
        self.gateway = gateway
        self.embed_model = embed_model
        self.pool = list(pool)
        self.rerank_model = rerank_model


def _edge_view(snapshot: KbSnapshot, edge: RecombinationEdge) -> dict:
    node_a = snapshot.nodes[edge.endpoint_a]
    node_b = snapshot.nodes[edge.endpoint_b]
    view = edge.to_json()
    view["source"] = {"node_id": node_a.node_id, "canonical": node_a.canonical,
                      "domain": node_a.domain.to_json()}
    view["target"] = {"node_id": node_b.node_id, "canonical": node_b.canonical,
                      "domain": node_b.domain.to_json()}
    return view


def _int_param(value: str | None, name: str) -> int | None:
    if value is None or value == "":
        return None
    try:
        return int(value)
    except ValueError:
        raise HTTPException(status_code=400, detail=f"invalid value for {name}")


def create_app(snapshot: KbSnapshot,
               suggest_backend: SuggestBackend | None = None) -> FastAPI:
    app = FastAPI(title="recombkb", version="0.1.0")
    # read-only API; allow browser front ends served from another origin
    from fastapi.middleware.cors import CORSMiddleware

    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    app.state.kb = snapshot
    app.state.suggest = suggest_backend

    def kb() -> KbSnapshot:
        return app.state.kb

    @app.get("/health")
    def health():
        snap = kb()
        return {"status": "ok", "nodes": len(snap.nodes), "edges": len(snap.edges)}

    @app.get("/nodes/{node_id}")
    def get_node(node_id: str):
        snap = kb()
        node = snap.nodes.get(node_id)
        if node is None:
            raise HTTPException(status_code=404, detail=f"unknown node {node_id}")
        view = node.to_json()
        view["papers"] = sorted({e.paper_id for e in snap.edges_of(node_id)})
        return view

    @app.get("/edges")
    def get_edges(type: str | None = None, source_domain: str | None = None,
                  target_domain: str | None = None, year_from: str | None = None,
                  year_to: str | None = None, q: str | None = None,
                  limit: str | None = None, offset: str | None = None):
        snap = kb()
        if type and type not in (BLEND, INSPIRATION):
            raise HTTPException(status_code=400, detail="invalid value for type")
        y_from = _int_param(year_from, "year_from")
        y_to = _int_param(year_to, "year_to")
        lim = _int_param(limit, "limit")
        off = _int_param(offset, "offset")
        lim = DEFAULT_PAGE_LIMIT if lim is None else lim
        off = 0 if off is None else off
        if lim < 1 or off < 0:
            raise HTTPException(status_code=400, detail="invalid value for limit")
        edges = query_edges(snap, type=type, source_domain=source_domain,
                            target_domain=target_domain, year_from=y_from,
                            year_to=y_to, text=q)
        page = edges[off:off + lim]
        return {"total": len(edges), "limit": lim, "offset": off,
                "edges": [_edge_view(snap, e) for e in page]}

    @app.get("/analytics/domain-pairs")
    def get_domain_pairs(type: str = INSPIRATION, quantile: str = "0.9"):
        snap = kb()
        if type not in (BLEND, INSPIRATION):
            raise HTTPException(status_code=400, detail="invalid value for type")
        try:
            q = float(quantile)
        except ValueError:
            raise HTTPException(status_code=400, detail="invalid value for quantile")
        if not 0 <= q < 1:
            raise HTTPException(status_code=400, detail="invalid value for quantile")
        rows = domain_pair_table(snap, type, q)
        return {"type": type, "quantile": q,
                "rows": [{"source": a, "target": b, "count": n} for a, b, n in rows]}

    @app.get("/analytics/summary")
    def get_summary():
        return interdisciplinary_summary(kb())

    @app.get("/analytics/timeseries")
    def get_timeseries(source_domain: str = ""):
        if not source_domain.strip():
            raise HTTPException(status_code=400, detail="invalid value for source_domain")
        series = inspiration_timeseries(kb(), source_domain)
        return {"source_domain": source_domain,
                "years": [{"year": y, "targets": t} for y, t in series.items()]}

    @app.post("/suggest")
    def suggest(req: SuggestRequest):
        snap = kb()
        cfg: SuggestBackend | None = app.state.suggest
        if cfg is None or not cfg.pool:
            raise HTTPException(status_code=503, detail="suggestion backend unavailable")
        if req.relation_type not in (BLEND, INSPIRATION):
            raise HTTPException(status_code=400, detail="invalid value for relation_type")
        question = question_for(req.relation_type, req.entity)
        query_text = f"{req.context}\n{question}" if req.context else question
        node_texts = {nid: snap.nodes[nid].canonical for nid in cfg.pool}
        try:
            index = CandidateIndex(cfg.pool, node_texts, cfg.gateway, cfg.embed_model)
            ranking = index.score(query_text)
            if cfg.rerank_model:
                top = [nid for nid, _ in ranking[:RERANK_TOP]]
                names = {node_texts[nid]: nid for nid in top}
                reordered = rerank_top_k(query_text, [node_texts[n] for n in top],
                                         cfg.gateway, cfg.rerank_model)
                score_of = dict(ranking)
                ranking = ([(names[text], score_of[names[text]]) for text in reordered]
                           + ranking[RERANK_TOP:])
        except (BackendError, TransportError, RetryExhausted) as exc:
            raise HTTPException(status_code=503, detail=f"backend unavailable: {exc}")
        suggestions = []
        for node_id, score in ranking[: req.top_k]:
            node = snap.nodes[node_id]
            papers = sorted({e.paper_id for e in snap.edges_of(node_id)})
            suggestions.append({
                "node_id": node_id,
                "canonical": node.canonical,
                "domain": node.domain.to_json(),
                "score": score,
                "papers": papers,
            })
        return {"entity": req.entity, "relation_type": req.relation_type,
                "suggestions": suggestions}

    return app


def install_snapshot(app: FastAPI, snapshot: KbSnapshot) -> None:
    """Swap the served snapshot; attribute assignment is atomic, so clients
    see either the old or the new graph, never a mixture."""
    app.state.kb = snapshot


def serve(app: FastAPI, host: str = "127.0.0.1", port: int = 8080) -> None:
    import uvicorn

    uvicorn.run(app, host=host, port=port)
