"""The recombination graph: build, persist, query, and the meta-science
analytics (domain-pair tables, interdisciplinary counts, inspiration
time series).

Nodes are normalized concepts; edges are binary recombination relations
enriched with the paper's publication date and arXiv categories. Snapshots
are immutable after build and persist as canonical JSON lines, so a rebuild
from identical inputs is byte-identical.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Mapping, Sequence

from .categorize import OTHER_LABEL, DomainLabel, vote_domain
from .model import (
    BLEND,
    INSPIRATION,
    AbstractDoc,
    RecombinationRecord,
    inspiration_source,
    inspiration_target,
)
from .normalize import ClusterAssignment


class BuildError(Exception):
    pass


class KbLoadError(Exception):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        where = f" ({path}:{line})" if path and line else ""
        super().__init__(message + where)
        self.path = path
        self.line = line


@dataclass
class ConceptNode:
    node_id: str
    canonical: str
    surface_forms: list[str]
    domain: DomainLabel
    first_seen: date | None

    def to_json(self) -> dict:
        return {
            "node_id": self.node_id,
            "canonical": self.canonical,
            "surface_forms": list(self.surface_forms),
            "domain": self.domain.to_json(),
            "first_seen": self.first_seen.isoformat() if self.first_seen else None,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ConceptNode":
        return cls(
            node_id=obj["node_id"],
            canonical=obj["canonical"],
            surface_forms=list(obj["surface_forms"]),
            domain=DomainLabel.from_json(obj["domain"]),
            first_seen=date.fromisoformat(obj["first_seen"]) if obj["first_seen"] else None,
        )


@dataclass
class RecombinationEdge:
    edge_id: str
    type: str  # blend | inspiration (inspiration: a=source, b=target)
    endpoint_a: str
    endpoint_b: str
    paper_id: str
    published: date | None
    arxiv_categories: list[str]
    interdisciplinary: bool
    self_loop: bool

    def to_json(self) -> dict:
        return {
            "edge_id": self.edge_id,
            "type": self.type,
            "endpoint_a": self.endpoint_a,
            "endpoint_b": self.endpoint_b,
            "paper_id": self.paper_id,
            "published": self.published.isoformat() if self.published else None,
            "arxiv_categories": list(self.arxiv_categories),
            "interdisciplinary": self.interdisciplinary,
            "self_loop": self.self_loop,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RecombinationEdge":
        return cls(
            edge_id=obj["edge_id"],
            type=obj["type"],
            endpoint_a=obj["endpoint_a"],
            endpoint_b=obj["endpoint_b"],
            paper_id=obj["paper_id"],
            published=date.fromisoformat(obj["published"]) if obj["published"] else None,
            arxiv_categories=list(obj["arxiv_categories"]),
            interdisciplinary=obj["interdisciplinary"],
            self_loop=obj["self_loop"],
        )


@dataclass
class KbSnapshot:
    nodes: dict[str, ConceptNode]
    edges: list[RecombinationEdge]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._by_node: dict[str, list[RecombinationEdge]] = defaultdict(list)
        for edge in self.edges:
            self._by_node[edge.endpoint_a].append(edge)
            if edge.endpoint_b != edge.endpoint_a:
                self._by_node[edge.endpoint_b].append(edge)

    def edges_of(self, node_id: str) -> list[RecombinationEdge]:
        return list(self._by_node.get(node_id, []))

    def check_integrity(self) -> None:
        for edge in self.edges:
            if edge.endpoint_a not in self.nodes or edge.endpoint_b not in self.nodes:
                raise KbLoadError(f"edge {edge.edge_id} references a missing node")


# --- construction ----------------------------------------------------------------

def build_graph(records: Sequence[RecombinationRecord],
                texts: Sequence[str],
                assignment: ClusterAssignment,
                entity_domains: Mapping[tuple[str, str], DomainLabel],
                docs: Mapping[str, AbstractDoc],
                normalize_map: Mapping[tuple[str, str], str] | None = None,
                meta: dict | None = None) -> KbSnapshot:
    """Assemble the graph from binarized records and the clustering over
    normalized entity texts.

    ``texts`` is the exact list given to the clusterer; ``normalize_map``
    translates (paper_id, surface) occurrences to those texts (identity when
    omitted). ``entity_domains`` carries per-occurrence labels keyed the
    same way; missing labels fall back to Other. One node per cluster, one
    edge per record.
    """
    cluster_by_text: dict[str, int] = {}
    for i, text in enumerate(texts):
        cluster_by_text.setdefault(text, assignment.assignments[i])

    def resolve(paper_id: str, surface: str) -> tuple[int, str]:
        normalized = surface
        if normalize_map is not None:
            normalized = normalize_map.get((paper_id, surface), surface)
        if normalized not in cluster_by_text:
            raise BuildError(f"entity {normalized!r} (paper {paper_id}) has no cluster")
        return cluster_by_text[normalized], normalized

    node_occurrences: dict[int, list[tuple[DomainLabel, date | None]]] = defaultdict(list)
    node_first_seen: dict[int, date] = {}
    used_clusters: set[int] = set()
    endpoints: list[tuple[int, int]] = []
    unlabeled = 0

    for record in records:
        if len(record.entities) != 2:
            raise BuildError(f"record for paper {record.paper_id} is not binarized")
        if record.paper_id not in docs:
            raise BuildError(f"record references unknown paper {record.paper_id}")
        doc = docs[record.paper_id]
        if record.relation_type == INSPIRATION:
            pair = (inspiration_source(record), inspiration_target(record))
        else:
            pair = (record.entities[0], record.entities[1])
        cids = []
        for ent in pair:
            cid, _normalized = resolve(record.paper_id, ent.text)
            cids.append(cid)
            used_clusters.add(cid)
            label = entity_domains.get((record.paper_id, ent.text))
            if label is None:
                unlabeled += 1
                label = OTHER_LABEL
            node_occurrences[cid].append((label, doc.published))
            if doc.published is not None:
                seen = node_first_seen.get(cid)
                if seen is None or doc.published < seen:
                    node_first_seen[cid] = doc.published
        endpoints.append((cids[0], cids[1]))

    def node_id(cid: int) -> str:
        return f"n{cid:06d}"

    nodes: dict[str, ConceptNode] = {}
    for cid in sorted(used_clusters):
        cluster = assignment.clusters[cid]
        domain = vote_domain(node_occurrences[cid])
        nodes[node_id(cid)] = ConceptNode(
            node_id=node_id(cid),
            canonical=cluster.canonical,
            surface_forms=list(cluster.members),
            domain=domain,
            first_seen=node_first_seen.get(cid),
        )

    edges: list[RecombinationEdge] = []
    for i, (record, (ca, cb)) in enumerate(zip(records, endpoints)):
        doc = docs[record.paper_id]
        node_a, node_b = nodes[node_id(ca)], nodes[node_id(cb)]
        inter = (node_a.domain.grouped.lower() != node_b.domain.grouped.lower()
                 and not node_a.domain.is_other() and not node_b.domain.is_other())
        edges.append(RecombinationEdge(
            edge_id=f"e{i:06d}",
            type=record.relation_type,
            endpoint_a=node_a.node_id,
            endpoint_b=node_b.node_id,
            paper_id=record.paper_id,
            published=doc.published,
            arxiv_categories=list(doc.arxiv_categories),
            interdisciplinary=inter,
            self_loop=node_a.node_id == node_b.node_id,
        ))

    info = {"nodes": len(nodes), "edges": len(edges), "unlabeled_entities": unlabeled}
    if meta:
        info.update(meta)
    snapshot = KbSnapshot(nodes=nodes, edges=edges, meta=info)
    snapshot.check_integrity()
    return snapshot


# --- queries ---------------------------------------------------------------------

def _domain_matches(label: DomainLabel, facet: str) -> bool:
    facet = facet.strip().lower()
    return facet in (label.value.lower(), label.grouped.lower())


def query_edges(snapshot: KbSnapshot, type: str | None = None,
                source_domain: str | None = None, target_domain: str | None = None,
                year_from: int | None = None, year_to: int | None = None,
                text: str | None = None) -> list[RecombinationEdge]:
    """Conjunctive faceted filtering; blend edges satisfy source/target
    facets in either orientation. Results are ordered by date descending,
    then edge id."""
    out = []
    needle = text.strip().lower() if text else None
    for edge in snapshot.edges:
        if type and edge.type != type:
            continue
        if year_from is not None and (edge.published is None or edge.published.year < year_from):
            continue
        if year_to is not None and (edge.published is None or edge.published.year > year_to):
            continue
        node_a = snapshot.nodes[edge.endpoint_a]
        node_b = snapshot.nodes[edge.endpoint_b]
        if source_domain or target_domain:
            straight = ((not source_domain or _domain_matches(node_a.domain, source_domain))
                        and (not target_domain or _domain_matches(node_b.domain, target_domain)))
            if edge.type == BLEND:
                swapped = ((not source_domain or _domain_matches(node_b.domain, source_domain))
                           and (not target_domain or _domain_matches(node_a.domain, target_domain)))
                if not (straight or swapped):
                    continue
            elif not straight:
                continue
        if needle is not None:
            if needle not in node_a.canonical.lower() and needle not in node_b.canonical.lower():
                continue
        out.append(edge)
    out.sort(key=lambda e: (-(e.published.toordinal() if e.published else 0), e.edge_id))
    return out


# --- analytics ---------------------------------------------------------------------

def _analytic_pairs(snapshot: KbSnapshot, relation_type: str) -> Counter:
    """Grouped-domain pair counts; Other endpoints are excluded, blends are
    counted once per unordered pair (canonical ordering)."""
    counts: Counter = Counter()
    for edge in snapshot.edges:
        if edge.type != relation_type:
            continue
        da = snapshot.nodes[edge.endpoint_a].domain
        db = snapshot.nodes[edge.endpoint_b].domain
        if da.is_other() or db.is_other():
            continue
        a, b = da.grouped, db.grouped
        if relation_type == BLEND:
            a, b = sorted((a, b))
        counts[(a, b)] += 1
    return counts


def nearest_rank_threshold(counts: Sequence[int], q: float) -> int:
    """Nearest-rank quantile of a count distribution (0-based ceil index)."""
    ordered = sorted(counts)
    idx = min(math.ceil(q * len(ordered)), len(ordered) - 1)
    return ordered[idx]


def domain_pair_table(snapshot: KbSnapshot, relation_type: str,
                      q: float) -> list[tuple[str, str, int]]:
    """(source, target, count) rows whose count reaches the q-th nearest-rank
    quantile; ties at the threshold are kept. Rows sort by count descending."""
    if not 0 <= q < 1:
        raise ValueError("quantile must be in [0, 1)")
    counts = _analytic_pairs(snapshot, relation_type)
    if not counts:
        return []
    threshold = nearest_rank_threshold(list(counts.values()), q)
    rows = [(a, b, n) for (a, b), n in counts.items() if n >= threshold]
    rows.sort(key=lambda r: (-r[2], r[0], r[1]))
    return rows


def interdisciplinary_summary(snapshot: KbSnapshot) -> dict:
    """Totals and interdisciplinary counts per edge type, plus node total."""
    def tally(edges):
        total = len(edges)
        inter = sum(1 for e in edges if e.interdisciplinary)
        share = inter / total if total else 0.0
        return {"total": total, "interdisciplinary": inter, "share": share}

    by_type = defaultdict(list)
    for edge in snapshot.edges:
        by_type[edge.type].append(edge)
    return {
        "inspiration_edges": tally(by_type.get(INSPIRATION, [])),
        "blend_edges": tally(by_type.get(BLEND, [])),
        "edges_total": tally(snapshot.edges),
        "nodes_total": len(snapshot.nodes),
    }


def inspiration_timeseries(snapshot: KbSnapshot,
                           source_domain: str) -> dict[int, dict[str, float]]:
    """Per-year percentage of inspiration edges from ``source_domain`` into
    each target domain. Years with no edges are absent; present years sum
    to 100."""
    per_year: dict[int, Counter] = defaultdict(Counter)
    for edge in snapshot.edges:
        if edge.type != INSPIRATION or edge.published is None:
            continue
        da = snapshot.nodes[edge.endpoint_a].domain
        db = snapshot.nodes[edge.endpoint_b].domain
        if da.is_other() or db.is_other():
            continue
        if not _domain_matches(da, source_domain):
            continue
        per_year[edge.published.year][db.grouped] += 1
    out: dict[int, dict[str, float]] = {}
    for year in sorted(per_year):
        total = sum(per_year[year].values())
        out[year] = {dom: 100.0 * n / total for dom, n in sorted(per_year[year].items())}
    return out


# --- persistence ---------------------------------------------------------------------

def _canonical_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def save(snapshot: KbSnapshot, directory: str | Path) -> None:
    """Write nodes.jsonl, edges.jsonl, and meta.json in canonical form."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "nodes.jsonl", "w", encoding="utf-8") as fp:
        for node_id in sorted(snapshot.nodes):
            fp.write(_canonical_line(snapshot.nodes[node_id].to_json()) + "\n")
    with open(directory / "edges.jsonl", "w", encoding="utf-8") as fp:
        for edge in snapshot.edges:
            fp.write(_canonical_line(edge.to_json()) + "\n")
    with open(directory / "meta.json", "w", encoding="utf-8") as fp:
        fp.write(json.dumps(snapshot.meta, sort_keys=True, ensure_ascii=False, indent=2))
        fp.write("\n")


def load(directory: str | Path) -> KbSnapshot:
    directory = Path(directory)
    for name in ("nodes.jsonl", "edges.jsonl", "meta.json"):
        if not (directory / name).exists():
            raise KbLoadError(f"missing {name}", path=str(directory / name))

    def read_lines(path: Path, parse):
        items = []
        with open(path, encoding="utf-8") as fp:
            for i, line in enumerate(fp, start=1):
                if not line.strip():
                    continue
                try:
                    items.append(parse(json.loads(line)))
                except (json.JSONDecodeError, KeyError, ValueError) as exc:
                    raise KbLoadError(f"corrupt entry: {exc}", path=str(path), line=i) from exc
        return items

    nodes = read_lines(directory / "nodes.jsonl", ConceptNode.from_json)
    edges = read_lines(directory / "edges.jsonl", RecombinationEdge.from_json)
    try:
        with open(directory / "meta.json", encoding="utf-8") as fp:
            meta = json.load(fp)
    except json.JSONDecodeError as exc:
        raise KbLoadError(f"corrupt meta.json: {exc}", path=str(directory / "meta.json"),
                          line=exc.lineno) from exc
    snapshot = KbSnapshot(nodes={n.node_id: n for n in nodes}, edges=edges, meta=meta)
    snapshot.check_integrity()
    return snapshot
