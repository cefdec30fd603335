"""Recombination prediction: query/answer pair construction with extracted
contexts, leakage filtering, temporal splits, embedding-based candidate
ranking in the filtered setting, ranking metrics, sliding-window reranking,
and contrastive training-pair export.

Two query flavors mirror the two relation types: given a problem context and
a target, predict a source of inspiration; given a context and one part of an
idea, predict another part to blend with it.
"""

from __future__ import annotations

import json
import random
import re
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .extract import fill_template, load_prompt
from .gateway import EmbedRequest, GenRequest, Gateway
from .kb import KbSnapshot
from .model import (
    BLEND,
    INSPIRATION,
    AbstractDoc,
    RecombinationRecord,
    inspiration_source,
    inspiration_target,
)

DEFAULT_CUTOFF_YEAR = 2024
# train/validation proportions mirror the reference split sizes
DEFAULT_VALIDATION_FRACTION = 530 / 25847
DEFAULT_KS = (3, 5, 10, 50, 100)
RERANK_TOP = 20
RERANK_WINDOW = 10
RERANK_STEP = 5

INSPIRATION_QUESTION = 'What would be a good source of inspiration for "{entity}"?'
BLEND_QUESTION = 'What could we blend with "{entity}" to address the described settings?'


def methodology_statement(relation_type: str, a: str, b: str) -> str:
    """One-sentence statement of the paper's recombination, used to steer
    context extraction. For inspirations ``a`` is the source and ``b`` the
    target."""
    if relation_type == BLEND:
        return f"Combine {a} and {b}"
    return f"Take inspiration from {a} and apply it to {b}"


def question_for(relation_type: str, entity: str) -> str:
    template = BLEND_QUESTION if relation_type == BLEND else INSPIRATION_QUESTION
    return template.format(entity=entity)


@dataclass
class PredictionQuery:
    query_id: str
    context: str
    given_entity: str  # node id
    relation_type: str
    question: str
    gold_answer: str  # node id
    paper_id: str
    published: date | None

    @property
    def text(self) -> str:
        return f"{self.context}\n{self.question}" if self.context else self.question

    def to_json(self) -> dict:
        return {
            "query_id": self.query_id,
            "context": self.context,
            "given_entity": self.given_entity,
            "relation_type": self.relation_type,
            "question": self.question,
            "gold_answer": self.gold_answer,
            "paper_id": self.paper_id,
            "published": self.published.isoformat() if self.published else None,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PredictionQuery":
        return cls(
            query_id=obj["query_id"],
            context=obj["context"],
            given_entity=obj["given_entity"],
            relation_type=obj["relation_type"],
            question=obj["question"],
            gold_answer=obj["gold_answer"],
            paper_id=obj["paper_id"],
            published=date.fromisoformat(obj["published"]) if obj["published"] else None,
        )


@dataclass
class RankedQuery:
    query_id: str
    ranking: list[tuple[str, float]]  # (node_id, score), best first, post-filter
    filtered_rank: int
    raw_rank: int

    def to_json(self) -> dict:
        return {"query_id": self.query_id,
                "ranking": [[n, s] for n, s in self.ranking],
                "filtered_rank": self.filtered_rank,
                "raw_rank": self.raw_rank}


# --- context extraction and leakage ------------------------------------------------

def extract_context_for_texts(abstract: str, relation_type: str, a: str, b: str,
                              gateway: Gateway, model_id: str) -> str:
    prompt = fill_template(load_prompt("context"), abstract=abstract,
                           methodology_statement=methodology_statement(relation_type, a, b))
    return gateway.generate(GenRequest(model_id=model_id, prompt=prompt,
                                       max_tokens=256)).strip()


def extract_context(abstract: str, record: RecombinationRecord, gateway: Gateway,
                    model_id: str) -> str:
    """Background/motivation sentences for one record's recombination."""
    if record.relation_type == INSPIRATION:
        a, b = inspiration_source(record).text, inspiration_target(record).text
    else:
        a, b = record.entities[0].text, record.entities[1].text
    return extract_context_for_texts(abstract, record.relation_type, a, b,
                                     gateway, model_id)


def detect_leak(query_text: str, answer: str, gateway: Gateway, model_id: str) -> bool:
    """True when the query reveals or strongly implies its answer; such
    pairs are discarded. An unparseable verdict counts as a leak."""
    prompt = fill_template(load_prompt("leak"), query=query_text, answer=answer)
    reply = gateway.generate(GenRequest(model_id=model_id, prompt=prompt, max_tokens=8))
    word = reply.strip().lower().strip('."\'` ')
    if word.startswith("yes"):
        return True
    if word.startswith("no"):
        return False
    return True


@dataclass
class QueryBuildStats:
    edges: int = 0
    candidates: int = 0
    leaked: int = 0
    kept: int = 0
    self_loops_skipped: int = 0

    @property
    def leak_rate(self) -> float:
        return self.leaked / self.candidates if self.candidates else 0.0


def build_queries(snapshot: KbSnapshot, docs: Mapping[str, AbstractDoc],
                  gateway: Gateway, context_model: str, leak_model: str,
                  ) -> tuple[list[PredictionQuery], QueryBuildStats]:
    """Convert KB edges into leak-filtered query/answer pairs.

    An inspiration edge yields one pair (given the target, predict the
    source); a blend edge yields one pair per orientation. Self-loop edges
    cannot produce a query (gold must differ from the given node).
    """
    stats = QueryBuildStats()
    queries: list[PredictionQuery] = []
    counter = 0
    for edge in snapshot.edges:
        stats.edges += 1
        if edge.self_loop:
            stats.self_loops_skipped += 1
            continue
        doc = docs.get(edge.paper_id)
        abstract = doc.abstract if doc else ""
        name_a = snapshot.nodes[edge.endpoint_a].canonical
        name_b = snapshot.nodes[edge.endpoint_b].canonical
        context = extract_context_for_texts(abstract, edge.type, name_a, name_b,
                                            gateway, context_model)
        if edge.type == INSPIRATION:
            directions = [(edge.endpoint_b, name_b, edge.endpoint_a, name_a)]
        else:
            directions = [(edge.endpoint_a, name_a, edge.endpoint_b, name_b),
                          (edge.endpoint_b, name_b, edge.endpoint_a, name_a)]
        for given_id, given_name, gold_id, gold_name in directions:
            stats.candidates += 1
            question = question_for(edge.type, given_name)
            query = PredictionQuery(
                query_id=f"q{counter:06d}",
                context=context,
                given_entity=given_id,
                relation_type=edge.type,
                question=question,
                gold_answer=gold_id,
                paper_id=edge.paper_id,
                published=edge.published,
            )
            counter += 1
            if detect_leak(query.text, gold_name, gateway, leak_model):
                stats.leaked += 1
                continue
            stats.kept += 1
            queries.append(query)
    return queries, stats


# --- temporal splits -----------------------------------------------------------------

@dataclass
class Splits:
    train: list[PredictionQuery] = field(default_factory=list)
    validation: list[PredictionQuery] = field(default_factory=list)
    test: list[PredictionQuery] = field(default_factory=list)

    def sizes(self) -> dict:
        return {"train": len(self.train), "validation": len(self.validation),
                "test": len(self.test)}


def split_by_cutoff(pairs: Sequence[PredictionQuery],
                    cutoff_year: int = DEFAULT_CUTOFF_YEAR,
                    validation_fraction: float = DEFAULT_VALIDATION_FRACTION,
                    seed: int = 13) -> Splits:
    """Papers published in or after the cutoff year go to test; earlier
    papers split train/validation by a seeded ratio.

    Assignment is by paper, so paper ids are disjoint across the three
    sides; a paper whose pairs disagree on the publication date is invalid
    input.
    """
    by_paper: dict[str, list[PredictionQuery]] = defaultdict(list)
    for pair in pairs:
        if pair.published is None:
            raise ValueError(f"pair {pair.query_id} has no publication date")
        by_paper[pair.paper_id].append(pair)
    for paper, group in by_paper.items():
        if len({q.published for q in group}) > 1:
            raise ValueError(f"paper {paper} has pairs with inconsistent dates")
    splits = Splits()
    earlier: list[str] = []
    n_earlier = 0
    for paper in sorted(by_paper):
        group = by_paper[paper]
        if group[0].published.year >= cutoff_year:
            splits.test.extend(group)
        else:
            earlier.append(paper)
            n_earlier += len(group)
    random.Random(seed).shuffle(earlier)
    target = round(validation_fraction * n_earlier)
    taken = 0
    for paper in earlier:
        group = by_paper[paper]
        if taken < target:
            splits.validation.extend(group)
            taken += len(group)
        else:
            splits.train.extend(group)
    return splits


# --- candidate ranking ----------------------------------------------------------------

def default_candidate_pool(splits: Splits) -> list[str]:
    """Distinct gold-answer nodes of the test split, the default ranking pool."""
    return sorted({q.gold_answer for q in splits.test})


def known_edge_set(pairs: Iterable[PredictionQuery]) -> set[tuple[str, str, str]]:
    """(given, relation, answer) triples regarded as true; blends count in
    both orientations."""
    known = set()
    for q in pairs:
        known.add((q.given_entity, q.relation_type, q.gold_answer))
        if q.relation_type == BLEND:
            known.add((q.gold_answer, q.relation_type, q.given_entity))
    return known


def apply_filtered_setting(ranking: Sequence[tuple[str, float]], query: PredictionQuery,
                           known_edges: set[tuple[str, str, str]]) -> list[tuple[str, float]]:
    """Drop every non-gold candidate that is itself a known true answer for
    this query; the gold's rank can only improve."""
    out = []
    for node_id, score in ranking:
        if node_id != query.gold_answer and \
                (query.given_entity, query.relation_type, node_id) in known_edges:
            continue
        out.append((node_id, score))
    return out


def rank_of(ranking: Sequence[tuple[str, float]], node_id: str) -> int:
    for i, (candidate, _score) in enumerate(ranking):
        if candidate == node_id:
            return i + 1
    raise ValueError(f"{node_id} not present in ranking")


class CandidateIndex:
    """Pool embeddings computed once and reused across queries."""

    def __init__(self, pool: Sequence[str], node_texts: Mapping[str, str],
                 gateway: Gateway, model_id: str, batch_size: int = 256):
        if not pool:
            raise ValueError("candidate pool must be nonempty")
        self.pool = list(pool)
        self.node_texts = node_texts
        self.gateway = gateway
        self.model_id = model_id
        texts = [node_texts[n] for n in self.pool]
        vectors: list[list[float]] = []
        for start in range(0, len(texts), batch_size):
            vectors.extend(gateway.embed(EmbedRequest(model_id, texts[start:start + batch_size],
                                                      normalize=True)))
        self.matrix = np.asarray(vectors, dtype=float)

    def score(self, query_text: str) -> list[tuple[str, float]]:
        """Cosine scores (unit-normalized inner products), best first; ties
        break toward the smaller node id."""
        qvec = np.asarray(self.gateway.embed(EmbedRequest(self.model_id, [query_text],
                                                          normalize=True))[0])
        scores = self.matrix @ qvec
        order = sorted(range(len(self.pool)), key=lambda i: (-scores[i], self.pool[i]))
        return [(self.pool[i], float(scores[i])) for i in order]


def rank_candidates(query: PredictionQuery, pool: Sequence[str],
                    node_texts: Mapping[str, str], gateway: Gateway, model_id: str,
                    known_edges: set[tuple[str, str, str]] | None = None,
                    index: CandidateIndex | None = None) -> RankedQuery:
    """Embed the query against the candidate pool and rank; the filtered
    setting then removes other known positives above or below the gold."""
    if index is None:
        index = CandidateIndex(pool, node_texts, gateway, model_id)
    if query.gold_answer not in index.pool:
        raise ValueError(f"gold answer {query.gold_answer} not in candidate pool")
    ranking = index.score(query.text)
    raw_rank = rank_of(ranking, query.gold_answer)
    if known_edges:
        ranking = apply_filtered_setting(ranking, query, known_edges)
    filtered_rank = rank_of(ranking, query.gold_answer)
    return RankedQuery(query_id=query.query_id, ranking=ranking,
                       filtered_rank=filtered_rank, raw_rank=raw_rank)


# --- metrics ---------------------------------------------------------------------------

@dataclass
class RankingReport:
    hits: dict[int, float]
    mrr: float
    medr: float

    def to_json(self) -> dict:
        return {"hits": {str(k): v for k, v in sorted(self.hits.items())},
                "mrr": self.mrr, "medr": self.medr}

    def format_table(self) -> str:
        ks = sorted(self.hits)
        header = "".join(f"{'H@' + str(k):>8}" for k in ks) + f"{'MRR':>8}{'MedR':>8}"
        row = "".join(f"{self.hits[k]:>8.3f}" for k in ks) + f"{self.mrr:>8.3f}{self.medr:>8.0f}"
        return header + "\n" + row


def ranking_metrics(ranked: Sequence[RankedQuery],
                    ks: Sequence[int] = DEFAULT_KS) -> RankingReport:
    """Hits@K, mean reciprocal rank, and median rank over filtered ranks.

    An even count takes the lower median.
    """
    if not ranked:
        raise ValueError("no ranked queries")
    ranks = [r.filtered_rank for r in ranked]
    hits = {k: sum(1 for r in ranks if r <= k) / len(ranks) for k in ks}
    mrr = sum(1.0 / r for r in ranks) / len(ranks)
    medr = float(sorted(ranks)[(len(ranks) - 1) // 2])
    return RankingReport(hits=hits, mrr=mrr, medr=medr)


# --- reranking --------------------------------------------------------------------------

def window_starts(n: int, window: int = RERANK_WINDOW, step: int = RERANK_STEP) -> list[int]:
    """Bottom-up sliding window start offsets (last window reaches rank 1)."""
    if n <= window:
        return [0]
    starts = []
    s = n - window
    while s > 0:
        starts.append(s)
        s -= step
    starts.append(0)
    return starts


def parse_window_order(reply: str, size: int) -> list[int]:
    """Turn a reranker reply into a 0-based permutation of range(size).

    Numbers are read in order of appearance; duplicates and out-of-range
    entries are dropped and missing positions appended in original order,
    so the result is always a permutation.
    """
    seen: list[int] = []
    for token in re.findall(r"\d+", reply):
        idx = int(token) - 1
        if 0 <= idx < size and idx not in seen:
            seen.append(idx)
    for idx in range(size):
        if idx not in seen:
            seen.append(idx)
    return seen


def rerank_top_k(query_text: str, candidates: Sequence[str], gateway: Gateway,
                 model_id: str, window: int = RERANK_WINDOW,
                 step: int = RERANK_STEP) -> list[str]:
    """Listwise rerank of the retriever's top candidates with a sliding
    window, processed bottom-up so strong low-ranked items can climb.

    The output is always a permutation of the input; a window whose reply
    cannot be parsed is left unchanged.
    """
    if len(candidates) > RERANK_TOP:
        raise ValueError(f"rerank operates on at most {RERANK_TOP} candidates")
    items = list(candidates)
    for start in window_starts(len(items), window, step):
        chunk = items[start:start + window]
        numbered = "\n".join(f"[{i + 1}] {text}" for i, text in enumerate(chunk))
        prompt = fill_template(load_prompt("rerank"), query=query_text,
                               candidates=numbered, count=str(len(chunk)))
        reply = gateway.generate(GenRequest(model_id=model_id, prompt=prompt,
                                            max_tokens=256))
        order = parse_window_order(reply, len(chunk))
        items[start:start + window] = [chunk[i] for i in order]
    return items


# --- contrastive export -----------------------------------------------------------------

def export_contrastive_pairs(train_pairs: Sequence[PredictionQuery],
                             pool: Sequence[str], node_texts: Mapping[str, str],
                             path: str | Path, negatives_per_positive: int = 30,
                             seed: int = 17,
                             known_edges: set[tuple[str, str, str]] | None = None) -> int:
    """Write one JSONL row per (query, positive, negative) triple.

    Negatives are sampled uniformly without replacement from the pool minus
    the gold and minus every known positive for the query; a fixed seed
    reproduces the file byte for byte.
    """
    if known_edges is None:
        known_edges = known_edge_set(train_pairs)
    rng = random.Random(seed)
    rows = 0
    with open(path, "w", encoding="utf-8") as fp:
        for query in train_pairs:
            eligible = [n for n in sorted(pool)
                        if n != query.gold_answer
                        and (query.given_entity, query.relation_type, n) not in known_edges]
            if len(eligible) < negatives_per_positive:
                raise ValueError(f"pool too small for query {query.query_id}: "
                                 f"{len(eligible)} eligible negatives")
            for negative in rng.sample(eligible, negatives_per_positive):
                row = {"query_id": query.query_id, "query": query.text,
                       "positive": node_texts.get(query.gold_answer, query.gold_answer),
                       "negative": node_texts.get(negative, negative)}
                fp.write(json.dumps(row, sort_keys=True, ensure_ascii=False,
                                    separators=(",", ":")) + "\n")
                rows += 1
    return rows
