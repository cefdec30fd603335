"""Entity normalization: abbreviation handling and embedding-based
agglomerative clustering of surface forms into concept clusters.

Expansion is a self-contained initial-letter alignment heuristic: a trailing
"(SF)" is stripped when the short form's letters spell the initials of the
words before it, and a bare short form is replaced when the abstract defines
it as "Long Form (SF)".
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .gateway import EmbedRequest, Gateway

DEFAULT_DISTANCE_THRESHOLD = 0.05

_TRAILING_PAREN = re.compile(r"^(?P<long>.*\S)\s*\((?P<sf>[^()]+)\)\s*$", re.DOTALL)
_ANY_PAREN = re.compile(r"\(([^()]+)\)")


class ClusterError(Exception):
    pass


def _letters(text: str) -> list[str]:
    return [c.lower() for c in text if c.isalpha()]


def _word_initials(words: Sequence[str]) -> list[str]:
    """First letter of every word, counting hyphen/slash-separated parts."""
    initials = []
    for word in words:
        for part in re.split(r"[-/]", word):
            for c in part:
                if c.isalpha():
                    initials.append(c.lower())
                    break
    return initials


def _align_long_form(words: Sequence[str], short_form: str) -> list[str] | None:
    """Longest word suffix whose initials spell the short form (a trailing
    plural 's' on the short form is ignored)."""
    targets = [_letters(short_form)]
    if targets[0] and short_form.endswith("s") and short_form[-1].islower():
        targets.append(targets[0][:-1])
    for target in targets:
        if not target:
            continue
        max_words = min(len(words), len(target))
        for j in range(max_words, 0, -1):
            if _word_initials(words[-j:]) == target:
                return list(words[-j:])
    return None


def strip_trailing_short_form(text: str) -> str:
    """"Chain of Thought (CoT)" -> "Chain of Thought"; unrelated
    parentheticals are kept."""
    m = _TRAILING_PAREN.match(text)
    if not m:
        return text
    long_part = m.group("long")
    if _align_long_form(long_part.split(), m.group("sf")) is None:
        return text
    return long_part.strip()


def find_definitions(abstract: str) -> dict[str, str]:
    """Scan an abstract for "Long Form (SF)" definitions; first wins."""
    defs: dict[str, str] = {}
    for m in _ANY_PAREN.finditer(abstract):
        sf = m.group(1).strip()
        if not (1 <= len(_letters(sf)) <= 10) or " " in sf:
            continue
        before = abstract[: m.start()].split()
        aligned = _align_long_form(before, sf)
        if aligned and sf not in defs:
            defs[sf] = " ".join(aligned)
    return defs


def expand_abbreviations(entity_text: str, abstract: str) -> str:
    """Normalize one entity span against its abstract.

    Step 1 strips a trailing parenthesized short form; step 2 replaces a
    bare short form with the long form the abstract defines for it.
    Unresolvable text passes through unchanged.
    """
    stripped = strip_trailing_short_form(entity_text)
    if stripped != entity_text:
        return stripped
    bare = entity_text.strip()
    if bare and " " not in bare:
        definitions = find_definitions(abstract)
        if bare in definitions:
            return definitions[bare]
    return entity_text


# --- clustering -----------------------------------------------------------------

@dataclass
class Cluster:
    cluster_id: int
    canonical: str
    members: list[str]
    indices: list[int]


@dataclass
class ClusterAssignment:
    assignments: list[int]  # input index -> cluster_id
    clusters: dict[int, Cluster]

    def cluster_of(self, index: int) -> Cluster:
        return self.clusters[self.assignments[index]]

    def partition(self) -> set[frozenset[int]]:
        return {frozenset(c.indices) for c in self.clusters.values()}


def canonical_name(member_freqs: Mapping[str, int]) -> str:
    """Most frequent surface form; ties prefer shorter, then lexicographic."""
    if not member_freqs:
        raise ValueError("cluster must be nonempty")
    return min(member_freqs, key=lambda t: (-member_freqs[t], len(t), t))


def average_linkage_merge(distance: np.ndarray, threshold: float) -> list[list[int]]:
    """Agglomerative average-linkage clustering over a distance matrix.

    Merging continues while the minimum inter-cluster average distance is
    <= threshold; tied minima resolve to the smallest (id_a, id_b) pair,
    where a cluster's id is the smallest member index. Returns member-index
    lists sorted by cluster id.
    """
    n = distance.shape[0]
    dist = distance.astype(float).copy()
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    active = sorted(members)
    while len(active) > 1:
        best = None
        best_d = None
        for ai, i in enumerate(active):
            row = dist[i]
            for j in active[ai + 1:]:
                d = row[j]
                if best_d is None or d < best_d:
                    best_d = d
                    best = (i, j)
        if best is None or best_d > threshold:
            break
        i, j = best
        si, sj = len(members[i]), len(members[j])
        # Lance-Williams update for average linkage
        for k in active:
            if k in (i, j):
                continue
            merged = (si * dist[i, k] + sj * dist[j, k]) / (si + sj)
            dist[i, k] = dist[k, i] = merged
        members[i] = members[i] + members[j]
        del members[j]
        active = sorted(members)
    return [sorted(members[i]) for i in sorted(members)]


def cosine_distance_matrix(vectors: np.ndarray) -> np.ndarray:
    sims = vectors @ vectors.T
    dist = 1.0 - sims
    dist = np.maximum(dist, 0.0)
    dist[dist < 1e-12] = 0.0
    np.fill_diagonal(dist, 0.0)
    return (dist + dist.T) / 2.0


def cluster_entities(texts: Sequence[str], gateway: Gateway, model_id: str,
                     threshold: float = DEFAULT_DISTANCE_THRESHOLD,
                     batch_size: int = 256) -> ClusterAssignment:
    """Embed texts (unit-normalized) and agglomerate with average linkage
    under cosine distance. Deterministic for a fixed input order and
    embedding table."""
    if not texts:
        raise ClusterError("no texts to cluster")
    vectors = []
    for batch_index, start in enumerate(range(0, len(texts), batch_size)):
        batch = list(texts[start:start + batch_size])
        try:
            vectors.extend(gateway.embed(EmbedRequest(model_id, batch, normalize=True)))
        except Exception as exc:  # noqa: BLE001
            raise ClusterError(f"embedding batch {batch_index} failed: {exc}") from exc
    matrix = cosine_distance_matrix(np.asarray(vectors, dtype=float))
    groups = average_linkage_merge(matrix, threshold)

    assignments = [0] * len(texts)
    clusters: dict[int, Cluster] = {}
    for group in groups:
        cid = group[0]
        freqs = Counter(texts[i] for i in group)
        clusters[cid] = Cluster(cluster_id=cid, canonical=canonical_name(freqs),
                                members=sorted(freqs), indices=list(group))
        for i in group:
            assignments[i] = cid
    return ClusterAssignment(assignments=assignments, clusters=clusters)
