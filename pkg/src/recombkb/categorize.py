"""Scientific-domain assignment for extracted entities.

Each entity gets exactly one label: an arXiv category when one fits, else a
branch from the packaged non-arXiv catalog, else Other. Branches are grouped
into coarser domains to thicken infrequent ones; Other-labeled nodes stay in
the graph but are excluded from analytics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import date
from importlib import resources
from typing import Sequence

from .extract import fill_template, first_json_array, load_prompt
from .gateway import GenRequest, Gateway
from .model import (
    BLEND,
    RecombinationRecord,
    inspiration_source,
    inspiration_target,
    validate_record,
)

KIND_ARXIV = "arxiv"
KIND_BRANCH = "branch"
KIND_OTHER = "other"
OTHER_GROUP = "Other"


@dataclass(frozen=True)
class DomainLabel:
    kind: str  # arxiv | branch | other
    value: str  # category code, branch name, or "" for other
    grouped: str

    def is_other(self) -> bool:
        return self.kind == KIND_OTHER

    def to_json(self) -> dict:
        return {"kind": self.kind, "value": self.value, "grouped": self.grouped}

    @classmethod
    def from_json(cls, obj: dict) -> "DomainLabel":
        return cls(kind=obj["kind"], value=obj["value"], grouped=obj["grouped"])


OTHER_LABEL = DomainLabel(kind=KIND_OTHER, value="", grouped=OTHER_GROUP)


class BranchCatalog:
    """The packaged non-arXiv branch list plus branch -> group mapping and
    the known arXiv category codes."""

    def __init__(self, branches: Sequence[str], groups: dict[str, list[str]],
                 arxiv_codes: Sequence[str]):
        self.branches = list(branches)
        self.groups = {g: list(bs) for g, bs in groups.items()}
        self._branch_by_lower = {b.lower(): b for b in self.branches}
        self._group_by_branch: dict[str, str] = {}
        for group, members in self.groups.items():
            for member in members:
                if member.lower() not in self._branch_by_lower:
                    raise ValueError(f"grouped branch {member!r} missing from branch list")
                self._group_by_branch[member.lower()] = group
        self.arxiv_codes = frozenset(c.lower() for c in arxiv_codes)

    @classmethod
    def load(cls) -> "BranchCatalog":
        data = json.loads(resources.files("recombkb.data")
                          .joinpath("domains.json").read_text("utf-8"))
        codes = resources.files("recombkb.data").joinpath("arxiv_categories.txt") \
            .read_text("utf-8").split()
        return cls(branches=data["branches"], groups=data["groups"], arxiv_codes=codes)

    def lookup_branch(self, name: str) -> str | None:
        return self._branch_by_lower.get(name.strip().lower())

    def is_arxiv(self, code: str) -> bool:
        return code.strip().lower() in self.arxiv_codes

    def group_of_branch(self, branch: str) -> str:
        canonical = self.lookup_branch(branch)
        if canonical is None:
            return branch
        return self._group_by_branch.get(canonical.lower(), canonical)


def group_domain(label: DomainLabel, catalog: BranchCatalog) -> str:
    """Grouped form of a label: branches map through the catalog grouping,
    arXiv codes and ungrouped branches map to themselves. Idempotent."""
    if label.kind == KIND_ARXIV:
        return label.value
    if label.kind == KIND_BRANCH:
        return catalog.group_of_branch(label.value)
    return OTHER_GROUP


def make_label(catalog: BranchCatalog, arxiv_category: str | None,
               branch: str | None) -> DomainLabel:
    """Resolve a backend reply into a label: a known arXiv category wins,
    then a cataloged branch, else Other."""
    if arxiv_category and catalog.is_arxiv(arxiv_category):
        code = arxiv_category.strip().lower()
        return DomainLabel(kind=KIND_ARXIV, value=code, grouped=code)
    if branch:
        canonical = catalog.lookup_branch(branch)
        if canonical is not None:
            return DomainLabel(kind=KIND_BRANCH, value=canonical,
                               grouped=catalog.group_of_branch(canonical))
    return OTHER_LABEL


def _domain_prompt(record: RecombinationRecord, abstract: str,
                   catalog: BranchCatalog) -> str:
    arxiv = ", ".join(sorted(catalog.arxiv_codes))
    branches = ", ".join(catalog.branches)
    if record.relation_type == BLEND:
        elements = "\n".join(f"- {e.text}" for e in record.entities)
        return fill_template(load_prompt("domain_blend"), abstract=abstract,
                             elements=elements, arxiv=arxiv, branches=branches)
    return fill_template(load_prompt("domain_inspiration"), abstract=abstract,
                         inspiration_source=inspiration_source(record).text,
                         inspiration_target=inspiration_target(record).text,
                         arxiv=arxiv, branches=branches)


def assign_domains(record: RecombinationRecord, abstract: str, gateway: Gateway,
                   model_id: str, catalog: BranchCatalog) -> list[DomainLabel]:
    """One label per record entity, in entity order.

    Blends and inspirations use different prompts; an unparseable reply
    labels every entity Other rather than failing the record.
    """
    validate_record(record)
    prompt = _domain_prompt(record, abstract, catalog)
    reply = gateway.generate(GenRequest(model_id=model_id, prompt=prompt, max_tokens=512))
    items = first_json_array(reply)
    if items is None:
        return [OTHER_LABEL] * len(record.entities)
    # prompt order: blends list entities in record order; inspirations are
    # source first, target second
    if record.relation_type == BLEND:
        ordered = list(record.entities)
    else:
        ordered = [inspiration_source(record), inspiration_target(record)]
    by_entity: dict[int, DomainLabel] = {}
    for pos, ent in enumerate(ordered):
        label = OTHER_LABEL
        if pos < len(items) and isinstance(items[pos], dict):
            item = items[pos]
            arxiv_cat = item.get("arxiv_category")
            branch = item.get("branch")
            label = make_label(catalog,
                               arxiv_cat if isinstance(arxiv_cat, str) else None,
                               branch if isinstance(branch, str) else None)
        by_entity[record.entities.index(ent)] = label
    return [by_entity[i] for i in range(len(record.entities))]


def vote_domain(occurrences: Sequence[tuple[DomainLabel, date | None]]) -> DomainLabel:
    """Node-level label: majority vote over member entity labels; ties go to
    the label seen on the most recent paper."""
    if not occurrences:
        return OTHER_LABEL
    counts: dict[DomainLabel, int] = {}
    latest: dict[DomainLabel, date] = {}
    for label, published in occurrences:
        counts[label] = counts.get(label, 0) + 1
        when = published or date.min
        if label not in latest or when > latest[label]:
            latest[label] = when
    best = max(counts.values())
    tied = [lbl for lbl, n in counts.items() if n == best]
    tied.sort(key=lambda lbl: (latest[lbl], lbl.kind, lbl.value), reverse=True)
    newest = latest[tied[0]]
    final = [lbl for lbl in tied if latest[lbl] == newest]
    final.sort(key=lambda lbl: (lbl.kind, lbl.value))
    return final[0]
