"""Extraction evaluation: soft entity matching with a reversed-order judge
protocol, partial relation credit, classification reports, inter-annotator
agreement, Cohen's kappa, and large-scale correctness auditing.

Entity matching is judged (semantic), not string equality. A predicted
entity may match at most one gold entity and vice versa; the matching is the
maximum one-to-one matching over judge-positive same-role pairs. A predicted
relation earns credit proportional to its matched entity slots against a
gold relation of the same type (0, 0.5, or 1 for binary relations).
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .extract import binarize, fill_template, load_prompt
from .gateway import GenRequest, Gateway
from .model import (
    BLEND,
    NOT_PRESENT,
    EntitySpan,
    GoldAnnotation,
    RecombinationRecord,
    RecombinationRecord as _Record,
    validate_record,
)

# judge(gold_span, pred_span) -> bool; spans are guaranteed same-role
Judge = Callable[[EntitySpan, EntitySpan], bool]
# doc-aware judge used by IAA: judge(paper_id, gold_span, pred_span) -> bool
DocJudge = Callable[[str, EntitySpan, EntitySpan], bool]


class EvalError(Exception):
    """An evaluation step failed (judge error, unparseable verdict, bad input)."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


@dataclass
class MatchDecision:
    gold_index: int
    pred_index: int
    matched: bool = True


@dataclass
class EvalReport:
    level: str  # classification | entity | relation
    precision: float
    recall: float
    f1: float
    support: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"level": self.level, "precision": self.precision,
                "recall": self.recall, "f1": self.f1, "support": self.support}


def _prf(tp: float, pred_n: float, gold_n: float, level: str,
         extra: dict | None = None) -> EvalReport:
    precision = tp / pred_n if pred_n > 0 else 0.0
    recall = tp / gold_n if gold_n > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision > 0 and recall > 0 else 0.0
    support = {"tp": tp, "pred": pred_n, "gold": gold_n}
    if extra:
        support.update(extra)
    return EvalReport(level=level, precision=precision, recall=recall, f1=f1,
                      support=support)


# --- judged span matching -------------------------------------------------------

def span_match_prompt(abstract: str, span_1: str, span_2: str, entity_type: str) -> str:
    return fill_template(load_prompt("span_match"), entity_type=entity_type,
                         abstract=abstract, span1=span_1, span2=span_2)


def parse_yes_no(reply: str) -> bool:
    word = reply.strip().lower().strip('."\'` ')
    if word.startswith("yes"):
        return True
    if word.startswith("no"):
        return False
    raise EvalError(f"expected a yes/no verdict, got {reply[:80]!r}")


def judge_span_match(abstract: str, span_a: str, span_b: str, entity_type: str,
                     gateway: Gateway, model_id: str) -> bool:
    """Position-bias-mitigated span equivalence: the judge is queried twice
    with operand order reversed, and a match requires both replies positive."""
    if not span_a or not span_b:
        raise EvalError("spans must be nonempty")
    forward = parse_yes_no(gateway.generate(GenRequest(
        model_id=model_id, prompt=span_match_prompt(abstract, span_a, span_b, entity_type),
        max_tokens=8)))
    if not forward:
        return False
    backward = parse_yes_no(gateway.generate(GenRequest(
        model_id=model_id, prompt=span_match_prompt(abstract, span_b, span_a, entity_type),
        max_tokens=8)))
    return forward and backward


def llm_judge(abstract: str, gateway: Gateway, model_id: str) -> Judge:
    """Bind the two-call judge protocol to one abstract, yielding a plain
    span-pair judge for the matching routines."""

    def judge(gold: EntitySpan, pred: EntitySpan) -> bool:
        return judge_span_match(abstract, gold.text, pred.text, gold.role,
                                gateway, model_id)

    return judge


def cached_judge(judge: Judge) -> Judge:
    """Memoize judge calls per (text, text, role); judges are deterministic."""
    memo: dict[tuple[str, str, str], bool] = {}

    def wrapped(gold: EntitySpan, pred: EntitySpan) -> bool:
        key = (gold.text, pred.text, gold.role)
        if key not in memo:
            memo[key] = judge(gold, pred)
        return memo[key]

    return wrapped


# --- entity-level matching ------------------------------------------------------

def _max_one_to_one(pairs: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    """Maximum-cardinality one-to-one matching, lexicographically smallest.

    Candidate pairs are considered in ascending (gold_index, pred_index)
    order; a pair is kept iff some maximum matching still contains it given
    the pairs already kept, so ties always resolve toward lower indices.
    """
    candidates = sorted(set(pairs))
    adj: dict[int, list[int]] = defaultdict(list)
    for g, p in candidates:
        adj[g].append(p)

    def max_size(banned_gold: set[int], banned_pred: set[int]) -> int:
        match_pred: dict[int, int] = {}

        def try_assign(g: int, visited: set[int]) -> bool:
            for p in adj[g]:
                if p in banned_pred or p in visited:
                    continue
                visited.add(p)
                if p not in match_pred or try_assign(match_pred[p], visited):
                    match_pred[p] = g
                    return True
            return False

        count = 0
        for g in sorted(adj):
            if g not in banned_gold and try_assign(g, set()):
                count += 1
        return count

    total = max_size(set(), set())
    chosen: list[tuple[int, int]] = []
    used_g: set[int] = set()
    used_p: set[int] = set()
    for g, p in candidates:
        if g in used_g or p in used_p:
            continue
        if len(chosen) + 1 + max_size(used_g | {g}, used_p | {p}) == total:
            chosen.append((g, p))
            used_g.add(g)
            used_p.add(p)
    return chosen


def match_entities(gold: Sequence[EntitySpan], pred: Sequence[EntitySpan],
                   judge: Judge) -> list[MatchDecision]:
    """Judge all same-role pairs, then take a maximum one-to-one matching.

    Each gold and each pred entity appears in at most one positive decision;
    ties resolve toward ascending (gold_index, pred_index).
    """
    positive = []
    for gi, g in enumerate(gold):
        for pi, p in enumerate(pred):
            if g.role != p.role:
                continue
            if judge(g, p):
                positive.append((gi, pi))
    matching = _max_one_to_one(positive)
    return [MatchDecision(gold_index=g, pred_index=p) for g, p in matching]


def entity_prf(decisions: Sequence[MatchDecision], gold_count: int,
               pred_count: int) -> EvalReport:
    matches = sum(1 for d in decisions if d.matched)
    if matches > min(gold_count, pred_count):
        raise ValueError("more matches than entities on one side")
    return _prf(matches, pred_count, gold_count, level="entity")


# --- relation-level matching ----------------------------------------------------

def relation_credit(pred: _Record, gold: _Record, judge: Judge) -> float:
    """Partial credit in {0, 0.5, 1}: matched entity slots / 2 for a
    same-type pair; blends score under both element assignments and keep
    the better one. Relations must be binarized."""
    if pred.relation_type != gold.relation_type:
        return 0.0
    if pred.relation_type == BLEND:
        pa, pb = pred.entities[0], pred.entities[1]
        ga, gb = gold.entities[0], gold.entities[1]
        straight = (1 if judge(ga, pa) else 0) + (1 if judge(gb, pb) else 0)
        crossed = (1 if judge(ga, pb) else 0) + (1 if judge(gb, pa) else 0)
        return max(straight, crossed) / 2.0
    by_role_pred = {e.role: e for e in pred.entities}
    by_role_gold = {e.role: e for e in gold.entities}
    hits = 0
    for role, g in by_role_gold.items():
        p = by_role_pred.get(role)
        if p is not None and judge(g, p):
            hits += 1
    return hits / 2.0


def _relation_tp(gold: Sequence[_Record], pred: Sequence[_Record],
                 judge: Judge) -> float:
    """Total true-positive credit under the best one-to-one assignment of
    predicted to gold relations."""
    if not gold or not pred:
        return 0.0
    credit = np.zeros((len(pred), len(gold)))
    for pi, p in enumerate(pred):
        for gi, g in enumerate(gold):
            credit[pi, gi] = relation_credit(p, g, judge)
    rows, cols = linear_sum_assignment(credit, maximize=True)
    return float(credit[rows, cols].sum())


def relation_prf(gold: Sequence[_Record], pred: Sequence[_Record],
                 judge: Judge) -> EvalReport:
    """Precision/recall/F1 with partial relation credit.

    TP is the summed credit of the credit-maximizing one-to-one assignment
    between predicted and gold relations (each relation used once);
    P = TP/|pred|, R = TP/|gold|.
    """
    for r in list(gold) + list(pred):
        if len(r.entities) != 2:
            raise ValueError("relations must be binarized before matching")
    tp = _relation_tp(gold, pred, judge)
    return _prf(tp, len(pred), len(gold), level="relation")


# --- classification -------------------------------------------------------------

@dataclass
class ClassificationReport:
    per_class: dict[str, EvalReport]
    macro: EvalReport

    def to_json(self) -> dict:
        return {"per_class": {k: v.to_json() for k, v in self.per_class.items()},
                "macro": self.macro.to_json()}


def classification_report(gold_labels: Sequence[str],
                          pred_labels: Sequence[str]) -> ClassificationReport:
    """Per-class precision/recall/F1 over the union of observed labels,
    plus their macro average (the headline number)."""
    if len(gold_labels) != len(pred_labels):
        raise ValueError("gold and prediction label sequences differ in length")
    if not gold_labels:
        raise ValueError("empty label sequences")
    classes = sorted(set(gold_labels) | set(pred_labels))
    per_class: dict[str, EvalReport] = {}
    for cls in classes:
        tp = sum(1 for g, p in zip(gold_labels, pred_labels) if g == cls and p == cls)
        pred_n = sum(1 for p in pred_labels if p == cls)
        gold_n = sum(1 for g in gold_labels if g == cls)
        per_class[cls] = _prf(tp, pred_n, gold_n, level="classification")
    macro = EvalReport(
        level="classification",
        precision=sum(r.precision for r in per_class.values()) / len(classes),
        recall=sum(r.recall for r in per_class.values()) / len(classes),
        f1=sum(r.f1 for r in per_class.values()) / len(classes),
        support={"n": len(gold_labels), "classes": len(classes)},
    )
    return ClassificationReport(per_class=per_class, macro=macro)


def to_presence(label: str) -> str:
    return "absent" if label == NOT_PRESENT else "present"


# --- inter-annotator agreement ---------------------------------------------------

@dataclass
class IaaReport:
    classification: ClassificationReport
    entity: EvalReport
    relation: EvalReport


def _annotation_relations(ann: GoldAnnotation) -> list[_Record]:
    if ann.label == NOT_PRESENT:
        return []
    record = RecombinationRecord(paper_id=ann.paper_id, relation_type=ann.label,
                                 entities=list(ann.entities))
    validate_record(record)
    return binarize(record)


def iaa_report(annotations_a: Sequence[GoldAnnotation],
               annotations_b: Sequence[GoldAnnotation],
               judge: DocJudge) -> IaaReport:
    """Agreement between two annotators, treating A as the reference.

    Classification agreement is the 3-way label report; entity and relation
    agreement micro-aggregate the soft-matching counts across documents.
    """
    by_a = {a.paper_id: a for a in annotations_a}
    by_b = {b.paper_id: b for b in annotations_b}
    missing = sorted(set(by_a) ^ set(by_b))
    if missing:
        raise EvalError(f"annotators cover different papers: {missing}")

    paper_ids = sorted(by_a)
    gold_labels = [by_a[pid].label for pid in paper_ids]
    pred_labels = [by_b[pid].label for pid in paper_ids]
    classification = classification_report(gold_labels, pred_labels)

    ent_tp = ent_gold = ent_pred = 0
    rel_tp = 0.0
    rel_gold = rel_pred = 0
    for pid in paper_ids:
        a, b = by_a[pid], by_b[pid]
        pair_judge = cached_judge(lambda g, p, _pid=pid: judge(_pid, g, p))
        decisions = match_entities(a.entities, b.entities, pair_judge)
        ent_tp += len(decisions)
        ent_gold += len(a.entities)
        ent_pred += len(b.entities)
        gold_rel = _annotation_relations(a)
        pred_rel = _annotation_relations(b)
        rel_tp += _relation_tp(gold_rel, pred_rel, pair_judge)
        rel_gold += len(gold_rel)
        rel_pred += len(pred_rel)

    entity = _prf(ent_tp, ent_pred, ent_gold, level="entity")
    relation = _prf(rel_tp, rel_pred, rel_gold, level="relation")
    return IaaReport(classification=classification, entity=entity, relation=relation)


def cohens_kappa(labels_a: Sequence[str], labels_b: Sequence[str]) -> float:
    """Observed-vs-chance agreement over the label distribution."""
    if len(labels_a) != len(labels_b):
        raise ValueError("label sequences differ in length")
    n = len(labels_a)
    if n == 0:
        raise ValueError("empty label sequences")
    po = sum(1 for a, b in zip(labels_a, labels_b) if a == b) / n
    count_a = Counter(labels_a)
    count_b = Counter(labels_b)
    pe = sum((count_a[c] / n) * (count_b[c] / n) for c in set(count_a) | set(count_b))
    if pe == 1.0:
        return 1.0
    return (po - pe) / (1 - pe)


def _union_kappa(matched: int, only_a: int, only_b: int) -> float:
    """Kappa over per-item match/non-match decisions on the union of both
    annotators' items: matched items agree, one-sided items disagree."""
    if matched + only_a + only_b == 0:
        return 1.0
    labels_a = ["in"] * (matched + only_a) + ["out"] * only_b
    labels_b = ["in"] * matched + ["out"] * only_a + ["in"] * only_b
    return cohens_kappa(labels_a, labels_b)


def iaa_kappa(annotations_a: Sequence[GoldAnnotation],
              annotations_b: Sequence[GoldAnnotation],
              judge: DocJudge) -> dict[str, float]:
    """Kappa per evaluation level.

    Classification uses the 3-way labels directly; entity and relation
    levels apply the union convention over soft-matched items (a relation
    counts as matched when its assigned credit is positive).
    """
    by_a = {a.paper_id: a for a in annotations_a}
    by_b = {b.paper_id: b for b in annotations_b}
    missing = sorted(set(by_a) ^ set(by_b))
    if missing:
        raise EvalError(f"annotators cover different papers: {missing}")
    paper_ids = sorted(by_a)
    classification = cohens_kappa([by_a[p].label for p in paper_ids],
                                  [by_b[p].label for p in paper_ids])
    ent_matched = ent_a = ent_b = 0
    rel_matched = rel_a = rel_b = 0
    for pid in paper_ids:
        a, b = by_a[pid], by_b[pid]
        pair_judge = cached_judge(lambda g, p, _pid=pid: judge(_pid, g, p))
        matches = len(match_entities(a.entities, b.entities, pair_judge))
        ent_matched += matches
        ent_a += len(a.entities) - matches
        ent_b += len(b.entities) - matches
        gold_rel = _annotation_relations(a)
        pred_rel = _annotation_relations(b)
        hits = 0
        if gold_rel and pred_rel:
            credit = np.zeros((len(pred_rel), len(gold_rel)))
            for pi, p in enumerate(pred_rel):
                for gi, g in enumerate(gold_rel):
                    credit[pi, gi] = relation_credit(p, g, pair_judge)
            rows, cols = linear_sum_assignment(credit, maximize=True)
            hits = int(sum(1 for r, c in zip(rows, cols) if credit[r, c] > 0))
        rel_matched += hits
        rel_a += len(gold_rel) - hits
        rel_b += len(pred_rel) - hits
    return {
        "classification": classification,
        "entity": _union_kappa(ent_matched, ent_a, ent_b),
        "relation": _union_kappa(rel_matched, rel_a, rel_b),
    }


# --- large-scale correctness audit ------------------------------------------------

def record_judge_prompt(abstract: str, record: _Record) -> str:
    validate_record(record)
    texts = [e.text for e in record.entities]
    entity_1 = texts[0]
    entity_2 = "; ".join(texts[1:])
    return fill_template(load_prompt("record_judge"), abstract=abstract,
                         extracted_relation=record.relation_type,
                         entity1=entity_1, entity2=entity_2)


def parse_correct_verdict(reply: str) -> bool:
    word = reply.strip().lower().strip('."\'` ')
    if word.startswith("incorrect"):
        return False
    if word.startswith("correct"):
        return True
    raise EvalError(f"expected correct/incorrect, got {reply[:80]!r}")


def judge_record_correctness(abstract: str, record: _Record, gateway: Gateway,
                             model_id: str) -> bool:
    """One judge call per record: are the entities meaningful scientific
    concepts, and does the relation capture a recombination the abstract
    explicitly describes?"""
    reply = gateway.generate(GenRequest(model_id=model_id,
                                        prompt=record_judge_prompt(abstract, record),
                                        max_tokens=8))
    return parse_correct_verdict(reply)


@dataclass
class AuditReport:
    accuracy: float
    verdicts: list[bool]
    agreement_f1: float | None = None

    def to_json(self) -> dict:
        return {"accuracy": self.accuracy, "n": len(self.verdicts),
                "verdicts": self.verdicts, "agreement_f1": self.agreement_f1}


def accuracy_audit(items: Sequence[tuple[str, _Record]], gateway: Gateway,
                   model_id: str,
                   human_verdicts: Sequence[bool] | None = None) -> AuditReport:
    """Judge a sample of (abstract, record) pairs; report the correct
    fraction and, when a human verdict column is supplied, the judge-human
    agreement F1 (positive class: correct)."""
    if not items:
        raise EvalError("audit sample must be nonempty")
    verdicts: list[bool] = []
    for abstract, record in items:
        try:
            verdicts.append(judge_record_correctness(abstract, record, gateway, model_id))
        except Exception as exc:  # noqa: BLE001 - partial results surfaced
            raise EvalError(f"audit aborted at item {len(verdicts)}: {exc}",
                            partial=verdicts) from exc
    accuracy = sum(verdicts) / len(verdicts)
    agreement_f1 = None
    if human_verdicts is not None:
        if len(human_verdicts) != len(items):
            raise EvalError("human verdict column length mismatch")
        tp = sum(1 for j, h in zip(verdicts, human_verdicts) if j and h)
        fp = sum(1 for j, h in zip(verdicts, human_verdicts) if j and not h)
        fn = sum(1 for j, h in zip(verdicts, human_verdicts) if not j and h)
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        agreement_f1 = 2 * p * r / (p + r) if p > 0 and r > 0 else 0.0
    return AuditReport(accuracy=accuracy, verdicts=verdicts, agreement_f1=agreement_f1)


# --- rendering --------------------------------------------------------------------

def format_eval_table(sections: dict[str, dict[str, EvalReport]]) -> str:
    """Fixed-width table: one section per task, one row per system."""
    lines = [f"{'Task':<28}{'System':<28}{'Precision':>10}{'Recall':>10}{'F1':>10}"]
    lines.append("-" * len(lines[0]))
    for task, systems in sections.items():
        first = True
        for system, report in systems.items():
            label = task if first else ""
            lines.append(f"{label:<28}{system:<28}"
                         f"{report.precision:>10.3f}{report.recall:>10.3f}{report.f1:>10.3f}")
            first = False
    return "\n".join(lines)
