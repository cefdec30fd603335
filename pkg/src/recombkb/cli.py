"""Pipeline orchestration: every stage as a subcommand over a shared config.

Stages read the previous stage's files from the stage directory and write
their own, plus a manifest recording input digests and the config digest.
Stage outputs are pure functions of (inputs, config, backend replies); with
a warm response cache, reruns are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import click
import yaml

from . import __version__
from .categorize import BranchCatalog, DomainLabel, assign_domains
from .evalx import (
    EvalError,
    accuracy_audit,
    classification_report,
    cohens_kappa,
    format_eval_table,
    iaa_kappa,
    iaa_report,
    judge_span_match,
    cached_judge,
    match_entities,
)
from .extract import (
    binarize_all,
    extract_salient,
    postprocess_record,
)
from .gateway import Gateway, HttpBackend, MockBackend
from .ingest import CorpusFilter, CorpusSummary, default_keywords, load_snapshot, screen_keywords
from .kb import build_graph, domain_pair_table, inspiration_timeseries, \
    interdisciplinary_summary, load as load_kb, save as save_kb
from .model import (
    GoldAnnotation,
    NOT_PRESENT,
    doc_from_json,
    doc_to_json,
    dump_jsonl,
    load_jsonl,
    parse_date,
    record_from_json,
    record_to_json,
    span_from_json,
)
from .normalize import ClusterAssignment, Cluster, cluster_entities, expand_abbreviations
from .predict import (
    CandidateIndex,
    PredictionQuery,
    RankedQuery,
    build_queries,
    default_candidate_pool,
    export_contrastive_pairs,
    known_edge_set,
    rank_candidates,
    ranking_metrics,
    rerank_top_k,
    rank_of,
    split_by_cutoff,
)
from .service import SuggestBackend, create_app


# --- configuration -----------------------------------------------------------------

DEFAULT_MODELS = {
    "extractor": "extract-v1",
    "refiner": "refine-v1",
    "judge": "judge-v1",
    "audit": "audit-v1",
    "categorizer": "domains-v1",
    "context": "context-v1",
    "leak": "leak-v1",
    "reranker": "rerank-v1",
    "embedder": "embed-v1",
}


@dataclass
class PipelineConfig:
    path: Path
    snapshot: str | None = None
    categories: list[str] = field(default_factory=list)
    date_min: str | None = None
    date_max: str | None = None
    screen_title: bool = True
    keywords_path: str | None = None
    backend_kind: str = "mock"
    base_url: str | None = None
    api_key_env: str = "RECOMBKB_API_KEY"
    script: str | None = None
    models: dict = field(default_factory=dict)
    cache_dir: str | None = None
    stage_dir: str = "stages"
    cluster_distance: float = 0.05
    quantile: float = 0.9
    cutoff_year: int = 2024
    validation_fraction: float = 530 / 25847
    split_seed: int = 13
    negatives_seed: int = 17
    negatives_per_positive: int = 30
    max_in_flight: int = 4
    ks: list[int] = field(default_factory=lambda: [3, 5, 10, 50, 100])
    host: str = "127.0.0.1"
    port: int = 8080
    pool_path: str | None = None

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise click.ClickException(f"config file not found: {path}")
        raw = yaml.safe_load(path.read_text("utf-8")) or {}
        corpus = raw.get("corpus", {})
        backend = raw.get("backend", {})
        thresholds = raw.get("thresholds", {})
        seeds = raw.get("seeds", {})
        ranking = raw.get("ranking", {})
        service = raw.get("service", {})
        cfg = cls(
            path=path,
            snapshot=corpus.get("snapshot"),
            categories=list(corpus.get("categories", [])),
            date_min=corpus.get("date_min"),
            date_max=corpus.get("date_max"),
            screen_title=bool(corpus.get("screen_title", True)),
            keywords_path=corpus.get("keywords"),
            backend_kind=backend.get("kind", "mock"),
            base_url=backend.get("base_url"),
            api_key_env=backend.get("api_key_env", "RECOMBKB_API_KEY"),
            script=backend.get("script"),
            models={**DEFAULT_MODELS, **backend.get("models", {})},
            cache_dir=raw.get("cache_dir"),
            stage_dir=raw.get("stage_dir", "stages"),
            cluster_distance=float(thresholds.get("cluster_distance", 0.05)),
            quantile=float(thresholds.get("quantile", 0.9)),
            cutoff_year=int(thresholds.get("cutoff_year", 2024)),
            validation_fraction=float(thresholds.get("validation_fraction", 530 / 25847)),
            split_seed=int(seeds.get("split", 13)),
            negatives_seed=int(seeds.get("negatives", 17)),
            negatives_per_positive=int(ranking.get("negatives_per_positive", 30)),
            max_in_flight=int(ranking.get("max_in_flight", 4)),
            ks=list(ranking.get("ks", [3, 5, 10, 50, 100])),
            host=service.get("host", "127.0.0.1"),
            port=int(service.get("port", 8080)),
            pool_path=service.get("pool"),
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not 0 <= self.cluster_distance <= 1:
            raise click.ClickException("thresholds.cluster_distance must be in [0, 1]")
        if not 0 <= self.quantile < 1:
            raise click.ClickException("thresholds.quantile must be in [0, 1)")
        if not 0 <= self.validation_fraction < 1:
            raise click.ClickException("thresholds.validation_fraction must be in [0, 1)")
        if self.backend_kind not in ("mock", "http"):
            raise click.ClickException("backend.kind must be mock or http")

    def digest(self) -> str:
        blob = self.path.read_bytes() if self.path.exists() else b""
        return hashlib.sha256(blob).hexdigest()

    def resolve(self, value: str) -> Path:
        """Paths in the config are relative to the config file."""
        p = Path(value)
        return p if p.is_absolute() else self.path.parent / p


def make_gateway(cfg: PipelineConfig) -> Gateway:
    if cfg.backend_kind == "mock":
        if not cfg.script:
            raise click.ClickException("backend.script is required for the mock backend")
        backend = MockBackend.from_script_file(cfg.resolve(cfg.script))
    else:
        if not cfg.base_url:
            raise click.ClickException("backend.base_url is required for the http backend")
        backend = HttpBackend(cfg.base_url, api_key_env=cfg.api_key_env)
    cache_dir = cfg.resolve(cfg.cache_dir) if cfg.cache_dir else None
    return Gateway(backend, cache_dir=cache_dir)


# --- stage plumbing ------------------------------------------------------------------

STAGE_OF = {
    "corpus.jsonl": "ingest",
    "screened.jsonl": "screen",
    "outcomes.jsonl": "extract",
    "records.jsonl": "extract",
    "records_refined.jsonl": "postprocess",
    "entities.jsonl": "normalize",
    "entity_domains.jsonl": "categorize",
    "kb": "build",
    "queries.jsonl": "prep-predict",
    "splits.json": "prep-predict",
    "rankings.jsonl": "rank",
}


class Stages:
    def __init__(self, cfg: PipelineConfig, stage_dir: str | None = None):
        self.cfg = cfg
        self.dir = cfg.resolve(stage_dir or cfg.stage_dir)
        self.dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.dir / name

    def require(self, name: str) -> Path:
        path = self.path(name)
        if not path.exists():
            producer = STAGE_OF.get(name, "the upstream stage")
            raise click.ClickException(
                f"missing {path.name}; run {producer!r} first")
        return path

    def manifest(self, stage: str, inputs: list[Path], outputs: list[str]) -> None:
        mdir = self.dir / "manifests"
        mdir.mkdir(exist_ok=True)
        digests = {}
        for p in inputs:
            if p.is_file():
                digests[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
        payload = {
            "stage": stage,
            "inputs": digests,
            "outputs": sorted(outputs),
            "config_digest": self.cfg.digest(),
            "version": __version__,
        }
        (mdir / f"{stage}.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", "utf-8")


def _read_docs(path: Path) -> dict:
    with open(path, encoding="utf-8") as fp:
        docs = [doc_from_json(obj) for obj in load_jsonl(fp)]
    return {d.paper_id: d for d in docs}


def _read_records(stages: Stages):
    """Prefer post-processed records when that stage has run."""
    refined = stages.path("records_refined.jsonl")
    path = refined if refined.exists() else stages.require("records.jsonl")
    with open(path, encoding="utf-8") as fp:
        return [record_from_json(obj) for obj in load_jsonl(fp)], path


def _best_corpus(stages: Stages) -> Path:
    return stages.require("corpus.jsonl")


pass_cfg = click.make_pass_decorator(PipelineConfig)


@click.group()
@click.option("--config", "-c", "config_path", default="recombkb.yaml",
              show_default=True, help="Pipeline config file.")
@click.option("--stage-dir", default=None, help="Override the stage directory.")
@click.option("--cache-dir", default=None, help="Override the response cache directory.")
@click.option("--seed", type=int, default=None, help="Override the split seed.")
@click.pass_context
def main(ctx, config_path, stage_dir, cache_dir, seed):
    """Recombination mining, KB construction, analytics, and prediction."""
    cfg = PipelineConfig.load(config_path)
    if stage_dir:
        cfg.stage_dir = stage_dir
    if cache_dir:
        cfg.cache_dir = cache_dir
    if seed is not None:
        cfg.split_seed = seed
    ctx.obj = cfg


@main.command()
@pass_cfg
def ingest(cfg: PipelineConfig):
    """Load the metadata snapshot, filter by category/date, write the corpus."""
    if not cfg.snapshot:
        raise click.ClickException("corpus.snapshot is not configured")
    snapshot_path = cfg.resolve(cfg.snapshot)
    if not snapshot_path.exists():
        raise click.ClickException(f"snapshot not found: {snapshot_path}")
    stages = Stages(cfg)
    corpus_filter = CorpusFilter(
        allowed_categories=frozenset(cfg.categories or []),
        date_min=parse_date(cfg.date_min) if cfg.date_min else None,
        date_max=parse_date(cfg.date_max) if cfg.date_max else None,
    )
    stream = load_snapshot(snapshot_path, corpus_filter)
    summary = CorpusSummary()
    out = stages.path("corpus.jsonl")
    with open(out, "w", encoding="utf-8") as fp:
        for doc in stream:
            summary.add(doc)
            dump_jsonl([doc_to_json(doc)], fp)
    summary.skipped = stream.skipped
    stages.path("ingest_summary.json").write_text(
        json.dumps(summary.to_json(), indent=2, sort_keys=True) + "\n", "utf-8")
    stages.manifest("ingest", [snapshot_path], ["corpus.jsonl", "ingest_summary.json"])
    click.echo(f"ingest: {summary.docs} docs kept, {summary.skipped} lines skipped")


@main.command()
@pass_cfg
def screen(cfg: PipelineConfig):
    """Flag keyword matches on the corpus (annotation-candidate selection)."""
    stages = Stages(cfg)
    corpus = stages.require("corpus.jsonl")
    if cfg.keywords_path:
        keywords = [w.strip() for w in
                    cfg.resolve(cfg.keywords_path).read_text("utf-8").splitlines()
                    if w.strip()]
    else:
        keywords = default_keywords()
    kept = total = 0
    with open(corpus, encoding="utf-8") as src, \
            open(stages.path("screened.jsonl"), "w", encoding="utf-8") as dst:
        for obj in load_jsonl(src):
            doc = doc_from_json(obj)
            total += 1
            matched = screen_keywords(doc, keywords, include_title=cfg.screen_title)
            if matched:
                doc.matched_keywords = matched
                dump_jsonl([doc_to_json(doc)], dst)
                kept += 1
    stages.manifest("screen", [corpus], ["screened.jsonl"])
    click.echo(f"screen: {kept}/{total} docs matched a keyword")


@main.command()
@click.option("--input", "input_name", default="corpus.jsonl", show_default=True,
              help="Corpus file to extract from (large-scale mining uses the "
                   "unscreened corpus).")
@pass_cfg
def extract(cfg: PipelineConfig, input_name: str):
    """Run salient-recombination extraction over the corpus."""
    stages = Stages(cfg)
    corpus = stages.require(input_name)
    gateway = make_gateway(cfg)
    model = cfg.models["extractor"]
    counts = {"present": 0, "not-present": 0, "parse-failure": 0}
    with open(corpus, encoding="utf-8") as src, \
            open(stages.path("outcomes.jsonl"), "w", encoding="utf-8") as out_fp, \
            open(stages.path("records.jsonl"), "w", encoding="utf-8") as rec_fp:
        for obj in load_jsonl(src):
            doc = doc_from_json(obj)
            outcome = extract_salient(doc, gateway, model)
            counts[outcome.kind] += 1
            row = {"paper_id": doc.paper_id, "kind": outcome.kind}
            if outcome.reason:
                row["reason"] = outcome.reason
            if outcome.record is not None:
                row["record"] = record_to_json(outcome.record)
                dump_jsonl([record_to_json(outcome.record)], rec_fp)
            dump_jsonl([row], out_fp)
    stages.manifest("extract", [corpus], ["outcomes.jsonl", "records.jsonl"])
    click.echo("extract: " + ", ".join(f"{k}={v}" for k, v in counts.items()))


@main.command()
@pass_cfg
def postprocess(cfg: PipelineConfig):
    """Refine extracted entity strings; originals are kept alongside."""
    stages = Stages(cfg)
    records_path = stages.require("records.jsonl")
    corpus = _best_corpus(stages)
    docs = _read_docs(corpus)
    gateway = make_gateway(cfg)
    model = cfg.models["refiner"]
    refined = 0
    with open(records_path, encoding="utf-8") as src, \
            open(stages.path("records_refined.jsonl"), "w", encoding="utf-8") as dst:
        for obj in load_jsonl(src):
            record = record_from_json(obj)
            doc = docs.get(record.paper_id)
            if doc is not None:
                new = postprocess_record(record, doc, gateway, model)
                if new is not record:
                    refined += 1
                record = new
            dump_jsonl([record_to_json(record)], dst)
    stages.manifest("postprocess", [records_path, corpus], ["records_refined.jsonl"])
    click.echo(f"postprocess: {refined} records refined")


def _load_gold(path: Path) -> list[GoldAnnotation]:
    out = []
    with open(path, encoding="utf-8") as fp:
        for obj in load_jsonl(fp):
            out.append(GoldAnnotation(
                paper_id=obj["paper_id"],
                annotator_id=obj.get("annotator_id", "gold"),
                label=obj["label"],
                entities=[span_from_json(e) for e in obj.get("entities", [])],
            ))
    return out


@main.command()
@click.option("--gold", "gold_path", required=True, type=click.Path(exists=True),
              help="Gold annotations (JSONL).")
@click.option("--gold-b", "gold_b_path", default=None, type=click.Path(exists=True),
              help="Second annotator; computes inter-annotator agreement instead.")
@pass_cfg
def evaluate(cfg: PipelineConfig, gold_path: str, gold_b_path: str | None):
    """Score extraction outcomes (or annotator agreement) at all three levels."""
    stages = Stages(cfg)
    corpus = _best_corpus(stages)
    docs = _read_docs(corpus)
    gateway = make_gateway(cfg)
    judge_model = cfg.models["judge"]

    def doc_judge(paper_id, gold_span, pred_span):
        abstract = docs[paper_id].abstract if paper_id in docs else ""
        return judge_span_match(abstract, gold_span.text, pred_span.text,
                                gold_span.role, gateway, judge_model)

    gold = _load_gold(Path(gold_path))
    if gold_b_path:
        gold_b = _load_gold(Path(gold_b_path))
        report = iaa_report(gold, gold_b, doc_judge)
        payload = {
            "mode": "iaa",
            "classification": report.classification.to_json(),
            "entity": report.entity.to_json(),
            "relation": report.relation.to_json(),
            "kappa": iaa_kappa(gold, gold_b, doc_judge),
        }
        table = format_eval_table({
            "Abstract classification": {"IAA": report.classification.macro},
            "Entity extraction": {"IAA": report.entity},
            "Relation extraction": {"IAA": report.relation},
        })
    else:
        outcomes_path = stages.require("outcomes.jsonl")
        with open(outcomes_path, encoding="utf-8") as fp:
            outcomes = {o["paper_id"]: o for o in load_jsonl(fp)}
        gold_by_id = {g.paper_id: g for g in gold}
        missing = sorted(set(gold_by_id) - set(outcomes))
        if missing:
            raise click.ClickException(f"outcomes missing for gold papers: {missing[:5]}")
        from .extract import binarize
        from .model import RecombinationRecord

        gold_labels, pred_labels = [], []
        ent_tp = ent_gold = ent_pred = 0
        rel_gold_all, rel_pred_all = [], []
        from .evalx import _relation_tp

        rel_tp = 0.0
        for pid in sorted(gold_by_id):
            g = gold_by_id[pid]
            o = outcomes[pid]
            record = record_from_json(o["record"]) if o.get("record") else None
            gold_labels.append(g.label)
            pred_labels.append(record.relation_type if record else NOT_PRESENT)
            pair_judge = cached_judge(lambda gs, ps, _pid=pid: doc_judge(_pid, gs, ps))
            pred_entities = record.entities if record else []
            decisions = match_entities(g.entities, pred_entities, pair_judge)
            ent_tp += len(decisions)
            ent_gold += len(g.entities)
            ent_pred += len(pred_entities)
            gold_rel = []
            if g.label != NOT_PRESENT:
                gold_rel = binarize(RecombinationRecord(
                    paper_id=pid, relation_type=g.label, entities=list(g.entities)))
            pred_rel = binarize(record) if record else []
            rel_tp += _relation_tp(gold_rel, pred_rel, pair_judge)
            rel_gold_all.extend(gold_rel)
            rel_pred_all.extend(pred_rel)
        from .evalx import _prf

        classification = classification_report(gold_labels, pred_labels)
        entity = _prf(ent_tp, ent_pred, ent_gold, level="entity")
        relation = _prf(rel_tp, len(rel_pred_all), len(rel_gold_all), level="relation")
        payload = {
            "mode": "gold-vs-extraction",
            "classification": classification.to_json(),
            "entity": entity.to_json(),
            "relation": relation.to_json(),
            "kappa": cohens_kappa(gold_labels, pred_labels),
        }
        table = format_eval_table({
            "Abstract classification": {"extraction": classification.macro},
            "Entity extraction": {"extraction": entity},
            "Relation extraction": {"extraction": relation},
        })
    stages.path("eval_report.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", "utf-8")
    stages.path("eval_table.txt").write_text(table + "\n", "utf-8")
    stages.manifest("evaluate", [Path(gold_path), corpus],
                    ["eval_report.json", "eval_table.txt"])
    click.echo(table)


@main.command("judge-audit")
@click.option("--sample", type=int, default=None, help="Audit only the first N records.")
@click.option("--human", "human_path", default=None, type=click.Path(exists=True),
              help="JSONL with {paper_id, correct} human verdicts.")
@pass_cfg
def judge_audit(cfg: PipelineConfig, sample: int | None, human_path: str | None):
    """LLM-judge correctness audit over extracted records."""
    stages = Stages(cfg)
    records, records_path = _read_records(stages)
    corpus = _best_corpus(stages)
    docs = _read_docs(corpus)
    gateway = make_gateway(cfg)
    items = [(docs[r.paper_id].abstract, r) for r in records if r.paper_id in docs]
    if sample:
        items = items[:sample]
    human = None
    if human_path:
        with open(human_path, encoding="utf-8") as fp:
            by_paper = {o["paper_id"]: bool(o["correct"]) for o in load_jsonl(fp)}
        human = [by_paper[r.paper_id] for _, r in items]
    try:
        report = accuracy_audit(items, gateway, cfg.models["audit"], human_verdicts=human)
    except EvalError as exc:
        raise click.ClickException(str(exc))
    stages.path("audit.json").write_text(
        json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", "utf-8")
    stages.manifest("judge-audit", [records_path, corpus], ["audit.json"])
    click.echo(f"judge-audit: accuracy={report.accuracy:.4f} over {len(items)} records"
               + (f", agreement F1={report.agreement_f1:.3f}" if report.agreement_f1 is not None else ""))


@main.command()
@pass_cfg
def normalize(cfg: PipelineConfig):
    """Expand abbreviations and cluster entity surface forms into concepts."""
    stages = Stages(cfg)
    records, records_path = _read_records(stages)
    corpus = _best_corpus(stages)
    docs = _read_docs(corpus)
    gateway = make_gateway(cfg)

    occurrence_norm: dict[tuple[str, str], str] = {}
    for record in records:
        doc = docs.get(record.paper_id)
        abstract = doc.abstract if doc else ""
        for ent in record.entities:
            key = (record.paper_id, ent.text)
            if key not in occurrence_norm:
                occurrence_norm[key] = expand_abbreviations(ent.text, abstract)
    texts = list(dict.fromkeys(occurrence_norm.values()))
    if not texts:
        raise click.ClickException("no entities to normalize; run extract first")
    assignment = cluster_entities(texts, gateway, cfg.models["embedder"],
                                  threshold=cfg.cluster_distance)
    index_of = {t: i for i, t in enumerate(texts)}
    with open(stages.path("entities.jsonl"), "w", encoding="utf-8") as fp:
        for (paper_id, surface), normalized in occurrence_norm.items():
            cluster = assignment.cluster_of(index_of[normalized])
            dump_jsonl([{
                "paper_id": paper_id,
                "surface": surface,
                "normalized": normalized,
                "cluster_id": cluster.cluster_id,
                "canonical": cluster.canonical,
            }], fp)
    stages.manifest("normalize", [records_path, corpus], ["entities.jsonl"])
    click.echo(f"normalize: {len(texts)} distinct entities -> "
               f"{len(assignment.clusters)} clusters")


@main.command()
@pass_cfg
def categorize(cfg: PipelineConfig):
    """Assign each extracted entity a scientific domain."""
    stages = Stages(cfg)
    records, records_path = _read_records(stages)
    corpus = _best_corpus(stages)
    docs = _read_docs(corpus)
    gateway = make_gateway(cfg)
    catalog = BranchCatalog.load()
    seen: set[tuple[str, str]] = set()
    with open(stages.path("entity_domains.jsonl"), "w", encoding="utf-8") as fp:
        for record in records:
            doc = docs.get(record.paper_id)
            abstract = doc.abstract if doc else ""
            labels = assign_domains(record, abstract, gateway,
                                    cfg.models["categorizer"], catalog)
            for ent, label in zip(record.entities, labels):
                key = (record.paper_id, ent.text)
                if key in seen:
                    continue
                seen.add(key)
                dump_jsonl([{
                    "paper_id": record.paper_id,
                    "surface": ent.text,
                    **label.to_json(),
                }], fp)
    stages.manifest("categorize", [records_path, corpus], ["entity_domains.jsonl"])
    click.echo(f"categorize: {len(seen)} entities labeled")


def _load_entities(path: Path):
    """Rebuild the clustering view recorded by the normalize stage."""
    normalize_map: dict[tuple[str, str], str] = {}
    cluster_by_text: dict[str, int] = {}
    canonical_by_cluster: dict[int, str] = {}
    with open(path, encoding="utf-8") as fp:
        for obj in load_jsonl(fp):
            normalize_map[(obj["paper_id"], obj["surface"])] = obj["normalized"]
            cluster_by_text[obj["normalized"]] = obj["cluster_id"]
            canonical_by_cluster[obj["cluster_id"]] = obj["canonical"]
    texts = list(cluster_by_text)
    assignments = [cluster_by_text[t] for t in texts]
    clusters = {}
    for cid, canonical in canonical_by_cluster.items():
        indices = [i for i, t in enumerate(texts) if cluster_by_text[t] == cid]
        clusters[cid] = Cluster(cluster_id=cid, canonical=canonical,
                                members=sorted(texts[i] for i in indices),
                                indices=indices)
    return texts, ClusterAssignment(assignments=assignments, clusters=clusters), normalize_map


def _load_domains(path: Path) -> dict[tuple[str, str], DomainLabel]:
    out = {}
    with open(path, encoding="utf-8") as fp:
        for obj in load_jsonl(fp):
            out[(obj["paper_id"], obj["surface"])] = DomainLabel(
                kind=obj["kind"], value=obj["value"], grouped=obj["grouped"])
    return out


@main.command()
@pass_cfg
def build(cfg: PipelineConfig):
    """Binarize records and assemble the recombination graph."""
    stages = Stages(cfg)
    records, records_path = _read_records(stages)
    entities_path = stages.require("entities.jsonl")
    domains_path = stages.require("entity_domains.jsonl")
    corpus = _best_corpus(stages)
    docs = _read_docs(corpus)
    texts, assignment, normalize_map = _load_entities(entities_path)
    entity_domains = _load_domains(domains_path)
    binarized = binarize_all(records)
    corpus_digest = hashlib.sha256(corpus.read_bytes()).hexdigest()
    snapshot = build_graph(binarized, texts, assignment, entity_domains, docs,
                           normalize_map=normalize_map,
                           meta={"source_corpus_digest": corpus_digest,
                                 "config_digest": cfg.digest(),
                                 "version": __version__})
    save_kb(snapshot, stages.path("kb"))
    stages.manifest("build", [records_path, entities_path, domains_path, corpus],
                    ["kb/nodes.jsonl", "kb/edges.jsonl", "kb/meta.json"])
    click.echo(f"build: {len(snapshot.nodes)} nodes, {len(snapshot.edges)} edges")


@main.command()
@click.option("--quantile", "quantile_opt", type=float, default=None,
              help="Override the configured domain-pair quantile.")
@click.option("--source-domain", "source_domains", multiple=True,
              help="Domains to compute inspiration time series for.")
@pass_cfg
def analyze(cfg: PipelineConfig, quantile_opt: float | None, source_domains):
    """Write the meta-science analytics artifacts."""
    stages = Stages(cfg)
    kb_dir = stages.require("kb")
    snapshot = load_kb(kb_dir)
    q = cfg.quantile if quantile_opt is None else quantile_opt
    if not 0 <= q < 1:
        raise click.ClickException("quantile must be in [0, 1)")
    out_dir = stages.path("analytics")
    out_dir.mkdir(exist_ok=True)
    payload = {
        "quantile": q,
        "inspiration_pairs": [
            {"source": a, "target": b, "count": n}
            for a, b, n in domain_pair_table(snapshot, "inspiration", q)],
        "blend_pairs": [
            {"source": a, "target": b, "count": n}
            for a, b, n in domain_pair_table(snapshot, "blend", q)],
    }
    (out_dir / "domain_pairs.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", "utf-8")
    summary = interdisciplinary_summary(snapshot)
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", "utf-8")
    outputs = ["analytics/domain_pairs.json", "analytics/summary.json"]
    for domain in source_domains:
        series = inspiration_timeseries(snapshot, domain)
        name = f"timeseries_{domain.lower().replace(' ', '_').replace('.', '_')}.json"
        (out_dir / name).write_text(json.dumps(
            {"source_domain": domain,
             "years": [{"year": y, "targets": t} for y, t in series.items()]},
            indent=2, sort_keys=True) + "\n", "utf-8")
        outputs.append(f"analytics/{name}")
    stages.manifest("analyze", [kb_dir / "nodes.jsonl", kb_dir / "edges.jsonl"], outputs)
    click.echo(f"analyze: wrote {len(outputs)} artifacts (quantile={q})")


@main.command("prep-predict")
@pass_cfg
def prep_predict(cfg: PipelineConfig):
    """Build leak-filtered query/answer pairs and temporal splits."""
    stages = Stages(cfg)
    kb_dir = stages.require("kb")
    snapshot = load_kb(kb_dir)
    corpus = _best_corpus(stages)
    docs = _read_docs(corpus)
    gateway = make_gateway(cfg)
    queries, stats = build_queries(snapshot, docs, gateway,
                                   cfg.models["context"], cfg.models["leak"])
    with open(stages.path("queries.jsonl"), "w", encoding="utf-8") as fp:
        dump_jsonl((q.to_json() for q in queries), fp)
    splits = split_by_cutoff(queries, cutoff_year=cfg.cutoff_year,
                             validation_fraction=cfg.validation_fraction,
                             seed=cfg.split_seed)
    stages.path("splits.json").write_text(json.dumps({
        "cutoff_year": cfg.cutoff_year,
        "seed": cfg.split_seed,
        "train": [q.query_id for q in splits.train],
        "validation": [q.query_id for q in splits.validation],
        "test": [q.query_id for q in splits.test],
        "stats": {"edges": stats.edges, "candidates": stats.candidates,
                  "leaked": stats.leaked, "kept": stats.kept,
                  "leak_rate": stats.leak_rate,
                  "self_loops_skipped": stats.self_loops_skipped},
    }, indent=2, sort_keys=True) + "\n", "utf-8")
    stages.manifest("prep-predict", [kb_dir / "edges.jsonl", corpus],
                    ["queries.jsonl", "splits.json"])
    click.echo(f"prep-predict: {stats.kept} pairs kept "
               f"({stats.leaked} leaked, {stats.leak_rate:.1%}); "
               f"splits {splits.sizes()}")


def _load_queries(stages: Stages):
    qpath = stages.require("queries.jsonl")
    with open(qpath, encoding="utf-8") as fp:
        queries = [PredictionQuery.from_json(obj) for obj in load_jsonl(fp)]
    spath = stages.require("splits.json")
    split_ids = json.loads(spath.read_text("utf-8"))
    by_id = {q.query_id: q for q in queries}
    from .predict import Splits

    splits = Splits(train=[by_id[i] for i in split_ids["train"]],
                    validation=[by_id[i] for i in split_ids["validation"]],
                    test=[by_id[i] for i in split_ids["test"]])
    return queries, splits, qpath, spath


def _pool_and_texts(cfg: PipelineConfig, snapshot, splits):
    if cfg.pool_path:
        pool = [line.strip() for line in
                cfg.resolve(cfg.pool_path).read_text("utf-8").splitlines() if line.strip()]
    else:
        pool = default_candidate_pool(splits)
    node_texts = {nid: snapshot.nodes[nid].canonical for nid in pool}
    return pool, node_texts


@main.command()
@pass_cfg
def rank(cfg: PipelineConfig):
    """Rank candidates for every test query in the filtered setting."""
    stages = Stages(cfg)
    snapshot = load_kb(stages.require("kb"))
    queries, splits, qpath, spath = _load_queries(stages)
    gateway = make_gateway(cfg)
    pool, node_texts = _pool_and_texts(cfg, snapshot, splits)
    if not pool:
        raise click.ClickException("candidate pool is empty; check splits")
    known = known_edge_set(queries)
    index = CandidateIndex(pool, node_texts, gateway, cfg.models["embedder"])
    ranked = []
    with open(stages.path("rankings.jsonl"), "w", encoding="utf-8") as fp:
        for query in splits.test:
            rq = rank_candidates(query, pool, node_texts, gateway,
                                 cfg.models["embedder"], known_edges=known, index=index)
            ranked.append(rq)
            dump_jsonl([rq.to_json()], fp)
    report = ranking_metrics(ranked, ks=cfg.ks)
    stages.path("metrics.json").write_text(
        json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", "utf-8")
    stages.path("metrics.txt").write_text(report.format_table() + "\n", "utf-8")
    stages.manifest("rank", [qpath, spath], ["rankings.jsonl", "metrics.json", "metrics.txt"])
    click.echo(report.format_table())


@main.command()
@pass_cfg
def rerank(cfg: PipelineConfig):
    """Rerank each ranking's top candidates with the sliding-window reranker."""
    stages = Stages(cfg)
    snapshot = load_kb(stages.require("kb"))
    rankings_path = stages.require("rankings.jsonl")
    queries, splits, qpath, _ = _load_queries(stages)
    by_id = {q.query_id: q for q in queries}
    gateway = make_gateway(cfg)
    reranked = []
    from .predict import RERANK_TOP

    with open(rankings_path, encoding="utf-8") as src, \
            open(stages.path("reranked.jsonl"), "w", encoding="utf-8") as dst:
        for obj in load_jsonl(src):
            query = by_id[obj["query_id"]]
            ranking = [(n, float(s)) for n, s in obj["ranking"]]
            top = ranking[:RERANK_TOP]
            texts = [snapshot.nodes[n].canonical for n, _ in top]
            order = rerank_top_k(query.text, texts, gateway, cfg.models["reranker"])
            by_text: dict[str, list[tuple[str, float]]] = {}
            for (n, s), t in zip(top, texts):
                by_text.setdefault(t, []).append((n, s))
            new_top = [by_text[t].pop(0) for t in order]
            new_ranking = new_top + ranking[RERANK_TOP:]
            rq = RankedQuery(query_id=query.query_id, ranking=new_ranking,
                             filtered_rank=rank_of(new_ranking, query.gold_answer),
                             raw_rank=obj["raw_rank"])
            reranked.append(rq)
            dump_jsonl([rq.to_json()], dst)
    report = ranking_metrics(reranked, ks=cfg.ks)
    stages.path("metrics_reranked.json").write_text(
        json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", "utf-8")
    stages.manifest("rerank", [rankings_path, qpath],
                    ["reranked.jsonl", "metrics_reranked.json"])
    click.echo(report.format_table())


@main.command("export-train")
@click.option("--negatives", type=int, default=None,
              help="Override negatives per positive.")
@pass_cfg
def export_train(cfg: PipelineConfig, negatives: int | None):
    """Export contrastive training pairs from the train split."""
    stages = Stages(cfg)
    snapshot = load_kb(stages.require("kb"))
    queries, splits, qpath, spath = _load_queries(stages)
    pool = sorted(snapshot.nodes)
    node_texts = {nid: snapshot.nodes[nid].canonical for nid in pool}
    n_neg = negatives if negatives is not None else cfg.negatives_per_positive
    try:
        rows = export_contrastive_pairs(
            splits.train, pool, node_texts, stages.path("contrastive.jsonl"),
            negatives_per_positive=n_neg, seed=cfg.negatives_seed,
            known_edges=known_edge_set(queries))
    except ValueError as exc:
        raise click.ClickException(str(exc))
    stages.manifest("export-train", [qpath, spath], ["contrastive.jsonl"])
    click.echo(f"export-train: {rows} rows "
               f"({len(splits.train)} positives x {n_neg} negatives)")


@main.command()
@pass_cfg
def serve(cfg: PipelineConfig):
    """Serve the KB snapshot plus the live /suggest endpoint."""
    stages = Stages(cfg)
    snapshot = load_kb(stages.require("kb"))
    gateway = make_gateway(cfg)
    if cfg.pool_path:
        pool = [line.strip() for line in
                cfg.resolve(cfg.pool_path).read_text("utf-8").splitlines() if line.strip()]
    else:
        pool = sorted(snapshot.nodes)
    backend = SuggestBackend(gateway, cfg.models["embedder"], pool,
                             rerank_model=cfg.models.get("reranker"))
    app = create_app(snapshot, suggest_backend=backend)
    from .service import serve as run_service

    click.echo(f"serving on http://{cfg.host}:{cfg.port}")
    run_service(app, host=cfg.host, port=cfg.port)


if __name__ == "__main__":
    main()
