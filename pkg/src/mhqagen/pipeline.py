"""Resumable stage orchestration over persisted artifacts.

Each stage reads the previous stage's line-delimited output, writes its own,
and records a manifest carrying input/config digests plus record counts. A
stage whose manifest still matches the current digests is skipped; ``force``
recomputes. Artifacts are plain append-once files so a run directory is fully
inspectable with standard tools.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path
from typing import Callable

from . import evaluate
from .cluster import (
    PaperCluster,
    RetrievalQa,
    build_cluster,
    citation_cluster,
    derive_seed,
    make_cluster_id,
    select_retrieval_qa,
)
from .corpus import MODES, Corpus, load_corpus, filter_eligible
from .evaluate import EmbeddingRetriever, make_environments, run_qa_setting
from .parallel import map_ordered
from .mhqa import (
    MhqaItem,
    ParseFailure,
    PreRejected,
    finalize_item,
    make_item_id,
    parse_mhqa_output,
    render_mhqa_prompt,
    split_dataset,
    split_statistics,
)
from .prompts import mhqa_prompt_digest
from .providers import (
    Embedder,
    MockEmbeddingBackend,
    MockGenerationBackend,
    RemoteEmbeddingBackend,
    RemoteGenerationBackend,
    ResponseCache,
    TextGenerator,
    TextGenParams,
    request_digest,
)
from .relation import (
    RelationCandidate,
    build_section_units,
    citation_relations,
    enforce_diversity,
    rank_relations,
    semantic_candidates,
    candidate_sort_key,
)
from .providers import EmbedLevel
from .shqa import (
    QaTriplet,
    build_record,
    generate_shqa,
    shqa_statistics,
    similarity_gap_filter,
    validate_evidence,
)

log = logging.getLogger(__name__)


class StageError(Exception):
    """A stage could not run: bad config, missing upstream artifact, or lock."""


# ---------------------------------------------------------------------------
# configuration

@dataclass
class ProviderSettings:
    generation_backend: str = "mock"
    embedding_backend: str = "mock"
    temperature: float = 0.0
    max_output_tokens: int = 1024
    embedding_dimension: int = 256
    gen_model: str = "default"
    embed_model: str = "default"
    base_url: str | None = None
    api_key_env: str = "MHQAGEN_API_KEY"
    cache_dir: str | None = None
    max_attempts: int = 3
    retry_base_delay: float = 0.5
    max_in_flight: int = 4
    max_prompt_chars: int | None = None

    def generation_signature(self) -> dict:
        return {"backend": self.generation_backend, "model": self.gen_model,
                "temperature": self.temperature,
                "max_output_tokens": self.max_output_tokens,
                "base_url": self.base_url}

    def embedding_signature(self) -> dict:
        return {"backend": self.embedding_backend, "model": self.embed_model,
                "dimension": self.embedding_dimension, "base_url": self.base_url}


@dataclass
class EvalSettings:
    split: str = "test"  # dev | test | all
    representation: str = "title_abstract"
    cluster_hit_ks: tuple[int, ...] = (1, 3)
    cluster_mrr_k: int = 5
    corpus_hit_ks: tuple[int, ...] = (1, 50)
    corpus_mrr_k: int = 50

    def to_dict(self) -> dict:
        return {"split": self.split, "representation": self.representation,
                "cluster_hit_ks": list(self.cluster_hit_ks),
                "cluster_mrr_k": self.cluster_mrr_k,
                "corpus_hit_ks": list(self.corpus_hit_ks),
                "corpus_mrr_k": self.corpus_mrr_k}


@dataclass
class PipelineConfig:
    corpus_path: str
    output_dir: str
    mode: str = "semantic"
    seed: int = 0
    tau: float = 0.3
    k_sections: int = 3
    filter_fraction: float = 0.10
    cluster_size: int = 30
    diversity_cap: int = 3
    test_size: int | None = None  # None: floor(0.1 * items)
    length_unit: str = "tokens"
    strict_evidence: bool = False
    match_level: str = "Q"
    workers: int = 1  # parallel generation/scoring tasks; never affects output
    providers: ProviderSettings = field(default_factory=ProviderSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise StageError(f"mode must be one of {MODES}")
        if not 0 <= self.filter_fraction < 1:
            raise StageError("filter_fraction must be in [0, 1)")
        if self.k_sections < 1 or self.diversity_cap < 1 or self.cluster_size < 2:
            raise StageError("k_sections, diversity_cap >= 1 and cluster_size >= 2 required")
        if self.test_size is not None and self.test_size < 0:
            raise StageError("test_size must be >= 0")
        if self.workers < 1:
            raise StageError("workers must be >= 1")
        if self.length_unit not in ("tokens", "chars"):
            raise StageError("length_unit must be 'tokens' or 'chars'")
        if self.match_level not in ("Q", "A", "QA"):
            raise StageError("match_level must be one of Q, A, QA")
        if self.eval.split not in ("dev", "test", "all"):
            raise StageError("eval.split must be dev, test, or all")
        if self.eval.representation not in ("title_abstract", "full_text"):
            raise StageError("eval.representation must be title_abstract or full_text")
        for backend in (self.providers.generation_backend, self.providers.embedding_backend):
            if backend not in ("mock", "remote"):
                raise StageError(f"unknown provider backend {backend!r}")
            if backend == "remote" and not self.providers.base_url:
                raise StageError("remote backends require providers.base_url")

    @classmethod
    def from_file(cls, path: str | Path, seed: int | None = None,
                  mock_providers: bool = False) -> "PipelineConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.from_dict(raw, seed=seed, mock_providers=mock_providers)

    @classmethod
    def from_dict(cls, raw: dict, seed: int | None = None,
                  mock_providers: bool = False) -> "PipelineConfig":
        known = {f.name for f in dc_fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise StageError(f"unknown config keys: {sorted(unknown)}")
        data = dict(raw)
        providers_raw = data.pop("providers", {})
        eval_raw = data.pop("eval", {})
        for sub_cls, sub_raw, label in ((ProviderSettings, providers_raw, "providers"),
                                        (EvalSettings, eval_raw, "eval")):
            sub_known = {f.name for f in dc_fields(sub_cls)}
            sub_unknown = set(sub_raw) - sub_known
            if sub_unknown:
                raise StageError(f"unknown {label} config keys: {sorted(sub_unknown)}")
        providers = ProviderSettings(**providers_raw)
        ev = EvalSettings(**eval_raw)
        ev.cluster_hit_ks = tuple(ev.cluster_hit_ks)
        ev.corpus_hit_ks = tuple(ev.corpus_hit_ks)
        config = cls(providers=providers, eval=ev, **data)
        if seed is not None:
            config.seed = seed
        if mock_providers:
            config.providers.generation_backend = "mock"
            config.providers.embedding_backend = "mock"
        config.validate()
        return config

    def identity_dict(self) -> dict:
        """Everything that determines run content (not paths, not retry knobs)."""
        return {
            "mode": self.mode, "seed": self.seed, "tau": self.tau,
            "k_sections": self.k_sections, "filter_fraction": self.filter_fraction,
            "cluster_size": self.cluster_size, "diversity_cap": self.diversity_cap,
            "test_size": self.test_size, "length_unit": self.length_unit,
            "strict_evidence": self.strict_evidence, "match_level": self.match_level,
            "generation": self.providers.generation_signature(),
            "embedding": self.providers.embedding_signature(),
            "eval": self.eval.to_dict(),
        }

    def config_digest(self) -> str:
        return request_digest(self.identity_dict())

    def stage_config_digest(self, stage: str) -> str:
        identity = self.identity_dict()
        subset = {name: identity[name] for name in _STAGE_CONFIG_KEYS[stage]}
        if stage == "mhqa":
            subset["prompt_digest"] = mhqa_prompt_digest()
        return request_digest(subset)

    def out(self, name: str) -> Path:
        return Path(self.output_dir) / name

    def resolved_cache_dir(self) -> Path:
        if self.providers.cache_dir:
            return Path(self.providers.cache_dir)
        return Path(self.output_dir) / "cache"

    def gen_params(self) -> TextGenParams:
        return TextGenParams(temperature=self.providers.temperature,
                             max_output_tokens=self.providers.max_output_tokens,
                             seed=self.seed)


_STAGE_CONFIG_KEYS: dict[str, tuple[str, ...]] = {
    "ingest": ("mode",),
    "shqa": ("mode", "seed", "filter_fraction", "strict_evidence", "generation", "embedding"),
    "relate": ("mode", "tau", "k_sections", "diversity_cap", "match_level", "embedding"),
    "cluster": ("mode", "seed", "cluster_size", "embedding"),
    "mhqa": ("seed", "generation"),
    "split": ("seed", "test_size"),
    "eval-retrieval": ("seed", "eval", "embedding"),
    "eval-qa": ("seed", "eval", "generation", "embedding"),
    "stats": ("length_unit",),
}

STAGE_ORDER = ("ingest", "shqa", "relate", "cluster", "mhqa", "split",
               "eval-retrieval", "eval-qa", "stats")

_STAGE_UPSTREAM: dict[str, tuple[str, ...]] = {
    "ingest": (),
    "shqa": ("ingest",),
    "relate": ("shqa",),
    "cluster": ("relate",),
    "mhqa": ("cluster",),
    "split": ("mhqa",),
    "eval-retrieval": ("split",),
    "eval-qa": ("split",),
    "stats": ("split",),
}

# Files each stage reads; the input digest covers their bytes plus the corpus
# where the stage consults it.
_STAGE_INPUTS: dict[str, tuple[str, ...]] = {
    "ingest": (),
    "shqa": ("eligible.jsonl",),
    "relate": ("eligible.jsonl", "shqa.jsonl"),
    "cluster": ("eligible.jsonl", "shqa.jsonl", "relations.jsonl"),
    "mhqa": ("relations.jsonl", "clusters.jsonl"),
    "split": ("mhqa_items.jsonl",),
    "eval-retrieval": ("eligible.jsonl", "clusters.jsonl", "dev.jsonl", "test.jsonl"),
    "eval-qa": ("clusters.jsonl", "dev.jsonl", "test.jsonl"),
    "stats": ("shqa.jsonl", "dev.jsonl", "test.jsonl"),
}

_USES_CORPUS = {"ingest", "shqa", "relate", "cluster", "mhqa", "eval-retrieval", "eval-qa"}


@dataclass
class StageManifest:
    stage: str
    input_digest: str
    config_digest: str
    counts: dict
    wall_time_s: float
    skipped: bool = False

    def to_dict(self) -> dict:
        return {"stage": self.stage, "input_digest": self.input_digest,
                "config_digest": self.config_digest, "counts": self.counts,
                "wall_time_s": self.wall_time_s}


# ---------------------------------------------------------------------------
# small file helpers

def _file_sha(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_jsonl(path: Path, records: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def read_jsonl(path: Path) -> list[dict]:
    if not path.exists():
        raise StageError(f"missing upstream artifact {path.name}; run its stage first")
    out = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(json.loads(line))
    return out


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
                    encoding="utf-8")


@contextmanager
def _run_lock(output_dir: Path):
    output_dir.mkdir(parents=True, exist_ok=True)
    lock = output_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise StageError(f"run directory is locked by another process "
                         f"(remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


# ---------------------------------------------------------------------------
# provider and corpus assembly

def build_providers(config: PipelineConfig) -> tuple[TextGenerator, Embedder]:
    p = config.providers
    cache = ResponseCache(config.resolved_cache_dir())
    if p.generation_backend == "mock":
        gen_backend = MockGenerationBackend(seed=config.seed)
    else:
        gen_backend = RemoteGenerationBackend(p.base_url, p.api_key_env, model=p.gen_model)
    if p.embedding_backend == "mock":
        embed_backend = MockEmbeddingBackend(dimension=p.embedding_dimension)
    else:
        embed_backend = RemoteEmbeddingBackend(p.base_url, p.api_key_env,
                                               dimension=p.embedding_dimension,
                                               model=p.embed_model)
    gen = TextGenerator(gen_backend, cache, max_attempts=p.max_attempts,
                        base_delay=p.retry_base_delay, max_in_flight=p.max_in_flight,
                        max_prompt_chars=p.max_prompt_chars)
    embedder = Embedder(embed_backend, cache, max_attempts=p.max_attempts,
                        base_delay=p.retry_base_delay, max_in_flight=p.max_in_flight)
    return gen, embedder


def _load_eligible(config: PipelineConfig) -> tuple[Corpus, Corpus, list[str]]:
    """(full corpus, eligible corpus, eligible ids). Reference resolution is
    computed against the full corpus and preserved in the eligible view."""
    full = load_corpus(config.corpus_path)
    ids = [r["doc_id"] for r in read_jsonl(config.out("eligible.jsonl"))]
    eligible = Corpus([full.get(i) for i in ids], resolve=False)
    return full, eligible, ids


def _triplet_from_row(row: dict) -> QaTriplet:
    return QaTriplet(question=row["question"], answer=row["answer"],
                     evidence=row["evidence"], doc_id=row["doc_id"],
                     section_name=row["section_name"])


def _load_shqa_index(config: PipelineConfig) -> tuple[list[QaTriplet], dict[str, list[QaTriplet]]]:
    triplets = [_triplet_from_row(r) for r in read_jsonl(config.out("shqa.jsonl"))]
    index: dict[str, list[QaTriplet]] = {}
    for t in triplets:
        index.setdefault(t.doc_id, []).append(t)
    return triplets, index


def _candidate_from_row(row: dict) -> RelationCandidate:
    return RelationCandidate(
        source_doc_id=row["source_doc_id"], target_doc_id=row["target_doc_id"],
        source_section=row["source_section"], target_section=row["target_section"],
        core_source_qa=QaTriplet(question=row["core_source_question"],
                                 answer=row["core_source_answer"],
                                 evidence=row["core_source_evidence"],
                                 doc_id=row["source_doc_id"],
                                 section_name=row["source_section"]),
        core_target_qa=QaTriplet(question=row["core_target_question"],
                                 answer=row["core_target_answer"],
                                 evidence=row["core_target_evidence"],
                                 doc_id=row["target_doc_id"],
                                 section_name=row["target_section"]),
        pair_score=row["pair_score"], section_score=row["section_score"],
        origin=row["origin"], citation_sentence=row.get("citation_sentence"))


def _cluster_origin(relation_origin: str) -> str:
    return "keyword" if relation_origin == "semantic" else "citation_pool"


def _load_clusters(config: PipelineConfig) -> tuple[dict[str, PaperCluster], dict[str, RetrievalQa]]:
    clusters: dict[str, PaperCluster] = {}
    rqas: dict[str, RetrievalQa] = {}
    for row in read_jsonl(config.out("clusters.jsonl")):
        cluster = PaperCluster(
            cluster_id=row["cluster_id"], source_doc_id=row["source_doc_id"],
            target_doc_id=row["target_doc_id"],
            member_doc_ids=tuple(row["member_doc_ids"]),
            origin="keyword" if row["cluster_id"] == make_cluster_id(
                row["source_doc_id"], row["target_doc_id"], "keyword") else "citation_pool")
        clusters[cluster.cluster_id] = cluster
        rqas[cluster.cluster_id] = RetrievalQa(
            question=row["retrieval_question"], answer=row["retrieval_answer"],
            target_doc_id=row["target_doc_id"],
            distinctiveness=row.get("retrieval_distinctiveness", 0.0))
    return clusters, rqas


def _item_from_row(row: dict) -> MhqaItem:
    return MhqaItem(
        item_id=row["item_id"], retrieval_question=row["retrieval_question"],
        retrieval_answer=row["retrieval_answer"], interdoc_question=row["interdoc_question"],
        interdoc_answer=row["interdoc_answer"], combined_question=row["combined_question"],
        combined_answer=row["combined_answer"], source_doc_id=row["source_doc_id"],
        target_doc_id=row["target_doc_id"], cluster_id=row["cluster_id"],
        origin=row["origin"])


def _split_items(config: PipelineConfig) -> list[MhqaItem]:
    names = {"dev": ("dev.jsonl",), "test": ("test.jsonl",),
             "all": ("dev.jsonl", "test.jsonl")}[config.eval.split]
    items = []
    for name in names:
        items.extend(_item_from_row(r) for r in read_jsonl(config.out(name)))
    items.sort(key=lambda i: i.item_id)
    return items


# ---------------------------------------------------------------------------
# stage bodies: each returns a counts dict with in/kept/dropped/failed

def _stage_ingest(config: PipelineConfig) -> dict:
    corpus = load_corpus(config.corpus_path)
    eligible, report = filter_eligible(corpus, config.mode)
    write_jsonl(config.out("eligible.jsonl"), [{"doc_id": d} for d in eligible.doc_ids])
    return {"in": report.total, "kept": report.kept,
            "dropped": report.total - report.kept, "failed": 0,
            "detail": report.to_dict()}


def _stage_shqa(config: PipelineConfig) -> dict:
    _, eligible, _ = _load_eligible(config)
    gen, embedder = build_providers(config)
    params = config.gen_params()

    # Per-(document, section) generation tasks fan out to workers; results
    # merge in (doc, section index) order, so worker count never changes output.
    tasks = [(doc, section) for doc in eligible for section in doc.sections
             if any(p.strip() for p in section.paragraphs)]
    per_section = map_ordered(lambda pair: generate_shqa(pair[0], pair[1], gen, params),
                              tasks, config.workers)
    triplets: list[tuple[QaTriplet, object]] = []
    for (_, section), generated in zip(tasks, per_section):
        for t in generated:
            triplets.append((t, section))

    validated = [(t, s) for t, s in triplets
                 if validate_evidence(t, s, strict=config.strict_evidence)]
    records = [build_record(t, embedder) for t, _ in validated]
    kept, dropped = similarity_gap_filter(records, config.filter_fraction)

    write_jsonl(config.out("shqa.jsonl"), [{
        "doc_id": r.triplet.doc_id, "section_name": r.triplet.section_name,
        "question": r.triplet.question, "answer": r.triplet.answer,
        "evidence": r.triplet.evidence, "gap": r.gap,
    } for r in kept])

    generated = len(triplets)
    evidence_rejected = generated - len(validated)
    return {"in": generated, "kept": len(kept),
            "dropped": evidence_rejected + len(dropped), "failed": 0,
            "detail": {"generated": generated, "evidence_rejected": evidence_rejected,
                       "gap_dropped": len(dropped), "kept": len(kept)}}


def _stage_relate(config: PipelineConfig) -> dict:
    _, eligible, _ = _load_eligible(config)
    _, shqa_index = _load_shqa_index(config)
    _, embedder = build_providers(config)
    all_triplets = [t for doc_id in eligible.doc_ids for t in shqa_index.get(doc_id, [])]
    units = build_section_units(all_triplets, embedder, level=EmbedLevel(config.match_level))

    candidates: list[RelationCandidate] = []
    for source in eligible:
        if config.mode == "semantic":
            pool = semantic_candidates(source, eligible)
            candidates.extend(rank_relations(source, pool, units,
                                             k_sections=config.k_sections, tau=config.tau))
        else:
            candidates.extend(citation_relations(source, eligible, units,
                                                 tau=config.tau, k_sections=config.k_sections))
    candidates.sort(key=candidate_sort_key)
    kept = enforce_diversity(candidates, cap=config.diversity_cap)

    digest = config.stage_config_digest("relate")
    write_jsonl(config.out("relations.jsonl"), [{
        "source_doc_id": c.source_doc_id, "target_doc_id": c.target_doc_id,
        "source_section": c.source_section, "target_section": c.target_section,
        "pair_score": c.pair_score, "section_score": c.section_score,
        "origin": c.origin, "citation_sentence": c.citation_sentence,
        "core_source_question": c.core_source_qa.question,
        "core_source_answer": c.core_source_qa.answer,
        "core_source_evidence": c.core_source_qa.evidence,
        "core_target_question": c.core_target_qa.question,
        "core_target_answer": c.core_target_qa.answer,
        "core_target_evidence": c.core_target_qa.evidence,
        "config_digest": digest,
    } for c in kept])
    return {"in": len(candidates), "kept": len(kept),
            "dropped": len(candidates) - len(kept), "failed": 0}


def _stage_cluster(config: PipelineConfig) -> dict:
    _, eligible, _ = _load_eligible(config)
    _, shqa_index = _load_shqa_index(config)
    _, embedder = build_providers(config)
    relations = read_jsonl(config.out("relations.jsonl"))

    seen: set[tuple[str, str, str]] = set()
    rows = []
    for row in relations:
        key = (row["source_doc_id"], row["target_doc_id"], row["origin"])
        if key in seen:
            continue
        seen.add(key)
        source = eligible.get(row["source_doc_id"])
        target = eligible.get(row["target_doc_id"])
        if row["origin"] == "semantic":
            cluster_id = make_cluster_id(source.doc_id, target.doc_id, "keyword")
            cluster = build_cluster(source, target, semantic_candidates(source, eligible),
                                    eligible, rng_seed=derive_seed(config.seed, cluster_id),
                                    size=config.cluster_size)
        else:
            cluster = citation_cluster(source, target, eligible)
        rqa = select_retrieval_qa(target, cluster, shqa_index, embedder)
        rows.append({
            "cluster_id": cluster.cluster_id, "source_doc_id": cluster.source_doc_id,
            "target_doc_id": cluster.target_doc_id,
            "member_doc_ids": list(cluster.member_doc_ids),
            "retrieval_question": rqa.question, "retrieval_answer": rqa.answer,
            "retrieval_distinctiveness": rqa.distinctiveness,
        })
    write_jsonl(config.out("clusters.jsonl"), rows)
    # every relation record is covered by a cluster; duplicates share one
    return {"in": len(relations), "kept": len(relations), "dropped": 0, "failed": 0,
            "detail": {"relations": len(relations), "unique_clusters": len(rows)}}


def _stage_mhqa(config: PipelineConfig) -> dict:
    full, eligible, _ = _load_eligible(config)
    gen, _ = build_providers(config)
    params = config.gen_params()
    clusters, rqas = _load_clusters(config)
    relations = [_candidate_from_row(r) for r in read_jsonl(config.out("relations.jsonl"))]

    items: list[MhqaItem] = []
    rejected_rows: list[dict] = []
    pre_rejected = parse_failures = 0

    for candidate in relations:
        cluster_id = make_cluster_id(candidate.source_doc_id, candidate.target_doc_id,
                                     _cluster_origin(candidate.origin))
        cluster = clusters[cluster_id]
        rqa = rqas[cluster_id]
        source_title = eligible.get(candidate.source_doc_id).title
        target_title = eligible.get(candidate.target_doc_id).title
        prompt = render_mhqa_prompt(candidate, rqa, source_title, target_title)

        result = parse_mhqa_output(gen.generate(prompt, params))
        if isinstance(result, ParseFailure):
            # One bounded retry at a higher-entropy setting; format noise
            # dominates these failures.
            retry_params = TextGenParams(temperature=max(0.7, params.temperature),
                                         max_output_tokens=params.max_output_tokens,
                                         seed=params.seed)
            result = parse_mhqa_output(gen.generate(prompt, retry_params))

        if isinstance(result, PreRejected):
            pre_rejected += 1
            continue
        if isinstance(result, ParseFailure):
            parse_failures += 1
            log.warning("mhqa parse failure for %s -> %s: missing %s",
                        candidate.source_doc_id, candidate.target_doc_id, result.missing)
            continue
        outcome = finalize_item(result, candidate, cluster, rqa, target_title=target_title)
        if isinstance(outcome, MhqaItem):
            items.append(outcome)
        else:
            rejected_rows.append({
                "item_id": make_item_id(candidate),
                "source_doc_id": candidate.source_doc_id,
                "target_doc_id": candidate.target_doc_id,
                "source_section": candidate.source_section,
                "target_section": candidate.target_section,
                "origin": candidate.origin,
                "criteria": list(outcome.criteria),
                "draft": {
                    "find_target_q": outcome.draft.find_target_q,
                    "find_target_a": outcome.draft.find_target_a,
                    "interdoc_q": outcome.draft.interdoc_q,
                    "interdoc_a": outcome.draft.interdoc_a,
                    "merged_q": outcome.draft.merged_q,
                    "merged_a": outcome.draft.merged_a,
                },
            })

    items.sort(key=lambda i: i.item_id)
    rejected_rows.sort(key=lambda r: r["item_id"])
    prompt_digest = mhqa_prompt_digest()
    digest = config.stage_config_digest("mhqa")
    write_jsonl(config.out("mhqa_items.jsonl"), [{
        "item_id": i.item_id,
        "retrieval_question": i.retrieval_question, "retrieval_answer": i.retrieval_answer,
        "interdoc_question": i.interdoc_question, "interdoc_answer": i.interdoc_answer,
        "combined_question": i.combined_question, "combined_answer": i.combined_answer,
        "source_doc_id": i.source_doc_id, "target_doc_id": i.target_doc_id,
        "cluster_id": i.cluster_id, "origin": i.origin,
        "prompt_digest": prompt_digest, "config_digest": digest,
    } for i in items])
    write_jsonl(config.out("mhqa_rejected.jsonl"), rejected_rows)

    validation_rejected = len(rejected_rows)
    return {"in": len(relations), "kept": len(items),
            "dropped": pre_rejected + validation_rejected, "failed": parse_failures,
            "detail": {"candidates_in": len(relations), "pre_rejected": pre_rejected,
                       "parse_failures": parse_failures,
                       "validation_rejected": validation_rejected,
                       "items_out": len(items)}}


def _stage_split(config: PipelineConfig) -> dict:
    items = [_item_from_row(r) for r in read_jsonl(config.out("mhqa_items.jsonl"))]
    raw_rows = {r["item_id"]: r for r in read_jsonl(config.out("mhqa_items.jsonl"))}
    test_size = config.test_size if config.test_size is not None else len(items) // 10
    dev, test = split_dataset(items, test_size, config.seed)
    write_jsonl(config.out("dev.jsonl"), [raw_rows[i.item_id] for i in dev])
    write_jsonl(config.out("test.jsonl"), [raw_rows[i.item_id] for i in test])
    return {"in": len(items), "kept": len(dev) + len(test), "dropped": 0, "failed": 0,
            "detail": {"dev": len(dev), "test": len(test)}}


def _stage_eval_retrieval(config: PipelineConfig) -> dict:
    _, eligible, ids = _load_eligible(config)
    _, embedder = build_providers(config)
    clusters, _ = _load_clusters(config)
    items = _split_items(config)
    doc_index = {d.doc_id: d for d in eligible}

    def rank_item(item) -> list[dict]:
        cluster = clusters[item.cluster_id]
        envs = make_environments(item, cluster, ids, config.seed)
        item_rows = []
        for kind in (evaluate.ENV_PAPER_CLUSTER, evaluate.ENV_RANDOM_CLUSTER,
                     evaluate.ENV_FULL_CORPUS):
            env = envs[kind]
            ranking = evaluate.rank_candidates(item.retrieval_question, env, doc_index,
                                               embedder, config.eval.representation)
            if kind == evaluate.ENV_FULL_CORPUS:
                hit_ks, mrr_k = config.eval.corpus_hit_ks, config.eval.corpus_mrr_k
            else:
                hit_ks, mrr_k = config.eval.cluster_hit_ks, config.eval.cluster_mrr_k
            row = {"item_id": item.item_id, "env": kind,
                   "gold_doc_id": item.target_doc_id,
                   "candidates": len(env.candidate_doc_ids)}
            for k in hit_ks:
                row[f"hit@{k}"] = evaluate.hit_at_k(ranking, item.target_doc_id, k)
            row[f"mrr@{mrr_k}"] = evaluate.reciprocal_rank(ranking, item.target_doc_id, mrr_k)
            item_rows.append(row)
        return item_rows

    rows = []
    sums: dict[str, dict[str, float]] = {}
    counts: dict[str, int] = {}
    for item_rows in map_ordered(rank_item, items, config.workers):
        for row in item_rows:
            rows.append(row)
            agg = sums.setdefault(row["env"], {})
            for name, value in row.items():
                if name.startswith(("hit@", "mrr@")):
                    agg[name] = agg.get(name, 0.0) + value
            counts[row["env"]] = counts.get(row["env"], 0) + 1

    summary = {kind: {**{name: value / counts[kind] for name, value in sums[kind].items()},
                      "n": counts[kind]}
               for kind in sums}
    summary["representation"] = config.eval.representation
    summary["split"] = config.eval.split
    write_jsonl(config.out("eval_retrieval.jsonl"), rows)
    write_json(config.out("eval_retrieval_summary.json"), summary)
    # one evaluation unit per item x environment
    return {"in": len(rows), "kept": len(rows), "dropped": 0, "failed": 0,
            "detail": {"items": len(items), "environments": 3}}


def _stage_eval_qa(config: PipelineConfig) -> dict:
    _, eligible, _ = _load_eligible(config)
    gen, embedder = build_providers(config)
    clusters, _ = _load_clusters(config)
    items = _split_items(config)
    doc_index = {d.doc_id: d for d in eligible}
    retriever = EmbeddingRetriever(doc_index, embedder, config.eval.representation)
    params = config.gen_params()

    all_rows = []
    summary = {"representation": config.eval.representation, "split": config.eval.split}
    failures = 0
    for setting in (evaluate.SETTING_ORACLE, evaluate.SETTING_REALISTIC):
        scores, rows = run_qa_setting(items, setting, retriever, gen, gen,
                                      doc_index, clusters, params,
                                      workers=config.workers)
        summary[setting] = scores.to_dict()
        all_rows.extend(rows)
        failures += sum(1 for r in rows if "error" in r)
    write_jsonl(config.out("eval_qa.jsonl"), all_rows)
    write_json(config.out("eval_qa_summary.json"), summary)
    return {"in": len(items) * 2, "kept": len(all_rows) - failures, "dropped": 0,
            "failed": failures}


def _stage_stats(config: PipelineConfig) -> dict:
    triplets, _ = _load_shqa_index(config)
    dev = [_item_from_row(r) for r in read_jsonl(config.out("dev.jsonl"))]
    test = [_item_from_row(r) for r in read_jsonl(config.out("test.jsonl"))]
    stats = {
        "length_unit": config.length_unit,
        "shqa": shqa_statistics(triplets, unit=config.length_unit).to_dict(),
        "mhqa": {"dev": split_statistics(dev, unit=config.length_unit),
                 "test": split_statistics(test, unit=config.length_unit)},
    }
    write_json(config.out("stats.json"), stats)
    return {"in": len(triplets) + len(dev) + len(test),
            "kept": len(triplets) + len(dev) + len(test), "dropped": 0, "failed": 0}


_STAGE_BODY: dict[str, Callable[[PipelineConfig], dict]] = {
    "ingest": _stage_ingest,
    "shqa": _stage_shqa,
    "relate": _stage_relate,
    "cluster": _stage_cluster,
    "mhqa": _stage_mhqa,
    "split": _stage_split,
    "eval-retrieval": _stage_eval_retrieval,
    "eval-qa": _stage_eval_qa,
    "stats": _stage_stats,
}


# ---------------------------------------------------------------------------
# manifest machinery

def _manifest_path(config: PipelineConfig, stage: str) -> Path:
    return config.out("manifests") / f"{stage}.json"


def _input_digest(config: PipelineConfig, stage: str) -> str:
    parts = []
    if stage in _USES_CORPUS:
        parts.append(f"corpus={_file_sha(Path(config.corpus_path))}")
    for name in _STAGE_INPUTS[stage]:
        path = config.out(name)
        if not path.exists():
            raise StageError(f"[{stage}] missing upstream artifact {name}; "
                             f"run the producing stage first")
        parts.append(f"{name}={_file_sha(path)}")
    return hashlib.sha256(";".join(parts).encode("utf-8")).hexdigest()


def load_manifest(config: PipelineConfig, stage: str) -> StageManifest | None:
    path = _manifest_path(config, stage)
    if not path.exists():
        return None
    raw = json.loads(path.read_text(encoding="utf-8"))
    return StageManifest(stage=raw["stage"], input_digest=raw["input_digest"],
                         config_digest=raw["config_digest"], counts=raw["counts"],
                         wall_time_s=raw["wall_time_s"])


def manifest_valid(config: PipelineConfig, stage: str) -> bool:
    manifest = load_manifest(config, stage)
    if manifest is None:
        return False
    try:
        current_input = _input_digest(config, stage)
    except StageError:
        return False
    return (manifest.input_digest == current_input
            and manifest.config_digest == config.stage_config_digest(stage))


def run_stage(stage: str, config: PipelineConfig, force: bool = False) -> StageManifest:
    """Execute one stage. A stage whose manifest matches the current input and
    config digests is a no-op unless ``force``; upstream manifests must be
    valid first."""
    if stage not in _STAGE_BODY:
        raise StageError(f"unknown stage {stage!r}; expected one of {', '.join(STAGE_ORDER)}")
    config.validate()
    if not Path(config.corpus_path).exists():
        raise StageError(f"corpus file not found: {config.corpus_path}")

    for upstream in _STAGE_UPSTREAM[stage]:
        if not manifest_valid(config, upstream):
            raise StageError(f"[{stage}] upstream stage {upstream!r} has no valid manifest; "
                             f"run it first (or re-run with current config)")

    with _run_lock(Path(config.output_dir)):
        if not force and manifest_valid(config, stage):
            manifest = load_manifest(config, stage)
            manifest.skipped = True
            log.info("[%s] digests unchanged; skipping", stage)
            return manifest

        started = time.perf_counter()
        input_digest = _input_digest(config, stage)
        counts = _STAGE_BODY[stage](config)
        manifest = StageManifest(stage=stage, input_digest=input_digest,
                                 config_digest=config.stage_config_digest(stage),
                                 counts=counts,
                                 wall_time_s=round(time.perf_counter() - started, 3))
        write_json(_manifest_path(config, stage), manifest.to_dict())
        log.info("[%s] done in %.2fs: %s", stage, manifest.wall_time_s, counts)
        return manifest


def run_all(config: PipelineConfig, force: bool = False) -> list[StageManifest]:
    return [run_stage(stage, config, force=force) for stage in STAGE_ORDER]


# ---------------------------------------------------------------------------
# reporting

def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def report(config: PipelineConfig) -> str:
    """Human-readable run summary assembled from manifests and artifacts."""
    manifests = {stage: load_manifest(config, stage) for stage in STAGE_ORDER}
    if not any(manifests.values()):
        raise StageError("no stage manifests found; nothing to report")

    lines = []
    lines.append(f"run report ({config.mode} mode, seed {config.seed})")
    lines.append(f"config digest: {config.config_digest()}")
    lines.append("")
    lines.append("stage counts (in / kept / dropped / failed):")
    for stage in STAGE_ORDER:
        m = manifests[stage]
        if m is None:
            continue
        c = m.counts
        lines.append(f"  {stage:<15} {c['in']:>6} / {c['kept']:>6} / "
                     f"{c['dropped']:>6} / {c['failed']:>6}")

    mhqa_manifest = manifests.get("mhqa")
    if mhqa_manifest is not None:
        d = mhqa_manifest.counts["detail"]
        total = d["pre_rejected"] + d["parse_failures"] + d["validation_rejected"] + d["items_out"]
        ok = "holds" if total == d["candidates_in"] else "VIOLATED"
        lines.append("")
        lines.append(f"conservation: {d['candidates_in']} candidates = "
                     f"{d['pre_rejected']} pre-rejected + {d['parse_failures']} parse failures + "
                     f"{d['validation_rejected']} validation-rejected + {d['items_out']} items "
                     f"({ok})")

    stats_path = config.out("stats.json")
    if stats_path.exists():
        stats = json.loads(stats_path.read_text(encoding="utf-8"))
        s = stats["shqa"]
        lines.append("")
        lines.append(f"single-hop QA statistics (lengths in {stats['length_unit']}):")
        lines.append(f"  count                {_fmt(s['count'])}")
        lines.append(f"  avg question length  {_fmt(s['avg_question_length'])}")
        lines.append(f"  avg answer length    {_fmt(s['avg_answer_length'])}")
        lines.append(f"  avg QA per paper     {_fmt(s['avg_qa_per_paper'])}")
        lines.append(f"  avg QA per section   {_fmt(s['avg_qa_per_section'])}")
        if s["per_section_total"]:
            lines.append("  per-section totals:")
            for name, total in s["per_section_total"].items():
                lines.append(f"    {name:<20} {total:>6}  (avg {_fmt(s['per_section_avg'][name])})")
        lines.append("")
        lines.append("multi-hop QA statistics:")
        header = f"  {'':<26}{'dev':>10}{'test':>10}"
        lines.append(header)
        dev, test = stats["mhqa"]["dev"], stats["mhqa"]["test"]
        for label, key in (("count", "count"),
                           ("avg retrieval Q length", "avg_retrieval_q_length"),
                           ("avg inter-doc Q length", "avg_interdoc_q_length"),
                           ("avg combined Q length", "avg_combined_q_length"),
                           ("avg inter-doc A length", "avg_interdoc_a_length"),
                           ("avg combined A length", "avg_combined_a_length")):
            lines.append(f"  {label:<26}{_fmt(dev[key]):>10}{_fmt(test[key]):>10}")

    retrieval_path = config.out("eval_retrieval_summary.json")
    if retrieval_path.exists():
        summary = json.loads(retrieval_path.read_text(encoding="utf-8"))
        lines.append("")
        lines.append(f"retrieval (split: {summary['split']}; candidate representation: "
                     f"{summary['representation']} - absolute numbers depend directly "
                     f"on this choice):")
        for kind in ("paper_cluster", "random_cluster", "full_corpus"):
            if kind not in summary:
                continue
            metrics = summary[kind]
            parts = [f"{name}={_fmt(value)}" for name, value in sorted(metrics.items())
                     if name != "n"]
            lines.append(f"  {kind:<15} n={metrics['n']:<5} " + "  ".join(parts))

    qa_path = config.out("eval_qa_summary.json")
    if qa_path.exists():
        summary = json.loads(qa_path.read_text(encoding="utf-8"))
        lines.append("")
        lines.append(f"answer quality (split: {summary['split']}):")
        lines.append(f"  {'setting':<12}{'accuracy':>10}{'token_f1':>10}{'rouge_l':>10}"
                     f"{'scored':>8}{'judge_fail':>12}")
        for setting in ("oracle", "realistic"):
            if setting not in summary:
                continue
            s = summary[setting]
            lines.append(f"  {setting:<12}{_fmt(s['accuracy']):>10}{_fmt(s['token_f1']):>10}"
                         f"{_fmt(s['rouge_l']):>10}{s['scored_count']:>8}{s['judge_failures']:>12}")

    text = "\n".join(lines) + "\n"
    report_path = config.out("report.txt")
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(text, encoding="utf-8")
    return text
