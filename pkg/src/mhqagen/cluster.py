"""Paper cluster construction and retrieval-QA selection.

A cluster is the constrained retrieval environment for one relation: the gold
target document plus distractors. Keyword-origin clusters have a fixed size
(30 by default) built from keyword-overlap candidates padded with seeded
random non-candidates; citation-origin clusters are simply the source's
in-corpus citation pool.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from typing import Mapping, Sequence

from . import kernels
from .corpus import Corpus, Document
from .providers import EmbedLevel, Embedder
from .shqa import QaTriplet

DEFAULT_CLUSTER_SIZE = 30


def derive_seed(seed: int, *parts: str) -> int:
    """Stable per-entity RNG seed so parallel or reordered construction cannot
    change outputs."""
    payload = "\x1f".join([str(seed), *parts]).encode("utf-8")
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "big")


def make_cluster_id(source_doc_id: str, target_doc_id: str, origin: str) -> str:
    digest = hashlib.sha1(f"{source_doc_id}|{target_doc_id}|{origin}".encode("utf-8"))
    return f"c{digest.hexdigest()[:12]}"


@dataclass(frozen=True)
class PaperCluster:
    cluster_id: str
    source_doc_id: str
    target_doc_id: str
    member_doc_ids: tuple[str, ...]
    origin: str  # "keyword" | "citation_pool"

    def __post_init__(self):
        if len(set(self.member_doc_ids)) != len(self.member_doc_ids):
            raise ValueError("cluster members must be unique")
        if self.target_doc_id not in self.member_doc_ids:
            raise ValueError("cluster must contain its target document")
        if self.source_doc_id in self.member_doc_ids:
            raise ValueError("cluster must not contain its source document")
        if self.origin not in ("keyword", "citation_pool"):
            raise ValueError(f"unknown cluster origin {self.origin!r}")


@dataclass(frozen=True)
class RetrievalQa:
    question: str
    answer: str
    target_doc_id: str
    distinctiveness: float


def build_cluster(source: Document, target: Document, keyword_list: Sequence[Document],
                  corpus: Corpus, rng_seed: int, size: int = DEFAULT_CLUSTER_SIZE,
                  ) -> PaperCluster:
    """Fixed-size cluster: the target, then keyword-overlap candidates ranked
    by overlap count (then doc_id) capped at size-1, then seeded random pads
    drawn from non-candidate documents.

    Raises ValueError when the corpus cannot supply ``size`` distinct members
    without the source document.
    """
    if size < 2:
        raise ValueError("cluster size must be >= 2")
    source_kw = source.keyword_set()
    ranked = []
    candidate_ids = set()
    for doc in keyword_list:
        candidate_ids.add(doc.doc_id)
        if doc.doc_id in (source.doc_id, target.doc_id):
            continue
        overlap = len(source_kw & doc.keyword_set())
        if overlap:
            ranked.append((-overlap, doc.doc_id))
    ranked.sort()

    members = [target.doc_id] + [doc_id for _, doc_id in ranked[:size - 1]]
    if len(members) < size:
        taken = set(members) | candidate_ids | {source.doc_id}
        pool = sorted(doc_id for doc_id in corpus.doc_ids if doc_id not in taken)
        need = size - len(members)
        if need > len(pool):
            raise ValueError(
                f"corpus too small: need {need} padding documents, only {len(pool)} available")
        members.extend(random.Random(rng_seed).sample(pool, need))

    return PaperCluster(
        cluster_id=make_cluster_id(source.doc_id, target.doc_id, "keyword"),
        source_doc_id=source.doc_id, target_doc_id=target.doc_id,
        member_doc_ids=tuple(members), origin="keyword")


def citation_cluster(source: Document, target: Document, corpus: Corpus) -> PaperCluster:
    """Citation-pool cluster: every document cited by the source and present
    in ``corpus``, in reference order. Size follows the pool, not the fixed
    default."""
    cited = []
    seen = set()
    for ref in source.resolved_citations():
        if (ref.target_doc_id == source.doc_id or ref.target_doc_id in seen
                or ref.target_doc_id not in corpus):
            continue
        seen.add(ref.target_doc_id)
        cited.append(ref.target_doc_id)
    if target.doc_id not in seen:
        raise ValueError(
            f"target {target.doc_id} is not among the resolved citations of {source.doc_id}")
    return PaperCluster(
        cluster_id=make_cluster_id(source.doc_id, target.doc_id, "citation_pool"),
        source_doc_id=source.doc_id, target_doc_id=target.doc_id,
        member_doc_ids=tuple(cited), origin="citation_pool")


def select_retrieval_qa(target: Document, cluster: PaperCluster,
                        shqa_index: Mapping[str, Sequence[QaTriplet]],
                        embedder: Embedder) -> RetrievalQa:
    """Pick the target QA most distinctive within the cluster.

    Every QA is embedded at the QA level; a target QA's distinctiveness is the
    sum of cosine distances (1 - cos) to every QA of every other member. Ties
    resolve to the lexicographically smallest question text, so the result is
    invariant to member and QA ordering.
    """
    target_qas = list(shqa_index.get(target.doc_id, ()))
    if not target_qas:
        raise ValueError(f"target {target.doc_id} has no surviving single-hop QAs")
    other_qas: list[QaTriplet] = []
    for member in cluster.member_doc_ids:
        if member == target.doc_id:
            continue
        other_qas.extend(shqa_index.get(member, ()))

    def qa_text(t: QaTriplet) -> str:
        return EmbedLevel.QA.render(t.question, t.answer, t.evidence)

    target_vecs = embedder.embed_batch([qa_text(t) for t in target_qas])
    if other_qas:
        other_vecs = embedder.embed_batch([qa_text(t) for t in other_qas])
        sums = kernels.distinctiveness_sums(target_vecs, other_vecs)
    else:
        sums = [0.0] * len(target_qas)

    best = min(range(len(target_qas)),
               key=lambda i: (-sums[i], target_qas[i].question))
    chosen = target_qas[best]
    return RetrievalQa(question=chosen.question, answer=chosen.answer,
                       target_doc_id=target.doc_id, distinctiveness=float(sums[best]))
