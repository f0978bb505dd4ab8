"""Inter-document relation construction.

Sections are represented by their question embeddings; a pairwise cosine
matrix is gated at a threshold tau and summed to score section pairs, the
top pairs per document pair become relation candidates anchored on the
highest-similarity QA pair, and a greedy cap bounds how often any document
appears in the final candidate set.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .corpus import CitationGrammar, Corpus, Document, extract_citation_contexts
from .providers import EmbedLevel, Embedder
from .shqa import QaTriplet

log = logging.getLogger(__name__)

DEFAULT_TAU = 0.3
DEFAULT_K_SECTIONS = 3
DEFAULT_DIVERSITY_CAP = 3


@dataclass
class SectionUnit:
    """One section's QA triplets plus their matching-level embeddings, aligned
    by index."""

    doc_id: str
    section_name: str
    question_vectors: np.ndarray
    triplets: list[QaTriplet]

    def __post_init__(self):
        if len(self.triplets) < 1:
            raise ValueError("a SectionUnit needs at least one triplet")
        if self.question_vectors.shape[0] != len(self.triplets):
            raise ValueError("vectors and triplets must be index-aligned")


@dataclass(frozen=True)
class RelationCandidate:
    source_doc_id: str
    target_doc_id: str
    source_section: str
    target_section: str
    core_source_qa: QaTriplet
    core_target_qa: QaTriplet
    pair_score: float
    section_score: float
    origin: str
    citation_sentence: str | None = None

    def __post_init__(self):
        if self.source_doc_id == self.target_doc_id:
            raise ValueError("relation candidates must span two documents")
        if self.origin not in ("semantic", "citation"):
            raise ValueError(f"unknown origin {self.origin!r}")
        if self.origin == "citation" and not self.citation_sentence:
            raise ValueError("citation-origin candidates need their citation sentence")


UnitIndex = Mapping[str, Sequence[SectionUnit]]


def build_section_units(triplets: Iterable[QaTriplet], embedder: Embedder,
                        level: EmbedLevel = EmbedLevel.Q) -> dict[str, list[SectionUnit]]:
    """Group triplets by (document, section) and embed them at the matching
    level (question-level by default)."""
    grouped: dict[tuple[str, str], list[QaTriplet]] = {}
    for t in triplets:
        grouped.setdefault((t.doc_id, t.section_name), []).append(t)

    units: dict[str, list[SectionUnit]] = {}
    for (doc_id, section_name), group in grouped.items():
        texts = [level.render(t.question, t.answer, t.evidence) for t in group]
        vectors = embedder.embed_batch(texts)
        units.setdefault(doc_id, []).append(SectionUnit(
            doc_id=doc_id, section_name=section_name,
            question_vectors=vectors, triplets=group))
    return units


def pair_matrix(a: SectionUnit, b: SectionUnit) -> np.ndarray:
    """Pairwise cosine matrix between two sections' embeddings."""
    return kernels.cosine_matrix(a.question_vectors, b.question_vectors)


def section_similarity(k: np.ndarray, tau: float = DEFAULT_TAU) -> float:
    """Gated similarity: sum of |k[p,q]| over entries with k[p,q] >= tau."""
    return kernels.gated_abs_sum(k, tau)


def semantic_candidates(source: Document, corpus: Corpus) -> list[Document]:
    """All other documents sharing at least one normalized keyword with the
    source."""
    source_kw = source.keyword_set()
    if not source_kw:
        return []
    return [doc for doc in corpus
            if doc.doc_id != source.doc_id and source_kw & doc.keyword_set()]


def _section_pair_hits(source_units: Sequence[SectionUnit],
                       target_units: Sequence[SectionUnit],
                       tau: float) -> list[tuple[float, SectionUnit, SectionUnit, int, int, float]]:
    """Score every section pair of one document pair; keep pairs with at least
    one gated entry. Returns (score, su, tu, p, q, max_value) tuples."""
    hits = []
    for su in source_units:
        for tu in target_units:
            k = pair_matrix(su, tu)
            if kernels.gate_count(k, tau) == 0:
                continue
            score = kernels.gated_abs_sum(k, tau)
            p, q, val = kernels.pair_argmax(k)
            hits.append((score, su, tu, p, q, val))
    return hits


def candidate_sort_key(c: RelationCandidate):
    return (-c.pair_score, c.source_doc_id, c.source_section,
            c.target_doc_id, c.target_section, c.core_source_qa.question)


def rank_relations(source: Document, candidates: Sequence[Document], units: UnitIndex,
                   k_sections: int = DEFAULT_K_SECTIONS, tau: float = DEFAULT_TAU,
                   origin: str = "semantic",
                   citation_sentences: Mapping[str, str] | None = None,
                   ) -> list[RelationCandidate]:
    """Produce relation candidates for one source document.

    Per candidate document: every section pair is scored with the gated sum,
    the top ``k_sections`` pairs survive (ties on lexicographic section
    names), and each surviving pair contributes one candidate anchored on its
    argmax QA pair. Output is sorted by pair score descending with full
    deterministic tie-breaks; candidate input order never matters.
    """
    if k_sections < 1:
        raise ValueError("k_sections must be >= 1")
    source_units = units.get(source.doc_id, [])
    out: list[RelationCandidate] = []
    for cand in candidates:
        if cand.doc_id == source.doc_id:
            continue
        hits = _section_pair_hits(source_units, units.get(cand.doc_id, []), tau)
        hits.sort(key=lambda h: (-h[0], h[1].section_name, h[2].section_name))
        for score, su, tu, p, q, val in hits[:k_sections]:
            if val < tau:
                # Gated sum passed on mid entries but the anchor itself is weak.
                continue
            sentence = citation_sentences.get(cand.doc_id) if citation_sentences else None
            out.append(RelationCandidate(
                source_doc_id=source.doc_id, target_doc_id=cand.doc_id,
                source_section=su.section_name, target_section=tu.section_name,
                core_source_qa=su.triplets[p], core_target_qa=tu.triplets[q],
                pair_score=val, section_score=score,
                origin=origin, citation_sentence=sentence))
    out.sort(key=candidate_sort_key)
    return out


def enforce_diversity(candidates: Sequence[RelationCandidate],
                      cap: int = DEFAULT_DIVERSITY_CAP) -> list[RelationCandidate]:
    """Greedy scan over a score-descending list: keep a candidate only while
    both of its documents appear in fewer than ``cap`` kept candidates."""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    counts: Counter[str] = Counter()
    kept = []
    for cand in candidates:
        if counts[cand.source_doc_id] < cap and counts[cand.target_doc_id] < cap:
            kept.append(cand)
            counts[cand.source_doc_id] += 1
            counts[cand.target_doc_id] += 1
    return kept


def citation_relations(source: Document, corpus: Corpus, units: UnitIndex,
                       tau: float = DEFAULT_TAU, k_sections: int = DEFAULT_K_SECTIONS,
                       grammar: CitationGrammar | None = None) -> list[RelationCandidate]:
    """Citation-guided variant: the candidate target set is exactly the set of
    documents reached by single-marker citation sentences, scored identically
    to the semantic route; each candidate carries its citation sentence."""
    contexts = extract_citation_contexts(source, corpus, grammar)
    sentences: dict[str, str] = {}
    targets: list[Document] = []
    for ctx in contexts:
        if ctx.target_doc_id not in sentences:
            sentences[ctx.target_doc_id] = ctx.sentence
            targets.append(corpus.get(ctx.target_doc_id))
    return rank_relations(source, targets, units, k_sections=k_sections, tau=tau,
                          origin="citation", citation_sentences=sentences)
