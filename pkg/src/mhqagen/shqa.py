"""Single-hop QA triplet generation, evidence validation, and quality filtering."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .corpus import Document, Section
from .prompts import render_shqa_prompt
from .providers import Embedder, TextGenerator, TextGenParams, cosine
from .textnorm import normalize_match_text, text_length

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class QaTriplet:
    """A (question, answer, evidence) unit anchored to one section of one document."""

    question: str
    answer: str
    evidence: str
    doc_id: str
    section_name: str

    def __post_init__(self):
        for name in ("question", "answer", "evidence"):
            if not getattr(self, name).strip():
                raise ValueError(f"triplet {name} must be non-empty")


@dataclass
class ShqaRecord:
    triplet: QaTriplet
    q_vec: np.ndarray
    a_vec: np.ndarray
    e_vec: np.ndarray
    gap: float


def build_record(triplet: QaTriplet, embedder: Embedder) -> ShqaRecord:
    """Embed the triplet's three texts and compute the question-alignment gap
    Sim(Q,A) - Sim(Q,E)."""
    q_vec, a_vec, e_vec = embedder.embed_batch(
        [triplet.question, triplet.answer, triplet.evidence])
    gap = cosine(q_vec, a_vec) - cosine(q_vec, e_vec)
    return ShqaRecord(triplet=triplet, q_vec=q_vec, a_vec=a_vec, e_vec=e_vec, gap=gap)


_FENCE_RE = re.compile(r"```[a-zA-Z]*\n(.*?)```", re.DOTALL)
_TRAILING_COMMA_RE = re.compile(r",(\s*[\]}])")


def parse_triplet_list(completion: str) -> list[dict] | None:
    """Parse a completion as a JSON list of triplet objects.

    Tolerates markdown code fences, surrounding prose, and trailing commas.
    Returns None when no list can be recovered at all; items missing any of
    the three required fields are dropped individually.
    """
    text = completion
    fence = _FENCE_RE.search(text)
    if fence:
        text = fence.group(1)
    start = text.find("[")
    end = text.rfind("]")
    if start == -1 or end <= start:
        return None
    candidate = text[start:end + 1]
    try:
        data = json.loads(candidate)
    except json.JSONDecodeError:
        try:
            data = json.loads(_TRAILING_COMMA_RE.sub(r"\1", candidate))
        except json.JSONDecodeError:
            return None
    if not isinstance(data, list):
        return None
    items = []
    for entry in data:
        if not isinstance(entry, dict):
            continue
        if all(isinstance(entry.get(k), str) and entry[k].strip()
               for k in ("question", "evidence", "answer")):
            items.append(entry)
    return items


def generate_shqa(doc: Document, section: Section, gen: TextGenerator,
                  params: TextGenParams | None = None) -> list[QaTriplet]:
    """Prompt the generator once per paragraph and collect parsed triplets.

    Unparseable completions cost only that paragraph (logged, never fatal);
    provider failures propagate.
    """
    if not section.paragraphs:
        raise ValueError(f"section {section.name!r} of {doc.doc_id} has no paragraphs")
    triplets = []
    for paragraph in section.paragraphs:
        if not paragraph.strip():
            continue
        completion = gen.generate(render_shqa_prompt(paragraph), params)
        items = parse_triplet_list(completion)
        if items is None:
            log.warning("unparseable triplet completion for %s/%s; paragraph skipped",
                        doc.doc_id, section.name)
            continue
        for item in items:
            triplets.append(QaTriplet(
                question=item["question"].strip(),
                answer=item["answer"].strip(),
                evidence=item["evidence"].strip(),
                doc_id=doc.doc_id,
                section_name=section.name,
            ))
    return triplets


def validate_evidence(triplet: QaTriplet, section: Section, strict: bool = False) -> bool:
    """True iff the evidence occurs verbatim in the section text.

    The default applies match normalization (NFKC, glyph unification,
    whitespace collapse) to both sides first; ``strict=True`` demands a
    byte-exact substring.
    """
    section_text = " ".join(section.paragraphs)
    if strict:
        return triplet.evidence in section_text
    return normalize_match_text(triplet.evidence) in normalize_match_text(section_text)


def _drop_count(fraction: float, n: int) -> int:
    # Fraction arithmetic avoids float-product surprises like 0.29*100 -> 28.999...
    return int(Fraction(str(fraction)) * n)


def similarity_gap_filter(records: Sequence[ShqaRecord], fraction: float = 0.10,
                          ) -> tuple[list[ShqaRecord], list[ShqaRecord]]:
    """Drop the floor(fraction*N) records with the smallest gap, globally.

    Ties at the cut are broken by (doc_id, section_name, question) so the
    partition is deterministic. Both returned lists preserve input order.
    """
    if not 0 <= fraction < 1:
        raise ValueError("fraction must be in [0, 1)")
    n_drop = _drop_count(fraction, len(records))
    order = sorted(range(len(records)), key=lambda i: (
        records[i].gap,
        records[i].triplet.doc_id,
        records[i].triplet.section_name,
        records[i].triplet.question,
    ))
    dropped_idx = set(order[:n_drop])
    kept = [r for i, r in enumerate(records) if i not in dropped_idx]
    dropped = [r for i, r in enumerate(records) if i in dropped_idx]
    return kept, dropped


@dataclass
class StatsReport:
    """Corpus-level triplet statistics; lengths use the configured unit."""

    count: int
    length_unit: str
    avg_question_length: float | None
    avg_answer_length: float | None
    avg_qa_per_paper: float | None
    avg_qa_per_section: float | None
    per_section_total: dict[str, int]
    per_section_avg: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "length_unit": self.length_unit,
            "avg_question_length": self.avg_question_length,
            "avg_answer_length": self.avg_answer_length,
            "avg_qa_per_paper": self.avg_qa_per_paper,
            "avg_qa_per_section": self.avg_qa_per_section,
            "per_section_total": self.per_section_total,
            "per_section_avg": self.per_section_avg,
        }


def shqa_statistics(triplets: Iterable[QaTriplet], unit: str = "tokens") -> StatsReport:
    triplets = list(triplets)
    if not triplets:
        return StatsReport(count=0, length_unit=unit, avg_question_length=None,
                           avg_answer_length=None, avg_qa_per_paper=None,
                           avg_qa_per_section=None, per_section_total={}, per_section_avg={})

    papers: set[str] = set()
    doc_sections: set[tuple[str, str]] = set()
    section_counts: dict[str, int] = {}
    section_groups: dict[str, set[str]] = {}
    q_total = a_total = 0
    for t in triplets:
        papers.add(t.doc_id)
        doc_sections.add((t.doc_id, t.section_name))
        section_counts[t.section_name] = section_counts.get(t.section_name, 0) + 1
        section_groups.setdefault(t.section_name, set()).add(t.doc_id)
        q_total += text_length(t.question, unit)
        a_total += text_length(t.answer, unit)

    count = len(triplets)
    per_section_total = dict(sorted(section_counts.items()))
    per_section_avg = {name: section_counts[name] / len(section_groups[name])
                       for name in per_section_total}
    return StatsReport(
        count=count,
        length_unit=unit,
        avg_question_length=q_total / count,
        avg_answer_length=a_total / count,
        avg_qa_per_paper=count / len(papers),
        avg_qa_per_section=count / len(doc_sections),
        per_section_total=per_section_total,
        per_section_avg=per_section_avg,
    )
