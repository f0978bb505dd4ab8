"""Multi-hop QA synthesis: prompt rendering, structured-output parsing,
validation gating, and dataset splitting."""

from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass
from typing import Sequence

from .cluster import PaperCluster, RetrievalQa
from .prompts import MHQA_SENTINEL, render_mhqa_prompt_text
from .relation import RelationCandidate
from .textnorm import text_length


@dataclass(frozen=True)
class ValidationVerdict:
    fluency: str
    completeness: str
    crossref_necessity: str
    relational_appropriateness: str
    decision: str

    def __post_init__(self):
        for name in ("fluency", "completeness", "crossref_necessity",
                     "relational_appropriateness", "decision"):
            if getattr(self, name) not in ("Accept", "Reject"):
                raise ValueError(f"{name} must be Accept or Reject")

    def failing_criteria(self) -> tuple[str, ...]:
        names = ("fluency", "completeness", "crossref_necessity", "relational_appropriateness")
        return tuple(n for n in names if getattr(self, n) == "Reject")


@dataclass(frozen=True)
class MhqaDraft:
    find_target_q: str
    find_target_a: str
    interdoc_q: str
    interdoc_a: str
    merged_q: str
    merged_a: str
    verdict: ValidationVerdict


@dataclass(frozen=True)
class PreRejected:
    """The generator declined the pair at pre-validation (sentinel output)."""

    completion: str


@dataclass(frozen=True)
class ParseFailure:
    """The completion was not sentinel and not valid grammar; ``missing``
    names the first absent or empty element."""

    missing: str
    completion: str


@dataclass(frozen=True)
class Rejected:
    draft: MhqaDraft
    criteria: tuple[str, ...]


@dataclass(frozen=True)
class MhqaItem:
    item_id: str
    retrieval_question: str
    retrieval_answer: str
    interdoc_question: str
    interdoc_answer: str
    combined_question: str
    combined_answer: str
    source_doc_id: str
    target_doc_id: str
    cluster_id: str
    origin: str

    def __post_init__(self):
        if not self.combined_answer.strip():
            raise ValueError("combined_answer must be non-empty")


def make_item_id(candidate: RelationCandidate) -> str:
    payload = "|".join((candidate.source_doc_id, candidate.target_doc_id,
                        candidate.source_section, candidate.target_section,
                        candidate.origin))
    return "m" + hashlib.sha1(payload.encode("utf-8")).hexdigest()[:12]


def render_mhqa_prompt(candidate: RelationCandidate, rqa: RetrievalQa,
                       source_title: str, target_title: str) -> str:
    """Fill the generation prompt's input block from one relation candidate
    and its cluster's retrieval QA. Only these fields enter the prompt."""
    if candidate.target_doc_id != rqa.target_doc_id:
        raise ValueError(
            f"candidate targets {candidate.target_doc_id}, retrieval QA targets {rqa.target_doc_id}")
    return render_mhqa_prompt_text(
        source_paper_title=source_title,
        source_section_name=candidate.source_section,
        core_source_q=candidate.core_source_qa.question,
        core_source_a=candidate.core_source_qa.answer,
        target_paper_title=target_title,
        target_section_name=candidate.target_section,
        core_target_q=candidate.core_target_qa.question,
        core_target_a=candidate.core_target_qa.answer,
        unique_target_q=rqa.question,
        unique_target_a=rqa.answer,
    )


COMPONENT_FIND = "Find Target Paper"
COMPONENT_INTERDOC = "Generate Inter-document QA"
COMPONENT_MERGE = "Merge Complete QA"
COMPONENT_VALIDATION = "QA Validation"

_SCORE_FIELDS = (
    ("Fluency", "fluency"),
    ("Completeness", "completeness"),
    ("Cross-reference Necessity", "crossref_necessity"),
    ("Relational Appropriateness", "relational_appropriateness"),
    ("Decision", "decision"),
)

_OUTPUTS_RE = re.compile(r"<outputs>(.*?)</outputs>", re.DOTALL)
_COMPONENT_RE = re.compile(r'<component\s+type="([^"]+)">(.*?)</component>', re.DOTALL)
_QUESTION_RE = re.compile(r"<question>(.*?)</question>", re.DOTALL)
_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)
_SCORE_RE = re.compile(r'<score\s+type="([^"]+)">(.*?)</score>', re.DOTALL)


def parse_mhqa_output(completion: str) -> MhqaDraft | PreRejected | ParseFailure:
    """Parse a generation completion.

    The sentinel sentence anywhere in the completion wins: the pair was
    rejected before generation. Otherwise the tagged component grammar is
    extracted, tolerating prose around the <outputs> block.
    """
    if MHQA_SENTINEL in completion:
        return PreRejected(completion=completion)

    outputs = _OUTPUTS_RE.search(completion)
    if not outputs:
        return ParseFailure(missing="outputs", completion=completion)
    body = outputs.group(1)
    components = {m.group(1).strip(): m.group(2) for m in _COMPONENT_RE.finditer(body)}

    texts: dict[str, str] = {}
    for name, prefix in ((COMPONENT_FIND, "find_target"),
                         (COMPONENT_INTERDOC, "interdoc"),
                         (COMPONENT_MERGE, "merged")):
        block = components.get(name)
        if block is None:
            return ParseFailure(missing=f'component "{name}"', completion=completion)
        for pattern, suffix in ((_QUESTION_RE, "q"), (_ANSWER_RE, "a")):
            m = pattern.search(block)
            element = "question" if suffix == "q" else "answer"
            if not m:
                return ParseFailure(missing=f'{element} in component "{name}"',
                                    completion=completion)
            value = m.group(1).strip()
            if not value:
                return ParseFailure(missing=f'{element} in component "{name}" (empty)',
                                    completion=completion)
            texts[f"{prefix}_{suffix}"] = value

    validation = components.get(COMPONENT_VALIDATION)
    if validation is None:
        return ParseFailure(missing=f'component "{COMPONENT_VALIDATION}"', completion=completion)
    scores = {m.group(1).strip(): m.group(2).strip() for m in _SCORE_RE.finditer(validation)}
    verdict_kwargs = {}
    for label, field_name in _SCORE_FIELDS:
        raw = scores.get(label)
        if raw is None:
            return ParseFailure(missing=f'score "{label}"', completion=completion)
        value = raw.capitalize()
        if value not in ("Accept", "Reject"):
            return ParseFailure(missing=f'score "{label}" (unrecognized value {raw!r})',
                                completion=completion)
        verdict_kwargs[field_name] = value

    return MhqaDraft(
        find_target_q=texts["find_target_q"], find_target_a=texts["find_target_a"],
        interdoc_q=texts["interdoc_q"], interdoc_a=texts["interdoc_a"],
        merged_q=texts["merged_q"], merged_a=texts["merged_a"],
        verdict=ValidationVerdict(**verdict_kwargs))


_IDENTIFIED_TITLE_RE = re.compile(r"identified target paper:\s*'(.*)'", re.IGNORECASE | re.DOTALL)


def identified_title(find_target_answer: str) -> str | None:
    """Extract the quoted title span from a Find Target Paper answer."""
    m = _IDENTIFIED_TITLE_RE.search(find_target_answer)
    return m.group(1).strip() if m else None


def finalize_item(draft: MhqaDraft, candidate: RelationCandidate, cluster: PaperCluster,
                  rqa: RetrievalQa, target_title: str | None = None) -> MhqaItem | Rejected:
    """Emit a dataset item when the overall decision is Accept; otherwise
    return the rejection with its failing criteria for audit.

    When ``target_title`` is given, the Find Target answer must name it in the
    quoted-span format (case-insensitive); a mismatch rejects the draft under
    the pseudo-criterion ``target_identification``.
    """
    if cluster.target_doc_id != candidate.target_doc_id or rqa.target_doc_id != cluster.target_doc_id:
        raise ValueError("candidate, cluster, and retrieval QA must share one target document")

    criteria = list(draft.verdict.failing_criteria())
    if target_title is not None:
        span = identified_title(draft.find_target_a)
        if span is None or span.strip().lower() != target_title.strip().lower():
            criteria.append("target_identification")

    if draft.verdict.decision == "Accept" and "target_identification" not in criteria:
        return MhqaItem(
            item_id=make_item_id(candidate),
            retrieval_question=draft.find_target_q,
            retrieval_answer=draft.find_target_a,
            interdoc_question=draft.interdoc_q,
            interdoc_answer=draft.interdoc_a,
            combined_question=draft.merged_q,
            combined_answer=draft.merged_a,
            source_doc_id=candidate.source_doc_id,
            target_doc_id=candidate.target_doc_id,
            cluster_id=cluster.cluster_id,
            origin=candidate.origin)

    if draft.verdict.decision == "Reject" and not criteria:
        criteria.append("decision")
    return Rejected(draft=draft, criteria=tuple(criteria))


def rejection_audit(rejections: Sequence[Rejected]) -> dict[str, int]:
    """Rejection counts per failing criterion (a rejection can count under
    several criteria)."""
    counts: dict[str, int] = {}
    for rejection in rejections:
        for criterion in rejection.criteria:
            counts[criterion] = counts.get(criterion, 0) + 1
    return dict(sorted(counts.items()))


def split_dataset(items: Sequence[MhqaItem], test_size: int, seed: int,
                  ) -> tuple[list[MhqaItem], list[MhqaItem]]:
    """Seeded uniform split into (dev, test); both halves sorted by item_id."""
    if test_size < 0:
        raise ValueError("test_size must be >= 0")
    if test_size > len(items):
        raise ValueError(f"test_size {test_size} exceeds item count {len(items)}")
    ordered = sorted(items, key=lambda i: i.item_id)
    chosen = set(random.Random(seed).sample(range(len(ordered)), test_size))
    dev = [item for i, item in enumerate(ordered) if i not in chosen]
    test = [item for i, item in enumerate(ordered) if i in chosen]
    return dev, test


def split_statistics(items: Sequence[MhqaItem], unit: str = "tokens") -> dict:
    """Per-split question/answer length statistics."""
    if not items:
        return {"count": 0, "length_unit": unit,
                "avg_retrieval_q_length": None, "avg_interdoc_q_length": None,
                "avg_combined_q_length": None, "avg_interdoc_a_length": None,
                "avg_combined_a_length": None}

    def mean(values):
        return sum(values) / len(values)

    return {
        "count": len(items),
        "length_unit": unit,
        "avg_retrieval_q_length": mean([text_length(i.retrieval_question, unit) for i in items]),
        "avg_interdoc_q_length": mean([text_length(i.interdoc_question, unit) for i in items]),
        "avg_combined_q_length": mean([text_length(i.combined_question, unit) for i in items]),
        "avg_interdoc_a_length": mean([text_length(i.interdoc_answer, unit) for i in items]),
        "avg_combined_a_length": mean([text_length(i.combined_answer, unit) for i in items]),
    }
