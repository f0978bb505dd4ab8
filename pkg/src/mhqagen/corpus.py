"""Corpus loading, eligibility filtering, and citation-context extraction.

The corpus arrives as a line-delimited JSON file, one document per line:

    {"doc_id": ..., "title": ..., "abstract": ..., "keywords": [...],
     "sections": [{"name": ..., "paragraphs": [...]}, ...],
     "references": [{"marker": "[1]", "target_doc_id": "P7"}, ...]}

Field names are normative. References whose ``target_doc_id`` is present and
points at another document in the same file are marked resolved after load;
everything else is treated as external.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .textnorm import keyword_set, split_sentences

log = logging.getLogger(__name__)


class CorpusError(Exception):
    """Malformed corpus input."""


class DuplicateDocIdError(CorpusError):
    pass


@dataclass(frozen=True)
class Section:
    name: str
    index: int
    paragraphs: tuple[str, ...]

    def text(self) -> str:
        return "\n".join(self.paragraphs)


@dataclass
class CitationRef:
    marker: str
    target_doc_id: str | None = None
    resolved: bool = False


@dataclass(frozen=True)
class CitationContext:
    """A sentence carrying exactly one citation marker, mapped to its target."""

    sentence: str
    source_doc_id: str
    marker: str
    target_doc_id: str


@dataclass
class Document:
    doc_id: str
    title: str
    abstract: str
    keywords: list[str]
    sections: list[Section]
    references: list[CitationRef]

    def keyword_set(self) -> set[str]:
        return keyword_set(self.keywords)

    def has_full_text(self) -> bool:
        return any(any(p.strip() for p in s.paragraphs) for s in self.sections)

    def full_text(self) -> str:
        parts = [self.title, self.abstract]
        for section in self.sections:
            parts.extend(section.paragraphs)
        return "\n".join(p for p in parts if p)

    def resolved_citations(self) -> list[CitationRef]:
        return [r for r in self.references if r.resolved]


class Corpus:
    """Ordered, immutable collection of documents with id lookup.

    ``resolve=False`` builds a subset view that keeps each reference's
    resolved flag as computed against the originally loaded corpus (a
    citation can be accessible in the collection while its target fails the
    eligibility filter).
    """

    def __init__(self, documents: Iterable[Document], resolve: bool = True):
        self._documents = list(documents)
        self._by_id: dict[str, Document] = {}
        for doc in self._documents:
            if doc.doc_id in self._by_id:
                raise DuplicateDocIdError(f"duplicate doc_id {doc.doc_id!r}")
            self._by_id[doc.doc_id] = doc
        if resolve:
            for doc in self._documents:
                for ref in doc.references:
                    ref.resolved = (ref.target_doc_id is not None
                                    and ref.target_doc_id in self._by_id)

    def __len__(self) -> int:
        return len(self._documents)

    def __iter__(self) -> Iterator[Document]:
        return iter(self._documents)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._by_id

    def get(self, doc_id: str) -> Document:
        return self._by_id[doc_id]

    @property
    def doc_ids(self) -> list[str]:
        return [d.doc_id for d in self._documents]


def _require(record: dict, key: str, kind, line_no: int):
    if key not in record:
        raise CorpusError(f"line {line_no}: missing field {key!r}")
    value = record[key]
    if not isinstance(value, kind):
        raise CorpusError(f"line {line_no}: field {key!r} must be {kind.__name__}")
    return value


def _parse_document(record: dict, line_no: int) -> Document:
    doc_id = _require(record, "doc_id", str, line_no)
    if not doc_id:
        raise CorpusError(f"line {line_no}: empty doc_id")
    title = _require(record, "title", str, line_no)
    abstract = _require(record, "abstract", str, line_no)
    keywords = _require(record, "keywords", list, line_no)
    if not all(isinstance(k, str) for k in keywords):
        raise CorpusError(f"line {line_no}: keywords must be strings")

    sections = []
    for i, raw in enumerate(_require(record, "sections", list, line_no)):
        if not isinstance(raw, dict):
            raise CorpusError(f"line {line_no}: sections[{i}] must be an object")
        name = raw.get("name")
        paragraphs = raw.get("paragraphs")
        if not isinstance(name, str) or not name:
            raise CorpusError(f"line {line_no}: sections[{i}] needs a non-empty name")
        if not isinstance(paragraphs, list) or not all(isinstance(p, str) for p in paragraphs):
            raise CorpusError(f"line {line_no}: sections[{i}].paragraphs must be a list of strings")
        sections.append(Section(name=name, index=i, paragraphs=tuple(paragraphs)))

    references = []
    for i, raw in enumerate(_require(record, "references", list, line_no)):
        if not isinstance(raw, dict) or not isinstance(raw.get("marker"), str):
            raise CorpusError(f"line {line_no}: references[{i}] needs a marker")
        target = raw.get("target_doc_id")
        if target is not None and not isinstance(target, str):
            raise CorpusError(f"line {line_no}: references[{i}].target_doc_id must be a string")
        references.append(CitationRef(marker=raw["marker"], target_doc_id=target))

    return Document(doc_id=doc_id, title=title, abstract=abstract,
                    keywords=list(keywords), sections=sections, references=references)


def load_corpus(path: str | Path) -> Corpus:
    """Load a line-delimited corpus file, preserving input order.

    Raises CorpusError (with the offending line number) on malformed records
    and DuplicateDocIdError on repeated ids.
    """
    path = Path(path)
    documents = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise CorpusError(f"line {line_no}: record must be an object")
            doc = _parse_document(record, line_no)
            if doc.doc_id in seen:
                raise DuplicateDocIdError(f"line {line_no}: duplicate doc_id {doc.doc_id!r}")
            seen.add(doc.doc_id)
            documents.append(doc)
    return Corpus(documents)


MODES = ("semantic", "citation")


@dataclass
class FilterReport:
    mode: str
    total: int
    kept: int
    rejected_by: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "total": self.total, "kept": self.kept,
                "rejected_by": dict(self.rejected_by)}


def filter_eligible(corpus: Corpus, mode: str) -> tuple[Corpus, FilterReport]:
    """Keep documents with full text, abstract, and reference metadata.

    Citation mode additionally requires at least three references resolving
    in-corpus; semantic mode requires non-empty keywords. A document failing
    several criteria is counted under each of them.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    kept = []
    rejected_by = {
        "missing_full_text": 0,
        "missing_abstract": 0,
        "missing_references": 0,
    }
    if mode == "citation":
        rejected_by["insufficient_in_corpus_citations"] = 0
    else:
        rejected_by["missing_keywords"] = 0

    for doc in corpus:
        failures = []
        if not doc.has_full_text():
            failures.append("missing_full_text")
        if not doc.abstract.strip():
            failures.append("missing_abstract")
        if not doc.references:
            failures.append("missing_references")
        if mode == "citation" and len(doc.resolved_citations()) < 3:
            failures.append("insufficient_in_corpus_citations")
        if mode == "semantic" and not doc.keyword_set():
            failures.append("missing_keywords")
        if failures:
            for name in failures:
                rejected_by[name] += 1
        else:
            kept.append(doc)

    report = FilterReport(mode=mode, total=len(corpus), kept=len(kept), rejected_by=rejected_by)
    log.info("eligibility filter (%s): kept %d of %d; rejections %s",
             mode, report.kept, report.total, report.rejected_by)
    # resolve=False: accessibility of citations is a property of the loaded
    # collection, not of the eligible subset.
    return Corpus(kept, resolve=False), report


# In-text citation grammar. The default recognizes bracketed integer lists and
# ranges ("[3]", "[3,4]", "[3-5]"); a parenthesized variant is provided for
# corpora using superscript-style "(3)" citations. Both are configurable
# because source conventions vary.
BRACKET_MARKER_PATTERN = r"\[\s*\d+(?:\s*[-–]\s*\d+)?(?:\s*,\s*\d+(?:\s*[-–]\s*\d+)?)*\s*\]"
PAREN_MARKER_PATTERN = r"\(\s*\d+(?:\s*[-–]\s*\d+)?(?:\s*,\s*\d+(?:\s*[-–]\s*\d+)?)*\s*\)"

_RANGE_SPLIT_RE = re.compile(r"\s*[-–]\s*")
_MAX_RANGE_SPAN = 200


class CitationGrammar:
    """Finds in-text citation markers and expands them to reference numbers."""

    def __init__(self, pattern: str = BRACKET_MARKER_PATTERN):
        self._re = re.compile(pattern)

    def scan(self, sentence: str) -> list[tuple[str, list[int]]]:
        """Return (marker_text, cited_numbers) for each marker group, in order.

        A malformed group (e.g. a reversed range) is reported as one
        unresolvable citation: (marker_text, []).
        """
        out = []
        for m in self._re.finditer(sentence):
            out.append((m.group(0), self._expand(m.group(0))))
        return out

    @staticmethod
    def _expand(marker: str) -> list[int]:
        numbers: list[int] = []
        body = marker.strip("[]() \t")
        for part in body.split(","):
            part = part.strip()
            if not part:
                continue
            bounds = _RANGE_SPLIT_RE.split(part)
            if len(bounds) == 2 and bounds[0].isdigit() and bounds[1].isdigit():
                lo, hi = int(bounds[0]), int(bounds[1])
                if lo > hi or hi - lo > _MAX_RANGE_SPAN:
                    return []
                numbers.extend(range(lo, hi + 1))
            elif part.isdigit():
                numbers.append(int(part))
            else:
                return []
        return numbers


def _reference_numbers(doc: Document) -> dict[int, CitationRef]:
    """Map the integer in each reference marker to its entry; first wins."""
    table: dict[int, CitationRef] = {}
    for ref in doc.references:
        m = re.search(r"\d+", ref.marker)
        if not m:
            continue
        number = int(m.group(0))
        if number in table:
            log.warning("doc %s: reference number %d appears twice; keeping the first",
                        doc.doc_id, number)
            continue
        table[number] = ref
    return table


def extract_citation_contexts(doc: Document, corpus: Corpus,
                              grammar: CitationGrammar | None = None) -> list[CitationContext]:
    """One context per sentence containing exactly one resolved citation.

    Sentences with zero or multiple citations are skipped, as are sentences
    whose single citation is external, unresolved, or unparseable.
    """
    grammar = grammar or CitationGrammar()
    numbers = _reference_numbers(doc)
    contexts = []
    for section in doc.sections:
        for paragraph in section.paragraphs:
            for sentence in split_sentences(paragraph):
                groups = grammar.scan(sentence)
                if not groups:
                    continue
                malformed = any(not nums for _, nums in groups)
                cited = [n for _, nums in groups for n in nums]
                if malformed:
                    log.warning("doc %s: unresolvable citation marker in %r; sentence skipped",
                                doc.doc_id, sentence[:60])
                    continue
                if len(cited) != 1:
                    continue
                marker_text = groups[0][0]
                ref = numbers.get(cited[0])
                if ref is None:
                    log.warning("doc %s: marker %s has no reference entry", doc.doc_id, marker_text)
                    continue
                if not ref.resolved or ref.target_doc_id not in corpus:
                    continue
                contexts.append(CitationContext(
                    sentence=sentence, source_doc_id=doc.doc_id,
                    marker=marker_text, target_doc_id=ref.target_doc_id))
    return contexts
