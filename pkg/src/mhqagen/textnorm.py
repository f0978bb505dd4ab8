"""Text normalization and sentence segmentation shared across the pipeline."""

from __future__ import annotations

import re
import unicodedata
from typing import Iterable

_DASHES = dict.fromkeys(map(ord, "‐‑‒–—―−"), "-")
_QUOTES = {
    0x2018: "'", 0x2019: "'", 0x201A: "'", 0x201B: "'",
    0x201C: '"', 0x201D: '"', 0x201E: '"', 0x00AB: '"', 0x00BB: '"',
}
_GLYPH_MAP = {**_DASHES, **_QUOTES}

_WS_RE = re.compile(r"\s+")
_NON_WORD_RE = re.compile(r"[^\w\s]+", re.UNICODE)


def normalize_match_text(text: str) -> str:
    """Normalize text for substring matching.

    NFKC compatibility normalization, dash/quote variants unified, whitespace
    runs collapsed to single spaces. Used by the evidence gate so that
    extraction noise (glyph variants, wrapped lines) does not defeat an
    otherwise verbatim quote.
    """
    text = unicodedata.normalize("NFKC", text)
    text = text.translate(_GLYPH_MAP)
    return _WS_RE.sub(" ", text).strip()


def normalize_metric_text(text: str) -> str:
    """Normalize text for answer-overlap metrics: lowercase, strip punctuation,
    collapse whitespace."""
    text = unicodedata.normalize("NFKC", text).lower()
    text = _NON_WORD_RE.sub(" ", text)
    return _WS_RE.sub(" ", text).strip()


def metric_tokens(text: str) -> list[str]:
    normalized = normalize_metric_text(text)
    return normalized.split() if normalized else []


def normalize_keyword(keyword: str) -> str:
    return _WS_RE.sub(" ", keyword.strip().lower())


def keyword_set(keywords: Iterable[str]) -> set[str]:
    out = set()
    for kw in keywords:
        norm = normalize_keyword(kw)
        if norm:
            out.add(norm)
    return out


def text_length(text: str, unit: str = "tokens") -> int:
    """Length of a text in the configured statistics unit."""
    if unit == "tokens":
        return len(text.split())
    if unit == "chars":
        return len(text)
    raise ValueError(f"unknown length unit {unit!r}")


# Periods inside these never end a sentence. The splitter is intentionally
# rule-based and corpus-independent so segmentation is reproducible.
_ABBREVIATIONS = (
    "et al.", "e.g.", "i.e.", "cf.", "vs.", "ca.", "etc.", "approx.",
    "Fig.", "Figs.", "Tab.", "Tabs.", "Eq.", "Eqs.", "Ref.", "Refs.",
    "No.", "Nos.", "Dr.", "Prof.", "St.", "U.S.", "U.K.",
)
_PROTECT = "\x00"
_BOUNDARY_RE = re.compile(r"(?<=[.!?])\s+(?=[A-Z0-9])")


def split_sentences(text: str) -> list[str]:
    """Split on terminal punctuation followed by whitespace and an uppercase
    letter or digit, with common abbreviations protected."""
    protected = text
    for abbr in _ABBREVIATIONS:
        if abbr in protected:
            protected = protected.replace(abbr, abbr.replace(".", _PROTECT))
    parts = _BOUNDARY_RE.split(protected)
    return [p.replace(_PROTECT, ".").strip() for p in parts if p.strip()]
