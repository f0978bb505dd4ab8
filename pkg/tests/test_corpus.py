from __future__ import annotations

import json

import pytest

from mhqagen.corpus import (
    CitationGrammar,
    CorpusError,
    DuplicateDocIdError,
    PAREN_MARKER_PATTERN,
    Section,
    extract_citation_contexts,
    filter_eligible,
    load_corpus,
)
from mhqagen.textnorm import split_sentences

from conftest import make_corpus, make_document


def _write_corpus(path, records):
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")


def _record(doc_id, **overrides):
    record = {
        "doc_id": doc_id,
        "title": f"Title {doc_id}",
        "abstract": "An abstract.",
        "keywords": ["alpha"],
        "sections": [{"name": "results", "paragraphs": ["One fact here."]}],
        "references": [{"marker": "[1]", "target_doc_id": "P1"}],
    }
    record.update(overrides)
    return record


class TestLoadCorpus:
    def test_three_valid_records(self, tmp_path):
        path = tmp_path / "c.jsonl"
        _write_corpus(path, [_record("P1"), _record("P2"), _record("P3")])
        corpus = load_corpus(path)
        assert len(corpus) == 3
        assert corpus.doc_ids == ["P1", "P2", "P3"]

    def test_empty_file(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text("")
        assert len(load_corpus(path)) == 0

    def test_duplicate_doc_id_names_offender(self, tmp_path):
        path = tmp_path / "c.jsonl"
        _write_corpus(path, [_record("P1"), _record("P1")])
        with pytest.raises(DuplicateDocIdError, match="P1"):
            load_corpus(path)

    def test_malformed_record_reports_line(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text(json.dumps(_record("P1")) + "\n{not json\n")
        with pytest.raises(CorpusError, match="line 2"):
            load_corpus(path)

    def test_missing_field_reports_line_and_field(self, tmp_path):
        path = tmp_path / "c.jsonl"
        record = _record("P1")
        del record["sections"]
        _write_corpus(path, [record])
        with pytest.raises(CorpusError, match="sections"):
            load_corpus(path)

    def test_reference_resolution(self, tmp_path):
        path = tmp_path / "c.jsonl"
        _write_corpus(path, [
            _record("P1", references=[{"marker": "[1]", "target_doc_id": "P2"},
                                       {"marker": "[2]", "target_doc_id": "GONE"},
                                       {"marker": "[3]"}]),
            _record("P2", references=[]),
        ])
        corpus = load_corpus(path)
        refs = corpus.get("P1").references
        assert [r.resolved for r in refs] == [True, False, False]


class TestFilterEligible:
    def _doc(self, doc_id, n_citations=3, **kwargs):
        corpus_ids = [f"T{i}" for i in range(n_citations)]
        return make_document(doc_id, references=corpus_ids, **kwargs)

    def _with_targets(self, *docs):
        ids = ["T0", "T1", "T2", "T3"]
        targets = [make_document(tid, keywords=["alpha"],
                                 references=[other for other in ids if other != tid])
                   for tid in ids]
        return make_corpus(*docs, *targets)

    def test_two_citations_excluded_in_citation_mode(self):
        corpus = self._with_targets(self._doc("P1", n_citations=2))
        kept, report = filter_eligible(corpus, "citation")
        assert "P1" not in kept
        assert report.rejected_by["insufficient_in_corpus_citations"] == 1

    def test_three_citations_retained_in_citation_mode(self):
        corpus = self._with_targets(self._doc("P1", n_citations=3))
        kept, _ = filter_eligible(corpus, "citation")
        assert "P1" in kept

    def test_empty_abstract_excluded_in_both_modes(self):
        for mode in ("semantic", "citation"):
            corpus = self._with_targets(self._doc("P1", abstract="  "))
            kept, report = filter_eligible(corpus, mode)
            assert "P1" not in kept
            assert report.rejected_by["missing_abstract"] == 1

    def test_missing_keywords_excluded_in_semantic_mode_only(self):
        corpus = self._with_targets(self._doc("P1", keywords=[]))
        kept_sem, _ = filter_eligible(corpus, "semantic")
        kept_cit, _ = filter_eligible(corpus, "citation")
        assert "P1" not in kept_sem
        assert "P1" in kept_cit

    def test_no_full_text_excluded(self):
        doc = self._doc("P1", sections=[Section("results", 0, ("", " "))])
        corpus = self._with_targets(doc)
        kept, report = filter_eligible(corpus, "semantic")
        assert "P1" not in kept
        assert report.rejected_by["missing_full_text"] == 1

    def test_idempotent(self):
        corpus = self._with_targets(self._doc("P1"), self._doc("P2", abstract=""))
        once, _ = filter_eligible(corpus, "semantic")
        twice, _ = filter_eligible(once, "semantic")
        assert once.doc_ids == twice.doc_ids

    def test_unknown_mode(self):
        with pytest.raises(ValueError, match="mode"):
            filter_eligible(make_corpus(), "both")


class TestSentenceSplitting:
    def test_abbreviations_protected(self):
        text = "Smith et al. reported gains. The effect held at 4.5 percent. See Fig. 2 for details."
        sentences = split_sentences(text)
        assert sentences == ["Smith et al. reported gains.",
                             "The effect held at 4.5 percent.",
                             "See Fig. 2 for details."]

    def test_boundary_needs_upper_or_digit(self):
        assert split_sentences("done. and more") == ["done. and more"]
        assert split_sentences("done. 42 more came.") == ["done.", "42 more came."]


class TestCitationGrammar:
    def test_single_and_list_and_range(self):
        g = CitationGrammar()
        assert g.scan("X improves Y [3].") == [("[3]", [3])]
        assert g.scan("As shown in [3, 4].") == [("[3, 4]", [3, 4])]
        assert g.scan("Ranges too [3-5].") == [("[3-5]", [3, 4, 5])]

    def test_reversed_range_is_unresolvable(self):
        g = CitationGrammar()
        assert g.scan("Bad [5-3].") == [("[5-3]", [])]

    def test_parenthesized_variant(self):
        g = CitationGrammar(PAREN_MARKER_PATTERN)
        assert g.scan("Seen before (7).") == [("(7)", [7])]


class TestCitationContexts:
    def _corpus(self):
        source = make_document(
            "P1",
            sections=[Section(name="results", index=0, paragraphs=(
                "X improves Y [1]. As shown in [1, 2], both methods work. "
                "Prior external work exists [3]. Unknown marker [9] appears here.",))],
            references=["P7", "P8", "EXTERNAL"])
        return make_corpus(source, make_document("P7"), make_document("P8"))

    def test_single_resolved_marker_emits_context(self):
        corpus = self._corpus()
        contexts = extract_citation_contexts(corpus.get("P1"), corpus)
        assert len(contexts) == 1
        ctx = contexts[0]
        assert ctx.target_doc_id == "P7"
        assert ctx.marker == "[1]"
        assert ctx.sentence == "X improves Y [1]."
        assert ctx.source_doc_id == "P1"

    def test_multi_marker_sentences_skipped(self):
        doc = make_document("P1", sections=[Section("results", 0, (
            "Both [1] and [2] apply here. Jointly shown in [1, 2].",))],
            references=["P7", "P8"])
        corpus = make_corpus(doc, make_document("P7"), make_document("P8"))
        assert extract_citation_contexts(doc, corpus) == []

    def test_external_single_marker_emits_nothing(self):
        doc = make_document("P1", sections=[Section("results", 0, (
            "Prior work exists [1].",))], references=["NOWHERE"])
        corpus = make_corpus(doc, make_document("P7"))
        assert extract_citation_contexts(doc, corpus) == []

    def test_targets_exist_and_are_referenced(self):
        corpus = self._corpus()
        doc = corpus.get("P1")
        for ctx in extract_citation_contexts(doc, corpus):
            assert ctx.target_doc_id in corpus
            assert any(r.target_doc_id == ctx.target_doc_id for r in doc.references)
