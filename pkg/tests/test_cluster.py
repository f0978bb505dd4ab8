from __future__ import annotations

import pytest

from mhqagen.cluster import (
    PaperCluster,
    build_cluster,
    citation_cluster,
    derive_seed,
    make_cluster_id,
    select_retrieval_qa,
)
from mhqagen.providers import cosine

from conftest import make_corpus, make_document, make_triplet


def _keyword_corpus(n_overlap: int, n_filler: int = 40):
    """Source plus target, ``n_overlap`` keyword-overlap docs, and fillers with
    disjoint keywords."""
    source = make_document("SRC", keywords=["alpha", "beta", "gamma"])
    target = make_document("TGT", keywords=["alpha"])
    overlap = [make_document(f"K{i:03d}",
                             keywords=["alpha", "beta"] if i % 2 else ["alpha"])
               for i in range(n_overlap)]
    filler = [make_document(f"F{i:03d}", keywords=["zeta"]) for i in range(n_filler)]
    corpus = make_corpus(source, target, *overlap, *filler)
    return source, target, overlap, corpus


class TestBuildCluster:
    def test_forty_candidates_capped_at_29(self):
        source, target, overlap, corpus = _keyword_corpus(40)
        cluster = build_cluster(source, target, overlap + [target], corpus,
                                rng_seed=1, size=30)
        assert len(cluster.member_doc_ids) == 30
        assert cluster.target_doc_id in cluster.member_doc_ids
        assert source.doc_id not in cluster.member_doc_ids
        # all 29 distractors come from the overlap list; no padding needed
        assert all(m == "TGT" or m.startswith("K") for m in cluster.member_doc_ids)

    def test_overlap_count_ranks_before_id(self):
        source, target, overlap, corpus = _keyword_corpus(40)
        cluster = build_cluster(source, target, overlap, corpus, rng_seed=1, size=30)
        distractors = [m for m in cluster.member_doc_ids if m != "TGT"]
        # two-keyword overlaps (odd indices) must all precede one-keyword ones
        two_kw = [m for m in distractors if int(m[1:]) % 2 == 1]
        assert distractors[:len(two_kw)] == sorted(two_kw)

    def test_ten_candidates_padded_to_thirty(self):
        source, target, overlap, corpus = _keyword_corpus(10)
        cluster = build_cluster(source, target, overlap, corpus, rng_seed=2, size=30)
        members = cluster.member_doc_ids
        assert len(members) == 30
        assert len(set(members)) == 30  # set-uniqueness oracle
        assert sum(1 for m in members if m.startswith("K")) == 10
        assert sum(1 for m in members if m.startswith("F")) == 19
        assert "TGT" in members and "SRC" not in members

    def test_fixed_seed_reproduces_members(self):
        source, target, overlap, corpus = _keyword_corpus(5)
        a = build_cluster(source, target, overlap, corpus, rng_seed=42, size=30)
        b = build_cluster(source, target, overlap, corpus, rng_seed=42, size=30)
        c = build_cluster(source, target, overlap, corpus, rng_seed=43, size=30)
        assert a.member_doc_ids == b.member_doc_ids
        assert a.member_doc_ids != c.member_doc_ids

    def test_corpus_too_small(self):
        source, target, overlap, _ = _keyword_corpus(2, n_filler=3)
        small = make_corpus(source, target, *overlap)
        with pytest.raises(ValueError, match="too small"):
            build_cluster(source, target, overlap, small, rng_seed=1, size=30)

    def test_padding_excludes_unranked_candidates(self):
        # candidates beyond the cap and zero-overlap list entries never pad
        source, target, overlap, corpus = _keyword_corpus(10)
        cluster = build_cluster(source, target, overlap, corpus, rng_seed=3, size=30)
        pads = [m for m in cluster.member_doc_ids if m.startswith("F")]
        assert len(pads) == 19


class TestClusterInvariants:
    def test_duplicate_members_rejected(self):
        with pytest.raises(ValueError, match="unique"):
            PaperCluster(cluster_id="c1", source_doc_id="S", target_doc_id="T",
                         member_doc_ids=("T", "A", "A"), origin="keyword")

    def test_target_membership_required(self):
        with pytest.raises(ValueError, match="target"):
            PaperCluster(cluster_id="c1", source_doc_id="S", target_doc_id="T",
                         member_doc_ids=("A", "B"), origin="keyword")

    def test_source_exclusion_required(self):
        with pytest.raises(ValueError, match="source"):
            PaperCluster(cluster_id="c1", source_doc_id="S", target_doc_id="T",
                         member_doc_ids=("T", "S"), origin="keyword")


class TestCitationCluster:
    def test_pool_is_resolved_citations(self):
        docs = {f"C{i}": make_document(f"C{i}") for i in range(12)}
        source = make_document("SRC", references=[f"C{i}" for i in range(12)])
        corpus = make_corpus(source, *docs.values())
        cluster = citation_cluster(source, docs["C3"], corpus)
        assert len(cluster.member_doc_ids) == 12
        assert cluster.origin == "citation_pool"
        assert set(cluster.member_doc_ids) == set(docs)

    def test_external_target_rejected(self):
        source = make_document("SRC", references=["C1", "MISSING"])
        target = make_document("TGT")
        corpus = make_corpus(source, make_document("C1"), target)
        with pytest.raises(ValueError, match="not among"):
            citation_cluster(source, target, corpus)

    def test_fully_in_corpus_pool_equals_citation_list(self):
        cited = [make_document(f"C{i}") for i in range(4)]
        source = make_document("SRC", references=[d.doc_id for d in cited])
        corpus = make_corpus(source, *cited)
        cluster = citation_cluster(source, cited[0], corpus)
        assert list(cluster.member_doc_ids) == [d.doc_id for d in cited]


class TestSelectRetrievalQa:
    def test_two_paper_brute_force(self, embedder):
        # distinctiveness oracle: 1 - cos(target QA, distractor QA)
        target = make_document("T")
        cluster = PaperCluster(cluster_id="c1", source_doc_id="S", target_doc_id="T",
                               member_doc_ids=("T", "D"), origin="keyword")
        q1 = make_triplet("T", question="How fast was recovery?",
                          answer="Recovery took eight weeks.")
        q2 = make_triplet("T", question="Which cohort was enrolled in 2023?",
                          answer="A cohort of older adults was enrolled.")
        r1 = make_triplet("D", question="How fast was recovery overall?",
                          answer="Recovery took nine weeks.")
        index = {"T": [q1, q2], "D": [r1]}
        rqa = select_retrieval_qa(target, cluster, index, embedder)

        def qa_vec(t):
            return embedder.embed(f"{t.question} {t.answer}")

        d1 = 1 - cosine(qa_vec(q1), qa_vec(r1))
        d2 = 1 - cosine(qa_vec(q2), qa_vec(r1))
        expected = q2 if d2 > d1 else q1
        assert rqa.question == expected.question
        assert rqa.distinctiveness == pytest.approx(max(d1, d2), abs=1e-9)
        assert rqa.target_doc_id == "T"

    def test_single_target_qa_selected_regardless(self, embedder):
        target = make_document("T")
        cluster = PaperCluster(cluster_id="c1", source_doc_id="S", target_doc_id="T",
                               member_doc_ids=("T", "D"), origin="keyword")
        only = make_triplet("T", question="The only question?")
        index = {"T": [only], "D": [make_triplet("D", question="Another question?")]}
        rqa = select_retrieval_qa(target, cluster, index, embedder)
        assert rqa.question == "The only question?"

    def test_member_and_qa_order_invariance(self, embedder):
        target = make_document("T")
        members = ("T", "D1", "D2")
        index = {
            "T": [make_triplet("T", question=f"target q{i}?") for i in range(3)],
            "D1": [make_triplet("D1", question="d1 q?")],
            "D2": [make_triplet("D2", question="d2 q?")],
        }
        c1 = PaperCluster("c1", "S", "T", members, "keyword")
        c2 = PaperCluster("c2", "S", "T", tuple(reversed(members)), "keyword")
        shuffled = {"T": list(reversed(index["T"])), "D1": index["D1"], "D2": index["D2"]}
        a = select_retrieval_qa(target, c1, index, embedder)
        b = select_retrieval_qa(target, c2, shuffled, embedder)
        assert a.question == b.question
        assert a.distinctiveness == pytest.approx(b.distinctiveness, abs=1e-9)

    def test_duplicated_distractor_doubles_contribution(self, embedder):
        target = make_document("T")
        qas = [make_triplet("T", question="q one?", answer="Answer one."),
               make_triplet("T", question="q two?", answer="Answer two.")]
        r = make_triplet("D", question="distractor?", answer="Distractor answer.")
        single = select_retrieval_qa(
            target, PaperCluster("c1", "S", "T", ("T", "D"), "keyword"),
            {"T": qas, "D": [r]}, embedder)
        doubled = select_retrieval_qa(
            target, PaperCluster("c2", "S", "T", ("T", "D"), "keyword"),
            {"T": qas, "D": [r, r]}, embedder)
        assert doubled.distinctiveness == pytest.approx(2 * single.distinctiveness, abs=1e-9)
        assert doubled.question == single.question

    def test_target_without_qas_rejected(self, embedder):
        target = make_document("T")
        cluster = PaperCluster("c1", "S", "T", ("T",), "keyword")
        with pytest.raises(ValueError, match="no surviving"):
            select_retrieval_qa(target, cluster, {}, embedder)

    def test_selection_always_from_target(self, embedder):
        target = make_document("T")
        cluster = PaperCluster("c1", "S", "T", ("T", "D"), "keyword")
        index = {"T": [make_triplet("T", question="target q?")],
                 "D": [make_triplet("D", question="distractor q?")]}
        rqa = select_retrieval_qa(target, cluster, index, embedder)
        assert rqa.question in {t.question for t in index["T"]}


class TestSeeding:
    def test_derive_seed_stable_and_distinct(self):
        assert derive_seed(7, "c1") == derive_seed(7, "c1")
        assert derive_seed(7, "c1") != derive_seed(7, "c2")
        assert derive_seed(7, "c1") != derive_seed(8, "c1")

    def test_cluster_id_deterministic(self):
        assert make_cluster_id("A", "B", "keyword") == make_cluster_id("A", "B", "keyword")
        assert make_cluster_id("A", "B", "keyword") != make_cluster_id("A", "B", "citation_pool")
