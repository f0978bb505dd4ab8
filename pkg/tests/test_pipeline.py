from __future__ import annotations

import json

import pytest

from mhqagen.pipeline import (
    PipelineConfig,
    StageError,
    load_manifest,
    manifest_valid,
    report,
    run_all,
    run_stage,
)

from conftest import TOY_CORPUS, load_toy_config


class TestConfig:
    def test_unknown_keys_rejected(self):
        with pytest.raises(StageError, match="unknown config keys"):
            PipelineConfig.from_dict({"corpus_path": "x", "output_dir": "y", "bogus": 1})

    def test_unknown_provider_keys_rejected(self):
        with pytest.raises(StageError, match="providers"):
            PipelineConfig.from_dict({"corpus_path": "x", "output_dir": "y",
                                      "providers": {"nope": 1}})

    def test_range_validation(self):
        with pytest.raises(StageError, match="filter_fraction"):
            PipelineConfig.from_dict({"corpus_path": "x", "output_dir": "y",
                                      "filter_fraction": 1.0})
        with pytest.raises(StageError, match="mode"):
            PipelineConfig.from_dict({"corpus_path": "x", "output_dir": "y",
                                      "mode": "hybrid"})

    def test_seed_and_mock_overrides(self, tmp_path):
        cfg_path = tmp_path / "c.json"
        cfg_path.write_text(json.dumps({
            "corpus_path": str(TOY_CORPUS), "output_dir": str(tmp_path / "out"),
            "seed": 1,
            "providers": {"generation_backend": "remote", "base_url": "https://x"},
        }))
        config = PipelineConfig.from_file(cfg_path, seed=99, mock_providers=True)
        assert config.seed == 99
        assert config.providers.generation_backend == "mock"

    def test_digest_ignores_paths(self, tmp_path):
        a = load_toy_config(tmp_path / "a")
        b = load_toy_config(tmp_path / "b")
        assert a.config_digest() == b.config_digest()
        b.tau = 0.5
        assert a.config_digest() != b.config_digest()

    def test_stage_digest_granularity(self, tmp_path):
        a = load_toy_config(tmp_path / "a")
        b = load_toy_config(tmp_path / "a", tau=0.5)
        assert a.stage_config_digest("ingest") == b.stage_config_digest("ingest")
        assert a.stage_config_digest("shqa") == b.stage_config_digest("shqa")
        assert a.stage_config_digest("relate") != b.stage_config_digest("relate")


class TestStageMachinery:
    def test_upstream_required(self, tmp_path):
        config = load_toy_config(tmp_path / "out")
        with pytest.raises(StageError, match="upstream"):
            run_stage("shqa", config)

    def test_rerun_is_noop_and_manifest_unchanged(self, tmp_path):
        config = load_toy_config(tmp_path / "out")
        first = run_stage("ingest", config)
        manifest_file = tmp_path / "out" / "manifests" / "ingest.json"
        before = manifest_file.read_bytes()
        second = run_stage("ingest", config)
        assert second.skipped
        assert manifest_file.read_bytes() == before
        assert second.counts == first.counts

    def test_force_recomputes(self, tmp_path):
        config = load_toy_config(tmp_path / "out")
        run_stage("ingest", config)
        assert not run_stage("ingest", config, force=True).skipped

    def test_tau_change_invalidates_relate_not_ingest(self, tmp_path):
        config = load_toy_config(tmp_path / "out")
        for stage in ("ingest", "shqa", "relate"):
            run_stage(stage, config)
        changed = load_toy_config(tmp_path / "out", tau=0.6)
        assert manifest_valid(changed, "ingest")
        assert manifest_valid(changed, "shqa")
        assert not manifest_valid(changed, "relate")
        # and rerunning relate under the new tau revalidates it
        run_stage("relate", changed)
        assert manifest_valid(changed, "relate")

    def test_corpus_change_invalidates_ingest(self, tmp_path):
        corpus_copy = tmp_path / "corpus.jsonl"
        corpus_copy.write_text(TOY_CORPUS.read_text(encoding="utf-8"), encoding="utf-8")
        config = load_toy_config(tmp_path / "out", corpus_path=str(corpus_copy))
        run_stage("ingest", config)
        assert manifest_valid(config, "ingest")
        with corpus_copy.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps({
                "doc_id": "NEW", "title": "t", "abstract": "a", "keywords": ["k"],
                "sections": [{"name": "s", "paragraphs": ["A sentence of words here."]}],
                "references": [],
            }) + "\n")
        assert not manifest_valid(config, "ingest")

    def test_lock_conflict(self, tmp_path):
        config = load_toy_config(tmp_path / "out")
        (tmp_path / "out").mkdir()
        (tmp_path / "out" / ".lock").write_text("123")
        with pytest.raises(StageError, match="locked"):
            run_stage("ingest", config)

    def test_unknown_stage(self, tmp_path):
        with pytest.raises(StageError, match="unknown stage"):
            run_stage("compile", load_toy_config(tmp_path / "out"))

    def test_missing_corpus(self, tmp_path):
        config = load_toy_config(tmp_path / "out", corpus_path=str(tmp_path / "nope.jsonl"))
        with pytest.raises(StageError, match="corpus"):
            run_stage("ingest", config)


class TestArtifacts:
    def test_shqa_interface_fields(self, toy_runs):
        config = toy_runs[0]["config"]
        rows = [json.loads(line) for line in
                config.out("shqa.jsonl").read_text(encoding="utf-8").splitlines()]
        assert rows
        assert list(rows[0]) == ["doc_id", "section_name", "question", "answer",
                                 "evidence", "gap"]

    def test_cluster_interface_fields(self, toy_runs):
        config = toy_runs[0]["config"]
        rows = [json.loads(line) for line in
                config.out("clusters.jsonl").read_text(encoding="utf-8").splitlines()]
        assert rows
        for row in rows:
            assert len(row["member_doc_ids"]) == config.cluster_size
            assert row["target_doc_id"] in row["member_doc_ids"]
            assert row["source_doc_id"] not in row["member_doc_ids"]
            assert row["retrieval_question"] and row["retrieval_answer"]

    def test_items_carry_digests_and_cluster_refs(self, toy_runs):
        config = toy_runs[0]["config"]
        clusters = {json.loads(line)["cluster_id"] for line in
                    config.out("clusters.jsonl").read_text(encoding="utf-8").splitlines()}
        rows = [json.loads(line) for line in
                config.out("mhqa_items.jsonl").read_text(encoding="utf-8").splitlines()]
        assert rows
        for row in rows:
            assert row["cluster_id"] in clusters
            assert row["prompt_digest"] and row["config_digest"]
            assert row["combined_answer"].strip()

    def test_split_files_partition_items(self, toy_runs):
        config = toy_runs[0]["config"]

        def ids(name):
            return [json.loads(line)["item_id"] for line in
                    config.out(name).read_text(encoding="utf-8").splitlines()]

        all_ids = ids("mhqa_items.jsonl")
        dev, test = ids("dev.jsonl"), ids("test.jsonl")
        assert sorted(dev + test) == sorted(all_ids)
        assert not set(dev) & set(test)
        assert len(test) == config.test_size

    def test_retrieval_answer_title_resolves_to_target(self, toy_runs):
        from mhqagen.corpus import load_corpus
        from mhqagen.mhqa import identified_title

        config = toy_runs[0]["config"]
        corpus = load_corpus(config.corpus_path)
        rows = [json.loads(line) for line in
                config.out("mhqa_items.jsonl").read_text(encoding="utf-8").splitlines()]
        for row in rows:
            title = identified_title(row["retrieval_answer"])
            assert title is not None
            assert title.lower() == corpus.get(row["target_doc_id"]).title.lower()

    def test_every_stage_satisfies_count_conservation(self, toy_runs):
        for manifest in toy_runs[0]["manifests"].values():
            c = manifest.counts
            assert c["in"] == c["kept"] + c["dropped"] + c["failed"], manifest.stage

    def test_report_structure(self, toy_runs):
        config = toy_runs[0]["config"]
        text = report(config)
        assert "stage counts" in text
        assert "conservation:" in text and "(holds)" in text
        assert "single-hop QA statistics" in text
        assert "paper_cluster" in text and "random_cluster" in text and "full_corpus" in text
        assert "oracle" in text and "realistic" in text
        assert config.out("report.txt").read_text(encoding="utf-8") == text

    def test_report_requires_a_manifest(self, tmp_path):
        config = load_toy_config(tmp_path / "empty")
        with pytest.raises(StageError, match="manifest"):
            report(config)


class TestWorkerParallelism:
    def test_worker_count_is_output_invariant(self, tmp_path, toy_runs):
        # workers is execution plumbing: byte-identical artifacts, same digests
        parallel = load_toy_config(tmp_path / "par", workers=4)
        run_all(parallel)
        serial = toy_runs[0]["config"]
        assert parallel.config_digest() == serial.config_digest()
        for name in ("shqa.jsonl", "relations.jsonl", "mhqa_items.jsonl",
                     "eval_retrieval_summary.json", "eval_qa_summary.json"):
            assert parallel.out(name).read_bytes() == serial.out(name).read_bytes(), name

    def test_workers_validated(self, tmp_path):
        with pytest.raises(StageError, match="workers"):
            load_toy_config(tmp_path / "x", workers=0)


class TestSplitDefault:
    def test_null_test_size_takes_tenth(self, tmp_path):
        config = load_toy_config(tmp_path / "out", test_size=None)
        manifests = {m.stage: m for m in run_all(config)}
        detail = manifests["split"].counts["detail"]
        total = detail["dev"] + detail["test"]
        assert detail["test"] == total // 10


class TestCitationMode:
    def test_citation_run_end_to_end(self, tmp_path):
        config = load_toy_config(tmp_path / "cit", mode="citation", test_size=2)
        manifests = {m.stage: m for m in run_all(config)}
        detail = manifests["mhqa"].counts["detail"]
        assert detail["candidates_in"] == (detail["pre_rejected"] + detail["parse_failures"]
                                           + detail["validation_rejected"] + detail["items_out"])
        rows = [json.loads(line) for line in
                config.out("relations.jsonl").read_text(encoding="utf-8").splitlines()]
        assert rows
        assert all(r["origin"] == "citation" for r in rows)
        assert all(r["citation_sentence"] for r in rows)
        # citation-pool clusters follow the cited pool, not the fixed size
        cluster_rows = [json.loads(line) for line in
                        config.out("clusters.jsonl").read_text(encoding="utf-8").splitlines()]
        assert all(len(r["member_doc_ids"]) <= 4 for r in cluster_rows)
