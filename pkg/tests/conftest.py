from __future__ import annotations

import json
from pathlib import Path

import pytest

from mhqagen.corpus import CitationRef, Corpus, Document, Section
from mhqagen.providers import (
    Embedder,
    MockEmbeddingBackend,
    MockGenerationBackend,
    TextGenerator,
    TextGenParams,
)
from mhqagen.shqa import QaTriplet

DATA_DIR = Path(__file__).parent / "data"
TOY_CORPUS = DATA_DIR / "toy_corpus.jsonl"
TOY_CONFIG = DATA_DIR / "toy_config.json"


def make_document(doc_id: str, title: str = "", abstract: str = "about things",
                  keywords=("kw",), sections=None, references=None) -> Document:
    if sections is None:
        sections = [Section(name="results", index=0,
                            paragraphs=(f"Finding one of {doc_id} is stated here. "
                                        f"Finding two of {doc_id} follows from data.",))]
    refs = []
    for i, target in enumerate(references or []):
        refs.append(CitationRef(marker=f"[{i + 1}]", target_doc_id=target))
    return Document(doc_id=doc_id, title=title or f"Paper {doc_id}", abstract=abstract,
                    keywords=list(keywords), sections=list(sections), references=refs)


def make_corpus(*docs: Document) -> Corpus:
    return Corpus(list(docs))


def make_triplet(doc_id: str = "P1", section: str = "results", question: str = "What is stated?",
                 answer: str = "The thing is stated.",
                 evidence: str = "The thing is stated.") -> QaTriplet:
    return QaTriplet(question=question, answer=answer, evidence=evidence,
                     doc_id=doc_id, section_name=section)


class ScriptedGenBackend:
    """Replays queued completions in order; repeats the last one when drained."""

    def __init__(self, completions, backend_id: str = "scripted"):
        self.backend_id = backend_id
        self._completions = list(completions)
        self.calls = []

    def complete(self, prompt: str, params: TextGenParams) -> str:
        self.calls.append(prompt)
        if len(self._completions) > 1:
            return self._completions.pop(0)
        return self._completions[0]


@pytest.fixture
def embedder() -> Embedder:
    return Embedder(MockEmbeddingBackend(dimension=64))


@pytest.fixture
def mock_gen() -> TextGenerator:
    return TextGenerator(MockGenerationBackend(seed=7))


def scripted_generator(*completions) -> TextGenerator:
    return TextGenerator(ScriptedGenBackend(completions))


def load_toy_config(output_dir: Path, **overrides):
    from mhqagen.pipeline import PipelineConfig

    raw = json.loads(TOY_CONFIG.read_text(encoding="utf-8"))
    raw["corpus_path"] = str(TOY_CORPUS)
    raw["output_dir"] = str(output_dir)
    raw.update(overrides)
    return PipelineConfig.from_dict(raw)


@pytest.fixture(scope="session")
def toy_runs(tmp_path_factory):
    """Two independent full pipeline runs on the toy corpus, with timings."""
    import time

    from mhqagen.pipeline import report, run_all

    runs = []
    for name in ("run_a", "run_b"):
        out = tmp_path_factory.mktemp(name)
        config = load_toy_config(out)
        started = time.perf_counter()
        manifests = run_all(config)
        report(config)
        elapsed = time.perf_counter() - started
        runs.append({"config": config, "manifests": {m.stage: m for m in manifests},
                     "elapsed": elapsed, "dir": out})
    return runs
