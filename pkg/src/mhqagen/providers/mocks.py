"""Deterministic offline backends.

The embedding mock hashes character trigrams into a fixed-dimension vector
and L2-normalizes, so equal texts embed equally across processes and runs.
The generation mock recognizes the pipeline's own prompt families and emits
schema-valid completions derived only from (backend seed, prompt text), which
is what makes fully offline end-to-end runs reproducible byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from typing import Sequence

import numpy as np

from ..prompts import MHQA_SENTINEL
from ..textnorm import metric_tokens, split_sentences
from .base import TextGenParams


def _stable_digest(*parts: str) -> int:
    joined = "\x1f".join(parts)
    return int.from_bytes(hashlib.sha256(joined.encode("utf-8")).digest()[:8], "big")


class MockEmbeddingBackend:
    """Character n-gram hashing embedder."""

    def __init__(self, dimension: int = 256, ngram: int = 3):
        if dimension < 8:
            raise ValueError("dimension must be >= 8")
        self.backend_id = f"mock-embed-d{dimension}"
        self.dimension = dimension
        self._ngram = ngram

    def _vector(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension, dtype=np.float64)
        padded = f"\x02{text.lower()}\x03"
        n = self._ngram
        if len(padded) < n:
            grams = [padded]
        else:
            grams = [padded[i:i + n] for i in range(len(padded) - n + 1)]
        for gram in grams:
            h = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
            bucket = int.from_bytes(h[:4], "big") % self.dimension
            sign = 1.0 if h[4] % 2 == 0 else -1.0
            vec[bucket] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            # Pathological cancellation; fall back to a one-hot on the text hash.
            vec[_stable_digest(text) % self.dimension] = 1.0
            norm = 1.0
        return vec / norm

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        return np.stack([self._vector(t) for t in texts])


_PARAGRAPH_RE = re.compile(r"Paragraph:\n(.*)\Z", re.DOTALL)
_SOURCE_BLOCK_RE = re.compile(r"<source_paper>(.*?)</source_paper>", re.DOTALL)
_TARGET_BLOCK_RE = re.compile(r"<target_paper>(.*?)</target_paper>", re.DOTALL)
_TITLE_RE = re.compile(r"<title>(.*?)</title>", re.DOTALL)
_CORE_QA_RE = re.compile(r"<core_qa>(.*?)</core_qa>", re.DOTALL)
_UNIQUE_QA_RE = re.compile(r"<unique_qa>(.*?)</unique_qa>", re.DOTALL)
_QUESTION_RE = re.compile(r"<question>(.*?)</question>", re.DOTALL)
_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)
_JUDGE_GOLD_RE = re.compile(r"\nAnswer: (.*?)\nPrediction: ", re.DOTALL)
_JUDGE_PRED_RE = re.compile(r"\nPrediction: (.*?)\n\nDecide whether", re.DOTALL)
_FINAL_QUESTION_RE = re.compile(r"\nQuestion: (.*?)\nAnswer:", re.DOTALL)
_TARGET_TEXT_RE = re.compile(r"\nTarget paper:\n(.*?)\n\nQuestion: ", re.DOTALL)

_SHQA_QUESTION_FORMS = (
    "What does the study report about {lead}?",
    "Which finding is described concerning {lead}?",
    "According to the passage, what is stated about {lead}?",
)


def _lead_words(sentence: str, count: int = 5) -> str:
    words = [w.strip(".,;:()[]") for w in sentence.split()]
    words = [w for w in words if w]
    return " ".join(words[:count]).lower()


class MockGenerationBackend:
    """Seeded template generator covering all four prompt families."""

    def __init__(self, seed: int = 0, prereject_rate: float = 0.18,
                 reject_rate: float = 0.22):
        self.backend_id = f"mock-gen-s{seed}"
        self._seed = seed
        self._prereject_rate = prereject_rate
        self._reject_rate = reject_rate

    def _rng(self, prompt: str, params: TextGenParams) -> random.Random:
        return random.Random(_stable_digest(str(self._seed), str(params.seed), prompt))

    def complete(self, prompt: str, params: TextGenParams) -> str:
        if "<inputs>" in prompt:
            return self._mhqa(prompt, params)
        if "\nPrediction: " in prompt:
            return self._judge(prompt, params)
        if "Paragraph:\n" in prompt:
            return self._shqa(prompt, params)
        if "Source paper:" in prompt:
            return self._answer(prompt, params)
        # Unknown prompt family: echo something deterministic.
        rng = self._rng(prompt, params)
        return f"mock-completion-{rng.randrange(10**8)}"

    # -- single-hop triplets --------------------------------------------

    def _shqa(self, prompt: str, params: TextGenParams) -> str:
        rng = self._rng(prompt, params)
        m = _PARAGRAPH_RE.search(prompt)
        paragraph = m.group(1).strip() if m else ""
        sentences = split_sentences(paragraph)
        items = []
        for sentence in sentences:
            if len(sentence.split()) < 4:
                continue
            form = rng.choice(_SHQA_QUESTION_FORMS)
            items.append({
                "question": form.format(lead=_lead_words(sentence)),
                "evidence": sentence,
                "answer": sentence,
            })
        payload = json.dumps(items, ensure_ascii=False, indent=2)
        # Exercise the tolerant parser: sometimes fence, sometimes preface.
        style = rng.randrange(3)
        if style == 0:
            return f"```json\n{payload}\n```"
        if style == 1:
            return f"Here are the extracted QA triplets:\n{payload}"
        return payload

    # -- multi-hop reasoning chain ---------------------------------------

    def _mhqa(self, prompt: str, params: TextGenParams) -> str:
        rng = self._rng(prompt, params)
        if rng.random() < self._prereject_rate:
            return MHQA_SENTINEL

        def qa(block: str, pattern: re.Pattern) -> tuple[str, str]:
            inner = pattern.search(block)
            part = inner.group(1) if inner else block
            q = _QUESTION_RE.search(part)
            a = _ANSWER_RE.search(part)
            return (q.group(1).strip() if q else "", a.group(1).strip() if a else "")

        source_block = _SOURCE_BLOCK_RE.search(prompt)
        target_block = _TARGET_BLOCK_RE.search(prompt)
        source = source_block.group(1) if source_block else ""
        target = target_block.group(1) if target_block else ""
        target_title_m = _TITLE_RE.search(target)
        target_title = target_title_m.group(1).strip() if target_title_m else "Unknown"
        core_source_q, core_source_a = qa(source, _CORE_QA_RE)
        core_target_q, core_target_a = qa(target, _CORE_QA_RE)
        unique_q, unique_a = qa(target, _UNIQUE_QA_RE)

        find_q = rng.choice((
            f"Which paper addresses the following question: {unique_q}",
            f"Which paper reports on this: {unique_q}",
        ))
        find_a = f"Identified target paper: '{target_title}'."
        inter_q = rng.choice((
            f"Considering the paper identified above and the source study, how do these relate: "
            f"{core_source_q} and {core_target_q}",
            f"Taking both studies together, what links the following findings: "
            f"{core_source_q} and {core_target_q}",
        ))
        inter_a = f"{core_source_a} In the identified paper, {core_target_a}"
        merged_q = f"First identify the paper addressing '{unique_q}', then answer: {inter_q}"
        merged_a = inter_a

        rejected = rng.random() < self._reject_rate
        relational = "Reject" if rejected else "Accept"
        decision = "Reject" if rejected else "Accept"
        return (
            "<outputs>\n"
            '  <component type="Find Target Paper">\n'
            f"    <question>{find_q}</question>\n"
            f"    <answer>{find_a}</answer>\n"
            "  </component>\n\n"
            '  <component type="Generate Inter-document QA">\n'
            f"    <question>{inter_q}</question>\n"
            f"    <answer>{inter_a}</answer>\n"
            "  </component>\n\n"
            '  <component type="Merge Complete QA">\n'
            f"    <question>{merged_q}</question>\n"
            f"    <answer>{merged_a}</answer>\n"
            "  </component>\n\n"
            '  <component type="QA Validation">\n'
            '    <score type="Fluency">Accept</score>\n'
            '    <score type="Completeness">Accept</score>\n'
            '    <score type="Cross-reference Necessity">Accept</score>\n'
            f'    <score type="Relational Appropriateness">{relational}</score>\n'
            f'    <score type="Decision">{decision}</score>\n'
            "  </component>\n"
            "</outputs>"
        )

    # -- judging -----------------------------------------------------------

    def _judge(self, prompt: str, params: TextGenParams) -> str:
        rng = self._rng(prompt, params)
        gold_m = _JUDGE_GOLD_RE.search(prompt)
        pred_m = _JUDGE_PRED_RE.search(prompt)
        gold = metric_tokens(gold_m.group(1)) if gold_m else []
        pred = metric_tokens(pred_m.group(1)) if pred_m else []
        if gold == pred:
            score = "1"
        else:
            overlap = len(set(gold) & set(pred))
            denom = max(len(set(gold)), 1)
            score = "0.5" if overlap / denom >= 0.5 else "0"
        return rng.choice((score, f"Score: {score}", f"{score} based on the comparison."))

    # -- answering ---------------------------------------------------------

    def _answer(self, prompt: str, params: TextGenParams) -> str:
        # The answer must depend on the supplied target document so the oracle
        # and realistic settings can genuinely diverge under imperfect retrieval.
        rng = self._rng(prompt, params)
        m = _FINAL_QUESTION_RE.search(prompt)
        question = m.group(1).strip() if m else "the question"
        target_m = _TARGET_TEXT_RE.search(prompt)
        target_lead = _lead_words(target_m.group(1), 6) if target_m else "the target paper"
        lead = _lead_words(question, 8)
        return rng.choice((
            f"Drawing on the supplied paper ({target_lead}), the evidence bears on {lead}.",
            f"Together with the paper on {target_lead}, the findings address {lead}.",
        ))
