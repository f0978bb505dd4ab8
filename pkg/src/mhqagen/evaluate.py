"""Retrieval benchmarking and answer scoring.

Retrieval runs in three environments per item: the item's own paper cluster,
a size-matched random cluster, and the full corpus. Answering runs in two
settings: oracle (gold target supplied) and realistic (retriever's top-1
supplied). Answer quality is scored with bag-of-tokens F1, LCS-based
ROUGE-L, and a judge model on a 0/0.5/1 scale.
"""

from __future__ import annotations

import logging
import random
import re
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

from . import kernels
from .cluster import PaperCluster, derive_seed
from .corpus import Document
from .mhqa import MhqaItem
from .parallel import map_ordered
from .prompts import render_answer_prompt, render_judge_prompt
from .providers import Embedder, ProviderError, TextGenerator, TextGenParams
from .textnorm import metric_tokens

log = logging.getLogger(__name__)

ENV_PAPER_CLUSTER = "paper_cluster"
ENV_RANDOM_CLUSTER = "random_cluster"
ENV_FULL_CORPUS = "full_corpus"

SETTING_ORACLE = "oracle"
SETTING_REALISTIC = "realistic"


@dataclass(frozen=True)
class RetrievalEnvironment:
    kind: str
    candidate_doc_ids: tuple[str, ...]
    gold_doc_id: str

    def __post_init__(self):
        if self.kind not in (ENV_PAPER_CLUSTER, ENV_RANDOM_CLUSTER, ENV_FULL_CORPUS):
            raise ValueError(f"unknown environment kind {self.kind!r}")
        if self.gold_doc_id not in self.candidate_doc_ids:
            raise ValueError("gold document must be among the candidates")
        if len(set(self.candidate_doc_ids)) != len(self.candidate_doc_ids):
            raise ValueError("candidate documents must be unique")


Ranking = list[tuple[str, float]]


def candidate_representation(doc: Document, representation: str = "title_abstract") -> list[str]:
    """Text chunks standing in for a candidate document in the retrieval
    index. ``title_abstract`` yields one chunk; ``full_text`` yields the
    title+abstract chunk plus every paragraph (scored by max pooling)."""
    head = f"{doc.title} {doc.abstract}".strip()
    if representation == "title_abstract":
        return [head or doc.doc_id]
    if representation == "full_text":
        chunks = [head] if head else []
        for section in doc.sections:
            chunks.extend(p for p in section.paragraphs if p.strip())
        return chunks or [doc.doc_id]
    raise ValueError(f"unknown representation {representation!r}")


def rank_candidates(retrieval_question: str, env: RetrievalEnvironment,
                    doc_index: Mapping[str, Document], embedder: Embedder,
                    representation: str = "title_abstract") -> Ranking:
    """Rank every candidate by cosine(query, representation), best first.

    Ties break on doc_id so the ordering is total and candidate input order
    is irrelevant.
    """
    missing = [d for d in env.candidate_doc_ids if d not in doc_index]
    if missing:
        raise ValueError(f"candidates missing from the document index: {missing}")

    query_vec = embedder.embed(retrieval_question).reshape(1, -1)
    scored = []
    # One kernel call per candidate: a candidate's score must not depend on
    # which other candidates share the batch (BLAS blocking is layout
    # sensitive at the ULP level, which would break order invariance).
    for doc_id in env.candidate_doc_ids:
        chunks = candidate_representation(doc_index[doc_id], representation)
        vectors = embedder.embed_batch(chunks)
        sims = kernels.cosine_matrix(query_vec, vectors)[0]
        scored.append((doc_id, float(sims.max())))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored


def hit_at_k(ranking: Ranking, gold: str, k: int) -> int:
    if k < 1:
        raise ValueError("k must be >= 1")
    for position, (doc_id, _) in enumerate(ranking, start=1):
        if doc_id == gold:
            return 1 if position <= k else 0
    raise ValueError(f"gold document {gold!r} absent from ranking")


def reciprocal_rank(ranking: Ranking, gold: str, k: int) -> float:
    for position, (doc_id, _) in enumerate(ranking, start=1):
        if doc_id == gold:
            return 1.0 / position if position <= k else 0.0
    raise ValueError(f"gold document {gold!r} absent from ranking")


def mrr_at_k(rankings: Sequence[Ranking], golds: Sequence[str], k: int) -> float:
    if len(rankings) != len(golds):
        raise ValueError("rankings and golds must be aligned")
    if not rankings:
        raise ValueError("mrr over zero queries is undefined")
    return sum(reciprocal_rank(r, g, k) for r, g in zip(rankings, golds)) / len(rankings)


def token_f1(prediction: str, gold: str) -> float:
    """Bag-of-tokens F1 after metric normalization."""
    pred = metric_tokens(prediction)
    ref = metric_tokens(gold)
    if not pred and not ref:
        return 1.0
    if not pred or not ref:
        return 0.0
    overlap = sum((Counter(pred) & Counter(ref)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred)
    recall = overlap / len(ref)
    return 2 * precision * recall / (precision + recall)


def rouge_l(prediction: str, gold: str) -> float:
    """LCS F-measure (beta=1) over normalized token sequences."""
    pred = metric_tokens(prediction)
    ref = metric_tokens(gold)
    if not pred and not ref:
        return 1.0
    if not pred or not ref:
        return 0.0
    vocab: dict[str, int] = {}
    pred_ids = [vocab.setdefault(t, len(vocab)) for t in pred]
    ref_ids = [vocab.setdefault(t, len(vocab)) for t in ref]
    lcs = kernels.lcs_length(pred_ids, ref_ids)
    if lcs == 0:
        return 0.0
    precision = lcs / len(pred)
    recall = lcs / len(ref)
    return 2 * precision * recall / (precision + recall)


_JUDGE_SCORE_RE = re.compile(r"(?<![\w.])(0\.5|1(?:\.0+)?|0(?:\.0+)?)(?![\w.])")


def parse_judge_score(completion: str) -> float | None:
    """First standalone 0, 0.5, or 1 in the completion; None if absent."""
    m = _JUDGE_SCORE_RE.search(completion)
    return float(m.group(1)) if m else None


def llm_judge(question: str, gold: str, prediction: str, gen: TextGenerator,
              params: TextGenParams | None = None) -> float | None:
    """Score agreement between gold and prediction with a judge model.

    Returns None when the judge's completion carries no parseable score; the
    caller records such items as judge failures and excludes them from means.
    """
    completion = gen.generate(render_judge_prompt(question, gold, prediction), params)
    score = parse_judge_score(completion)
    if score is None:
        log.warning("unparseable judge completion: %r", completion[:80])
    return score


class EmbeddingRetriever:
    """Cosine retriever over candidate representations; used by both the
    retrieval benchmark and the realistic answering setting."""

    def __init__(self, doc_index: Mapping[str, Document], embedder: Embedder,
                 representation: str = "title_abstract"):
        self._doc_index = doc_index
        self._embedder = embedder
        self._representation = representation

    def rank(self, retrieval_question: str, env: RetrievalEnvironment) -> Ranking:
        return rank_candidates(retrieval_question, env, self._doc_index,
                               self._embedder, self._representation)

    def top1(self, retrieval_question: str, env: RetrievalEnvironment) -> str:
        return self.rank(retrieval_question, env)[0][0]


def make_environments(item: MhqaItem, cluster: PaperCluster, all_doc_ids: Sequence[str],
                      seed: int) -> dict[str, RetrievalEnvironment]:
    """The three benchmark environments for one item. The random cluster is
    size-matched to the paper cluster and seeded per item."""
    paper_env = RetrievalEnvironment(
        kind=ENV_PAPER_CLUSTER,
        candidate_doc_ids=tuple(cluster.member_doc_ids),
        gold_doc_id=item.target_doc_id)

    pool = sorted(set(all_doc_ids) - {item.target_doc_id})
    need = len(cluster.member_doc_ids) - 1
    if need > len(pool):
        raise ValueError(
            f"corpus too small for a size-matched random cluster ({need} needed)")
    rng = random.Random(derive_seed(seed, item.item_id, ENV_RANDOM_CLUSTER))
    sampled = rng.sample(pool, need)
    random_env = RetrievalEnvironment(
        kind=ENV_RANDOM_CLUSTER,
        candidate_doc_ids=tuple(sorted([item.target_doc_id, *sampled])),
        gold_doc_id=item.target_doc_id)

    full_env = RetrievalEnvironment(
        kind=ENV_FULL_CORPUS,
        candidate_doc_ids=tuple(sorted(set(all_doc_ids))),
        gold_doc_id=item.target_doc_id)
    return {ENV_PAPER_CLUSTER: paper_env, ENV_RANDOM_CLUSTER: random_env,
            ENV_FULL_CORPUS: full_env}


@dataclass
class QaScores:
    """Aggregate answer-quality scores; means are None when nothing was
    scorable."""

    accuracy: float | None
    token_f1: float | None
    rouge_l: float | None
    item_count: int
    scored_count: int
    judge_failures: int

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "token_f1": self.token_f1,
                "rouge_l": self.rouge_l, "item_count": self.item_count,
                "scored_count": self.scored_count, "judge_failures": self.judge_failures}


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def run_qa_setting(items: Sequence[MhqaItem], setting: str, retriever,
                   answerer: TextGenerator, judge: TextGenerator,
                   doc_index: Mapping[str, Document],
                   clusters: Mapping[str, PaperCluster],
                   params: TextGenParams | None = None, workers: int = 1,
                   ) -> tuple[QaScores, list[dict]]:
    """Answer every item under one setting and score all three metrics.

    Oracle supplies the gold target document; realistic supplies the
    retriever's top-1 from the item's paper-cluster environment. Provider
    failures are recorded per item and never abort the run. Items are scored
    in parallel when ``workers`` > 1; aggregation always folds in item input
    order, so the worker count never changes the result.
    """
    if setting not in (SETTING_ORACLE, SETTING_REALISTIC):
        raise ValueError(f"unknown setting {setting!r}")

    def score_item(item: MhqaItem) -> dict:
        row: dict = {"item_id": item.item_id, "setting": setting}
        try:
            if setting == SETTING_ORACLE:
                supplied = item.target_doc_id
            else:
                cluster = clusters[item.cluster_id]
                env = RetrievalEnvironment(
                    kind=ENV_PAPER_CLUSTER,
                    candidate_doc_ids=tuple(cluster.member_doc_ids),
                    gold_doc_id=item.target_doc_id)
                supplied = retriever.top1(item.retrieval_question, env)
            row["supplied_doc_id"] = supplied

            prompt = render_answer_prompt(
                source_text=doc_index[item.source_doc_id].full_text(),
                target_text=doc_index[supplied].full_text(),
                question=item.combined_question)
            prediction = answerer.generate(prompt, params)
            row["prediction"] = prediction
            row["token_f1"] = token_f1(prediction, item.combined_answer)
            row["rouge_l"] = rouge_l(prediction, item.combined_answer)
            row["accuracy"] = llm_judge(item.combined_question, item.combined_answer,
                                        prediction, judge)
        except ProviderError as exc:
            log.warning("item %s failed under %s: %s", item.item_id, setting, exc)
            row["error"] = str(exc)
        return row

    rows = list(map_ordered(score_item, items, workers))

    accuracies = [r["accuracy"] for r in rows if r.get("accuracy") is not None]
    f1s = [r["token_f1"] for r in rows if "token_f1" in r]
    rouges = [r["rouge_l"] for r in rows if "rouge_l" in r]
    judge_failures = sum(1 for r in rows if "error" not in r and r.get("accuracy") is None)
    scores = QaScores(
        accuracy=_mean(accuracies), token_f1=_mean(f1s), rouge_l=_mean(rouges),
        item_count=len(items), scored_count=len(f1s), judge_failures=judge_failures)
    return scores, rows
