"""Versioned prompt assets and renderers.

Templates are module constants so their digests can be pinned into dataset
metadata. Placeholders use ``{name}`` and are filled by literal replacement,
never ``str.format``, so user text containing braces cannot break rendering.
"""

from __future__ import annotations

import hashlib


def _fill(template: str, values: dict[str, str]) -> str:
    out = template
    for name, value in values.items():
        out = out.replace("{" + name + "}", value)
    return out


def template_digest(template: str) -> str:
    return hashlib.sha256(template.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Single-hop QA extraction

SHQA_PROMPT_VERSION = "shqa-v1"

SHQA_PROMPT_TEMPLATE = """You are an expert reading-comprehension assistant for scientific text.
Read the paragraph below and identify every piece of meaningful information
(an entity, fact, relation, or event) that can be extracted from it directly
and unambiguously.

For each identified fact, produce a JSON object with exactly three fields:

"question": one clear, specific question. Spell out the context or conditions
from the text (population, timeframe, setting) so the question pins down a
single fact.

"evidence": the minimal contiguous span from the paragraph that supports the
answer, copied exactly, with no modification.

"answer": a complete natural sentence that directly answers the question,
based only on the evidence.

Rules:
- Use no outside knowledge or inference; everything must come from the paragraph.
- The evidence field must be an exact quote from the text.
- Do not write reasoning-type questions that need more than one fact.

Return a JSON list of objects:
[{"question": "...", "evidence": "...", "answer": "..."}]

Paragraph:
{paragraph}
"""


def render_shqa_prompt(paragraph: str) -> str:
    return _fill(SHQA_PROMPT_TEMPLATE, {"paragraph": paragraph})


# ---------------------------------------------------------------------------
# Multi-hop QA construction

MHQA_PROMPT_VERSION = "mhqa-v1"

# Emitted verbatim by the generator when the pair has no usable relation;
# the parser keys on this exact sentence.
MHQA_SENTINEL = "Cannot generate inter-document multi-hop question."

MHQA_PROMPT_TEMPLATE = """You are a scientific QA generator for inter-document multi-hop question
construction. Build a structured reasoning chain that combines two papers.

Step 0. Validation (not included in the output)
First check that the Source QA and Target QA can form a meaningful multi-hop
relation such as comparison, causation, conceptual linkage, or inference.
If no logical or conceptual overlap exists, output only:

Cannot generate inter-document multi-hop question.

Reasoning components

Find Target Paper
Rewrite the Unique Target QA question into a question asking which paper
addresses that topic. The answer must identify the target paper using the
format:

Identified target paper: '[Target Paper Title]'.

Generate Inter-document QA
Write a comparative or integrative question that connects the Source Paper
and Target Paper through the Core QA pair. The answer must be logically
derived from the provided QA pairs alone; do not introduce external facts.

Merge Complete QA
Combine the Find Target Paper question and the Inter-document QA question
into a single multi-hop question. The final answer must be identical to, or
directly derived from, the Inter-document QA answer.

QA Validation
Rate the merged QA on the following criteria:

Fluency
Completeness
Cross-reference Necessity
Relational Appropriateness

Label each criterion Accept or Reject, then give an overall Decision.

Output Format

<outputs>
  <component type="Find Target Paper">
    <question>...</question>
    <answer>...</answer>
  </component>

  <component type="Generate Inter-document QA">
    <question>...</question>
    <answer>...</answer>
  </component>

  <component type="Merge Complete QA">
    <question>...</question>
    <answer>...</answer>
  </component>

  <component type="QA Validation">
    <score type="Fluency">...</score>
    <score type="Completeness">...</score>
    <score type="Cross-reference Necessity">...</score>
    <score type="Relational Appropriateness">...</score>
    <score type="Decision">...</score>
  </component>
</outputs>

### Now Your Turn

<inputs>
  <source_paper>
    <title>{source_paper_title}</title>
    <section_name>{source_section_name}</section_name>
    <core_qa>
      <question>{core_source_q}</question>
      <answer>{core_source_a}</answer>
    </core_qa>
  </source_paper>
  <target_paper>
    <title>{target_paper_title}</title>
    <section_name>{target_section_name}</section_name>
    <core_qa>
      <question>{core_target_q}</question>
      <answer>{core_target_a}</answer>
    </core_qa>
    <unique_qa>
      <question>{unique_target_q}</question>
      <answer>{unique_target_a}</answer>
    </unique_qa>
  </target_paper>
</inputs>
"""

MHQA_INPUT_FIELDS = (
    "source_paper_title", "source_section_name", "core_source_q", "core_source_a",
    "target_paper_title", "target_section_name", "core_target_q", "core_target_a",
    "unique_target_q", "unique_target_a",
)


def render_mhqa_prompt_text(**values: str) -> str:
    missing = [f for f in MHQA_INPUT_FIELDS if not values.get(f)]
    if missing:
        raise ValueError(f"missing prompt fields: {', '.join(missing)}")
    return _fill(MHQA_PROMPT_TEMPLATE, values)


def mhqa_prompt_digest() -> str:
    return template_digest(MHQA_PROMPT_TEMPLATE)


# ---------------------------------------------------------------------------
# Answer generation and judging

ANSWER_PROMPT_TEMPLATE = """Use only the two papers below to answer the question.

Source paper:
{source_text}

Target paper:
{target_text}

Question: {question}
Answer:"""


def render_answer_prompt(source_text: str, target_text: str, question: str) -> str:
    return _fill(ANSWER_PROMPT_TEMPLATE,
                 {"source_text": source_text, "target_text": target_text, "question": question})


JUDGE_PROMPT_TEMPLATE = """You are grading a model answer against a reference answer.

Question: {question}
Answer: {gold}
Prediction: {prediction}

Decide whether the Prediction gives the same response to the Question as the
Answer. Reply with exactly one score: 1 if they match, 0.5 if they partially
match, 0 if they do not match."""


def render_judge_prompt(question: str, gold: str, prediction: str) -> str:
    return _fill(JUDGE_PROMPT_TEMPLATE,
                 {"question": question, "gold": gold, "prediction": prediction})
