"""mhqagen: inter-document multi-hop QA dataset generation and evaluation.

The pipeline turns a sectioned document corpus into single-hop QA triplets,
links documents through embedding- or citation-based relations, builds
constrained retrieval clusters, synthesizes validated multi-hop questions,
and benchmarks retrieval plus answer quality - all resumable, seeded, and
runnable fully offline with deterministic mock providers.
"""

__version__ = "0.1.0"
