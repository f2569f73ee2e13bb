"""Document-context neural machine translation with domain embeddings.

The heavy lifting lives in the compiled ``_ctxnmt`` extension; this package
re-exports it.
"""

from ._ctxnmt import (
    AlignmentModel,
    ConfigError,
    Experiment,
    System,
    corpus_bleu,
    count_parameters,
    generate_corpus,
    ibm1_align,
    kinds,
    manifest,
    paired_bootstrap,
    parameter_checks,
    sentence_bleu,
    synth_defaults,
    tfidf_domain_words,
)

__all__ = [
    "AlignmentModel",
    "ConfigError",
    "Experiment",
    "System",
    "corpus_bleu",
    "count_parameters",
    "generate_corpus",
    "ibm1_align",
    "kinds",
    "manifest",
    "paired_bootstrap",
    "parameter_checks",
    "sentence_bleu",
    "synth_defaults",
    "tfidf_domain_words",
]
