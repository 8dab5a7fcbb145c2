"""Glue between the stages: raw reports to sectioned reports, vocabulary,
annotations and masked examples."""

from __future__ import annotations

import logging
from typing import Iterable, Sequence

from radpretrain.annotator import annotate
from radpretrain.corpus import DEFAULT_BUDGET, Chunk, RawReport, SectionedReport, chunk_corpus, preprocess
from radpretrain.masking import MaskedExample, build_examples
from radpretrain.taxonomy import Taxonomy
from radpretrain.tokenizer import Vocabulary, extend_vocabulary, train_wordpiece

logger = logging.getLogger(__name__)


def preprocess_corpus(raws: Iterable[RawReport], rules, headers) -> tuple[list[SectionedReport], list[str]]:
    """Sectioned reports plus the ids of reports dropped as empty."""
    kept, dropped = [], []
    for raw in raws:
        rep = preprocess(raw, rules, headers)
        if rep is None:
            logger.warning("dropping report %s: empty after cleaning", raw.id)
            dropped.append(raw.id)
        else:
            kept.append(rep)
    return kept, dropped


def build_vocab(base: Vocabulary, reports: Sequence[SectionedReport], tax: Taxonomy, target_size: int,
                budget: int = DEFAULT_BUDGET) -> tuple[Vocabulary, set[str]]:
    """WordPiece induction over chunk texts, then the taxonomy-gated extension."""
    chunks, _errors = chunk_corpus(reports, base, budget)
    corpus_tokens = train_wordpiece((c.text for c in chunks), target_size)
    return extend_vocabulary(base, corpus_tokens, tax), corpus_tokens


def annotate_corpus(reports: Sequence[SectionedReport], vocab: Vocabulary, tax: Taxonomy,
                    budget: int = DEFAULT_BUDGET):
    """Chunks and their entity spans keyed by ``(report_id, chunk_idx)``."""
    chunks, _errors = chunk_corpus(reports, vocab, budget)
    spans = {(c.report_id, c.index): annotate(c, vocab, tax) for c in chunks}
    return chunks, spans


def mask_corpus(objective: str, reports: Sequence[SectionedReport], vocab: Vocabulary, tax: Taxonomy,
                run_seed: int, budget: int = DEFAULT_BUDGET, epoch: int = 0
                ) -> tuple[list[MaskedExample], list[Chunk], dict]:
    chunks, spans = annotate_corpus(reports, vocab, tax, budget) if objective == "kg" else (
        chunk_corpus(reports, vocab, budget)[0], {})
    return build_examples(objective, chunks, vocab, run_seed, spans, epoch), chunks, spans
