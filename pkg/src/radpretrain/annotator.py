"""Dictionary-based entity detection, linking and categorization over
report chunks."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Sequence

from radpretrain.corpus import Chunk, SectionKind
from radpretrain.taxonomy import Concept, Taxonomy
from radpretrain.tokenizer import Vocabulary, encode_words

logger = logging.getLogger(__name__)

MAX_NGRAM = 5
ANNOTATED_SECTIONS = frozenset({SectionKind.CLINICAL, SectionKind.FINDINGS, SectionKind.IMPRESSIONS})


class Category(enum.Enum):
    SYMPTOM = "symptom"
    ANATOMY = "anatomy"
    OBSERVATION = "observation"

    @classmethod
    def parse(cls, name: str) -> "Category":
        return cls(name.strip().lower())


SYMPTOM_CLASSES = frozenset({"symptom"})
ANATOMY_CLASSES = frozenset(
    {"anatomical entity", "anatomical descriptors", "anatomically-related descriptor", "location descriptor"}
)
OBSERVATION_CLASSES = frozenset(
    {
        "clinical finding",
        "procedure",
        "imaging observation",
        "size descriptor",
        "normality descriptor",
        "turbidity descriptor",
        "stage of healing descriptor",
        "composition descriptor",
    }
)
# ambiguity tie-break, most preferred first
PREFERENCE = (Category.ANATOMY, Category.OBSERVATION, Category.SYMPTOM)


@dataclass(frozen=True, slots=True)
class EntitySpan:
    section: SectionKind
    start: int  # token range within the chunk sequence, [CLS] at 0
    end: int
    surface: str
    concept_id: str
    category: Category
    char_start: int = -1  # offsets into the cleaned report text
    char_end: int = -1

    @property
    def token_range(self) -> tuple[int, int]:
        return self.start, self.end

    def __len__(self) -> int:
        return self.end - self.start

    def to_json(self) -> dict:
        return {
            "start": self.start,
            "end": self.end,
            "surface": self.surface,
            "concept": self.concept_id,
            "category": self.category.value,
            "char_start": self.char_start,
            "char_end": self.char_end,
        }

    @classmethod
    def from_json(cls, obj: dict, section: SectionKind) -> "EntitySpan":
        return cls(
            section,
            obj["start"],
            obj["end"],
            obj["surface"],
            obj["concept"],
            Category.parse(obj["category"]),
            obj.get("char_start", -1),
            obj.get("char_end", -1),
        )


@dataclass(frozen=True, slots=True)
class TokenWord:
    """A pre-tokenized word positioned inside a chunk."""

    text: str
    tok_start: int
    tok_end: int
    char_start: int
    char_end: int


def categorize(tax: Taxonomy, c: Concept) -> Category | None:
    cls = tax.class_of(c)
    if cls in SYMPTOM_CLASSES:
        return Category.SYMPTOM
    if cls in ANATOMY_CLASSES:
        return Category.ANATOMY
    if cls in OBSERVATION_CLASSES:
        return Category.OBSERVATION
    return None


def resolve(tax: Taxonomy, surface: str) -> tuple[Concept, Category] | None:
    """Pick one categorizable concept for *surface*, or None."""
    concepts = tax.lookup(surface)
    if not concepts:
        return None
    ranked = []
    for c in concepts:
        cat = categorize(tax, c)
        if cat is not None:
            ranked.append((PREFERENCE.index(cat), c.id, c, cat))
    if not ranked:
        return None
    ranked.sort(key=lambda r: (r[0], r[1]))
    if len(concepts) > 1:
        logger.debug("ambiguous surface %r -> %s; chose %s", surface, [c.id for c in concepts], ranked[0][1])
    return ranked[0][2], ranked[0][3]


def chunk_words(chunk: Chunk, vocab: Vocabulary) -> list[list[TokenWord]]:
    """Words of each sentence with their token positions in the chunk
    sequence ``[CLS] s1 s2 ... [SEP]``."""
    pos = 1
    out = []
    for sent in chunk.sentences:
        words = []
        for w in encode_words(vocab, sent.text):
            words.append(TokenWord(w.text, pos, pos + len(w.ids), sent.start + w.start, sent.start + w.end))
            pos += len(w.ids)
        out.append(words)
    return out


def split_mixed_entity(words: Sequence[TokenWord], tax: Taxonomy, section: SectionKind) -> list[EntitySpan]:
    """One span per constituent word that maps to a category on its own."""
    spans = []
    for w in words:
        hit = resolve(tax, w.text)
        if hit is None:
            logger.debug("dropping constituent %r: no category", w.text)
            continue
        concept, cat = hit
        spans.append(EntitySpan(section, w.tok_start, w.tok_end, w.text, concept.id, cat, w.char_start, w.char_end))
    return spans


def _span_from_words(words, concept, cat, section) -> EntitySpan:
    surface = " ".join(w.text for w in words)
    return EntitySpan(
        section, words[0].tok_start, words[-1].tok_end, surface, concept.id, cat, words[0].char_start, words[-1].char_end
    )


def annotate_words(words: Sequence[TokenWord], tax: Taxonomy, section: SectionKind) -> list[EntitySpan]:
    spans: list[EntitySpan] = []
    i = 0
    limit = min(MAX_NGRAM, tax.max_surface_words or 1)
    while i < len(words):
        match = None
        for n in range(min(limit, len(words) - i), 0, -1):
            surface = " ".join(w.text for w in words[i : i + n])
            if tax.lookup(surface):
                match = (n, surface)
                break
        if match is None:
            i += 1
            continue
        n, surface = match
        group = words[i : i + n]
        i += n
        hit = resolve(tax, surface)
        if n > 1:
            parts = {hit_w[1] for w in group if (hit_w := resolve(tax, w.text)) is not None}
            if len(parts) > 1:
                spans.extend(split_mixed_entity(group, tax, section))
                continue
        if hit is None:
            logger.debug("discarding match %r: class has no category", surface)
            continue
        spans.append(_span_from_words(group, hit[0], hit[1], section))
    return spans


def annotate(chunk: Chunk, vocab: Vocabulary, tax: Taxonomy) -> list[EntitySpan]:
    """Greedy longest-match entity spans for a Clinical/Findings/Impressions
    chunk; other sections yield no spans."""
    if chunk.section not in ANNOTATED_SECTIONS:
        return []
    spans = []
    for words in chunk_words(chunk, vocab):
        spans.extend(annotate_words(words, tax, chunk.section))
    return spans


def annotation_record(chunk: Chunk, spans: Sequence[EntitySpan]) -> dict:
    return {
        "report_id": chunk.report_id,
        "chunk_idx": chunk.index,
        "section": chunk.section.value,
        "spans": [s.to_json() for s in spans],
    }
