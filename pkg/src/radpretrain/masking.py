"""Training-example construction: random MLM masks, sentence section labels
and knowledge-aware entity masking with a minimum-quota rule."""

from __future__ import annotations

import enum
import hashlib
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from radpretrain.annotator import ANNOTATED_SECTIONS, Category, EntitySpan
from radpretrain.corpus import Chunk, SectionKind
from radpretrain.tokenizer import Vocabulary, tokenize

logger = logging.getLogger(__name__)

MASK_RATE = Fraction(15, 100)


class QuotaError(ValueError):
    """Not enough maskable positions to reach the quota."""


class MaskingOption(enum.Enum):
    OPT1 = "opt1"
    OPT2 = "opt2"
    OPT3 = "opt3"
    OPT4 = "opt4"

    @classmethod
    def parse(cls, name: str) -> "MaskingOption":
        return cls(name.strip().lower())

    def licenses(self, category: Category, section: SectionKind) -> bool:
        return section in OPTION_TABLE[self].get(category, ())


_FI = frozenset({SectionKind.FINDINGS, SectionKind.IMPRESSIONS})
OPTION_TABLE: dict[MaskingOption, dict[Category, frozenset[SectionKind]]] = {
    MaskingOption.OPT1: {
        Category.ANATOMY: frozenset({SectionKind.CLINICAL, SectionKind.FINDINGS}),
        Category.SYMPTOM: _FI,
    },
    MaskingOption.OPT2: {Category.OBSERVATION: frozenset({SectionKind.FINDINGS}), Category.SYMPTOM: _FI},
    MaskingOption.OPT3: {
        Category.ANATOMY: frozenset({SectionKind.CLINICAL, SectionKind.IMPRESSIONS}),
        Category.SYMPTOM: _FI,
    },
    MaskingOption.OPT4: {Category.OBSERVATION: frozenset({SectionKind.IMPRESSIONS}), Category.SYMPTOM: _FI},
}
OPTIONS = tuple(MaskingOption)


@dataclass(slots=True)
class MaskedExample:
    """``ids`` is the generator input with [MASK] at every masked position;
    ``labels`` holds the original ids aligned with ``masks``."""

    ids: list[int]
    masks: list[int]
    labels: list[int]
    option: MaskingOption | None
    sections: list[SectionKind]
    seed: int
    report_id: str = ""
    chunk_idx: int = -1
    qualified: bool | None = None
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.ids)

    def original(self) -> list[int]:
        out = list(self.ids)
        for p, t in zip(self.masks, self.labels):
            out[p] = t
        return out

    def to_json(self) -> dict:
        return {
            "ids": self.ids,
            "masks": self.masks,
            "labels": self.labels,
            "option": self.option.value if self.option else None,
            "sections": [s.value for s in self.sections],
            "seed": self.seed,
            "report_id": self.report_id,
            "chunk_idx": self.chunk_idx,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MaskedExample":
        return cls(
            list(obj["ids"]),
            list(obj["masks"]),
            list(obj["labels"]),
            MaskingOption.parse(obj["option"]) if obj.get("option") else None,
            [SectionKind.parse(s) for s in obj["sections"]],
            int(obj["seed"]),
            obj.get("report_id", ""),
            obj.get("chunk_idx", -1),
        )


# --------------------------------------------------------------------------
# helpers


def quota(n: int, rate: Fraction | float = MASK_RATE) -> int:
    """ceil(rate * n) in exact arithmetic."""
    r = Fraction(rate) if isinstance(rate, Fraction) else Fraction(str(rate))
    return -((-n * r.numerator) // r.denominator)


def example_seed(run_seed: int, report_id: str, chunk_idx: int | str, epoch: int = 0) -> int:
    """Stable 64-bit per-example seed; independent of Python's hash salt."""
    parts = [str(run_seed), str(report_id), str(chunk_idx)]
    if epoch:
        parts.append(str(epoch))
    digest = hashlib.blake2b("\x1f".join(parts).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _apply(ids: Sequence[int], positions: Iterable[int], mask_id: int):
    masks = sorted(int(p) for p in positions)
    labels = [int(ids[p]) for p in masks]
    out = list(int(i) for i in ids)
    for p in masks:
        out[p] = mask_id
    return out, masks, labels


def encode_chunk(chunk: Chunk, vocab: Vocabulary) -> list[int]:
    """``[CLS] s1 s2 ... [SEP]`` for one chunk."""
    ids = [vocab.cls_id]
    for sent in chunk.sentences:
        ids.extend(tokenize(vocab, sent.text))
    ids.append(vocab.sep_id)
    return ids


# --------------------------------------------------------------------------
# core operations


def mask_random(
    ids: Sequence[int], special_ids: Iterable[int], mask_id: int, seed, rate: Fraction | float = MASK_RATE
) -> tuple[list[int], list[int], list[int]]:
    """Mask exactly ceil(rate * n) non-special positions, uniformly."""
    special = set(special_ids)
    candidates = [i for i, t in enumerate(ids) if t not in special]
    need = quota(len(ids), rate)
    if not candidates:
        raise QuotaError("every position is a special token")
    if need > len(candidates):
        raise QuotaError(f"quota {need} exceeds {len(candidates)} maskable positions")
    chosen = _rng(seed).choice(len(candidates), size=need, replace=False)
    return _apply(ids, (candidates[i] for i in chosen), mask_id)


def option_counts(spans: Iterable[EntitySpan]) -> dict[MaskingOption, int]:
    """Tokens each option would mask, counting every licensed span in full."""
    counts = dict.fromkeys(OPTIONS, 0)
    spans = list(spans)
    for opt in OPTIONS:
        counts[opt] = sum(len(s) for s in spans if opt.licenses(s.category, s.section))
    return counts


def select_option(spans: Iterable[EntitySpan], n_tokens: int, seed) -> tuple[MaskingOption, bool]:
    need = quota(n_tokens)
    counts = option_counts(spans)
    qualifying = [o for o in OPTIONS if counts[o] >= need]
    pool = qualifying or list(OPTIONS)
    return pool[int(_rng(seed).integers(len(pool)))], bool(qualifying)


def _subset(rng: np.random.Generator, n: int) -> np.ndarray:
    # uniform over the 2^n - 1 non-empty subsets via rejection
    while True:
        keep = rng.random(n) < 0.5
        if keep.any():
            return keep


def _word_groups(ids: Sequence[int], positions: Sequence[int], continuation: frozenset[int]) -> list[list[int]]:
    groups: list[list[int]] = []
    for p in positions:
        if groups and ids[p] in continuation and groups[-1][-1] == p - 1:
            groups[-1].append(p)
        else:
            groups.append([p])
    return groups


def mask_kg(
    ids: Sequence[int],
    spans: Sequence[EntitySpan],
    option: MaskingOption,
    special_ids: Iterable[int],
    mask_id: int,
    seed,
    label: str = "",
    continuation_ids: Iterable[int] = (),
) -> tuple[list[int], list[int], list[int]]:
    """Entity masking for *option*, then non-entity fill up to the quota.

    A licensed single-word span is masked in full. A multi-word span is
    masked in full or, on a fair coin flip, on a uniformly chosen non-empty
    subset of its words. Words are runs of a head token plus its
    *continuation_ids* pieces; with none given every token is its own word.
    There is no upper cap.
    """
    rng = _rng(seed)
    special = set(special_ids)
    continuation = frozenset(continuation_ids)
    n = len(ids)
    masked: set[int] = set()
    in_entity: set[int] = set()
    for span in sorted(spans, key=lambda s: s.start):
        positions = [p for p in range(span.start, span.end) if 0 <= p < n and ids[p] not in special]
        in_entity.update(range(span.start, span.end))
        if not positions or not option.licenses(span.category, span.section):
            continue
        words = _word_groups(ids, positions, continuation)
        if len(words) == 1 or rng.random() < 0.5:
            masked.update(positions)
        else:
            keep = _subset(rng, len(words))
            masked.update(p for w, k in zip(words, keep) if k for p in w)
    need = quota(n) - len(masked)
    if need > 0:
        fill = [i for i, t in enumerate(ids) if t not in special and i not in in_entity]
        if need > len(fill):
            raise QuotaError(f"{label or 'chunk'}: quota needs {need} fill positions, only {len(fill)} available")
        masked.update(fill[i] for i in rng.choice(len(fill), size=need, replace=False))
    return _apply(ids, masked, mask_id)


def check_example(ex: MaskedExample, spans: Sequence[EntitySpan], special_ids: Iterable[int]) -> list[str]:
    """Names of the masking invariants *ex* violates (empty when sound)."""
    problems = []
    special = set(special_ids)
    orig = ex.original()
    if len(ex.masks) < quota(len(ex.ids)):
        problems.append("quota")
    if any(orig[p] in special for p in ex.masks):
        problems.append("special")
    if ex.masks != sorted(set(ex.masks)) or any(not 0 <= p < len(ex.ids) for p in ex.masks):
        problems.append("positions")
    if ex.option is not None:
        masked = set(ex.masks)
        cats = set()
        for s in spans:
            hit = masked.intersection(range(s.start, s.end))
            if hit:
                if not ex.option.licenses(s.category, s.section):
                    problems.append("option-table")
                cats.add(s.category)
        if Category.ANATOMY in cats and Category.OBSERVATION in cats:
            problems.append("context")
    return problems


# --------------------------------------------------------------------------
# example builders


def label_sections(chunks: Iterable[Chunk], vocab: Vocabulary) -> list[tuple[list[int], SectionKind]]:
    """One (sentence token ids, containing section) pair per sentence."""
    return [(tokenize(vocab, s.text), c.section) for c in chunks for s in c.sentences]


def random_example(chunk: Chunk, vocab: Vocabulary, run_seed: int, epoch: int = 0) -> MaskedExample:
    ids = encode_chunk(chunk, vocab)
    seed = example_seed(run_seed, chunk.report_id, chunk.index, epoch)
    x, masks, labels = mask_random(ids, vocab.special_ids, vocab.mask_id, [seed, 2])
    sections = [chunk.section] * len(chunk.sentences)
    return MaskedExample(
        x, masks, labels, None, sections, seed, chunk.report_id, chunk.index, extra={"text": chunk.text}
    )


def kg_example(
    chunk: Chunk, spans: Sequence[EntitySpan], vocab: Vocabulary, run_seed: int, epoch: int = 0
) -> MaskedExample:
    """Option selection plus entity masking; chunks outside the annotated
    sections, and chunks whose quota cannot be met, fall back to random."""
    if chunk.section not in ANNOTATED_SECTIONS:
        return random_example(chunk, vocab, run_seed, epoch)
    ids = encode_chunk(chunk, vocab)
    seed = example_seed(run_seed, chunk.report_id, chunk.index, epoch)
    option, qualified = select_option(spans, len(ids), [seed, 1])
    try:
        x, masks, labels = mask_kg(
            ids, spans, option, vocab.special_ids, vocab.mask_id, [seed, 2], f"{chunk.report_id}#{chunk.index}",
            vocab.continuation_ids,
        )
    except QuotaError as exc:
        logger.info("falling back to random masking: %s", exc)
        return random_example(chunk, vocab, run_seed, epoch)
    sections = [chunk.section] * len(chunk.sentences)
    return MaskedExample(
        x, masks, labels, option, sections, seed, chunk.report_id, chunk.index, qualified, {"text": chunk.text}
    )


def sentence_examples(chunk: Chunk, vocab: Vocabulary, run_seed: int, epoch: int = 0) -> list[MaskedExample]:
    """Sentence-level inputs for section classification, randomly masked."""
    out = []
    for k, sent in enumerate(chunk.sentences):
        ids = [vocab.cls_id, *tokenize(vocab, sent.text), vocab.sep_id]
        seed = example_seed(run_seed, chunk.report_id, f"{chunk.index}.{k}", epoch)
        x, masks, labels = mask_random(ids, vocab.special_ids, vocab.mask_id, [seed, 2])
        out.append(
            MaskedExample(
                x, masks, labels, None, [chunk.section], seed, chunk.report_id, chunk.index, extra={"text": sent.text}
            )
        )
    return out


def build_examples(
    objective: str,
    chunks: Sequence[Chunk],
    vocab: Vocabulary,
    run_seed: int,
    spans: dict[tuple[str, int], Sequence[EntitySpan]] | None = None,
    epoch: int = 0,
) -> list[MaskedExample]:
    if objective in ("mlm", "random"):
        return [random_example(c, vocab, run_seed, epoch) for c in chunks]
    if objective == "kg":
        if spans is None:
            raise ValueError("kg masking needs entity spans")
        return [kg_example(c, spans.get((c.report_id, c.index), ()), vocab, run_seed, epoch) for c in chunks]
    if objective == "ss":
        return [ex for c in chunks for ex in sentence_examples(c, vocab, run_seed, epoch)]
    raise ValueError(f"unknown objective {objective!r}")
