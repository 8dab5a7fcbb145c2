"""Report ingestion: regex cleaning, section identification, sentence
splitting and section-bounded chunking."""

from __future__ import annotations

import enum
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from radpretrain import resources
from radpretrain.tokenizer import Vocabulary, count_tokens

logger = logging.getLogger(__name__)

DEFAULT_BUDGET = 512
MAX_CLEAN_PASSES = 8


class ConfigError(ValueError):
    """A rule or header file could not be parsed."""


class OverlongSentenceError(ValueError):
    def __init__(self, report_id: str, sentence: str, n_tokens: int, budget: int):
        super().__init__(
            f"report {report_id!r}: sentence of {n_tokens} tokens exceeds budget {budget}: {sentence[:60]!r}"
        )
        self.report_id = report_id
        self.n_tokens = n_tokens
        self.budget = budget


class SectionKind(enum.Enum):
    CLINICAL = "clinical"
    COMPARISON = "comparison"
    FINDINGS = "findings"
    IMPRESSIONS = "impressions"
    MISCELLANEOUS = "miscellaneous"

    @classmethod
    def parse(cls, name: str) -> "SectionKind":
        key = name.strip().lower()
        for kind in cls:
            if kind.value == key:
                return kind
        raise ValueError(f"unknown section kind {name!r}")

    @property
    def index(self) -> int:
        return list(SectionKind).index(self)


@dataclass(frozen=True, slots=True)
class RawReport:
    id: str
    text: str


@dataclass(frozen=True, slots=True)
class Sentence:
    text: str
    start: int
    end: int


@dataclass(slots=True)
class SectionedReport:
    id: str
    text: str
    sections: dict[SectionKind, list[Sentence]] = field(default_factory=dict)
    # (kind, start, end) of every content region, in text order
    regions: list[tuple[SectionKind, int, int]] = field(default_factory=list)
    headers: list[tuple[int, int]] = field(default_factory=list)

    def sentences(self) -> Iterator[tuple[SectionKind, Sentence]]:
        """All sentences in text order with their section."""
        flat = [(s.start, kind, s) for kind, sents in self.sections.items() for s in sents]
        for _, kind, sent in sorted(flat, key=lambda t: t[0]):
            yield kind, sent

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "sections": {
                kind.value: [{"text": s.text, "start": s.start, "end": s.end} for s in sents]
                for kind, sents in self.sections.items()
            },
            "regions": [[k.value, a, b] for k, a, b in self.regions],
            "headers": [list(h) for h in self.headers],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SectionedReport":
        sections = {
            SectionKind.parse(k): [Sentence(s["text"], s["start"], s["end"]) for s in v]
            for k, v in obj["sections"].items()
        }
        regions = [(SectionKind.parse(k), a, b) for k, a, b in obj.get("regions", [])]
        headers = [tuple(h) for h in obj.get("headers", [])]
        return cls(obj["id"], obj.get("text", ""), sections, regions, headers)


@dataclass(slots=True)
class Chunk:
    report_id: str
    index: int
    section: SectionKind
    sentences: list[Sentence]
    token_count: int

    @property
    def text(self) -> str:
        return " ".join(s.text for s in self.sentences)


# --------------------------------------------------------------------------
# rule files

@dataclass(frozen=True)
class RegexRule:
    pattern: re.Pattern
    replacement: str
    line: int


def load_rules(path: str | Path | None = None) -> list[RegexRule]:
    """Parse a ``pattern<TAB>replacement`` rule file (``#`` comments allowed)."""
    path = Path(path) if path is not None else resources.path("ocr_rules.tsv")
    rules = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip() or raw.startswith("#"):
            continue
        if "\t" not in raw:
            raise ConfigError(f"{path}:{lineno}: expected pattern<TAB>replacement")
        pattern, replacement = raw.split("\t", 1)
        try:
            compiled = re.compile(pattern)
            compiled.sub(replacement, "")  # validates group references
        except re.error as exc:
            raise ConfigError(f"{path}:{lineno}: bad rule {pattern!r}: {exc}") from exc
        rules.append(RegexRule(compiled, replacement, lineno))
    return rules


def load_headers(path: str | Path | None = None) -> list[tuple[SectionKind, re.Pattern]]:
    path = Path(path) if path is not None else resources.path("headers.tsv")
    headers = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip() or raw.startswith("#"):
            continue
        try:
            kind_name, pattern = raw.split("\t", 1)
            kind = SectionKind.parse(kind_name)
            headers.append((kind, re.compile(pattern, re.IGNORECASE)))
        except (ValueError, re.error) as exc:
            raise ConfigError(f"{path}:{lineno}: bad header line: {exc}") from exc
    missing = set(SectionKind) - {SectionKind.MISCELLANEOUS} - {k for k, _ in headers}
    if missing:
        raise ConfigError(f"{path}: no header pattern for {sorted(k.value for k in missing)}")
    return headers


# --------------------------------------------------------------------------
# cleaning

_HSPACE = re.compile(r"[^\S\n]+")
_LINE_EDGES = re.compile(r" *\n *")
_BLANK_LINES = re.compile(r"\n{2,}")


def _clean_once(text: str, rules: list[RegexRule]) -> str:
    for rule in rules:
        text = rule.pattern.sub(rule.replacement, text)
    text = _HSPACE.sub(" ", text)
    text = _LINE_EDGES.sub("\n", text)
    text = _BLANK_LINES.sub("\n", text)
    return text.strip()


def clean_text(raw: str, rules: list[RegexRule]) -> str:
    """Apply OCR rules in order and normalise whitespace.

    The pass is repeated until a fixed point so the result is idempotent even
    when one rule exposes a match for an earlier one.
    """
    text = raw
    for _ in range(MAX_CLEAN_PASSES):
        cleaned = _clean_once(text, rules)
        if cleaned == text:
            return cleaned
        text = cleaned
    logger.warning("clean_text did not converge after %d passes", MAX_CLEAN_PASSES)
    return text


# --------------------------------------------------------------------------
# sentences

ABBREVIATIONS = frozenset(
    {"dr.", "mr.", "mrs.", "ms.", "st.", "vs.", "e.g.", "i.e.", "approx.", "etc.", "fig.", "cf."}
)
_BOUNDARY = re.compile(r"[.!?]+(?=\s|$)|\n")


def _is_abbreviation(text: str, period_end: int) -> bool:
    start = period_end
    while start > 0 and not text[start - 1].isspace():
        start -= 1
    word = text[start:period_end].lower()
    # strip leading punctuation such as "("
    word = word.lstrip("([{\"'")
    return word in ABBREVIATIONS


def split_sentences(text: str, offset: int = 0) -> list[Sentence]:
    """Rule-based splitter: terminators followed by whitespace, or newlines."""
    sentences = []
    start = 0
    for m in _BOUNDARY.finditer(text):
        end = m.end() if m.group() != "\n" else m.start()
        if m.group() != "\n" and _is_abbreviation(text, m.end()):
            continue
        _emit(text, start, end, offset, sentences)
        start = m.end()
    _emit(text, start, len(text), offset, sentences)
    return sentences


def _emit(text: str, start: int, end: int, offset: int, out: list[Sentence]) -> None:
    seg = text[start:end]
    stripped = seg.strip()
    if not stripped:
        return
    lead = len(seg) - len(seg.lstrip())
    a = start + lead
    out.append(Sentence(stripped, offset + a, offset + a + len(stripped)))


# --------------------------------------------------------------------------
# sections

def _find_headers(text: str, headers) -> list[tuple[int, int, SectionKind]]:
    hits = []
    for kind, pattern in headers:
        for m in pattern.finditer(text):
            if m.end() > m.start():
                hits.append((m.start(), -(m.end() - m.start()), kind, m.end()))
    hits.sort(key=lambda h: (h[0], h[1], h[2].index))
    chosen = []
    last_end = 0
    for start, _neg_len, kind, end in hits:
        if start < last_end:
            continue
        chosen.append((start, end, kind))
        last_end = end
    return chosen


def identify_sections(cleaned: str, headers, report_id: str = "") -> SectionedReport:
    """Split cleaned text at header matches; text before the first header
    is Miscellaneous."""
    report = SectionedReport(report_id, cleaned)
    found = _find_headers(cleaned, headers)
    bounds = []
    cursor, kind = 0, SectionKind.MISCELLANEOUS
    for start, end, next_kind in found:
        bounds.append((kind, cursor, start))
        report.headers.append((start, end))
        cursor, kind = end, next_kind
    bounds.append((kind, cursor, len(cleaned)))
    for kind, a, b in bounds:
        if b <= a:
            continue
        report.regions.append((kind, a, b))
        sents = split_sentences(cleaned[a:b], offset=a)
        if sents:
            report.sections.setdefault(kind, []).extend(sents)
    return report


def preprocess(raw: RawReport, rules, headers) -> SectionedReport | None:
    cleaned = clean_text(raw.text, rules)
    if not cleaned:
        logger.info("dropping report %s: empty after cleaning", raw.id)
        return None
    return identify_sections(cleaned, headers, raw.id)


# --------------------------------------------------------------------------
# chunking

def chunk_sections(report: SectionedReport, vocab: Vocabulary, budget: int = DEFAULT_BUDGET) -> list[Chunk]:
    """Greedy sentence packing per section; [CLS]/[SEP] count toward *budget*.

    Raises OverlongSentenceError when one sentence cannot fit on its own.
    """
    ordered = sorted(report.sections.items(), key=lambda kv: kv[1][0].start if kv[1] else 0)
    chunks: list[Chunk] = []
    for kind, sents in ordered:
        current: list[Sentence] = []
        used = 2
        for sent in sents:
            n = count_tokens(vocab, sent.text)
            if n + 2 > budget:
                raise OverlongSentenceError(report.id, sent.text, n + 2, budget)
            if current and used + n > budget:
                chunks.append(Chunk(report.id, len(chunks), kind, current, used))
                current, used = [], 2
            current.append(sent)
            used += n
        if current:
            chunks.append(Chunk(report.id, len(chunks), kind, current, used))
    return chunks


def chunk_corpus(reports: Iterable[SectionedReport], vocab: Vocabulary, budget: int = DEFAULT_BUDGET):
    """Chunk every report, skipping (and logging) reports with overlong sentences.

    Returns ``(chunks, errors)``.
    """
    chunks, errors = [], []
    for report in reports:
        try:
            chunks.extend(chunk_sections(report, vocab, budget))
        except OverlongSentenceError as exc:
            logger.warning("skipping report: %s", exc)
            errors.append(exc)
    return chunks, errors


# --------------------------------------------------------------------------
# JSON-lines IO

def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
            n += 1
    return n


def read_raw_reports(path: str | Path) -> list[RawReport]:
    return [RawReport(str(obj["id"]), obj["text"]) for obj in read_jsonl(path)]


def read_sectioned(path: str | Path) -> list[SectionedReport]:
    return [SectionedReport.from_json(obj) for obj in read_jsonl(path)]
