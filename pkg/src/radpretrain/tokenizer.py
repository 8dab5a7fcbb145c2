"""WordPiece tokenization and taxonomy-gated vocabulary extension."""

from __future__ import annotations

import enum
import logging
import re
from collections import Counter, defaultdict
from fractions import Fraction
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, NamedTuple

from radpretrain import resources

if TYPE_CHECKING:
    from radpretrain.taxonomy import Taxonomy

logger = logging.getLogger(__name__)

CONTROL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
ANON_TOKENS = ("[date]", "[person]", "[location]", "[time]", "[removed]")
CONTINUATION = "##"
MAX_WORD_CHARS = 100

_WORD = r"\w+|[^\w\s]"


class Provenance(enum.Enum):
    BASE = "base"
    NEW = "new"
    SPECIAL = "special"


class Word(NamedTuple):
    text: str
    start: int
    end: int
    ids: tuple[int, ...]


class Vocabulary:
    """Ordered token list; line number in the vocab file is the id."""

    def __init__(self, tokens: Iterable[str], provenance: Iterable[Provenance] | None = None):
        self.tokens: tuple[str, ...] = tuple(tokens)
        self.index: dict[str, int] = {}
        for i, tok in enumerate(self.tokens):
            if tok in self.index:
                raise ValueError(f"duplicate token {tok!r} at ids {self.index[tok]} and {i}")
            self.index[tok] = i
        if provenance is None:
            provenance = [Provenance.BASE] * len(self.tokens)
        self.provenance: tuple[Provenance, ...] = tuple(provenance)
        if len(self.provenance) != len(self.tokens):
            raise ValueError("provenance length does not match token count")
        self._cache: dict[str, tuple[int, ...]] = {}
        anon = [t for t in ANON_TOKENS if t in self.index]
        alts = "|".join(re.escape(t) for t in anon)
        self._pretok = re.compile(f"{alts}|{_WORD}" if alts else _WORD, re.IGNORECASE)
        self.special_ids = frozenset(self.index[t] for t in CONTROL_TOKENS + ANON_TOKENS if t in self.index)
        self.continuation_ids = frozenset(i for i, t in enumerate(self.tokens) if t.startswith(CONTINUATION))

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __repr__(self) -> str:
        counts = Counter(p.value for p in self.provenance)
        return f"Vocabulary({len(self)} tokens, {dict(counts)})"

    def id_of(self, token: str) -> int:
        return self.index[token]

    @property
    def pad_id(self) -> int:
        return self.index["[PAD]"]

    @property
    def unk_id(self) -> int:
        return self.index["[UNK]"]

    @property
    def cls_id(self) -> int:
        return self.index["[CLS]"]

    @property
    def sep_id(self) -> int:
        return self.index["[SEP]"]

    @property
    def mask_id(self) -> int:
        return self.index["[MASK]"]

    def tokens_with(self, prov: Provenance) -> list[str]:
        return [t for t, p in zip(self.tokens, self.provenance) if p is prov]

    def base_only(self) -> "Vocabulary":
        """The prefix of base-provenance tokens (ids unchanged)."""
        n = 0
        while n < len(self.tokens) and self.provenance[n] is Provenance.BASE:
            n += 1
        return Vocabulary(self.tokens[:n], self.provenance[:n])

    # -- io ---------------------------------------------------------------

    @classmethod
    def load(cls, path: str | Path, provenance_path: str | Path | None = None) -> "Vocabulary":
        path = Path(path)
        tokens = path.read_text(encoding="utf-8").split("\n")
        if tokens and tokens[-1] == "":
            tokens.pop()
        if provenance_path is None:
            sidecar = provenance_sidecar(path)
            provenance_path = sidecar if sidecar.exists() else None
        prov = None
        if provenance_path is not None:
            lookup = {}
            for line in Path(provenance_path).read_text(encoding="utf-8").splitlines():
                tok, tag = line.rsplit("\t", 1)
                lookup[tok] = Provenance(tag)
            prov = [lookup.get(t, Provenance.BASE) for t in tokens]
        return cls(tokens, prov)

    def save(self, path: str | Path, provenance_path: str | Path | None = None) -> None:
        path = Path(path)
        path.write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")
        provenance_path = provenance_path or provenance_sidecar(path)
        Path(provenance_path).write_text(
            "".join(f"{t}\t{p.value}\n" for t, p in zip(self.tokens, self.provenance)), encoding="utf-8"
        )

    # -- tokenization -------------------------------------------------------

    def pre_tokenize(self, text: str) -> list[tuple[str, int, int]]:
        return [(m.group().lower(), m.start(), m.end()) for m in self._pretok.finditer(text)]

    def wordpiece(self, word: str) -> tuple[int, ...]:
        """Greedy longest-match-first split of one pre-tokenized word."""
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        ids = self._wordpiece(word)
        self._cache[word] = ids
        return ids

    def _wordpiece(self, word: str) -> tuple[int, ...]:
        if word in self.index:
            return (self.index[word],)
        if len(word) > MAX_WORD_CHARS:
            return (self.unk_id,)
        pieces = []
        start = 0
        while start < len(word):
            end = len(word)
            found = None
            while end > start:
                sub = word[start:end]
                if start > 0:
                    sub = CONTINUATION + sub
                if sub in self.index:
                    found = self.index[sub]
                    break
                end -= 1
            if found is None:
                return (self.unk_id,)
            pieces.append(found)
            start = end
        return tuple(pieces)


def provenance_sidecar(vocab_path: str | Path) -> Path:
    vocab_path = Path(vocab_path)
    return vocab_path.with_name(vocab_path.name + ".provenance.tsv")


def load_base_vocab(path: str | Path | None = None) -> Vocabulary:
    return Vocabulary.load(path if path is not None else resources.path("base_vocab.txt"))


def encode_words(vocab: Vocabulary, text: str) -> list[Word]:
    return [Word(w, a, b, vocab.wordpiece(w)) for w, a, b in vocab.pre_tokenize(text)]


def tokenize(vocab: Vocabulary, text: str) -> list[int]:
    ids: list[int] = []
    for w, _a, _b in vocab.pre_tokenize(text):
        ids.extend(vocab.wordpiece(w))
    return ids


def count_tokens(vocab: Vocabulary, text: str) -> int:
    return sum(len(vocab.wordpiece(w)) for w, _a, _b in vocab.pre_tokenize(text))


def detokenize(vocab: Vocabulary, ids: Iterable[int]) -> str:
    out: list[str] = []
    for i in ids:
        tok = vocab.tokens[i]
        if tok.startswith(CONTINUATION) and out:
            out[-1] += tok[len(CONTINUATION):]
        else:
            out.append(tok)
    return " ".join(out)


def normalize(vocab: Vocabulary, text: str) -> str:
    """Lowercased, punctuation-split, single-space form of *text*."""
    return " ".join(w for w, _a, _b in vocab.pre_tokenize(text))


# --------------------------------------------------------------------------
# WordPiece induction

def _pre_split_for_training(text: str) -> list[str]:
    anon = re.compile("|".join(re.escape(t) for t in ANON_TOKENS), re.IGNORECASE)
    text = anon.sub(" ", text)
    return [m.group().lower() for m in re.finditer(_WORD, text)]


def _merge_name(left: str, right: str) -> str:
    return left + right[len(CONTINUATION):]


def train_wordpiece(corpus: Iterable[str], target_size: int) -> set[str]:
    """Induce a WordPiece token set from *corpus*.

    Seeds with every observed character in both word-initial and ``##``
    continuation form, then repeatedly merges the adjacent pair with the
    highest ``freq(pair) / (freq(left) * freq(right))``. Exact ties go to the
    lexicographically smallest ``(left, right)``.
    """
    if target_size < 1:
        raise ValueError("target_size must be positive")
    word_counts: Counter[str] = Counter()
    for text in corpus:
        word_counts.update(_pre_split_for_training(text))
    if not word_counts:
        raise ValueError("cannot train WordPiece on an empty corpus")

    words = sorted(word_counts)
    freqs = [word_counts[w] for w in words]
    splits = [[w[0]] + [CONTINUATION + c for c in w[1:]] for w in words]
    tokens: set[str] = set()
    for ch in sorted({c for w in words for c in w}):
        tokens.add(ch)
        tokens.add(CONTINUATION + ch)

    pair_freq: Counter[tuple[str, str]] = Counter()
    sym_freq: Counter[str] = Counter()
    where: dict[tuple[str, str], set[int]] = defaultdict(set)
    for wi, (sp, f) in enumerate(zip(splits, freqs)):
        for s in sp:
            sym_freq[s] += f
        for pair in zip(sp, sp[1:]):
            pair_freq[pair] += f
            where[pair].add(wi)

    while len(tokens) < target_size:
        live = [(p, f) for p, f in pair_freq.items() if f > 0]
        if not live:
            logger.warning(
                "corpus exhausted after %d tokens; target %d not reached", len(tokens), target_size
            )
            break
        best = _best_pair(live, sym_freq)
        merged = _merge_name(*best)
        tokens.add(merged)
        for wi in sorted(where.pop(best, ())):
            sp, f = splits[wi], freqs[wi]
            for s in sp:
                sym_freq[s] -= f
            for pair in zip(sp, sp[1:]):
                pair_freq[pair] -= f
            new = []
            i = 0
            while i < len(sp):
                if i + 1 < len(sp) and (sp[i], sp[i + 1]) == best:
                    new.append(merged)
                    i += 2
                else:
                    new.append(sp[i])
                    i += 1
            splits[wi] = new
            for s in new:
                sym_freq[s] += f
            for pair in zip(new, new[1:]):
                pair_freq[pair] += f
                where[pair].add(wi)
        pair_freq.pop(best, None)
    return tokens


def _best_pair(live, sym_freq) -> tuple[str, str]:
    scored = [(f / (sym_freq[p[0]] * sym_freq[p[1]]), p, f) for p, f in live]
    top = max(s for s, _p, _f in scored)
    # float scores only shortlist; the final order is exact
    shortlist = [(p, f) for s, p, f in scored if s >= top * (1 - 1e-9)]
    best = min(shortlist, key=lambda pf: (-Fraction(pf[1], sym_freq[pf[0][0]] * sym_freq[pf[0][1]]), pf[0]))
    return best[0]


# --------------------------------------------------------------------------
# vocabulary extension

def strip_prefix(token: str) -> str:
    return token[len(CONTINUATION):] if token.startswith(CONTINUATION) else token


def select_new_tokens(base: Vocabulary, corpus_tokens: Iterable[str], tax: "Taxonomy") -> list[str]:
    candidates = set(corpus_tokens) - set(base.tokens)
    return sorted(t for t in candidates if tax.lookup(strip_prefix(t)))


def extend_vocabulary(base: Vocabulary, corpus_tokens: Iterable[str], tax: "Taxonomy") -> Vocabulary:
    """Append taxonomy-backed corpus tokens and the anonymization specials.

    Base ids are unchanged; new tokens follow in sorted order, then the
    special tokens not already present.
    """
    new = select_new_tokens(base, corpus_tokens, tax)
    tokens = list(base.tokens) + new
    prov = list(base.provenance) + [Provenance.NEW] * len(new)
    for special in ANON_TOKENS:
        if special not in base.index:
            tokens.append(special)
            prov.append(Provenance.SPECIAL)
    return Vocabulary(tokens, prov)
