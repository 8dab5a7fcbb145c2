"""Templated pseudo-radiology reports with gold sections and entities.

Every report is drawn from its own generator keyed by ``(seed, index)`` so
reports can be produced independently and in any order.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from radpretrain import resources
from radpretrain.annotator import ANNOTATED_SECTIONS, Category, categorize, resolve
from radpretrain.corpus import RawReport, SectionedReport, SectionKind, Sentence
from radpretrain.taxonomy import Taxonomy

SLOTS = ("ANAT", "OBS", "SYM", "DESC", "PROC")
SENTENCES_PER_SECTION = {
    SectionKind.MISCELLANEOUS: (1, 2),
    SectionKind.CLINICAL: (1, 2),
    SectionKind.COMPARISON: (1, 1),
    SectionKind.FINDINGS: (1, 4),
    SectionKind.IMPRESSIONS: (1, 3),
}
SECTIONS_PER_REPORT = (2, 5)
SITE_COUPLING = 0.8

_PIECE = re.compile(r"\{(?P<slot>[A-Z]+)\}|\[\[(?P<lit>[^|\]]+)\|(?P<cat>[a-z]+)\]\]")


@dataclass(frozen=True)
class Template:
    section: SectionKind
    pattern: str
    weight: float


@dataclass
class TemplateSet:
    section_weights: dict[SectionKind, float]
    headers: dict[SectionKind, list[str]]
    templates: dict[SectionKind, list[Template]]


@dataclass(frozen=True)
class GoldEntity:
    section: SectionKind
    char_start: int
    char_end: int
    surface: str
    category: Category
    concept_id: str | None = None

    def to_json(self) -> dict:
        return {
            "section": self.section.value,
            "start": self.char_start,
            "end": self.char_end,
            "surface": self.surface,
            "category": self.category.value,
            "concept": self.concept_id,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GoldEntity":
        return cls(
            SectionKind.parse(obj["section"]),
            obj["start"],
            obj["end"],
            obj["surface"],
            Category.parse(obj["category"]),
            obj.get("concept"),
        )


@dataclass
class GeneratedReport:
    raw: RawReport
    clean_text: str
    sections: SectionedReport
    entities: list[GoldEntity] = field(default_factory=list)
    templates: list[str] = field(default_factory=list)

    def gold_json(self) -> dict:
        return {
            "id": self.raw.id,
            "clean_text": self.clean_text,
            "sections": self.sections.to_json()["sections"],
            "entities": [e.to_json() for e in self.entities],
            "templates": self.templates,
        }


def load_templates(path: str | Path | None = None) -> TemplateSet:
    path = Path(path) if path is not None else resources.path("templates.jsonl")
    ts = TemplateSet({}, {}, {})
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            kind = SectionKind.parse(row["section"])
            if row["kind"] == "section":
                ts.section_weights[kind] = float(row["weight"])
            elif row["kind"] == "header":
                ts.headers.setdefault(kind, []).append(row["text"])
            elif row["kind"] == "template":
                ts.templates.setdefault(kind, []).append(Template(kind, row["pattern"], float(row["weight"])))
            else:
                raise ValueError(f"unknown template record kind {row['kind']!r}")
    return ts


class SlotFiller:
    """Surface pools per slot, drawn from taxonomy classes."""

    def __init__(self, tax: Taxonomy):
        self.tax = tax
        pools: dict[str, list[tuple[str, str, Category]]] = {s: [] for s in SLOTS}
        for c in sorted(tax.concepts.values(), key=lambda c: c.id):
            if not c.parents:
                continue
            cat = categorize(tax, c)
            if cat is None:
                continue
            cls = c.radlex_class
            if cls == "anatomical entity":
                slot = "ANAT"
            elif cls in ("clinical finding", "imaging observation"):
                slot = "OBS"
            elif cls == "procedure":
                slot = "PROC"
            elif cls == "symptom":
                slot = "SYM"
            elif cls.endswith("descriptor") or cls.endswith("descriptors"):
                slot = "DESC"
            else:
                continue
            if c.preferred_label == cls:
                continue  # class heads read badly in running text
            for surface in c.surfaces:
                if self._mixed(surface):
                    continue  # would be split into constituents; only used via literal templates
                pools[slot].append((surface, c.id, cat))
        self.pools = pools
        self.surface_of_site = {}
        for c in tax.concepts.values():
            if c.radlex_class == "anatomical entity":
                self.surface_of_site[c.id] = [s for s in c.surfaces if not self._mixed(s)]

    def _mixed(self, surface: str) -> bool:
        words = surface.split()
        if len(words) < 2:
            return False
        cats = {hit[1] for w in words if (hit := resolve(self.tax, w)) is not None}
        return len(cats) > 1

    def draw(self, slot: str, rng: np.random.Generator, exclude=()) -> tuple[str, str, Category]:
        pool = [p for p in self.pools[slot] if p[0] not in exclude] or self.pools[slot]
        return pool[int(rng.integers(len(pool)))]


def _weighted_choice(rng, items, weights):
    w = np.asarray(weights, dtype=float)
    return items[int(rng.choice(len(items), p=w / w.sum()))]


def choose_sections(rng: np.random.Generator, weights: dict[SectionKind, float]) -> list[SectionKind]:
    """Uniform section count, kinds by weighted sampling without replacement,
    returned in canonical order."""
    lo, hi = SECTIONS_PER_REPORT
    k = int(rng.integers(lo, hi + 1))
    kinds = [kind for kind in SectionKind if kind in weights]
    chosen = []
    for _ in range(min(k, len(kinds))):
        remaining = [kk for kk in kinds if kk not in chosen]
        chosen.append(_weighted_choice(rng, remaining, [weights[kk] for kk in remaining]))
    return [kind for kind in SectionKind if kind in chosen]


def render(template: Template, filler: SlotFiller, rng: np.random.Generator, offset: int):
    """Fill one template; returns (text, gold entities with absolute offsets)."""
    pattern = template.pattern
    obs_sites: list[str] = []
    used: set[str] = set()
    pieces: list[str] = []
    entities: list[GoldEntity] = []
    pos = 0
    cursor = 0
    for m in _PIECE.finditer(pattern):
        lit = pattern[cursor : m.start()]
        pieces.append(lit)
        pos += len(lit)
        cursor = m.end()
        if m.group("slot"):
            slot = m.group("slot")
            if slot == "ANAT" and obs_sites and rng.random() < SITE_COUPLING:
                site = obs_sites[int(rng.integers(len(obs_sites)))]
                surfaces = filler.surface_of_site[site]
                surface = surfaces[int(rng.integers(len(surfaces)))]
                cid, cat = site, Category.ANATOMY
            else:
                surface, cid, cat = filler.draw(slot, rng, exclude=used)
            used.add(surface)
            if slot == "OBS":
                obs_sites = sorted(filler.tax.anatomical_sites(cid))
        else:
            surface = m.group("lit")
            cat = Category.parse(m.group("cat"))
            hit = resolve(filler.tax, surface)
            cid = hit[0].id if hit else None
        if pos == 0:
            surface = surface[0].upper() + surface[1:]
        entities.append(GoldEntity(template.section, offset + pos, offset + pos + len(surface), surface, cat, cid))
        pieces.append(surface)
        pos += len(surface)
    pieces.append(pattern[cursor:])
    return "".join(pieces), entities


# -- OCR-style noise, exactly undone by the default rule file ------------------

_LIGATURES = {"fi": "ﬁ", "fl": "ﬂ", "ff": "ﬀ"}


def add_noise(text: str, rng: np.random.Generator, rate: float = 0.05) -> str:
    out = []
    i = 0
    while i < len(text):
        pair = text[i : i + 2]
        ch = text[i]
        prev_alpha = i > 0 and text[i - 1].islower()
        next_alpha = i + 1 < len(text) and text[i + 1].islower()
        if pair in _LIGATURES and rng.random() < 3 * rate:
            out.append(_LIGATURES[pair])
            i += 2
            continue
        if ch == " " and rng.random() < rate:
            out.append("  ")
        elif ch == "o" and prev_alpha and next_alpha and rng.random() < rate:
            out.append("0")
        elif ch == "l" and prev_alpha and next_alpha and rng.random() < rate:
            out.append("1")
        elif ch.islower() and prev_alpha and rng.random() < rate / 5:
            out.append("\xad" + ch)
        else:
            out.append(ch)
        i += 1
    return "".join(out)


def generate_one(index: int, tax: Taxonomy, seed: int, templates: TemplateSet | None = None,
                 filler: SlotFiller | None = None, noise: float = 0.05) -> GeneratedReport:
    templates = templates or load_templates()
    filler = filler or SlotFiller(tax)
    rng = np.random.default_rng([seed, index])
    report_id = f"syn-{seed}-{index:06d}"
    kinds = choose_sections(rng, templates.section_weights)

    lines: list[str] = []
    pos = 0
    sectioned = SectionedReport(report_id, "")
    entities: list[GoldEntity] = []
    used_templates: list[str] = []
    for kind in kinds:
        header = _weighted_choice(rng, templates.headers[kind], [1.0] * len(templates.headers[kind]))
        lo, hi = SENTENCES_PER_SECTION[kind]
        n_sent = int(rng.integers(lo, hi + 1))
        line_start = pos
        sectioned.headers.append((pos, pos + len(header)))
        line = header
        sents: list[Sentence] = []
        for _ in range(n_sent):
            tpls = templates.templates[kind]
            tpl = _weighted_choice(rng, tpls, [t.weight for t in tpls])
            start = line_start + len(line) + 1
            text, ents = render(tpl, filler, rng, start)
            line = line + " " + text
            sents.append(Sentence(text, start, start + len(text)))
            entities.extend(ents)
            used_templates.append(tpl.pattern)
        sectioned.sections[kind] = sents
        sectioned.regions.append((kind, line_start + len(header), line_start + len(line) + 1))
        lines.append(line)
        pos = line_start + len(line) + 1
    clean = "\n".join(lines)
    # the final region does not own a trailing newline
    if sectioned.regions:
        k, a, b = sectioned.regions[-1]
        sectioned.regions[-1] = (k, a, len(clean))
    sectioned.text = clean
    # only annotated sections carry gold entities
    entities = [e for e in entities if e.section in ANNOTATED_SECTIONS]
    raw_text = add_noise(clean, rng, noise) if noise > 0 else clean
    return GeneratedReport(RawReport(report_id, raw_text), clean, sectioned, entities, used_templates)


def generate(n_reports: int, tax: Taxonomy, seed: int, noise: float = 0.05,
             templates: TemplateSet | None = None) -> list[GeneratedReport]:
    templates = templates or load_templates()
    filler = SlotFiller(tax)
    return [generate_one(i, tax, seed, templates, filler, noise) for i in range(n_reports)]
