"""In-memory RadLex-style ontology with the handful of queries the
pretraining pipeline needs."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from radpretrain import resources

ANATOMICAL_ENTITY = "anatomical entity"
BODY_SYSTEM_ROOT = "body-system-specific disorder"


class TaxonomyError(ValueError):
    """Raised when an ontology file violates a structural invariant."""


@dataclass(frozen=True, slots=True)
class Concept:
    id: str
    preferred_label: str
    synonyms: tuple[str, ...]
    radlex_class: str
    parents: tuple[str, ...]
    anatomical_site: tuple[str, ...] = ()

    @property
    def surfaces(self) -> tuple[str, ...]:
        return (self.preferred_label,) + self.synonyms


def normalize_surface(surface: str) -> str:
    return " ".join(surface.lower().split())


class Taxonomy:
    """Immutable after construction; all queries are read-only."""

    def __init__(self, concepts: Iterable[Concept]):
        self.concepts: dict[str, Concept] = {}
        labels: dict[str, str] = {}
        for c in concepts:
            if c.id in self.concepts:
                raise TaxonomyError(f"duplicate concept id {c.id!r}")
            if c.preferred_label in labels:
                raise TaxonomyError(
                    f"duplicate preferred label {c.preferred_label!r} ({labels[c.preferred_label]}, {c.id})"
                )
            self.concepts[c.id] = c
            labels[c.preferred_label] = c.id
        self._validate()

        index: dict[str, list[str]] = {}
        for c in self.concepts.values():
            for s in dict.fromkeys(normalize_surface(s) for s in c.surfaces):
                index.setdefault(s, []).append(c.id)
        self.surface_index: dict[str, tuple[str, ...]] = {k: tuple(v) for k, v in index.items()}
        self.max_surface_words = max((len(s.split()) for s in self.surface_index), default=0)

        self.class_roots: dict[str, list[str]] = {}
        for c in self.concepts.values():
            if not c.parents:
                self.class_roots.setdefault(c.radlex_class, []).append(c.id)
        self._ancestors: dict[str, frozenset[str]] = {}
        self._sites: dict[str, frozenset[str]] = {}
        root = next((c for c in self.concepts.values() if c.preferred_label == BODY_SYSTEM_ROOT), None)
        self._systems = frozenset(
            c.id for c in self.concepts.values() if root is not None and root.id in c.parents
        )

    def __len__(self) -> int:
        return len(self.concepts)

    def __contains__(self, concept_id: str) -> bool:
        return concept_id in self.concepts

    def _validate(self) -> None:
        for c in self.concepts.values():
            for p in c.parents:
                if p not in self.concepts:
                    raise TaxonomyError(f"concept {c.id}: dangling parent reference {p!r}")
            for s in c.anatomical_site:
                if s not in self.concepts:
                    raise TaxonomyError(f"concept {c.id}: dangling anatomical_site reference {s!r}")
                if self.concepts[s].radlex_class != ANATOMICAL_ENTITY:
                    raise TaxonomyError(f"concept {c.id}: anatomical_site {s!r} is not an anatomical entity")
        # iterative DFS; grey nodes on the stack reveal a cycle
        WHITE, GREY, BLACK = 0, 1, 2
        color = dict.fromkeys(self.concepts, WHITE)
        for start in self.concepts:
            if color[start] != WHITE:
                continue
            path = [start]
            stack = [iter(self.concepts[start].parents)]
            color[start] = GREY
            while stack:
                nxt = next(stack[-1], None)
                if nxt is None:
                    color[path.pop()] = BLACK
                    stack.pop()
                elif color[nxt] == GREY:
                    cycle = path[path.index(nxt):] + [nxt]
                    raise TaxonomyError("cycle in parent graph: " + " -> ".join(cycle))
                elif color[nxt] == WHITE:
                    color[nxt] = GREY
                    path.append(nxt)
                    stack.append(iter(self.concepts[nxt].parents))

    # -- queries ------------------------------------------------------------

    def get(self, concept_id: str) -> Concept:
        try:
            return self.concepts[concept_id]
        except KeyError:
            raise LookupError(f"unknown concept id {concept_id!r}") from None

    def lookup(self, surface: str) -> list[Concept] | None:
        """Exact match against preferred labels and synonyms."""
        ids = self.surface_index.get(normalize_surface(surface))
        if not ids:
            return None
        return [self.concepts[i] for i in ids]

    def class_of(self, c: Concept | str) -> str:
        return self.get(c if isinstance(c, str) else c.id).radlex_class

    def ancestors(self, concept_id: str) -> frozenset[str]:
        """Strict ancestors of *concept_id*."""
        cached = self._ancestors.get(concept_id)
        if cached is None:
            seen: set[str] = set()
            todo = list(self.get(concept_id).parents)
            while todo:
                p = todo.pop()
                if p not in seen:
                    seen.add(p)
                    todo.extend(self.concepts[p].parents)
            cached = self._ancestors[concept_id] = frozenset(seen)
        return cached

    def anatomical_sites(self, c: Concept | str) -> frozenset[str]:
        """Declared sites, else those of the nearest declaring ancestors.

        Ancestors at the same (shortest) distance contribute jointly.
        """
        cid = c if isinstance(c, str) else c.id
        if cid not in self.concepts:
            return frozenset()
        cached = self._sites.get(cid)
        if cached is not None:
            return cached
        result: frozenset[str] = frozenset()
        frontier = [cid]
        seen = {cid}
        while frontier:
            declared = [s for x in frontier for s in self.concepts[x].anatomical_site]
            if declared:
                result = frozenset(declared)
                break
            nxt = []
            for x in frontier:
                for p in self.concepts[x].parents:
                    if p not in seen:
                        seen.add(p)
                        nxt.append(p)
            frontier = nxt
        self._sites[cid] = result
        return result

    def body_systems(self, c: Concept | str) -> frozenset[str]:
        cid = c if isinstance(c, str) else c.id
        return self._systems & (self.ancestors(cid) | {cid})

    def same_body_system(self, a: Concept | str, b: Concept | str) -> bool:
        """True iff both descend from one immediate child of the
        body-system-specific disorder root."""
        return bool(self.body_systems(a) & self.body_systems(b))

    def walk_up(self, concept_id: str):
        """Breadth-first ancestors with their distance (for audits)."""
        q = deque([(concept_id, 0)])
        seen = {concept_id}
        while q:
            cid, d = q.popleft()
            yield cid, d
            for p in self.concepts[cid].parents:
                if p not in seen:
                    seen.add(p)
                    q.append((p, d + 1))


def _concept_from_json(obj: dict) -> Concept:
    return Concept(
        id=str(obj["id"]),
        preferred_label=normalize_surface(obj["label"]),
        synonyms=tuple(normalize_surface(s) for s in obj.get("synonyms", [])),
        radlex_class=obj["class"],
        parents=tuple(obj.get("parents", [])),
        anatomical_site=tuple(obj.get("anatomical_site") or []),
    )


def load_taxonomy(path: str | Path | None = None) -> Taxonomy:
    """Load a JSON-lines ontology file (the bundled fixture by default)."""
    path = Path(path) if path is not None else resources.path("taxonomy.jsonl")
    concepts = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                concepts.append(_concept_from_json(json.loads(line)))
            except (KeyError, json.JSONDecodeError) as exc:
                raise TaxonomyError(f"{path}:{lineno}: malformed concept: {exc}") from exc
    return Taxonomy(concepts)
