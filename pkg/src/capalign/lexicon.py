"""Visual concept lexicon: surface forms, concept ids, and hyponym relations.

The lexicon defines the universal concept inventory shared by the image and
text sides.  Surface forms are lowercase words or underscore-joined bigrams
("fire_hydrant"); concept ids are opaque strings ("hydrant.n.01").  Hyponym
records declare kind-of edges (puppy-concept is a kind of dog-concept) used
to widen detector labels when matching sentences.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .errors import LexiconError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConceptSet:
    """Deduplicated, lexicographically sorted tuple of concept ids."""

    ids: tuple[str, ...] = ()

    @staticmethod
    def of(concepts: Iterable[str]) -> "ConceptSet":
        return ConceptSet(tuple(sorted(set(concepts))))

    def overlap(self, other: "ConceptSet") -> int:
        return len(set(self.ids) & set(other.ids))

    def union(self, other: "ConceptSet") -> "ConceptSet":
        return ConceptSet.of(self.ids + other.ids)

    def __contains__(self, concept: str) -> bool:
        return concept in set(self.ids)

    def __iter__(self) -> Iterator[str]:
        return iter(self.ids)

    def __len__(self) -> int:
        return len(self.ids)

    def __bool__(self) -> bool:
        return bool(self.ids)


@dataclass
class ConceptLexicon:
    """Immutable after load; safe to share across readers.

    entries maps each surface token to exactly one concept id.  hyponyms maps
    a concept id to its *direct* children; transitive closure is computed on
    demand.  Concept ids named only by hyponym records (no surface form) are
    still part of the concept inventory.  strip_plural_s enables a single
    trailing-"s" fallback lookup.
    """

    entries: dict[str, str] = field(default_factory=dict)
    hyponyms: dict[str, set[str]] = field(default_factory=dict)
    strip_plural_s: bool = False

    @property
    def concepts(self) -> tuple[str, ...]:
        ids = set(self.entries.values())
        for parent, children in self.hyponyms.items():
            ids.add(parent)
            ids.update(children)
        return tuple(sorted(ids))

    @property
    def concept_count(self) -> int:
        return len(self.concepts)

    def concept_index(self) -> dict[str, int]:
        """Stable concept id -> dense index map (sorted order)."""
        return {c: i for i, c in enumerate(self.concepts)}

    def lookup(self, surface: str) -> str | None:
        concept = self.entries.get(surface)
        if concept is None and self.strip_plural_s and surface.endswith("s"):
            concept = self.entries.get(surface[:-1])
        return concept

    def resolve_label(self, label: str) -> str | None:
        """Map a detector label (surface form or raw concept id) to a concept id."""
        concept = self.lookup(label)
        if concept is not None:
            return concept
        if label in self.concepts:
            return label
        return None


def load_lexicon(path, strip_plural_s: bool = False) -> ConceptLexicon:
    """Parse a lexicon file and validate the hyponym graph.

    File format: UTF-8, one record per line, tab separated.  Either
    ``surface<TAB>concept_id`` or ``!hypo<TAB>child_id<TAB>parent_id``.
    Lines starting with ``#`` and blank lines are ignored.

    Raises LexiconError on parse problems (with line number), on a surface
    form mapped to two different concepts, on hyponym records naming unknown
    concepts, and on cyclic hyponym relations.
    """
    entries: dict[str, str] = {}
    hypo_records: list[tuple[int, str, str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if fields[0] == "!hypo":
                if len(fields) != 3:
                    raise LexiconError(
                        f"{path}:{lineno}: hyponym record needs 3 fields, got {len(fields)}"
                    )
                hypo_records.append((lineno, fields[1], fields[2]))
            elif len(fields) == 2:
                surface, concept = fields
                if not surface or not concept:
                    raise LexiconError(f"{path}:{lineno}: empty surface or concept id")
                if surface in entries and entries[surface] != concept:
                    raise LexiconError(
                        f"{path}:{lineno}: surface '{surface}' already mapped to "
                        f"'{entries[surface]}', cannot remap to '{concept}'"
                    )
                entries[surface] = concept
            else:
                raise LexiconError(
                    f"{path}:{lineno}: expected 2 tab-separated fields, got {len(fields)}"
                )

    hyponyms: dict[str, set[str]] = {}
    for _, child, parent in hypo_records:
        hyponyms.setdefault(parent, set()).add(child)

    cycle_node = _find_cycle(hyponyms)
    if cycle_node is not None:
        raise LexiconError(f"hyponym relation is cyclic through '{cycle_node}'")

    return ConceptLexicon(entries=entries, hyponyms=hyponyms, strip_plural_s=strip_plural_s)


def _find_cycle(children: dict[str, set[str]]) -> str | None:
    """Return a node on some cycle of the parent->child relation, else None."""
    WHITE, GREY, BLACK = 0, 1, 2
    color = {node: WHITE for node in children}
    for kids in children.values():
        for kid in kids:
            color.setdefault(kid, WHITE)

    for start in sorted(color):
        if color[start] != WHITE:
            continue
        stack: list[tuple[str, list[str]]] = [(start, sorted(children.get(start, ())))]
        color[start] = GREY
        while stack:
            node, todo = stack[-1]
            if todo:
                nxt = todo.pop(0)
                if color[nxt] == GREY:
                    return nxt
                if color[nxt] == WHITE:
                    color[nxt] = GREY
                    stack.append((nxt, sorted(children.get(nxt, ()))))
            else:
                color[node] = BLACK
                stack.pop()
    return None


def extract_concepts(tokens: list[str], lex: ConceptLexicon) -> ConceptSet:
    """Concept ids whose surface forms occur in a token list.

    Greedy left-to-right scan; an underscore-joined bigram is tried before
    the unigram at each position (longest match wins) and every token is
    consumed at most once.  Unknown tokens are skipped silently.
    """
    found: set[str] = set()
    i = 0
    n = len(tokens)
    while i < n:
        if i + 1 < n:
            bigram = tokens[i] + "_" + tokens[i + 1]
            concept = lex.lookup(bigram)
            if concept is not None:
                found.add(concept)
                i += 2
                continue
        concept = lex.lookup(tokens[i])
        if concept is not None:
            found.add(concept)
        i += 1
    return ConceptSet.of(found)


def expand_hyponyms(detected: ConceptSet, lex: ConceptLexicon) -> ConceptSet:
    """Close a detected concept set under the transitive hyponym relation.

    A detector that reports a broad concept also licenses all of its
    (transitive) kinds.  Concepts absent from the lexicon are skipped with
    a warning.
    """
    known = set(lex.concepts)
    result: set[str] = set()
    for concept in detected:
        if concept not in known:
            log.warning("expand_hyponyms: concept %r not in lexicon, skipped", concept)
            continue
        result.add(concept)
        frontier = [concept]
        while frontier:
            node = frontier.pop()
            for child in lex.hyponyms.get(node, ()):
                if child not in result:
                    result.add(child)
                    frontier.append(child)
    return ConceptSet.of(result)
