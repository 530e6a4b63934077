"""Three-layer audio-visual tree: high-level groups -> visual categories -> audio tags.

Tree files are line oriented::

    # comment
    group animal
    category horse -> animal
    tag neigh -> horse
    tag "horse barking" -> horse

Names containing whitespace, ``#`` or ``"`` must be double-quoted; inside quotes
``\\"`` and ``\\\\`` are the only escapes.  Declarations may appear in any order;
parent references are resolved once the whole file has been read.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

logger = logging.getLogger(__name__)

ARROW = "->"
DEFAULT_TAU_TAG = 0.1


class TreeParseError(ValueError):
    """Malformed tree file.  ``line`` and ``column`` are 1-based."""

    def __init__(self, message: str, line: int, column: int, source: str | None = None):
        self.message = message
        self.line = line
        self.column = column
        self.source = source
        where = f"{source}:" if source else ""
        super().__init__(f"{where}{line}:{column}: {message}")


@dataclass(frozen=True)
class GroupNode:
    name: str


@dataclass(frozen=True)
class CategoryNode:
    name: str
    group: str


@dataclass(frozen=True)
class TagNode:
    name: str
    category: str


class AudioVisualTree:
    """Immutable, validated three-layer tree.

    Layer order follows declaration order in the source file.  Use
    :func:`build_tree` or :func:`parse_tree` to construct one.
    """

    __slots__ = ("groups", "categories", "tags", "_group_of", "_category_of", "_members", "_children")

    def __init__(self, groups: Iterable[GroupNode], categories: Iterable[CategoryNode], tags: Iterable[TagNode]):
        groups, categories, tags = tuple(groups), tuple(categories), tuple(tags)
        members: dict[str, list[str]] = {g.name: [] for g in groups}
        for c in categories:
            members[c.group].append(c.name)
        children: dict[str, list[str]] = {c.name: [] for c in categories}
        for t in tags:
            children[t.category].append(t.name)
        init = object.__setattr__
        init(self, "groups", groups)
        init(self, "categories", categories)
        init(self, "tags", tags)
        init(self, "_group_of", {c.name: c.group for c in categories})
        init(self, "_category_of", {t.name: t.category for t in tags})
        init(self, "_members", {k: tuple(v) for k, v in members.items()})
        init(self, "_children", {k: tuple(v) for k, v in children.items()})

    def __setattr__(self, name, value):
        raise AttributeError("AudioVisualTree is immutable")

    def __delattr__(self, name):
        raise AttributeError("AudioVisualTree is immutable")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AudioVisualTree):
            return NotImplemented
        return (self.groups, self.categories, self.tags) == (other.groups, other.categories, other.tags)

    def __hash__(self) -> int:
        return hash((self.groups, self.categories, self.tags))

    def __repr__(self) -> str:
        return f"AudioVisualTree(groups={len(self.groups)}, categories={len(self.categories)}, tags={len(self.tags)})"

    @property
    def layer_sizes(self) -> tuple[int, int, int]:
        return len(self.groups), len(self.categories), len(self.tags)

    def has_category(self, name: str) -> bool:
        return name in self._group_of

    def has_tag(self, name: str) -> bool:
        return name in self._category_of

    def group_of(self, category: str) -> str:
        try:
            return self._group_of[category]
        except KeyError:
            raise KeyError(f"unknown category {category!r}") from None

    def category_of(self, tag: str) -> str:
        try:
            return self._category_of[tag]
        except KeyError:
            raise KeyError(f"unknown tag {tag!r}") from None

    def categories_in(self, group: str) -> tuple[str, ...]:
        try:
            return self._members[group]
        except KeyError:
            raise KeyError(f"unknown group {group!r}") from None

    def tags_of(self, category: str) -> tuple[str, ...]:
        try:
            return self._children[category]
        except KeyError:
            raise KeyError(f"unknown category {category!r}") from None

    def sibling_categories(self, category: str) -> frozenset[str]:
        return sibling_categories(self, category)


def build_tree(
    groups: Iterable[str],
    categories: Iterable[tuple[str, str]],
    tags: Iterable[tuple[str, str]],
) -> AudioVisualTree:
    """Validate and assemble a tree from ``(name, parent)`` pairs."""
    group_nodes = [GroupNode(g) for g in groups]
    cat_nodes = [CategoryNode(c, g) for c, g in categories]
    tag_nodes = [TagNode(t, c) for t, c in tags]
    _check_unique("group", [g.name for g in group_nodes])
    _check_unique("category", [c.name for c in cat_nodes])
    _check_unique("tag", [t.name for t in tag_nodes])
    group_names = {g.name for g in group_nodes}
    cat_names = {c.name for c in cat_nodes}
    for c in cat_nodes:
        if c.group not in group_names:
            raise ValueError(f"category {c.name!r} references unknown group {c.group!r}")
    for t in tag_nodes:
        if t.category not in cat_names:
            raise ValueError(f"tag {t.name!r} references unknown category {t.category!r}")
    return AudioVisualTree(group_nodes, cat_nodes, tag_nodes)


def _check_unique(layer: str, names: list[str]) -> None:
    seen: set[str] = set()
    for n in names:
        if n in seen:
            raise ValueError(f"duplicate {layer} name {n!r}")
        seen.add(n)


# ---------------------------------------------------------------------------
# parsing / serialization


def _tokenize(line: str, lineno: int, source: str | None) -> list[tuple[str, int, bool]]:
    """Split one line into ``(text, column, quoted)`` tokens, dropping comments."""
    tokens = []
    i, n = 0, len(line)
    while i < n:
        ch = line[i]
        if ch.isspace():
            i += 1
            continue
        if ch == "#":
            break
        start = i
        if ch == '"':
            i += 1
            buf = []
            while True:
                if i >= n:
                    raise TreeParseError("unterminated quoted name", lineno, start + 1, source)
                ch = line[i]
                if ch == "\\":
                    if i + 1 >= n or line[i + 1] not in '"\\':
                        raise TreeParseError("invalid escape in quoted name", lineno, i + 1, source)
                    buf.append(line[i + 1])
                    i += 2
                elif ch == '"':
                    i += 1
                    break
                else:
                    buf.append(ch)
                    i += 1
            if i < n and not line[i].isspace() and line[i] != "#":
                raise TreeParseError("expected whitespace after quoted name", lineno, i + 1, source)
            tokens.append(("".join(buf), start + 1, True))
        else:
            while i < n and not line[i].isspace() and line[i] not in '"#':
                i += 1
            if i < n and line[i] == '"':
                raise TreeParseError("stray quote inside bare name", lineno, i + 1, source)
            tokens.append((line[start:i], start + 1, False))
    return tokens


_ARITY = {"group": 2, "category": 4, "tag": 4}


def parse_tree(text: str, source: str | None = None) -> AudioVisualTree:
    """Parse tree-file text.  Raises :class:`TreeParseError` with a line/column."""
    groups: list[tuple[str, int, int]] = []
    cats: list[tuple[str, str, int, int, int]] = []
    tags: list[tuple[str, str, int, int, int]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        toks = _tokenize(line, lineno, source)
        if not toks:
            continue
        kw, kcol, kquoted = toks[0]
        if kquoted or kw not in _ARITY:
            raise TreeParseError(f"expected 'group', 'category' or 'tag', got {kw!r}", lineno, kcol, source)
        arity = _ARITY[kw]
        if len(toks) != arity:
            col = toks[arity][1] if len(toks) > arity else len(line) + 1
            raise TreeParseError(f"'{kw}' takes {arity - 1} operand(s)", lineno, col, source)
        name, ncol, nquoted = toks[1]
        if not name:
            raise TreeParseError("empty name", lineno, ncol, source)
        if not nquoted and name == ARROW:
            raise TreeParseError("expected a name, got '->'", lineno, ncol, source)
        if kw == "group":
            groups.append((name, lineno, ncol))
            continue
        arrow, acol, aquoted = toks[2]
        if aquoted or arrow != ARROW:
            raise TreeParseError("expected '->'", lineno, acol, source)
        parent, pcol, pquoted = toks[3]
        if not parent or (not pquoted and parent == ARROW):
            raise TreeParseError("expected a parent name", lineno, pcol, source)
        (cats if kw == "category" else tags).append((name, parent, lineno, ncol, pcol))

    _check_dupes("group", [(g, ln, col) for g, ln, col in groups], source)
    _check_dupes("category", [(c, ln, col) for c, _, ln, col, _ in cats], source)
    _check_dupes("tag", [(t, ln, col) for t, _, ln, col, _ in tags], source)
    group_names = {g for g, _, _ in groups}
    cat_names = {c for c, *_ in cats}
    for c, parent, ln, _, pcol in cats:
        if parent not in group_names:
            raise TreeParseError(f"category {c!r} references undeclared group {parent!r}", ln, pcol, source)
    for t, parent, ln, _, pcol in tags:
        if parent not in cat_names:
            raise TreeParseError(f"tag {t!r} references undeclared category {parent!r}", ln, pcol, source)
    return AudioVisualTree(
        (GroupNode(g) for g, _, _ in groups),
        (CategoryNode(c, p) for c, p, *_ in cats),
        (TagNode(t, p) for t, p, *_ in tags),
    )


def _check_dupes(layer: str, entries: list[tuple[str, int, int]], source: str | None) -> None:
    first: dict[str, int] = {}
    for name, ln, col in entries:
        if name in first:
            raise TreeParseError(f"duplicate {layer} name {name!r} (first declared on line {first[name]})", ln, col, source)
        first[name] = ln


def _quote(name: str) -> str:
    bare = name and name != ARROW and not any(ch.isspace() or ch in '"#\\' for ch in name)
    if bare:
        return name
    return '"' + name.replace("\\", "\\\\").replace('"', '\\"') + '"'


def serialize_tree(tree: AudioVisualTree) -> str:
    lines = [f"group {_quote(g.name)}" for g in tree.groups]
    lines += [f"category {_quote(c.name)} {ARROW} {_quote(c.group)}" for c in tree.categories]
    lines += [f"tag {_quote(t.name)} {ARROW} {_quote(t.category)}" for t in tree.tags]
    return "\n".join(lines) + "\n"


def load_tree(path: str | Path) -> AudioVisualTree:
    path = Path(path)
    return parse_tree(path.read_text(encoding="utf-8"), source=str(path))


def reference_tree_text() -> str:
    return resources.files("soundseg").joinpath("data/reference_tree.txt").read_text(encoding="utf-8")


def load_reference_tree() -> AudioVisualTree:
    """The shipped 24-group / 156-category / 527-tag tree."""
    return parse_tree(reference_tree_text(), source="reference_tree.txt")


# ---------------------------------------------------------------------------
# tag scores


def validate_tag_scores(scores: Mapping[str, object], source: str = "<scores>") -> dict[str, float]:
    out = {}
    for name, value in scores.items():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"{source}: confidence for tag {name!r} is not a number")
        value = float(value)
        if not (0.0 <= value <= 1.0) or math.isnan(value):
            raise ValueError(f"{source}: confidence for tag {name!r} outside [0, 1]: {value}")
        out[name] = value
    return out


def load_tag_scores(path: str | Path) -> dict[str, float]:
    """Read a JSON object mapping tag name to confidence."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a JSON object of tag -> confidence")
    return validate_tag_scores(data, str(path))


@dataclass(frozen=True)
class CategoryScores:
    """Categories with positive aggregated audio evidence (the potential-sounding set)."""

    scores: dict[str, float] = field(default_factory=dict)
    unknown_tags: tuple[str, ...] = ()

    def __contains__(self, name: object) -> bool:
        return name in self.scores

    def __len__(self) -> int:
        return len(self.scores)

    def __iter__(self):
        return iter(self.scores)

    def __getitem__(self, name: str) -> float:
        return self.scores[name]

    def items(self):
        return self.scores.items()


def aggregate_tag_scores(
    tree: AudioVisualTree,
    scores: Mapping[str, float],
    tau_tag: float = DEFAULT_TAU_TAG,
) -> CategoryScores:
    """Sum tag confidences at or above ``tau_tag`` into their parent categories.

    Only categories whose sum is strictly positive are kept.  Tags outside the
    tree are skipped and reported in ``unknown_tags``.
    """
    if not 0.0 <= tau_tag <= 1.0:
        raise ValueError(f"tau_tag must lie in [0, 1], got {tau_tag}")
    totals: dict[str, float] = {}
    unknown = []
    for tag, conf in scores.items():
        if not tree.has_tag(tag):
            unknown.append(tag)
            continue
        if conf < tau_tag:
            continue
        cat = tree.category_of(tag)
        totals[cat] = totals.get(cat, 0.0) + conf
    if unknown:
        logger.warning("skipped %d tag(s) not present in the tree", len(unknown))
    # emit in tree order so downstream output is independent of the score file's key order
    ordered = {c.name: totals[c.name] for c in tree.categories if totals.get(c.name, 0.0) > 0.0}
    return CategoryScores(ordered, tuple(sorted(unknown)))


def sibling_categories(tree: AudioVisualTree, category: str) -> frozenset[str]:
    """Categories sharing ``category``'s group, excluding ``category`` itself."""
    group = tree.group_of(category)
    return frozenset(c for c in tree.categories_in(group) if c != category)
