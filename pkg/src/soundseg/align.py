"""Map caption nouns onto the category vocabulary and derive silent-object labels."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

# similarities this close count as a tie; rounding alone moves a cosine by ~1e-16
TIE_TOLERANCE = 1e-12


class EmbeddingFormatError(ValueError):
    pass


class EmbeddingTable:
    """Immutable word -> vector lookup.  Keys are lowercase."""

    def __init__(self, vectors: dict[str, np.ndarray]):
        if not vectors:
            raise ValueError("embedding table is empty")
        dims = {np.asarray(v).shape for v in vectors.values()}
        if len(dims) != 1 or len(next(iter(dims))) != 1:
            raise ValueError(f"embedding vectors must share one dimension, got shapes {sorted(dims)}")
        self._vectors = {}
        for word, v in vectors.items():
            arr = np.array(v, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite embedding for {word!r}")
            if not np.any(arr):
                raise ValueError(f"zero embedding for {word!r}")
            arr.setflags(write=False)
            self._vectors[word.lower()] = arr
        self.dim = next(iter(dims))[0]

    def __contains__(self, word: str) -> bool:
        return word.lower() in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)

    def __getitem__(self, word: str) -> np.ndarray:
        return self._vectors[word.lower()]

    def words(self) -> list[str]:
        return list(self._vectors)

    def phrase(self, text: str) -> np.ndarray | None:
        """Mean vector of the words in ``text``; None if any word is missing or the mean is zero."""
        words = text.lower().split()
        if not words or any(w not in self._vectors for w in words):
            return None
        vec = np.mean([self._vectors[w] for w in words], axis=0)
        return vec if np.any(vec) else None


def parse_embeddings(text: str, source: str = "<embeddings>") -> EmbeddingTable:
    """Parse the ``word f1 ... fD`` text layout.  D comes from the first entry."""
    vectors: dict[str, np.ndarray] = {}
    dim = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        word, values = parts[0].lower(), parts[1:]
        if dim is None:
            dim = len(values)
            if dim == 0:
                raise EmbeddingFormatError(f"{source}:{lineno}: entry has no vector components")
        if len(values) != dim:
            raise EmbeddingFormatError(f"{source}:{lineno}: expected {dim} components, got {len(values)}")
        try:
            vec = np.array([float(v) for v in values])
        except ValueError:
            raise EmbeddingFormatError(f"{source}:{lineno}: non-numeric component") from None
        if not np.all(np.isfinite(vec)):
            raise EmbeddingFormatError(f"{source}:{lineno}: non-finite component")
        if not np.any(vec):
            raise EmbeddingFormatError(f"{source}:{lineno}: zero vector for {word!r}")
        if word in vectors:
            raise EmbeddingFormatError(f"{source}:{lineno}: duplicate word {word!r}")
        vectors[word] = vec
    if not vectors:
        raise EmbeddingFormatError(f"{source}: no entries")
    return EmbeddingTable(vectors)


def load_embeddings(path: str | Path) -> EmbeddingTable:
    path = Path(path)
    return parse_embeddings(path.read_text(encoding="utf-8"), str(path))


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


@dataclass(frozen=True)
class Alignment:
    """Per-noun best matches.  ``pairs`` holds ``(noun, category, similarity)``."""

    pairs: list[tuple[str, str, float]] = field(default_factory=list)
    dropped_nouns: list[str] = field(default_factory=list)
    dropped_categories: list[str] = field(default_factory=list)

    @property
    def canonical(self) -> list[str]:
        out: list[str] = []
        for _, cat, _ in self.pairs:
            if cat not in out:
                out.append(cat)
        return out


def align_nouns(
    nouns: Sequence[str],
    categories: Sequence[str],
    emb: EmbeddingTable,
    min_similarity: float | None = None,
) -> Alignment:
    """Replace each noun by its most similar category.

    Ties (within ``TIE_TOLERANCE``) go to the lexicographically smallest
    category, so rescaling a vector cannot flip a decision.  Out-of-vocabulary
    words are dropped with a warning.  With ``min_similarity`` set, nouns whose
    best similarity falls below it are dropped as well.
    """
    cats = list(dict.fromkeys(c.lower() for c in categories))
    if not cats:
        raise ValueError("category set is empty")
    cat_vecs, dropped_cats = [], []
    for c in cats:
        v = emb.phrase(c)
        if v is None:
            dropped_cats.append(c)
        else:
            cat_vecs.append((c, v))
    if dropped_cats:
        logger.warning("categories missing from embeddings: %s", ", ".join(dropped_cats))
    if not cat_vecs:
        raise ValueError("no category has an embedding")

    pairs, dropped = [], []
    for noun in nouns:
        noun = noun.lower()
        v = emb.phrase(noun)
        if v is None:
            dropped.append(noun)
            continue
        sims = [(c, cosine(v, cv)) for c, cv in cat_vecs]
        top = max(s for _, s in sims)
        best_cat, best_sim = min((c, s) for c, s in sims if s >= top - TIE_TOLERANCE)
        if min_similarity is not None and best_sim < min_similarity:
            dropped.append(noun)
            continue
        pairs.append((noun, best_cat, best_sim))
    if dropped:
        logger.warning("nouns dropped during alignment: %s", ", ".join(dropped))
    return Alignment(pairs, dropped, dropped_cats)


def canonicalize_nouns(
    nouns: Sequence[str],
    categories: Sequence[str],
    emb: EmbeddingTable,
    min_similarity: float | None = None,
) -> list[str]:
    """Aligned nouns with duplicates collapsed, in first-seen order."""
    return align_nouns(nouns, categories, emb, min_similarity).canonical


def silent_labels(canonical: Iterable[str], sounding: Iterable[str]) -> list[str]:
    """``canonical`` minus ``sounding``, keeping the order of ``canonical``."""
    exclude = set(sounding)
    return [c for c in dict.fromkeys(canonical) if c not in exclude]
