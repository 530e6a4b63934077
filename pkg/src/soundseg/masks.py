"""Binary masks, run-length encoding, IoU and two-phase candidate filtering."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

BACKGROUND_LABEL = "background"
DEFAULT_IOU_THRESHOLD = 0.5


class BinaryMask:
    """Dense H x W boolean mask.  The underlying array is read-only."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.array(data, dtype=bool, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"mask must be a non-empty 2-D array, got shape {arr.shape}")
        arr.setflags(write=False)
        self.data = arr

    @classmethod
    def zeros(cls, height: int, width: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def area(self) -> int:
        return int(self.data.sum())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.data, other.data))

    def __hash__(self) -> int:
        return hash((self.shape, self.data.tobytes()))

    def __repr__(self) -> str:
        return f"BinaryMask({self.height}x{self.width}, area={self.area})"


def _check_same_shape(a: BinaryMask, b: BinaryMask) -> None:
    if a.shape != b.shape:
        raise ValueError(f"mask dimension mismatch: {a.shape} vs {b.shape}")


def rle_encode(mask: BinaryMask) -> list[int]:
    """Row-major alternating run lengths, starting with a (possibly zero) run of 0s."""
    flat = mask.data.ravel()
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return runs


def rle_decode(counts: Sequence[int], height: int, width: int) -> BinaryMask:
    if height < 1 or width < 1:
        raise ValueError(f"invalid mask dimensions {height}x{width}")
    counts = list(counts)
    if any((not isinstance(c, (int, np.integer))) or isinstance(c, bool) or c < 0 for c in counts):
        raise ValueError("run lengths must be non-negative integers")
    if sum(counts) != height * width:
        raise ValueError(f"run lengths sum to {sum(counts)}, expected {height * width}")
    values = np.arange(len(counts)) % 2 == 1
    flat = np.repeat(values, counts)
    return BinaryMask(flat.reshape(height, width))


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union; 0 when both masks are empty."""
    _check_same_shape(a, b)
    union = int(np.count_nonzero(a.data | b.data))
    if union == 0:
        return 0.0
    return int(np.count_nonzero(a.data & b.data)) / union


def union_of(masks: Iterable[BinaryMask], height: int | None = None, width: int | None = None) -> BinaryMask:
    """Pixelwise OR.  An empty list needs explicit ``height``/``width``."""
    masks = list(masks)
    if not masks:
        if height is None or width is None:
            raise ValueError("dimensions are required to take the union of no masks")
        return BinaryMask.zeros(height, width)
    shape = masks[0].shape
    if height is not None and width is not None and (height, width) != shape:
        raise ValueError(f"mask dimension mismatch: {shape} vs {(height, width)}")
    out = np.zeros(shape, dtype=bool)
    for m in masks:
        if m.shape != shape:
            raise ValueError(f"mask dimension mismatch: {m.shape} vs {shape}")
        out |= m.data
    return BinaryMask(out)


@dataclass(frozen=True, eq=True)
class ScoredInstance:
    label: str
    confidence: float
    mask: BinaryMask

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")


def confidence_order(instances: Sequence[ScoredInstance]) -> list[int]:
    """Indices by descending confidence, then label, then input position."""
    return sorted(range(len(instances)), key=lambda i: (-instances[i].confidence, instances[i].label, i))


def two_phase_filter(
    candidates: Sequence[ScoredInstance],
    t: float = DEFAULT_IOU_THRESHOLD,
) -> list[ScoredInstance]:
    """Reduce raw candidates to the potential-sounding set.

    Phase 1 keeps the highest-confidence candidate of every label.  Phase 2
    walks the rest in descending confidence and admits a candidate only if its
    IoU with every mask selected so far is strictly below ``t``.
    """
    return [candidates[i] for i in two_phase_filter_indices(candidates, t)]


def two_phase_filter_indices(candidates: Sequence[ScoredInstance], t: float = DEFAULT_IOU_THRESHOLD) -> list[int]:
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"IoU threshold must lie in [0, 1], got {t}")
    if candidates:
        shape = candidates[0].mask.shape
        for c in candidates:
            if c.mask.shape != shape:
                raise ValueError(f"mask dimension mismatch: {c.mask.shape} vs {shape}")
    order = confidence_order(candidates)
    selected: list[int] = []
    seen_labels: set[str] = set()
    rest = []
    for i in order:
        label = candidates[i].label
        if label in seen_labels:
            rest.append(i)
        else:
            seen_labels.add(label)
            selected.append(i)
    for i in rest:
        m = candidates[i].mask
        if all(iou(m, candidates[j].mask) < t for j in selected):
            selected.append(i)
    return sorted(selected, key=lambda i: (-candidates[i].confidence, candidates[i].label, i))


# ---------------------------------------------------------------------------
# instance files


def instance_to_json(inst: ScoredInstance) -> dict:
    return {"label": inst.label, "confidence": inst.confidence, "mask_rle": rle_encode(inst.mask)}


def instances_to_json(instances: Sequence[ScoredInstance], height: int, width: int) -> dict:
    return {"height": height, "width": width, "instances": [instance_to_json(i) for i in instances]}


def instances_from_json(doc: dict) -> tuple[list[ScoredInstance], int, int]:
    h, w = doc["height"], doc["width"]
    out = []
    for k, item in enumerate(doc["instances"]):
        try:
            mask = rle_decode(item["mask_rle"], h, w)
            out.append(ScoredInstance(item["label"], float(item["confidence"]), mask))
        except ValueError as exc:
            raise ValueError(f"instances[{k}]: {exc}") from None
    return out, h, w


def load_instances(path: str | Path) -> tuple[list[ScoredInstance], int, int]:
    with Path(path).open(encoding="utf-8") as fh:
        return instances_from_json(json.load(fh))
