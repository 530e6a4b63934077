"""Jaccard index and F-score for sounding-object masks."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .masks import BinaryMask

DEFAULT_BETA2 = 0.3


@dataclass(frozen=True)
class FrameEval:
    j: float
    f: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int


def _counts(pred: BinaryMask, gt: BinaryMask) -> tuple[int, int, int]:
    if pred.shape != gt.shape:
        raise ValueError(f"mask dimension mismatch: {pred.shape} vs {gt.shape}")
    p, g = pred.data, gt.data
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return tp, fp, fn


def jaccard_from_counts(tp: int, fp: int, fn: int) -> float:
    den = tp + fp + fn
    return 1.0 if den == 0 else tp / den


def fscore_from_counts(tp: int, fp: int, fn: int, beta2: float = DEFAULT_BETA2) -> float:
    if beta2 < 0:
        raise ValueError(f"beta2 must be >= 0, got {beta2}")
    if tp + fp + fn == 0:
        return 1.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return f_measure(precision, recall, beta2)


def f_measure(precision: float, recall: float, beta2: float = DEFAULT_BETA2) -> float:
    """Weighted harmonic mean; 0 when both inputs are 0."""
    if beta2 < 0:
        raise ValueError(f"beta2 must be >= 0, got {beta2}")
    den = beta2 * precision + recall
    if den == 0:
        return 0.0
    return (1 + beta2) * precision * recall / den


def jaccard(pred: BinaryMask, gt: BinaryMask) -> float:
    """IoU of prediction and ground truth; 1.0 when both are empty."""
    return jaccard_from_counts(*_counts(pred, gt))


def fscore(pred: BinaryMask, gt: BinaryMask, beta2: float = DEFAULT_BETA2) -> float:
    return fscore_from_counts(*_counts(pred, gt), beta2=beta2)


def evaluate_frame(pred: BinaryMask, gt: BinaryMask, beta2: float = DEFAULT_BETA2) -> FrameEval:
    tp, fp, fn = _counts(pred, gt)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return FrameEval(
        j=jaccard_from_counts(tp, fp, fn),
        f=fscore_from_counts(tp, fp, fn, beta2),
        precision=precision,
        recall=recall,
        tp=tp,
        fp=fp,
        fn=fn,
    )


@dataclass(frozen=True)
class DatasetSummary:
    mean_j: float
    mean_f: float
    frames: list[FrameEval] = field(default_factory=list)

    def to_json(self, names: Sequence[str] | None = None) -> dict:
        per_frame = [asdict(f) for f in self.frames]
        if names is not None:
            for d, n in zip(per_frame, names):
                d["frame"] = n
        return {"mean_j": self.mean_j, "mean_f": self.mean_f, "num_frames": len(self.frames), "frames": per_frame}


def evaluate_dataset(
    frames: Iterable[tuple[BinaryMask, BinaryMask]],
    beta2: float = DEFAULT_BETA2,
) -> DatasetSummary:
    """Unweighted mean of per-frame J and F."""
    evals = [evaluate_frame(p, g, beta2) for p, g in frames]
    if not evals:
        raise ValueError("cannot evaluate an empty dataset")
    mean_j = float(np.mean([e.j for e in evals]))
    mean_f = float(np.mean([e.f for e in evals]))
    return DatasetSummary(mean_j, mean_f, evals)


def to_binary(label_map, background: int = 0) -> BinaryMask:
    """Collapse a per-pixel class map to foreground/background."""
    return BinaryMask(np.asarray(label_map) != background)


def per_class_jaccard(pred_map, gt_map, background: int = 0) -> dict[int, float]:
    """J per class over every non-background class present in either map."""
    p = np.asarray(pred_map)
    g = np.asarray(gt_map)
    if p.shape != g.shape:
        raise ValueError(f"map dimension mismatch: {p.shape} vs {g.shape}")
    classes = sorted(set(np.unique(p).tolist()) | set(np.unique(g).tolist()))
    return {
        int(c): jaccard(BinaryMask(p == c), BinaryMask(g == c))
        for c in classes
        if c != background
    }
