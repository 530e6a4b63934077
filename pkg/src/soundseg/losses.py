"""Silent-object-aware segmentation objective and its gradient checks.

Predictions carry ``C + 1`` class probabilities (index ``C`` is "no object")
and a soft mask.  Ground truths are matched one-to-one to predictions by an
exact rectangular assignment; unmatched predictions form the no-object set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .masks import BinaryMask, union_of

EPS = 1e-7


@dataclass(frozen=True)
class SoaoConfig:
    lambda_f: float = 20.0
    lambda_d: float = 1.0
    lambda_cls: float = 1.0
    lambda_ins: float = 1.0
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    dice_smooth: float = 1.0
    tau_sil: float = 0.5

    def __post_init__(self):
        for name in ("lambda_f", "lambda_d", "lambda_cls", "lambda_ins", "dice_smooth"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if not (math.isfinite(self.focal_gamma) and math.isfinite(self.focal_alpha)):
            raise ValueError("focal parameters must be finite")
        if not 0.0 <= self.tau_sil <= 1.0:
            raise ValueError(f"tau_sil must lie in [0, 1], got {self.tau_sil}")


class Prediction:
    __slots__ = ("class_probs", "mask_probs")

    def __init__(self, class_probs, mask_probs):
        cp = np.asarray(class_probs, dtype=np.float64).copy()
        mp = np.asarray(mask_probs, dtype=np.float64).copy()
        if cp.ndim != 1 or cp.size < 2:
            raise ValueError("class_probs must be a vector of length C + 1 >= 2")
        if mp.ndim != 2 or min(mp.shape) < 1:
            raise ValueError("mask_probs must be a non-empty H x W array")
        if not (np.all(np.isfinite(cp)) and np.all(cp >= 0) and np.all(cp <= 1)):
            raise ValueError("class probabilities must lie in [0, 1]")
        if abs(cp.sum() - 1.0) > 1e-9:
            raise ValueError(f"class probabilities sum to {cp.sum()!r}, expected 1")
        if not (np.all(np.isfinite(mp)) and np.all(mp >= 0) and np.all(mp <= 1)):
            raise ValueError("mask probabilities must lie in [0, 1]")
        cp.setflags(write=False)
        mp.setflags(write=False)
        self.class_probs = cp
        self.mask_probs = mp

    @property
    def num_classes(self) -> int:
        """Number of real classes, excluding "no object"."""
        return self.class_probs.size - 1

    @property
    def background(self) -> int:
        return self.class_probs.size - 1

    def __repr__(self) -> str:
        return f"Prediction(C={self.num_classes}, mask={self.mask_probs.shape})"


@dataclass(frozen=True)
class GroundTruth:
    class_id: int
    mask: BinaryMask

    def __post_init__(self):
        if isinstance(self.class_id, bool) or not isinstance(self.class_id, (int, np.integer)) or self.class_id < 0:
            raise ValueError(f"class_id must be a non-negative integer, got {self.class_id!r}")


def _target(gt) -> np.ndarray:
    if isinstance(gt, BinaryMask):
        return gt.data.astype(np.float64)
    return np.asarray(gt, dtype=np.float64)


def _check_dims(probs: np.ndarray, target: np.ndarray) -> None:
    if probs.shape != target.shape:
        raise ValueError(f"dimension mismatch: {probs.shape} vs {target.shape}")


def _clamp(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Clamped probabilities and the mask of entries where the clamp is inactive."""
    return np.clip(p, EPS, 1.0 - EPS), (p > EPS) & (p < 1.0 - EPS)


# ---------------------------------------------------------------------------
# per-pair terms


def focal_loss(mask_probs, gt, gamma: float = 2.0, alpha: float = 0.25) -> float:
    """Mean sigmoid focal loss over pixels."""
    p = np.asarray(mask_probs, dtype=np.float64)
    g = _target(gt)
    _check_dims(p, g)
    p, _ = _clamp(p)
    pos = -alpha * (1.0 - p) ** gamma * np.log(p)
    neg = -(1.0 - alpha) * p**gamma * np.log1p(-p)
    return float(np.mean(np.where(g > 0.5, pos, neg)))


def focal_loss_grad(mask_probs, gt, gamma: float = 2.0, alpha: float = 0.25) -> np.ndarray:
    p = np.asarray(mask_probs, dtype=np.float64)
    g = _target(gt)
    _check_dims(p, g)
    p, active = _clamp(p)
    q = 1.0 - p
    d_pos = -alpha * (-gamma * q ** (gamma - 1.0) * np.log(p) + q**gamma / p)
    d_neg = -(1.0 - alpha) * (gamma * p ** (gamma - 1.0) * np.log1p(-p) - p**gamma / q)
    return np.where(g > 0.5, d_pos, d_neg) * active / p.size


def dice_loss(mask_probs, gt, smooth: float = 1.0) -> float:
    """``1 - 2(sum(p*g) + s) / ((sum(p) + s) + (sum(g) + s))``."""
    p = np.asarray(mask_probs, dtype=np.float64)
    g = _target(gt)
    _check_dims(p, g)
    num = 2.0 * (np.sum(p * g) + smooth)
    den = np.sum(p) + np.sum(g) + 2.0 * smooth
    if den == 0.0:
        return 0.0
    return float(1.0 - num / den)


def dice_loss_grad(mask_probs, gt, smooth: float = 1.0) -> np.ndarray:
    p = np.asarray(mask_probs, dtype=np.float64)
    g = _target(gt)
    _check_dims(p, g)
    num = 2.0 * (np.sum(p * g) + smooth)
    den = np.sum(p) + np.sum(g) + 2.0 * smooth
    if den == 0.0:
        return np.zeros_like(p)
    return -(2.0 * g * den - num) / den**2


def cross_entropy(class_probs, class_id: int) -> float:
    p = np.asarray(class_probs, dtype=np.float64)
    return float(-math.log(min(max(p[class_id], EPS), 1.0 - EPS)))


def cross_entropy_grad(class_probs, class_id: int) -> np.ndarray:
    p = np.asarray(class_probs, dtype=np.float64)
    out = np.zeros_like(p)
    if EPS < p[class_id] < 1.0 - EPS:
        out[class_id] = -1.0 / p[class_id]
    return out


def soft_overlap(mask_probs, region) -> float:
    """Soft IoU ``sum(min(m, U)) / sum(max(m, U))`` against a binary region; 0 if both vanish."""
    m = np.asarray(mask_probs, dtype=np.float64)
    u = _target(region)
    _check_dims(m, u)
    den = np.sum(np.maximum(m, u))
    if den == 0.0:
        return 0.0
    return float(np.sum(np.minimum(m, u)) / den)


def soft_overlap_grad(mask_probs, region) -> np.ndarray:
    # Valid away from the kinks at m == U, i.e. for 0 < m < 1 with binary U.
    m = np.asarray(mask_probs, dtype=np.float64)
    u = _target(region)
    _check_dims(m, u)
    den = np.sum(np.maximum(m, u))
    if den == 0.0:
        return np.zeros_like(m)
    num = np.sum(np.minimum(m, u))
    d_num = (m < u).astype(np.float64)
    d_den = (m > u).astype(np.float64)
    return d_num / den - num * d_den / den**2


def hard_overlap(mask_probs, region, threshold: float = 0.5) -> float:
    """Binary IoU after thresholding ``mask_probs`` at ``threshold`` (inclusive)."""
    m = np.asarray(mask_probs, dtype=np.float64)
    u = _target(region) > 0.5
    _check_dims(m, u)
    b = m >= threshold
    union = np.count_nonzero(b | u)
    if union == 0:
        return 0.0
    return np.count_nonzero(b & u) / union


# ---------------------------------------------------------------------------
# matching and the combined objective


def pair_cost(pred: Prediction, gt: GroundTruth, cfg: SoaoConfig) -> float:
    return (
        cfg.lambda_f * focal_loss(pred.mask_probs, gt.mask, cfg.focal_gamma, cfg.focal_alpha)
        + cfg.lambda_d * dice_loss(pred.mask_probs, gt.mask, cfg.dice_smooth)
        + cross_entropy(pred.class_probs, gt.class_id)
    )


def cost_matrix(preds: Sequence[Prediction], gts: Sequence[GroundTruth], cfg: SoaoConfig) -> np.ndarray:
    """Rows are ground truths, columns predictions."""
    _validate(preds, gts)
    out = np.empty((len(gts), len(preds)))
    for j, g in enumerate(gts):
        for i, p in enumerate(preds):
            out[j, i] = pair_cost(p, g, cfg)
    return out


def match(preds: Sequence[Prediction], gts: Sequence[GroundTruth], cfg: SoaoConfig | None = None) -> dict[int, int]:
    """Minimum-cost injective assignment ground-truth index -> prediction index."""
    cfg = cfg or SoaoConfig()
    if len(preds) < len(gts):
        raise ValueError(f"need at least as many predictions as ground truths ({len(preds)} < {len(gts)})")
    if not gts:
        return {}
    rows, cols = linear_sum_assignment(cost_matrix(preds, gts, cfg))
    return {int(r): int(c) for r, c in zip(rows, cols)}


def assignment_cost(cost: np.ndarray, assignment: dict[int, int]) -> float:
    return float(sum(cost[j, i] for j, i in assignment.items()))


def _validate(preds: Sequence[Prediction], gts: Sequence[GroundTruth]) -> None:
    if not preds:
        return
    n = preds[0].class_probs.size
    shape = preds[0].mask_probs.shape
    for p in preds:
        if p.class_probs.size != n:
            raise ValueError("all predictions must share the number of classes")
        if p.mask_probs.shape != shape:
            raise ValueError(f"dimension mismatch: {p.mask_probs.shape} vs {shape}")
    for g in gts:
        if g.class_id >= n - 1:
            raise ValueError(f"ground-truth class {g.class_id} out of range for C = {n - 1}")
        if g.mask.shape != shape:
            raise ValueError(f"dimension mismatch: {g.mask.shape} vs {shape}")


def segmentation_loss(
    preds: Sequence[Prediction], gts: Sequence[GroundTruth], assignment: dict[int, int], cfg: SoaoConfig
) -> float:
    return float(sum(pair_cost(preds[i], gts[j], cfg) for j, i in sorted(assignment.items())))


def silent_aligned(pred: Prediction, silent_labels: Iterable[int], tau_sil: float) -> bool:
    """True if the best real class is a known silent object with probability >= ``tau_sil``."""
    real = pred.class_probs[:-1]
    best = int(np.argmax(real))
    return best in set(silent_labels) and real[best] >= tau_sil


def l_cls(
    preds: Sequence[Prediction],
    silent_labels: Iterable[int],
    matched_pred_indices: Iterable[int],
    tau_sil: float = 0.5,
) -> float:
    """Background cross-entropy over unmatched predictions not aligned with a silent object."""
    silent = set(silent_labels)
    if preds:
        c = preds[0].num_classes
        bad = [s for s in silent if not 0 <= s < c]
        if bad:
            raise ValueError(f"silent labels {sorted(bad)} outside [0, {c})")
    matched = set(matched_pred_indices)
    total = 0.0
    for i, p in enumerate(preds):
        if i in matched or silent_aligned(p, silent, tau_sil):
            continue
        total += cross_entropy(p.class_probs, p.background)
    return total


def l_ins(
    preds: Sequence[Prediction],
    gts: Sequence[GroundTruth],
    matched_pred_indices: Iterable[int],
    hard: bool = False,
) -> float:
    """Overlap between unmatched predicted masks and the union of ground-truth masks.

    The default soft form is differentiable; ``hard=True`` thresholds the
    predicted masks at 0.5 and computes the exact binary IoU.
    """
    if not gts or not preds:
        return 0.0
    shape = preds[0].mask_probs.shape
    region = union_of([g.mask for g in gts], *shape)
    matched = set(matched_pred_indices)
    fn = hard_overlap if hard else soft_overlap
    return float(sum(fn(p.mask_probs, region) for i, p in enumerate(preds) if i not in matched))


@dataclass(frozen=True)
class LossBreakdown:
    l_seg: float
    l_cls: float
    l_ins: float
    total: float
    assignment: dict[int, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "l_seg": self.l_seg,
            "l_cls": self.l_cls,
            "l_ins": self.l_ins,
            "total": self.total,
            "assignment": {str(j): i for j, i in sorted(self.assignment.items())},
        }


def soao_total(
    preds: Sequence[Prediction],
    gts: Sequence[GroundTruth],
    silent_labels: Iterable[int] = (),
    cfg: SoaoConfig | None = None,
) -> LossBreakdown:
    cfg = cfg or SoaoConfig()
    assignment = match(preds, gts, cfg)
    matched = set(assignment.values())
    seg = segmentation_loss(preds, gts, assignment, cfg)
    cls_ = l_cls(preds, silent_labels, matched, cfg.tau_sil)
    ins = l_ins(preds, gts, matched)
    total = seg + cfg.lambda_cls * cls_ + cfg.lambda_ins * ins
    return LossBreakdown(seg, cls_, ins, total, assignment)


# ---------------------------------------------------------------------------
# finite-difference verification


class GradientCheckError(ArithmeticError):
    pass


_LOSSES: dict[str, tuple[Callable, Callable]] = {
    "focal": (focal_loss, focal_loss_grad),
    "dice": (dice_loss, dice_loss_grad),
    "ce": (cross_entropy, cross_entropy_grad),
    "ins": (soft_overlap, soft_overlap_grad),
}

LOSS_NAMES = tuple(_LOSSES)


def finite_diff_check(name: str, x, target, step: float = 1e-5, **params) -> float:
    """Max relative error between the analytic gradient and central differences.

    ``x`` is the probability array the loss is differentiated against (mask
    probabilities, or class probabilities for ``"ce"``); ``target`` is the
    ground-truth mask, union region or class id.
    """
    if name not in _LOSSES:
        raise KeyError(f"unknown loss {name!r}; expected one of {LOSS_NAMES}")
    if not step > 0 or not math.isfinite(step):
        raise ValueError(f"step must be a positive finite number, got {step}")
    value, grad = _LOSSES[name]
    x = np.array(x, dtype=np.float64)
    analytic = np.asarray(grad(x, target, **params), dtype=np.float64)
    numeric = np.empty_like(x)
    flat, nflat = x.reshape(-1), numeric.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        hi = value(x, target, **params)
        flat[k] = orig - step
        lo = value(x, target, **params)
        flat[k] = orig
        nflat[k] = (hi - lo) / (2.0 * step)
    if not (np.all(np.isfinite(analytic)) and np.all(np.isfinite(numeric))):
        raise GradientCheckError(f"non-finite gradient encountered in {name!r} check")
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    diff = np.abs(analytic - numeric)
    rel = np.where(scale > 1e-12, diff / np.where(scale > 1e-12, scale, 1.0), diff)
    return float(rel.max()) if rel.size else 0.0
