"""File-level pipeline: schemas, deterministic JSON output and the per-frame runners."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import jsonschema
import numpy as np

from . import losses
from .align import align_nouns, load_embeddings, silent_labels
from .avtree import (
    DEFAULT_TAU_TAG,
    AudioVisualTree,
    aggregate_tag_scores,
    load_reference_tree,
    load_tree,
    validate_tag_scores,
)
from .integration import IntegrationResult, MatchRecord, integrate
from .masks import (
    BACKGROUND_LABEL,
    DEFAULT_IOU_THRESHOLD,
    BinaryMask,
    ScoredInstance,
    instances_from_json,
    rle_decode,
    two_phase_filter,
    union_of,
)
from .metrics import DEFAULT_BETA2, evaluate_dataset

SIGNIFICANT_DIGITS = 9


class ValidationError(ValueError):
    """Input that parses but violates a schema or a domain rule (exit code 1)."""


# ---------------------------------------------------------------------------
# JSON helpers

_RLE = {"type": "array", "items": {"type": "integer", "minimum": 0}}
_PROB = {"type": "number", "minimum": 0, "maximum": 1}

INSTANCE_SCHEMA = {
    "type": "object",
    "required": ["height", "width", "instances"],
    "properties": {
        "height": {"type": "integer", "minimum": 1},
        "width": {"type": "integer", "minimum": 1},
        "instances": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["label", "confidence", "mask_rle"],
                "properties": {"label": {"type": "string"}, "confidence": _PROB, "mask_rle": _RLE},
            },
        },
    },
}

TAG_SCORES_SCHEMA = {"type": "object", "additionalProperties": _PROB}

FRAME_SCHEMA = {
    "type": "object",
    "required": ["height", "width", "predictions", "ground_truths"],
    "properties": {
        "height": {"type": "integer", "minimum": 1},
        "width": {"type": "integer", "minimum": 1},
        "predictions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["class_probs", "mask_probs"],
                "properties": {
                    "class_probs": {"type": "array", "items": _PROB, "minItems": 2},
                    "mask_probs": {"type": "array", "items": {"type": "array", "items": _PROB}},
                },
            },
        },
        "ground_truths": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["class_id", "mask_rle"],
                "properties": {"class_id": {"type": "integer", "minimum": 0}, "mask_rle": _RLE},
            },
        },
        "silent_labels": {"type": "array", "items": {"type": "integer", "minimum": 0}},
    },
}

WORD_LIST_SCHEMA = {"type": "array", "items": {"type": "string"}}


def read_json(path: str | Path, schema: Mapping | None = None) -> Any:
    """Load JSON, reporting ``file:line:col`` for syntax errors and a JSON path for schema errors.

    Missing or unreadable files raise :class:`OSError`.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if schema is not None:
        check_schema(doc, schema, str(path))
    return doc


def check_schema(doc: Any, schema: Mapping, source: str) -> None:
    errors = sorted(jsonschema.Draft7Validator(schema).iter_errors(doc), key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        err = errors[0]
        where = "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)
        raise ValidationError(f"{source}: at {where}: {err.message}")


def _round_floats(obj: Any) -> Any:
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return obj
        return float(f"{obj:.{SIGNIFICANT_DIGITS}g}")
    if isinstance(obj, dict):
        return {str(k): _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    if isinstance(obj, np.generic):
        return _round_floats(obj.item())
    return obj


def dumps(doc: Any) -> str:
    """Deterministic JSON: sorted keys, floats at nine significant digits."""
    return json.dumps(_round_floats(doc), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class PipelineConfig:
    tree_path: Path | None = None
    embeddings_path: Path | None = None
    tau_tag: float = DEFAULT_TAU_TAG
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    tau_sil: float = 0.5
    beta2: float = DEFAULT_BETA2

    def __post_init__(self):
        for name in ("tau_tag", "iou_threshold", "tau_sil"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name.replace('_', '-')} must lie in [0, 1], got {v}")
        if self.beta2 < 0 or not math.isfinite(self.beta2):
            raise ValidationError(f"beta2 must be finite and >= 0, got {self.beta2}")

    def load_tree(self) -> AudioVisualTree:
        return load_reference_tree() if self.tree_path is None else load_tree(self.tree_path)


# ---------------------------------------------------------------------------
# integrate


def integrate_frame(
    instances_doc: Mapping,
    tag_scores: Mapping[str, float],
    tree: AudioVisualTree,
    config: PipelineConfig,
) -> dict:
    """Two-phase filter -> tag aggregation -> integration, as a JSON-ready document."""
    try:
        candidates, h, w = instances_from_json(instances_doc)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    candidates = [c for c in candidates if c.label != BACKGROUND_LABEL]
    p_c = two_phase_filter(candidates, config.iou_threshold)
    t_c = aggregate_tag_scores(tree, tag_scores, config.tau_tag)
    result = integrate(p_c, t_c.scores, tree)
    return {
        "height": h,
        "width": w,
        "result": result.to_json(),
        "audio": {"categories": dict(t_c.scores), "unknown_tags": list(t_c.unknown_tags)},
        "counts": {"candidates": len(candidates), "potential": len(p_c), "sounding": len(result.sounding)},
        "config": {"tau_tag": config.tau_tag, "iou_threshold": config.iou_threshold},
    }


def run_integrate(config: PipelineConfig, instances_path: str | Path, tags_path: str | Path, tree=None) -> dict:
    if tree is None:
        tree = config.load_tree()
    doc = read_json(instances_path, INSTANCE_SCHEMA)
    raw = read_json(tags_path, TAG_SCORES_SCHEMA)
    try:
        scores = validate_tag_scores(raw, str(tags_path))
        return integrate_frame(doc, scores, tree, config)
    except ValidationError as exc:
        raise ValidationError(f"{instances_path}: {exc}") from None
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


# ---------------------------------------------------------------------------
# inject-noise


class _Literal(str):
    """A JSON number kept as its source text so untouched entries are re-emitted verbatim."""


def parse_tag_scores_literal(text: str, source: str = "<tags>") -> dict[str, _Literal]:
    try:
        doc = json.loads(text, parse_float=_Literal, parse_int=_Literal)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict) or not all(isinstance(v, _Literal) for v in doc.values()):
        raise ValidationError(f"{source}: expected a JSON object of tag -> number")
    for k, v in doc.items():
        if not 0.0 <= float(v) <= 1.0:
            raise ValidationError(f"{source}: at $.{k}: confidence {v} outside [0, 1]")
    return doc


def format_tag_scores(entries: Mapping[str, str]) -> str:
    if not entries:
        return "{}\n"
    body = ",\n".join(f"  {json.dumps(k, ensure_ascii=False)}: {entries[k]}" for k in sorted(entries))
    return "{\n" + body + "\n}\n"


def parse_noise_spec(spec: Any, source: str = "<noise-spec>") -> dict[str, float]:
    if not isinstance(spec, dict):
        raise ValidationError(f"{source}: noise spec must be a JSON object of tag -> confidence")
    check_schema(spec, TAG_SCORES_SCHEMA, source)
    return {k: float(v) for k, v in spec.items()}


def inject_noise(
    scores_text: str,
    spec: Mapping[str, float],
    tree: AudioVisualTree | None = None,
    allow_unknown: bool = False,
    source: str = "<tags>",
) -> str:
    """Add or overwrite tag confidences, leaving every other entry's text untouched."""
    entries = parse_tag_scores_literal(scores_text, source)
    if not spec:
        return scores_text
    for name, value in spec.items():
        if not 0.0 <= value <= 1.0:
            raise ValidationError(f"noise confidence for {name!r} outside [0, 1]: {value}")
        if tree is not None and not allow_unknown and not tree.has_tag(name):
            raise ValidationError(f"noise tag {name!r} is not in the tree (pass --allow-unknown to inject it anyway)")
        entries[name] = _Literal(repr(float(value)))
    return format_tag_scores(entries)


# ---------------------------------------------------------------------------
# eval


def sounding_mask(doc: Mapping, source: str = "<file>") -> BinaryMask:
    """Union of the sounding masks in an integration output, or of all instances in an instance file."""
    if "result" in doc:
        items = doc["result"]["sounding"]
        check_schema({"height": doc.get("height"), "width": doc.get("width"), "instances": items}, INSTANCE_SCHEMA, source)
        doc = {"height": doc["height"], "width": doc["width"], "instances": items}
    else:
        check_schema(doc, INSTANCE_SCHEMA, source)
    try:
        inst, h, w = instances_from_json(doc)
    except ValueError as exc:
        raise ValidationError(f"{source}: {exc}") from None
    return union_of([i.mask for i in inst if i.label != BACKGROUND_LABEL], h, w)


def run_eval(pairs: list[tuple[str, Path, Path]], beta2: float = DEFAULT_BETA2) -> dict:
    frames, names = [], []
    for name, pred_path, gt_path in pairs:
        pred = sounding_mask(read_json(pred_path), str(pred_path))
        gt = sounding_mask(read_json(gt_path), str(gt_path))
        if pred.shape != gt.shape:
            raise ValidationError(f"{name}: mask dimension mismatch {pred.shape} vs {gt.shape}")
        frames.append((pred, gt))
        names.append(name)
    summary = evaluate_dataset(frames, beta2)
    out = summary.to_json(names)
    out["beta2"] = beta2
    return out


# ---------------------------------------------------------------------------
# loss-check


def frame_from_json(doc: Mapping, source: str = "<frame>"):
    check_schema(doc, FRAME_SCHEMA, source)
    h, w = doc["height"], doc["width"]
    try:
        preds = [losses.Prediction(p["class_probs"], p["mask_probs"]) for p in doc["predictions"]]
        gts = [losses.GroundTruth(g["class_id"], rle_decode(g["mask_rle"], h, w)) for g in doc["ground_truths"]]
    except ValueError as exc:
        raise ValidationError(f"{source}: {exc}") from None
    for p in preds:
        if p.mask_probs.shape != (h, w):
            raise ValidationError(f"{source}: prediction mask is {p.mask_probs.shape}, expected {(h, w)}")
    return preds, gts, list(doc.get("silent_labels", []))


def run_losscheck(
    frame_path: str | Path,
    cfg: losses.SoaoConfig | None = None,
    step: float = 1e-5,
    tolerance: float = 1e-4,
) -> dict:
    cfg = cfg or losses.SoaoConfig()
    preds, gts, silent = frame_from_json(read_json(frame_path), str(frame_path))
    try:
        breakdown = losses.soao_total(preds, gts, silent, cfg)
    except ValueError as exc:
        raise ValidationError(f"{frame_path}: {exc}") from None

    errors: dict[str, list[float]] = {name: [] for name in losses.LOSS_NAMES}
    matched = set(breakdown.assignment.values())
    for j, i in breakdown.assignment.items():
        p, g = preds[i], gts[j]
        errors["focal"].append(
            losses.finite_diff_check("focal", p.mask_probs, g.mask, step, gamma=cfg.focal_gamma, alpha=cfg.focal_alpha)
        )
        errors["dice"].append(losses.finite_diff_check("dice", p.mask_probs, g.mask, step, smooth=cfg.dice_smooth))
        errors["ce"].append(losses.finite_diff_check("ce", p.class_probs, g.class_id, step))
    if gts:
        region = union_of([g.mask for g in gts])
        for i, p in enumerate(preds):
            if i not in matched:
                errors["ins"].append(losses.finite_diff_check("ins", p.mask_probs, region, step))
                errors["ce"].append(losses.finite_diff_check("ce", p.class_probs, p.background, step))
    report = {
        name: {"checks": len(v), "max_rel_error": max(v) if v else 0.0, "passed": all(e < tolerance for e in v)}
        for name, v in errors.items()
    }
    return {
        "breakdown": breakdown.to_json(),
        "hard_l_ins": losses.l_ins(preds, gts, matched, hard=True),
        "gradient_check": report,
        "step": step,
        "tolerance": tolerance,
        "passed": all(r["passed"] for r in report.values()),
    }


# ---------------------------------------------------------------------------
# align


def run_align(
    embeddings_path: str | Path,
    nouns_path: str | Path,
    categories_path: str | Path,
    sounding_path: str | Path | None = None,
    min_similarity: float | None = None,
) -> dict:
    try:
        emb = load_embeddings(embeddings_path)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    nouns = read_json(nouns_path, WORD_LIST_SCHEMA)
    cats = read_json(categories_path, WORD_LIST_SCHEMA)
    sounding = read_json(sounding_path, WORD_LIST_SCHEMA) if sounding_path else []
    try:
        al = align_nouns(nouns, cats, emb, min_similarity)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    canonical = al.canonical
    return {
        "pairs": [{"noun": n, "category": c, "similarity": s} for n, c, s in al.pairs],
        "canonical": canonical,
        "dropped_nouns": al.dropped_nouns,
        "dropped_categories": al.dropped_categories,
        "sounding": [s.lower() for s in sounding],
        "silent": silent_labels(canonical, (s.lower() for s in sounding)),
    }


def result_from_json(doc: Mapping) -> IntegrationResult:
    """Rebuild an :class:`IntegrationResult` from an integrate output document."""
    h, w = doc["height"], doc["width"]
    res = doc["result"]

    def inst(d):
        return ScoredInstance(d["label"], d["confidence"], rle_decode(d["mask_rle"], h, w))

    return IntegrationResult(
        [inst(d) for d in res["sounding"]],
        [inst(d) for d in res["silent"]],
        [MatchRecord(t["label"], t["confidence"], t["matched_category"], t["kind"]) for t in res["trace"]],
    )
