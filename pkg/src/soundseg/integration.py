"""Audio-visual semantic integration: decide which candidate masks are sounding."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .avtree import AudioVisualTree
from .masks import ScoredInstance, confidence_order, instance_to_json

DIRECT = "direct"
SIBLING = "sibling"
NONE = "none"


@dataclass(frozen=True)
class MatchRecord:
    label: str
    confidence: float
    matched_category: str | None
    kind: str


@dataclass(frozen=True)
class IntegrationResult:
    sounding: list[ScoredInstance] = field(default_factory=list)
    silent: list[ScoredInstance] = field(default_factory=list)
    trace: list[MatchRecord] = field(default_factory=list)

    @property
    def sounding_labels(self) -> list[str]:
        return [i.label for i in self.sounding]

    @property
    def silent_labels(self) -> list[str]:
        return [i.label for i in self.silent]

    def to_json(self) -> dict:
        return {
            "sounding": [instance_to_json(i) for i in self.sounding],
            "silent": [instance_to_json(i) for i in self.silent],
            "trace": [
                {"label": r.label, "confidence": r.confidence, "matched_category": r.matched_category, "kind": r.kind}
                for r in self.trace
            ],
        }


def integrate(
    p_c: Sequence[ScoredInstance],
    t_c: Mapping[str, float],
    tree: AudioVisualTree,
) -> IntegrationResult:
    """Match candidate instances against audio-derived categories.

    Instances are visited by descending confidence.  An instance is sounding
    if its own label is still available in ``t_c`` (direct match) or, failing
    that, if a category from the same tree group is (sibling match; the
    highest-scored one, ties by name, is taken).  Each match consumes the
    category, so one category licenses at most one instance.  Labels outside
    the tree are always silent.
    """
    remaining = {name: float(score) for name, score in t_c.items()}
    sounding, silent, trace = [], [], []
    for i in confidence_order(p_c):
        inst = p_c[i]
        matched, kind = None, NONE
        if tree.has_category(inst.label):
            if inst.label in remaining:
                matched, kind = inst.label, DIRECT
            else:
                candidates = [c for c in tree.sibling_categories(inst.label) if c in remaining]
                if candidates:
                    matched = min(candidates, key=lambda c: (-remaining[c], c))
                    kind = SIBLING
        if matched is None:
            silent.append(inst)
        else:
            del remaining[matched]
            sounding.append(inst)
        trace.append(MatchRecord(inst.label, inst.confidence, matched, kind))
    return IntegrationResult(sounding, silent, trace)
