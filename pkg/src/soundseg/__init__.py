"""Symbolic and numerical core of a two-stage audio-visual segmentation pipeline.

Foundation-model outputs (audio tag confidences, candidate masks, caption
nouns) arrive as files; this package turns them into sounding-object masks,
computes the silent-object-aware training objective and scores results.
"""
from .align import EmbeddingTable, canonicalize_nouns, cosine, load_embeddings, silent_labels
from .avtree import (
    AudioVisualTree,
    CategoryScores,
    TreeParseError,
    aggregate_tag_scores,
    load_reference_tree,
    load_tree,
    parse_tree,
    serialize_tree,
    sibling_categories,
)
from .integration import IntegrationResult, integrate
from .losses import GroundTruth, Prediction, SoaoConfig, finite_diff_check, match, soao_total
from .masks import BinaryMask, ScoredInstance, iou, rle_decode, rle_encode, two_phase_filter, union_of
from .metrics import evaluate_dataset, evaluate_frame, fscore, jaccard

__version__ = "0.1.0"
