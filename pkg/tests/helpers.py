"""Random instance generators and brute-force oracles shared by the tests.

The oracles here deliberately avoid the package's own helpers so they stay
independent of the code they check.
"""
import itertools
from importlib import resources

import numpy as np

from soundseg.avtree import build_tree
from soundseg.masks import BinaryMask, ScoredInstance

FIXTURES = resources.files("soundseg").joinpath("data/fixtures")


def fixture_path(*parts):
    return FIXTURES.joinpath(*parts)


def random_tree(rng, max_groups=5, max_cats=6, max_tags=6):
    groups = [f"g{i}" for i in range(rng.integers(1, max_groups + 1))]
    cats, tags = [], []
    for g in groups:
        for _ in range(rng.integers(1, max_cats + 1)):
            cats.append((f"c{len(cats)}", g))
    for c, _ in cats:
        for _ in range(rng.integers(0, max_tags + 1)):
            tags.append((f"t{len(tags)}", c))
    return build_tree(groups, cats, tags)


def random_mask(rng, h, w, p=None):
    p = rng.uniform(0.1, 0.6) if p is None else p
    return BinaryMask(rng.random((h, w)) < p)


def random_box(rng, h, w):
    r0, c0 = rng.integers(0, h), rng.integers(0, w)
    r1, c1 = rng.integers(r0 + 1, h + 1), rng.integers(c0 + 1, w + 1)
    m = np.zeros((h, w), bool)
    m[r0:r1, c0:c1] = True
    return BinaryMask(m)


def random_candidates(rng, labels, n, h=8, w=8, grid=20):
    """Candidates with confidences on a coarse grid so ties actually occur."""
    out = []
    for _ in range(n):
        label = labels[rng.integers(len(labels))]
        conf = float(rng.integers(0, grid + 1)) / grid
        mask = random_box(rng, h, w) if rng.random() < 0.7 else random_mask(rng, h, w)
        out.append(ScoredInstance(label, conf, mask))
    return out


def pixel_iou(a, b):
    inter = union = 0
    for x, y in zip(a.data.ravel().tolist(), b.data.ravel().tolist()):
        inter += x and y
        union += x or y
    return 0.0 if union == 0 else inter / union


def pixel_counts(pred, gt):
    tp = fp = fn = 0
    for p, g in zip(pred.data.ravel().tolist(), gt.data.ravel().tolist()):
        if p and g:
            tp += 1
        elif p:
            fp += 1
        elif g:
            fn += 1
    return tp, fp, fn


def brute_force_assignment(cost):
    """Minimum over all injections rows -> columns, summed in row order."""
    n_rows, n_cols = cost.shape
    best, best_perm = None, None
    for perm in itertools.permutations(range(n_cols), n_rows):
        total = sum(float(cost[j, perm[j]]) for j in range(n_rows))
        if best is None or total < best:
            best, best_perm = total, perm
    return best, best_perm


def check_filter_soundness(candidates, t, selected):
    """Raise AssertionError unless ``selected`` obeys the two-phase rules.

    Phase-1 winners are recomputed here: per label the highest confidence,
    earliest input position on ties.
    """
    ids = {id(c): k for k, c in enumerate(candidates)}
    chosen = [ids[id(s)] for s in selected]
    assert len(set(chosen)) == len(chosen), "an instance was selected twice"
    winners = {}
    for k, c in enumerate(candidates):
        cur = winners.get(c.label)
        if cur is None or c.confidence > candidates[cur].confidence:
            winners[c.label] = k
    winner_set = set(winners.values())
    assert winner_set <= set(chosen), "a phase-1 winner is missing"
    for a, b in itertools.combinations(chosen, 2):
        if a in winner_set and b in winner_set:
            continue
        assert pixel_iou(candidates[a].mask, candidates[b].mask) < t, (a, b)
    order = sorted(range(len(candidates)), key=lambda k: (-candidates[k].confidence, candidates[k].label, k))
    rank = {k: r for r, k in enumerate(order)}
    for k in set(range(len(candidates))) - set(chosen):
        assert k not in winner_set
        witnesses = [
            s for s in chosen
            if (s in winner_set or rank[s] < rank[k]) and pixel_iou(candidates[k].mask, candidates[s].mask) >= t
        ]
        assert witnesses, f"candidate {k} rejected without an IoU >= t witness"
    keys = [(-candidates[k].confidence, candidates[k].label, k) for k in chosen]
    assert keys == sorted(keys), "output not in descending-confidence order"


def random_tag_scores(rng, tree, density=0.5):
    scores = {}
    for t in tree.tags:
        if rng.random() < density:
            scores[t.name] = float(rng.integers(0, 21)) / 20
    return scores


def random_frame(rng, h=8, w=8):
    """Tree, candidate instances and tag scores for one end-to-end frame."""
    tree = random_tree(rng)
    labels = [c.name for c in tree.categories]
    pool = list(rng.choice(labels, size=min(len(labels), rng.integers(1, 5)), replace=False)) + ["not-in-tree"]
    cands = random_candidates(rng, pool, int(rng.integers(0, 9)), h, w)
    return tree, cands, random_tag_scores(rng, tree)


def noise_tags(rng, tree, labels):
    """Tags whose category is neither one of ``labels`` nor a sibling of one, plus an out-of-tree tag."""
    blocked = set()
    for label in labels:
        if tree.has_category(label):
            blocked |= {label} | set(tree.sibling_categories(label))
    eligible = [t.name for t in tree.tags if t.category not in blocked]
    picked = [eligible[k] for k in rng.permutation(len(eligible))[: rng.integers(0, len(eligible) + 1)]]
    noise = {name: float(rng.uniform(0.1, 1.0)) for name in picked}
    noise["off-screen-" + str(rng.integers(1000))] = float(rng.uniform(0, 1))
    return noise


def random_probs(rng, shape, lo=0.05, hi=0.95):
    return rng.uniform(lo, hi, size=shape)


def random_class_probs(rng, n):
    v = rng.uniform(0.05, 1.0, size=n)
    return v / v.sum()


def central_diff(f, x, step):
    """Numerical gradient of scalar ``f`` at ``x`` by central differences, entry by entry."""
    x = np.array(x, dtype=np.float64)
    out = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        hi, lo = x.copy(), x.copy()
        hi[idx] += step
        lo[idx] -= step
        out[idx] = (f(hi) - f(lo)) / (2 * step)
    return out


def max_rel_error(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    scale = np.maximum(np.abs(a), np.abs(b))
    diff = np.abs(a - b)
    return float(np.max(np.where(scale > 1e-12, diff / np.maximum(scale, 1e-300), diff)))


def perfect_frame(rng, num_classes=3, h=8, w=8, extra=2):
    """Predictions that reproduce every ground truth exactly, plus pure-background extras."""
    from soundseg.losses import GroundTruth, Prediction

    gts, preds = [], []
    for cls in rng.permutation(num_classes)[: max(1, num_classes - 1)]:
        mask = random_box(rng, h, w)
        gts.append(GroundTruth(int(cls), mask))
        probs = np.zeros(num_classes + 1)
        probs[cls] = 1.0
        preds.append(Prediction(probs, mask.data.astype(float)))
    for _ in range(extra):
        probs = np.zeros(num_classes + 1)
        probs[-1] = 1.0
        preds.append(Prediction(probs, np.zeros((h, w))))
    order = rng.permutation(len(preds))
    return [preds[k] for k in order], gts
