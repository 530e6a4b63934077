"""Command-line front end.

Exit codes: 0 success, 1 validation or check failure, 2 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import losses
from .avtree import DEFAULT_TAU_TAG, TreeParseError, load_reference_tree, load_tree
from .masks import DEFAULT_IOU_THRESHOLD
from .metrics import DEFAULT_BETA2
from .pipeline import (
    PipelineConfig,
    ValidationError,
    dumps,
    inject_noise,
    parse_noise_spec,
    read_json,
    run_align,
    run_eval,
    run_integrate,
    run_losscheck,
)

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


def _unit_interval(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {v}")
    return v


def _nonneg(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v >= 0.0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _positive(text: str) -> float:
    v = _nonneg(text)
    if v == 0.0:
        raise argparse.ArgumentTypeError("must be > 0")
    return v


def _config(args) -> PipelineConfig:
    return PipelineConfig(
        tree_path=args.tree,
        embeddings_path=getattr(args, "embeddings", None),
        tau_tag=args.tau_tag,
        iou_threshold=args.iou_threshold,
        tau_sil=args.tau_sil,
        beta2=args.beta2,
    )


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")


def _pair_files(a: Path, b: Path) -> list[tuple[str, Path, Path]]:
    """Pair ``*.json`` files in two directories by shared basename, sorted."""
    left = {p.stem: p for p in a.glob("*.json")}
    right = {p.stem: p for p in b.glob("*.json")}
    missing = sorted(set(left) ^ set(right))
    if missing:
        raise ValidationError(f"unpaired frames between {a} and {b}: {', '.join(missing)}")
    return [(name, left[name], right[name]) for name in sorted(left)]


# ---------------------------------------------------------------------------
# subcommands


def cmd_tree_validate(args) -> int:
    path = args.tree_file or args.tree
    tree = load_reference_tree() if path is None else load_tree(path)
    g, c, t = tree.layer_sizes
    _emit(dumps({"groups": g, "categories": c, "tags": t, "source": str(path) if path else "reference"}), args.out)
    return EXIT_OK


def cmd_integrate(args) -> int:
    config = _config(args)
    tree = config.load_tree()
    if args.instances.is_dir() != args.tags.is_dir():
        raise ValidationError("instances and tags must both be files or both be directories")
    if not args.instances.is_dir():
        _emit(dumps(run_integrate(config, args.instances, args.tags, tree)), args.out)
        return EXIT_OK

    if args.out is None:
        raise ValidationError("batch mode needs --out DIR")
    pairs = _pair_files(args.instances, args.tags)

    def one(item):
        name, inst, tags = item
        doc = run_integrate(config, inst, tags, tree)
        (args.out / f"{name}.json").parent.mkdir(parents=True, exist_ok=True)
        (args.out / f"{name}.json").write_text(dumps(doc), encoding="utf-8")
        return name, doc["counts"]

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        results = list(pool.map(one, pairs))
    summary = {"frames": {name: counts for name, counts in results}, "num_frames": len(results)}
    (args.out / "summary.json").write_text(dumps(summary), encoding="utf-8")
    return EXIT_OK


def cmd_inject_noise(args) -> int:
    spec: dict[str, float] = {}
    if args.spec is not None:
        spec.update(parse_noise_spec(read_json(args.spec), str(args.spec)))
    for item in args.add or []:
        name, sep, value = item.rpartition("=")
        if not sep or not name:
            raise ValidationError(f"--add expects NAME=VALUE, got {item!r}")
        try:
            spec[name] = float(value)
        except ValueError:
            raise ValidationError(f"--add value for {name!r} is not a number: {value!r}") from None
    tree = None
    if not args.allow_unknown:
        tree = load_reference_tree() if args.tree is None else load_tree(args.tree)
    text = args.tags.read_text(encoding="utf-8")
    _emit(inject_noise(text, spec, tree, args.allow_unknown, str(args.tags)), args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.pred.is_dir() != args.gt.is_dir():
        raise ValidationError("prediction and ground truth must both be files or both be directories")
    if args.pred.is_dir():
        pairs = _pair_files(args.pred, args.gt)
    else:
        pairs = [(args.pred.stem, args.pred, args.gt)]
    _emit(dumps(run_eval(pairs, args.beta2)), args.out)
    return EXIT_OK


def cmd_loss_check(args) -> int:
    cfg = losses.SoaoConfig(
        lambda_f=args.lambda_f,
        lambda_d=args.lambda_d,
        lambda_cls=args.lambda_cls,
        lambda_ins=args.lambda_ins,
        tau_sil=args.tau_sil,
    )
    report = run_losscheck(args.frame, cfg, step=args.step, tolerance=args.grad_tol)
    _emit(dumps(report), args.out)
    return EXIT_OK if report["passed"] else EXIT_INVALID


def cmd_align(args) -> int:
    if args.embeddings is None:
        raise ValidationError("align needs --embeddings")
    report = run_align(args.embeddings, args.nouns, args.categories, args.sounding, args.min_similarity)
    _emit(dumps(report), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--tree", type=Path, help="audio-visual tree file (default: shipped reference tree)")
    common.add_argument("--embeddings", type=Path, help="word-vector text file")
    common.add_argument("--tau-tag", type=_unit_interval, default=DEFAULT_TAU_TAG, help="per-tag confidence gate")
    common.add_argument("--iou-threshold", type=_unit_interval, default=DEFAULT_IOU_THRESHOLD, help="phase-2 IoU threshold")
    common.add_argument("--tau-sil", type=_unit_interval, default=0.5, help="silent-alignment probability threshold")
    common.add_argument("--beta2", type=_nonneg, default=DEFAULT_BETA2, help="F-score beta squared")
    common.add_argument("--out", type=Path, help="output file (directory in batch mode); default stdout")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="soundseg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tree-validate", parents=[common], help="parse a tree file and report layer sizes")
    p.add_argument("tree_file", nargs="?", type=Path)
    p.set_defaults(func=cmd_tree_validate)

    p = sub.add_parser("integrate", parents=[common], help="filter candidates and keep the sounding ones")
    p.add_argument("instances", type=Path, help="instance file or directory")
    p.add_argument("tags", type=Path, help="tag-score file or directory")
    p.add_argument("--jobs", type=int, default=1, help="frames processed concurrently in batch mode")
    p.set_defaults(func=cmd_integrate)

    p = sub.add_parser("inject-noise", parents=[common], help="add or overwrite tag confidences")
    p.add_argument("tags", type=Path)
    p.add_argument("--spec", type=Path, help="JSON object of tag -> confidence")
    p.add_argument("--add", action="append", metavar="NAME=VALUE")
    p.add_argument("--allow-unknown", action="store_true", help="accept tags missing from the tree")
    p.set_defaults(func=cmd_inject_noise)

    p = sub.add_parser("eval", parents=[common], help="J and F of predicted vs ground-truth masks")
    p.add_argument("pred", type=Path)
    p.add_argument("gt", type=Path)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("loss-check", parents=[common], help="loss breakdown and gradient verification")
    p.add_argument("frame", type=Path)
    p.add_argument("--step", type=_positive, default=1e-5)
    p.add_argument("--grad-tol", type=_positive, default=1e-4)
    p.add_argument("--lambda-f", type=_nonneg, default=20.0)
    p.add_argument("--lambda-d", type=_nonneg, default=1.0)
    p.add_argument("--lambda-cls", type=_nonneg, default=1.0)
    p.add_argument("--lambda-ins", type=_nonneg, default=1.0)
    p.set_defaults(func=cmd_loss_check)

    p = sub.add_parser("align", parents=[common], help="canonicalize caption nouns and list silent labels")
    p.add_argument("--nouns", type=Path, required=True, help="JSON list of nouns")
    p.add_argument("--categories", type=Path, required=True, help="JSON list of category names")
    p.add_argument("--sounding", type=Path, help="JSON list of sounding category names")
    p.add_argument("--min-similarity", type=float, default=None)
    p.set_defaults(func=cmd_align)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (TreeParseError, ValidationError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
