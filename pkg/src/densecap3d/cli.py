"""Command-line entry point: ``densecap3d {eval,synth,metrics,nms,match}``.

Exit codes: 0 success, 2 input error, 3 internal invariant failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import textmetrics
from .assignment import SetLossWeights, cost_components, match_scene
from .evaluation import ALL_METRICS, EvalConfig, evaluate
from .geom3d import nms
from .pointset import save_binary, save_jsonl
from .records import (SchemaError, dumps, gt_record, load_ground_truth, load_predictions,
                      pred_record, write_jsonl)
from .scenesim import SceneSpec, gen_scene, perturbed_predictions
from .textmetrics import build_df, tokenize

log = logging.getLogger("densecap3d")

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 2, 3


class InvariantError(RuntimeError):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _metrics(text: str) -> list[str]:
    names = [m.strip() for m in text.split(",") if m.strip()]
    for m in names:
        if m not in textmetrics.METRICS:
            raise argparse.ArgumentTypeError(
                f"unknown metric {m!r}; choose from {','.join(ALL_METRICS)}")
    return names


def _metric_arg(text: str) -> list[str]:
    return list(ALL_METRICS) if text == "all" else _metrics(text)


def _read_reference_groups(path) -> list[list[list[str]]]:
    """Reference groups for document frequencies.

    Accepts either a ground-truth file (one group per instance) or a
    references file (``{"id": ..., "references": [...]}`` per line).
    """
    groups = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON ({exc.msg})", path, lineno) from None
            if "references" in rec:
                groups.append([tokenize(r) for r in rec["references"]])
            elif "instances" in rec:
                groups += [[tokenize(c) for c in inst["captions"]] for inst in rec["instances"]]
            else:
                raise SchemaError("expected 'references' or 'instances'", path, lineno)
    if not groups:
        raise SchemaError("document-frequency corpus is empty", path)
    return groups


# --- eval ------------------------------------------------------------------

def cmd_eval(args) -> int:
    gts, class_names, _ = load_ground_truth(args.gt)
    preds = load_predictions(args.pred, len(class_names))
    # an empty prediction file means "no proposals anywhere"; partial files are errors
    missing = sorted(set(gts) - set(preds)) if preds else []
    extra = sorted(set(preds) - set(gts))
    if missing or extra:
        raise SchemaError(f"scene ids differ: in ground truth only {missing}; "
                          f"in predictions only {extra}")
    config = EvalConfig(tuple(args.iou_thresholds), args.nms_threshold, not args.no_nms,
                        tuple(args.metrics), args.ap_interpolation)
    df = None
    if "cider_d" in config.metrics:
        if args.df_corpus == "gt":
            groups = [[tokenize(c) for c in corpus] for s in sorted(gts) for corpus in gts[s].corpora]
        else:
            groups = _read_reference_groups(args.df_corpus)
        df = build_df(groups) if groups else None
    report = evaluate(preds, gts, config, class_names, df, threads=args.threads)
    if report.num_instances != sum(len(g) for g in gts.values()):
        raise InvariantError("instance count mismatch in report")
    sys.stdout.write(report.to_table())
    if args.json_out:
        text = json.dumps(json.loads(dumps(report.to_dict())), sort_keys=True, indent=2) + "\n"
        if args.json_out == "-":
            sys.stdout.write(text)
        else:
            Path(args.json_out).write_text(text, encoding="utf-8")
    return EXIT_OK


# --- synth -----------------------------------------------------------------

PERTURB_KEYS = {
    "noise": ("box_noise", float),
    "class_error": ("class_error_rate", float),
    "duplicate": ("duplicate_count", int),
    "caption_drop": ("caption_corruption_rate", float),
    "pad_to": ("pad_to", int),
}


def _perturb(text: str) -> tuple[str, object]:
    key, sep, value = text.partition("=")
    if not sep or key not in PERTURB_KEYS:
        raise argparse.ArgumentTypeError(
            f"expected KEY=VALUE with KEY in {sorted(PERTURB_KEYS)}, got {text!r}")
    name, conv = PERTURB_KEYS[key]
    try:
        return name, conv(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad value for {key}: {value!r}")


def _instance_range(text: str) -> tuple[int, int]:
    parts = text.split(",")
    try:
        vals = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError("expected N or LO,HI")
    if len(vals) == 1:
        return vals[0], vals[0]
    if len(vals) == 2:
        return vals[0], vals[1]
    raise argparse.ArgumentTypeError("expected N or LO,HI")


def cmd_synth(args) -> int:
    spec = SceneSpec(seed=args.seed, instance_count=tuple(args.instances),
                     captions_per_instance=args.captions)
    out = Path(args.out_dir)
    (out / "points").mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        scenes = list(pool.map(lambda i: gen_scene(spec, i), range(args.scenes)))
    # ground-truth vocabulary: classes present, sorted by name (as the loader does)
    used = sorted({int(c) for s in scenes for c in s.instances.class_ids},
                  key=lambda c: spec.classes[c])
    vocab = [spec.classes[c] for c in used]
    remap = {c: i for i, c in enumerate(used)}
    perturb = dict(args.perturb or [])
    if not used:
        perturb.pop("pad_to", None)  # no class vocabulary to label padding boxes with

    def predict(scene):
        p = perturbed_predictions(scene, seed=args.seed, flip_pool=used or None, **perturb)
        # keep only the columns of classes present in the ground truth
        cols = used + [p.class_probs.shape[1] - 1]
        probs = p.class_probs[:, cols]
        if len(p) and not np.allclose(probs.sum(1), 1.0):
            raise InvariantError("probability mass fell outside the ground-truth vocabulary")
        return pred_record(scene.scene_id, type(p)(p.boxes, probs, p.captions))

    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        pred_recs = list(pool.map(predict, scenes))
    gt_recs = []
    for s in scenes:
        rel = f"points/{s.scene_id}.{args.points_format}"
        if args.points_format == "bin":
            save_binary(s.cloud, out / rel)
        else:
            save_jsonl(s.cloud, out / rel)
        inst = s.instances
        inst = type(inst)(inst.ids, inst.boxes, [remap[int(c)] for c in inst.class_ids],
                          inst.corpora)
        gt_recs.append(gt_record(s.scene_id, inst, vocab, rel))
    write_jsonl(out / "gt.jsonl", gt_recs)
    write_jsonl(out / "preds.jsonl", pred_recs)
    n_inst = sum(len(s.instances) for s in scenes)
    n_prop = sum(len(r["proposals"]) for r in pred_recs)
    print(f"wrote {len(scenes)} scenes, {n_inst} instances, {n_prop} proposals to {out}")
    return EXIT_OK


# --- metrics / nms / match -------------------------------------------------

def cmd_metrics(args) -> int:
    cands = {}
    with open(args.candidates, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    rec = json.loads(line)
                    cands[str(rec["id"])] = rec["caption"]
                except (json.JSONDecodeError, KeyError, TypeError):
                    raise SchemaError("expected {\"id\", \"caption\"}", args.candidates, lineno)
    refs = {}
    with open(args.refs, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    rec = json.loads(line)
                    refs[str(rec["id"])] = list(rec["references"])
                except (json.JSONDecodeError, KeyError, TypeError):
                    raise SchemaError("expected {\"id\", \"references\"}", args.refs, lineno)
                if not refs[str(rec["id"])]:
                    raise SchemaError("empty reference list", args.refs, lineno)
    if set(cands) != set(refs):
        raise SchemaError(f"ids differ: {sorted(set(cands) ^ set(refs))}")
    metrics = args.metric
    df = None
    if "cider_d" in metrics:
        if args.df_corpus == "refs":
            df = build_df([[tokenize(r) for r in refs[i]] for i in sorted(refs)])
        else:
            df = build_df(_read_reference_groups(args.df_corpus))
    totals = {m: 0.0 for m in metrics}
    for i in sorted(cands):
        cand, rs = tokenize(cands[i]), [tokenize(r) for r in refs[i]]
        row = {m: textmetrics.score(m, cand, rs, df) for m in metrics}
        for m in metrics:
            totals[m] += row[m]
        print(dumps({"id": i, **row}))
    n = max(len(cands), 1)
    print(dumps({"id": "mean", **{m: v / n for m, v in totals.items()}}))
    return EXIT_OK


def cmd_nms(args) -> int:
    preds = load_predictions(args.pred, None)
    lines = []
    for sid in sorted(preds):
        p = preds[sid]
        # survivors keep their input order
        keep = sorted(nms(p.boxes, p.scores, args.threshold)) if len(p) else []
        lines.append(dumps(pred_record(sid, p.subset(keep))))
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_match(args) -> int:
    gts, class_names, _ = load_ground_truth(args.gt)
    preds = load_predictions(args.pred, len(class_names))
    weights = SetLossWeights.from_sequence(args.alpha)
    for sid in sorted(gts):
        if sid not in preds:
            raise SchemaError(f"no predictions for scene {sid!r}")
        p, g = preds[sid], gts[sid]
        rec = {"scene_id": sid, "pairs": [], "total_cost": 0.0,
               "unmatched_queries": list(range(len(p)))}
        if len(p):
            a = match_scene(p, g, weights)
            comp = cost_components(p, g) if len(g) else {}
            pairs = []
            for r, c in a.pairs:
                terms = {k: float(v[r, c]) for k, v in comp.items()}
                cost = (weights.giou * terms["giou"] + weights.cls * terms["cls"]
                        + weights.center * terms["center"] + weights.size * terms["size"])
                pairs.append({"instance": g.ids[r], "query": c, "cost": cost, **terms})
            rec.update(pairs=pairs, total_cost=a.total_cost, unmatched_queries=a.unmatched_cols)
        print(dumps(rec))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="densecap3d", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="m@kIoU and detection AP/AR")
    p.add_argument("gt")
    p.add_argument("pred")
    p.add_argument("--iou-thresholds", type=_floats, default=[0.25, 0.5])
    p.add_argument("--nms-threshold", type=float, default=0.25)
    p.add_argument("--no-nms", action="store_true")
    p.add_argument("--metrics", type=_metrics, default=list(ALL_METRICS))
    p.add_argument("--df-corpus", default="gt",
                   help="'gt' (reference corpora of the GT file) or a JSONL path")
    p.add_argument("--ap-interpolation", choices=["all", "11point"], default="all")
    p.add_argument("--json-out", default=None, help="write the report as JSON ('-' = stdout)")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write synthetic gt.jsonl, preds.jsonl and point clouds")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--scenes", type=int, default=10)
    p.add_argument("--instances", type=_instance_range, default=(2, 8), help="N or LO,HI")
    p.add_argument("--captions", type=int, default=1, help="captions per instance")
    p.add_argument("--out-dir", default="synth")
    p.add_argument("--perturb", type=_perturb, action="append",
                   help="KEY=VALUE with KEY in noise, class_error, duplicate, caption_drop, pad_to")
    p.add_argument("--points-format", choices=["bin", "jsonl"], default="bin")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("metrics", help="score candidate captions against references")
    p.add_argument("candidates")
    p.add_argument("refs")
    p.add_argument("--metric", type=_metric_arg, default="all", help="'all' or comma-separated metric names")
    p.add_argument("--df-corpus", default="refs",
                   help="'refs' (the references file) or a JSONL path")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("nms", help="apply NMS to a prediction file")
    p.add_argument("pred")
    p.add_argument("--threshold", type=float, default=0.25)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_nms)

    p = sub.add_parser("match", help="Hungarian matching with per-pair cost terms")
    p.add_argument("gt")
    p.add_argument("pred")
    p.add_argument("--alpha", type=_floats, default=[10.0, 1.0, 5.0, 1.0],
                   help="giou,cls,center,size weights")
    p.set_defaults(func=cmd_match)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SchemaError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InvariantError, AssertionError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
