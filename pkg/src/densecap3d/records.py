"""JSONL ground-truth / prediction records.

Ground truth, one scene per line::

    {"scene_id": "scene0000",
     "instances": [{"id": 0, "class": "chair", "box": [cx, cy, cz, sx, sy, sz],
                    "captions": ["the brown chair is near the table"]}],
     "points": "points/scene0000.bin"}          # optional

Predictions, one scene per line::

    {"scene_id": "scene0000",
     "proposals": [{"box": [...], "class_probs": [p_0, ..., p_C], "caption": "..."}]}

``class_probs`` has one slot per class of the ground-truth vocabulary
(sorted class strings) plus a final "no object" slot.
"""
from __future__ import annotations

import json
import math
from typing import Iterable, Mapping

import numpy as np

from ._validation import PROB_ATOL
from .scene import InstanceSet, PredictionSet


class SchemaError(ValueError):
    """Malformed input record; ``line`` is 1-based when known."""

    def __init__(self, message: str, path=None, line: int = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


def round_sig(x, digits: int = 9):
    """Round floats (recursively in lists/dicts) to ``digits`` significant digits."""
    if isinstance(x, float):
        return float(f"{x:.{digits}g}")
    if isinstance(x, (np.floating,)):
        return float(f"{float(x):.{digits}g}")
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, dict):
        return {k: round_sig(v, digits) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [round_sig(v, digits) for v in x]
    return x


def dumps(obj) -> str:
    return json.dumps(round_sig(obj), sort_keys=True, ensure_ascii=False)


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON ({exc.msg})", path, lineno) from None
            if not isinstance(rec, dict):
                raise SchemaError("record must be a JSON object", path, lineno)
            if not isinstance(rec.get("scene_id"), str):
                raise SchemaError("missing string field 'scene_id'", path, lineno)
            yield lineno, rec


def _box(value, path, lineno, what):
    if (not isinstance(value, list) or len(value) != 6
            or not all(isinstance(v, (int, float)) and math.isfinite(v) for v in value)):
        raise SchemaError(f"{what}: box must be 6 finite numbers", path, lineno)
    if min(value[3:]) <= 0:
        raise SchemaError(f"{what}: box sizes must be positive", path, lineno)
    return [float(v) for v in value]


def load_ground_truth(path) -> tuple[dict[str, InstanceSet], list[str], dict[str, str]]:
    """Return ``(scenes, class_names, points_refs)``.

    Class ids index into ``class_names``: the sorted union of class strings
    in the file.
    """
    raw = {}
    points = {}
    classes = set()
    for lineno, rec in _read_lines(path):
        sid = rec["scene_id"]
        if sid in raw:
            raise SchemaError(f"duplicate scene_id {sid!r}", path, lineno)
        insts = rec.get("instances")
        if not isinstance(insts, list):
            raise SchemaError("'instances' must be a list", path, lineno)
        seen = set()
        parsed = []
        for k, inst in enumerate(insts):
            what = f"instance {k}"
            if not isinstance(inst, dict):
                raise SchemaError(f"{what}: must be an object", path, lineno)
            iid = inst.get("id")
            if not isinstance(iid, int) or isinstance(iid, bool):
                raise SchemaError(f"{what}: 'id' must be an integer", path, lineno)
            if iid in seen:
                raise SchemaError(f"{what}: duplicate instance id {iid}", path, lineno)
            seen.add(iid)
            cls = inst.get("class")
            if not isinstance(cls, str) or not cls:
                raise SchemaError(f"{what}: 'class' must be a nonempty string", path, lineno)
            caps = inst.get("captions")
            if not isinstance(caps, list) or not caps or not all(isinstance(c, str) for c in caps):
                raise SchemaError(f"{what}: 'captions' must be a nonempty list of strings",
                                  path, lineno)
            parsed.append((iid, cls, _box(inst.get("box"), path, lineno, what), caps))
            classes.add(cls)
        if "points" in rec:
            points[sid] = rec["points"]
        raw[sid] = parsed
    names = sorted(classes)
    index = {c: i for i, c in enumerate(names)}
    scenes = {}
    for sid, parsed in raw.items():
        if parsed:
            scenes[sid] = InstanceSet([p[0] for p in parsed], np.array([p[2] for p in parsed]),
                                      [index[p[1]] for p in parsed], [p[3] for p in parsed])
        else:
            scenes[sid] = InstanceSet.empty()
    return scenes, names, points


def load_predictions(path, num_classes: int = None) -> dict[str, PredictionSet]:
    """Parse a prediction file; ``num_classes=None`` infers it from the first proposal."""
    out = {}
    width = None if num_classes is None else num_classes + 1
    for lineno, rec in _read_lines(path):
        sid = rec["scene_id"]
        if sid in out:
            raise SchemaError(f"duplicate scene_id {sid!r}", path, lineno)
        props = rec.get("proposals")
        if not isinstance(props, list):
            raise SchemaError("'proposals' must be a list", path, lineno)
        boxes, probs, caps = [], [], []
        for k, prop in enumerate(props):
            what = f"proposal {k}"
            if not isinstance(prop, dict):
                raise SchemaError(f"{what}: must be an object", path, lineno)
            boxes.append(_box(prop.get("box"), path, lineno, what))
            p = prop.get("class_probs")
            if width is None and isinstance(p, list) and p:
                width, num_classes = len(p), len(p) - 1
            if (not isinstance(p, list) or len(p) != width
                    or not all(isinstance(v, (int, float)) and math.isfinite(v) for v in p)):
                raise SchemaError(f"{what}: 'class_probs' must be {width} finite numbers "
                                  f"({num_classes} classes + no object)", path, lineno)
            if min(p) < 0 or abs(math.fsum(p) - 1.0) > PROB_ATOL:
                raise SchemaError(f"{what}: 'class_probs' must be nonnegative and sum to 1",
                                  path, lineno)
            probs.append(p)
            cap = prop.get("caption", "")
            if not isinstance(cap, str):
                raise SchemaError(f"{what}: 'caption' must be a string", path, lineno)
            caps.append(cap)
        if boxes:
            out[sid] = PredictionSet(np.array(boxes), np.array(probs, dtype=np.float64), caps)
        else:
            out[sid] = PredictionSet.empty(num_classes or 0)
    return out


def gt_record(scene_id: str, instances: InstanceSet, class_names, points: str = None) -> dict:
    rec = {"scene_id": scene_id, "instances": [
        {"id": int(instances.ids[j]), "class": class_names[int(instances.class_ids[j])],
         "box": instances.boxes[j].tolist(), "captions": list(instances.corpora[j])}
        for j in range(len(instances))]}
    if points is not None:
        rec["points"] = points
    return rec


def pred_record(scene_id: str, preds: PredictionSet) -> dict:
    return {"scene_id": scene_id, "proposals": [
        {"box": preds.boxes[q].tolist(), "class_probs": preds.class_probs[q].tolist(),
         "caption": preds.captions[q]} for q in range(len(preds))]}


def write_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps(rec) + "\n")


def echo_predictions(gts: Mapping[str, InstanceSet], num_classes: int) -> dict[str, PredictionSet]:
    """Ground truth turned into perfect predictions (first caption, certain class)."""
    out = {}
    for sid, inst in gts.items():
        if len(inst) == 0:
            out[sid] = PredictionSet.empty(num_classes)
            continue
        probs = np.zeros((len(inst), num_classes + 1))
        probs[np.arange(len(inst)), inst.class_ids] = 1.0
        out[sid] = PredictionSet(inst.boxes.copy(), probs, [c[0] for c in inst.corpora])
    return out
