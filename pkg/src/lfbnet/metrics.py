"""Box overlap, greedy matching and all-point average precision.

AP(tau) is the area under the precision/recall curve after making the
precision envelope non-increasing. The summary over localization strictness
averages AP over tau = 0.50, 0.55, ..., 0.95.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "THRESHOLDS",
    "BBox",
    "Detection",
    "MatchResult",
    "ThresholdResult",
    "EvalReport",
    "iou",
    "match",
    "average_precision",
    "ap_range",
    "load_detections",
    "load_ground_truth",
]

THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: top-left corner and size in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box needs positive width and height, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True)
class Detection:
    image_id: str
    box: BBox
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score must lie in [0, 1], got {self.score}")


def iou(b_p: BBox, b_g: BBox) -> float:
    """Intersection area over union area; 0 for disjoint boxes."""
    iw = min(b_p.x + b_p.w, b_g.x + b_g.w) - max(b_p.x, b_g.x)
    ih = min(b_p.y + b_p.h, b_g.y + b_g.h) - max(b_p.y, b_g.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (b_p.area + b_g.area - inter)


@dataclass(frozen=True)
class MatchResult:
    """Outcome of matching at one threshold.

    ``order`` indexes the input detections by descending score, ``tp`` holds
    one flag per detection in that order and ``assigned`` the matched gt
    index within its image (-1 for false positives).
    """

    order: tuple[int, ...]
    tp: tuple[bool, ...]
    assigned: tuple[int, ...]
    n_gt: int

    @property
    def n_tp(self) -> int:
        return sum(self.tp)

    @property
    def n_fp(self) -> int:
        return len(self.tp) - self.n_tp

    @property
    def n_fn(self) -> int:
        return self.n_gt - self.n_tp


def _score_order(dets: Sequence[Detection]) -> list[int]:
    # sorted() is stable, so equal scores keep input order
    return sorted(range(len(dets)), key=lambda i: -dets[i].score)


def match(dets: Sequence[Detection], gts: Mapping[str, Sequence[BBox]], tau: float) -> MatchResult:
    """Greedy score-ordered matching.

    Each detection, highest score first, takes the still-unmatched ground
    truth box of its image with the largest IoU, provided that IoU is at
    least ``tau``. A ground truth box is never matched twice.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    order = _score_order(dets)
    used = {img: [False] * len(boxes) for img, boxes in gts.items()}
    tp, assigned = [], []
    for i in order:
        d = dets[i]
        boxes = gts.get(d.image_id, ())
        best, best_iou = -1, tau
        for j, g in enumerate(boxes):
            if used[d.image_id][j]:
                continue
            v = iou(d.box, g)
            if v >= best_iou and (best < 0 or v > best_iou):
                best, best_iou = j, v
        if best >= 0:
            used[d.image_id][best] = True
        tp.append(best >= 0)
        assigned.append(best)
    n_gt = sum(len(b) for b in gts.values())
    return MatchResult(tuple(order), tuple(tp), tuple(assigned), n_gt)


def _pr_curve(flags: Sequence[bool], total_gts: int):
    f = np.asarray(flags, dtype=bool)
    tp = np.cumsum(f)
    fp = np.cumsum(~f)
    precision = tp / np.maximum(tp + fp, 1)
    recall = tp / total_gts if total_gts > 0 else np.zeros(len(f))
    return tp, fp, precision, recall


def average_precision(flags: Sequence[bool], total_gts: int) -> float:
    """All-point interpolated AP for TP/FP flags listed in score order.

    Returns 0 when there are no ground truth boxes.
    """
    if total_gts < 0:
        raise ValueError("total_gts must be >= 0")
    if total_gts == 0 or len(flags) == 0:
        return 0.0
    _, _, precision, recall = _pr_curve(flags, total_gts)
    mrec = np.concatenate([[0.0], recall])
    mpre = np.concatenate([precision, [0.0]])
    # envelope: best precision reachable at this recall or beyond
    env = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.diff(mrec)
    return float(np.sum(steps * env[:-1]))


@dataclass(frozen=True)
class ThresholdResult:
    tau: float
    ap: float
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    tp: tuple[int, ...]
    fp: tuple[int, ...]
    fn: tuple[int, ...]


@dataclass(frozen=True)
class EvalReport:
    per_threshold: tuple[ThresholdResult, ...]
    ap50: float
    ap75: float
    ap_range: float
    n_detections: int = 0
    n_gt: int = 0
    thresholds: tuple[float, ...] = field(default=THRESHOLDS)

    def to_dict(self) -> dict:
        return {
            "AP50": self.ap50,
            "AP75": self.ap75,
            "AP_50_95": self.ap_range,
            "n_detections": self.n_detections,
            "n_gt": self.n_gt,
            "per_threshold": [
                {
                    "tau": r.tau,
                    "AP": r.ap,
                    "precision": list(r.precision),
                    "recall": list(r.recall),
                    "TP": list(r.tp),
                    "FP": list(r.fp),
                    "FN": list(r.fn),
                }
                for r in self.per_threshold
            ],
        }


def ap_range(dets: Sequence[Detection], gts: Mapping[str, Sequence[BBox]]) -> EvalReport:
    """AP at the ten thresholds 0.50..0.95 and their mean."""
    results = []
    for tau in THRESHOLDS:
        m = match(dets, gts, tau)
        tp, fp, precision, recall = _pr_curve(m.tp, m.n_gt)
        results.append(
            ThresholdResult(
                tau=tau,
                ap=average_precision(m.tp, m.n_gt),
                precision=tuple(float(p) for p in precision),
                recall=tuple(float(r) for r in recall),
                tp=tuple(int(t) for t in tp),
                fp=tuple(int(f) for f in fp),
                fn=tuple(int(m.n_gt - t) for t in tp),
            )
        )
    aps = [r.ap for r in results]
    n_gt = sum(len(b) for b in gts.values())
    return EvalReport(tuple(results), aps[0], aps[5], sum(aps) / len(aps), len(dets), n_gt)


def _read_json_array(path) -> list:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, list):
        raise ValueError(f"{path}: expected a JSON array")
    return data


def _bbox(entry, path, i) -> BBox:
    try:
        x, y, w, h = (float(v) for v in entry["bbox"])
        return BBox(x, y, w, h)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{path}: entry {i} has no valid bbox [x, y, w, h] ({exc})") from exc


def load_detections(path) -> list[Detection]:
    """Read ``[{image_id, bbox: [x, y, w, h], score}, ...]``."""
    out = []
    for i, e in enumerate(_read_json_array(path)):
        try:
            out.append(Detection(str(e["image_id"]), _bbox(e, path, i), float(e["score"])))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"{path}: entry {i} is missing image_id or score") from exc
        except ValueError as exc:
            raise ValueError(f"{path}: entry {i}: {exc}") from exc
    return out


def load_ground_truth(path) -> dict[str, list[BBox]]:
    """Read ``[{image_id, bbox: [x, y, w, h]}, ...]`` grouped by image."""
    out: dict[str, list[BBox]] = {}
    for i, e in enumerate(_read_json_array(path)):
        try:
            img = str(e["image_id"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"{path}: entry {i} is missing image_id") from exc
        out.setdefault(img, []).append(_bbox(e, path, i))
    return out
