"""Pool quality (APR, AOI) and per-class pixel accuracy, plus report formatting."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .aog.model import tree_to_labelmap
from .core import InvalidInputError, LabelMap, SegmentMask

__all__ = [
    "UndefinedMetricError",
    "MetricReport",
    "apr",
    "aoi",
    "gt_parts",
    "iou_matrix",
    "pixel_accuracy",
    "pixel_accuracy_dataset",
    "tree_to_labelmap",
]


class UndefinedMetricError(ValueError):
    """No image has any ground-truth part."""


def gt_parts(gt, n_parts: int | None = None) -> list[SegmentMask]:
    """Non-null ground-truth part masks of a label map (or a list of masks, nulls dropped)."""
    if isinstance(gt, LabelMap):
        n = int(gt.labels.max()) if n_parts is None else n_parts
        masks = [gt.part_mask(p) for p in range(1, n + 1)]
    else:
        masks = list(gt)
    return [m for m in masks if m.area > 0]


def iou_matrix(gts: list[SegmentMask], segments: list[SegmentMask]) -> np.ndarray:
    """``out[j, m] = IoU(gts[j], segments[m])`` for non-null masks, by one matrix product."""
    if not gts or not segments:
        return np.zeros((len(gts), len(segments)))
    G = np.stack([g.bits.ravel() for g in gts]).astype(np.float32)
    S = np.stack([s.bits.ravel() for s in segments]).astype(np.float32)
    inter = (G @ S.T).astype(np.float64)
    union = G.sum(axis=1)[:, None] + S.sum(axis=1)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


def _per_image(pools, gts, reduce) -> float:
    if len(pools) != len(gts):
        raise InvalidInputError("pools and ground truths are not aligned")
    vals = []
    for pool, gt in zip(pools, gts):
        parts = gt_parts(gt)
        if not parts:
            continue
        best = iou_matrix(parts, list(pool)).max(axis=1) if len(pool) else np.zeros(len(parts))
        vals.append(reduce(best))
    if not vals:
        raise UndefinedMetricError("no ground-truth parts in any image")
    return float(np.mean(vals))


def apr(pools, gts) -> float:
    """Average part recall: fraction of gt parts matched by a segment with IoU strictly above 0.5."""
    return _per_image(pools, gts, lambda best: float(np.mean(best > 0.5)))


def aoi(pools, gts) -> float:
    """Average over gt parts of the best pool IoU, then over images."""
    return _per_image(pools, gts, lambda best: float(np.mean(best)))


def _counts(pred: LabelMap, gt: LabelMap, parts) -> tuple[np.ndarray, np.ndarray]:
    if pred.labels.shape != gt.labels.shape:
        raise InvalidInputError(f"label map dimensions differ: {pred.labels.shape} vs {gt.labels.shape}")
    hit = np.array([np.count_nonzero((gt.labels == p) & (pred.labels == p)) for p in parts])
    tot = np.array([np.count_nonzero(gt.labels == p) for p in parts])
    return hit, tot


def _ratios(hit, tot, parts) -> dict:
    per = {int(p): (float(h / t) if t > 0 else None) for p, h, t in zip(parts, hit, tot)}
    vals = [v for v in per.values() if v is not None]
    return {"per_part": per, "mean": float(np.mean(vals)) if vals else None}


def pixel_accuracy(pred: LabelMap, gt: LabelMap, parts) -> dict:
    """Per-class recall ``|gt = p and pred = p| / |gt = p|``; parts absent from gt are ``None``."""
    parts = list(parts)
    hit, tot = _counts(pred, gt, parts)
    return _ratios(hit, tot, parts)


def pixel_accuracy_dataset(preds, gts, parts) -> dict:
    """Per-class recall with pixel counts accumulated over all images."""
    parts = list(parts)
    hit = np.zeros(len(parts), np.int64)
    tot = np.zeros(len(parts), np.int64)
    if len(preds) != len(gts):
        raise InvalidInputError("predictions and ground truths are not aligned")
    for p, g in zip(preds, gts):
        h, t = _counts(p, g, parts)
        hit += h
        tot += t
    return _ratios(hit, tot, parts)


@dataclass
class MetricReport:
    """Named sections of metrics plus run metadata; serializes deterministically."""

    sections: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"sections": self.sections, "meta": self.meta}, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        d = json.loads(text)
        return cls(d["sections"], d["meta"])

    def to_text(self) -> str:
        lines = []
        for name in sorted(self.sections):
            sec = self.sections[name]
            lines.append(f"[{name}]")
            flat = {k: v for k, v in sec.items() if not isinstance(v, dict)}
            width = max((len(k) for k in flat), default=0)
            for k in sorted(flat):
                v = flat[k]
                lines.append(f"  {k:<{width}}  {v:.4f}" if isinstance(v, float) else f"  {k:<{width}}  {v}")
            for k in sorted(k for k, v in sec.items() if isinstance(v, dict)):
                lines.append(f"  {k}:")
                sub = sec[k]
                w2 = max(len(str(s)) for s in sub) if sub else 0
                for s in sub:
                    v = sub[s]
                    txt = f"{v:.4f}" if isinstance(v, float) else str(v)
                    lines.append(f"    {str(s):<{w2}}  {txt}")
        return "\n".join(lines) + "\n"
