"""Mask alignment, loss functions used as evaluation utilities, and segmentation metrics.

Metric values are percentages. Void is class ``-1`` in class maps and id ``0``
in segment label maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d
from scipy.optimize import linear_sum_assignment
from scipy.special import log_softmax

from .segmentation import VOID

BCE_CLAMP = 1e-7
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
LAMBDA_SSIM = 0.2
MATCH_IOU = 0.5
MASK_THRESHOLD = 0.5


@dataclass(frozen=True, eq=False)
class MaskSet:
    """Integer segment map (0 = void) and the class of each segment id."""

    labels: np.ndarray
    classes: dict[int, int]

    def __post_init__(self):
        ids = set(np.unique(self.labels).tolist()) - {0}
        missing = ids - set(self.classes)
        if missing:
            raise ValueError(f"segment ids {sorted(missing)} have no class")

    @classmethod
    def from_panoptic(cls, class_map, instance_map, things_only: bool = False) -> "MaskSet":
        """One segment per (class, instance) pair; stuff pixels form one segment per class."""
        class_map = np.asarray(class_map)
        instance_map = np.asarray(instance_map)
        valid = class_map != VOID
        if things_only:
            valid &= instance_map > 0
        labels = np.zeros(class_map.shape, dtype=np.int64)
        classes = {}
        if valid.any():
            keys = class_map[valid].astype(np.int64) * (1 << 32) + instance_map[valid].astype(np.int64)
            uniq, inv = np.unique(keys, return_inverse=True)
            labels[valid] = inv + 1
            classes = {i + 1: int(k >> 32) for i, k in enumerate(uniq.tolist())}
        return cls(labels, classes)


@dataclass
class MetricReport:
    pq: float = 0.0
    sq: float = 0.0
    rq: float = 0.0
    miou: float = 0.0
    macc: float = 0.0
    mcov: float = 0.0
    mwcov: float = 0.0
    per_class: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "pq": self.pq, "sq": self.sq, "rq": self.rq,
            "miou": self.miou, "macc": self.macc,
            "mcov": self.mcov, "mwcov": self.mwcov,
            "per_class": {str(k): v for k, v in self.per_class.items()},
        }


def hungarian_match(cost) -> tuple[dict[int, int], float]:
    """Minimum-cost assignment; with more rows than columns every column is used."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        return {}, 0.0
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    rows, cols = linear_sum_assignment(cost)
    return dict(zip(rows.tolist(), cols.tolist())), float(cost[rows, cols].sum())


def mask_iou_matrix(pred_masks, gt_masks, threshold: float = MASK_THRESHOLD) -> np.ndarray:
    """IoU between every binarized predicted mask and every GT mask: (R, C)."""
    p = (np.asarray(pred_masks) > threshold).reshape(len(pred_masks), -1).astype(np.float64)
    g = (np.asarray(gt_masks) > threshold).reshape(len(gt_masks), -1).astype(np.float64)
    inter = p @ g.T
    union = p.sum(1)[:, None] + g.sum(1)[None, :] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def align_instances(pred_masks, gt_masks) -> dict[int, int]:
    """Map each GT mask index to a predicted mask index, minimizing total (1 - IoU)."""
    cost = 1.0 - mask_iou_matrix(pred_masks, gt_masks)
    assignment, _ = hungarian_match(cost)
    return {c: r for r, c in assignment.items()}


def instance_loss(pred_mask, gt_mask) -> float:
    """Dice plus mean binary cross-entropy between a soft mask and a binary mask."""
    p = np.asarray(pred_mask, dtype=np.float64)
    g = np.asarray(gt_mask, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    denom = p.sum() + g.sum()
    dice = 1.0 - 2.0 * (p * g).sum() / denom if denom > 0 else 0.0
    pc = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    bce = -np.mean(g * np.log(pc) + (1.0 - g) * np.log(1.0 - pc))
    return float(dice + bce)


def semantic_loss(pred_logits, gt) -> float:
    """Mean cross-entropy over non-void pixels."""
    logits = np.asarray(pred_logits, dtype=np.float64)
    gt = np.asarray(gt)
    valid = gt != VOID
    if not valid.any():
        return 0.0
    if gt[valid].max() >= logits.shape[-1]:
        raise ValueError("ground-truth class id out of range")
    logp = log_softmax(logits[valid], axis=-1)
    return float(-np.mean(logp[np.arange(len(logp)), gt[valid]]))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    w = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return w / w.sum()


def _blur(img):
    w = gaussian_window()
    out = correlate1d(img, w, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, w, axis=1, mode="constant", cval=0.0)


def ssim(pred, gt) -> float:
    """Mean SSIM over pixels and channels; Gaussian window, zero padding."""
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(gt, dtype=np.float64)
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    vals = []
    for c in range(x.shape[-1]):
        a, b = x[..., c], y[..., c]
        mu_a, mu_b = _blur(a), _blur(b)
        var_a = _blur(a * a) - mu_a ** 2
        var_b = _blur(b * b) - mu_b ** 2
        cov = _blur(a * b) - mu_a * mu_b
        num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
        den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
        vals.append(num / den)
    return float(np.mean(vals))


def photometric_loss(pred, gt, lambda_ssim: float = LAMBDA_SSIM) -> float:
    """(1 - lambda) * L1 + lambda * (1 - SSIM)."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    l1 = float(np.mean(np.abs(p - g)))
    if lambda_ssim == 0:
        return l1
    return (1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - ssim(p, g))


def _pair_counts(a, b):
    """Counts of co-occurring (a, b) label pairs."""
    keys = a.astype(np.int64) * (1 << 32) + b.astype(np.int64)
    uniq, counts = np.unique(keys, return_counts=True)
    return (uniq >> 32), (uniq & 0xFFFFFFFF), counts


def panoptic_quality(pred: MaskSet, gt: MaskSet) -> tuple[float, float, float, dict]:
    """PQ, SQ, RQ pooled over all classes, plus a per-class breakdown.

    Segments match when they share a class and their mask IoU exceeds 0.5.
    Void pixels (id 0) belong to no segment and so never enter a union.
    With no true positives SQ is reported as 0.
    """
    if pred.labels.shape != gt.labels.shape:
        raise ValueError("pred and gt shapes differ")
    g = gt.labels.ravel()
    p = pred.labels.ravel()
    gt_ids, gt_area = np.unique(g[g != 0], return_counts=True)
    gt_area = dict(zip(gt_ids.tolist(), gt_area.tolist()))
    pred_ids, pred_area = np.unique(p[p != 0], return_counts=True)
    pred_area = dict(zip(pred_ids.tolist(), pred_area.tolist()))
    both = (g != 0) & (p != 0)
    pi, gi, inter = _pair_counts(p[both], g[both])
    matched_pred, matched_gt = set(), set()
    stats: dict[int, list] = {}

    def bucket(c):
        return stats.setdefault(c, [0, 0, 0, 0.0])  # tp, fp, fn, iou sum

    for a, b, n in zip(pi.tolist(), gi.tolist(), inter.tolist()):
        if pred.classes[a] != gt.classes[b]:
            continue
        iou = n / (pred_area[a] + gt_area[b] - n)
        if iou > MATCH_IOU:
            matched_pred.add(a)
            matched_gt.add(b)
            s = bucket(gt.classes[b])
            s[0] += 1
            s[3] += iou
    for b in gt_area:
        if b not in matched_gt:
            bucket(gt.classes[b])[2] += 1
    for a in pred_area:
        if a not in matched_pred:
            bucket(pred.classes[a])[1] += 1

    def scores(tp, fp, fn, iou):
        denom = tp + 0.5 * fp + 0.5 * fn
        pq = 100.0 * iou / denom if denom else 0.0
        sq = 100.0 * iou / tp if tp else 0.0
        rq = 100.0 * tp / denom if denom else 0.0
        return float(pq), float(sq), float(rq)

    per_class = {int(c): dict(zip(("pq", "sq", "rq"), scores(*s)), tp=s[0], fp=s[1], fn=s[2])
                 for c, s in sorted(stats.items())}
    totals = np.array([s for s in stats.values()], dtype=np.float64).reshape(-1, 4).sum(0)
    pq, sq, rq = scores(*totals)
    return pq, sq, rq, per_class


def semantic_metrics(pred, gt, num_classes: int | None = None) -> tuple[float, float]:
    """mIoU and mAcc from class maps; GT-void pixels are ignored."""
    pred = np.asarray(pred).ravel()
    gt = np.asarray(gt).ravel()
    valid = gt != VOID
    pred, gt = pred[valid], gt[valid]
    if gt.size == 0:
        return 0.0, 0.0
    n = num_classes or int(max(gt.max(), pred.max(initial=0)) + 1)
    p = np.where(pred == VOID, n, pred)
    conf = np.bincount(gt * (n + 1) + p, minlength=n * (n + 1)).reshape(n, n + 1)[:, :n]
    tp = np.diag(conf).astype(np.float64)
    gt_count = np.bincount(gt, minlength=n)[:n].astype(np.float64)
    pred_count = conf.sum(0).astype(np.float64)
    union = gt_count + pred_count - tp
    present = union > 0
    miou = 100.0 * np.mean(tp[present] / union[present]) if present.any() else 0.0
    has_gt = gt_count > 0
    macc = 100.0 * np.mean(tp[has_gt] / gt_count[has_gt]) if has_gt.any() else 0.0
    return float(miou), float(macc)


def coverage_metrics(pred: MaskSet, gt: MaskSet) -> tuple[float, float]:
    """mCov and mWCov: best prediction IoU per GT segment, plain and area-weighted."""
    g = gt.labels.ravel()
    p = pred.labels.ravel()
    gt_ids, gt_area = np.unique(g[g != 0], return_counts=True)
    if len(gt_ids) == 0:
        return 0.0, 0.0
    pred_ids, pred_area = np.unique(p[p != 0], return_counts=True)
    parea = dict(zip(pred_ids.tolist(), pred_area.tolist()))
    both = (g != 0) & (p != 0)
    pi, gi, inter = _pair_counts(p[both], g[both])
    best = dict.fromkeys(gt_ids.tolist(), 0.0)
    garea = dict(zip(gt_ids.tolist(), gt_area.tolist()))
    for a, b, n in zip(pi.tolist(), gi.tolist(), inter.tolist()):
        iou = n / (parea[a] + garea[b] - n)
        best[b] = max(best[b], iou)
    ious = np.array([best[i] for i in gt_ids.tolist()])
    mcov = 100.0 * ious.mean()
    mwcov = 100.0 * float((ious * gt_area).sum() / gt_area.sum())
    return float(mcov), mwcov


def evaluate_panoptic(pred_class, pred_instance, gt_class, gt_instance,
                      num_classes: int | None = None) -> MetricReport:
    """Full metric suite from (class, instance) label maps."""
    pred_class = np.asarray(pred_class)
    gt_class = np.asarray(gt_class)
    pq, sq, rq, per_class = panoptic_quality(MaskSet.from_panoptic(pred_class, pred_instance),
                                             MaskSet.from_panoptic(gt_class, gt_instance))
    miou, macc = semantic_metrics(pred_class, gt_class, num_classes)
    mcov, mwcov = coverage_metrics(MaskSet.from_panoptic(pred_class, pred_instance, things_only=True),
                                   MaskSet.from_panoptic(gt_class, gt_instance, things_only=True))
    return MetricReport(pq, sq, rq, miou, macc, mcov, mwcov, per_class)
