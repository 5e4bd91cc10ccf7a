"""Detection, tracking and recognition losses."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag
from .assignment import Assignment
from .autograd import ContractError, Tensor
from .geometry import giou_tensor
from .model import EMPTY_CLASS, TEXT, FramePredictions, Vocabulary


@dataclass
class LossWeights:
    lambda_iou: float = 2.0
    lambda_l1: float = 5.0
    lambda_angle: float = 1.0  # 0 disables the angle term in both matching and loss
    sigma1: float = 1.0
    sigma2: float = 1.0
    no_object_weight: float = 0.1
    aux_weight: float = 1.0  # weight of each earlier decoder layer's loss relative to the last
    exit_weight: Optional[float] = None  # no-object weight for text queries whose object left; None = no_object_weight

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v is None and k == "exit_weight":
                continue
            if not v >= 0:
                raise ValueError(f"loss weight {k} must be >= 0, got {v}")


def _set_loss(preds: FramePredictions, targets: Sequence[Optional[tuple]], weights: LossWeights,
              empty_weight: Optional[float] = None) -> Tensor:
    """Class term over every query plus box/angle terms for queries with a target.

    ``targets[i]`` is ``(box4, angle)`` or None for the no-object class.
    """
    n = len(preds)
    if len(targets) != n:
        raise ContractError(f"{len(targets)} targets for {n} predictions")
    if n == 0:
        return Tensor(0.0)
    matched = [i for i, t in enumerate(targets) if t is not None]
    cls_idx = np.full(n, EMPTY_CLASS)
    cls_idx[matched] = TEXT
    cls_w = np.full(n, weights.no_object_weight if empty_weight is None else empty_weight)
    cls_w[matched] = 1.0
    logp = ag.pick(ag.log_softmax(preds.logits, axis=1), cls_idx)
    loss = ag.neg(ag.sum_(ag.mul(logp, cls_w)))
    if not matched:
        return loss
    gt_box = np.array([targets[i][0] for i in matched], dtype=np.float64).reshape(-1, 4)
    gt_ang = np.array([targets[i][1] for i in matched], dtype=np.float64)
    pb = ag.take_rows(preds.boxes, matched)
    if weights.lambda_iou:
        g = giou_tensor(pb, gt_box)
        loss = ag.add(loss, ag.mul(ag.sum_(ag.sub(1.0, g)), weights.lambda_iou))
    if weights.lambda_l1:
        l1 = ag.sum_(ag.abs_(ag.sub(pb, gt_box)))
        loss = ag.add(loss, ag.mul(l1, weights.lambda_l1))
    if weights.lambda_angle:
        pa = ag.take_rows(preds.angles_raw, matched)
        ang = ag.sum_(ag.sub(1.0, ag.cos(ag.sub(pa, gt_ang))))
        loss = ag.add(loss, ag.mul(ang, weights.lambda_angle))
    return loss


def frame_detection_loss(preds: FramePredictions, gt_boxes, gt_angles, assignment: Assignment,
                         weights: LossWeights) -> Tensor:
    """Loss of the empty-query predictions against this frame's new-born ground
    truths under a Hungarian assignment (prediction row -> gt column)."""
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    gt_angles = np.asarray(gt_angles, dtype=np.float64).reshape(-1)
    n, m = len(preds), len(gt_boxes)
    if len(gt_angles) != m:
        raise ContractError("ground-truth boxes and angles differ in length")
    for p, g in assignment.mapping.items():
        if not (0 <= p < n and 0 <= g < m):
            raise ContractError(f"assignment pair {p}->{g} outside {n} predictions x {m} ground truths")
    if len(set(assignment.mapping.values())) != len(assignment.mapping):
        raise ContractError("assignment is not injective")
    if m and len(assignment.mapping) != m:
        raise ContractError(f"assignment covers {len(assignment.mapping)} of {m} ground truths")
    targets = [None] * n
    for p, g in assignment.mapping.items():
        targets[p] = (gt_boxes[g], gt_angles[g])
    return _set_loss(preds, targets, weights)


def tracked_query_loss(preds: FramePredictions, track_ids: Sequence[int], gts_by_id: dict,
                       weights: LossWeights) -> Tensor:
    """Loss of text-query predictions against the ground truth sharing their
    track id; queries whose object is absent are pushed to the no-object class.

    ``gts_by_id`` maps track id -> ``(box4, angle)``.
    """
    if len(track_ids) != len(preds):
        raise ContractError(f"{len(track_ids)} track ids for {len(preds)} text queries")
    targets = [gts_by_id.get(t) for t in track_ids]
    return _set_loss(preds, targets, weights, weights.exit_weight)


def temporal_tracking_loss(clip_terms: Sequence[tuple], gt_counts: Sequence[int]) -> Tensor:
    """(sum over frames of detection + tracked terms) / max(1, total ground truths)."""
    if not clip_terms:
        raise ContractError("temporal loss needs at least one frame")
    if len(clip_terms) != len(gt_counts):
        raise ContractError("one ground-truth count per frame is required")
    total = None
    for det, trk in clip_terms:
        term = ag.add(det, trk)
        total = term if total is None else ag.add(total, term)
    return ag.mul(total, 1.0 / max(1, int(sum(gt_counts))))


def recognition_loss(logits: Optional[Tensor], gold) -> Tensor:
    """Mean cross-entropy over non-PAD positions of teacher-forced logits [B, L, V]."""
    if logits is None or logits.size == 0:
        return Tensor(0.0)
    gold = np.asarray(gold, dtype=np.int64)
    if logits.ndim != 3 or gold.shape != logits.shape[:2]:
        raise ContractError(f"logits {logits.shape} do not align with targets {gold.shape}")
    b, L, v = logits.shape
    flat = gold.reshape(-1)
    mask = (flat != Vocabulary.PAD).astype(np.float64)
    count = mask.sum()
    if count == 0:
        return Tensor(0.0)
    logp = ag.pick(ag.log_softmax(ag.reshape(logits, (b * L, v)), axis=1), flat)
    return ag.mul(ag.sum_(ag.mul(logp, mask)), -1.0 / count)


def total_loss(track: Tensor, rec: Tensor, weights: LossWeights) -> Tensor:
    return ag.add(ag.mul(track, weights.sigma1), ag.mul(rec, weights.sigma2))
