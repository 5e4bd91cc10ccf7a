"""Pairwise match costs between predictions and ground truths, and an exact
O(n^3) Hungarian solver for the resulting rectangular assignment problem."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import pairwise_giou


class CapacityError(ValueError):
    """More ground truths than candidate predictions."""


@dataclass
class Assignment:
    mapping: dict[int, int] = field(default_factory=dict)  # prediction row -> ground-truth column
    total_cost: float = 0.0

    @property
    def rows(self) -> list[int]:
        return sorted(self.mapping)

    def inverse(self) -> dict[int, int]:
        return {g: p for p, g in self.mapping.items()}


def _weights(weights):
    if weights is None:
        return 2.0, 5.0, 1.0
    return weights.lambda_iou, weights.lambda_l1, getattr(weights, "lambda_angle", 1.0)


def match_cost(score: float, pred_box, pred_angle: float, gt_box, gt_angle: float, weights=None) -> float:
    """-p + lambda_iou * (1 - GIoU) + lambda_l1 * |b - b_hat|_1 + lambda_angle * (1 - cos(da)).

    The class term is the linear probability, not its log.
    """
    return float(build_cost_matrix([score], [pred_box], [pred_angle], [gt_box], [gt_angle], weights)[0, 0])


def _boxes(boxes) -> np.ndarray:
    rows = [b.as_array() if hasattr(b, "as_array") else np.asarray(b, dtype=np.float64)[:4] for b in boxes]
    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def build_cost_matrix(scores, pred_boxes, pred_angles, gt_boxes, gt_angles, weights=None) -> np.ndarray:
    """[n_pred, n_gt] matrix of :func:`match_cost` entries."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    pb, gb = _boxes(pred_boxes), _boxes(gt_boxes)
    pa = np.asarray(pred_angles, dtype=np.float64).reshape(-1)
    ga = np.asarray(gt_angles, dtype=np.float64).reshape(-1)
    if len(gb) and not len(pb):
        raise CapacityError(f"{len(gb)} ground truths but no candidate predictions")
    if len({len(scores), len(pb), len(pa)}) != 1 or len(gb) != len(ga):
        raise ValueError("prediction / ground-truth field lengths disagree")
    lam_iou, lam_l1, lam_ang = _weights(weights)
    cost = -scores[:, None] + lam_iou * (1.0 - pairwise_giou(pb, gb))
    cost = cost + lam_l1 * np.abs(pb[:, None, :] - gb[None, :, :]).sum(axis=2)
    if lam_ang:
        cost = cost + lam_ang * (1.0 - np.cos(pa[:, None] - ga[None, :]))
    return cost


def hungarian_solve(costs) -> Assignment:
    """Minimum-cost injective assignment of every column to a distinct row.

    Shortest-augmenting-path formulation with dual potentials; candidate
    columns are scanned in index order so ties resolve deterministically
    toward lower prediction indices.
    """
    c = np.asarray(costs, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {c.shape}")
    n_pred, n_gt = c.shape
    if n_pred < n_gt:
        raise CapacityError(f"{n_gt} ground truths but only {n_pred} predictions")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix has non-finite entries")
    if n_gt == 0:
        return Assignment({}, 0.0)

    a = c.T  # rows: ground truths (n), columns: predictions (m >= n)
    n, m = a.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.int64)  # owner[j]: 1-based gt row holding column j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            cur = a[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1

    mapping = {j - 1: int(owner[j]) - 1 for j in range(1, m + 1) if owner[j]}
    total = math.fsum(c[p, g] for p, g in sorted(mapping.items(), key=lambda kv: kv[1]))
    return Assignment(dict(sorted(mapping.items())), total)
