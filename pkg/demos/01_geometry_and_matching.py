"""Boxes, the rotated-RoI transform, and how predictions get matched to ground truth.

Run:  python3 demos/01_geometry_and_matching.py
"""
import math

import numpy as np

from vtspot import RoIParams, RotatedBox, affine_point, giou, hungarian_solve
from vtspot.autograd import Tensor
from vtspot.geometry import rotated_roi_align

# A rotated box is (cx, cy, w, h, theta).  The RoI transform moves its centre to
# the origin and un-rotates it, so a word tilted by 90 degrees reads left to right.
roi = RoIParams(RotatedBox(10.0, 7.0, 3.0, 1.0), 1, 1, alpha=math.pi / 2)
print("centre maps to   ", np.round(affine_point(10.0, 7.0, roi), 12))
print("(11, 7) maps to  ", np.round(affine_point(11.0, 7.0, roi), 12))

# Box similarity for matching is generalized IoU on the axis-aligned part;
# disjoint boxes still get a graded (negative) score.
a, b = RotatedBox(0.25, 0.25, 0.2, 0.2), RotatedBox(0.75, 0.75, 0.2, 0.2)
print(f"GIoU of two far-apart squares: {giou(a, b):.4f}")

# RoI align samples a fixed-size grid along the rotated box.  On a horizontal
# gradient image, a box rotated by 90 degrees turns the gradient vertical.
fmap = np.tile(np.arange(16.0), (1, 16, 1))
crop = rotated_roi_align(Tensor(fmap), RoIParams(RotatedBox(8.0, 8.0, 8.0, 4.0, math.pi / 2), 4, 8)).data[0]
print("rotated crop, first column:", np.round(crop[:, 0], 2))

# Predictions are assigned to ground truth by an exact minimum-cost matching.
cost = np.array([[4.0, 1.0, 3.0],
                 [2.0, 0.0, 5.0],
                 [3.0, 2.0, 2.0],
                 [9.0, 9.0, 9.0]])  # 4 predictions, 3 ground-truth words
m = hungarian_solve(cost)
print("prediction -> gt:", dict(sorted(m.mapping.items())),
      "total", sum(cost[p, g] for p, g in m.mapping.items()))
