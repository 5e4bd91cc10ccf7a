"""Rotated boxes, box similarity measures, and rotated RoI feature extraction.

Coordinates follow image convention (x right, y down).  A box with angle
``theta`` has its local +x axis along ``(cos theta, sin theta)``.  Normalized
boxes store ``cx, w`` relative to image width and ``cy, h`` relative to image
height.  Pixel coordinates address pixel centres, so normalized 0 maps to
pixel coordinate -0.5.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag

HALF_PI = math.pi / 2


def normalize_angle(theta: float) -> float:
    """Fold an angle into [-pi/2, pi/2) (boxes are symmetric under rotation by pi)."""
    theta = float(theta)
    if not math.isfinite(theta):
        raise ValueError(f"angle must be finite, got {theta}")
    out = (theta + HALF_PI) % math.pi - HALF_PI
    if out >= HALF_PI:  # fmod roundoff can land exactly on the open end
        out -= math.pi
    return out


def normalize_angles(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if not np.all(np.isfinite(theta)):
        raise ValueError("angles must be finite")
    out = np.mod(theta + HALF_PI, math.pi) - HALF_PI
    return np.where(out >= HALF_PI, out - math.pi, out)


@dataclass(frozen=True)
class RotatedBox:
    cx: float
    cy: float
    w: float
    h: float
    theta: float = 0.0

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box extents must be positive, got w={self.w}, h={self.h}")
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h])

    def bounding_rect(self) -> "RotatedBox":
        """Axis-aligned rectangle enclosing the rotated box (theta = 0)."""
        c, s = abs(math.cos(self.theta)), abs(math.sin(self.theta))
        return RotatedBox(self.cx, self.cy, self.w * c + self.h * s, self.w * s + self.h * c, 0.0)

    def corners(self) -> np.ndarray:
        """4x2 corner coordinates in the box's own units."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        local = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]]) * [self.w / 2, self.h / 2]
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + [self.cx, self.cy]

    def to_pixels(self, width: int, height: int) -> "RotatedBox":
        return RotatedBox(self.cx * width - 0.5, self.cy * height - 0.5,
                          self.w * width, self.h * height, self.theta)


@dataclass(frozen=True)
class RoIParams:
    box: RotatedBox  # in pixel units of the sampled map
    out_h: int
    out_w: int
    alpha: float | None = None  # raw rotation; defaults to the box's canonical theta

    @property
    def angle(self) -> float:
        return self.box.theta if self.alpha is None else float(self.alpha)

    def __post_init__(self):
        if self.out_h < 1 or self.out_w < 1:
            raise ValueError(f"RoI output grid must be at least 1x1, got {self.out_h}x{self.out_w}")


# ----------------------------------------------------------------------
# the rigid transform and RoI sampling
# ----------------------------------------------------------------------

def affine_point(x: float, y: float, roi: RoIParams) -> tuple[float, float]:
    """Map an image point into the RoI frame: translate by -centre, then rotate by -alpha."""
    b = roi.box
    c, s = math.cos(roi.angle), math.sin(roi.angle)
    rot = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    trans = np.array([[1.0, 0.0, -b.cx], [0.0, 1.0, -b.cy], [0.0, 0.0, 1.0]])
    xp, yp, _ = rot @ trans @ np.array([x, y, 1.0])
    return float(xp), float(yp)


def roi_sample_grid(roi: RoIParams) -> tuple[np.ndarray, np.ndarray]:
    """Source pixel coordinates (xs, ys), each [out_h * out_w], of the RoI cell centres."""
    b = roi.box
    if not (b.w > 0 and b.h > 0):
        raise ValueError("degenerate RoI")
    u = (np.arange(roi.out_w) + 0.5) / roi.out_w * b.w - b.w / 2
    v = (np.arange(roi.out_h) + 0.5) / roi.out_h * b.h - b.h / 2
    vv, uu = np.meshgrid(v, u, indexing="ij")
    c, s = math.cos(roi.angle), math.sin(roi.angle)
    xs = b.cx + c * uu - s * vv
    ys = b.cy + s * uu + c * vv
    return xs.reshape(-1), ys.reshape(-1)


def rotated_roi_align(fmap, roi: RoIParams) -> ag.Tensor:
    """[C,H,W] map -> [C, out_h, out_w] horizontal crop of the rotated region."""
    fmap = fmap if isinstance(fmap, ag.Tensor) else ag.Tensor(fmap)
    xs, ys = roi_sample_grid(roi)
    out = ag.bilinear_sample_points(fmap, xs, ys)
    return ag.reshape(out, (fmap.shape[0], roi.out_h, roi.out_w))


# ----------------------------------------------------------------------
# box measures (axis-aligned on (cx, cy, w, h); the angle is scored separately)
# ----------------------------------------------------------------------

def _as4(b) -> np.ndarray:
    return b.as_array() if isinstance(b, RotatedBox) else np.asarray(b, dtype=np.float64)[..., :4]


def pairwise_giou(a, b) -> np.ndarray:
    """GIoU matrix between [n,4] and [m,4] arrays of (cx, cy, w, h)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)[:, None, :]
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)[None, :, :]
    ax0, ax1 = a[..., 0] - a[..., 2] / 2, a[..., 0] + a[..., 2] / 2
    ay0, ay1 = a[..., 1] - a[..., 3] / 2, a[..., 1] + a[..., 3] / 2
    bx0, bx1 = b[..., 0] - b[..., 2] / 2, b[..., 0] + b[..., 2] / 2
    by0, by1 = b[..., 1] - b[..., 3] / 2, b[..., 1] + b[..., 3] / 2
    inter = (np.clip(np.minimum(ax1, bx1) - np.maximum(ax0, bx0), 0, None)
             * np.clip(np.minimum(ay1, by1) - np.maximum(ay0, by0), 0, None))
    union = a[..., 2] * a[..., 3] + b[..., 2] * b[..., 3] - inter
    encl = (np.maximum(ax1, bx1) - np.minimum(ax0, bx0)) * (np.maximum(ay1, by1) - np.minimum(ay0, by0))
    return inter / union - (encl - union) / encl


def pairwise_iou(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)[:, None, :]
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)[None, :, :]
    iw = np.clip(np.minimum(a[..., 0] + a[..., 2] / 2, b[..., 0] + b[..., 2] / 2)
                 - np.maximum(a[..., 0] - a[..., 2] / 2, b[..., 0] - b[..., 2] / 2), 0, None)
    ih = np.clip(np.minimum(a[..., 1] + a[..., 3] / 2, b[..., 1] + b[..., 3] / 2)
                 - np.maximum(a[..., 1] - a[..., 3] / 2, b[..., 1] - b[..., 3] / 2), 0, None)
    inter = iw * ih
    return inter / (a[..., 2] * a[..., 3] + b[..., 2] * b[..., 3] - inter)


def giou(a, b) -> float:
    return float(pairwise_giou(_as4(a), _as4(b))[0, 0])


def box_l1(a, b) -> float:
    return float(np.abs(_as4(a) - _as4(b)).sum())


def angle_loss(a: float, a_hat: float) -> float:
    return 1.0 - math.cos(a_hat - a)


def bounding_rects(boxes) -> np.ndarray:
    """[n,5] (cx, cy, w, h, theta) -> [n,4] enclosing axis-aligned (cx, cy, w, h)."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 5)
    c, s = np.abs(np.cos(boxes[:, 4])), np.abs(np.sin(boxes[:, 4]))
    w, h = boxes[:, 2], boxes[:, 3]
    return np.stack([boxes[:, 0], boxes[:, 1], w * c + h * s, w * s + h * c], axis=1)


def giou_tensor(a: ag.Tensor, b) -> ag.Tensor:
    """Differentiable row-wise GIoU between [n,4] tensors of (cx, cy, w, h)."""
    b = b if isinstance(b, ag.Tensor) else ag.Tensor(b)

    def edges(t):
        cx, cy, w, h = (t[:, i] for i in range(4))
        hw, hh = ag.mul(w, 0.5), ag.mul(h, 0.5)
        return ag.sub(cx, hw), ag.add(cx, hw), ag.sub(cy, hh), ag.add(cy, hh), ag.mul(w, h)

    ax0, ax1, ay0, ay1, area_a = edges(a)
    bx0, bx1, by0, by1, area_b = edges(b)
    iw = ag.relu(ag.sub(ag.minimum(ax1, bx1), ag.maximum(ax0, bx0)))
    ih = ag.relu(ag.sub(ag.minimum(ay1, by1), ag.maximum(ay0, by0)))
    inter = ag.mul(iw, ih)
    union = ag.sub(ag.add(area_a, area_b), inter)
    ew = ag.sub(ag.maximum(ax1, bx1), ag.minimum(ax0, bx0))
    eh = ag.sub(ag.maximum(ay1, by1), ag.minimum(ay0, by0))
    encl = ag.mul(ew, eh)
    return ag.sub(ag.div(inter, union), ag.div(ag.sub(encl, union), encl))
