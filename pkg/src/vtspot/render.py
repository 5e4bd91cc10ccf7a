"""Overlay trajectories (rotated boxes, ids, transcriptions) on frames."""
from __future__ import annotations

import colorsys

import numpy as np

from .data import Instance
from .font import CHARSET, GLYPH_H, GLYPH_W, glyph
from .geometry import RotatedBox


def track_color(track_id: int) -> np.ndarray:
    """Deterministic, well-spread RGB colour in [0, 1] for a track id."""
    hue = (int(track_id) * 0.618033988749895) % 1.0
    return np.array(colorsys.hsv_to_rgb(hue, 0.9, 1.0))


def pixel_corners(box: RotatedBox, width: int, height: int) -> np.ndarray:
    """Box corners in pixel coordinates, clipped to the image, [4, 2] as (x, y)."""
    pts = box.to_pixels(width, height).corners()
    pts[:, 0] = np.clip(pts[:, 0], 0, width - 1)
    pts[:, 1] = np.clip(pts[:, 1], 0, height - 1)
    return pts


def _draw_line(img, p0, p1, color):
    _, h, w = img.shape
    n = int(np.ceil(np.max(np.abs(p1 - p0)))) + 1
    # round half up (rint's half-to-even would skip every other pixel on a
    # line through pixel borders); snap float noise first
    xs = np.floor(np.round(np.linspace(p0[0], p1[0], n), 6) + 0.5).astype(int)
    ys = np.floor(np.round(np.linspace(p0[1], p1[1], n), 6) + 0.5).astype(int)
    ok = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    img[:, ys[ok], xs[ok]] = color[:, None]


def _draw_label(img, text, x0, y0, color):
    _, h, w = img.shape
    x = x0
    for ch in text.upper():
        if ch not in CHARSET:
            x += GLYPH_W + 1
            continue
        ys, xs = np.nonzero(glyph(ch))
        ys, xs = ys + y0, xs + x
        ok = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
        img[:, ys[ok], xs[ok]] = color[:, None]
        x += GLYPH_W + 1


def render_frame(frame: np.ndarray, instances: list[Instance]) -> np.ndarray:
    """Copy of ``frame`` ([3,H,W] in [0,1]) with each instance drawn in its track colour."""
    img = np.array(frame, dtype=np.float64, copy=True)
    _, h, w = img.shape
    for inst in sorted(instances, key=lambda i: i.track_id):
        color = track_color(inst.track_id)
        pts = pixel_corners(inst.box, w, h)
        for k in range(4):
            _draw_line(img, pts[k], pts[(k + 1) % 4], color)
        label = f"{inst.track_id} {inst.text}".strip()
        top = int(np.floor(pts[:, 1].min())) - GLYPH_H - 1
        if top < 0:
            top = int(np.ceil(pts[:, 1].max())) + 2
        _draw_label(img, label, int(np.floor(pts[:, 0].min())), top, color)
    return img
