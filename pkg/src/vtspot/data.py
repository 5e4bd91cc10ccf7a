"""Synthetic text videos, pseudo tracks, clip sampling, and annotation / frame I/O.

Annotation files are JSON Lines, one line per frame::

    {"video_id": "v0001", "frame": 0,
     "instances": [{"id": 3, "cx": 0.5, "cy": 0.4, "w": 0.3, "h": 0.1, "theta": 0.2, "text": "ABC"}]}

Trajectory files use the same layout with an extra ``"score"`` per instance.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from .font import CHARSET, GLYPH_H, GLYPH_W, PAD, word_bitmap
from .geometry import RotatedBox

FLOAT_DIGITS = 6


class ConfigError(ValueError):
    pass


class LengthError(ValueError):
    pass


class AnnotationParseError(ValueError):
    pass


class AnnotationValidationError(ValueError):
    pass


@dataclass(frozen=True)
class Instance:
    track_id: int
    box: RotatedBox
    text: str
    score: Optional[float] = None
    clipped: bool = field(default=False, compare=False)


@dataclass
class VideoClipSample:
    frames: list  # [3,H,W] float arrays in [0,1]
    annotations: list[list[Instance]]
    video_id: str = "video"
    frame_ids: Optional[list[int]] = None

    def __post_init__(self):
        if len(self.frames) != len(self.annotations):
            raise ValueError(f"{len(self.frames)} frames but {len(self.annotations)} annotation lists")
        if self.frame_ids is None:
            self.frame_ids = list(range(len(self.frames)))

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def frame(self, t: int) -> np.ndarray:
        return self.frames[t]


def validate_tracks(annotations: list[list[Instance]], where: str = ""):
    """Track ids unique per frame, contiguous in time, constant transcription."""
    spans: dict[int, list[int]] = {}
    texts: dict[int, str] = {}
    for t, insts in enumerate(annotations):
        ids = [i.track_id for i in insts]
        if len(set(ids)) != len(ids):
            raise AnnotationValidationError(f"{where}frame {t}: duplicate track ids {ids}")
        for inst in insts:
            spans.setdefault(inst.track_id, []).append(t)
            if texts.setdefault(inst.track_id, inst.text) != inst.text:
                raise AnnotationValidationError(
                    f"{where}track {inst.track_id}: transcription changes at frame {t}")
    for tid, frames in spans.items():
        if frames[-1] - frames[0] + 1 != len(frames):
            raise AnnotationValidationError(f"{where}track {tid} is not contiguous: frames {frames}")


# ----------------------------------------------------------------------
# synthetic generation
# ----------------------------------------------------------------------

@dataclass
class SynthConfig:
    height: int = 96
    width: int = 96
    max_instances: int = 3
    alphabet: str = "ABCDEFGHKLMN"
    word_len: tuple = (3, 5)
    max_text_len: int = 8
    glyph_scale: float = 1.75   # image pixels per font pixel
    translation_amp: float = 1.5  # px / frame
    rotation_amp: float = 0.01   # rad / frame
    scale_rate: float = 0.004    # relative size change / frame
    max_angle: float = math.pi / 6
    birth_prob: float = 0.08
    death_prob: float = 0.03
    video_len: int = 26
    noise_std: float = 0.015
    seed: int = 0

    def __post_init__(self):
        self.word_len = tuple(self.word_len)
        self.validate()

    def validate(self):
        if self.height % 8 or self.width % 8 or self.height < 8 or self.width < 8:
            raise ConfigError(f"resolution {self.height}x{self.width} must be divisible by 8")
        lo, hi = self.word_len
        if not 1 <= lo <= hi:
            raise ConfigError(f"bad word length range {self.word_len}")
        if hi > self.max_text_len:
            raise ConfigError(f"words up to {hi} chars exceed max_text_len={self.max_text_len}")
        missing = set(self.alphabet) - set(CHARSET)
        if missing or not self.alphabet:
            raise ConfigError(f"alphabet symbols without glyphs: {sorted(missing)}")
        if self.max_instances < 1 or self.video_len < 1:
            raise ConfigError("max_instances and video_len must be >= 1")
        for k in ("translation_amp", "rotation_amp", "scale_rate", "max_angle", "glyph_scale"):
            if getattr(self, k) < 0:
                raise ConfigError(f"{k} must be >= 0")
        if not (0 <= self.birth_prob <= 1 and 0 <= self.death_prob <= 1):
            raise ConfigError("birth/death probabilities must lie in [0, 1]")


def _word_extent_px(text: str, glyph_scale: float) -> tuple[float, float]:
    n = len(text)
    return (((GLYPH_W + 1) * n - 1 + 2 * PAD) * glyph_scale, (GLYPH_H + 2 * PAD) * glyph_scale)


def _half_extent(w, h, theta):
    c, s = abs(math.cos(theta)), abs(math.sin(theta))
    return (w * c + h * s) / 2, (w * s + h * c) / 2


class _Track:
    __slots__ = ("tid", "text", "cx", "cy", "vx", "vy", "theta", "omega", "scale", "srate",
                 "w0", "h0", "plate", "ink")

    def extent(self, cx=None, cy=None, theta=None, scale=None):
        cx = self.cx if cx is None else cx
        cy = self.cy if cy is None else cy
        theta = self.theta if theta is None else theta
        scale = self.scale if scale is None else scale
        hw, hh = _half_extent(self.w0 * scale, self.h0 * scale, theta)
        return cx - hw, cy - hh, cx + hw, cy + hh


def _inside(ext, cfg: SynthConfig, margin=1.0) -> bool:
    x0, y0, x1, y1 = ext
    return x0 >= margin - 0.5 and y0 >= margin - 0.5 and x1 <= cfg.width - 0.5 - margin \
        and y1 <= cfg.height - 0.5 - margin


def _overlaps(a, b, gap=2.0) -> bool:
    return not (a[2] + gap <= b[0] or b[2] + gap <= a[0] or a[3] + gap <= b[1] or b[3] + gap <= a[1])


def _spawn(rng, cfg: SynthConfig, tid: int, others: list) -> Optional[_Track]:
    lo, hi = cfg.word_len
    text = "".join(rng.choice(list(cfg.alphabet), size=int(rng.integers(lo, hi + 1))))
    tr = _Track()
    tr.tid, tr.text = tid, text
    tr.w0, tr.h0 = _word_extent_px(text, cfg.glyph_scale)
    tr.scale = float(rng.uniform(0.9, 1.1))
    tr.theta = float(rng.uniform(-cfg.max_angle, cfg.max_angle))
    tr.vx, tr.vy = (float(v) for v in rng.uniform(-cfg.translation_amp, cfg.translation_amp, 2))
    tr.omega = float(rng.uniform(-cfg.rotation_amp, cfg.rotation_amp))
    tr.srate = float(rng.uniform(-cfg.scale_rate, cfg.scale_rate))
    if rng.random() < 0.5:
        tr.plate, tr.ink = rng.uniform(0.8, 1.0, 3), rng.uniform(0.0, 0.2, 3)
    else:
        tr.plate, tr.ink = rng.uniform(0.0, 0.2, 3), rng.uniform(0.8, 1.0, 3)
    for _ in range(40):
        tr.cx = float(rng.uniform(0, cfg.width - 1))
        tr.cy = float(rng.uniform(0, cfg.height - 1))
        ext = tr.extent()
        if _inside(ext, cfg) and not any(_overlaps(ext, o.extent()) for o in others):
            return tr
    return None


def _step(tr: _Track, cfg: SynthConfig, others: list):
    theta = tr.theta + tr.omega
    if abs(theta) > cfg.max_angle:
        tr.omega = -tr.omega
        theta = tr.theta
    scale = tr.scale * (1 + tr.srate)
    if not 0.85 <= scale <= 1.15:
        tr.srate = -tr.srate
        scale = tr.scale
    ext = tr.extent(tr.cx + tr.vx, tr.cy + tr.vy, theta, scale)
    if _inside(ext, cfg) and not any(_overlaps(ext, o.extent()) for o in others):
        tr.cx, tr.cy, tr.theta, tr.scale = tr.cx + tr.vx, tr.cy + tr.vy, theta, scale
    else:
        tr.vx, tr.vy = -tr.vx, -tr.vy


def _to_instance(tr: _Track, cfg: SynthConfig) -> Instance:
    box = RotatedBox((tr.cx + 0.5) / cfg.width, (tr.cy + 0.5) / cfg.height,
                     tr.w0 * tr.scale / cfg.width, tr.h0 * tr.scale / cfg.height, tr.theta)
    return Instance(tr.tid, box, tr.text)


def _background(rng, cfg: SynthConfig) -> np.ndarray:
    h, w = cfg.height, cfg.width
    coarse = rng.uniform(0.25, 0.75, size=(3, 4, 4))
    bg = ndimage.zoom(coarse, (1, h / 4, w / 4), order=1, mode="nearest")[:, :h, :w]
    for _ in range(int(rng.integers(2, 6))):
        rw, rh = rng.integers(6, 40, size=2)
        rw, rh = min(int(rw), w - 1), min(int(rh), h - 1)
        x0, y0 = int(rng.integers(0, w - rw)), int(rng.integers(0, h - rh))
        alpha = rng.uniform(0.4, 0.8)
        color = rng.uniform(0.15, 0.85, size=(3, 1, 1))
        bg[:, y0:y0 + rh, x0:x0 + rw] = (1 - alpha) * bg[:, y0:y0 + rh, x0:x0 + rw] + alpha * color
    return bg


def _bilinear_mask(bm: np.ndarray, fx: np.ndarray, fy: np.ndarray) -> np.ndarray:
    h, w = bm.shape
    x0, y0 = np.floor(fx).astype(int), np.floor(fy).astype(int)
    ax, ay = fx - x0, fy - y0
    out = np.zeros(fx.shape)
    for dy, dx, wt in ((0, 0, (1 - ay) * (1 - ax)), (0, 1, (1 - ay) * ax), (1, 0, ay * (1 - ax)), (1, 1, ay * ax)):
        yy, xx = y0 + dy, x0 + dx
        ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        out += np.where(ok, bm[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)], 0.0) * wt
    return out


def draw_word(img: np.ndarray, inst: Instance, plate=None, ink=None) -> np.ndarray:
    """Paint one word plate into ``img`` [3,H,W] in place; returns its glyph coverage [H,W]."""
    _, H, W = img.shape
    bm = word_bitmap(inst.text)
    hf, wf = bm.shape
    b = inst.box
    cx, cy = b.cx * W - 0.5, b.cy * H - 0.5
    wpx, hpx = b.w * W, b.h * H
    hw, hh = _half_extent(wpx, hpx, b.theta)
    x0, x1 = max(0, int(cx - hw) - 2), min(W, int(cx + hw) + 3)
    y0, y1 = max(0, int(cy - hh) - 2), min(H, int(cy + hh) + 3)
    cover = np.zeros((H, W))
    if x0 >= x1 or y0 >= y1:
        return cover
    ys, xs = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    c, s = math.cos(b.theta), math.sin(b.theta)
    u = c * (xs - cx) + s * (ys - cy)
    v = -s * (xs - cx) + c * (ys - cy)
    su, sv = wpx / wf, hpx / hf
    fu, fv = u / su + wf / 2, v / sv + hf / 2
    plate_cov = (np.clip(np.minimum(fu, wf - fu) * su + 0.5, 0, 1)
                 * np.clip(np.minimum(fv, hf - fv) * sv + 0.5, 0, 1))
    g = _bilinear_mask(bm, fu - 0.5, fv - 0.5) * plate_cov
    plate = np.full(3, 1.0) if plate is None else np.asarray(plate)
    ink = np.zeros(3) if ink is None else np.asarray(ink)
    region = img[:, y0:y1, x0:x1]
    paint = plate[:, None, None] * (plate_cov - g) + ink[:, None, None] * g
    img[:, y0:y1, x0:x1] = region * (1 - plate_cov) + paint
    cover[y0:y1, x0:x1] = g
    return cover


def render_mask(instances: list[Instance], height: int, width: int) -> np.ndarray:
    """Union of glyph coverage of the given instances, [H, W]."""
    scratch = np.zeros((3, height, width))
    mask = np.zeros((height, width))
    for inst in instances:
        mask = np.maximum(mask, draw_word(scratch, inst))
    return mask


def _quantize(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


class SyntheticVideo:
    """A seeded synthetic video; frames are rendered on demand."""

    def __init__(self, config: SynthConfig, length: int, seed, video_id: str = "synth"):
        if length < 1:
            raise LengthError("video length must be >= 1")
        config.validate()
        self.config = config
        self.video_id = video_id
        self._seed = seed
        rng = np.random.default_rng(seed)
        self._background = _background(rng, config)
        self._states: list[list[tuple]] = []
        self.annotations: list[list[Instance]] = []
        active: list[_Track] = []
        next_id = 0
        for t in range(length):
            if t > 0:
                active = [tr for tr in active if rng.random() >= config.death_prob]
                for i, tr in enumerate(active):
                    _step(tr, config, active[:i] + active[i + 1:])
            n_new = int(rng.integers(1, config.max_instances + 1)) if t == 0 else int(
                len(active) < config.max_instances and rng.random() < config.birth_prob)
            for _ in range(min(n_new, config.max_instances - len(active))):
                tr = _spawn(rng, config, next_id, active)
                if tr is not None:
                    active.append(tr)
                    next_id += 1
            insts = [_to_instance(tr, config) for tr in active]
            self.annotations.append(insts)
            self._states.append([(inst, tr.plate.copy(), tr.ink.copy()) for inst, tr in zip(insts, active)])

    @property
    def n_frames(self) -> int:
        return len(self.annotations)

    def __len__(self) -> int:
        return self.n_frames

    def render(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        cfg = self.config
        img = self._background.copy()
        mask = np.zeros((cfg.height, cfg.width))
        for inst, plate, ink in self._states[t]:
            mask = np.maximum(mask, draw_word(img, inst, plate, ink))
        if cfg.noise_std:
            noise_rng = np.random.default_rng([*np.atleast_1d(self._seed), 7919, t])
            img = img + noise_rng.normal(0, cfg.noise_std, size=img.shape)
        return _quantize(img), mask

    def frame(self, t: int) -> np.ndarray:
        return self.render(t)[0]

    def clip(self, indices=None) -> VideoClipSample:
        indices = list(range(self.n_frames)) if indices is None else list(indices)
        return VideoClipSample([self.frame(t) for t in indices], [self.annotations[t] for t in indices],
                               self.video_id, indices)


def generate_clip(config: SynthConfig, length: int, seed=None, video_id: str = "synth") -> VideoClipSample:
    """Render a whole synthetic clip; fully determined by ``seed`` (default ``config.seed``)."""
    if length < 1:
        raise LengthError("clip length must be >= 1")
    return SyntheticVideo(config, length, config.seed if seed is None else seed, video_id).clip()


class SyntheticDataset:
    """``n`` seeded synthetic videos generated lazily."""

    def __init__(self, config: SynthConfig, n: int, seed: int = 0, length: Optional[int] = None,
                 prefix: str = "synth"):
        self.config = config
        self.n = n
        self.seed = seed
        self.length = length or config.video_len
        self.prefix = prefix

    def __len__(self) -> int:
        return self.n

    def video(self, i: int) -> SyntheticVideo:
        if not 0 <= i < self.n:
            raise IndexError(i)
        return SyntheticVideo(self.config, self.length, [self.seed, i], f"{self.prefix}{i:05d}")


# ----------------------------------------------------------------------
# pseudo tracks and clip sampling
# ----------------------------------------------------------------------

def pseudo_tracks_from_image(frame: np.ndarray, annotations: list[Instance], length: int,
                             shift: float, seed=0) -> VideoClipSample:
    """A clip of ``length`` randomly shifted copies of one still frame.

    Each frame gets an independent global translation of up to ``shift``
    pixels per axis; boxes move with it and are clamped into [0, 1]
    (``Instance.clipped`` marks clamped boxes).
    """
    if length < 1:
        raise LengthError("pseudo clip length must be >= 1")
    rng = np.random.default_rng(seed)
    frame = np.asarray(frame, dtype=np.float64)
    _, H, W = frame.shape
    frames, annots = [], []
    for _ in range(length):
        dx, dy = rng.uniform(-shift, shift, size=2) if shift > 0 else (0.0, 0.0)
        if dx or dy:
            img = np.stack([ndimage.shift(ch, (dy, dx), order=1, mode="nearest") for ch in frame])
        else:
            img = frame.copy()
        frames.append(_quantize(img))
        moved = []
        for inst in annotations:
            b = inst.box
            cx, cy = b.cx + dx / W, b.cy + dy / H
            ccx, ccy = min(max(cx, 0.0), 1.0), min(max(cy, 0.0), 1.0)
            w, h = min(b.w, 1.0), min(b.h, 1.0)
            clipped = (ccx, ccy, w, h) != (cx, cy, b.w, b.h)
            moved.append(replace(inst, box=RotatedBox(ccx, ccy, w, h, b.theta), clipped=clipped))
        annots.append(moved)
    return VideoClipSample(frames, annots, "pseudo")


def sample_clip_indices(n_frames: int, clip_len: int, max_interval: int = 5, rng=None) -> list[int]:
    """Indices of ``clip_len`` frames at one stride drawn uniformly from
    [1, max_interval], capped so the clip fits in the video."""
    if clip_len < 1:
        raise LengthError("clip_len must be >= 1")
    if n_frames < clip_len:
        raise LengthError(f"video of {n_frames} frames is shorter than clip_len={clip_len}")
    rng = rng if rng is not None else np.random.default_rng()
    cap = max_interval if clip_len == 1 else min(max_interval, (n_frames - 1) // (clip_len - 1))
    stride = int(rng.integers(1, max(1, cap) + 1))
    start = int(rng.integers(0, n_frames - (clip_len - 1) * stride))
    return [start + k * stride for k in range(clip_len)]


def sample_training_clip(video, clip_len: int, max_interval: int = 5, rng=None) -> VideoClipSample:
    idx = sample_clip_indices(video.n_frames, clip_len, max_interval, rng)
    return VideoClipSample([video.frame(t) for t in idx], [video.annotations[t] for t in idx],
                           getattr(video, "video_id", "video"), idx)


# ----------------------------------------------------------------------
# annotation files
# ----------------------------------------------------------------------

_FRAME_KEYS = {"video_id", "frame", "instances"}
_INST_KEYS = {"id", "cx", "cy", "w", "h", "theta", "text"}


def _r(x: float) -> float:
    return round(float(x), FLOAT_DIGITS)


def _instance_record(inst: Instance, with_score: bool) -> dict:
    b = inst.box
    rec = {"id": int(inst.track_id), "cx": _r(b.cx), "cy": _r(b.cy), "w": _r(b.w), "h": _r(b.h),
           "theta": _r(b.theta), "text": inst.text}
    if with_score:
        rec["score"] = _r(inst.score if inst.score is not None else 1.0)
    return rec


def write_annotations(path, videos: dict[str, list[list[Instance]]], with_scores: bool = False):
    """Write ``{video_id: per-frame instance lists}`` as JSON Lines."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for vid, frames in videos.items():
            for t, insts in enumerate(frames):
                rec = {"video_id": vid, "frame": t,
                       "instances": [_instance_record(i, with_scores) for i in insts]}
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def _num(rec, key, lineno):
    v = rec[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise AnnotationParseError(f"line {lineno}: field {key!r} must be a finite number")
    return float(v)


def read_annotations(path, allow_score: bool = True) -> dict[str, list[list[Instance]]]:
    """Parse a JSON Lines annotation or trajectory file (strict schema)."""
    frames: dict[str, dict[int, list[Instance]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise AnnotationParseError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict) or set(rec) != _FRAME_KEYS:
                keys = sorted(rec) if isinstance(rec, dict) else type(rec).__name__
                raise AnnotationParseError(f"line {lineno}: expected keys {sorted(_FRAME_KEYS)}, got {keys}")
            vid, t, items = rec["video_id"], rec["frame"], rec["instances"]
            if not isinstance(vid, str) or isinstance(t, bool) or not isinstance(t, int) or t < 0 \
                    or not isinstance(items, list):
                raise AnnotationParseError(f"line {lineno}: bad video_id/frame/instances types")
            insts = []
            for item in items:
                allowed = _INST_KEYS | ({"score"} if allow_score else set())
                if not isinstance(item, dict) or not (_INST_KEYS <= set(item) <= allowed):
                    raise AnnotationParseError(f"line {lineno}: instance keys must be {sorted(_INST_KEYS)}"
                                               + (" (+score)" if allow_score else ""))
                tid = item["id"]
                if isinstance(tid, bool) or not isinstance(tid, int) or not isinstance(item["text"], str):
                    raise AnnotationParseError(f"line {lineno}: id must be int and text a string")
                vals = [_num(item, k, lineno) for k in ("cx", "cy", "w", "h", "theta")]
                if vals[2] <= 0 or vals[3] <= 0:
                    raise AnnotationValidationError(f"line {lineno}: track {tid} has non-positive w/h")
                score = _num(item, "score", lineno) if "score" in item else None
                insts.append(Instance(tid, RotatedBox(*vals), item["text"], score))
            per_video = frames.setdefault(vid, {})
            if t in per_video:
                raise AnnotationValidationError(f"line {lineno}: duplicate frame {t} for video {vid!r}")
            per_video[t] = insts
    out = {}
    for vid, per_frame in frames.items():
        seq = [per_frame.get(t, []) for t in range(max(per_frame) + 1)]
        validate_tracks(seq, f"video {vid!r}: ")
        out[vid] = seq
    return out


# ----------------------------------------------------------------------
# PPM frames and on-disk datasets
# ----------------------------------------------------------------------

def write_ppm(path, frame: np.ndarray):
    frame = np.asarray(frame, dtype=np.float64)
    c, h, w = frame.shape
    if c != 3:
        raise ValueError(f"expected a [3,H,W] frame, got {frame.shape}")
    data = np.clip(np.round(frame * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: only 8-bit binary PPM (P6) is supported")
    w, h = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(raw[pos + 1:pos + 1 + w * h * 3], dtype=np.uint8)
    if pixels.size != w * h * 3:
        raise ValueError(f"{path}: truncated pixel data")
    return pixels.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def list_frames(frames_dir) -> list[Path]:
    return sorted(Path(frames_dir).glob("*.ppm"))


class DiskVideo:
    """A video directory holding ``NNNNNN.ppm`` frames and ``annotations.jsonl``."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.video_id = self.directory.name
        self._frames = list_frames(self.directory)
        ann_path = self.directory / "annotations.jsonl"
        videos = read_annotations(ann_path, allow_score=False) if ann_path.exists() else {}
        seq = videos.get(self.video_id, [])
        self.annotations = seq + [[] for _ in range(len(self._frames) - len(seq))]
        if len(self.annotations) != len(self._frames):
            raise AnnotationValidationError(
                f"{self.directory}: annotations cover {len(self.annotations)} frames, "
                f"found {len(self._frames)} images")

    @property
    def n_frames(self) -> int:
        return len(self._frames)

    def __len__(self) -> int:
        return self.n_frames

    def frame(self, t: int) -> np.ndarray:
        return read_ppm(self._frames[t])

    def clip(self, indices=None) -> VideoClipSample:
        indices = list(range(self.n_frames)) if indices is None else list(indices)
        return VideoClipSample([self.frame(t) for t in indices], [self.annotations[t] for t in indices],
                               self.video_id, indices)


class DiskDataset:
    def __init__(self, split_dir):
        self.split_dir = Path(split_dir)
        self._dirs = sorted(p for p in self.split_dir.iterdir() if p.is_dir()) if self.split_dir.exists() else []

    def __len__(self) -> int:
        return len(self._dirs)

    def video(self, i: int) -> DiskVideo:
        return DiskVideo(self._dirs[i])


def save_video(video, directory):
    """Dump any video-like object (``n_frames``, ``frame``, ``annotations``) to disk."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t in range(video.n_frames):
        write_ppm(directory / f"{t:06d}.ppm", video.frame(t))
    write_annotations(directory / "annotations.jsonl", {directory.name: video.annotations})
