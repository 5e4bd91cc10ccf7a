"""Clip-level training: query propagation through a clip, temporal tracking
loss, recognition loss, AdamW updates, logging and checkpoints."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import autograd as ag
from .assignment import build_cost_matrix, hungarian_solve
from .autograd import Tensor
from .checkpoint import load_arrays, save_arrays
from .data import SynthConfig, VideoClipSample, sample_training_clip
from .geometry import RotatedBox
from .losses import (LossWeights, frame_detection_loss, recognition_loss, temporal_tracking_loss,
                     total_loss, tracked_query_loss)
from .metrics import MotReport, evaluate
from .model import FramePredictions, ModelConfig, QueryEntry, VideoTextSpotter
from .tracker import advance_query_set, spot_video, trajectories_to_frames

log = logging.getLogger(__name__)

LOG_COLUMNS = ["step", "L_track", "L_rec", "L_total", "grad_norm"]


class TrainingError(RuntimeError):
    pass


class NonFiniteError(TrainingError):
    """Raised inside the forward pass when predictions stop being finite."""


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    synth: SynthConfig = field(default_factory=SynthConfig)
    tau: float = 0.5
    clip_len: int = 6
    max_interval: int = 5
    lr: float = 2e-4
    lr_drop_at: float = 0.5     # fraction of steps after which lr *= lr_drop_factor
    lr_drop_factor: float = 0.1
    weight_decay: float = 1e-4
    grad_clip: float = 1.0
    track_drop_prob: float = 0.1   # carried-query augmentations, see clip_loss
    fp_insert_prob: float = 0.3
    rec_jitter: float = 0.05       # relative noise on the boxes the recognizer trains on
    steps: int = 1000
    log_every: int = 50
    checkpoint_every: int = 500
    seed: int = 0
    n_train: int = 100
    n_val: int = 20
    val_len: int = 20
    data_dir: Optional[str] = None
    out_dir: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if isinstance(self.loss, dict):
            self.loss = LossWeights(**self.loss)
        if isinstance(self.synth, dict):
            self.synth = SynthConfig(**self.synth)
        self.validate()

    def validate(self):
        self.model.__post_init__()
        self.loss.__post_init__()
        self.synth.validate()
        if self.clip_len < 1 or self.max_interval < 1:
            raise ValueError("clip_len and max_interval must be >= 1")
        if self.rec_jitter < 0:
            raise ValueError("rec_jitter must be >= 0")
        if not (0 <= self.track_drop_prob <= 1 and 0 <= self.fp_insert_prob <= 1):
            raise ValueError("augmentation probabilities must lie in [0, 1]")
        if not (self.lr > 0 and self.steps >= 0 and 0 <= self.lr_drop_at <= 1):
            raise ValueError("lr must be > 0, steps >= 0, lr_drop_at in [0, 1]")
        if set(self.synth.alphabet) - set(self.model.alphabet):
            raise ValueError("synthetic alphabet must be a subset of the model vocabulary")
        if self.synth.word_len[1] > self.model.max_text_len:
            raise ValueError("synthetic words longer than the model's max_text_len")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        d["synth"]["word_len"] = list(self.synth.word_len)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


class AdamW:
    """Adam with decoupled weight decay; parameters without a gradient are left untouched."""

    def __init__(self, params, lr=2e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-4):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.t = 0
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data *= 1 - self.lr * self.wd
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"optim/m/{i}"] = m
            out[f"optim/v/{i}"] = v
        return out

    def load_state_arrays(self, arrays: dict, t: int):
        for i in range(len(self.params)):
            self.m[i] = arrays[f"optim/m/{i}"].copy()
            self.v[i] = arrays[f"optim/v/{i}"].copy()
        self.t = t


@dataclass
class ClipLoss:
    total: Tensor
    track: Tensor
    rec: Tensor
    n_gt: int


def clip_loss(model: VideoTextSpotter, clip: VideoClipSample, weights: LossWeights,
              rng: Optional[np.random.Generator] = None, drop_prob: float = 0.0,
              fp_prob: float = 0.0, rec_jitter: float = 0.0) -> ClipLoss:
    """Run the clip through the model frame by frame, carrying text queries,
    and build the combined training loss.

    A ground truth is new-born until an empty query is Hungarian-matched to
    it; from the next frame on, that query is bound to its track id until the
    track's last annotated frame.

    With ``rng`` given, two augmentations of the carried set are applied:
    each bound query is dropped with ``drop_prob`` (its object becomes
    new-born again), and with ``fp_prob`` per frame the best-scoring unmatched
    empty query is carried as a text query with no object behind it, so it is
    taught to die in the next frame.  ``rec_jitter`` perturbs the ground-truth
    boxes the recognizer reads from (relative std of centre, size and angle),
    so it learns to cope with imperfect predicted boxes.
    """
    n = model.n_queries
    text_queries: list[QueryEntry] = []
    terms, counts = [], []
    rois, words = [], []
    use_rec = weights.sigma2 > 0
    for frame, gts in zip(clip.frames, clip.annotations):
        qs = advance_query_set(text_queries, n)
        enc = model.encode(frame)
        hidden, preds = model.decoder_forward(enc, qs)
        gt_by_id = {g.track_id: (g.box.as_array(), g.box.theta) for g in gts}

        tslots = qs.text_slots()
        tids = [qs.entries[s].track_id for s in tslots]
        bound = set(tids)
        newborn = [g for g in gts if g.track_id not in bound]
        eslots = qs.empty_slots()
        nb_boxes = np.array([g.box.as_array() for g in newborn]).reshape(-1, 4)
        nb_angles = np.array([g.box.theta for g in newborn])

        def layer_losses(p: FramePredictions):
            trk = tracked_query_loss(p.subset(tslots), tids, gt_by_id, weights) if tslots else Tensor(0.0)
            sub = p.subset(eslots)
            costs = build_cost_matrix(sub.scores, sub.boxes.data, sub.angles_raw.data, nb_boxes, nb_angles, weights)
            if not np.all(np.isfinite(costs)):
                raise NonFiniteError("non-finite matching cost")
            assignment = hungarian_solve(costs)
            return frame_detection_loss(sub, nb_boxes, nb_angles, assignment, weights), trk, sub, assignment

        det, trk, sub, assignment = layer_losses(preds)
        if preds.aux and weights.aux_weight > 0:
            # deep supervision: every earlier layer is matched and scored on its own
            norm = 1.0 / (1.0 + weights.aux_weight * len(preds.aux))
            det, trk = ag.mul(det, norm), ag.mul(trk, norm)
            for p in preds.aux:
                d_aux, t_aux, _, _ = layer_losses(p)
                det = ag.add(det, ag.mul(d_aux, weights.aux_weight * norm))
                trk = ag.add(trk, ag.mul(t_aux, weights.aux_weight * norm))
        terms.append((det, trk))
        counts.append(len(gts))

        carried = []
        for s, tid in zip(tslots, tids):
            if tid in gt_by_id:
                carried.append(QueryEntry(s, "text", tid, hidden[s], preds.boxes.data[s].copy()))
        for p, g in assignment.mapping.items():
            s = eslots[p]
            carried.append(QueryEntry(s, "text", newborn[g].track_id, hidden[s], preds.boxes.data[s].copy()))
        if rng is not None:
            if drop_prob > 0:
                carried = [q for q in carried if rng.random() >= drop_prob]
            free = [p for p in range(len(eslots)) if p not in assignment.mapping]
            if fp_prob > 0 and free and rng.random() < fp_prob:
                p = max(free, key=lambda k: sub.scores[k])
                s = eslots[p]
                fake_id = -1 - len(terms)  # never a ground-truth id
                carried.append(QueryEntry(s, "text", fake_id, hidden[s], preds.boxes.data[s].copy()))
        text_queries = carried

        if use_rec and gts:
            boxes = [g.box for g in gts]
            if rng is not None and rec_jitter > 0:
                boxes = [_jitter(b, rec_jitter, rng) for b in boxes]
            rois.append(model.roi_features(enc.fused, boxes, frame.shape[-2:]))
            words.extend(g.text for g in gts)

    track = temporal_tracking_loss(terms, counts)
    if rois:
        logits, gold = model.recognition_forward(ag.concat(rois, axis=0), words)
        rec = recognition_loss(logits, gold)
    else:
        rec = Tensor(0.0)
    return ClipLoss(total_loss(track, rec, weights), track, rec, int(sum(counts)))


def _jitter(b: RotatedBox, s: float, rng) -> RotatedBox:
    dx, dy, sw, sh, da = rng.normal(0, s, 5)
    return RotatedBox(b.cx + dx * b.w, b.cy + dy * b.h, b.w * math.exp(sw), b.h * math.exp(sh), b.theta + da)


def grad_norm(params) -> float:
    return math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params if p.grad is not None))


def clip_gradients(params, max_norm: float) -> float:
    norm = grad_norm(params)
    if max_norm and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


def step_rng(seed: int, step: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, 104729, step, stream])


class Trainer:
    """Owns model, optimizer and step counter; each step samples one clip."""

    def __init__(self, model: VideoTextSpotter, dataset, config: RunConfig):
        self.model = model
        self.dataset = dataset
        self.config = config
        self.params = model.parameters()
        self.optim = AdamW(self.params, lr=config.lr, weight_decay=config.weight_decay)
        self.step_count = 0

    def lr_at(self, step: int) -> float:
        c = self.config
        return c.lr * (c.lr_drop_factor if step >= int(c.lr_drop_at * c.steps) else 1.0)

    def sample(self, step: int) -> tuple[int, VideoClipSample]:
        rng = step_rng(self.config.seed, step)
        vi = int(rng.integers(len(self.dataset)))
        video = self.dataset.video(vi)
        return vi, sample_training_clip(video, self.config.clip_len, self.config.max_interval, rng)

    def train_step(self) -> dict:
        step = self.step_count
        vi, clip = self.sample(step)
        self.optim.zero_grad()
        c = self.config
        diagnostic = {"step": step, "seed": c.seed, "video": vi, "frames": clip.frame_ids}
        with ag.Tape():
            try:
                losses = clip_loss(self.model, clip, c.loss, step_rng(c.seed, step, 1), c.track_drop_prob,
                                   c.fp_insert_prob, c.rec_jitter)
            except NonFiniteError as exc:
                raise TrainingError(json.dumps(diagnostic | {"loss": str(exc)})) from None
            total = float(losses.total.data)
            if not math.isfinite(total):
                raise TrainingError(json.dumps(diagnostic | {"loss": repr(total)}))
            ag.backward(losses.total)
        norm = clip_gradients(self.params, self.config.grad_clip)
        self.optim.lr = self.lr_at(step)
        self.optim.step()
        self.step_count += 1
        return {"step": step, "L_track": float(losses.track.data), "L_rec": float(losses.rec.data),
                "L_total": total, "grad_norm": norm}

    # -- persistence -------------------------------------------------------
    def save(self, path) -> Path:
        arrays = self.model.state_dict()
        arrays.update(self.optim.state_arrays())
        meta = {"model_config": self.model.config.to_dict(), "seed": self.model.config.seed,
                "step": self.step_count, "optim_t": self.optim.t, "run_config": self.config.to_dict()}
        return save_arrays(path, arrays, meta)

    def restore(self, path):
        arrays, manifest = load_arrays(path)
        self.model.load_state_dict({k: v for k, v in arrays.items() if not k.startswith("optim/")})
        self.params = self.model.parameters()
        self.optim.params = self.params
        self.optim.load_state_arrays(arrays, manifest["optim_t"])
        self.step_count = manifest["step"]

    def run(self, out_dir=None, steps: Optional[int] = None, on_log=None,
            cpu_budget: Optional[float] = None) -> list[dict]:
        """Train until ``steps`` (default ``config.steps``); with ``cpu_budget``
        (seconds of process CPU time) stop early once the budget is spent."""
        steps = self.config.steps if steps is None else steps
        cpu0 = time.process_time()
        out = Path(out_dir) if out_dir else None
        writer = fh = None
        if out:
            out.mkdir(parents=True, exist_ok=True)
            log_path = out / "train_log.csv"
            fresh = not log_path.exists() or self.step_count == 0
            fh = open(log_path, "w" if fresh else "a", newline="")
            writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
            if fresh:
                writer.writeheader()
        history = []
        t0 = time.time()
        try:
            while self.step_count < steps:
                if cpu_budget is not None and time.process_time() - cpu0 >= cpu_budget:
                    log.warning("CPU budget of %.0fs spent at step %d", cpu_budget, self.step_count)
                    break
                try:
                    rec = self.train_step()
                except TrainingError as exc:
                    if out:
                        (out / "diagnostic.json").write_text(str(exc) + "\n")
                    raise
                history.append(rec)
                if writer:
                    writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in rec.items()})
                if self.config.log_every and self.step_count % self.config.log_every == 0:
                    recent = history[-self.config.log_every:]
                    msg = (f"step {self.step_count}/{steps} track {np.mean([r['L_track'] for r in recent]):.4f} "
                           f"rec {np.mean([r['L_rec'] for r in recent]):.4f} "
                           f"({(time.time() - t0) / len(history):.2f}s/step)")
                    log.info(msg)
                    if on_log:
                        on_log(self, msg)
                    if fh:
                        fh.flush()
                if out and self.config.checkpoint_every and self.step_count % self.config.checkpoint_every == 0:
                    self.save(out / "checkpoint.json")
            if out:
                self.save(out / "checkpoint.json")
        finally:
            if fh:
                fh.close()
        return history


def predict_video(model, video, tau: float = 0.5, patience: int = 0):
    """Spot a whole video; returns per-frame predicted instances (raw per-frame text)."""
    frames = [video.frame(t) for t in range(video.n_frames)]
    tracks = spot_video(frames, model, tau=tau, patience=patience)
    return trajectories_to_frames(tracks, len(frames), consensus_text=False)


def evaluate_model(model, dataset, tau: float = 0.5, limit: Optional[int] = None) -> MotReport:
    n = len(dataset) if limit is None else min(limit, len(dataset))
    gts, preds = [], []
    for i in range(n):
        video = dataset.video(i)
        gts.append(video.annotations)
        preds.append(predict_video(model, video, tau))
    return evaluate(gts, preds)
