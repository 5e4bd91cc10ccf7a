"""The video text spotting network.

A four-block conv backbone produces a stride-8 map that a single-scale
transformer encoder refines; a decoder turns a fixed set of N queries
(learned empty slots plus text queries carried over from the previous frame)
into per-query class/box/angle predictions, each query attending mostly
around its reference box; a GRU-with-attention head reads words from rotated
RoI crops of a stride-4 recognition map computed by a separate conv stem.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .checkpoint import CheckpointError, load_arrays, save_arrays
from .geometry import RoIParams, RotatedBox, normalize_angles, roi_sample_grid
from .nn import (GRUCell, LayerNorm, Linear, MLP, Module, Conv2d, MultiHeadAttention,
                 sine_embed, sine_position_grid)

TEXT, EMPTY_CLASS = 0, 1  # columns of the 2-way class head


class VocabularyError(ValueError):
    pass


class Vocabulary:
    PAD, SOS, EOS = 0, 1, 2

    def __init__(self, alphabet: str):
        if len(set(alphabet)) != len(alphabet):
            raise ValueError("alphabet has repeated symbols")
        self.alphabet = alphabet
        self._index = {ch: i + 3 for i, ch in enumerate(alphabet)}

    def __len__(self) -> int:
        return len(self.alphabet) + 3

    def encode(self, text: str) -> list[int]:
        try:
            return [self._index[ch] for ch in text]
        except KeyError as exc:
            raise VocabularyError(f"symbol {exc.args[0]!r} not in vocabulary {self.alphabet!r}") from None

    def decode(self, ids) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i == self.EOS:
                break
            if i >= 3:
                out.append(self.alphabet[i - 3])
        return "".join(out)


@dataclass
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    enc_layers: int = 1
    dec_layers: int = 6
    n_queries: int = 20
    stride: int = 8
    backbone_channels: tuple = (16, 32, 48)
    fused_channels: int = 32
    ffn_dim: int = 128
    alphabet: str = "ABCDEFGHKLMN"
    roi_h: int = 4
    roi_w: int = 16
    max_text_len: int = 8
    rec_hidden: int = 64
    rec_embed: int = 32
    predict_angle: bool = True
    spatial_prior: bool = True
    zero_init_residual: bool = True
    seed: int = 0

    def __post_init__(self):
        self.backbone_channels = tuple(self.backbone_channels)
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} must be divisible by n_heads={self.n_heads}")
        if self.d_model % 4:
            raise ValueError("d_model must be divisible by 4 (2-D position encoding)")
        if self.n_queries < 1:
            raise ValueError("n_queries must be >= 1")
        if self.stride != 8:
            raise ValueError("only a stride-8 encoder input is supported")
        if len(self.backbone_channels) != 3:
            raise ValueError("backbone_channels lists the three conv widths before the d_model block")
        Vocabulary(self.alphabet)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone_channels"] = list(self.backbone_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class QueryEntry:
    """One decoder query slot.  Empty entries carry no embedding: the decoder
    takes a fresh copy from the learned empty-query table for their slot."""

    slot: int
    kind: str = "empty"  # "empty" | "text"
    track_id: Optional[int] = None
    embedding: Optional[Tensor] = None
    ref_box: Optional[np.ndarray] = None  # (cx, cy, w, h) the text query last predicted
    last_score: float = 0.0

    def __post_init__(self):
        if self.kind not in ("empty", "text"):
            raise ValueError(f"unknown query kind {self.kind!r}")
        if (self.kind == "text") != (self.track_id is not None):
            raise ValueError("text queries must carry a track id, empty queries must not")


@dataclass
class QuerySet:
    entries: list[QueryEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def text_slots(self) -> list[int]:
        return [e.slot for e in self.entries if e.kind == "text"]

    def empty_slots(self) -> list[int]:
        return [e.slot for e in self.entries if e.kind == "empty"]

    def validate(self, n: int):
        if len(self.entries) != n:
            raise ValueError(f"query set has {len(self.entries)} entries, expected {n}")
        if [e.slot for e in self.entries] != list(range(n)):
            raise ValueError("query entries must be ordered by slot")


@dataclass
class FramePredictions:
    logits: Tensor      # [N, 2]: text, no-object
    boxes: Tensor       # [N, 4]: cx, cy, w, h in (0, 1)
    angles_raw: Tensor  # [N]: atan2 output in (-pi, pi]
    aux: list = field(default_factory=list)  # same heads on earlier decoder layers

    def __len__(self) -> int:
        return self.logits.shape[0]

    @property
    def scores(self) -> np.ndarray:
        z = self.logits.data - self.logits.data.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e[:, TEXT] / e.sum(axis=1)

    @property
    def angles(self) -> np.ndarray:
        return normalize_angles(self.angles_raw.data)

    def box(self, i: int) -> RotatedBox:
        cx, cy, w, h = self.boxes.data[i]
        return RotatedBox(cx, cy, w, h, self.angles[i])

    def subset(self, rows) -> "FramePredictions":
        rows = list(rows)
        return FramePredictions(ag.take_rows(self.logits, rows), ag.take_rows(self.boxes, rows),
                                ag.take_rows(self.angles_raw, rows), [a.subset(rows) for a in self.aux])


@dataclass
class Encoded:
    memory: Tensor   # [h*w, d_model] encoder tokens
    fused: Tensor    # [C, H/4, W/4] map for RoI extraction
    hw: tuple[int, int]


def _logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, 1e-4, 1 - 1e-4)
    return np.log(p / (1 - p))


class EncoderLayer(Module):
    def __init__(self, rng, cfg: ModelConfig):
        self.norm1 = LayerNorm(cfg.d_model)
        self.attn = MultiHeadAttention(rng, cfg.d_model, cfg.n_heads, zero_out=cfg.zero_init_residual)
        self.norm2 = LayerNorm(cfg.d_model)
        self.ffn = MLP(rng, cfg.d_model, cfg.ffn_dim, cfg.d_model, zero_last=cfg.zero_init_residual)

    def __call__(self, x, pos):
        y = self.norm1(x)
        qk = ag.add(y, pos)
        x = ag.add(x, self.attn(qk, qk, y))
        return ag.add(x, self.ffn(self.norm2(x)))


class DecoderLayer(Module):
    def __init__(self, rng, cfg: ModelConfig):
        self.norm1 = LayerNorm(cfg.d_model)
        self.self_attn = MultiHeadAttention(rng, cfg.d_model, cfg.n_heads)
        self.norm2 = LayerNorm(cfg.d_model)
        self.cross_attn = MultiHeadAttention(rng, cfg.d_model, cfg.n_heads)
        self.norm3 = LayerNorm(cfg.d_model)
        self.ffn = MLP(rng, cfg.d_model, cfg.ffn_dim, cfg.d_model)

    def __call__(self, x, qpos, memory, mem_key, prior=None):
        y = self.norm1(x)
        q = ag.add(y, qpos)
        x = ag.add(x, self.self_attn(q, q, y))
        y = self.norm2(x)
        x = ag.add(x, self.cross_attn(ag.add(y, qpos), mem_key, memory, prior))
        return ag.add(x, self.ffn(self.norm3(x)))


def box_position_features(ref_box: np.ndarray, d: int) -> np.ndarray:
    """Sine features [Q, d] of (cx, cy, w, h); a constant of the detached reference boxes."""
    return np.concatenate([sine_embed(ref_box[:, i], d // 4) for i in range(4)], axis=1)


# per-head widths of the cross-attention prior, in box half-extents; inf = global head
PRIOR_WIDTHS = (1.0, 2.0, 4.0, math.inf)


def spatial_prior(ref_box: np.ndarray, hw: tuple[int, int], n_heads: int) -> np.ndarray:
    """Gaussian log-weights [heads, Q, h*w] centred on each reference box.

    Distances are measured in units of the box half-extent plus one cell,
    so every query starts out looking at its own neighbourhood; the widths
    cycle through ``PRIOR_WIDTHS`` across heads.
    """
    h, w = hw
    ys, xs = np.meshgrid((np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w, indexing="ij")
    cx, cy, bw, bh = (ref_box[:, i:i + 1] for i in range(4))
    dx = (xs.reshape(1, -1) - cx) / (bw / 2 + 1.0 / w)
    dy = (ys.reshape(1, -1) - cy) / (bh / 2 + 1.0 / h)
    d2 = dx * dx + dy * dy
    widths = [PRIOR_WIDTHS[i % len(PRIOR_WIDTHS)] for i in range(n_heads)]
    return np.stack([-0.5 * d2 / s ** 2 if math.isfinite(s) else np.zeros_like(d2) for s in widths])


def column_encoding(n: int, d: int) -> np.ndarray:
    """Transformer-style sin/cos code of integer column index, [n, d]."""
    ang = np.arange(n)[:, None] / 100.0 ** (2 * np.arange(d // 2)[None] / d)
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class RecognitionHead(Module):
    """Seq2seq reader: SOS embedding starter, one GRU layer, content attention.

    The attention memory has one slot per RoI column (the crop's rows are
    folded into the column feature), tagged with a fixed sinusoidal column
    position, so reading left to right is a 1-D alignment problem.
    """

    def __init__(self, rng, cfg: ModelConfig, vocab: Vocabulary):
        hd = cfg.rec_hidden
        self.conv = Conv2d(rng, cfg.fused_channels, hd, 3)
        self.proj = Linear(rng, hd * cfg.roi_h, hd)
        self._col_pos = column_encoding(cfg.roi_w, hd)
        self.embed = ag.parameter(rng.normal(0, 0.3, size=(len(vocab), cfg.rec_embed)))
        self.init_h = Linear(rng, hd, hd)
        self.gru = GRUCell(rng, cfg.rec_embed + hd, hd)
        self.key = Linear(rng, hd, hd)
        self.query = Linear(rng, hd, hd)
        self.out = Linear(rng, 2 * hd, len(vocab))
        self.step_pos = ag.parameter(rng.normal(0, 1.0, size=(cfg.max_text_len + 1, hd)))
        self._vocab = vocab
        self._max_len = cfg.max_text_len
        self._hd = hd

    def _memory(self, roi: Tensor):
        b, c, oh, ow = roi.shape
        # a 3x3 conv over each crop lets neighbouring cells form glyph-level features
        feats = ag.stack([ag.relu(self.conv(roi[i])) for i in range(b)])
        cols = ag.transpose(ag.reshape(feats, (b, self._hd * oh, ow)), (0, 2, 1))
        mem = ag.relu(ag.add(self.proj(cols), Tensor(np.broadcast_to(self._col_pos, (b, ow, self._hd)).copy())))
        h = ag.tanh(self.init_h(ag.mean(mem, axis=1)))
        return mem, self.key(mem), h

    def _step(self, t, tokens, ctx, h, mem, keys):
        b = h.shape[0]
        e = ag.embedding(self.embed, tokens)
        h = self.gru(ag.concat([e, ctx], axis=1), h)
        # the step embedding gives attention a positional prior from the first update on
        q = ag.add(self.query(h), ag.take_rows(self.step_pos, np.full(b, t)))
        q = ag.reshape(q, (b, self._hd, 1))
        att = ag.softmax(ag.mul(ag.reshape(ag.matmul(keys, q), (b, 1, -1)), 1.0 / math.sqrt(self._hd)), axis=-1)
        ctx = ag.reshape(ag.matmul(att, mem), (b, self._hd))
        return self.out(ag.concat([h, ctx], axis=1)), ctx, h

    def teacher_forced(self, roi: Tensor, targets: list[str]) -> tuple[Tensor, np.ndarray]:
        """Per-step logits [B, L, V] for inputs SOS+text and the aligned target ids
        (text+EOS, PAD-filled) as a [B, L] int array."""
        ids = [self._vocab.encode(t) for t in targets]
        if any(len(t) > self._max_len for t in ids):
            raise VocabularyError(f"transcription longer than max_text_len={self._max_len}")
        L = max(len(t) for t in ids) + 1
        b = len(ids)
        inputs = np.full((b, L), Vocabulary.PAD, dtype=np.int64)
        gold = np.full((b, L), Vocabulary.PAD, dtype=np.int64)
        for i, t in enumerate(ids):
            inputs[i, 0] = Vocabulary.SOS
            inputs[i, 1:len(t) + 1] = t
            gold[i, :len(t)] = t
            gold[i, len(t)] = Vocabulary.EOS
        mem, keys, h = self._memory(roi)
        ctx = Tensor(np.zeros((b, self._hd)))
        steps = []
        for t in range(L):
            logits, ctx, h = self._step(t, inputs[:, t], ctx, h, mem, keys)
            steps.append(logits)
        return ag.stack(steps, axis=1), gold

    def greedy(self, roi: Tensor) -> list[str]:
        b = roi.shape[0]
        mem, keys, h = self._memory(roi)
        ctx = Tensor(np.zeros((b, self._hd)))
        tokens = np.full(b, Vocabulary.SOS, dtype=np.int64)
        out = np.full((b, self._max_len + 1), Vocabulary.EOS, dtype=np.int64)
        done = np.zeros(b, dtype=bool)
        for t in range(self._max_len + 1):
            logits, ctx, h = self._step(t, tokens, ctx, h, mem, keys)
            tokens = np.argmax(logits.data, axis=1)
            if t == self._max_len:
                tokens = np.full(b, Vocabulary.EOS)
            tokens = np.where(done, Vocabulary.EOS, tokens)
            out[:, t] = tokens
            done |= tokens == Vocabulary.EOS
            if done.all():
                break
        return [self._vocab.decode(row) for row in out]


class VideoTextSpotter(Module):
    def __init__(self, config: ModelConfig | None = None):
        cfg = self.config_ = config or ModelConfig()
        rng = np.random.default_rng(cfg.seed)
        self._vocab = Vocabulary(cfg.alphabet)
        c1, c2, c3 = cfg.backbone_channels
        d = cfg.d_model
        self.conv1 = Conv2d(rng, 3, c1, 3, stride=2)
        self.conv2 = Conv2d(rng, c1, c2, 3, stride=2)
        self.conv3 = Conv2d(rng, c2, c3, 3, stride=2)
        self.conv4 = Conv2d(rng, c3, d, 3, stride=1)
        # recognition reads from a stride-4 stem of its own: fed from the shared
        # detection features, it kept stalling on a chance-level plateau
        self.rec_conv1 = Conv2d(rng, 3, c1, 3, stride=2)
        self.rec_conv2 = Conv2d(rng, c1, c2, 3, stride=2)
        self.rec_conv3 = Conv2d(rng, c2, cfg.fused_channels, 3)
        self.encoder = [EncoderLayer(rng, cfg) for _ in range(cfg.enc_layers)]
        self.query_embed = ag.parameter(rng.normal(0, 1.0, size=(cfg.n_queries, d)))
        self.ref_logits = ag.parameter(self._initial_refs(cfg.n_queries, rng))
        self.qpos = MLP(rng, 4 * (d // 4), d, d)
        self.decoder = [DecoderLayer(rng, cfg) for _ in range(cfg.dec_layers)]
        self.dec_norm = LayerNorm(d)
        self.class_head = Linear(rng, d, 2)
        self.class_head.bias.data[:] = [-2.0, 0.0]
        self.box_head = MLP(rng, d, d, 4, zero_last=True)
        self.angle_head = Linear(rng, d, 2, zero=True)
        self.angle_head.bias.data[:] = [0.0, 1.0]
        self.recognizer = RecognitionHead(rng, cfg, self._vocab)
        self._pos_cache: dict = {}

    @staticmethod
    def _initial_refs(n: int, rng) -> np.ndarray:
        cols = int(math.ceil(math.sqrt(n)))
        rows = int(math.ceil(n / cols))
        refs = []
        for i in range(n):
            r, c = divmod(i, cols)
            refs.append([(c + 0.5) / cols, (r + 0.5) / rows, 0.4, 0.15])
        refs = np.array(refs) + rng.normal(0, 0.01, size=(n, 4))
        return _logit(refs)

    @property
    def config(self) -> ModelConfig:
        return self.config_

    @property
    def vocab(self) -> Vocabulary:
        return self._vocab

    @property
    def n_queries(self) -> int:
        return self.config_.n_queries

    # -- feature extraction --------------------------------------------
    def backbone_forward(self, frame) -> dict[int, Tensor]:
        """[3,H,W] frame in [0,1] -> {4: stride-4 recognition map, 8: stride-8 detection map}."""
        frame = frame if isinstance(frame, Tensor) else Tensor(frame)
        if frame.ndim != 3 or frame.shape[0] != 3:
            raise ag.ShapeError(f"expected a [3,H,W] frame, got {frame.shape}")
        if frame.shape[1] % 8 or frame.shape[2] % 8:
            raise ag.ShapeError(f"frame extents {frame.shape[1:]} must be divisible by 8")
        x = ag.sub(frame, 0.5)
        f2 = ag.relu(self.conv1(x))
        f4 = ag.relu(self.conv2(f2))
        f8 = ag.relu(self.conv3(f4))
        f8 = ag.relu(self.conv4(f8))
        r4 = ag.relu(self.rec_conv2(ag.relu(self.rec_conv1(x))))
        fused = ag.relu(self.rec_conv3(r4))
        return {4: fused, 8: f8}

    def _pos(self, h: int, w: int) -> np.ndarray:
        key = (h, w)
        if key not in self._pos_cache:
            self._pos_cache[key] = sine_position_grid(h, w, self.config_.d_model)
        return self._pos_cache[key]

    def encoder_forward(self, fmap: Tensor) -> Tensor:
        """[d, h, w] stride-8 map -> refined [d, h, w] map."""
        d, h, w = fmap.shape
        x = ag.transpose(ag.reshape(fmap, (d, h * w)), (1, 0))
        pos = Tensor(self._pos(h, w))
        for layer in self.encoder:
            x = layer(x, pos)
        return ag.reshape(ag.transpose(x, (1, 0)), (d, h, w))

    def encode(self, frame) -> Encoded:
        pyr = self.backbone_forward(frame)
        enc = self.encoder_forward(pyr[8])
        d, h, w = enc.shape
        return Encoded(ag.transpose(ag.reshape(enc, (d, h * w)), (1, 0)), pyr[4], (h, w))

    # -- query decoding --------------------------------------------------
    def decoder_forward(self, encoded: Encoded, queries: QuerySet) -> tuple[Tensor, FramePredictions]:
        cfg = self.config_
        queries.validate(cfg.n_queries)
        empty = queries.empty_slots()
        text = queries.text_slots()
        parts, ref_parts = [], []
        if empty:
            parts.append(ag.take_rows(self.query_embed, empty))
            ref_parts.append(ag.take_rows(self.ref_logits, empty))
        if text:
            parts.append(ag.stack([queries.entries[s].embedding for s in text]))
            ref_parts.append(Tensor(_logit(np.array([queries.entries[s].ref_box for s in text]))))
        order = np.argsort(np.array(empty + text))
        x = ag.take_rows(ag.concat(parts), order) if len(parts) > 1 else parts[0]
        ref = ag.take_rows(ag.concat(ref_parts), order) if len(ref_parts) > 1 else ref_parts[0]
        ref_box = 1.0 / (1.0 + np.exp(-ref.data))
        qpos = self.qpos(Tensor(box_position_features(ref_box, cfg.d_model)))
        memory = encoded.memory
        mem_key = ag.add(memory, Tensor(self._pos(*encoded.hw)))
        prior = spatial_prior(ref_box, encoded.hw, cfg.n_heads) if cfg.spatial_prior else None
        outs = []
        for layer in self.decoder:
            x = layer(x, qpos, memory, mem_key, prior)
            outs.append(x)
        heads = [self._heads(self.dec_norm(o), ref) for o in outs]
        hs, final = heads[-1]
        final.aux = [p for _, p in heads[:-1]]
        return hs, final

    def _heads(self, hs: Tensor, ref: Tensor) -> tuple[Tensor, FramePredictions]:
        boxes = ag.sigmoid(ag.add(ref, self.box_head(hs)))
        if self.config_.predict_angle:
            sc = self.angle_head(hs)
            angles = ag.atan2(sc[:, 0], sc[:, 1])
        else:
            angles = Tensor(np.zeros(hs.shape[0]))
        return hs, FramePredictions(self.class_head(hs), boxes, angles)

    # -- recognition -------------------------------------------------------
    def roi_features(self, fused: Tensor, boxes: list[RotatedBox], image_hw: tuple[int, int]) -> Tensor:
        """Stack rotated crops [B, C, roi_h, roi_w] of the recognition map at normalized boxes."""
        cfg = self.config_
        c, fh, fw = fused.shape
        xs, ys = [], []
        for b in boxes:
            px = RotatedBox(b.cx * fw - 0.5, b.cy * fh - 0.5, b.w * fw, b.h * fh, b.theta)
            gx, gy = roi_sample_grid(RoIParams(px, cfg.roi_h, cfg.roi_w))
            xs.append(gx)
            ys.append(gy)
        samples = ag.bilinear_sample_points(fused, np.concatenate(xs), np.concatenate(ys))
        out = ag.reshape(samples, (c, len(boxes), cfg.roi_h, cfg.roi_w))
        return ag.transpose(out, (1, 0, 2, 3))

    def recognition_forward(self, roi_features: Tensor, targets: list[str] | None = None):
        """Teacher-forced ``(logits [B,L,V], gold ids [B,L])`` when targets are
        given, otherwise greedy-decoded strings."""
        if roi_features.ndim == 3:
            roi_features = ag.reshape(roi_features, (1,) + roi_features.shape)
        if targets is None:
            return self.recognizer.greedy(roi_features)
        return self.recognizer.teacher_forced(roi_features, targets)

    def read(self, encoded: Encoded, boxes: list[RotatedBox], image_hw) -> list[str]:
        if not boxes:
            return []
        return self.recognition_forward(self.roi_features(encoded.fused, boxes, image_hw))

    # -- persistence -------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = dict(self.named_parameters())
        missing = set(params) ^ set(state)
        if missing:
            raise CheckpointError(f"parameter set mismatch: {sorted(missing)[:5]}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise CheckpointError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)

    def save(self, path, extra: dict | None = None) -> Path:
        meta = {"model_config": self.config_.to_dict(), "seed": self.config_.seed}
        meta.update(extra or {})
        return save_arrays(path, self.state_dict(), meta)

    @classmethod
    def load(cls, path) -> "VideoTextSpotter":
        arrays, manifest = load_arrays(path)
        if "model_config" not in manifest:
            raise CheckpointError(f"{path}: manifest has no model_config")
        model = cls(ModelConfig.from_dict(manifest["model_config"]))
        model.load_state_dict({k: v for k, v in arrays.items() if not k.startswith("optim/")})
        return model
