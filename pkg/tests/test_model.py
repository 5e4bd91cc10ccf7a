import math

import numpy as np
import pytest

from vtspot import autograd as ag
from vtspot.autograd import ShapeError, Tape, Tensor, finite_diff_check
from vtspot.checkpoint import CheckpointError
from vtspot.data import SynthConfig, SyntheticVideo
from vtspot.geometry import RotatedBox
from vtspot.losses import LossWeights
from vtspot.model import (FramePredictions, ModelConfig, QueryEntry, QuerySet, VideoTextSpotter, Vocabulary,
                          VocabularyError)
from vtspot.tracker import advance_query_set
from vtspot import model as model_mod
from vtspot import train as train_mod
from vtspot.train import AdamW, clip_loss

SMALL = ModelConfig(d_model=32, n_heads=4, dec_layers=2, n_queries=6, backbone_channels=(8, 12, 16),
                    fused_channels=12, ffn_dim=48, rec_hidden=24, rec_embed=12, roi_h=4, roi_w=8)


@pytest.fixture(scope="module")
def model():
    return VideoTextSpotter(SMALL)


@pytest.fixture(scope="module")
def frame():
    return SyntheticVideo(SynthConfig(height=32, width=48, glyph_scale=1.0), 3, seed=2).frame(0)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(d_model=30, n_heads=4)
    with pytest.raises(ValueError):
        ModelConfig(n_queries=0)
    assert ModelConfig.from_dict(SMALL.to_dict()) == SMALL


def test_vocabulary():
    v = Vocabulary("ABC")
    assert len(v) == 6 and v.encode("CAB") == [5, 3, 4]
    assert v.decode([5, 3, 2, 4]) == "CA"
    with pytest.raises(VocabularyError):
        v.encode("AZ")


def test_backbone_shapes_and_determinism():
    m = VideoTextSpotter(ModelConfig(dec_layers=1))
    f = np.random.default_rng(0).random((3, 96, 96))
    pyr = m.backbone_forward(f)
    assert pyr[8].shape == (64, 12, 12) and pyr[4].shape[1:] == (24, 24)
    again = m.backbone_forward(f.copy())
    assert pyr[4].data.tobytes() == again[4].data.tobytes()
    with pytest.raises(ShapeError):
        m.backbone_forward(np.zeros((3, 90, 96)))


def test_encoder_is_identity_at_init(model, frame):
    f8 = model.backbone_forward(frame)[8]
    out = model.encoder_forward(f8)
    assert out.shape == f8.shape
    np.testing.assert_allclose(out.data, f8.data, atol=1e-12)


def test_encoder_has_no_cross_frame_mixing(model, frame):
    other = frame[:, ::-1].copy()
    a = model.encode(frame).memory.data
    b = model.encode(other).memory.data
    a2 = model.encode(frame).memory.data
    assert a.tobytes() == a2.tobytes() and not np.array_equal(a, b)


def test_decoder_outputs(model, frame):
    enc = model.encode(frame)
    qs = advance_query_set([], SMALL.n_queries)
    hs, p = model.decoder_forward(enc, qs)
    assert len(p) == SMALL.n_queries and hs.shape == (SMALL.n_queries, SMALL.d_model)
    assert np.all((p.scores >= 0) & (p.scores <= 1))
    assert np.all((p.boxes.data > 0) & (p.boxes.data < 1))
    assert np.all((p.angles >= -math.pi / 2) & (p.angles < math.pi / 2))
    hs2, p2 = model.decoder_forward(enc, qs)
    assert p.logits.data.tobytes() == p2.logits.data.tobytes()
    # a propagated text query keeps the set size at N
    tq = QueryEntry(2, "text", 5, Tensor(hs.data[2]), p.boxes.data[2])
    qs2 = advance_query_set([tq], SMALL.n_queries)
    assert len(qs2) == SMALL.n_queries
    _, p3 = model.decoder_forward(enc, qs2)
    assert len(p3) == SMALL.n_queries


def test_decoder_exposes_every_layer(model, frame):
    _, p = model.decoder_forward(model.encode(frame), advance_query_set([], SMALL.n_queries))
    assert len(p.aux) == SMALL.dec_layers - 1
    sub = p.subset([4, 1])
    assert len(sub.aux) == len(p.aux)
    assert np.array_equal(sub.aux[0].boxes.data, p.aux[0].boxes.data[[4, 1]])


def test_spatial_prior_peaks_at_reference():
    ref = np.array([[0.25, 0.75, 0.2, 0.1], [0.9, 0.1, 0.05, 0.05]])
    pr = model_mod.spatial_prior(ref, (8, 12), 4)
    assert pr.shape == (4, 2, 96)
    assert np.all(pr <= 0) and np.all(pr[3] == 0)  # the last head is global
    ys, xs = np.divmod(np.arange(96), 12)
    for q, (cx, cy, _, _) in enumerate(ref):
        nearest = np.argmin(((xs + 0.5) / 12 - cx) ** 2 + ((ys + 0.5) / 8 - cy) ** 2)
        assert all(np.argmax(pr[h, q]) == nearest for h in range(3))
    # wider heads are flatter
    assert pr[0].min() < pr[1].min() < pr[2].min()


def test_attention_bias_masks_keys():
    from vtspot.nn import MultiHeadAttention
    rng = np.random.default_rng(0)
    mha = MultiHeadAttention(rng, 8, 2)
    q, kv = Tensor(rng.normal(size=(3, 8))), Tensor(rng.normal(size=(5, 8)))
    bias = np.full((2, 3, 5), -1e9)
    bias[:, :, 2] = 0.0  # every query may only see key 2
    out = mha(q, kv, kv, bias).data
    only = mha(q, Tensor(kv.data[2:3]), Tensor(kv.data[2:3])).data
    assert np.allclose(out, only, atol=1e-12)
    assert np.array_equal(mha(q, kv, kv, np.zeros((2, 3, 5))).data, mha(q, kv, kv).data)


def test_query_entry_invariants():
    with pytest.raises(ValueError):
        QueryEntry(0, "text", None)
    with pytest.raises(ValueError):
        QueryEntry(0, "empty", 3)
    with pytest.raises(ValueError):
        QuerySet([QueryEntry(1), QueryEntry(0)]).validate(2)


def test_recognition_shapes(model, frame):
    enc = model.encode(frame)
    boxes = [RotatedBox(0.5, 0.5, 0.5, 0.2, 0.1), RotatedBox(0.3, 0.3, 0.3, 0.2, -0.4)]
    roi = model.roi_features(enc.fused, boxes, frame.shape[-2:])
    assert roi.shape == (2, SMALL.fused_channels, SMALL.roi_h, SMALL.roi_w)
    logits, gold = model.recognition_forward(roi, ["AB", "KHN"])
    assert logits.shape == (2, 4, len(model.vocab))
    assert gold[0].tolist() == [3, 4, 2, 0]
    assert model.recognition_forward(roi[0:1], ["AB"])[0].shape[1] == 3  # "AB" -> A, B, EOS
    words = model.recognition_forward(roi)
    assert len(words) == 2 and all(len(w) <= SMALL.max_text_len for w in words)
    with pytest.raises(VocabularyError):
        model.recognition_forward(roi[0:1], ["AZ"])


def test_angle_ablation_predicts_zero(frame):
    m = VideoTextSpotter(ModelConfig(**{**SMALL.to_dict(), "predict_angle": False}))
    _, p = m.decoder_forward(m.encode(frame), advance_query_set([], SMALL.n_queries))
    assert np.all(p.angles == 0)


def test_checkpoint_round_trip(tmp_path, model, frame):
    path = model.save(tmp_path / "ck.json")
    loaded = VideoTextSpotter.load(path)
    qs = advance_query_set([], SMALL.n_queries)
    a = model.decoder_forward(model.encode(frame), qs)[1].logits.data
    b = loaded.decoder_forward(loaded.encode(frame), qs)[1].logits.data
    assert a.tobytes() == b.tobytes()
    import json
    man = json.loads(path.read_text())
    assert man["seed"] == SMALL.seed and man["parameters"][0]["dtype"] == "f64"
    (tmp_path / "ck.bin").write_bytes(b"\0" * 8)
    with pytest.raises(CheckpointError):
        VideoTextSpotter.load(path)


def _clip(n_frames=2):
    cfg = SynthConfig(height=32, width=48, glyph_scale=1.0, word_len=(2, 3), max_instances=2, birth_prob=0.5)
    video = SyntheticVideo(cfg, 6, seed=4)
    return video.clip(range(n_frames))


class _FrozenRefs:
    """Stand-in for QueryEntry inside clip_loss that replays the reference
    boxes of a baseline pass.  Carried reference boxes are detached on
    purpose, so central differences only agree with the tape once that path
    is held fixed."""

    def __init__(self):
        self.recorded, self.replay, self.k = [], False, 0

    def __call__(self, slot, kind, track_id, embedding, ref_box):
        if self.replay:
            ref_box = self.recorded[self.k]
            self.k += 1
        else:
            self.recorded.append(ref_box.copy())
        return QueryEntry(slot, kind, track_id, embedding, ref_box)


class _Frozen:
    """Same idea for the constants computed from the (detached) reference
    boxes of every query: positional features and the attention prior."""

    def __init__(self, fn):
        self.fn, self.recorded, self.replay, self.k = fn, [], False, 0

    def __call__(self, *args):
        if self.replay:
            self.k += 1
            return self.recorded[self.k - 1]
        out = self.fn(*args)
        self.recorded.append(out)
        return out


def test_end_to_end_gradient_check(monkeypatch):
    m = VideoTextSpotter(SMALL)
    clip = _clip(3)
    params = m.parameters()
    rng = np.random.default_rng(0)
    # 60 coordinates spread over every parameter tensor
    coords = [(int(i), int(rng.integers(params[i].size))) for i in rng.integers(len(params), size=60)]
    frozen = _FrozenRefs()
    consts = [_Frozen(model_mod.spatial_prior), _Frozen(model_mod.box_position_features)]
    monkeypatch.setattr(train_mod, "QueryEntry", frozen)
    monkeypatch.setattr(model_mod, "spatial_prior", consts[0])
    monkeypatch.setattr(model_mod, "box_position_features", consts[1])
    clip_loss(m, clip, LossWeights())
    assert frozen.recorded, "the clip should carry at least one text query"
    assert all(c.recorded for c in consts)
    frozen.replay = True
    for c in consts:
        c.replay = True

    def f(ps):
        frozen.k = 0
        for c in consts:
            c.k = 0
        return clip_loss(m, clip, LossWeights()).total

    assert finite_diff_check(f, params, eps=1e-6, indices=coords) <= 1e-4


def test_descent_step_reduces_loss():
    m = VideoTextSpotter(SMALL)
    clip = _clip()
    params = m.parameters()
    with Tape():
        loss = clip_loss(m, clip, LossWeights()).total
        ag.backward(loss)
    before = loss.item()
    for p in params:
        if p.grad is not None:
            p.data -= 1e-4 * p.grad
    after = clip_loss(m, clip, LossWeights()).total.item()
    assert after < before


def test_single_word_overfit():
    cfg = SynthConfig(height=32, width=48, glyph_scale=1.0, word_len=(3, 3), max_instances=1, birth_prob=1.0)
    video = SyntheticVideo(cfg, 1, seed=8)
    frame, inst = video.frame(0), video.annotations[0][0]
    m = VideoTextSpotter(SMALL)
    opt = AdamW(m.recognizer.parameters() + [p for n, p in m.named_parameters() if n.startswith(("conv", "fuse"))],
                lr=3e-3, weight_decay=0.0)
    for _ in range(150):
        opt.zero_grad()
        with Tape():
            roi = m.roi_features(m.backbone_forward(frame)[4], [inst.box], frame.shape[-2:])
            logits, gold = m.recognition_forward(roi, [inst.text])
            from vtspot.losses import recognition_loss
            loss = recognition_loss(logits, gold)
            ag.backward(loss)
        opt.step()
    assert loss.item() < 0.01
    assert m.read(m.encode(frame), [inst.box], frame.shape[-2:]) == [inst.text]
