"""Random finite-difference configurations for every differentiable op and loss.

Each case builder takes an rng and returns ``(f, leaves)`` where ``f(leaves)``
is a scalar tensor.  Inputs are kept away from kinks (relu/abs at 0, min/max
ties) so central differences are meaningful.
"""
import math

import numpy as np

from vtspot import autograd as ag
from vtspot.assignment import build_cost_matrix, hungarian_solve
from vtspot.autograd import Tensor, finite_diff_check
from vtspot.geometry import RoIParams, RotatedBox, giou_tensor, rotated_roi_align
from vtspot.losses import (LossWeights, frame_detection_loss, recognition_loss, temporal_tracking_loss,
                           total_loss, tracked_query_loss)
from vtspot.model import FramePredictions


def _away(rng, shape, margin=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def _unary(op, positive=False):
    def build(rng):
        x = Tensor(rng.uniform(0.2, 2.0, size=(3, 2)) if positive else _away(rng, (3, 2)))
        w = rng.normal(size=(3, 2))
        return (lambda xs: ag.sum_(ag.mul(op(xs[0]), Tensor(w)))), [x]
    return build


def _binary(op, denom_positive=False):
    def build(rng):
        a = Tensor(rng.normal(size=(2, 3)))
        b = Tensor(rng.uniform(0.3, 2.0, size=(2, 3)) if denom_positive else rng.normal(size=(2, 3)))
        if op in (ag.minimum, ag.maximum):
            b.data = a.data + _away(rng, (2, 3), 0.1)
        w = rng.normal(size=(2, 3))
        return (lambda xs: ag.sum_(ag.mul(op(xs[0], xs[1]), Tensor(w)))), [a, b]
    return build


def _scalar_broadcast(rng):
    a, s = Tensor(rng.normal(size=(4,))), Tensor(rng.normal())
    w = rng.normal(size=4)
    return (lambda xs: ag.sum_(ag.mul(ag.mul(ag.add(xs[0], xs[1]), xs[1]), Tensor(w)))), [a, s]


def _masked_fill(rng):
    x = Tensor(rng.normal(size=(3, 3)))
    mask = rng.random((3, 3)) < 0.4
    w = rng.normal(size=(3, 3))
    return (lambda xs: ag.sum_(ag.mul(ag.masked_fill_const(xs[0], mask, -7.0), Tensor(w)))), [x]


def _fixed(shape, rng):
    w = rng.normal(size=shape)
    return lambda out: ag.sum_(ag.mul(out, Tensor(w)))


def _matmul(rng):
    a, b = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(4, 2)))
    p = _fixed((3, 2), rng)
    return (lambda xs: p(ag.matmul(xs[0], xs[1]))), [a, b]


def _matmul3(rng):
    a, b = Tensor(rng.normal(size=(2, 2, 3))), Tensor(rng.normal(size=(2, 3, 2)))
    p = _fixed((2, 2, 2), rng)
    return (lambda xs: p(ag.matmul(xs[0], xs[1]))), [a, b]


def _linear(rng):
    x, w, b = Tensor(rng.normal(size=(2, 3, 4))), Tensor(rng.normal(size=(4, 2))), Tensor(rng.normal(size=2))
    p = _fixed((2, 3, 2), rng)
    return (lambda xs: p(ag.linear(*xs))), [x, w, b]


def _broadcast(rng):
    x = Tensor(rng.normal(size=(3, 1)))
    p = _fixed((2, 3, 4), rng)
    return (lambda xs: p(ag.broadcast_to(xs[0], (2, 3, 4)))), [x]


def _softmax(rng, log=False):
    x = Tensor(rng.normal(size=(3, 4)) * 2)
    axis = int(rng.integers(2))
    p = _fixed((3, 4), rng)
    op = ag.log_softmax if log else ag.softmax
    return (lambda xs: p(op(xs[0], axis=axis))), [x]


def _reductions(rng):
    x = Tensor(rng.normal(size=(3, 4)))
    p = _fixed((4,), rng)
    return (lambda xs: ag.add(p(ag.sum_(xs[0], axis=0)), ag.mul(ag.mean(ag.mul(xs[0], xs[0])), 3.0))), [x]


def _layer_norm(rng):
    x, g, b = Tensor(rng.normal(size=(3, 5))), Tensor(rng.normal(size=5)), Tensor(rng.normal(size=5))
    p = _fixed((3, 5), rng)
    return (lambda xs: p(ag.layer_norm(*xs))), [x, g, b]


def _shapes(rng):
    a, b = Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=(2, 3)))
    p = _fixed((3, 2, 2, 2), rng)

    def f(xs):
        c = ag.concat([xs[0], ag.mul(xs[1], xs[0])], axis=0)            # [4, 3]
        s = ag.stack([ag.transpose(c), ag.reshape(c, (3, 4))], axis=1)  # [3, 2, 4]
        return p(ag.reshape(s, (3, 2, 2, 2)))
    return f, [a, b]


def _indexing(rng):
    x = Tensor(rng.normal(size=(4, 3)))
    rows = rng.integers(0, 4, size=5)
    cols = rng.integers(0, 3, size=5)
    p = _fixed((5, 3), rng)
    q = _fixed((2,), rng)

    def f(xs):
        r = ag.take_rows(xs[0], rows)
        return ag.add(ag.add(p(r), ag.sum_(ag.pick(r, cols))), q(xs[0][1:3, 2]))
    return f, [x]


def _cross_entropy(rng):
    x = Tensor(rng.normal(size=6))
    t = int(rng.integers(6))
    wt = rng.uniform(0.1, 2.0, size=6)
    return (lambda xs: ag.cross_entropy_logits(xs[0], t, wt)), [x]


def _conv(rng):
    stride = int(rng.integers(1, 3))
    x, w, b = Tensor(rng.normal(size=(2, 5, 4))), Tensor(rng.normal(size=(2, 2, 3, 3))), Tensor(rng.normal(size=2))
    ho = (5 + 2 - 3) // stride + 1
    wo = (4 + 2 - 3) // stride + 1
    p = _fixed((2, ho, wo), rng)
    return (lambda xs: p(ag.conv2d(*xs, stride=stride, padding=1))), [x, w, b]


def _upsample(rng):
    x = Tensor(rng.normal(size=(2, 2, 3)))
    p = _fixed((2, 4, 6), rng)
    return (lambda xs: p(ag.upsample2x(xs[0]))), [x]


def _bilinear(rng):
    fmap = Tensor(rng.normal(size=(2, 4, 5)))
    xs_, ys_ = rng.uniform(-1.5, 5.5, size=6), rng.uniform(-1.5, 4.5, size=6)
    p = _fixed((2, 6), rng)
    px, py = rng.uniform(0, 4), rng.uniform(0, 3)
    q = _fixed((2,), rng)
    return (lambda xs: ag.add(p(ag.bilinear_sample_points(xs[0], xs_, ys_)),
                              q(ag.bilinear_sample(xs[0], px, py)))), [fmap]


def _roi_align(rng):
    fmap = Tensor(rng.normal(size=(2, 6, 7)))
    box = RotatedBox(rng.uniform(2, 4), rng.uniform(2, 3), rng.uniform(2, 5), rng.uniform(1, 3),
                     rng.uniform(-1.5, 1.5))
    roi = RoIParams(box, 2, 3)
    p = _fixed((2, 2, 3), rng)
    return (lambda xs: p(rotated_roi_align(xs[0], roi))), [fmap]


def _rand_boxes(rng, n):
    return np.column_stack([rng.uniform(0.2, 0.8, n), rng.uniform(0.2, 0.8, n),
                            rng.uniform(0.1, 0.4, n), rng.uniform(0.05, 0.3, n)])


def _giou(rng):
    a = Tensor(_rand_boxes(rng, 3))
    b = _rand_boxes(rng, 3)
    b[0] = a.data[0] + rng.uniform(-0.03, 0.03, 4)  # one heavily overlapping pair
    p = _fixed((3,), rng)
    return (lambda xs: p(giou_tensor(xs[0], b))), [a]


# -- losses ---------------------------------------------------------------------

def _weights(rng):
    return LossWeights(lambda_iou=rng.uniform(0.5, 3), lambda_l1=rng.uniform(0.5, 6),
                       lambda_angle=rng.uniform(0.5, 2), sigma1=rng.uniform(0.5, 2),
                       sigma2=rng.uniform(0.5, 2), no_object_weight=rng.uniform(0.05, 0.5))


def _preds_leaves(rng, n):
    return [Tensor(rng.normal(size=(n, 2))), Tensor(_rand_boxes(rng, n)), Tensor(rng.uniform(-2.5, 2.5, n))]


def _frame_detection(rng):
    n, m = int(rng.integers(1, 6)), 0
    m = int(rng.integers(0, n + 1))
    leaves = _preds_leaves(rng, n)
    gt_b, gt_a = _rand_boxes(rng, m), rng.uniform(-1.5, 1.5, m)
    w = _weights(rng)
    preds0 = FramePredictions(*leaves)
    a = hungarian_solve(build_cost_matrix(preds0.scores, leaves[1].data, leaves[2].data, gt_b, gt_a, w))
    return (lambda xs: frame_detection_loss(FramePredictions(*xs), gt_b, gt_a, a, w)), leaves


def _tracked(rng):
    n = int(rng.integers(1, 5))
    leaves = _preds_leaves(rng, n)
    ids = list(range(10, 10 + n))
    gts = {t: (_rand_boxes(rng, 1)[0], rng.uniform(-1.5, 1.5)) for t in ids if rng.random() < 0.7}
    w = _weights(rng)
    return (lambda xs: tracked_query_loss(FramePredictions(*xs), ids, gts, w)), leaves


def _temporal(rng):
    t = int(rng.integers(1, 4))
    leaves = [Tensor(rng.uniform(0, 3)) for _ in range(2 * t)]
    counts = [int(c) for c in rng.integers(0, 4, size=t)]
    return (lambda xs: temporal_tracking_loss([(ag.mul(xs[2 * i], xs[2 * i]), ag.exp(xs[2 * i + 1]))
                                               for i in range(t)], counts)), leaves


def _recognition(rng):
    b, L, v = int(rng.integers(1, 4)), int(rng.integers(2, 5)), 7
    logits = Tensor(rng.normal(size=(b, L, v)) * 2)
    gold = rng.integers(1, v, size=(b, L))
    for i in range(b):
        gold[i, int(rng.integers(1, L + 1)):] = 0  # PAD tail
    return (lambda xs: recognition_loss(xs[0], gold)), [logits]


def _total(rng):
    w = _weights(rng)
    tr, rc = Tensor(rng.uniform(0, 3)), Tensor(rng.uniform(0, 3))
    return (lambda xs: total_loss(ag.mul(xs[0], xs[0]), ag.sin(xs[1]), w)), [tr, rc]


OP_CASES = {
    "add": _binary(ag.add), "sub": _binary(ag.sub), "mul": _binary(ag.mul),
    "div": _binary(ag.div, denom_positive=True), "atan2": _binary(ag.atan2, denom_positive=True),
    "minimum": _binary(ag.minimum), "maximum": _binary(ag.maximum),
    "scalar_broadcast": _scalar_broadcast,
    "neg": _unary(ag.neg), "relu": _unary(ag.relu), "sigmoid": _unary(ag.sigmoid), "tanh": _unary(ag.tanh),
    "exp": _unary(ag.exp), "log": _unary(ag.log, positive=True), "sqrt": _unary(ag.sqrt, positive=True),
    "sin": _unary(ag.sin), "cos": _unary(ag.cos), "abs": _unary(ag.abs_),
    "masked_fill": _masked_fill, "matmul": _matmul, "matmul_batched": _matmul3, "linear": _linear,
    "broadcast_to": _broadcast, "softmax": _softmax, "log_softmax": lambda r: _softmax(r, log=True),
    "sum_mean": _reductions, "layer_norm": _layer_norm, "concat_stack_reshape_transpose": _shapes,
    "getitem_take_rows_pick": _indexing, "cross_entropy": _cross_entropy, "conv2d": _conv,
    "upsample2x": _upsample, "bilinear_sample": _bilinear, "rotated_roi_align": _roi_align,
    "giou": _giou,
}

LOSS_CASES = {
    "frame_detection_loss": _frame_detection, "tracked_query_loss": _tracked,
    "temporal_tracking_loss": _temporal, "recognition_loss": _recognition, "total_loss": _total,
}


def run_case(builder, n_configs=100, seed=0) -> float:
    worst = 0.0
    for k in range(n_configs):
        rng = np.random.default_rng([seed, k])
        f, leaves = builder(rng)
        err = finite_diff_check(f, leaves, eps=1e-6)
        if not math.isfinite(err):
            return math.inf
        worst = max(worst, err)
    return worst


def run_suite(n_configs=100, seed=0) -> dict[str, float]:
    return {name: run_case(b, n_configs, seed) for name, b in {**OP_CASES, **LOSS_CASES}.items()}
