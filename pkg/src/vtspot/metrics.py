"""CLEAR-MOT, identity (IDF1), mostly-tracked/lost and detection P/R/F.

All functions take per-frame lists of :class:`vtspot.data.Instance` for the
ground truth and the predictions.  Boxes are compared by the axis-aligned IoU
of their enclosing rectangles.  Percentages are returned in [0, 100].
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .assignment import hungarian_solve
from .geometry import bounding_rects, pairwise_iou


class MetricError(ValueError):
    pass


def _rects(insts) -> np.ndarray:
    if not insts:
        return np.zeros((0, 4))
    return bounding_rects([[*i.box.as_array(), i.box.theta] for i in insts])


def _pad(gt, pred):
    n = max(len(gt), len(pred))
    return list(gt) + [[]] * (n - len(gt)), list(pred) + [[]] * (n - len(pred))


def _max_matching(iou: np.ndarray, thr: float) -> list[tuple[int, int]]:
    """Maximum-cardinality, then maximum-IoU matching among pairs with IoU >= thr."""
    if iou.size == 0:
        return []
    valid = iou >= thr
    if not valid.any():
        return []
    big = 1.0 + iou.shape[0] + iou.shape[1]
    cost = np.where(valid, 1.0 - iou, big)
    if cost.shape[0] >= cost.shape[1]:
        pairs = [(r, c) for r, c in hungarian_solve(cost).mapping.items()]
    else:
        pairs = [(r, c) for c, r in hungarian_solve(cost.T).mapping.items()]
    return sorted((r, c) for r, c in pairs if valid[r, c])


@dataclass
class ClearMatching:
    matches: list[list[tuple[int, int, float]]]  # per frame: (gt index, pred index, IoU)
    fp: int = 0
    fn: int = 0
    idsw: int = 0
    n_gt: int = 0
    n_pred: int = 0
    iou_sum: float = 0.0
    n_matches: int = 0
    coverage: dict = field(default_factory=dict)  # gt id -> [matched frames, lifespan]


def clear_matching(gt_frames, pred_frames, iou_threshold: float = 0.5) -> ClearMatching:
    """Frame-by-frame CLEAR-MOT correspondence: previous matches are kept when
    still valid, the rest are assigned by Hungarian matching on IoU."""
    gt_frames, pred_frames = _pad(gt_frames, pred_frames)
    res = ClearMatching([])
    prev: dict[int, int] = {}   # gt id -> pred id matched in the previous frame
    last: dict[int, int] = {}   # gt id -> pred id of its most recent match
    for gts, preds in zip(gt_frames, pred_frames):
        res.n_gt += len(gts)
        res.n_pred += len(preds)
        iou = pairwise_iou(_rects(gts), _rects(preds))
        pidx = {p.track_id: j for j, p in enumerate(preds)}
        pairs = []
        used_g, used_p = set(), set()
        for i, g in enumerate(gts):
            j = pidx.get(prev.get(g.track_id, -1))
            if j is not None and j not in used_p and iou[i, j] >= iou_threshold:
                pairs.append((i, j))
                used_g.add(i)
                used_p.add(j)
        rest_g = [i for i in range(len(gts)) if i not in used_g]
        rest_p = [j for j in range(len(preds)) if j not in used_p]
        if rest_g and rest_p:
            sub = iou[np.ix_(rest_g, rest_p)]
            pairs += [(rest_g[a], rest_p[b]) for a, b in _max_matching(sub, iou_threshold)]
        pairs.sort()
        frame_matches = []
        prev = {}
        for i, j in pairs:
            gid, pid = gts[i].track_id, preds[j].track_id
            if gid in last and last[gid] != pid:
                res.idsw += 1
            last[gid] = pid
            prev[gid] = pid
            frame_matches.append((i, j, float(iou[i, j])))
            res.iou_sum += float(iou[i, j])
        res.n_matches += len(pairs)
        res.fp += len(preds) - len(pairs)
        res.fn += len(gts) - len(pairs)
        matched_g = {i for i, _ in pairs}
        for i, g in enumerate(gts):
            cov = res.coverage.setdefault(g.track_id, [0, 0])
            cov[1] += 1
            cov[0] += i in matched_g
        res.matches.append(frame_matches)
    return res


def clear_mot(gt_frames, pred_frames, iou_threshold: float = 0.5) -> dict:
    """MOTA, MOTP (percent), FP, FN, IDSW."""
    m = clear_matching(gt_frames, pred_frames, iou_threshold)
    if m.n_gt == 0:
        raise MetricError("MOTA is undefined without ground truth")
    return {"MOTA": 100.0 * (1.0 - (m.fp + m.fn + m.idsw) / m.n_gt),
            "MOTP": 100.0 * m.iou_sum / m.n_matches if m.n_matches else 0.0,
            "FP": m.fp, "FN": m.fn, "IDSW": m.idsw}


def _identity_counts(gt_frames, pred_frames, iou_threshold):
    gt_frames, pred_frames = _pad(gt_frames, pred_frames)
    gt_ids = sorted({g.track_id for f in gt_frames for g in f})
    pr_ids = sorted({p.track_id for f in pred_frames for p in f})
    gi = {k: i for i, k in enumerate(gt_ids)}
    pi = {k: i for i, k in enumerate(pr_ids)}
    both = np.zeros((len(gt_ids), len(pr_ids)))
    n_gt = n_pred = 0
    for gts, preds in zip(gt_frames, pred_frames):
        n_gt += len(gts)
        n_pred += len(preds)
        if gts and preds:
            ok = pairwise_iou(_rects(gts), _rects(preds)) >= iou_threshold
            for a, b in zip(*np.nonzero(ok)):
                both[gi[gts[a].track_id], pi[preds[b].track_id]] += 1
    return both, n_gt, n_pred


def id_metrics(gt_frames, pred_frames, iou_threshold: float = 0.5) -> dict:
    """IDF1 / IDP / IDR (percent) under the best one-to-one identity mapping."""
    both, n_gt, n_pred = _identity_counts(gt_frames, pred_frames, iou_threshold)
    if n_gt == 0:
        raise MetricError("identity metrics are undefined without ground truth")
    idtp = 0.0
    if both.size:
        if both.shape[0] >= both.shape[1]:
            a = hungarian_solve(-both)
            idtp = float(sum(both[r, c] for r, c in a.mapping.items()))
        else:
            a = hungarian_solve(-both.T)
            idtp = float(sum(both[c, r] for r, c in a.mapping.items()))
    idfp, idfn = n_pred - idtp, n_gt - idtp
    return {"IDF1": 100.0 * 2 * idtp / (2 * idtp + idfp + idfn),
            "IDP": 100.0 * idtp / n_pred if n_pred else 0.0,
            "IDR": 100.0 * idtp / n_gt,
            "IDTP": int(idtp), "IDFP": int(idfp), "IDFN": int(idfn)}


def _mt_ml(coverage: dict) -> dict:
    n = len(coverage)
    ratios = [m / life for m, life in coverage.values()]
    mt = sum(r >= 0.8 for r in ratios)
    ml = sum(r < 0.2 for r in ratios)
    return {"MT": mt, "ML": ml, "MT_pct": 100.0 * mt / n if n else 0.0,
            "ML_pct": 100.0 * ml / n if n else 0.0, "n_tracks": n}


def mostly_tracked_lost(gt_frames, pred_frames, iou_threshold: float = 0.5) -> dict:
    """Ground-truth tracks covered for >= 80% (MT) / < 20% (ML) of their lifespan."""
    return _mt_ml(clear_matching(gt_frames, pred_frames, iou_threshold).coverage)


def _prf(tp, n_gt, n_pred) -> tuple[float, float, float]:
    if n_gt == 0 and n_pred == 0:
        return 100.0, 100.0, 100.0
    p = 100.0 * tp / n_pred if n_pred else 0.0
    r = 100.0 * tp / n_gt if n_gt else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def _detection_counts(gt_frames, pred_frames, iou_threshold):
    gt_frames, pred_frames = _pad(gt_frames, pred_frames)
    tp = n_gt = n_pred = 0
    for gts, preds in zip(gt_frames, pred_frames):
        n_gt += len(gts)
        n_pred += len(preds)
        if gts and preds:
            tp += len(_max_matching(pairwise_iou(_rects(gts), _rects(preds)), iou_threshold))
    return tp, n_gt, n_pred


def detection_prf(gt_frames, pred_frames, iou_threshold: float = 0.5) -> tuple[float, float, float]:
    """Per-frame detection precision, recall, F-measure (identities ignored)."""
    return _prf(*_detection_counts(gt_frames, pred_frames, iou_threshold))


@dataclass
class MotReport:
    MOTA: float
    MOTP: float
    IDF1: float
    IDP: float
    IDR: float
    precision: float
    recall: float
    f_measure: float
    FP: int
    FN: int
    IDSW: int
    MT: int
    ML: int
    MT_pct: float
    ML_pct: float
    n_gt: int
    n_pred: int
    n_tracks: int
    word_accuracy: float = 0.0
    n_word_matches: int = 0

    def to_dict(self, digits: int = 4) -> dict:
        return {k: round(v, digits) if isinstance(v, float) else v for k, v in asdict(self).items()}


def evaluate(gt_videos: list, pred_videos: list, iou_threshold: float = 0.5) -> MotReport:
    """Aggregate every metric over several videos (counts are pooled, then
    turned into rates).  Word accuracy counts exact transcription matches over
    CLEAR-matched detections."""
    if len(gt_videos) != len(pred_videos):
        raise MetricError("ground truth and predictions cover different numbers of videos")
    fp = fn = idsw = n_gt = n_pred = n_match = 0
    iou_sum = 0.0
    idtp = 0.0
    tp = dgt = dpred = 0
    coverage = {}
    words_ok = words = 0
    for v, (gt, pred) in enumerate(zip(gt_videos, pred_videos)):
        m = clear_matching(gt, pred, iou_threshold)
        fp, fn, idsw = fp + m.fp, fn + m.fn, idsw + m.idsw
        n_gt, n_pred, n_match = n_gt + m.n_gt, n_pred + m.n_pred, n_match + m.n_matches
        iou_sum += m.iou_sum
        coverage.update({(v, k): c for k, c in m.coverage.items()})
        gpad, ppad = _pad(gt, pred)
        for t, pairs in enumerate(m.matches):
            for i, j, _ in pairs:
                words += 1
                words_ok += gpad[t][i].text == ppad[t][j].text
        if m.n_gt:
            idtp += id_metrics(gt, pred, iou_threshold)["IDTP"]
        a, b, c = _detection_counts(gt, pred, iou_threshold)
        tp, dgt, dpred = tp + a, dgt + b, dpred + c
    if n_gt == 0:
        raise MetricError("MOTA is undefined without ground truth")
    p, r, f = _prf(tp, dgt, dpred)
    mtml = _mt_ml(coverage)
    idfp, idfn = n_pred - idtp, n_gt - idtp
    return MotReport(
        MOTA=100.0 * (1.0 - (fp + fn + idsw) / n_gt),
        MOTP=100.0 * iou_sum / n_match if n_match else 0.0,
        IDF1=100.0 * 2 * idtp / (2 * idtp + idfp + idfn),
        IDP=100.0 * idtp / n_pred if n_pred else 0.0,
        IDR=100.0 * idtp / n_gt,
        precision=p, recall=r, f_measure=f, FP=fp, FN=fn, IDSW=idsw,
        MT=mtml["MT"], ML=mtml["ML"], MT_pct=mtml["MT_pct"], ML_pct=mtml["ML_pct"],
        n_gt=n_gt, n_pred=n_pred, n_tracks=mtml["n_tracks"],
        word_accuracy=100.0 * words_ok / words if words else 0.0, n_word_matches=words)


def format_report(report: MotReport) -> str:
    cols = [("IDF1", "IDF1"), ("MOTA", "MOTA"), ("MOTP", "MOTP"), ("M-Tracked", "MT_pct"),
            ("M-Lost", "ML_pct"), ("P", "precision"), ("R", "recall"), ("F", "f_measure"),
            ("WordAcc", "word_accuracy"), ("FP", "FP"), ("FN", "FN"), ("IDSW", "IDSW")]
    d = report.to_dict(1)
    head = " ".join(f"{c:>9}" for c, _ in cols)
    row = " ".join(f"{d[k]:>9}" for _, k in cols)
    return head + "\n" + row + "\n"
