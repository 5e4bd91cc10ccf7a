"""Query lifecycle across frames and threshold-driven track birth / removal.

A query slot holds either a fresh empty query or a text query bound to one
track.  At inference a slot's empty query is promoted when its text score
reaches ``tau``; a text query is dropped once its score falls below ``tau``
(after ``patience`` extra frames, 0 by default).
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autograd import Tensor
from .data import Instance
from .geometry import RotatedBox
from .model import QueryEntry, QuerySet


class CapacityError(ValueError):
    pass


@dataclass
class TrackerState:
    text_queries: list[QueryEntry] = field(default_factory=list)
    next_track_id: int = 0
    tau: float = 0.5
    patience: int = 0
    misses: dict[int, int] = field(default_factory=dict)
    frame_index: int = 0


@dataclass
class Observation:
    frame: int
    box: RotatedBox
    score: float
    text: str


@dataclass
class Trajectory:
    track_id: int
    observations: list[Observation] = field(default_factory=list)

    @property
    def text(self) -> str:
        """Most frequent transcription; ties go to the highest-scoring observation."""
        if not self.observations:
            return ""
        counts = Counter(o.text for o in self.observations)
        best = max(counts.values())
        cands = [o for o in self.observations if counts[o.text] == best]
        return max(cands, key=lambda o: o.score).text

    @property
    def frames(self) -> list[int]:
        return [o.frame for o in self.observations]


def advance_query_set(prev_text_queries: list[QueryEntry], n: int) -> QuerySet:
    """N-slot query set: surviving text queries keep their slots, every other
    slot gets a fresh empty query."""
    if len(prev_text_queries) > n:
        raise CapacityError(f"{len(prev_text_queries)} live text queries exceed N={n}")
    by_slot = {}
    for q in prev_text_queries:
        if q.kind != "text":
            raise ValueError("only text queries are carried across frames")
        if not 0 <= q.slot < n or q.slot in by_slot:
            raise CapacityError(f"text query slot {q.slot} invalid or duplicated for N={n}")
        by_slot[q.slot] = q
    return QuerySet([by_slot.get(i) or QueryEntry(i) for i in range(n)])


def inference_step(frame, state: TrackerState, model, frame_index: Optional[int] = None):
    """One frame of online spotting; returns (observations, new TrackerState).

    ``model`` must provide ``n_queries``, ``encode(frame)``,
    ``decoder_forward(encoded, queries)`` and ``read(encoded, boxes, image_hw)``.
    """
    t = state.frame_index if frame_index is None else frame_index
    queries = advance_query_set(state.text_queries, model.n_queries)
    encoded = model.encode(frame)
    hidden, preds = model.decoder_forward(encoded, queries)
    scores = preds.scores
    boxes = preds.boxes.data
    angles = preds.angles

    keep: list[QueryEntry] = []
    emit: list[tuple[int, int]] = []  # (track_id, slot)
    misses = dict(state.misses)
    next_id = state.next_track_id

    def carried(slot: int, tid: int) -> QueryEntry:
        return QueryEntry(slot, "text", tid, Tensor(hidden.data[slot].copy()), boxes[slot].copy(),
                          float(scores[slot]))

    for entry in queries.entries:
        s = entry.slot
        if entry.kind == "text":
            if scores[s] >= state.tau:
                misses.pop(entry.track_id, None)
                keep.append(carried(s, entry.track_id))
                emit.append((entry.track_id, s))
            else:
                m = misses.get(entry.track_id, 0) + 1
                if m <= state.patience:
                    misses[entry.track_id] = m
                    keep.append(QueryEntry(s, "text", entry.track_id, entry.embedding, entry.ref_box,
                                           float(scores[s])))
                else:
                    misses.pop(entry.track_id, None)
        elif scores[s] >= state.tau:
            keep.append(carried(s, next_id))
            emit.append((next_id, s))
            next_id += 1

    frame_hw = np.shape(frame)[-2:]
    rboxes = [RotatedBox(*boxes[s], angles[s]) for _, s in emit]
    texts = model.read(encoded, rboxes, frame_hw) if emit else []
    observations = sorted(
        ((tid, Observation(t, b, float(scores[s]), txt)) for (tid, s), b, txt in zip(emit, rboxes, texts)),
        key=lambda kv: kv[0])
    new_state = TrackerState(sorted(keep, key=lambda q: q.slot), next_id, state.tau, state.patience,
                             misses, t + 1)
    return observations, new_state


def spot_video(frames, model, tau: float = 0.5, patience: int = 0) -> list[Trajectory]:
    """Run online spotting over a frame sequence; trajectories sorted by track id."""
    frames = list(frames)
    if not frames:
        raise ValueError("spot_video needs at least one frame")
    state = TrackerState(tau=tau, patience=patience)
    tracks: dict[int, Trajectory] = {}
    for frame in frames:
        obs, state = inference_step(frame, state, model)
        for tid, o in obs:
            tracks.setdefault(tid, Trajectory(tid)).observations.append(o)
    return [tracks[k] for k in sorted(tracks)]


def trajectories_to_frames(trajectories: list[Trajectory], n_frames: int,
                           consensus_text: bool = True) -> list[list[Instance]]:
    """Per-frame instance lists (with scores) for file output or evaluation."""
    frames: list[list[Instance]] = [[] for _ in range(n_frames)]
    for tr in trajectories:
        text = tr.text
        for o in tr.observations:
            if not 0 <= o.frame < n_frames:
                raise ValueError(f"trajectory {tr.track_id} references frame {o.frame} outside [0, {n_frames})")
            frames[o.frame].append(Instance(tr.track_id, o.box, text if consensus_text else o.text, o.score))
    return frames
