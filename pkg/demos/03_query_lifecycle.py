"""How text queries are born, carried and retired across frames.

A stand-in model with scripted scores drives the real tracker, so the
lifecycle is visible without training anything.

Run:  python3 demos/03_query_lifecycle.py
"""
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from lifecycle_suite import ScriptedModel  # noqa: E402

from vtspot.tracker import TrackerState, inference_step  # noqa: E402

# 4 query slots, 6 frames.  A score above tau = 0.5 on an empty query starts
# a track; the carried query keeps its slot until its score drops below tau.
scores = np.array([
    [0.9, 0.1, 0.1, 0.1],
    [0.8, 0.1, 0.7, 0.1],
    [0.7, 0.2, 0.9, 0.1],
    [0.3, 0.1, 0.9, 0.6],
    [0.9, 0.1, 0.8, 0.9],
    [0.1, 0.1, 0.1, 0.1],
])
model = ScriptedModel(scores)
state = TrackerState(tau=0.5)
for t in range(len(scores)):
    obs, state = inference_step(t, state, model)
    held = {q.slot: q.track_id for q in state.text_queries}
    print(f"frame {t}: emitted tracks {[tid for tid, _ in obs]}, slots carried into next frame {held}")
# track ids are never reused: slot 0 comes back at frame 4 under a new id
