"""Train a small spotter for a few minutes, then spot and score held-out videos.

This uses a reduced model and 48x64 frames so it finishes quickly on one CPU
core (about two CPU minutes). The numbers are far below the full desk-scale
run, which needs about 6000 steps of the larger model, but rise with --steps.

Run:  python3 demos/04_train_and_spot.py [--steps 2000]
"""
import argparse
import logging
import time

from vtspot import RunConfig, SyntheticDataset, Trainer, VideoTextSpotter
from vtspot.metrics import format_report
from vtspot.tracker import spot_video
from vtspot.train import evaluate_model

p = argparse.ArgumentParser()
p.add_argument("--steps", type=int, default=2000)
args = p.parse_args()
logging.basicConfig(level=logging.INFO, format="%(message)s")

cfg = RunConfig(
    model=dict(d_model=48, n_heads=4, dec_layers=2, n_queries=8, backbone_channels=(12, 16, 24),
               fused_channels=24, ffn_dim=96, rec_hidden=48, rec_embed=16),
    loss=dict(exit_weight=1.0),
    synth=dict(height=48, width=64, glyph_scale=1.0, max_instances=2, word_len=(3, 3)),
    steps=args.steps, clip_len=3, lr=1e-3, lr_drop_at=0.8, log_every=100, checkpoint_every=0)
train = SyntheticDataset(cfg.synth, 200, seed=1)
held_out = SyntheticDataset(cfg.synth, 10, seed=777, length=12)

model = VideoTextSpotter(cfg.model)
t0 = time.process_time()
Trainer(model, train, cfg).run()
print(f"trained {args.steps} steps in {time.process_time() - t0:.0f} CPU s")

video = held_out.video(0)
for tr in spot_video([video.frame(t) for t in range(video.n_frames)], model, tau=cfg.tau):
    print(f"track {tr.track_id}: {tr.text!r} in frames {tr.frames[0]}..{tr.frames[-1]}")
print("ground truth words:", sorted({i.text for f in video.annotations for i in f}))
print(format_report(evaluate_model(model, held_out, tau=cfg.tau)))
