"""
Training on the synthetic benchmark
===================================

Three spoofing attacks are seen in training; evaluation uses two others.
Takes a few seconds per model on one core.
"""
import numpy as np

from acs_spoof.data import SynthConfig, gen_synthetic
from acs_spoof.evaluation import compute_eer
from acs_spoof.train import TrainConfig, train_loop

train, dev, ev = gen_synthetic(SynthConfig(seed=0))
print(f"train {len(train)}  dev {len(dev)}  eval {len(ev)}  (frames of dim {train.frame_dim})")
print("eval attacks:", sorted(set(ev.system_ids) - {"-"}))

for loss, centroid in [("acs-oc", "acs"), ("acs-oc", "fixed"), ("wce", "acs")]:
    cfg = TrainConfig(seed=0, loss=loss, centroid=centroid)
    model, hist = train_loop(train, dev, cfg)
    s = model.score(ev.frames)
    eer = compute_eer(s[ev.labels], s[~ev.labels])[0]
    print(f"{loss:7s} {centroid:6s}  best epoch {hist.best_epoch:2d}  stopped {hist.stop_epoch:2d}  "
          f"unseen EER {100 * eer:.2f}%")

# per-attack breakdown for the last ACS model
model, _ = train_loop(train, dev, TrainConfig(seed=0))
s = model.score(ev.frames)
systems = np.array(ev.system_ids)
for sid in ("A11", "A12"):
    print(sid, f"{100 * compute_eer(s[ev.labels], s[systems == sid])[0]:.2f}%")
