"""
A centroid that keeps up with the encoder
=========================================

The bonafide centroid is a running mean of every bonafide embedding seen so
far.  Only the mean and the count are stored, never the embeddings.
"""
import numpy as np

from acs_spoof import centroid as cen

rng = np.random.default_rng(0)

# feed ten batches with 0-5 bonafide rows each
state = cen.make_policy("acs", dim=4)
everything = []
for step in range(10):
    rows = rng.normal(1.0, 1.0, (int(rng.integers(0, 6)), 4))
    everything.extend(rows)
    state = cen.policy_step(state, epoch=1, update=cen.BonafideBatchSummary.from_embeddings(rows))
    if state.initialized:
        print(f"step {step}: n={state.count:2d}  C={np.round(state.vector, 3)}")

print("stored-everything mean:", np.round(np.mean(everything, axis=0), 3))
print("max difference:", np.max(np.abs(state.vector - np.mean(everything, axis=0))))

# a batch with no bonafide rows leaves the state alone
assert cen.policy_step(state, 1, None) is state

# partial ACS follows the same recursion up to its freeze epoch
partial = cen.make_policy("partial-acs", dim=4, freeze_epoch=2)
for epoch in range(1, 5):
    partial = cen.policy_step(partial, epoch, cen.BonafideBatchSummary.from_embeddings(rng.normal(size=(2, 4))))
    print(f"epoch {epoch}: partial-acs count {partial.count}")

# fixed and trainable centroids start from a seeded random unit vector
fixed = cen.make_policy("fixed", dim=4, rng=np.random.default_rng(1))
print("fixed centroid norm:", np.linalg.norm(fixed.vector))
