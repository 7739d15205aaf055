"""
Three training objectives
=========================

The one-class cosine loss pulls bonafide embeddings towards the centroid and
pushes spoof embeddings away.  OC-Softmax and weighted cross entropy are the
baselines it is compared with.
"""
import numpy as np

from acs_spoof.losses import linear_head, oc_loss, ocsoftmax_loss, wce_loss

c = np.array([1.0, 2.0, -1.0])
labels = np.array([True, True, False, False, False])

# best case: bonafide on the centroid direction, spoof opposite
aligned = np.vstack([c, 5 * c, -c, -2 * c, -0.5 * c])
print("aligned batch      :", oc_loss(aligned, labels, c).value)
print("reversed batch     :", oc_loss(-aligned, labels, c).value)

rng = np.random.default_rng(0)
random_batch = rng.standard_normal((5, 3))
out = oc_loss(random_batch, labels, c)
print("random batch       :", round(out.value, 4))
print("gradient row norms :", np.round(np.linalg.norm(out.grads, axis=1), 4))

# OC-Softmax: a bonafide row exactly at the margin costs ln 2
w = np.array([1.0, 0.0])
at_margin = np.array([[0.9, np.sqrt(1 - 0.81)]])
print("OC-Softmax at margin:", ocsoftmax_loss(at_margin, [True], w).value, "ln2 =", np.log(2))

# WCE with a linear head; the bonafide class weighs 9x the spoof class
W = rng.standard_normal((3, 2))
print("WCE on random batch :", round(wce_loss(linear_head(random_batch, W, np.zeros(2)), labels).value, 4))
