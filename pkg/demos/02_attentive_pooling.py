"""
Attentive statistics pooling
============================

Frame features (T, C) become one 2C utterance vector: an attention-weighted
mean next to an attention-weighted standard deviation.
"""
import numpy as np

from acs_spoof.asp import AspParams, asp_backward, asp_forward, attention_scores, normalize_scores

rng = np.random.default_rng(0)
T, C = 6, 3
frames = rng.standard_normal((T, C))
params = AspParams.init(C, rng)

alpha = normalize_scores(attention_scores(frames, params))
print("attention weights:", np.round(alpha, 3), "sum", alpha.sum())

pooled = asp_forward(frames, params)
print("mu   :", np.round(pooled[:C], 3))
print("sigma:", np.round(pooled[C:], 3))

# with v = 0 every frame gets weight 1/T: plain mean and std
flat = AspParams(params.W, params.b, np.zeros(C))
print("uniform attention reproduces mean/std:",
      np.allclose(asp_forward(frames, flat), np.concatenate([frames.mean(0), frames.std(0)])))

# the hand-written backward pass against central differences on one entry
upstream = rng.standard_normal(2 * C)
g_frames, g_params = asp_backward(frames, params, upstream)
h = 1e-6
bumped = frames.copy()
bumped[2, 1] += h
dipped = frames.copy()
dipped[2, 1] -= h
numeric = (upstream @ asp_forward(bumped, params) - upstream @ asp_forward(dipped, params)) / (2 * h)
print(f"d/dframe[2,1]: analytic {g_frames[2, 1]:.8f}  numeric {numeric:.8f}")
