"""
Motion features on a synthetic clip
===================================

Render a clip, look at the two orientation views of a feature map, and check
that long-term motion aggregation leaves a still clip untouched.
"""

import numpy as np

from olmd.data import SynthConfig, generate_sample, plan_trajectory
from olmd.layers import rng_for
from olmd.model import LMA, decouple
from olmd.tensor import Tensor

sample = generate_sample(seed=3)
print("glosses:", sample.kinds, "durations:", sample.durations)
print("video (C, T, H, W):", sample.video.shape)

# Blob centre path for UP followed by UP: the column never moves, the row
# falls steadily and the blob nearly stops at the boundary between glosses.
centers = plan_trajectory([1, 1], [10, 10], SynthConfig(), np.random.default_rng(0))
print("row per frame:", np.round(centers[:, 0], 2))
print("column per frame:", np.unique(centers[:, 1]))

# Pooling over height keeps horizontal structure (X_h); over width, vertical (X_v).
pair = decouple(Tensor(sample.video), "avg")
print("X_h:", pair.h.shape, " X_v:", pair.v.shape)

# Shifting the picture up or down leaves X_h unchanged.
shifted = decouple(Tensor(np.roll(sample.video, 2, axis=2)), "avg")
print("max |X_h change| after a vertical shift:", float(np.abs(shifted.h.data - pair.h.data).max()))

# A clip with no motion: every temporal difference is zero, so LMA is the identity.
still = Tensor(np.repeat(sample.video[:, :1], 12, axis=1))
lma = LMA(channels=3, context=9, reduction=1, rng=rng_for(0, "demo"))
print("static clip unchanged:", np.array_equal(lma(still).data, still.data))
