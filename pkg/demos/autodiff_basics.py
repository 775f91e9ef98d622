"""
Reverse-mode autodiff on numpy arrays
=====================================

A short tour of the tensor layer the rest of the package is built on.
"""

import numpy as np

from olmd.gradcheck import finite_diff_report
from olmd.ops import conv, pool
from olmd.tensor import Tensor, log_softmax, precision, relu

# A Tensor wraps a numpy array and records how it was computed.
x = Tensor(np.array([[1.0, -2.0, 3.0]]), requires_grad=True)
y = (relu(x) * 2.0).sum()
y.backward()
print("relu'(x) * 2 =", x.grad)

# Convolution is cross-correlation, as in most deep learning libraries.
edge = conv(Tensor([[1.0, 2.0, 3.0]]), Tensor([[[1.0, 0.0, -1.0]]]), padding=1)
print("1D edge filter:", edge.data)

# Pools reduce whole axes or slide a window along one.
print("mean:", pool("avg", Tensor([1.0, 3.0, 5.0, 7.0]), 0).data)
print("windowed max:", pool("max", Tensor([1.0, 5.0, 2.0, 4.0]), 0, 2).data)

# Gradient checks run in float64; precision() switches the default dtype.
with precision(np.float64):
    z = Tensor(np.random.default_rng(0).standard_normal((4, 5)), requires_grad=True)
    proj = np.random.default_rng(1).standard_normal((4, 5))
    report = finite_diff_report(lambda: (log_softmax(z, 1) * proj).sum(), z)
print("log_softmax vs central differences:", report)
