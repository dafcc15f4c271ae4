"""Reverse-mode autodiff on numpy: build a small graph, backprop, compare with finite differences."""

import numpy as np

from chunktt import autodiff as ad

rng = np.random.default_rng(0)
w = ad.parameter(rng.normal(size=(3, 4)), name="w")
b = ad.parameter(np.zeros(4), name="b")
x = ad.constant(rng.normal(size=(5, 3)))


def loss():
    h = ad.tanh(ad.matmul(x, w) + b)
    return ad.mean(ad.log_softmax(h) * -1.0)


out = loss()
ad.backward(out, [w, b])
print("loss", out.values)
print("dL/db", b.grad)

graph = ad.trace(out)
print("graph has", len(graph.nodes), "nodes;", len(graph.leaves()), "leaves")

# the same gradient by central differences, reported as the worst relative error
print("grad check rel err", ad.grad_check(loss, [w, b]))
