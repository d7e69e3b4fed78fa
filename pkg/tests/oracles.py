"""Reference computations written independently of the package internals."""

import numpy as np
from hypothesis import strategies as st

from weightrelay.data import batches, shuffle_rng
from weightrelay.nn import Activation, Conv2D, Dense, Flatten, MaxPool2D, NetworkSpec, forward, loss_and_grad


def finite_difference_grad(f, w, h=1e-5):
    g = np.zeros_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (f(w + e) - f(w - e)) / (2 * h)
    return g


def max_rel_error(a, b, floor=1e-7):
    return float(np.max(np.abs(a - b) / np.maximum(floor, np.abs(a) + np.abs(b))))


def direct_loop(spec, shard, w, *, batch_size, lr, seed, trainer_id, round_index, local_epochs=1):
    """A trainer round written as a bare SGD loop."""
    w = np.array(w, dtype=np.float64)
    for le in range(local_epochs):
        for X, y in batches(shard, batch_size, shuffle_rng(seed, trainer_id, round_index, le)):
            _, G = loss_and_grad(spec, w, X, y)
            w = w - lr * G
    return w


def dense_forward(layers, X):
    """Plain-numpy forward pass for a dense ReLU chain; ``layers`` is [(W, b), ...]."""
    a = X
    for i, (W, b) in enumerate(layers):
        a = a @ W + b
        if i < len(layers) - 1:
            a = np.maximum(a, 0.0)
    return a


def random_net(draw):
    """A small dense or conv net (at most 200 parameters) drawn with hypothesis."""
    kind = draw(st.sampled_from(["dense", "conv"]))
    act = draw(st.sampled_from(["tanh", "sigmoid", "leaky_relu", "relu"]))
    loss = draw(st.sampled_from(["softmax-cross-entropy", "sigmoid-binary-cross-entropy", "mean-squared-error"]))
    n_out = 1 if loss == "sigmoid-binary-cross-entropy" else draw(st.integers(2, 3))
    if kind == "dense":
        d = draw(st.integers(1, 6))
        h = draw(st.integers(1, 8))
        spec = NetworkSpec((d,), (Dense(d, h), Activation(act), Dense(h, n_out)), loss)
    else:
        c = draw(st.integers(1, 2))
        spec = NetworkSpec(
            (c, 6, 6),
            (Conv2D(c, 2, 3, 3), Activation(act), MaxPool2D(2, 2), Flatten(), Dense(8, n_out)),
            loss,
        )
    return spec


def kink_distance(spec, params, X):
    """Smallest distance of any ReLU input from 0 or any max-pool window from a tie."""
    _, cache = forward(spec, params, X)
    dist = np.inf
    for layer, a in zip(spec.layers, cache.inputs):
        if isinstance(layer, Activation) and layer.kind in ("relu", "leaky_relu"):
            dist = min(dist, float(np.min(np.abs(a))))
        if isinstance(layer, MaxPool2D):
            n, c, h, w = a.shape
            ph, pw = layer.pool_h, layer.pool_w
            win = a[:, :, : h // ph * ph, : w // pw * pw].reshape(n, c, h // ph, ph, w // pw, pw)
            win = np.sort(win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // ph, w // pw, ph * pw), axis=-1)
            dist = min(dist, float(np.min(win[..., -1] - win[..., -2])))
    return dist
