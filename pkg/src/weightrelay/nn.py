"""Small deterministic neural-network engine.

A network is described by a :class:`NetworkSpec` (an ordered tuple of layer
records plus an output loss).  All trainable values live in one flat float64
vector, the *param set*, laid out in layer order:

* ``Dense``: weight matrix of shape ``(in_dim, out_dim)`` row-major, then bias.
* ``Conv2D``: filters of shape ``(out_ch, in_ch, kh, kw)``, then bias.

``forward`` computes ``outputs = X @ W + b`` style affine maps (no transposes
needed for Dense), so the flat layout and the arithmetic agree.

Image inputs use channels-first ``(N, C, H, W)``.  Convolutions are ``valid``
with stride 1; max pooling uses non-overlapping windows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence, Union

import numpy as np

from .errors import NumericError, SpecError

ACTIVATIONS = ("relu", "leaky_relu", "sigmoid", "tanh", "identity")
LOSSES = ("softmax-cross-entropy", "sigmoid-binary-cross-entropy", "mean-squared-error")


@dataclass(frozen=True)
class Dense:
    in_dim: int
    out_dim: int
    has_bias: bool = True


@dataclass(frozen=True)
class Conv2D:
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    has_bias: bool = True


@dataclass(frozen=True)
class MaxPool2D:
    pool_h: int
    pool_w: int


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Activation:
    kind: str
    beta: float = 0.01  # leaky_relu slope for z <= 0


@dataclass(frozen=True)
class Dropout:
    rate: float


Layer = Union[Dense, Conv2D, MaxPool2D, Flatten, Activation, Dropout]
_LAYER_NAMES = {
    Dense: "dense",
    Conv2D: "conv2d",
    MaxPool2D: "maxpool2d",
    Flatten: "flatten",
    Activation: "activation",
    Dropout: "dropout",
}
_LAYER_TYPES = {v: k for k, v in _LAYER_NAMES.items()}


def _weight_shape(layer):
    if isinstance(layer, Dense):
        return (layer.in_dim, layer.out_dim)
    if isinstance(layer, Conv2D):
        return (layer.out_channels, layer.in_channels, layer.kernel_h, layer.kernel_w)
    return None


def _bias_len(layer):
    if isinstance(layer, Dense):
        return layer.out_dim if layer.has_bias else 0
    if isinstance(layer, Conv2D):
        return layer.out_channels if layer.has_bias else 0
    return 0


@dataclass(frozen=True)
class NetworkSpec:
    """Declarative network architecture.

    ``input_shape`` is ``(features,)`` for vector inputs or ``(C, H, W)`` for
    images.  Construction validates that consecutive layers fit together and
    raises :class:`SpecError` naming the first offending layer.
    """

    input_shape: tuple
    layers: tuple
    loss: str = "softmax-cross-entropy"
    _shapes: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "_shapes", tuple(_infer_shapes(self)))

    @property
    def output_shape(self):
        return self._shapes[-1]

    @property
    def n_outputs(self):
        return int(np.prod(self.output_shape))

    def layer_shapes(self):
        """Activation shapes: input first, then the output of every layer."""
        return list(self._shapes)

    def param_slices(self):
        """Per layer, ``(weight_slice, weight_shape, bias_slice)`` or ``None``."""
        out = []
        offset = 0
        for layer in self.layers:
            shape = _weight_shape(layer)
            if shape is None:
                out.append(None)
                continue
            n_w = int(np.prod(shape))
            w = slice(offset, offset + n_w)
            offset += n_w
            n_b = _bias_len(layer)
            b = slice(offset, offset + n_b) if n_b else None
            offset += n_b
            out.append((w, shape, b))
        return out

    def to_dict(self):
        return {
            "input_shape": list(self.input_shape),
            "layers": [{"type": _LAYER_NAMES[type(l)], **l.__dict__} for l in self.layers],
            "loss": self.loss,
        }

    @classmethod
    def from_dict(cls, data):
        layers = []
        for entry in data["layers"]:
            entry = dict(entry)
            kind = entry.pop("type")
            try:
                layers.append(_LAYER_TYPES[kind](**entry))
            except (KeyError, TypeError) as exc:
                raise SpecError(f"bad layer entry {kind!r}: {exc}") from None
        return cls(tuple(data["input_shape"]), tuple(layers), data.get("loss", "softmax-cross-entropy"))

    def canonical_encoding(self) -> bytes:
        """Stable byte encoding; two specs are equal iff their encodings are."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()


def _infer_shapes(spec):
    if spec.loss not in LOSSES:
        raise SpecError(f"unknown output loss {spec.loss!r}")
    if not spec.input_shape or any(s < 1 for s in spec.input_shape):
        raise SpecError(f"bad input shape {spec.input_shape}")
    shape = spec.input_shape
    shapes = [shape]
    trainable = 0
    for i, layer in enumerate(spec.layers):
        where = f"layer {i} ({layer})"
        if isinstance(layer, Dense):
            if min(layer.in_dim, layer.out_dim) < 1:
                raise SpecError(f"{where}: dimensions must be positive")
            if shape != (layer.in_dim,):
                raise SpecError(f"{where}: expects input ({layer.in_dim},), got {shape}")
            shape = (layer.out_dim,)
            trainable += 1
        elif isinstance(layer, Conv2D):
            if min(layer.in_channels, layer.out_channels, layer.kernel_h, layer.kernel_w) < 1:
                raise SpecError(f"{where}: dimensions must be positive")
            if len(shape) != 3 or shape[0] != layer.in_channels:
                raise SpecError(f"{where}: expects ({layer.in_channels}, H, W) input, got {shape}")
            h, w = shape[1] - layer.kernel_h + 1, shape[2] - layer.kernel_w + 1
            if h < 1 or w < 1:
                raise SpecError(f"{where}: kernel larger than input {shape}")
            shape = (layer.out_channels, h, w)
            trainable += 1
        elif isinstance(layer, MaxPool2D):
            if len(shape) != 3:
                raise SpecError(f"{where}: expects (C, H, W) input, got {shape}")
            if layer.pool_h < 1 or layer.pool_w < 1 or shape[1] < layer.pool_h or shape[2] < layer.pool_w:
                raise SpecError(f"{where}: bad pool size for input {shape}")
            shape = (shape[0], shape[1] // layer.pool_h, shape[2] // layer.pool_w)
        elif isinstance(layer, Flatten):
            shape = (int(np.prod(shape)),)
        elif isinstance(layer, Activation):
            if layer.kind not in ACTIVATIONS:
                raise SpecError(f"{where}: unknown activation {layer.kind!r}")
        elif isinstance(layer, Dropout):
            if not 0.0 <= layer.rate < 1.0:
                raise SpecError(f"{where}: dropout rate must be in [0, 1)")
        else:
            raise SpecError(f"{where}: unknown layer type")
        shapes.append(shape)
    if trainable == 0:
        raise SpecError("network has no trainable layer")
    if len(shape) != 1:
        raise SpecError(f"network output must be a vector, got {shape}; add Flatten")
    if spec.loss == "sigmoid-binary-cross-entropy" and shape != (1,):
        raise SpecError(f"sigmoid-binary-cross-entropy needs a single output, got {shape}")
    return shapes


def param_count(spec: NetworkSpec) -> int:
    total = 0
    for layer in spec.layers:
        shape = _weight_shape(layer)
        if shape is not None:
            total += int(np.prod(shape)) + _bias_len(layer)
    return total


def init_params(spec: NetworkSpec, seed: int, scheme: str = "glorot_uniform") -> np.ndarray:
    """Random initial weights; biases start at zero.

    ``glorot_uniform`` draws each weight from U(-l, l) with
    ``l = sqrt(6 / (fan_in + fan_out))``.  ``he_normal`` is offered for deep
    ReLU stacks.
    """
    rng = np.random.default_rng(seed)
    params = np.zeros(param_count(spec))
    for layer, slot in zip(spec.layers, spec.param_slices()):
        if slot is None:
            continue
        w_slice, shape, _ = slot
        if isinstance(layer, Dense):
            fan_in, fan_out = layer.in_dim, layer.out_dim
        else:
            receptive = layer.kernel_h * layer.kernel_w
            fan_in, fan_out = layer.in_channels * receptive, layer.out_channels * receptive
        n = w_slice.stop - w_slice.start
        if scheme == "glorot_uniform":
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            params[w_slice] = rng.uniform(-limit, limit, size=n)
        elif scheme == "he_normal":
            params[w_slice] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=n)
        else:
            raise ValueError(f"unknown init scheme {scheme!r}")
    return params


class DropoutStream:
    """Seeded source of inverted-dropout masks.

    In ``eval`` mode every mask is all ones and no randomness is consumed.
    Two streams built with the same seed yield the same mask sequence.
    """

    def __init__(self, seed=None, mode="train"):
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', not {mode!r}")
        self.seed = seed
        self.mode = mode
        self._rng = np.random.default_rng(seed) if mode == "train" else None

    @classmethod
    def eval(cls):
        return cls(mode="eval")

    def mask(self, shape, rate):
        if self.mode == "eval" or rate == 0.0:
            return None
        keep = self._rng.random(shape) >= rate
        return keep / (1.0 - rate)


class ForwardCache(NamedTuple):
    inputs: list  # input to each layer
    aux: list  # per-layer extra state (masks, argmax indices, ...)
    outputs: np.ndarray


def _sigmoid(z):
    # e^z / (e^z + 1) without overflow
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (ez + 1.0)
    return out


def _activate(kind, beta, z):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "leaky_relu":
        return np.where(z > 0, z, beta * z)
    if kind == "sigmoid":
        return _sigmoid(z)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activate_grad(kind, beta, z, y, dy):
    if kind == "relu":
        return dy * (z > 0)
    if kind == "leaky_relu":
        return dy * np.where(z > 0, 1.0, beta)
    if kind == "sigmoid":
        return dy * y * (1.0 - y)
    if kind == "tanh":
        return dy * (1.0 - y * y)
    return dy


def _windows(x, kh, kw):
    # (N, C, H, W) -> (N, C, Ho, Wo, kh, kw) view
    return np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))


def _as_input(spec, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    want = spec.input_shape
    if X.shape[1:] == want:
        return X
    if X.ndim == 2 and X.shape[1] == int(np.prod(want)):
        return X.reshape((X.shape[0],) + want)
    raise SpecError(f"input of shape {X.shape[1:]} does not match network input {want}")


def forward(spec: NetworkSpec, params, X, dropout: DropoutStream | None = None):
    """Run the network on ``X``; returns ``(outputs, cache)``.

    Outputs are the last layer's raw values (logits for the cross-entropy
    losses).  ``dropout=None`` means evaluation mode.
    """
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (param_count(spec),):
        raise SpecError(f"expected {param_count(spec)} parameters, got {params.shape}")
    if dropout is None:
        dropout = DropoutStream.eval()
    x = _as_input(spec, X)
    inputs, aux = [], []
    for layer, slot in zip(spec.layers, spec.param_slices()):
        inputs.append(x)
        extra = None
        if isinstance(layer, Dense):
            w_slice, shape, b_slice = slot
            x = x @ params[w_slice].reshape(shape)
            if b_slice is not None:
                x = x + params[b_slice]
        elif isinstance(layer, Conv2D):
            w_slice, shape, b_slice = slot
            win = _windows(x, layer.kernel_h, layer.kernel_w)
            x = np.tensordot(win, params[w_slice].reshape(shape), axes=([1, 4, 5], [1, 2, 3]))
            x = np.ascontiguousarray(x.transpose(0, 3, 1, 2))
            if b_slice is not None:
                x = x + params[b_slice][None, :, None, None]
        elif isinstance(layer, MaxPool2D):
            n, c, h, w = x.shape
            ho, wo = h // layer.pool_h, w // layer.pool_w
            blocks = x[:, :, : ho * layer.pool_h, : wo * layer.pool_w]
            blocks = blocks.reshape(n, c, ho, layer.pool_h, wo, layer.pool_w)
            blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, -1)
            extra = np.argmax(blocks, axis=-1)
            x = np.take_along_axis(blocks, extra[..., None], axis=-1)[..., 0]
        elif isinstance(layer, Flatten):
            x = x.reshape(x.shape[0], -1)
        elif isinstance(layer, Activation):
            x = _activate(layer.kind, layer.beta, x)
        elif isinstance(layer, Dropout):
            extra = dropout.mask(x.shape, layer.rate)
            if extra is not None:
                x = x * extra
        aux.append(extra)
    return x, ForwardCache(inputs, aux, x)


def _labels_for(spec, Y, n):
    Y = np.asarray(Y)
    if spec.loss == "softmax-cross-entropy":
        if Y.ndim == 2:
            Y = np.argmax(Y, axis=1)
        Y = Y.astype(np.int64).reshape(-1)
        if Y.shape[0] != n:
            raise SpecError(f"{n} inputs but {Y.shape[0]} labels")
        if Y.size and (Y.min() < 0 or Y.max() >= spec.n_outputs):
            raise SpecError(f"class labels must lie in [0, {spec.n_outputs})")
        return Y
    Y = Y.astype(np.float64).reshape(n, -1)
    if Y.shape[1] != spec.n_outputs:
        raise SpecError(f"targets have {Y.shape[1]} columns, network has {spec.n_outputs} outputs")
    return Y


def _loss(spec, z, Y):
    """Mean loss over the batch and its gradient w.r.t. the outputs ``z``."""
    n = z.shape[0]
    if spec.loss == "softmax-cross-entropy":
        shifted = z - z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1))
        rows = np.arange(n)
        J = float(np.mean(lse - shifted[rows, Y]))
        dz = np.exp(shifted - lse[:, None])
        dz[rows, Y] -= 1.0
        return J, dz / n
    if spec.loss == "sigmoid-binary-cross-entropy":
        J = float(np.mean(np.maximum(z, 0.0) - z * Y + np.log1p(np.exp(-np.abs(z)))))
        return J, (_sigmoid(z) - Y) / n
    diff = z - Y
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def _first_bad_layer(cache):
    for i, x in enumerate(cache.inputs[1:] + [cache.outputs]):
        if not np.all(np.isfinite(x)):
            return i
    return len(cache.inputs) - 1


def loss_and_grad(spec: NetworkSpec, params, X, Y, dropout: DropoutStream | None = None):
    """Mean loss ``J`` over the mini-batch and ``G = dJ/dW`` in param-set order."""
    params = np.asarray(params, dtype=np.float64)
    z, cache = forward(spec, params, X, dropout)
    Y = _labels_for(spec, Y, z.shape[0])
    J, dy = _loss(spec, z, Y)
    if not np.isfinite(J):
        raise NumericError("non-finite loss", layer=_first_bad_layer(cache))
    grads = np.zeros_like(params)
    layers = spec.layers
    slots = spec.param_slices()
    for i in range(len(layers) - 1, -1, -1):
        layer, x, extra = layers[i], cache.inputs[i], cache.aux[i]
        if isinstance(layer, Dense):
            w_slice, shape, b_slice = slots[i]
            grads[w_slice] = (x.T @ dy).reshape(-1)
            if b_slice is not None:
                grads[b_slice] = dy.sum(axis=0)
            if i:
                dy = dy @ params[w_slice].reshape(shape).T
        elif isinstance(layer, Conv2D):
            w_slice, shape, b_slice = slots[i]
            win = _windows(x, layer.kernel_h, layer.kernel_w)
            grads[w_slice] = np.tensordot(dy, win, axes=([0, 2, 3], [0, 2, 3])).reshape(-1)
            if b_slice is not None:
                grads[b_slice] = dy.sum(axis=(0, 2, 3))
            if i:
                kh, kw = layer.kernel_h, layer.kernel_w
                padded = np.pad(dy, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
                flipped = params[w_slice].reshape(shape)[:, :, ::-1, ::-1]
                dx = np.tensordot(_windows(padded, kh, kw), flipped, axes=([1, 4, 5], [0, 2, 3]))
                dy = np.ascontiguousarray(dx.transpose(0, 3, 1, 2))
        elif isinstance(layer, MaxPool2D):
            n, c, h, w = x.shape
            ph, pw = layer.pool_h, layer.pool_w
            ho, wo = dy.shape[2], dy.shape[3]
            blocks = np.zeros((n, c, ho, wo, ph * pw))
            np.put_along_axis(blocks, extra[..., None], dy[..., None], axis=-1)
            blocks = blocks.reshape(n, c, ho, wo, ph, pw).transpose(0, 1, 2, 4, 3, 5)
            dx = np.zeros_like(x)
            dx[:, :, : ho * ph, : wo * pw] = blocks.reshape(n, c, ho * ph, wo * pw)
            dy = dx
        elif isinstance(layer, Flatten):
            dy = dy.reshape(x.shape)
        elif isinstance(layer, Activation):
            out = cache.inputs[i + 1] if i + 1 < len(layers) else cache.outputs
            dy = _activate_grad(layer.kind, layer.beta, x, out, dy)
        elif isinstance(layer, Dropout):
            if extra is not None:
                dy = dy * extra
    return J, grads


def output_probabilities(spec: NetworkSpec, z):
    """Map raw outputs to class probabilities (or pass through for MSE)."""
    if spec.loss == "softmax-cross-entropy":
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)
    if spec.loss == "sigmoid-binary-cross-entropy":
        return _sigmoid(z)
    return z


def predict_labels(spec: NetworkSpec, params, X, batch_size=4096):
    """Predicted class index per row (dropout off)."""
    preds = []
    X = np.asarray(X, dtype=np.float64)
    for start in range(0, X.shape[0], batch_size):
        z, _ = forward(spec, params, X[start : start + batch_size])
        preds.append(_decide(spec, z))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def _decide(spec, z):
    if spec.loss == "sigmoid-binary-cross-entropy" or z.shape[1] == 1:
        threshold = 0.0 if spec.loss == "sigmoid-binary-cross-entropy" else 0.5
        return (z[:, 0] >= threshold).astype(np.int64)
    return np.argmax(z, axis=1)


def f_score(y_true, y_pred, positive=1) -> float:
    """Binary F1; 0.0 when precision + recall is zero."""
    y_true = np.asarray(y_true).reshape(-1)
    y_pred = np.asarray(y_pred).reshape(-1)
    tp = int(np.sum((y_pred == positive) & (y_true == positive)))
    fp = int(np.sum((y_pred == positive) & (y_true != positive)))
    fn = int(np.sum((y_pred != positive) & (y_true == positive)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


class Evaluation(NamedTuple):
    accuracy: float
    loss: float
    f_score: float | None  # binary tasks only


def _as_xy(data):
    if hasattr(data, "X") and hasattr(data, "y"):
        return data.X, data.y
    X, y = data
    return X, y


def evaluate(spec: NetworkSpec, params, data, batch_size=4096) -> Evaluation:
    """Accuracy, mean loss and (binary only) F-score with dropout disabled."""
    X, y = _as_xy(data)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    n = X.shape[0]
    if n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    total_loss = 0.0
    preds = []
    for start in range(0, n, batch_size):
        xb, yb = X[start : start + batch_size], y[start : start + batch_size]
        z, _ = forward(spec, params, xb)
        J, _ = _loss(spec, z, _labels_for(spec, yb, z.shape[0]))
        total_loss += J * xb.shape[0]
        preds.append(_decide(spec, z))
    pred = np.concatenate(preds)
    truth = np.argmax(y, axis=1) if y.ndim == 2 and y.shape[1] > 1 else y.reshape(-1).astype(np.int64)
    accuracy = float(np.mean(pred == truth))
    binary = spec.loss == "sigmoid-binary-cross-entropy" or spec.n_outputs == 2
    return Evaluation(accuracy, total_loss / n, f_score(truth, pred) if binary else None)


def mlp(sizes: Sequence[int], activation="relu", loss=None, dropouts=None):
    """Dense chain ``sizes[0] -> ... -> sizes[-1]``.

    ``dropouts`` maps a hidden-layer position (1-based, counted from the
    input) to the dropout rate applied after that layer's activation.
    """
    if len(sizes) < 2:
        raise SpecError("an MLP needs at least an input and an output size")
    if loss is None:
        loss = "sigmoid-binary-cross-entropy" if sizes[-1] == 1 else "softmax-cross-entropy"
    dropouts = dropouts or {}
    layers = []
    for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]), start=1):
        layers.append(Dense(a, b))
        if k < len(sizes) - 1:
            layers.append(Activation(activation))
            if dropouts.get(k):
                layers.append(Dropout(dropouts[k]))
    return NetworkSpec((sizes[0],), tuple(layers), loss)
