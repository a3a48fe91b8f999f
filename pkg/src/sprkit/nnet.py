"""A small deterministic float64 network engine with hand-written backprop.

All trainable parameters of a :class:`Network` live in one flat float64
vector.  Layers own contiguous slices of it, in layer order, weight before
bias.  That flat vector *is* the global parameter index space: index ``j``
of ``net.params`` is weight ``w_j`` everywhere else in the package.

Conv weights are stored as ``(n_out, n_inp, k, k)`` so the weights feeding
one output channel (a filter) form a contiguous slab of ``n_inp * k * k``
entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "NonFiniteError",
    "ShapeError",
    "Dense",
    "Conv2d",
    "ReLU",
    "MaxPool2d",
    "Flatten",
    "Network",
    "GradientBundle",
    "SGDMomentum",
    "sgd_momentum_step",
    "softmax_cross_entropy",
    "mlp",
    "convnet_s",
    "layer_from_spec",
]


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf shows up in a forward/backward pass."""


class ShapeError(ValueError):
    pass


def _check_finite(a: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"non-finite value in {where}")
    return a


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


class Layer:
    kind = "layer"
    weight_shape: tuple[int, ...] | None = None
    bias_shape: tuple[int, ...] | None = None

    def build(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        self.in_shape = tuple(in_shape)
        self.out_shape = self._out_shape(self.in_shape)
        return self.out_shape

    def _out_shape(self, in_shape):
        return in_shape

    @property
    def fan_in(self) -> int:
        return 1

    def hyper(self) -> dict:
        return {}

    def forward(self, x, w, b):
        raise NotImplementedError

    def backward(self, dout, cache, w, b):
        """Return ``(dx, dw, db)``; ``dw``/``db`` are None for parameter-free layers."""
        raise NotImplementedError


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_inp: int, n_out: int):
        self.n_inp, self.n_out = int(n_inp), int(n_out)
        self.weight_shape = (self.n_out, self.n_inp)
        self.bias_shape = (self.n_out,)

    def _out_shape(self, in_shape):
        if in_shape != (self.n_inp,):
            raise ShapeError(f"dense expects input ({self.n_inp},), got {in_shape}")
        return (self.n_out,)

    @property
    def fan_in(self):
        return self.n_inp

    def hyper(self):
        return {"n_inp": self.n_inp, "n_out": self.n_out}

    def forward(self, x, w, b):
        return x @ w.T + b, x

    def backward(self, dout, x, w, b):
        return dout @ w, dout.T @ x, dout.sum(axis=0)


class Conv2d(Layer):
    """Square-kernel 2-d convolution (cross-correlation), NCHW layout."""

    kind = "conv2d"

    def __init__(self, n_inp: int, n_out: int, k: int, stride: int = 1, padding: int = 0):
        self.n_inp, self.n_out, self.k = int(n_inp), int(n_out), int(k)
        self.stride, self.padding = int(stride), int(padding)
        self.weight_shape = (self.n_out, self.n_inp, self.k, self.k)
        self.bias_shape = (self.n_out,)

    def _out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.n_inp:
            raise ShapeError(f"conv2d expects ({self.n_inp}, H, W), got {in_shape}")
        _, h, w = in_shape
        ho = (h + 2 * self.padding - self.k) // self.stride + 1
        wo = (w + 2 * self.padding - self.k) // self.stride + 1
        if ho <= 0 or wo <= 0:
            raise ShapeError(f"conv2d kernel {self.k} too large for input {in_shape}")
        return (self.n_out, ho, wo)

    @property
    def fan_in(self):
        return self.n_inp * self.k * self.k

    def hyper(self):
        return {
            "n_inp": self.n_inp,
            "n_out": self.n_out,
            "k": self.k,
            "stride": self.stride,
            "padding": self.padding,
        }

    def _cols(self, x):
        p, s, k = self.padding, self.stride, self.k
        if p:
            x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        bsz, c, ho, wo = win.shape[:4]
        # (B, Ho, Wo, C, k, k) -> rows ordered like a flattened filter
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(bsz * ho * wo, c * k * k)
        return cols, (bsz, ho, wo), x.shape

    def forward(self, x, w, b):
        cols, (bsz, ho, wo), padded_shape = self._cols(x)
        out = cols @ w.reshape(self.n_out, -1).T + b
        out = out.reshape(bsz, ho, wo, self.n_out).transpose(0, 3, 1, 2)
        return out, (cols, padded_shape)

    def backward(self, dout, cache, w, b):
        cols, padded_shape = cache
        bsz, _, ho, wo = dout.shape
        d2 = dout.transpose(0, 2, 3, 1).reshape(-1, self.n_out)
        dw = (d2.T @ cols).reshape(self.weight_shape)
        db = d2.sum(axis=0)
        dcols = (d2 @ w.reshape(self.n_out, -1)).reshape(bsz, ho, wo, self.n_inp, self.k, self.k)
        dxp = np.zeros(padded_shape)
        s = self.stride
        for i in range(self.k):
            for j in range(self.k):
                dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        p = self.padding
        dx = dxp[:, :, p : padded_shape[2] - p, p : padded_shape[3] - p] if p else dxp
        return dx, dw, db


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, w, b):
        return np.maximum(x, 0.0), x > 0

    def backward(self, dout, mask, w, b):
        # subgradient 0 at the kink
        return dout * mask, None, None


class MaxPool2d(Layer):
    """Non-overlapping ``size x size`` max pooling; ties go to the first element."""

    kind = "maxpool2d"

    def __init__(self, size: int = 2):
        self.size = int(size)

    def _out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"maxpool2d expects (C, H, W), got {in_shape}")
        c, h, w = in_shape
        if h % self.size or w % self.size:
            raise ShapeError(f"maxpool2d size {self.size} does not divide {h}x{w}")
        return (c, h // self.size, w // self.size)

    def hyper(self):
        return {"size": self.size}

    def forward(self, x, w, b):
        bsz, c, h, wd = x.shape
        s = self.size
        blocks = x.reshape(bsz, c, h // s, s, wd // s, s).transpose(0, 1, 2, 4, 3, 5)
        blocks = blocks.reshape(bsz, c, h // s, wd // s, s * s)
        idx = blocks.argmax(axis=-1)
        out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
        return out, (idx, x.shape)

    def backward(self, dout, cache, w, b):
        idx, shape = cache
        bsz, c, h, wd = shape
        s = self.size
        dblocks = np.zeros(idx.shape + (s * s,))
        np.put_along_axis(dblocks, idx[..., None], dout[..., None], axis=-1)
        dx = dblocks.reshape(bsz, c, h // s, wd // s, s, s).transpose(0, 1, 2, 4, 3, 5)
        return dx.reshape(shape), None, None


class Flatten(Layer):
    kind = "flatten"

    def _out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, w, b):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dout, shape, w, b):
        return dout.reshape(shape), None, None


_LAYER_TYPES = {cls.kind: cls for cls in (Dense, Conv2d, ReLU, MaxPool2d, Flatten)}


def layer_from_spec(spec: dict) -> Layer:
    cls = _LAYER_TYPES.get(spec["kind"])
    if cls is None:
        raise ValueError(f"unknown layer kind {spec['kind']!r}")
    return cls(**spec.get("hyper", {}))


# ---------------------------------------------------------------------------
# loss head
# ---------------------------------------------------------------------------


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits.

    Uses max-subtraction, so any finite logits are safe.
    """
    n, c = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"label out of range [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(logsumexp - shifted[rows, labels]))
    probs = np.exp(shifted - logsumexp[:, None])
    probs[rows, labels] -= 1.0
    return loss, probs / n


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------


@dataclass
class GradientBundle:
    loss: float
    grad: np.ndarray  # aligned with Network.params
    logits: np.ndarray | None = None


class Network:
    """Sequential network whose parameters live in one flat vector.

    ``layers[-1]`` must produce class scores; the softmax/cross-entropy head
    is applied by :meth:`loss_and_grad` and is not a layer of its own.
    """

    def __init__(self, layers: list[Layer], input_shape, seed: int | None = 0):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        shape = self.input_shape
        self.slices: list[dict[str, tuple[int, int]]] = []
        offset = 0
        for layer in self.layers:
            shape = layer.build(shape)
            sl = {}
            for name in ("weight", "bias"):
                pshape = getattr(layer, f"{name}_shape")
                if pshape is not None:
                    size = int(np.prod(pshape))
                    sl[name] = (offset, offset + size)
                    offset += size
            self.slices.append(sl)
        if len(shape) != 1:
            raise ShapeError(f"network must end in a flat score vector, got {shape}")
        self.output_shape = shape
        self.params = np.zeros(offset)
        if seed is not None:
            self.init_params(seed)

    # -- parameter plumbing -------------------------------------------------

    @property
    def n_params(self) -> int:
        return self.params.size

    def init_params(self, seed: int) -> None:
        """Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero biases."""
        rng = np.random.default_rng(seed)
        self.params[:] = 0.0
        for layer, sl in zip(self.layers, self.slices):
            if "weight" in sl:
                a, b = sl["weight"]
                bound = np.sqrt(6.0 / layer.fan_in)
                self.params[a:b] = rng.uniform(-bound, bound, size=b - a)

    def weight(self, layer_id: int) -> np.ndarray:
        a, b = self.slices[layer_id]["weight"]
        return self.params[a:b].reshape(self.layers[layer_id].weight_shape)

    def bias(self, layer_id: int) -> np.ndarray:
        a, b = self.slices[layer_id]["bias"]
        return self.params[a:b]

    def get_params(self) -> np.ndarray:
        return self.params.copy()

    def set_params(self, flat) -> "Network":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != self.params.shape:
            raise ShapeError(f"expected {self.params.size} parameters, got {flat.size}")
        _check_finite(flat, "set_params")
        self.params[:] = flat
        return self

    def copy(self) -> "Network":
        clone = Network([layer_from_spec(s) for s in self.describe()], self.input_shape, seed=None)
        clone.params[:] = self.params
        return clone

    def describe(self) -> list[dict]:
        return [{"kind": layer.kind, "hyper": layer.hyper()} for layer in self.layers]

    def same_architecture(self, other: "Network") -> bool:
        return self.describe() == other.describe() and self.input_shape == other.input_shape

    def param_layer_ids(self) -> np.ndarray:
        """Layer id owning each global parameter index."""
        owner = np.empty(self.n_params, dtype=np.int64)
        for lid, sl in enumerate(self.slices):
            for a, b in sl.values():
                owner[a:b] = lid
        return owner

    def _wb(self, lid):
        sl = self.slices[lid]
        layer = self.layers[lid]
        w = b = None
        if "weight" in sl:
            a, e = sl["weight"]
            w = self.params[a:e].reshape(layer.weight_shape)
        if "bias" in sl:
            a, e = sl["bias"]
            b = self.params[a:e]
        return w, b

    # -- passes -------------------------------------------------------------

    def _check_batch(self, batch):
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != len(self.input_shape) + 1 or batch.shape[1:] != self.input_shape:
            raise ShapeError(f"batch shape {batch.shape} does not match input {self.input_shape}")
        return batch

    def forward(self, batch) -> np.ndarray:
        x = self._check_batch(batch)
        for lid, layer in enumerate(self.layers):
            x, _ = layer.forward(x, *self._wb(lid))
        return _check_finite(x, "forward")

    def loss_and_grad(self, batch, labels) -> GradientBundle:
        x = self._check_batch(batch)
        if x.shape[0] == 0:
            raise ShapeError("empty batch")
        caches = []
        for lid, layer in enumerate(self.layers):
            x, cache = layer.forward(x, *self._wb(lid))
            caches.append(cache)
        logits = _check_finite(x, "forward")
        loss, dx = softmax_cross_entropy(logits, labels)
        grad = np.zeros_like(self.params)
        for lid in range(len(self.layers) - 1, -1, -1):
            w, b = self._wb(lid)
            dx, dw, db = self.layers[lid].backward(dx, caches[lid], w, b)
            sl = self.slices[lid]
            if dw is not None:
                a, e = sl["weight"]
                grad[a:e] = dw.ravel()
                a, e = sl["bias"]
                grad[a:e] = db
        return GradientBundle(loss, _check_finite(grad, "backward"), logits)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


def sgd_momentum_step(params, grad, lr, momentum, velocity):
    """One heavy-ball step: ``v <- momentum*v + g``, ``w <- w - lr*v``."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    if not 0 <= momentum < 1:
        raise ValueError("momentum must lie in [0, 1)")
    velocity = momentum * velocity + grad
    params = params - lr * velocity
    _check_finite(params, "sgd step")
    return params, velocity


class SGDMomentum:
    """Stateful wrapper around :func:`sgd_momentum_step`.

    ``frozen`` marks indices whose gradient and velocity are forced to zero,
    so frozen weights never move.
    """

    def __init__(self, n_params: int, lr: float, momentum: float = 0.9):
        self.lr = lr
        self.momentum = momentum
        self.velocity = np.zeros(n_params)

    def step(self, net: Network, grad: np.ndarray, frozen: np.ndarray | None = None) -> None:
        if frozen is not None:
            grad = np.where(frozen, 0.0, grad)
            self.velocity[frozen] = 0.0
        new, self.velocity = sgd_momentum_step(net.params, grad, self.lr, self.momentum, self.velocity)
        net.params[:] = new


# ---------------------------------------------------------------------------
# architectures
# ---------------------------------------------------------------------------


def mlp(sizes: list[int], seed: int | None = 0) -> Network:
    """Dense/ReLU stack; ``sizes = [n_in, hidden..., n_classes]``."""
    layers: list[Layer] = []
    for i in range(len(sizes) - 1):
        layers.append(Dense(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(ReLU())
    return Network(layers, (sizes[0],), seed=seed)


def convnet_s(
    in_channels: int = 3,
    image_size: int = 8,
    c1: int = 8,
    c2: int = 16,
    n_classes: int = 4,
    seed: int | None = 0,
) -> Network:
    """conv(3x3)-relu-pool-conv(3x3)-relu-pool-flatten-dense."""
    side = image_size // 4
    layers = [
        Conv2d(in_channels, c1, 3, padding=1),
        ReLU(),
        MaxPool2d(2),
        Conv2d(c1, c2, 3, padding=1),
        ReLU(),
        MaxPool2d(2),
        Flatten(),
        Dense(c2 * side * side, n_classes),
    ]
    return Network(layers, (in_channels, image_size, image_size), seed=seed)
