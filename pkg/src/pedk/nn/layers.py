"""Layer objects wrapping the kernels in :mod:`pedk.nn.functional`.

Layers keep their parameters but never their activations: ``forward`` returns
``(out, cache)`` and the caller hands ``cache`` back to ``backward``.  That keeps
a trained network safe to share between threads for inference.
"""

import numpy as np

from pedk.nn import functional as F


class Layer:
    kind = "layer"

    def __init__(self):
        self.params = {}

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dout, cache):
        """Return ``(dx, grads)`` where ``grads`` mirrors ``self.params``."""
        raise NotImplementedError

    def config(self):
        return {"kind": self.kind}

    def output_shape(self, shape):
        return shape


class Conv(Layer):
    kind = "conv"

    def __init__(self, in_channels, filters, kernel=3, stride=1, pad=0):
        super().__init__()
        self.in_channels = in_channels
        self.filters = filters
        self.kernel = kernel
        self.stride = stride
        self.pad = pad
        self.params = {
            "weight": np.zeros((filters, in_channels, kernel, kernel)),
            "bias": np.zeros(filters),
        }

    @property
    def fan_in(self):
        return self.in_channels * self.kernel * self.kernel

    def forward(self, x, train=False, rng=None):
        return F.conv_forward(x, self.params["weight"], self.params["bias"], self.stride, self.pad)

    def backward(self, dout, cache):
        dx, dw, db = F.conv_backward(dout, cache)
        return dx, {"weight": dw, "bias": db}

    def config(self):
        return {
            "kind": self.kind,
            "in_channels": self.in_channels,
            "filters": self.filters,
            "kernel": self.kernel,
            "stride": self.stride,
            "pad": self.pad,
        }

    def output_shape(self, shape):
        _, h, w = shape
        return (
            self.filters,
            F.conv_output_side(h, self.kernel, self.stride, self.pad),
            F.conv_output_side(w, self.kernel, self.stride, self.pad),
        )


class MaxPool(Layer):
    kind = "maxpool"

    def forward(self, x, train=False, rng=None):
        return F.maxpool_forward(x)

    def backward(self, dout, cache):
        return F.maxpool_backward(dout, cache), {}

    def output_shape(self, shape):
        c, h, w = shape
        return (c, h // 2, w // 2)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False, rng=None):
        return F.relu(x), x

    def backward(self, dout, cache):
        return F.relu_backward(dout, cache), {}


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train=False, rng=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dout, cache):
        return dout.reshape(cache), {}

    def output_shape(self, shape):
        return (int(np.prod(shape)),)


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, out_features):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.params = {
            "weight": np.zeros((out_features, in_features)),
            "bias": np.zeros(out_features),
        }

    @property
    def fan_in(self):
        return self.in_features

    def forward(self, x, train=False, rng=None):
        return F.dense_forward(x, self.params["weight"], self.params["bias"])

    def backward(self, dout, cache):
        dx, dw, db = F.dense_backward(dout, cache)
        return dx, {"weight": dw, "bias": db}

    def config(self):
        return {"kind": self.kind, "in_features": self.in_features, "out_features": self.out_features}

    def output_shape(self, shape):
        return (self.out_features,)


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, p=0.5):
        super().__init__()
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"dropout probability must be in [0, 1], got {p}")
        self.p = p

    def forward(self, x, train=False, rng=None):
        return F.dropout(x, self.p, "train" if train else "eval", rng)

    def backward(self, dout, cache):
        return (dout if cache is None else dout * cache), {}

    def config(self):
        return {"kind": self.kind, "p": self.p}


class Softmax(Layer):
    """Terminal softmax.

    Training never backpropagates through this layer on its own; the network
    uses the fused softmax + cross-entropy gradient ``p - onehot``.
    """

    kind = "softmax"

    def forward(self, x, train=False, rng=None):
        out = F.softmax(x)
        return out, out

    def backward(self, dout, cache):
        p = cache
        dx = p * (dout - (dout * p).sum(axis=-1, keepdims=True))
        return dx, {}


LAYER_TYPES = {cls.kind: cls for cls in (Conv, MaxPool, ReLU, Flatten, Dense, Dropout, Softmax)}


def layer_from_config(cfg):
    cfg = dict(cfg)
    kind = cfg.pop("kind")
    return LAYER_TYPES[kind](**cfg)
