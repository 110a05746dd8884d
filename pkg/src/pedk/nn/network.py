"""Sequential network container."""

import copy

import numpy as np

from pedk.nn import functional as F
from pedk.nn.layers import Conv, Dense, Softmax, layer_from_config

POSITIVE = 1
NEGATIVE = 0


class Network:
    """An ordered stack of layers ending in a 2-way softmax.

    ``meta`` carries the architecture description (conv-block count ``M``,
    dense-layer count ``N``, input side, role) and is serialized verbatim into
    checkpoints.
    """

    def __init__(self, layers, meta=None, dtype=np.float64):
        if not layers or not isinstance(layers[-1], Softmax):
            raise ValueError("network must end with a softmax layer")
        self.layers = list(layers)
        self.meta = dict(meta or {})
        self.dtype = np.dtype(dtype)
        self.astype(self.dtype)

    # -- parameters -------------------------------------------------------

    def parameters(self):
        """``(layer_index, name, array)`` triples in layer order."""
        out = []
        for i, layer in enumerate(self.layers):
            for name in ("weight", "bias"):
                if name in layer.params:
                    out.append((i, name, layer.params[name]))
        return out

    @property
    def param_count(self):
        return int(sum(a.size for _, _, a in self.parameters()))

    def get_weights(self):
        return [a.copy() for _, _, a in self.parameters()]

    def set_weights(self, weights):
        params = self.parameters()
        if len(weights) != len(params):
            raise ValueError(f"expected {len(params)} arrays, got {len(weights)}")
        for (i, name, old), new in zip(params, weights):
            new = np.asarray(new, dtype=self.dtype)
            if new.shape != old.shape:
                raise ValueError(f"layer {i} {name}: shape {new.shape} != {old.shape}")
            self.layers[i].params[name] = new.copy()

    def astype(self, dtype):
        self.dtype = np.dtype(dtype)
        for layer in self.layers:
            for name, arr in layer.params.items():
                layer.params[name] = np.ascontiguousarray(arr, dtype=self.dtype)
        return self

    def copy(self):
        return copy.deepcopy(self)

    def init_weights(self, rng):
        """He-style uniform init, ``U(-sqrt(6/fan_in), sqrt(6/fan_in))``; zero biases."""
        for layer in self.layers:
            if isinstance(layer, (Conv, Dense)):
                limit = np.sqrt(6.0 / layer.fan_in)
                w = rng.uniform(-limit, limit, size=layer.params["weight"].shape)
                layer.params["weight"] = w.astype(self.dtype)
                layer.params["bias"] = np.zeros_like(layer.params["bias"])
        return self

    # -- passes -----------------------------------------------------------

    def _prepare(self, x):
        x = np.asarray(x, dtype=self.dtype)
        offset = self.meta.get("input_offset", 0.0)
        if offset:
            x = x - self.dtype.type(offset)
        return x if x.ndim in (2, 4) else x[None]

    def forward_train(self, x, train=True, rng=None):
        """Run every layer but the softmax; return logits and per-layer caches."""
        out = self._prepare(x)
        caches = []
        for layer in self.layers[:-1]:
            out, cache = layer.forward(out, train=train, rng=rng)
            caches.append(cache)
        return out, caches

    def backward(self, dlogits, caches):
        """Backpropagate a logit gradient; return grads aligned with :meth:`parameters`."""
        grads_by_layer = {}
        d = dlogits
        for i in range(len(self.layers) - 2, -1, -1):
            d, g = self.layers[i].backward(d, caches[i])
            if g:
                grads_by_layer[i] = g
        return [grads_by_layer[i][name] for i, name, _ in self.parameters()]

    def loss_and_grads(self, x, labels, train=True, rng=None):
        """Mean cross-entropy over the batch and its parameter gradients."""
        logits, caches = self.forward_train(x, train=train, rng=rng)
        probs = F.softmax(logits)
        loss, dlogits = F.cross_entropy(probs, labels)
        n = logits.shape[0]
        grads = self.backward(dlogits / n, caches)
        return loss / n, grads

    def forward(self, x):
        """Class probabilities (eval mode)."""
        logits, _ = self.forward_train(x, train=False)
        return F.softmax(logits)

    def predict_proba(self, x, batch_size=256):
        x = np.asarray(x)
        if x.ndim == 3:
            return self.forward(x)[0]
        if len(x) == 0:
            return np.zeros((0, 2), dtype=self.dtype)
        return np.concatenate([self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)])

    def predict(self, x, batch_size=256):
        """Argmax class, 1 = positive."""
        return self.predict_proba(x, batch_size).argmax(axis=-1)

    # -- description ------------------------------------------------------

    def describe(self):
        return {**self.meta, "layers": [layer.config() for layer in self.layers]}

    @classmethod
    def from_description(cls, desc, dtype=np.float32):
        desc = dict(desc)
        layers = [layer_from_config(c) for c in desc.pop("layers")]
        return cls(layers, meta=desc, dtype=dtype)

    def __repr__(self):
        kinds = ",".join(layer.kind for layer in self.layers)
        return f"Network(M={self.meta.get('M')}, N={self.meta.get('N')}, params={self.param_count}, [{kinds}])"
