"""Stateless forward/backward kernels.

Every kernel accepts either a single sample (``C, H, W`` or ``d``) or a batch
with a leading sample axis.  Batched arrays are what the layer classes use.
"""

import numpy as np

from pedk.errors import ShapeError

CE_EPS = 1e-12


def _batched(x, ndim):
    x = np.asarray(x)
    if x.ndim == ndim:
        return x[None], True
    if x.ndim == ndim + 1:
        return x, False
    raise ShapeError(f"expected {ndim}-d sample or {ndim + 1}-d batch, got shape {x.shape}")


def conv_output_side(size, k, stride=1, pad=0):
    return (size + 2 * pad - k) // stride + 1


def _im2col(x, k, stride, ho, wo):
    # x: (N, C, H, W) already padded -> (N, C*k*k, H'*W'), filled with k*k strided slices
    n, c = x.shape[:2]
    cols = np.empty((n, c, k, k, ho, wo), dtype=x.dtype)
    hspan = (ho - 1) * stride + 1
    wspan = (wo - 1) * stride + 1
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = x[:, :, i:i + hspan:stride, j:j + wspan:stride]
    return cols.reshape(n, c * k * k, ho * wo)


def conv_forward(x, weights, bias, stride=1, pad=0):
    """Cross-correlation of ``x`` with ``weights`` (no kernel flip).

    Parameters
    ----------
    x : array (C, H, W) or (N, C, H, W)
    weights : array (F, C, k, k)
    bias : array (F,)
    stride : int
    pad : int
        Zero padding on every side. 0 gives a valid convolution.

    Returns
    -------
    out : array (F, H', W') or (N, F, H', W')
    cache : tuple consumed by :func:`conv_backward`
    """
    xb, single = _batched(x, 3)
    weights = np.asarray(weights)
    if weights.ndim != 4 or weights.shape[2] != weights.shape[3]:
        raise ShapeError(f"weights must be (F, C, k, k), got {weights.shape}")
    f, c, k, _ = weights.shape
    if xb.shape[1] != c:
        raise ShapeError(
            f"input channels {xb.shape[1]} (input shape {tuple(np.shape(x))}) do not match "
            f"weight channels {c} (weight shape {weights.shape})"
        )
    if np.shape(bias) != (f,):
        raise ShapeError(f"bias shape {np.shape(bias)} does not match filter count {f}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if pad:
        xb = np.pad(xb, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    n, _, h, w = xb.shape
    if h < k or w < k:
        raise ShapeError(f"input spatial size {h}x{w} (after padding) smaller than kernel {k}")
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    cols = _im2col(xb, k, stride, ho, wo)
    out = np.matmul(weights.reshape(f, -1), cols) + bias[:, None]
    out = out.reshape(n, f, ho, wo)
    cache = (cols, weights, xb.shape, stride, pad, single)
    return (out[0] if single else out), cache


def conv_backward(dout, cache):
    """Gradients ``(dx, dweights, dbias)`` of a convolution."""
    cols, weights, padded_shape, stride, pad, single = cache
    dout = dout[None] if single else dout
    n, f, ho, wo = dout.shape
    _, c, k, _ = weights.shape
    dflat = dout.reshape(n, f, ho * wo)
    dw = np.tensordot(dflat, cols, axes=([0, 2], [0, 2])).reshape(weights.shape)
    db = dflat.sum(axis=(0, 2))
    dcols = np.matmul(weights.reshape(f, -1).T, dflat).reshape(n, c, k, k, ho, wo)
    dxp = np.zeros(padded_shape, dtype=dout.dtype)
    hspan = (ho - 1) * stride + 1
    wspan = (wo - 1) * stride + 1
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + hspan:stride, j:j + wspan:stride] += dcols[:, :, i, j]
    if pad:
        dxp = dxp[:, :, pad:-pad, pad:-pad]
    return (dxp[0] if single else dxp), dw, db


_POOL_ORDER = ((0, 0), (0, 1), (1, 0), (1, 1))


def maxpool_forward(x):
    """Non-overlapping 2x2 max pooling; odd trailing rows/columns are dropped."""
    xb, single = _batched(x, 3)
    h, w = xb.shape[2:]
    if h < 2 or w < 2:
        raise ShapeError(f"maxpool needs H, W >= 2, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    views = [xb[:, :, a:2 * h2:2, b:2 * w2:2] for a, b in _POOL_ORDER]
    out = np.maximum(np.maximum(views[0], views[1]), np.maximum(views[2], views[3]))
    cache = (xb, out, single)
    return (out[0] if single else out), cache


def maxpool_backward(dout, cache):
    """Route each gradient to the window's first maximum in row-major order."""
    xb, out, single = cache
    dout = dout[None] if single else dout
    h2, w2 = out.shape[2:]
    dx = np.zeros(xb.shape, dtype=dout.dtype)
    taken = np.zeros(out.shape, dtype=bool)
    for a, b in _POOL_ORDER:
        hit = (xb[:, :, a:2 * h2:2, b:2 * w2:2] == out) & ~taken
        dx[:, :, a:2 * h2:2, b:2 * w2:2] = dout * hit
        taken |= hit
    return dx[0] if single else dx


def dense_forward(x, weights, bias):
    """Affine map ``weights @ x + bias`` for ``x`` of shape (d,) or (N, d)."""
    xb, single = _batched(x, 1)
    weights = np.asarray(weights)
    if weights.ndim != 2 or weights.shape[1] != xb.shape[1]:
        raise ShapeError(f"dense weights {weights.shape} incompatible with input dimension {xb.shape[1]}")
    if np.shape(bias) != (weights.shape[0],):
        raise ShapeError(f"bias shape {np.shape(bias)} does not match output dimension {weights.shape[0]}")
    out = xb @ weights.T + bias
    return (out[0] if single else out), (xb, weights, single)


def dense_backward(dout, cache):
    xb, weights, single = cache
    dout = dout[None] if single else dout
    dx = dout @ weights
    return (dx[0] if single else dx), dout.T @ xb, dout.sum(axis=0)


def relu(x):
    return np.maximum(x, 0)


def relu_backward(dout, x):
    return dout * (x > 0)


def softmax(logits):
    """Softmax over the last axis with max subtraction."""
    z = np.asarray(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def activation(kind, x):
    if kind == "relu":
        return relu(x)
    if kind == "softmax":
        return softmax(x)
    raise ValueError(f"unknown activation {kind!r}")


def dropout(x, p, mode, rng=None):
    """Inverted dropout. Returns ``(out, mask)``; ``mask`` is None in eval mode."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"dropout probability must be in [0, 1], got {p}")
    if mode == "eval" or p == 0.0:
        return x, None
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if p == 1.0:
        raise ValueError("dropout p=1 in train mode zeroes every activation")
    keep = rng.random(np.shape(x)) >= p
    mask = keep.astype(np.asarray(x).dtype) / (1.0 - p)
    return x * mask, mask


def cross_entropy(prediction, label):
    """Loss ``-log p[label]`` and gradient with respect to the logits.

    ``prediction`` holds softmax outputs, (2,) or (N, 2).  Probabilities are
    clamped at 1e-12 before the log so a zero entry gives a finite loss.
    For batches the loss is summed over samples.
    """
    p, single = _batched(prediction, 1)
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    rows = np.arange(p.shape[0])
    picked = np.maximum(p[rows, labels], CE_EPS)
    loss = float(-np.log(picked).sum())
    grad = p.copy()
    grad[rows, labels] -= 1.0
    return loss, (grad[0] if single else grad)
