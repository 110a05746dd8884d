"""Central finite-difference verification of backpropagation."""

from dataclasses import dataclass, field

import numpy as np

from pedk.nn import functional as F

DENOM_FLOOR = 1e-6


def relative_error(analytic, numeric):
    """``|a - n| / max(|a| + |n|, 1e-6)`` elementwise.

    The floor keeps gradients that are zero on both sides (dead ReLUs,
    all-zero networks) from dividing 0 by 0.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), DENOM_FLOOR)


def numeric_gradient(f, x, eps=1e-5, indices=None):
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size) if indices is None else indices:
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * eps)
    return grad


@dataclass
class GradCheckReport:
    tolerance: float
    per_parameter: list = field(default_factory=list)  # (layer_index, name, max_rel_error)

    @property
    def max_rel_error(self):
        return max((e for *_, e in self.per_parameter), default=0.0)

    @property
    def passed(self):
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tolerance)

    def __str__(self):
        lines = [f"gradient check: max rel err {self.max_rel_error:.3e} (tol {self.tolerance:g}) "
                 f"{'PASS' if self.passed else 'FAIL'}"]
        lines += [f"  layer {i:2d} {name:6s} {err:.3e}" for i, name, err in self.per_parameter]
        return "\n".join(lines)


def gradient_check(network, x, labels, eps=1e-5, tolerance=1e-4, max_entries=None, seed=0):
    """Compare backprop gradients of the eval-mode cross-entropy loss with central differences.

    The network must be in 64-bit mode.  ``max_entries`` limits how many
    coordinates of each parameter tensor are perturbed (chosen at random with
    ``seed``); ``None`` checks every coordinate.
    """
    if network.dtype != np.float64:
        raise ValueError("gradient checks require a float64 network")
    x = np.asarray(x, dtype=np.float64)

    def loss():
        logits, _ = network.forward_train(x, train=False)
        value, _ = F.cross_entropy(F.softmax(logits), labels)
        return value

    logits, caches = network.forward_train(x, train=False)
    _, dlogits = F.cross_entropy(F.softmax(logits), labels)
    analytic = network.backward(dlogits, caches)

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)
    for (i, name, param), g in zip(network.parameters(), analytic):
        if max_entries is None or param.size <= max_entries:
            idx = None
        else:
            idx = rng.choice(param.size, size=max_entries, replace=False)
        num = numeric_gradient(loss, param, eps, idx)
        sel = slice(None) if idx is None else idx
        err = relative_error(g.reshape(-1)[sel], num.reshape(-1)[sel])
        report.per_parameter.append((i, name, float(err.max()) if err.size else 0.0))
    return report


def check_layer_input_gradient(forward, x, dout, backward, eps=1e-5):
    """Finite-difference check of ``dL/dx`` for ``L = sum(forward(x) * dout)``.

    ``forward(x)`` returns ``(out, cache)`` and ``backward(dout, cache)`` the
    input gradient.  Returns the max relative error.
    """
    x = np.array(x, dtype=np.float64)
    out, cache = forward(x)
    analytic = backward(dout, cache)
    num = numeric_gradient(lambda: float((forward(x)[0] * dout).sum()), x, eps)
    return float(relative_error(analytic, num).max())
