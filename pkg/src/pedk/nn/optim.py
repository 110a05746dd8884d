import numpy as np

from pedk.errors import TrainingDiverged


class SGD:
    """SGD with classical momentum: ``v <- mu*v - lr*g``; ``w <- w + v``."""

    def __init__(self, network, learning_rate=0.01, momentum=0.9):
        self.network = network
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.velocity = [np.zeros_like(a) for _, _, a in network.parameters()]

    def step(self, grads):
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise TrainingDiverged("non-finite gradient encountered")
        for (i, name, w), v, g in zip(self.network.parameters(), self.velocity, grads):
            v *= self.momentum
            v -= self.learning_rate * g.astype(v.dtype, copy=False)
            w += v
        return self.network


def sgd_step(network, gradients, learning_rate, momentum=0.0, velocity=None):
    """One functional SGD update; returns the (mutated) network and new velocity."""
    opt = SGD(network, learning_rate, momentum)
    if velocity is not None:
        opt.velocity = [np.array(v, dtype=w.dtype) for v, (_, _, w) in zip(velocity, network.parameters())]
    opt.step(gradients)
    return network, opt.velocity
