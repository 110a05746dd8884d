from pedk.nn.functional import (
    activation,
    conv_backward,
    conv_forward,
    cross_entropy,
    dense_backward,
    dense_forward,
    dropout,
    maxpool_backward,
    maxpool_forward,
    relu,
    softmax,
)
from pedk.nn.gradcheck import GradCheckReport, gradient_check
from pedk.nn.layers import Conv, Dense, Dropout, Flatten, MaxPool, ReLU, Softmax
from pedk.nn.network import NEGATIVE, POSITIVE, Network
from pedk.nn.optim import SGD, sgd_step

__all__ = [
    "activation", "conv_backward", "conv_forward", "cross_entropy", "dense_backward",
    "dense_forward", "dropout", "maxpool_backward", "maxpool_forward", "relu", "softmax",
    "GradCheckReport", "gradient_check", "Conv", "Dense", "Dropout", "Flatten", "MaxPool",
    "ReLU", "Softmax", "NEGATIVE", "POSITIVE", "Network", "SGD", "sgd_step",
]
