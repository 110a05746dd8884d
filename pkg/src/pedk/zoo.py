"""Network builders for the part (component) networks and the single whole-image network."""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from pedk.errors import ArchitectureError
from pedk.nn.layers import Conv, Dense, Dropout, Flatten, MaxPool, ReLU, Softmax
from pedk.nn.network import Network

KERNEL = 3
PAD = 1
DENSE_WIDTH = 128
DROPOUT_P = 0.5
# pixels arrive in [0, 1]; centring them speeds up SGD considerably
INPUT_OFFSET = 0.5


class PartKind(str, Enum):
    # order matters: it is the decision-vector order used by the aggregation rules
    BARREL = "barrel"
    MAGAZINE = "magazine"
    RECEIVER = "receiver"
    STOCK = "stock"


PARTS = tuple(PartKind)
SYNTH_NAMES = {PartKind.BARREL: "P1", PartKind.MAGAZINE: "P2", PartKind.RECEIVER: "P3", PartKind.STOCK: "P4"}


@dataclass(frozen=True)
class ArchSpec:
    M: int
    N: int
    role: str = "component"

    def __post_init__(self):
        if self.M < 1 or self.N < 1:
            raise ArchitectureError(f"M and N must be positive, got M={self.M}, N={self.N}")
        if self.role not in ("component", "single"):
            raise ArchitectureError(f"role must be 'component' or 'single', got {self.role!r}")

    @property
    def label(self):
        return f"{self.M}x{self.N}"

    @classmethod
    def parse(cls, text, role="component"):
        m, n = text.lower().split("x")
        return cls(int(m), int(n), role)


GRID = ((3, 3), (3, 4), (4, 3), (4, 4), (5, 5))


def architecture_grid(role="component"):
    """The five (M, N) pairs explored during model selection, in table order."""
    return [ArchSpec(m, n, role) for m, n in GRID]


def filter_schedule(M):
    return [32 if i < 2 else 64 for i in range(M)]


def _build(arch, input_side, channels, seed, dtype):
    layers = []
    shape = (channels, input_side, input_side)
    for block, filters in enumerate(filter_schedule(arch.M), start=1):
        conv = Conv(shape[0], filters, KERNEL, 1, PAD)
        after_conv = conv.output_shape(shape)
        if min(after_conv[1:]) < 1:
            raise ArchitectureError(
                f"conv block {block} of {arch.label}: spatial size {shape[1]}x{shape[2]} collapses below 1"
            )
        pooled = MaxPool().output_shape(after_conv)
        if min(pooled[1:]) < 1:
            raise ArchitectureError(
                f"conv block {block} of {arch.label} on {input_side}px input: "
                f"{after_conv[1]}x{after_conv[2]} cannot be 2x2 pooled (spatial size collapses below 1)"
            )
        layers += [conv, ReLU(), MaxPool()]
        shape = pooled
    layers.append(Flatten())
    width = int(np.prod(shape))
    for _ in range(arch.N - 1):
        layers += [Dense(width, DENSE_WIDTH), ReLU()]
        width = DENSE_WIDTH
    layers += [Dropout(DROPOUT_P), Dense(width, 2), Softmax()]
    meta = {
        "M": arch.M,
        "N": arch.N,
        "role": arch.role,
        "input_side": input_side,
        "channels": channels,
        "input_offset": INPUT_OFFSET,
    }
    net = Network(layers, meta=meta, dtype=dtype)
    net.init_weights(np.random.default_rng(seed))
    return net


def build_component_network(arch, input_side, seed=0, channels=3, dtype=np.float32):
    if arch.role != "component":
        raise ArchitectureError(f"expected a component ArchSpec, got role {arch.role!r}")
    return _build(arch, input_side, channels, seed, dtype)


def build_single_network(arch, input_side, seed=0, channels=3, dtype=np.float32):
    if arch.role != "single":
        raise ArchitectureError(f"expected a single ArchSpec, got role {arch.role!r}")
    return _build(arch, input_side, channels, seed, dtype)


def build_network(arch, input_side, seed=0, channels=3, dtype=np.float32):
    return _build(arch, input_side, channels, seed, dtype)
