"""Binary checkpoint format.

Layout (all little-endian)::

    b"PEDK"                       magic
    u16                           format version
    u32                           descriptor length in bytes
    <descriptor>                  UTF-8 JSON (sorted keys)
    f32 * param_count             parameters in layer order, weight before bias
"""

import json
import struct
from pathlib import Path

import numpy as np

from pedk.errors import PedkError
from pedk.nn.network import Network

MAGIC = b"PEDK"
VERSION = 1


class CheckpointError(PedkError):
    pass


def to_bytes(network):
    desc = json.dumps(network.describe(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(desc)), desc]
    for _, _, arr in network.parameters():
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(chunks)


def from_bytes(blob, dtype=np.float32):
    if blob[:4] != MAGIC:
        raise CheckpointError("not a PEDK checkpoint (bad magic)")
    if len(blob) < 10:
        raise CheckpointError("checkpoint is truncated")
    version, n = struct.unpack_from("<HI", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = 4 + struct.calcsize("<HI")
    desc = json.loads(blob[start:start + n].decode("utf-8"))
    net = Network.from_description(desc, dtype=dtype)
    offset = start + n
    weights = []
    for _, _, arr in net.parameters():
        count = arr.size
        if offset + 4 * count > len(blob):
            raise CheckpointError("checkpoint is truncated")
        chunk = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        weights.append(chunk.reshape(arr.shape))
        offset += 4 * count
    if offset != len(blob):
        raise CheckpointError(f"checkpoint has {len(blob) - offset} trailing bytes")
    net.set_weights(weights)
    return net


def save(network, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(network))
    return path


def load(path, dtype=np.float32):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return from_bytes(path.read_bytes(), dtype=dtype)
