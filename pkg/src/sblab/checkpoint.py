"""Binary ``.sbck`` checkpoints.

Layout (all integers and floats little-endian)::

    b"SBCK"                      magic
    u32 version = 1
    u32 n_layers
    n_layers x (u32 rows, u32 cols)   weight shapes, rows = fan-in
    u8  activation id
    u32 embed_dim
    per layer: rows*cols f32 weights (row-major), then cols f32 biases
    u32 N, then N x f64 gammas        schedule the net was trained against
    u8  direction (0 backward / data-directed, 1 forward / prior-directed)
    u8  flags (bit 0: queried at N - k, bit 1: pre-trained flow model)
    u8  objective (0 dsb, 1 ipmm, 2 iptm, 3 ipfm)
    u64 RNG seed of the producing run
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .nn import ACTIVATION_NAMES, ACTIVATIONS, Mlp
from .objectives import BridgeNet, ObjectiveKind
from .schedule import GammaSchedule

MAGIC = b"SBCK"
VERSION = 1
_OBJECTIVES = [ObjectiveKind.DSB, ObjectiveKind.IPMM, ObjectiveKind.IPTM, ObjectiveKind.IPFM]
FLAG_REVERSE_TIME = 1
FLAG_PRETRAINED = 2


@dataclass
class Checkpoint:
    net: Mlp
    schedule: GammaSchedule
    seed: int
    direction: str = "backward"
    kind: ObjectiveKind = ObjectiveKind.IPFM
    reverse_time: bool = False
    pretrained: bool = False

    def bridge(self) -> BridgeNet:
        return BridgeNet(self.net, self.kind, self.direction, self.schedule, self.reverse_time)


def to_bytes(ck: Checkpoint) -> bytes:
    net = ck.net
    parts = [MAGIC, struct.pack("<II", VERSION, len(net.weights))]
    for w in net.weights:
        parts.append(struct.pack("<II", *w.shape))
    parts.append(struct.pack("<BI", ACTIVATIONS[net.activation], net.embed_dim))
    for w, b in zip(net.weights, net.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    g = ck.schedule.gammas
    parts.append(struct.pack("<I", g.size))
    parts.append(g.astype("<f8").tobytes())
    flags = (FLAG_REVERSE_TIME if ck.reverse_time else 0) | (FLAG_PRETRAINED if ck.pretrained else 0)
    parts.append(struct.pack("<BBB", 0 if ck.direction == "backward" else 1, flags, _OBJECTIVES.index(ck.kind)))
    parts.append(struct.pack("<Q", int(ck.seed) & 0xFFFFFFFFFFFFFFFF))
    return b"".join(parts)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise InvalidArgument("truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype, count):
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).copy()


def from_bytes(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise InvalidArgument("not an SBCK checkpoint")
    version, n_layers = r.unpack("<II")
    if version != VERSION:
        raise InvalidArgument(f"unsupported checkpoint version {version}")
    shapes = [r.unpack("<II") for _ in range(n_layers)]
    act_id, embed_dim = r.unpack("<BI")
    if act_id not in ACTIVATION_NAMES:
        raise InvalidArgument(f"unknown activation id {act_id}")
    weights, biases = [], []
    for rows, cols in shapes:
        weights.append(r.array("<f4", rows * cols).reshape(rows, cols).astype(np.float32))
        biases.append(r.array("<f4", cols).astype(np.float32))
    (n,) = r.unpack("<I")
    gammas = r.array("<f8", n).astype(np.float64)
    direction, flags, obj = r.unpack("<BBB")
    (seed,) = r.unpack("<Q")
    if r.pos != len(buf):
        raise InvalidArgument("trailing bytes after checkpoint")
    dims = [shapes[0][0]] + [c for _, c in shapes]
    net = Mlp(dims, weights, biases, n, embed_dim, ACTIVATION_NAMES[act_id])
    return Checkpoint(
        net,
        GammaSchedule(gammas),
        seed,
        "backward" if direction == 0 else "forward",
        _OBJECTIVES[obj],
        bool(flags & FLAG_REVERSE_TIME),
        bool(flags & FLAG_PRETRAINED),
    )


def save_checkpoint(path, ck: Checkpoint):
    with open(path, "wb") as fh:
        fh.write(to_bytes(ck))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def save_bridge(path, bridge: BridgeNet, seed: int):
    save_checkpoint(path, Checkpoint(bridge.net, bridge.schedule, seed, bridge.direction,
                                     bridge.kind, bridge.reverse_time, False))
