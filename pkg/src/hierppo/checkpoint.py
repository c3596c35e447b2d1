"""Binary checkpoint format.

    magic  b"HIERPPO\\x00"  (8 bytes)
    u32    format version
    u32    number of networks
    per network:
        u16 name length, name (utf-8)
        u32 layer count
        per layer: u32 input width, u32 output width, u8 activation (0 tanh, 1 identity)
        u32 log_std length (0 = no log_std)
        float64 values, little endian: w0, b0, w1, b1, ..., log_std

All integers are little endian. Weight matrices are written row-major as
``(input_width, output_width)``.
"""
from __future__ import annotations

import os
import struct

import numpy as np

from hierppo.errors import CheckpointError
from hierppo.nn_core import IDENTITY, TANH, LayerSpec, NetworkParameters

MAGIC = b"HIERPPO\x00"
VERSION = 1
_ACT_CODES = {TANH: 0, IDENTITY: 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


def dumps(networks):
    """Serialize a ``{name: NetworkParameters}`` mapping (insertion order kept)."""
    out = [MAGIC, struct.pack("<II", VERSION, len(networks))]
    for name, params in networks.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<I", len(params.specs)))
        for spec in params.specs:
            out.append(struct.pack("<IIB", spec.input_width, spec.output_width,
                                   _ACT_CODES[spec.activation]))
        n_log_std = 0 if params.log_std is None else params.log_std.size
        out.append(struct.pack("<I", n_log_std))
        for a in params.arrays():
            out.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data):
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    networks = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (n_layers,) = r.unpack("<I")
        specs = []
        for _ in range(n_layers):
            i, o, act = r.unpack("<IIB")
            if act not in _ACT_NAMES:
                raise CheckpointError(f"unknown activation code {act}")
            try:
                specs.append(LayerSpec(i, o, _ACT_NAMES[act]))
            except ValueError as exc:
                raise CheckpointError(str(exc)) from None
        (n_log_std,) = r.unpack("<I")
        weights, biases = [], []
        for spec in specs:
            w = np.frombuffer(r.take(8 * spec.input_width * spec.output_width), dtype="<f8")
            weights.append(w.reshape(spec.input_width, spec.output_width).astype(np.float64))
            biases.append(np.frombuffer(r.take(8 * spec.output_width), dtype="<f8").astype(np.float64))
        log_std = None
        if n_log_std:
            log_std = np.frombuffer(r.take(8 * n_log_std), dtype="<f8").astype(np.float64)
        try:
            params = NetworkParameters(specs, weights, biases, log_std)
        except ValueError as exc:
            raise CheckpointError(f"network {name!r}: {exc}") from None
        if not params.is_finite():
            raise CheckpointError(f"network {name!r} holds non-finite values")
        networks[name] = params
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after the last network")
    return networks


def save(path, networks):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(dumps(networks))
    os.replace(tmp, path)


def load(path):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return loads(data)
