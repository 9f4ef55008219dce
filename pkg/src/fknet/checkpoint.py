"""Versioned binary persistence of named parameters (FKCK files).

Layout, all integers little-endian u32:

    "FKCK" | version | tag_len tag_utf8 | epoch | entry_count |
    per entry: name_len name_utf8 | rank | extents... | float32-LE payload

Fixed endianness keeps files portable; momentum buffers are not stored, so
resuming restarts velocity at zero.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointMismatchError, ConfigError, FormatError
from .network import Network, architecture_tag, parse_architecture_tag
from .tensor import DTYPE

MAGIC = b"FKCK"
VERSION = 1
_U32 = struct.Struct("<I")


@dataclass
class Checkpoint:
    architecture_tag: str
    epoch: int
    entries: dict  # name -> float32 ndarray, insertion-ordered


def _pack_str(out, s):
    raw = s.encode("utf-8")
    out.append(_U32.pack(len(raw)))
    out.append(raw)


def save(net: Network, path, epoch: int):
    """Serialize every parameter value of the network to an FKCK file."""
    out = [MAGIC, _U32.pack(VERSION)]
    _pack_str(out, architecture_tag(net.spec))
    out.append(_U32.pack(int(epoch)))
    params = net.parameters()
    out.append(_U32.pack(len(params)))
    for p in params:
        _pack_str(out, p.name)
        value = np.ascontiguousarray(p.value, dtype=DTYPE)
        out.append(_U32.pack(value.ndim))
        for extent in value.shape:
            out.append(_U32.pack(extent))
        out.append(value.astype("<f4", copy=False).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.path = path
        self.off = 0

    def take(self, n, what):
        if self.off + n > len(self.data):
            raise FormatError(
                f"{self.path}: truncated reading {what} at offset {self.off}"
            )
        chunk = self.data[self.off : self.off + n]
        self.off += n
        return chunk

    def u32(self, what):
        return _U32.unpack(self.take(4, what))[0]

    def string(self, what):
        n = self.u32(what + " length")
        return self.take(n, what).decode("utf-8")


def load(path) -> Checkpoint:
    """Parse an FKCK file; the exact inverse of save."""
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data, path)
    if r.take(4, "magic") != MAGIC:
        raise FormatError(f"{path}: bad magic at offset 0")
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    tag = r.string("architecture tag")
    epoch = r.u32("epoch")
    count = r.u32("entry count")
    entries = {}
    for _ in range(count):
        name = r.string("entry name")
        if name in entries:
            raise FormatError(f"{path}: duplicate entry '{name}'")
        rank = r.u32(f"rank of '{name}'")
        if rank < 1 or rank > 8:
            raise FormatError(f"{path}: implausible rank {rank} for '{name}'")
        shape = tuple(r.u32(f"extent of '{name}'") for _ in range(rank))
        if any(e < 1 for e in shape):
            raise FormatError(f"{path}: bad extent in {shape} for '{name}'")
        n = int(np.prod(shape))
        payload = r.take(4 * n, f"payload of '{name}'")
        entries[name] = (
            np.frombuffer(payload, dtype="<f4").astype(DTYPE, copy=False).reshape(shape).copy()
        )
    if r.off != len(data):
        raise FormatError(f"{path}: {len(data) - r.off} trailing bytes at offset {r.off}")
    return Checkpoint(tag, epoch, entries)


def restore(net: Network, ckpt: Checkpoint):
    """Copy every checkpoint entry into the matching network parameter.

    Requires an identical architecture tag; used to resume or evaluate a
    previously trained network."""
    tag = architecture_tag(net.spec)
    if ckpt.architecture_tag != tag:
        raise CheckpointMismatchError(
            f"architecture tag mismatch: checkpoint '{ckpt.architecture_tag}' vs net '{tag}'"
        )
    for name, p in net.params.items():
        if name not in ckpt.entries:
            raise CheckpointMismatchError(f"checkpoint missing entry '{name}'")
        value = ckpt.entries[name]
        if value.shape != p.value.shape:
            raise CheckpointMismatchError(
                f"entry '{name}' shape {value.shape} != parameter {p.value.shape}"
            )
        p.value = value.copy()
        p.grad = np.zeros_like(p.value)
        p.momentum = np.zeros_like(p.value)


def network_from_checkpoint(ckpt: Checkpoint, init="he") -> Network:
    """Rebuild the network described by the checkpoint's architecture tag and
    restore all parameter values."""
    spec = parse_architecture_tag(ckpt.architecture_tag)
    net = Network(spec, np.random.default_rng(0), init=init)
    restore(net, ckpt)
    return net


def load_features_into(net: Network, path, rng, reinit="all"):
    """Load the convolution stack of a saved network and freeze it.

    Conv weights and biases are copied bit-for-bit from the checkpoint and
    marked frozen; fc parameters are freshly initialized for the target
    network's class count.  ``reinit="output"`` instead keeps checkpoint fc
    values where shapes match and reinitializes only the final layer.
    """
    return apply_features(net, load(path), rng, reinit=reinit, source=str(path))


def apply_features(net: Network, ckpt: Checkpoint, rng, reinit="all", source="checkpoint"):
    """load_features_into for an already-parsed checkpoint."""
    path = source
    conv_names = [n for n in net.params if n.startswith("conv")]
    for name in conv_names:
        if name not in ckpt.entries:
            raise CheckpointMismatchError(f"{path}: checkpoint missing conv entry '{name}'")
        value = ckpt.entries[name]
        p = net.params[name]
        if value.shape != p.value.shape:
            raise CheckpointMismatchError(
                f"{path}: entry '{name}' shape {value.shape} does not match "
                f"network parameter {p.value.shape}"
            )
    extra = [
        n for n in ckpt.entries if n.startswith("conv") and n not in net.params
    ]
    if extra:
        raise CheckpointMismatchError(
            f"{path}: checkpoint conv entry '{extra[0]}' has no matching network layer"
        )
    for name in conv_names:
        p = net.params[name]
        p.value = ckpt.entries[name].copy()
        p.grad = np.zeros_like(p.value)
        p.momentum = np.zeros_like(p.value)
        p.frozen = True
    if reinit == "all":
        net.reinit_head(rng)
    elif reinit == "output":
        for name, p in net.params.items():
            if name.startswith("fc") and name in ckpt.entries:
                if ckpt.entries[name].shape == p.value.shape:
                    p.value = ckpt.entries[name].copy()
        net.reinit_head(rng, only_output=True)
    else:
        raise ConfigError(f"unknown head reinit mode '{reinit}'")
    return ckpt.epoch
