"""Binary checkpoint files for named parameter sets and optimizer state.

Layout (all integers little-endian):

    magic "PEPS" | version u32 | variant (u16 len + utf8) | flags u8
    [dpu config: n u32, rates u32*n, groups u32, channels u32]   (flag bit 0)
    param entry count u32, entries
    [state entry count u32, entries]                              (flag bit 1)
    crc32 u32 over all preceding bytes

Entry: name (u16 len + utf8) | dtype code u8 | rank u8 | dims u32*rank |
payload. Dtype codes: 0 = float32, 1 = float64, 2 = uint32. Loading a file
whose CRC does not match raises, naming the offset of the stored CRC.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .nets import DpuConfig, NetworkParams

MAGIC = b"PEPS"
VERSION = 1

_FLAG_DPU = 1
_FLAG_STATE = 2

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<u4")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.uint32): 2}


class CheckpointError(RuntimeError):
    pass


def _pack_entry(name, arr):
    arr = np.asarray(arr)  # keeps rank-0 scalars rank 0
    code = _CODES.get(arr.dtype)
    if code is None:
        raise CheckpointError(f"unsupported dtype {arr.dtype} for entry {name!r}")
    raw = name.encode("utf-8")
    out = [struct.pack("<H", len(raw)), raw, struct.pack("<BB", code, arr.ndim)]
    out.append(struct.pack("<%dI" % arr.ndim, *arr.shape))
    out.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint: wanted {n} bytes at offset {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return self.take(1)[0]

    def u16(self):
        return struct.unpack("<H", self.take(2))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def string(self):
        return self.take(self.u16()).decode("utf-8")

    def entry(self):
        name = self.string()
        code = self.u8()
        rank = self.u8()
        dims = tuple(self.u32() for _ in range(rank))
        dtype = _DTYPES.get(code)
        if dtype is None:
            raise CheckpointError(f"unknown dtype code {code} for entry {name!r}")
        count = 1
        for d in dims:
            count *= d
        arr = np.frombuffer(self.take(count * dtype.itemsize), dtype=dtype)
        return name, arr.reshape(dims).copy()


def save_checkpoint(path, net, state=None):
    """Serialize a NetworkParams (and optional named state arrays) to disk.

    Byte-for-byte deterministic for identical inputs, so save-load-save
    produces identical files.
    """
    flags = 0
    if net.dpu is not None:
        flags |= _FLAG_DPU
    if state is not None:
        flags |= _FLAG_STATE
    raw_variant = net.variant.encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION),
             struct.pack("<H", len(raw_variant)), raw_variant,
             struct.pack("<B", flags)]
    if net.dpu is not None:
        cfg = net.dpu
        parts.append(struct.pack("<I", cfg.n))
        parts.append(struct.pack("<%dI" % cfg.n, *cfg.rates))
        parts.append(struct.pack("<II", cfg.groups, cfg.channels))
    names = net.names()
    parts.append(struct.pack("<I", len(names)))
    for name in names:
        parts.append(_pack_entry(name, net[name].data))
    if state is not None:
        parts.append(struct.pack("<I", len(state)))
        for name in state:
            parts.append(_pack_entry(name, np.asarray(state[name])))
    blob = b"".join(parts)
    with open(path, "wb") as f:
        f.write(blob)
        f.write(struct.pack("<I", zlib.crc32(blob)))


def load_checkpoint(path, expect_variant=None):
    """Load (net, state) from a checkpoint; state is None when absent.

    Verifies the trailing CRC before parsing and the variant tag against
    expect_variant when given.
    """
    data = open(path, "rb").read()
    if len(data) < 4 + len(MAGIC):
        raise CheckpointError("file too short to hold a checkpoint")
    body, stored = data[:-4], struct.unpack("<I", data[-4:])[0]
    actual = zlib.crc32(body)
    if actual != stored:
        raise CheckpointError(
            f"CRC mismatch at offset {len(body)}: stored {stored:#010x}, "
            f"computed {actual:#010x}")
    r = _Reader(body)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}")
    variant = r.string()
    if expect_variant is not None and variant != expect_variant:
        raise CheckpointError(
            f"variant mismatch: checkpoint holds {variant!r}, wanted {expect_variant!r}")
    flags = r.u8()
    dpu = None
    if flags & _FLAG_DPU:
        n = r.u32()
        rates = tuple(r.u32() for _ in range(n))
        groups = r.u32()
        channels = r.u32()
        dpu = DpuConfig(n=n, rates=rates, groups=groups, channels=channels)
    entries = {}
    for _ in range(r.u32()):
        name, arr = r.entry()
        if name in entries:
            raise CheckpointError(f"duplicate entry name {name!r}")
        entries[name] = arr
    state = None
    if flags & _FLAG_STATE:
        state = {}
        for _ in range(r.u32()):
            name, arr = r.entry()
            if name in state:
                raise CheckpointError(f"duplicate state name {name!r}")
            state[name] = arr
    if r.pos != len(body):
        raise CheckpointError(f"{len(body) - r.pos} trailing bytes at offset {r.pos}")
    net = NetworkParams.from_entries(variant, entries, dpu=dpu)
    return net, state
