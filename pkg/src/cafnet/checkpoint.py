"""
Binary checkpoint format (little-endian)::

    b"CBFN"  u32 version
    u32 config_len  config_len bytes of UTF-8 "key=value" lines
    repeated array records:
        u32 name_len  name  u8 dtype_tag  u32 rank  rank * u32 dims  raw data
    u32 CRC-32 of every preceding byte

Records hold the network parameters, batch-norm running statistics, the Adam
moments (``adam.m.<name>`` / ``adam.v.<name>``) and the Adam step counter
(``adam.t``, rank 0).
"""
from __future__ import annotations

import io
import os
import struct
import zlib
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import CheckpointError
from .network import Network, NetworkConfig
from .optim import AdamState

MAGIC = b"CBFN"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
_TAGS = {v: k for k, v in _DTYPES.items()}


def _encode_config(net: Network) -> bytes:
    items = dict(net.config.to_dict())
    items["dtype"] = net.dtype.name
    return "".join(f"{k}={items[k]}\n" for k in sorted(items)).encode("utf-8")


def _record(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<")
    if dt not in _TAGS:
        raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
    raw_name = name.encode("utf-8")
    head = struct.pack(f"<I{len(raw_name)}sBI", len(raw_name), raw_name, _TAGS[dt], arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + dims + np.ascontiguousarray(arr, dtype=dt).tobytes()


def encode_checkpoint(net: Network, state: Optional[AdamState] = None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    cfg = _encode_config(net)
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    for name, p in net.named_parameters():
        buf.write(_record(f"param.{name}", p.data))
    for name, arr in net.buffers():
        buf.write(_record(f"buffer.{name}", arr))
    if state is not None:
        for name in sorted(state.m):
            buf.write(_record(f"adam.m.{name}", state.m[name]))
            buf.write(_record(f"adam.v.{name}", state.v[name]))
        buf.write(_record("adam.t", np.asarray(state.t, dtype=np.int64)))
    payload = buf.getvalue()
    return payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def save_checkpoint(path: Union[str, Path], net: Network, state: Optional[AdamState] = None) -> None:
    """Write atomically (temp file + rename) so an interrupted save keeps the old file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(net, state))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def decode_checkpoint(data: bytes) -> tuple[Network, Optional[AdamState]]:
    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    payload, crc = data[:-4], struct.unpack("<I", data[-4:])[0]
    r = _Reader(payload)
    r.take(4)
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CheckpointError("checksum mismatch: checkpoint is corrupted")
    cfg_text = r.take(r.u32()).decode("utf-8")
    items = dict(line.split("=", 1) for line in cfg_text.splitlines() if line)
    dtype = items.pop("dtype", "float32")
    try:
        config = NetworkConfig.from_dict(items)
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"bad network config block: {exc}") from exc

    arrays: dict[str, np.ndarray] = {}
    while r.pos < len(payload):
        name = r.take(r.u32()).decode("utf-8")
        tag = r.take(1)[0]
        if tag not in _DTYPES:
            raise CheckpointError(f"unknown dtype tag {tag} for {name!r}")
        dt = _DTYPES[tag]
        rank = r.u32()
        shape = tuple(r.u32() for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64))
        raw = r.take(count * dt.itemsize)
        arrays[name] = np.frombuffer(raw, dtype=dt).reshape(shape).copy()

    net = Network(config, seed=0, dtype=dtype)
    for name, p in net.named_parameters():
        key = f"param.{name}"
        if key not in arrays or arrays[key].shape != p.shape:
            raise CheckpointError(f"checkpoint does not match its config at {name!r}")
        p.data[...] = arrays.pop(key)
    for name, buf in net.buffers():
        key = f"buffer.{name}"
        if key not in arrays or arrays[key].shape != buf.shape:
            raise CheckpointError(f"checkpoint does not match its config at {name!r}")
        buf[...] = arrays.pop(key)

    state = None
    if "adam.t" in arrays:
        state = AdamState(t=int(arrays.pop("adam.t")))
        for key in sorted(k for k in arrays if k.startswith("adam.m.")):
            name = key[len("adam.m."):]
            if f"adam.v.{name}" not in arrays:
                raise CheckpointError(f"Adam second moment missing for {name!r}")
            state.m[name] = arrays.pop(key)
            state.v[name] = arrays.pop(f"adam.v.{name}")
    if arrays:
        raise CheckpointError(f"unexpected records in checkpoint: {sorted(arrays)[:3]}")
    return net, state


def load_checkpoint(path: Union[str, Path]) -> tuple[Network, Optional[AdamState]]:
    return decode_checkpoint(Path(path).read_bytes())
