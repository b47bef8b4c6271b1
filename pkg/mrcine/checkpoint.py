"""DLE1 checkpoints for unrolled networks.

Layout (little-endian)::

    b"DLE1" | version: u32 | K, layers, channels, M: u32 | conv kind: u8 | precision: u8
    | tensor count: u32 | per tensor: name length u32, UTF-8 name, ndim u32,
      dims ndim x u64, raw values (float32 or float64 per precision)
"""

import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np
import torch

from config import NetworkConfig
from .unrolled_net import UnrolledNet
from .validation import InvalidArgumentError

logger = logging.getLogger(__name__)

MAGIC = b"DLE1"
VERSION = 1
CONV_KINDS = {"conv3d": 0, "conv2p1d": 1}
PRECISIONS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def save_checkpoint(path: Union[str, Path], net: UnrolledNet) -> Path:
    path = Path(path)
    cfg = net.cfg
    state = net.state_dict()
    double = any(t.dtype == torch.float64 for t in state.values())
    dtype = PRECISIONS[1 if double else 0]

    chunks = [
        MAGIC,
        struct.pack("<5I", VERSION, cfg.iterations, cfg.layers, cfg.channels, cfg.nsets),
        struct.pack("<2B", CONV_KINDS[cfg.conv_kind], 1 if double else 0),
        struct.pack("<I", len(state)),
    ]
    for name, tensor in state.items():
        encoded = name.encode("utf-8")
        values = tensor.detach().cpu().numpy().astype(dtype)
        chunks.append(struct.pack("<I", len(encoded)) + encoded)
        chunks.append(struct.pack("<I", values.ndim) + struct.pack(f"<{values.ndim}Q", *values.shape))
        chunks.append(values.tobytes(order="C"))

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))
    logger.info("Saved checkpoint with %d tensors to %s", len(state), path)
    return path


class _Reader:
    def __init__(self, raw: bytes, path: Path):
        self.raw, self.path, self.offset = raw, path, 0

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.raw):
            raise InvalidArgumentError(f"{self.path}: truncated checkpoint")
        values = struct.unpack_from(fmt, self.raw, self.offset)
        self.offset += size
        return values

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.raw):
            raise InvalidArgumentError(f"{self.path}: truncated checkpoint")
        chunk = self.raw[self.offset : self.offset + size]
        self.offset += size
        return chunk


def load_checkpoint(path: Union[str, Path]) -> UnrolledNet:
    """Rebuild the network recorded in a DLE1 checkpoint."""
    path = Path(path)
    reader = _Reader(path.read_bytes(), path)
    if reader.take(4) != MAGIC:
        raise InvalidArgumentError(f"{path} is not a DLE1 checkpoint")
    version, iterations, layers, channels, nsets = reader.unpack("<5I")
    if version != VERSION:
        raise InvalidArgumentError(f"{path}: unsupported checkpoint version {version}")
    kind_code, precision = reader.unpack("<2B")
    kinds = {v: k for k, v in CONV_KINDS.items()}
    if kind_code not in kinds or precision not in PRECISIONS:
        raise InvalidArgumentError(f"{path}: bad conv kind {kind_code} or precision {precision}")
    dtype = PRECISIONS[precision]

    (count,) = reader.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<I")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<I")
        dims = reader.unpack(f"<{ndim}Q") if ndim else ()
        size = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        values = np.frombuffer(reader.take(size), dtype=dtype).reshape(dims)
        tensors[name] = torch.from_numpy(values.astype(dtype.newbyteorder("=")))

    kernel = 3
    for name, tensor in tensors.items():
        if name.endswith("conv.weight") or name.endswith("spatial.weight"):
            kernel = int(tensor.shape[2])
            break
    cfg = NetworkConfig(
        iterations=iterations,
        layers=layers,
        channels=channels,
        nsets=nsets,
        conv_kind=kinds[kind_code],
        kernel=kernel,
    )
    net = UnrolledNet(cfg)
    net.to(torch.float64 if precision == 1 else torch.float32)
    net.load_state_dict(tensors)
    logger.info("Loaded %s checkpoint: K=%d, M=%d", cfg.conv_kind, iterations, nsets)
    return net
