"""Reader and writer for CKT1 data containers and their JSON sidecars.

Layout (all little-endian)::

    b"CKT1" | ndim: u32 | dims: ndim x u64 | dtype code: u8 | payload

Payload is row-major. Dtype codes: 0 = complex64, 1 = complex128, 2 = uint8.
The sidecar has the same basename with extension ``.json`` and holds a flat
string -> (string | number) map.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from .validation import InvalidArgumentError

logger = logging.getLogger(__name__)

MAGIC = b"CKT1"

DTYPE_CODES: Dict[int, np.dtype] = {
    0: np.dtype("<c8"),
    1: np.dtype("<c16"),
    2: np.dtype("u1"),
}

Metadata = Dict[str, Union[str, int, float]]


def _dtype_code(array: np.ndarray) -> int:
    if array.dtype == np.complex64:
        return 0
    if array.dtype == np.complex128:
        return 1
    if array.dtype == np.uint8 or array.dtype == np.bool_:
        return 2
    raise InvalidArgumentError(f"unsupported container dtype {array.dtype}")


def sidecar_path(path: Union[str, Path]) -> Path:
    return Path(path).with_suffix(".json")


def _flatten_metadata(metadata: Dict[str, Any]) -> Metadata:
    flat: Metadata = {}
    for key, value in metadata.items():
        if isinstance(value, bool):
            flat[str(key)] = int(value)
        elif isinstance(value, (int, float, str)):
            flat[str(key)] = value
        elif isinstance(value, np.generic):
            flat[str(key)] = value.item()
        else:
            flat[str(key)] = json.dumps(value) if isinstance(value, (list, tuple, dict)) else str(value)
    return flat


def write_container(
    path: Union[str, Path], array: np.ndarray, metadata: Dict[str, Any] | None = None
) -> Path:
    """Write ``array`` to ``path`` and ``metadata`` to the sidecar."""
    path = Path(path)
    code = _dtype_code(array)
    data = np.ascontiguousarray(array, dtype=DTYPE_CODES[code])
    header = MAGIC + struct.pack("<I", data.ndim)
    header += struct.pack(f"<{data.ndim}Q", *data.shape)
    header += struct.pack("<B", code)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header)
        f.write(data.tobytes(order="C"))
    with open(sidecar_path(path), "w", encoding="utf-8") as f:
        json.dump(_flatten_metadata(metadata or {}), f, indent=2, sort_keys=True)
    logger.debug("Wrote %s %s to %s", data.dtype, data.shape, path)
    return path


def read_container(path: Union[str, Path]) -> Tuple[np.ndarray, Metadata]:
    """Read a container and its sidecar (an empty dict when the sidecar is absent)."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise InvalidArgumentError(f"{path} is not a CKT1 container")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    dims = struct.unpack_from(f"<{ndim}Q", raw, 8)
    offset = 8 + 8 * ndim
    (code,) = struct.unpack_from("<B", raw, offset)
    offset += 1
    if code not in DTYPE_CODES:
        raise InvalidArgumentError(f"{path}: unknown dtype code {code}")
    dtype = DTYPE_CODES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(raw) - offset != expected:
        raise InvalidArgumentError(
            f"{path}: payload has {len(raw) - offset} bytes, expected {expected}"
        )
    array = np.frombuffer(raw, dtype=dtype, offset=offset).reshape(dims).copy()
    if dtype.byteorder == "<":
        array = array.astype(dtype.newbyteorder("="), copy=False)
    metadata: Metadata = {}
    sidecar = sidecar_path(path)
    if sidecar.exists():
        loaded = json.loads(sidecar.read_text(encoding="utf-8"))
        metadata = {k: v for k, v in loaded.items() if isinstance(v, (str, int, float))}
    return array, metadata
