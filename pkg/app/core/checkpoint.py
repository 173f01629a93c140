"""
CGT1 parameter checkpoints.

Layout: the 4-byte magic ``b"CGT1"`` followed by one record per parameter,
in registry order, until end of file::

    uint32 name_length | name (utf-8) | uint32 rank | uint32 extents[rank] | float64 payload

All integers and floats are little-endian.
"""

import logging
from collections import OrderedDict
from typing import Dict

import numpy as np

from app.core.tensor import ParameterSet
from app.exceptions.custom_exceptions import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"CGT1"
_U32 = np.dtype("<u4")
_F64 = np.dtype("<f8")


def encode_checkpoint(arrays: Dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC]
    for name, values in arrays.items():
        raw_name = name.encode("utf-8")
        values = np.asarray(values, dtype=np.float64)
        chunks.append(np.array([len(raw_name)], dtype=_U32).tobytes())
        chunks.append(raw_name)
        chunks.append(np.array([values.ndim, *values.shape], dtype=_U32).tobytes())
        chunks.append(values.astype(_F64).tobytes(order="C"))
    return b"".join(chunks)


def decode_checkpoint(data: bytes) -> "OrderedDict[str, np.ndarray]":
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
    offset = 4

    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(data):
            raise CheckpointError(f"truncated checkpoint at byte {offset} (needed {n} more bytes)")
        chunk = data[offset : offset + n]
        offset += n
        return chunk

    while offset < len(data):
        name_len = int(np.frombuffer(take(4), dtype=_U32)[0])
        try:
            name = take(name_len).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"parameter name at byte {offset} is not utf-8") from e
        rank = int(np.frombuffer(take(4), dtype=_U32)[0])
        shape = tuple(int(e) for e in np.frombuffer(take(4 * rank), dtype=_U32))
        count = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(take(8 * count), dtype=_F64).reshape(shape).astype(np.float64)
        if name in arrays:
            raise CheckpointError(f"duplicate parameter '{name}' in checkpoint")
        arrays[name] = values
    return arrays


def save_checkpoint(params: ParameterSet, path: str) -> str:
    """Write every parameter (trainable and frozen) to ``path``"""
    arrays = OrderedDict((p.name, p.tensor.values) for p in params)
    with open(path, "wb") as f:
        f.write(encode_checkpoint(arrays))
    logger.info(f"[save_checkpoint] - Saved {len(arrays)} tensors to {path}")
    return path


def read_checkpoint(path: str) -> "OrderedDict[str, np.ndarray]":
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    return decode_checkpoint(data)


def load_checkpoint(params: ParameterSet, path: str) -> None:
    """Copy checkpoint values into ``params``; names and shapes must match exactly"""
    arrays = read_checkpoint(path)
    expected = params.names()
    missing = [n for n in expected if n not in arrays]
    unexpected = [n for n in arrays if n not in set(expected)]
    if missing or unexpected:
        raise CheckpointError(f"parameter names differ: missing {missing[:5]}, unexpected {unexpected[:5]}")
    for param in params:
        values = arrays[param.name]
        if values.shape != param.shape:
            raise CheckpointError(f"'{param.name}': checkpoint shape {values.shape} != model shape {param.shape}")
        param.tensor.values = values.copy()
    logger.info(f"[load_checkpoint] - Restored {len(arrays)} tensors from {path}")
