"""Dense tensor kernels and the raw-tensor (RTF) file format.

Tensors are plain ``numpy.ndarray`` objects, channels-last, ``float32`` by
default and ``float64`` in gradient-check mode.

RTF layout (all integers unsigned 32-bit little-endian)::

    b"LFBT" | version=1 | dtype code (0=f32, 1=f64) | rank | dims[rank] | payload

The payload is the row-major little-endian float buffer.
"""

import os
import struct

import numpy as np

from .errors import BadAxis, BadMagic, ShapeMismatch, TruncatedPayload, UnsupportedVersion

MAGIC = b"LFBT"
VERSION = 1
EXTENSION = ".rtf-tensor"

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_OF = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}

DEFAULT_DTYPE = np.float32


def as_tensor(x, dtype=None):
    """Return ``x`` as a float ndarray (float32 unless ``dtype`` says otherwise)."""
    arr = np.asarray(x)
    if dtype is None:
        dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
    return np.ascontiguousarray(arr, dtype=dtype)


def write_rtf(path, tensor):
    arr = np.asarray(tensor)
    if arr.dtype not in _CODE_OF:
        raise TypeError(f"RTF stores float32/float64 only, got {arr.dtype}")
    code = _CODE_OF[arr.dtype]
    header = MAGIC + struct.pack("<III", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=_DTYPE_CODES[code]).tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_rtf(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    return decode_rtf(blob, source=os.fspath(path))


def decode_rtf(blob, source="<bytes>"):
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagic(f"{source}: magic is {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 16:
        raise TruncatedPayload(f"{source}: header truncated before rank field")
    version, code, rank = struct.unpack_from("<III", blob, 4)
    if version != VERSION:
        raise UnsupportedVersion(f"{source}: version field is {version}, only {VERSION} is supported")
    if code not in _DTYPE_CODES:
        raise UnsupportedVersion(f"{source}: dtype code field is {code}, expected 0 or 1")
    offset = 16 + 4 * rank
    if len(blob) < offset:
        raise TruncatedPayload(f"{source}: dims field truncated ({rank} dims declared)")
    dims = struct.unpack_from(f"<{rank}I", blob, 16)
    dtype = _DTYPE_CODES[code]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    need = count * dtype.itemsize
    have = len(blob) - offset
    if have < need:
        raise TruncatedPayload(f"{source}: payload has {have} bytes, dims {list(dims)} need {need}")
    if have > need:
        raise TruncatedPayload(f"{source}: payload has {have - need} trailing bytes beyond dims {list(dims)}")
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
    return data.astype(dtype.newbyteorder("="), copy=True).reshape(dims)


def matmul(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul needs (m,k)x(k,n), got {a.shape} x {b.shape}")
    return a @ b


def elementwise(op, *operands):
    """Apply one of ``add, mul, scale, relu, exp, log`` per element.

    ``scale`` takes ``(tensor, scalar)``; the binary ops require equal shapes.
    """
    if op in ("add", "mul"):
        if len(operands) != 2:
            raise TypeError(f"{op} takes two operands")
        x, y = (np.asarray(v) for v in operands)
        if x.shape != y.shape:
            raise ShapeMismatch(f"{op}: shapes {x.shape} and {y.shape} differ")
        return x + y if op == "add" else x * y
    if op == "scale":
        x, c = operands
        if np.ndim(c) != 0:
            raise ShapeMismatch("scale broadcasts a scalar only")
        x = np.asarray(x)
        return x * x.dtype.type(c) if x.dtype.kind == "f" else x * c
    if len(operands) != 1:
        raise TypeError(f"{op} takes one operand")
    x = np.asarray(operands[0])
    if op == "relu":
        return np.maximum(x, 0)
    if op == "exp":
        return np.exp(x)
    if op == "log":
        return np.log(x)
    raise ValueError(f"unknown elementwise op {op!r}")


def _normalize_axes(ndim, axes):
    if axes is None:
        return tuple(range(ndim))
    if np.ndim(axes) == 0:
        axes = (axes,)
    out = []
    for ax in axes:
        ax = int(ax)
        if not -ndim <= ax < ndim:
            raise BadAxis(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    if len(set(out)) != len(out):
        raise BadAxis(f"repeated axis in {tuple(axes)}")
    return tuple(out)


def reduce(op, x, axes=None):
    x = np.asarray(x)
    axes = _normalize_axes(x.ndim, axes)
    if op == "sum":
        return x.sum(axis=axes)
    if op == "mean":
        return x.mean(axis=axes)
    if op == "max":
        return x.max(axis=axes)
    raise ValueError(f"unknown reduction {op!r}")
