"""Dense array primitives: DFT over selected axes, inner products, pointwise maps
and the binary tensor file format.

Tensors are plain :class:`numpy.ndarray` objects restricted to ``float64`` and
``complex128``; row-major layout with the last axis fastest.
"""

import json
import math
from pathlib import Path

import numpy as np

from .errors import ShapeError

REAL = np.dtype("<f8")
COMPLEX = np.dtype("<c16")
_KINDS = {"real64": REAL, "complex128": COMPLEX}


def as_tensor(x):
    """Coerce ``x`` to a float64 or complex128 array (no copy when already so)."""
    x = np.asarray(x)
    if np.iscomplexobj(x):
        return np.asarray(x, dtype=np.complex128)
    return np.asarray(x, dtype=np.float64)


def normalize_dims(dims, ndim):
    """Validate a 0-based axis selection and return it as a sorted tuple.

    ``None`` selects every axis.
    """
    if dims is None:
        return tuple(range(ndim))
    if np.isscalar(dims):
        dims = (dims,)
    out = sorted(set(int(d) for d in dims))
    if len(out) != len(tuple(dims)):
        raise ShapeError(f"duplicate dimension in selection {tuple(dims)}")
    for d in out:
        if d < 0 or d >= ndim:
            raise ShapeError(f"dimension {d} out of range for rank {ndim}")
    return tuple(out)


def dims_from_user(dims, ndim=None):
    """Convert 1-based dimension indices (CLI / JSON) to 0-based ones."""
    if dims is None:
        return None
    if np.isscalar(dims):
        dims = (dims,)
    zero = tuple(int(d) - 1 for d in dims)
    if any(d < 0 for d in zero):
        raise ShapeError(f"dimensions are 1-based, got {tuple(dims)}")
    if ndim is not None:
        return normalize_dims(zero, ndim)
    return zero


def dft(x, dims=None, inverse=False):
    """Discrete Fourier transform along ``dims`` (0-based).

    The forward transform is unnormalized; the inverse carries ``1/n`` with
    ``n`` the product of transformed extents, so ``dft(dft(x), inverse=True)``
    recovers ``x``.
    """
    x = np.asarray(x)
    axes = normalize_dims(dims, x.ndim)
    x = np.asarray(x, dtype=np.complex128)
    if not axes:
        return x.copy()
    if inverse:
        return np.fft.ifftn(x, axes=axes)
    return np.fft.fftn(x, axes=axes)


def idft(x, dims=None):
    return dft(x, dims, inverse=True)


def inner(x, y):
    """Inner product ``sum(x * conj(y))``; real-valued when both inputs are real."""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise ShapeError(f"inner product of shapes {x.shape} and {y.shape}")
    if np.iscomplexobj(x) != np.iscomplexobj(y):
        raise ShapeError("inner product of real and complex tensors")
    # vdot conjugates its first argument
    val = np.vdot(y.ravel(), x.ravel())
    if not np.iscomplexobj(x):
        return float(val)
    return complex(val)


def norm(x):
    return float(np.linalg.norm(np.ravel(x)))


def _check_pair(a, b):
    a_scalar = np.ndim(a) == 0
    b_scalar = np.ndim(b) == 0
    if not (a_scalar or b_scalar) and np.shape(a) != np.shape(b):
        raise ShapeError(f"operand shapes {np.shape(a)} and {np.shape(b)} differ")


def elementwise(op, *operands):
    """Pointwise map.

    Binary maps (``add``, ``sub``, ``mul``, ``div``) accept two tensors of the
    same shape or one scalar and one tensor. Unary maps are ``abs2``,
    ``conj``, ``sqrt`` and ``max0`` (projection onto the nonnegatives).
    Division by an exact zero raises :class:`ZeroDivisionError`.
    """
    if op in ("add", "sub", "mul", "div"):
        if len(operands) != 2:
            raise TypeError(f"{op} takes two operands")
        a, b = operands
        _check_pair(a, b)
        if op == "add":
            return np.add(a, b)
        if op == "sub":
            return np.subtract(a, b)
        if op == "mul":
            return np.multiply(a, b)
        if np.any(np.asarray(b) == 0):
            raise ZeroDivisionError("division by zero in elementwise div")
        return np.divide(a, b)
    if len(operands) != 1:
        raise TypeError(f"{op} takes one operand")
    (a,) = operands
    a = np.asarray(a)
    if op == "abs2":
        if np.iscomplexobj(a):
            return a.real**2 + a.imag**2
        return a * a
    if op == "conj":
        return np.conj(a) if np.iscomplexobj(a) else a.copy()
    if op == "sqrt":
        return np.sqrt(a)
    if op == "max0":
        return np.maximum(a, 0.0)
    raise ValueError(f"unknown elementwise map {op!r}")


# -- binary tensor files -------------------------------------------------------

def write_tensor(path, x, **extra):
    """Write ``x`` as a one-line JSON header followed by little-endian raw data.

    Extra keyword arguments are stored in the header (e.g. ``mtf=True``).
    """
    x = as_tensor(x)
    kind = "complex128" if np.iscomplexobj(x) else "real64"
    header = {"shape": list(x.shape), "kind": kind, "order": "row-major"}
    header.update(extra)
    buf = np.ascontiguousarray(x, dtype=_KINDS[kind])
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("ascii") + b"\n")
        fh.write(buf.tobytes(order="C"))
    return Path(path)


def read_tensor_header(path):
    with open(path, "rb") as fh:
        return json.loads(fh.readline().decode("ascii"))


def read_tensor(path, with_header=False):
    """Read a tensor file written by :func:`write_tensor`."""
    with open(path, "rb") as fh:
        line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(line.decode("ascii"))
        shape = tuple(int(s) for s in header["shape"])
        dtype = _KINDS[header["kind"]]
    except (ValueError, KeyError) as exc:
        raise ValueError(f"{path}: malformed tensor header") from exc
    if header.get("order", "row-major") != "row-major":
        raise ValueError(f"{path}: unsupported order {header['order']!r}")
    count = math.prod(shape)
    if len(payload) != count * dtype.itemsize:
        raise ValueError(f"{path}: expected {count * dtype.itemsize} data bytes, got {len(payload)}")
    x = np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    if with_header:
        return x, header
    return x
