"""Build operator and cost graphs from JSON expression trees.

Every node is a one-key object whose key names the node type. Dimension
indices and selector corners are 1-based; file paths are resolved against
``base_dir``. Leaf operators take their input shape from a ``sizein`` entry
or, inside a composition, from the output shape of the operator to their
right.

>>> op = build_operator({"compose": [{"grad": {"dims": [1, 2]}},
...                                  {"identity": {"sizein": [8, 8]}}]})
>>> op.sizeout
(8, 8, 2)
"""

from pathlib import Path

import numpy as np

from .costs import (
    GoodRoughness,
    Hyperbolic,
    L2Residual,
    MixNorm21,
    MixNormSchatt1,
    NonNegIndicator,
    compose_cost,
    scale_cost,
    sum_cost,
)
from .errors import ConfigError
from .linops import Conv, Diag, Downsample, EWSqrt, Grad, Hess, Identity, SelectorPatch, SumPatches
from .operators import add, adjoint, compose, power, scale
from .tensor import dft, dims_from_user, read_tensor


def _node(spec):
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ConfigError(f"expression node must be a one-key object, got {spec!r}")
    ((name, body),) = spec.items()
    return name.lower(), body


def _path(base_dir, p):
    p = Path(p)
    return p if p.is_absolute() or base_dir is None else Path(base_dir) / p


def _get(body, key, default=None, required=False):
    if not isinstance(body, dict):
        if required:
            raise ConfigError(f"expected an object with key {key!r}, got {body!r}")
        return default
    if key not in body:
        if required:
            raise ConfigError(f"missing key {key!r}")
        return default
    return body[key]


def _shape(body, sizein):
    s = _get(body, "sizein")
    if s is not None:
        return tuple(int(v) for v in s)
    if sizein is None:
        raise ConfigError("cannot infer input shape; add a 'sizein' entry")
    return tuple(sizein)


def _dims(body, ndim):
    d = _get(body, "dims")
    return None if d is None else dims_from_user(d, ndim)


def build_operator(spec, sizein=None, base_dir=None):
    """Operator graph from a JSON expression.

    Node types: ``compose`` (list, applied right to left), ``sum`` (list),
    ``adjoint``, ``inverse``, ``power`` (``op``, ``k``), ``scale``
    (``factor``, ``op``), ``conv`` (``kernelFile`` spatial kernel with origin
    at index 0, or ``mtfFile``; ``dims``; ``isReal``), ``grad``, ``hess``,
    ``downsample`` (``factors``), ``selector`` (``size``; ``corner`` or
    centered when omitted), ``sumpatches`` (``patch``), ``diag`` (``file`` or
    ``value``), ``identity`` and ``sqrt``.
    """
    name, body = _node(spec)
    if name == "compose":
        if not isinstance(body, list) or not body:
            raise ConfigError("'compose' needs a non-empty list")
        op = build_operator(body[-1], sizein, base_dir)
        for child in reversed(body[:-1]):
            op = compose(build_operator(child, op.sizeout, base_dir), op)
        return op
    if name == "sum":
        if not isinstance(body, list) or not body:
            raise ConfigError("'sum' needs a non-empty list")
        op = build_operator(body[0], sizein, base_dir)
        for child in body[1:]:
            op = add(op, build_operator(child, op.sizein, base_dir))
        return op
    if name == "adjoint":
        return adjoint(build_operator(body, None, base_dir))
    if name == "inverse":
        return power(build_operator(body, sizein, base_dir), -1)
    if name == "power":
        return power(build_operator(_get(body, "op", required=True), sizein, base_dir), int(_get(body, "k", required=True)))
    if name == "scale":
        return scale(build_operator(_get(body, "op", required=True), sizein, base_dir), _get(body, "factor", required=True))
    if name == "conv":
        return _build_conv(body, sizein, base_dir)
    shape = _shape(body, sizein)
    if name == "grad":
        return Grad(shape, _dims(body, len(shape)))
    if name == "hess":
        return Hess(shape, _dims(body, len(shape)) or (0, 1))
    if name == "downsample":
        return Downsample(shape, _get(body, "factors", required=True))
    if name == "selector":
        size = _get(body, "size", required=True)
        corner = _get(body, "corner")
        if corner is None or corner == "centered":
            return SelectorPatch.centered(shape, size)
        return SelectorPatch(shape, [int(c) - 1 for c in corner], size)
    if name == "sumpatches":
        return SumPatches(shape, _get(body, "patch", required=True))
    if name == "diag":
        f = _get(body, "file")
        if f is not None:
            return Diag(read_tensor(_path(base_dir, f)))
        return Diag(float(_get(body, "value", required=True)), shape)
    if name == "identity":
        return Identity(shape)
    if name == "sqrt":
        return EWSqrt(shape)
    raise ConfigError(f"unknown operator node {name!r}")


def _build_conv(body, sizein, base_dir):
    is_real = bool(_get(body, "isReal", True))
    if _get(body, "mtfFile") is not None:
        mtf = read_tensor(_path(base_dir, body["mtfFile"]))
        shape = tuple(sizein) if sizein is not None else mtf.shape
        shape = _shape(body, shape)
        return Conv(mtf, _dims(body, len(shape)), is_real, shape)
    kernel = read_tensor(_path(base_dir, _get(body, "kernelFile", required=True)))
    shape = _shape(body, sizein if sizein is not None else kernel.shape)
    dims = _dims(body, len(shape))
    if kernel.shape != shape:
        raise ConfigError(f"kernel shape {kernel.shape} differs from input shape {shape}")
    return Conv(dft(kernel, dims), dims, is_real, shape)


def build_cost(spec, sizein=None, base_dir=None):
    """Cost graph from a JSON expression.

    Node types: ``sum`` (list), ``scale`` (``lambda``, ``cost``), ``l2``
    (``dataFile``), ``mixnorm21`` (``groupDims``), ``schatten1``, ``nonneg``,
    ``hyperbolic`` (``eps``, ``groupDims``) and ``goodroughness`` (``eps``;
    its ``inner`` is the gradient operator). Except for ``goodroughness``
    every leaf accepts an ``inner`` operator it is composed with.
    """
    name, body = _node(spec)
    if name == "sum":
        if not isinstance(body, list) or not body:
            raise ConfigError("'sum' needs a non-empty list")
        return sum_cost(*[build_cost(c, sizein, base_dir) for c in body])
    if name == "scale":
        factor = _get(body, "lambda", _get(body, "factor"))
        if factor is None:
            raise ConfigError("'scale' needs 'lambda'")
        return scale_cost(build_cost(_get(body, "cost", required=True), sizein, base_dir), float(factor))
    if name == "goodroughness":
        lop = build_operator(_get(body, "inner", {"grad": {}}), sizein, base_dir)
        return GoodRoughness(lop, float(_get(body, "eps", 1e-2)))
    inner = _get(body, "inner")
    op = build_operator(inner, sizein, base_dir) if inner is not None else None
    shape = op.sizeout if op is not None else sizein
    if name == "l2":
        f = _get(body, "dataFile")
        data = read_tensor(_path(base_dir, f)) if f is not None else None
        if shape is None:
            if data is None:
                raise ConfigError("'l2' needs a dataFile, an inner operator or a sizein")
            shape = data.shape
        cost = L2Residual(tuple(shape), data)
    else:
        if _get(body, "sizein") is not None:
            shape = tuple(body["sizein"])
        if shape is None:
            raise ConfigError(f"cannot infer input shape of {name!r}")
        shape = tuple(shape)
        gd = _get(body, "groupDims")
        gd = None if gd is None else dims_from_user(gd, len(shape))
        if name == "mixnorm21":
            cost = MixNorm21(shape, gd)
        elif name == "schatten1":
            cost = MixNormSchatt1(shape, int(_get(body, "p", 1)))
        elif name == "nonneg":
            cost = NonNegIndicator(shape)
        elif name == "hyperbolic":
            cost = Hyperbolic(shape, float(_get(body, "eps", 1e-7)), gd)
        else:
            raise ConfigError(f"unknown cost node {name!r}")
    return compose_cost(cost, op) if op is not None else cost


def as_shape(v, name="shape"):
    try:
        return tuple(int(s) for s in v)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be a list of integers, got {v!r}") from exc


def load_array(value, base_dir=None):
    """A tensor from a file path or an inline (nested) list."""
    if isinstance(value, str):
        return read_tensor(_path(base_dir, value))
    return np.asarray(value, dtype=float)
