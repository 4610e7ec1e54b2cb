"""Concrete operators used by the deconvolution study, and the rewrite rules
that involve them.

All stencils use circular boundary conditions so that ``Grad.T @ Grad`` and
``Hess.T @ Hess`` are exact convolutions.
"""

import math

import numpy as np

from . import kernels
from .errors import ShapeError, SingularOperatorError
from .operators import (
    SINGULAR_TOL,
    Kind,
    LinOp,
    Map,
    rule,
)
from .tensor import normalize_dims

_SQRT2 = math.sqrt(2.0)


def _full_shape(shape):
    return tuple(int(s) for s in shape)


# -- convolution -----------------------------------------------------------------


class Conv(LinOp):
    """Circular convolution along ``dims`` through a frequency-domain kernel.

    Parameters
    ----------
    mtf : array_like
        Transfer function, broadcastable to the input shape. Along dimensions
        that are not convolved it may vary (one kernel per slice).
    dims : sequence of int, optional
        0-based axes to convolve; all axes by default.
    is_real : bool
        Real input/output. The transfer function must then be
        conjugate-symmetric over ``dims`` (checked to 1e-10 relative) and the
        real-to-complex FFT path is used.
    sizein : tuple, optional
        Input shape when ``mtf`` is given in broadcastable form.
    """

    kind = Kind.CONV

    def __init__(self, mtf, dims=None, is_real=True, sizein=None):
        mtf = np.asarray(mtf, dtype=np.complex128)
        shape = _full_shape(sizein) if sizein is not None else mtf.shape
        mtf = np.ascontiguousarray(np.broadcast_to(mtf, shape))
        super().__init__(shape, shape)
        self.dims = normalize_dims(dims, len(shape))
        self.mtf = mtf
        self.is_real = bool(is_real)
        if self.is_real:
            flipped = np.conj(mtf)
            for d in self.dims:
                flipped = np.roll(np.flip(flipped, axis=d), 1, axis=d)
            scale = max(float(np.max(np.abs(mtf))), 1e-300)
            if np.max(np.abs(flipped - mtf)) > 1e-10 * scale:
                raise ValueError("is_real convolution needs a conjugate-symmetric transfer function")
            last = self.dims[-1]
            half = tuple(
                slice(0, shape[last] // 2 + 1) if d == last else slice(None) for d in range(len(shape))
            )
            self._mtf_half = np.ascontiguousarray(mtf[half])
        self._abs = None

    def __repr__(self):
        return f"Conv({self.sizein}, dims={self.dims}, is_real={self.is_real})"

    @property
    def is_invertible(self):
        return True

    def _absmtf(self):
        if self._abs is None:
            self._abs = np.abs(self.mtf)
        return self._abs

    def _filter(self, x, mtf, mtf_half):
        if self.is_real and not np.iscomplexobj(x):
            s = [self.sizein[d] for d in self.dims]
            return np.fft.irfftn(mtf_half * np.fft.rfftn(x, axes=self.dims), s=s, axes=self.dims)
        out = np.fft.ifftn(mtf * np.fft.fftn(x, axes=self.dims), axes=self.dims)
        return out.real if self.is_real else out

    def _apply(self, x):
        return self._filter(x, self.mtf, getattr(self, "_mtf_half", None))

    def _apply_adjoint(self, v):
        half = getattr(self, "_mtf_half", None)
        return self._filter(v, np.conj(self.mtf), None if half is None else np.conj(half))

    def _apply_inverse(self, y):
        if np.min(self._absmtf()) < SINGULAR_TOL:
            raise SingularOperatorError("transfer function has entries below the singularity threshold")
        half = getattr(self, "_mtf_half", None)
        return self._filter(y, 1.0 / self.mtf, None if half is None else 1.0 / half)

    def _norm_closed_form(self):
        return float(np.max(self._absmtf()))

    def compatible(self, other):
        return other.kind is Kind.CONV and other.dims == self.dims and other.sizein == self.sizein


# -- finite differences ----------------------------------------------------------


class Grad(LinOp):
    """Forward-difference gradient along ``dims``; components stacked on a new
    trailing axis (``sizeout = sizein + (len(dims),)``)."""

    kind = Kind.GRAD

    def __init__(self, sizein, dims=None):
        sizein = _full_shape(sizein)
        self.dims = normalize_dims(dims, len(sizein))
        if not self.dims:
            raise ShapeError("gradient needs at least one dimension")
        super().__init__(sizein, sizein + (len(self.dims),))

    def key(self):
        return (Kind.GRAD, self.sizein, self.dims)

    def _apply(self, x):
        out = np.empty(self.sizeout, dtype=x.dtype)
        for k, d in enumerate(self.dims):
            out[..., k] = kernels.diff_forward(x, d)
        return out

    def _apply_adjoint(self, v):
        out = kernels.diff_forward_adjoint(np.ascontiguousarray(v[..., 0]), self.dims[0])
        for k, d in enumerate(self.dims[1:], start=1):
            out += kernels.diff_forward_adjoint(np.ascontiguousarray(v[..., k]), d)
        return out

    def normal_mtf(self):
        """Transfer function of ``Grad.T @ Grad`` (a discrete negative Laplacian)."""
        return sum(_sin2(self.sizein, d) for d in self.dims)


class Hess(LinOp):
    """Second-order differences along two dims.

    The trailing axis of size 3 stores ``(D11 f, sqrt(2) D12 f, D22 f)``.
    The sqrt(2) weight makes the Euclidean norm of the stored triple equal to
    the Frobenius norm of the full symmetric matrix, so the adjoint and all
    norms agree with the 4-component ``[D11, D12; D21, D22]`` convention.
    """

    kind = Kind.HESS

    def __init__(self, sizein, dims=None):
        sizein = _full_shape(sizein)
        self.dims = normalize_dims(dims if dims is not None else (0, 1), len(sizein))
        if len(self.dims) != 2:
            raise ShapeError("Hessian needs exactly two dimensions")
        super().__init__(sizein, sizein + (3,))

    def key(self):
        return (Kind.HESS, self.sizein, self.dims)

    def _apply(self, x):
        d1, d2 = self.dims
        out = np.empty(self.sizeout, dtype=x.dtype)
        out[..., 0] = kernels.diff_second(x, d1)
        out[..., 1] = _SQRT2 * kernels.diff_forward(kernels.diff_forward(x, d1), d2)
        out[..., 2] = kernels.diff_second(x, d2)
        return out

    def _apply_adjoint(self, v):
        d1, d2 = self.dims
        out = kernels.diff_second(np.ascontiguousarray(v[..., 0]), d1)
        mixed = kernels.diff_forward_adjoint(np.ascontiguousarray(v[..., 1]), d2)
        out += _SQRT2 * kernels.diff_forward_adjoint(mixed, d1)
        out += kernels.diff_second(np.ascontiguousarray(v[..., 2]), d2)
        return out

    def normal_mtf(self):
        """Transfer function of ``Hess.T @ Hess``, the squared Laplacian."""
        lap = sum(_sin2(self.sizein, d) for d in self.dims)
        return lap * lap


def _sin2(shape, axis):
    # |exp(2i pi k/n) - 1|**2 broadcast along ``axis``
    n = shape[axis]
    w = 4.0 * np.sin(np.pi * np.arange(n) / n) ** 2
    bshape = [1] * len(shape)
    bshape[axis] = n
    return np.broadcast_to(w.reshape(bshape), shape)


# -- sampling and patches --------------------------------------------------------


class Downsample(LinOp):
    """Keep every ``factors[d]``-th sample along each axis, starting at index 0."""

    kind = Kind.DOWNSAMPLE

    def __init__(self, sizein, factors):
        sizein = _full_shape(sizein)
        factors = tuple(int(f) for f in factors)
        if len(factors) != len(sizein) or any(f < 1 for f in factors):
            raise ShapeError(f"bad downsampling factors {factors} for shape {sizein}")
        if any(n % f for n, f in zip(sizein, factors)):
            raise ShapeError(f"factors {factors} do not divide {sizein}")
        super().__init__(sizein, tuple(n // f for n, f in zip(sizein, factors)))
        self.factors = factors
        self._slices = tuple(slice(None, None, f) for f in factors)

    def key(self):
        return (Kind.DOWNSAMPLE, self.sizein, self.factors)

    def _apply(self, x):
        return np.ascontiguousarray(x[self._slices])

    def _apply_adjoint(self, v):
        out = np.zeros(self.sizein, dtype=v.dtype)
        out[self._slices] = v
        return out


class SelectorPatch(LinOp):
    """Extract the block starting at ``corner`` (0-based) of extent ``size``."""

    kind = Kind.SELECTOR_PATCH

    def __init__(self, sizein, corner, size):
        sizein = _full_shape(sizein)
        corner = tuple(int(c) for c in corner)
        size = _full_shape(size)
        if len(corner) != len(sizein) or len(size) != len(sizein):
            raise ShapeError("corner and size must match the input rank")
        for c, s, n in zip(corner, size, sizein):
            if c < 0 or s < 1 or c + s > n:
                raise ShapeError(f"patch corner={corner} size={size} out of bounds for {sizein}")
        super().__init__(sizein, size)
        self.corner = corner
        self._slices = tuple(slice(c, c + s) for c, s in zip(corner, size))

    @classmethod
    def centered(cls, sizein, size):
        corner = tuple((n - s) // 2 for n, s in zip(sizein, size))
        return cls(sizein, corner, size)

    def key(self):
        return (Kind.SELECTOR_PATCH, self.sizein, self.corner, self.sizeout)

    def _apply(self, x):
        return np.ascontiguousarray(x[self._slices])

    def _apply_adjoint(self, v):
        out = np.zeros(self.sizein, dtype=v.dtype)
        out[self._slices] = v
        return out


class SumPatches(LinOp):
    """Split the input into contiguous blocks of ``patch`` and sum them."""

    kind = Kind.SUM_PATCHES

    def __init__(self, sizein, patch):
        sizein = _full_shape(sizein)
        patch = _full_shape(patch)
        if len(patch) != len(sizein) or any(n % p for n, p in zip(sizein, patch)):
            raise ShapeError(f"patch {patch} does not tile {sizein}")
        super().__init__(sizein, patch)
        self._counts = tuple(n // p for n, p in zip(sizein, patch))

    def key(self):
        return (Kind.SUM_PATCHES, self.sizein, self.sizeout)

    def _apply(self, x):
        split = []
        for c, p in zip(self._counts, self.sizeout):
            split += [c, p]
        return x.reshape(split).sum(axis=tuple(range(0, 2 * len(self.sizeout), 2)))

    def _apply_adjoint(self, v):
        return np.tile(v, self._counts)


# -- diagonal family -------------------------------------------------------------


class Diag(LinOp):
    """Pointwise multiplication by ``diag`` (a scalar needs ``shape``)."""

    kind = Kind.DIAG

    def __init__(self, diag, shape=None):
        diag = np.asarray(diag)
        if diag.dtype.kind not in "fc":
            diag = diag.astype(np.float64)
        shape = _full_shape(shape) if shape is not None else diag.shape
        super().__init__(shape, shape)
        self.diag = np.broadcast_to(diag, shape)
        flat = self.diag.ravel()
        first = flat[0]
        self._scaled_identity = bool(np.all(flat == first))
        self.scalar = first.item() if self._scaled_identity else None

    def __repr__(self):
        if self._scaled_identity:
            return f"Diag({self.scalar} * I, {self.sizein})"
        return f"Diag({self.sizein})"

    @property
    def is_scaled_identity(self):
        return self._scaled_identity

    @property
    def is_invertible(self):
        return True

    def _apply(self, x):
        return self.diag * x

    def _apply_adjoint(self, v):
        return np.conj(self.diag) * v

    def _apply_inverse(self, y):
        if np.min(np.abs(self.diag)) < SINGULAR_TOL:
            raise SingularOperatorError("diagonal has entries below the singularity threshold")
        return y / self.diag

    def _norm_closed_form(self):
        return float(np.max(np.abs(self.diag)))


class Identity(Diag):
    kind = Kind.IDENTITY

    def __init__(self, shape):
        super().__init__(1.0, shape)

    def __repr__(self):
        return f"Identity({self.sizein})"

    def _apply(self, x):
        return x.copy()

    _apply_adjoint = _apply
    _apply_inverse = _apply

    def _norm_closed_form(self):
        return 1.0


class EWSqrt(Map):
    """Elementwise square root (nonlinear, differentiable for positive input)."""

    kind = Kind.EWSQRT

    def __init__(self, shape):
        super().__init__(shape, shape)

    def _apply(self, x):
        return np.sqrt(x)

    def _apply_jacobian_t(self, v, x):
        return v / (2.0 * np.sqrt(x))


# -- rewrite rules ---------------------------------------------------------------


def _same(a, b):
    return type(a) is type(b) and hasattr(a, "key") and a.key() == b.key()


def _conv_like(conv, mtf, is_real=None):
    return Conv(mtf, conv.dims, conv.is_real if is_real is None else is_real, sizein=conv.sizein)


@rule("compose", Kind.CONV, Kind.CONV)
def _conv_conv(a, b):
    if a.compatible(b):
        return _conv_like(a, a.mtf * b.mtf, a.is_real and b.is_real)
    return None


@rule("compose", Kind.DIAG, Kind.DIAG)
def _diag_diag(a, b):
    return Diag(a.diag * b.diag, a.sizein)


def _selector_pair(a, b):
    if _same(a, b.op):
        return Identity(a.sizeout)
    return None


rule("compose", Kind.DOWNSAMPLE, Kind.ADJOINT)(_selector_pair)
rule("compose", Kind.SELECTOR_PATCH, Kind.ADJOINT)(_selector_pair)


@rule("compose", Kind.ADJOINT, Kind.GRAD)
@rule("compose", Kind.ADJOINT, Kind.HESS)
def _normal_stencil(a, b):
    if _same(a.op, b):
        return Conv(b.normal_mtf(), b.dims, True, sizein=b.sizein)
    return None


@rule("compose3", Kind.DOWNSAMPLE, Kind.CONV, Kind.ADJOINT)
def _downsample_conv_upsample(s, h, st):
    # S H S^T is a convolution on the coarse grid whose transfer function is
    # the patch-summed (aliased) fine-grid one.
    if not _same(s, st.op):
        return None
    if any(f > 1 and d not in h.dims for d, f in enumerate(s.factors)):
        return None
    mtf = SumPatches(s.sizein, s.sizeout).apply(h.mtf) / math.prod(s.factors)
    return Conv(mtf, h.dims, h.is_real, sizein=s.sizeout)


@rule("add", Kind.CONV, Kind.CONV)
def _conv_plus_conv(a, b):
    if a.compatible(b):
        return _conv_like(a, a.mtf + b.mtf, a.is_real and b.is_real)
    return None


@rule("add", Kind.CONV, Kind.DIAG)
@rule("add", Kind.CONV, Kind.IDENTITY)
def _conv_plus_scaled_identity(a, b):
    if b.is_scaled_identity:
        return _conv_like(a, a.mtf + b.scalar, a.is_real and not np.iscomplexobj(b.scalar))
    return None


@rule("add", Kind.DIAG, Kind.DIAG)
@rule("add", Kind.DIAG, Kind.IDENTITY)
@rule("add", Kind.IDENTITY, Kind.IDENTITY)
def _diag_plus_diag(a, b):
    return Diag(a.diag + b.diag, a.sizein)


@rule("adjoint", Kind.CONV)
def _conv_adjoint(a):
    return _conv_like(a, np.conj(a.mtf))


@rule("adjoint", Kind.DIAG)
def _diag_adjoint(a):
    if not np.iscomplexobj(a.diag):
        return a
    return Diag(np.conj(a.diag), a.sizein)


@rule("adjoint", Kind.IDENTITY)
def _identity_adjoint(a):
    return a


@rule("inverse", Kind.CONV)
def _conv_inverse(a):
    if np.min(a._absmtf()) < SINGULAR_TOL:
        raise SingularOperatorError("cannot invert a convolution with (near-)zero frequency response")
    return _conv_like(a, 1.0 / a.mtf)


@rule("inverse", Kind.DIAG)
def _diag_inverse(a):
    if np.min(np.abs(a.diag)) < SINGULAR_TOL:
        raise SingularOperatorError("cannot invert a diagonal with (near-)zero entries")
    return Diag(1.0 / a.diag, a.sizein)


@rule("inverse", Kind.IDENTITY)
def _identity_inverse(a):
    return a


@rule("scale", Kind.CONV)
def _scale_conv(a, c):
    return _conv_like(a, c * a.mtf, a.is_real and not np.iscomplexobj(c))


@rule("scale", Kind.DIAG)
@rule("scale", Kind.IDENTITY)
def _scale_diag(a, c):
    return Diag(c * a.diag, a.sizein)
