"""Cost functionals with value, gradient and proximity operator.

``prox(z, alpha)`` returns ``argmin_x 0.5 * ||x - z||**2 + alpha * J(x)``.

Costs compose with operators through ``cost @ op``; the composed node picks a
closed-form prox when one exists:

* semi-orthogonal inner operator (``L L^T = nu I``):
  ``z + L^T (prox_{nu alpha J}(L z) - L z) / nu``;
* least squares through a linear inner operator: the normal equations are
  solved directly when ``alpha H^T H + I`` simplifies to an invertible
  convolution or diagonal, through the Woodbury identity when
  ``I + alpha H H^T`` does, and by conjugate gradients otherwise.
"""

import enum
import math

import numpy as np

from . import kernels
from .errors import NoProxError, NotDifferentiableError, ShapeError
from .linops import Identity
from .operators import Kind, Map, add, adjoint, compose, scale
from .tensor import norm

INF = math.inf
SEMI_ORTHO_RTOL = 1e-10


class CostKind(enum.Enum):
    L2_RESIDUAL = "L2Residual"
    MIXNORM21 = "MixNorm21"
    MIXNORM_SCHATT1 = "MixNormSchatt1"
    NONNEG = "NonNegIndicator"
    HYPERBOLIC = "Hyperbolic"
    GOOD_ROUGHNESS = "GoodRoughness"
    COMPOSED = "Composed"
    SUM = "Sum"
    SCALED = "Scaled"


class Cost:
    """Base class: real-valued functional on arrays of shape ``sizein``."""

    kind = None
    has_grad = False
    has_prox = False
    is_convex = True
    is_indicator = False

    def __init__(self, sizein):
        self.sizein = tuple(int(s) for s in sizein)
        self.do_precomputation = False

    def __repr__(self):
        return f"{type(self).__name__}({self.sizein})"

    def _check(self, x):
        x = np.asarray(x)
        if x.shape != self.sizein:
            raise ShapeError(f"{type(self).__name__}: expected shape {self.sizein}, got {x.shape}")
        return x

    def evaluate(self, x):
        return float(self._evaluate(self._check(x)))

    __call__ = evaluate

    def grad(self, x):
        if not self.has_grad:
            raise NotDifferentiableError(f"{self!r} has no gradient")
        return self._grad(self._check(x))

    def prox(self, z, alpha):
        if not self.has_prox:
            raise NoProxError(f"{self!r} has no proximity operator")
        if not alpha > 0:
            raise ValueError(f"prox step must be positive, got {alpha}")
        return self._prox(self._check(z), float(alpha))

    def set_precompute(self, on=True):
        self.do_precomputation = bool(on)

    def _evaluate(self, x):
        raise NotImplementedError

    def _grad(self, x):
        raise NotImplementedError

    def _prox(self, z, alpha):
        raise NotImplementedError

    def __matmul__(self, op):
        if isinstance(op, Map):
            return compose_cost(self, op)
        return NotImplemented

    __mul__ = __matmul__

    def __rmul__(self, c):
        if np.isscalar(c):
            return scale_cost(self, c)
        return NotImplemented

    def __add__(self, other):
        if isinstance(other, Cost):
            return sum_cost(self, other)
        return NotImplemented


# -- elementary costs ------------------------------------------------------------


class L2Residual(Cost):
    """``0.5 * ||x - data||**2`` (``data`` defaults to zero)."""

    kind = CostKind.L2_RESIDUAL
    has_grad = True
    has_prox = True

    def __init__(self, sizein, data=None):
        super().__init__(sizein)
        if data is not None:
            data = np.asarray(data, dtype=np.float64)
            if data.shape != self.sizein:
                raise ShapeError(f"data shape {data.shape} != {self.sizein}")
        self.data = data

    def _residual(self, x):
        return x if self.data is None else x - self.data

    def _evaluate(self, x):
        r = self._residual(x)
        return 0.5 * np.vdot(r, r).real

    def _grad(self, x):
        return self._residual(x)

    def _prox(self, z, alpha):
        if self.data is None:
            return z / (1.0 + alpha)
        return (z + alpha * self.data) / (1.0 + alpha)


def _group_view(x, group_dims):
    # rows = pixels, columns = group entries
    moved = np.moveaxis(x, group_dims, tuple(range(x.ndim - len(group_dims), x.ndim)))
    gsize = math.prod(x.shape[d] for d in group_dims)
    return np.ascontiguousarray(moved).reshape(-1, gsize), moved.shape


def _from_group_view(rows, moved_shape, group_dims, ndim):
    moved = rows.reshape(moved_shape)
    return np.moveaxis(moved, tuple(range(ndim - len(group_dims), ndim)), group_dims)


def _norm_group_dims(group_dims, ndim):
    if group_dims is None:
        group_dims = ndim - 1
    if np.isscalar(group_dims):
        group_dims = (group_dims,)
    dims = tuple(sorted(int(d) % ndim for d in group_dims))
    if len(set(dims)) != len(dims):
        raise ShapeError("repeated group dimension")
    return dims


class MixNorm21(Cost):
    """Sum over pixels of the l2 norm across ``group_dims`` (0-based; last axis by default)."""

    kind = CostKind.MIXNORM21
    has_prox = True

    def __init__(self, sizein, group_dims=None):
        super().__init__(sizein)
        self.group_dims = _norm_group_dims(group_dims, len(self.sizein))

    def _evaluate(self, x):
        rows, _ = _group_view(x, self.group_dims)
        return np.sum(np.sqrt(np.sum(rows * rows, axis=1)))

    def _prox(self, z, alpha):
        rows, shape = _group_view(z, self.group_dims)
        out = kernels.group_shrink(rows, alpha)
        return _from_group_view(out, shape, self.group_dims, z.ndim)


class MixNormSchatt1(Cost):
    """Sum over pixels of the nuclear norm of symmetric 2x2 matrices stored as
    ``(a, sqrt(2) b, c)`` along the last axis (the :class:`~invop.linops.Hess` layout)."""

    kind = CostKind.MIXNORM_SCHATT1
    has_prox = True

    def __init__(self, sizein, p=1):
        super().__init__(sizein)
        if p != 1:
            raise ValueError("only the Schatten order p = 1 is supported")
        if self.sizein[-1] != 3:
            raise ShapeError("last axis must hold the 3 unique Hessian components")
        self.p = 1

    def _evaluate(self, x):
        l1, l2 = kernels.sym_eigvals(x.reshape(-1, 3))
        return np.sum(np.abs(l1) + np.abs(l2))

    def _prox(self, z, alpha):
        rows = np.ascontiguousarray(z).reshape(-1, 3)
        return kernels.sym_eig_shrink(rows, alpha).reshape(z.shape)


class NonNegIndicator(Cost):
    """0 on the nonnegative orthant, :data:`INF` elsewhere."""

    kind = CostKind.NONNEG
    has_prox = True
    is_indicator = True

    def _evaluate(self, x):
        return 0.0 if np.all(x >= 0) else INF

    def _prox(self, z, alpha):
        return np.maximum(z, 0.0)


class Hyperbolic(Cost):
    """Smoothed mixed norm ``sum_n sqrt(sum_group x**2 + eps**2)``."""

    kind = CostKind.HYPERBOLIC
    has_grad = True

    def __init__(self, sizein, eps=1e-7, group_dims=None):
        super().__init__(sizein)
        if not eps > 0:
            raise ValueError("eps must be positive")
        self.eps = float(eps)
        self.group_dims = _norm_group_dims(group_dims, len(self.sizein))

    def _evaluate(self, x):
        rows, _ = _group_view(x, self.group_dims)
        return kernels.hyperbolic(rows, self.eps)[0]

    def _grad(self, x):
        rows, shape = _group_view(x, self.group_dims)
        g = kernels.hyperbolic(rows, self.eps)[1]
        return _from_group_view(g, shape, self.group_dims, x.ndim)


class GoodRoughness(Cost):
    """``sum_n ||[grad f]_n||**2 / sqrt(f_n**2 + eps**2)`` for a gradient operator."""

    kind = CostKind.GOOD_ROUGHNESS
    has_grad = True
    is_convex = False

    def __init__(self, grad_op, eps=1e-2):
        super().__init__(grad_op.sizein)
        if grad_op.sizeout[:-1] != grad_op.sizein:
            raise ShapeError("GoodRoughness needs a gradient with a trailing component axis")
        self.grad_op = grad_op
        self.eps = float(eps)

    def _parts(self, x):
        lx = self.grad_op.apply(x)
        sq = np.sum(lx * lx, axis=-1)
        w = 1.0 / np.sqrt(x * x + self.eps**2)
        return lx, sq, w

    def _evaluate(self, x):
        _, sq, w = self._parts(x)
        return np.sum(sq * w)

    def _grad(self, x):
        lx, sq, w = self._parts(x)
        return self.grad_op.apply_adjoint(2.0 * w[..., None] * lx) - sq * x * w**3


# -- combinators -----------------------------------------------------------------


class ComposedCost(Cost):
    """``outer(inner(x))``."""

    kind = CostKind.COMPOSED

    def __init__(self, outer, inner):
        if outer.sizein != inner.sizeout:
            raise ShapeError(f"cannot compose {outer!r} with {inner!r}")
        super().__init__(inner.sizein)
        self.outer = outer
        self.inner = inner
        self.is_convex = outer.is_convex and inner.is_linear
        self.is_indicator = outer.is_indicator
        self.has_grad = outer.has_grad and inner.is_differentiable
        self.nu = _semi_orthogonal_factor(inner) if inner.is_linear else None
        self._least_squares = outer.kind is CostKind.L2_RESIDUAL and inner.is_linear
        self.has_prox = (outer.has_prox and self.is_convex and self.nu is not None) or self._least_squares
        self._normal = None
        self._htg = None
        self._prox_cache = {}

    @property
    def is_semi_orthogonal(self):
        return self.nu is not None

    def __repr__(self):
        return f"ComposedCost({self.outer!r} @ {self.inner!r})"

    def _evaluate(self, x):
        return self.outer.evaluate(self.inner.apply(x))

    def _adjoint_data(self):
        if self._htg is None:
            data = self.outer.data
            self._htg = np.zeros(self.sizein) if data is None else self.inner.apply_adjoint(data)
        return self._htg

    def _grad(self, x):
        if self.do_precomputation and self._least_squares:
            if self._normal is None:
                self._normal = compose(adjoint(self.inner), self.inner)
            return self._normal.apply(x) - self._adjoint_data()
        return self.inner.apply_jacobian_t(self.outer.grad(self.inner.apply(x)), x)

    def _prox(self, z, alpha):
        if self.nu is not None and self.outer.has_prox and self.is_convex:
            lz = self.inner.apply(z)
            return z + self.inner.apply_adjoint(self.outer.prox(lz, alpha * self.nu) - lz) / self.nu
        return self.woodbury_prox(z, alpha)

    def woodbury_prox(self, u, alpha):
        """Prox of ``0.5 ||H x - g||**2`` for linear ``H``.

        Solves ``(alpha H^T H + I) x = alpha H^T g + u``.
        """
        if not self._least_squares:
            raise NoProxError(f"{self!r} is not a least-squares term")
        rhs = alpha * self._adjoint_data() + u
        strategy, op = self._prox_solver(alpha)
        if strategy == "direct":
            return op.apply_inverse(rhs)
        if strategy == "woodbury":
            h = self.inner
            return rhs - alpha * h.apply_adjoint(op.apply_inverse(h.apply(rhs)))
        return conjugate_gradient(op, rhs, x0=u, tol=1e-12, maxit=1000)[0]

    def _prox_solver(self, alpha):
        # (strategy, operator) per step size; built once and reused
        cached = self._prox_cache.get(alpha)
        if cached is not None:
            return cached
        h = self.inner
        normal = add(scale(compose(adjoint(h), h), alpha), Identity(h.sizein))
        if normal.kind in (Kind.CONV, Kind.DIAG, Kind.IDENTITY):
            out = ("direct", normal)
        else:
            small = add(Identity(h.sizeout), scale(compose(h, adjoint(h)), alpha))
            if small.kind in (Kind.CONV, Kind.DIAG, Kind.IDENTITY):
                out = ("woodbury", small)
            else:
                out = ("cg", normal)
        self._prox_cache = {alpha: out}
        return out


def _semi_orthogonal_factor(op):
    """Return ``nu > 0`` when ``op @ op.T`` simplifies to ``nu * I``, else None."""
    try:
        t = compose(op, adjoint(op))
    except Exception:
        return None
    if t.kind not in (Kind.DIAG, Kind.IDENTITY):
        return None
    d = np.asarray(t.diag)
    if np.iscomplexobj(d):
        if np.max(np.abs(d.imag)) > 0:
            return None
        d = d.real
    lo, hi = float(np.min(d)), float(np.max(d))
    if lo <= 0 or hi - lo > SEMI_ORTHO_RTOL * hi:
        return None
    return float(np.mean(d))


class SumCost(Cost):
    kind = CostKind.SUM

    def __init__(self, terms):
        terms = list(terms)
        for t in terms[1:]:
            if t.sizein != terms[0].sizein:
                raise ShapeError(f"cannot add {terms[0]!r} and {t!r}")
        super().__init__(terms[0].sizein)
        self.terms = terms
        self.has_grad = all(t.has_grad for t in terms)
        self.has_prox = False
        self.is_convex = all(t.is_convex for t in terms)

    def _evaluate(self, x):
        return sum(t.evaluate(x) for t in self.terms)

    def _grad(self, x):
        out = self.terms[0].grad(x)
        for t in self.terms[1:]:
            out = out + t.grad(x)
        return out

    def set_precompute(self, on=True):
        super().set_precompute(on)
        for t in self.terms:
            t.set_precompute(on)


class ScaledCost(Cost):
    kind = CostKind.SCALED

    def __init__(self, cost, factor):
        if not factor > 0:
            raise ValueError(f"cost weights must be positive, got {factor}")
        super().__init__(cost.sizein)
        self.cost = cost
        self.factor = float(factor)
        self.has_grad = cost.has_grad
        self.has_prox = cost.has_prox
        self.is_convex = cost.is_convex
        self.is_indicator = cost.is_indicator

    def _evaluate(self, x):
        v = self.cost.evaluate(x)
        return INF if v == INF else self.factor * v

    def _grad(self, x):
        return self.factor * self.cost.grad(x)

    def _prox(self, z, alpha):
        return self.cost.prox(z, alpha * self.factor)

    def set_precompute(self, on=True):
        super().set_precompute(on)
        self.cost.set_precompute(on)


def compose_cost(cost, op):
    if op.kind is Kind.IDENTITY:
        return cost
    if cost.kind is CostKind.COMPOSED:
        return ComposedCost(cost.outer, compose(cost.inner, op))
    if cost.kind is CostKind.SCALED:
        return ScaledCost(compose_cost(cost.cost, op), cost.factor)
    if cost.kind is CostKind.SUM:
        return SumCost([compose_cost(t, op) for t in cost.terms])
    return ComposedCost(cost, op)


def sum_cost(*costs):
    terms = []
    for c in costs:
        terms.extend(c.terms if c.kind is CostKind.SUM else [c])
    return terms[0] if len(terms) == 1 else SumCost(terms)


def scale_cost(cost, factor):
    if factor == 1:
        return cost
    if cost.kind is CostKind.SCALED:
        return ScaledCost(cost.cost, cost.factor * factor)
    return ScaledCost(cost, factor)


# -- conjugate gradients -----------------------------------------------------------


def conjugate_gradient(op, b, x0=None, tol=1e-10, maxit=200):
    """Solve ``op x = b`` for a self-adjoint positive definite ``op``.

    Stops when ``||r|| <= tol * ||b||``. Returns ``(x, iterations, relative residual)``.
    """
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=b.dtype)
    r = b - op.apply(x)
    p = r.copy()
    rr = np.vdot(r, r).real
    bnorm = max(norm(b), 1e-300)
    it = 0
    for it in range(1, maxit + 1):
        if math.sqrt(rr) <= tol * bnorm:
            it -= 1
            break
        ap = op.apply(p)
        step = rr / np.vdot(p, ap).real
        x += step * p
        r -= step * ap
        rr_new = np.vdot(r, r).real
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x, it, math.sqrt(rr) / bnorm
