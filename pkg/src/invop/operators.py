"""Operator algebra: the ``Map``/``LinOp`` abstraction, generic composite nodes,
the construction-time rewrite engine, and the precompute/memoize caching layer.

Every public method (``apply``, ``apply_adjoint``, ``apply_jacobian_t``,
``apply_inverse``) validates its input shape and manages the memo slot before
calling the matching core method (``_apply`` ...), which subclasses implement.

Operators combine through :func:`compose` (``A @ B``), :func:`add` (``A + B``),
:func:`scale` (``c * A``), :func:`adjoint` (``A.T``) and :func:`power`
(``A ** -1``). Each of these consults a rule table keyed on
``(operation, kind_left, kind_right)`` and returns a simplified node when a rule
fires, for instance ``Conv(m).T @ Conv(m) -> Conv(|m|**2)``.
"""

import enum
import hashlib
import math
import threading
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import (
    NotDifferentiableError,
    NotInvertibleError,
    NotLinearError,
    ShapeError,
)
from .tensor import inner

SINGULAR_TOL = 1e-14
NORM_SEED = 0x5EED
NORM_TOL = 1e-6
NORM_MAXIT = 500

_MEMO_METHODS = ("apply", "apply_adjoint", "apply_jacobian_t", "apply_inverse")


class Kind(enum.Enum):
    CONV = "Conv"
    GRAD = "Grad"
    HESS = "Hess"
    DOWNSAMPLE = "Downsample"
    SELECTOR_PATCH = "SelectorPatch"
    SUM_PATCHES = "SumPatches"
    DIAG = "Diag"
    IDENTITY = "Identity"
    EWSQRT = "EWSqrt"
    COMPOSITION = "Composition"
    SUMMATION = "Summation"
    ADJOINT = "Adjoint"
    INVERSION = "Inversion"
    SCALED = "Scaled"


def digest(*arrays):
    """64-bit digest of the raw bytes of ``arrays`` (plus lengths and dtypes)."""
    h = hashlib.blake2b(digest_size=8)
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(f"{a.dtype.str}{a.shape}{a.nbytes}".encode())
        h.update(memoryview(a).cast("B"))
    return h.digest()


class Map:
    """A (possibly nonlinear) map from arrays of shape ``sizein`` to ``sizeout``."""

    kind = None
    is_linear = False
    is_differentiable = True

    def __init__(self, sizein, sizeout):
        self.sizein = tuple(int(s) for s in sizein)
        self.sizeout = tuple(int(s) for s in sizeout)
        for s in self.sizein + self.sizeout:
            if s < 1:
                raise ShapeError(f"extents must be >= 1, got {self.sizein} -> {self.sizeout}")
        self.do_precomputation = False
        self.memoize_opts = dict.fromkeys(_MEMO_METHODS, False)
        self.ncalls = Counter()
        self._memo = {}
        self._lock = threading.Lock()

    @property
    def is_invertible(self):
        return False

    @property
    def is_scaled_identity(self):
        return False

    def __repr__(self):
        return f"{type(self).__name__}({self.sizein} -> {self.sizeout})"

    # -- caching ----------------------------------------------------------------

    def set_memoize(self, method="apply", on=True):
        if method not in self.memoize_opts:
            raise ValueError(f"cannot memoize {method!r}")
        with self._lock:
            self.memoize_opts[method] = bool(on)
            if not on:
                self._memo.pop(method, None)

    def set_precompute(self, on=True):
        self.do_precomputation = bool(on)

    def _cached(self, method, core, *args):
        if not self.memoize_opts[method]:
            self.ncalls[method] += 1
            return core(*args)
        key = digest(*args)
        with self._lock:
            slot = self._memo.get(method)
            if slot is not None and slot[0] == key:
                return slot[1].copy()
        self.ncalls[method] += 1
        out = core(*args)
        with self._lock:
            self._memo[method] = (key, out.copy())
        return out

    # -- interface methods ---------------------------------------------------------

    def _check(self, x, shape, what):
        x = np.asarray(x)
        if x.shape != shape:
            raise ShapeError(f"{type(self).__name__}.{what}: expected shape {shape}, got {x.shape}")
        if x.dtype.kind not in "fc":
            x = x.astype(np.float64)
        return x

    def apply(self, x):
        x = self._check(x, self.sizein, "apply")
        return self._cached("apply", self._apply, x)

    __call__ = apply

    def apply_jacobian_t(self, v, x):
        """Return ``[J{x}]^T v``, the transposed Jacobian at ``x`` applied to ``v``."""
        if not self.is_differentiable:
            raise NotDifferentiableError(f"{self!r} is not differentiable")
        v = self._check(v, self.sizeout, "apply_jacobian_t")
        x = self._check(x, self.sizein, "apply_jacobian_t")
        return self._cached("apply_jacobian_t", self._apply_jacobian_t, v, x)

    def apply_adjoint(self, v):
        if not self.is_linear:
            raise NotLinearError(f"{self!r} is not linear")
        v = self._check(v, self.sizeout, "apply_adjoint")
        return self._cached("apply_adjoint", self._apply_adjoint, v)

    def apply_inverse(self, y):
        if not self.is_invertible:
            raise NotInvertibleError(f"{self!r} is not invertible")
        y = self._check(y, self.sizeout, "apply_inverse")
        return self._cached("apply_inverse", self._apply_inverse, y)

    # -- core methods ------------------------------------------------------------

    def _apply(self, x):
        raise NotImplementedError

    def _apply_jacobian_t(self, v, x):
        raise NotDifferentiableError(f"{self!r} has no Jacobian")

    def _apply_adjoint(self, v):
        raise NotLinearError(f"{self!r} is not linear")

    def _apply_inverse(self, y):
        raise NotInvertibleError(f"{self!r} is not invertible")

    def _norm_closed_form(self):
        return None

    # -- algebra -----------------------------------------------------------------

    def __matmul__(self, other):
        if isinstance(other, Map):
            return compose(self, other)
        if isinstance(other, np.ndarray):
            return self.apply(other)
        return NotImplemented

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        if isinstance(other, Map):
            return compose(self, other)
        return NotImplemented

    def __rmul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return NotImplemented

    def __add__(self, other):
        if isinstance(other, Map):
            return add(self, other)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, Map):
            return add(self, scale(other, -1.0))
        return NotImplemented

    def __neg__(self):
        return scale(self, -1.0)

    def __pow__(self, k):
        return power(self, k)

    @property
    def T(self):
        return adjoint(self)

    def norm(self):
        return estimate_norm(self).value


class LinOp(Map):
    """Linear map; the transposed Jacobian is the adjoint at every point."""

    is_linear = True

    def _apply_jacobian_t(self, v, x):
        return self._apply_adjoint(v)


def to_dense(op):
    """Dense matrix of a linear operator, column by column (small sizes only)."""
    n = math.prod(op.sizein)
    cols = []
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        cols.append(np.ravel(op.apply(e.reshape(op.sizein))))
    return np.stack(cols, axis=1)


# -- generic composite nodes -----------------------------------------------------


class Composition(Map):
    """``children[0] o children[1] o ... o children[-1]`` (rightmost applied first)."""

    kind = Kind.COMPOSITION

    def __init__(self, children):
        children = list(children)
        if len(children) < 2:
            raise ValueError("a composition needs at least two children")
        for left, right in zip(children, children[1:]):
            if left.sizein != right.sizeout:
                raise ShapeError(f"cannot compose {left!r} with {right!r}")
        super().__init__(children[-1].sizein, children[0].sizeout)
        self.children = children
        self.is_linear = all(c.is_linear for c in children)
        self.is_differentiable = all(c.is_differentiable for c in children)

    @property
    def is_invertible(self):
        return all(c.is_invertible for c in self.children)

    def _apply(self, x):
        for c in reversed(self.children):
            x = c.apply(x)
        return x

    def _apply_adjoint(self, v):
        for c in self.children:
            v = c.apply_adjoint(v)
        return v

    def _apply_inverse(self, y):
        for c in self.children:
            y = c.apply_inverse(y)
        return y

    def _apply_jacobian_t(self, v, x):
        # forward pass storing intermediate points, then chain rule backwards
        points = [x]
        for c in reversed(self.children[1:]):
            points.append(c.apply(points[-1]))
        for c, p in zip(self.children, reversed(points)):
            v = c.apply_jacobian_t(v, p)
        return v


class Summation(Map):
    kind = Kind.SUMMATION

    def __init__(self, children):
        children = list(children)
        if len(children) < 2:
            raise ValueError("a summation needs at least two children")
        for c in children[1:]:
            if c.sizein != children[0].sizein or c.sizeout != children[0].sizeout:
                raise ShapeError(f"cannot add {children[0]!r} and {c!r}")
        super().__init__(children[0].sizein, children[0].sizeout)
        self.children = children
        self.is_linear = all(c.is_linear for c in children)
        self.is_differentiable = all(c.is_differentiable for c in children)

    def _apply(self, x):
        out = self.children[0].apply(x)
        for c in self.children[1:]:
            out = out + c.apply(x)
        return out

    def _apply_adjoint(self, v):
        out = self.children[0].apply_adjoint(v)
        for c in self.children[1:]:
            out = out + c.apply_adjoint(v)
        return out

    def _apply_jacobian_t(self, v, x):
        out = self.children[0].apply_jacobian_t(v, x)
        for c in self.children[1:]:
            out = out + c.apply_jacobian_t(v, x)
        return out


class Adjoint(LinOp):
    kind = Kind.ADJOINT

    def __init__(self, op):
        if not op.is_linear:
            raise NotLinearError(f"adjoint of nonlinear {op!r}")
        super().__init__(op.sizeout, op.sizein)
        self.op = op

    def _apply(self, x):
        return self.op.apply_adjoint(x)

    def _apply_adjoint(self, v):
        return self.op.apply(v)

    def _norm_closed_form(self):
        return self.op._norm_closed_form()


class Inversion(Map):
    kind = Kind.INVERSION

    def __init__(self, op):
        if not op.is_invertible:
            raise NotInvertibleError(f"{op!r} is not invertible")
        super().__init__(op.sizeout, op.sizein)
        self.op = op
        self.is_linear = op.is_linear
        self.is_differentiable = op.is_linear

    @property
    def is_invertible(self):
        return True

    def _apply(self, x):
        return self.op.apply_inverse(x)

    def _apply_inverse(self, y):
        return self.op.apply(y)

    def _apply_adjoint(self, v):
        return adjoint(self.op).apply_inverse(v)

    def _apply_jacobian_t(self, v, x):
        return self._apply_adjoint(v)


class Scaled(Map):
    kind = Kind.SCALED

    def __init__(self, op, factor):
        super().__init__(op.sizein, op.sizeout)
        self.op = op
        self.factor = factor
        self.is_linear = op.is_linear
        self.is_differentiable = op.is_differentiable

    @property
    def is_invertible(self):
        return self.factor != 0 and self.op.is_invertible

    def _apply(self, x):
        return self.factor * self.op.apply(x)

    def _apply_adjoint(self, v):
        return np.conj(self.factor) * self.op.apply_adjoint(v)

    def _apply_inverse(self, y):
        return self.op.apply_inverse(y) / self.factor

    def _apply_jacobian_t(self, v, x):
        return np.conj(self.factor) * self.op.apply_jacobian_t(v, x)

    def _norm_closed_form(self):
        inner_norm = self.op._norm_closed_form()
        return None if inner_norm is None else abs(self.factor) * inner_norm


# -- rewrite engine --------------------------------------------------------------

_RULES = {}


def rule(operation, *kinds):
    """Register a rewrite rule for ``operation`` on the given node kinds.

    A rule returns the simplified node, or ``None`` when it does not apply.
    For unary and binary operations ``None`` as a kind matches anything.
    """
    if len(kinds) < 2:
        kinds = kinds + (None,) * (2 - len(kinds))

    def register(func):
        _RULES.setdefault((operation, *kinds), []).append(func)
        return func

    return register


def _fire(operation, *nodes, extra=()):
    kinds = [n.kind for n in nodes]
    keys = [(operation, *kinds)]
    if len(nodes) == 2:
        keys += [(operation, kinds[0], None), (operation, None, kinds[1])]
    elif len(nodes) == 1:
        keys = [(operation, kinds[0], None), (operation, None, None)]
    for key in keys:
        for func in _RULES.get(key, ()):
            out = func(*nodes, *extra)
            if out is not None:
                return out
    return None


def _split_scalar(node):
    """Return ``(factor, node)`` with scalar factors pulled off."""
    if node.kind is Kind.SCALED:
        return node.factor, node.op
    if node.is_scaled_identity:
        return node.scalar, None
    return 1.0, node


def _reduce_chain(chain):
    # Pull scalars out only across linear (hence homogeneous) prefixes.
    factor = 1.0
    reduced = []
    prefix_linear = True
    for node in chain:
        if prefix_linear and (node.kind is Kind.SCALED or node.is_scaled_identity):
            c, rest = _split_scalar(node)
            factor = factor * c
            if rest is not None:
                reduced.append(rest)
        else:
            reduced.append(node)
        prefix_linear = prefix_linear and node.is_linear
    chain = reduced

    changed = True
    while changed and len(chain) > 1:
        changed = False
        for i in range(len(chain) - 2):
            out = _fire("compose3", *chain[i:i + 3])
            if out is not None:
                chain[i:i + 3] = [out]
                changed = True
                break
        if changed:
            continue
        for i in range(len(chain) - 1):
            out = _fire("compose", chain[i], chain[i + 1])
            if out is not None:
                chain[i:i + 2] = [out]
                changed = True
                break
    return factor, chain


def compose(a, b):
    """Return the (simplified) composition ``a o b``."""
    if a.sizein != b.sizeout:
        raise ShapeError(f"cannot compose {a!r} (sizein {a.sizein}) with {b!r} (sizeout {b.sizeout})")
    chain = []
    for node in (a, b):
        chain.extend(node.children if node.kind is Kind.COMPOSITION else [node])
    factor, chain = _reduce_chain(chain)
    if not chain:
        from .linops import Identity

        node = Identity(b.sizein)
    elif len(chain) == 1:
        node = chain[0]
    else:
        node = Composition(chain)
    return scale(node, factor)


def add(a, b):
    """Return the (simplified) sum ``a + b``."""
    if a.sizein != b.sizein or a.sizeout != b.sizeout:
        raise ShapeError(f"cannot add {a!r} and {b!r}")
    terms = []
    for node in (a, b):
        for t in node.children if node.kind is Kind.SUMMATION else [node]:
            for i, existing in enumerate(terms):
                merged = _fire("add", existing, t)
                if merged is None:
                    merged = _fire("add", t, existing)
                if merged is not None:
                    terms[i] = merged
                    break
            else:
                terms.append(t)
    if len(terms) == 1:
        return terms[0]
    return Summation(terms)


def scale(op, factor):
    """Return ``factor * op``."""
    if not np.isscalar(factor):
        raise TypeError("scale factor must be a scalar")
    if factor == 1:
        return op
    out = _fire("scale", op, extra=(factor,))
    if out is not None:
        return out
    if op.kind is Kind.SCALED:
        return scale(op.op, op.factor * factor)
    return Scaled(op, factor)


def adjoint(op):
    if not op.is_linear:
        raise NotLinearError(f"adjoint of nonlinear {op!r}")
    if op.kind is Kind.ADJOINT:
        return op.op
    if op.kind is Kind.SCALED:
        return scale(adjoint(op.op), np.conj(op.factor))
    if op.kind is Kind.COMPOSITION:
        out = adjoint(op.children[-1])
        for c in reversed(op.children[:-1]):
            out = compose(out, adjoint(c))
        return out
    if op.kind is Kind.SUMMATION:
        out = adjoint(op.children[0])
        for c in op.children[1:]:
            out = add(out, adjoint(c))
        return out
    if op.kind is Kind.INVERSION:
        return power(adjoint(op.op), -1)
    out = _fire("adjoint", op)
    return out if out is not None else Adjoint(op)


def power(op, k):
    """``op ** k`` for ``k == -1`` or ``k >= 0``."""
    k = int(k)
    if k == -1:
        if op.kind is Kind.INVERSION:
            return op.op
        if op.kind is Kind.SCALED:
            return scale(power(op.op, -1), 1.0 / op.factor)
        if op.kind is Kind.COMPOSITION:
            out = power(op.children[0], -1)
            for c in op.children[1:]:
                out = compose(power(c, -1), out)
            return out
        out = _fire("inverse", op)
        if out is not None:
            return out
        if not op.is_invertible:
            raise NotInvertibleError(f"{op!r} is not invertible")
        return Inversion(op)
    if k < 0:
        raise ValueError("only k = -1 or k >= 0 are supported")
    if op.sizein != op.sizeout:
        raise ShapeError("power of a non-square operator")
    if k == 0:
        from .linops import Identity

        return Identity(op.sizein)
    out = op
    for _ in range(k - 1):
        out = compose(out, op)
    return out


# -- norms -----------------------------------------------------------------------


@dataclass
class NormEstimate:
    value: float
    iterations: int
    tolerance: float


def estimate_norm(op, tol=NORM_TOL, maxit=NORM_MAXIT):
    """Spectral norm of a linear operator.

    Closed forms are used where they exist (convolution, diagonal, identity);
    otherwise power iteration on ``H^T H`` from a fixed-seed random start,
    stopping when the Rayleigh quotient changes by less than ``tol`` (relative).
    """
    if not op.is_linear:
        raise NotLinearError(f"norm of nonlinear {op!r}")
    closed = op._norm_closed_form()
    if closed is not None:
        return NormEstimate(float(closed), 0, 0.0)
    rng = np.random.default_rng(NORM_SEED)
    x = rng.standard_normal(op.sizein)
    x /= np.linalg.norm(x)
    lam = 0.0
    it = 0
    for it in range(1, maxit + 1):
        y = op.apply_adjoint(op.apply(x))
        if np.iscomplexobj(y):
            y = y.real
        lam_new = inner(y, x)
        ny = np.linalg.norm(y)
        if ny == 0:
            return NormEstimate(0.0, it, tol)
        x = y / ny
        if abs(lam_new - lam) <= tol * abs(lam_new):
            lam = lam_new
            break
        lam = lam_new
    return NormEstimate(math.sqrt(max(lam, 0.0)), it, tol)
