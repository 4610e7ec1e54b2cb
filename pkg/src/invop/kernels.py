"""Hot pointwise and stencil kernels.

Each kernel exists twice: a numba-compiled loop (``*_nb``) and a vectorized
numpy version (``*_np``). The public name is bound to one of them at import
time according to :data:`invop._accel.USE_NUMBA`. Stencil kernels operate on
a ``(before, n, after)`` view of the input so that a single compiled loop
serves any axis of any rank.
"""

import math

import numpy as np

from ._accel import jit, pick

# -- circular finite differences along one axis -----------------------------------


@jit
def _diff_fwd_nb(x):
    a, n, b = x.shape
    out = np.empty_like(x)
    for i in range(a):
        for k in range(n):
            kp = k + 1 if k + 1 < n else 0
            for j in range(b):
                out[i, k, j] = x[i, kp, j] - x[i, k, j]
    return out


@jit
def _diff_fwd_adj_nb(x):
    a, n, b = x.shape
    out = np.empty_like(x)
    for i in range(a):
        for k in range(n):
            km = k - 1 if k > 0 else n - 1
            for j in range(b):
                out[i, k, j] = x[i, km, j] - x[i, k, j]
    return out


@jit
def _diff_second_nb(x):
    a, n, b = x.shape
    out = np.empty_like(x)
    for i in range(a):
        for k in range(n):
            kp = k + 1 if k + 1 < n else 0
            km = k - 1 if k > 0 else n - 1
            for j in range(b):
                out[i, k, j] = x[i, kp, j] - 2.0 * x[i, k, j] + x[i, km, j]
    return out


def _diff_fwd_np(x):
    return np.roll(x, -1, axis=1) - x


def _diff_fwd_adj_np(x):
    return np.roll(x, 1, axis=1) - x


def _diff_second_np(x):
    return np.roll(x, -1, axis=1) - 2.0 * x + np.roll(x, 1, axis=1)


def _along(kernel, x, axis):
    shape = x.shape
    x3 = np.ascontiguousarray(x).reshape(
        math.prod(shape[:axis]), shape[axis], math.prod(shape[axis + 1:])
    )
    return kernel(x3).reshape(shape)


_diff_fwd = pick(_diff_fwd_nb, _diff_fwd_np)
_diff_fwd_adj = pick(_diff_fwd_adj_nb, _diff_fwd_adj_np)
_diff_second = pick(_diff_second_nb, _diff_second_np)


def diff_forward(x, axis):
    """``y[n] = x[n + e_axis] - x[n]`` with circular wrap."""
    return _along(_diff_fwd, x, axis)


def diff_forward_adjoint(x, axis):
    """Adjoint of :func:`diff_forward`: ``y[n] = x[n - e_axis] - x[n]``."""
    return _along(_diff_fwd_adj, x, axis)


def diff_second(x, axis):
    """Centered second difference ``x[n+1] - 2 x[n] + x[n-1]`` (self-adjoint)."""
    return _along(_diff_second, x, axis)


# -- group soft thresholding (prox of the l2,1 mixed norm) -----------------------


@jit
def _group_shrink_nb(z, alpha):
    m, g = z.shape
    out = np.empty_like(z)
    for i in range(m):
        s = 0.0
        for j in range(g):
            s += z[i, j] * z[i, j]
        nrm = math.sqrt(s)
        f = 1.0 - alpha / nrm if nrm > alpha else 0.0
        for j in range(g):
            out[i, j] = f * z[i, j]
    return out


def _group_shrink_np(z, alpha):
    nrm = np.sqrt(np.sum(z * z, axis=1, keepdims=True))
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(nrm > alpha, 1.0 - alpha / nrm, 0.0)
    return f * z


group_shrink = pick(_group_shrink_nb, _group_shrink_np)


# -- symmetric 2x2 eigen-shrinkage (prox of the Schatten-1 norm) -----------------
#
# A row (a, w, c) encodes [[a, w/sqrt2], [w/sqrt2, c]]; Euclidean norm on rows is
# then the Frobenius norm of the matrix.

_SQRT2 = math.sqrt(2.0)


@jit
def _sym_eig_shrink_nb(z, alpha):
    m = z.shape[0]
    out = np.empty_like(z)
    r2 = math.sqrt(2.0)
    for i in range(m):
        a = z[i, 0]
        b = z[i, 1] / r2
        c = z[i, 2]
        mean = 0.5 * (a + c)
        half = 0.5 * (a - c)
        d = math.sqrt(half * half + b * b)
        l1 = mean + d
        l2 = mean - d
        theta = 0.5 * math.atan2(2.0 * b, a - c)
        cs = math.cos(theta)
        sn = math.sin(theta)
        m1 = math.copysign(max(abs(l1) - alpha, 0.0), l1)
        m2 = math.copysign(max(abs(l2) - alpha, 0.0), l2)
        out[i, 0] = m1 * cs * cs + m2 * sn * sn
        out[i, 1] = r2 * (m1 - m2) * cs * sn
        out[i, 2] = m1 * sn * sn + m2 * cs * cs
    return out


def sym_eigvals(z):
    """Eigenvalues ``(l1, l2)``, ``l1 >= l2``, of rows encoded as above."""
    a, b, c = z[:, 0], z[:, 1] / _SQRT2, z[:, 2]
    mean = 0.5 * (a + c)
    d = np.hypot(0.5 * (a - c), b)
    return mean + d, mean - d


def _sym_eig_shrink_np(z, alpha):
    a, b, c = z[:, 0], z[:, 1] / _SQRT2, z[:, 2]
    l1, l2 = sym_eigvals(z)
    theta = 0.5 * np.arctan2(2.0 * b, a - c)
    cs, sn = np.cos(theta), np.sin(theta)
    m1 = np.sign(l1) * np.maximum(np.abs(l1) - alpha, 0.0)
    m2 = np.sign(l2) * np.maximum(np.abs(l2) - alpha, 0.0)
    out = np.empty_like(z)
    out[:, 0] = m1 * cs * cs + m2 * sn * sn
    out[:, 1] = _SQRT2 * (m1 - m2) * cs * sn
    out[:, 2] = m1 * sn * sn + m2 * cs * cs
    return out


sym_eig_shrink = pick(_sym_eig_shrink_nb, _sym_eig_shrink_np)


# -- hyperbolic (smoothed l2,1) value and gradient --------------------------------


@jit
def _hyperbolic_nb(z, eps):
    m, g = z.shape
    grad = np.empty_like(z)
    total = 0.0
    e2 = eps * eps
    for i in range(m):
        s = 0.0
        for j in range(g):
            s += z[i, j] * z[i, j]
        # eps added last, as in the numpy path, so both round identically
        r = math.sqrt(s + e2)
        total += r
        for j in range(g):
            grad[i, j] = z[i, j] / r
    return total, grad


def _hyperbolic_np(z, eps):
    r = np.sqrt(np.sum(z * z, axis=1, keepdims=True) + eps * eps)
    return float(np.sum(r)), z / r


hyperbolic = pick(_hyperbolic_nb, _hyperbolic_np)

NUMBA_KERNELS = {
    "diff_forward": (_diff_fwd_nb, _diff_fwd_np),
    "diff_forward_adjoint": (_diff_fwd_adj_nb, _diff_fwd_adj_np),
    "diff_second": (_diff_second_nb, _diff_second_np),
    "group_shrink": (_group_shrink_nb, _group_shrink_np),
    "sym_eig_shrink": (_sym_eig_shrink_nb, _sym_eig_shrink_np),
    "hyperbolic": (_hyperbolic_nb, _hyperbolic_np),
}
