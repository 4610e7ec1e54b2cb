import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from invop import Conv, Diag, Downsample, EWSqrt, Grad, Hess, Identity, Kind, SelectorPatch, SumPatches, to_dense
from invop.errors import ShapeError, SingularOperatorError
from invop.operators import adjoint, compose
from invop.tensor import dft, inner

from conftest import real_mtf, rel_err


def circular_conv_direct(x, kernel, dims):
    """Spatial-domain circular convolution by explicit summation over shifts."""
    out = np.zeros_like(x)
    shifts = [range(x.shape[d]) for d in dims]
    for offs in np.ndindex(*[len(s) for s in shifts]):
        idx = [slice(None)] * x.ndim
        for d, o in zip(dims, offs):
            idx[d] = o
        k = kernel[tuple(idx)]
        shifted = x
        for d, o in zip(dims, offs):
            shifted = np.roll(shifted, o, axis=d)
        out = out + k * shifted
    return out


def adjoint_gap(op, rng, cplx=False):
    f = rng.standard_normal(op.sizein)
    v = rng.standard_normal(op.sizeout)
    if cplx:
        f = f + 1j * rng.standard_normal(op.sizein)
        v = v + 1j * rng.standard_normal(op.sizeout)
    lhs = inner(op.apply(f), v)
    rhs = inner(f, op.apply_adjoint(v))
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)


def test_conv_matches_direct_summation(rng):
    kernel = rng.standard_normal((6, 5, 2))
    x = rng.standard_normal((6, 5, 2))
    h = Conv(dft(kernel, (0, 1)), dims=(0, 1))
    assert rel_err(h.apply(x), circular_conv_direct(x, kernel, (0, 1))) < 1e-12


def test_complex_conv_matches_direct(rng):
    kernel = rng.standard_normal((5, 4)) + 1j * rng.standard_normal((5, 4))
    x = rng.standard_normal((5, 4)) + 1j * rng.standard_normal((5, 4))
    h = Conv(dft(kernel), is_real=False)
    assert rel_err(h.apply(x), circular_conv_direct(x, kernel, (0, 1))) < 1e-12
    assert adjoint_gap(h, rng, cplx=True) < 1e-12


def test_conv_rejects_asymmetric_mtf_when_real(rng):
    with pytest.raises(ValueError):
        Conv(rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4)))


def test_conv_broadcast_mtf(rng):
    m = real_mtf(rng, (6, 6, 1), (0, 1))
    h = Conv(m, dims=(0, 1), sizein=(6, 6, 3))
    x = rng.standard_normal((6, 6, 3))
    y = h.apply(x)
    for c in range(3):
        assert rel_err(y[..., c], Conv(m[..., 0]).apply(x[..., c])) < 1e-13


def test_conv_inverse_and_singular(rng):
    m = real_mtf(rng, (8,))
    h = Conv(m)
    x = rng.standard_normal(8)
    assert rel_err(h.apply_inverse(h.apply(x)), x) < 1e-10
    m0 = m.copy()
    m0[0] = 0.0
    with pytest.raises(SingularOperatorError):
        Conv(m0).apply_inverse(x)


def test_conv_norm_closed_form(rng):
    h = Conv(real_mtf(rng, (6, 6)))
    assert h.norm() == pytest.approx(np.linalg.norm(to_dense(h), 2), rel=1e-12)


def test_grad_dense_oracle():
    g = Grad((3, 4), dims=(0, 1))
    d = to_dense(g)
    x = np.arange(12.0).reshape(3, 4) ** 2
    y = (d @ x.ravel()).reshape(3, 4, 2)
    np.testing.assert_allclose(y[..., 0], np.roll(x, -1, 0) - x)
    np.testing.assert_allclose(y[..., 1], np.roll(x, -1, 1) - x)


def test_grad_normal_is_laplacian_conv(rng):
    g = Grad((6, 5), dims=(0, 1))
    n = compose(adjoint(g), g)
    assert n.kind is Kind.CONV
    x = rng.standard_normal((6, 5))
    lap = -sum(np.roll(x, 1, a) + np.roll(x, -1, a) - 2 * x for a in (0, 1))
    assert rel_err(n.apply(x), lap) < 1e-12


def test_hess_norm_is_frobenius(rng):
    """Stored components (D11, sqrt2 D12, D22) give the same Euclidean norm
    as the full four-entry Hessian."""
    x = rng.standard_normal((6, 6))
    h = Hess((6, 6)).apply(x)
    d = [lambda v: np.roll(v, -1, 0) - v, lambda v: np.roll(v, -1, 1) - v]
    dd = lambda v: np.roll(v, -1, 0) - 2 * v + np.roll(v, 1, 0)
    full = [dd(x), d[0](d[1](x)), d[1](d[0](x)), np.roll(x, -1, 1) - 2 * x + np.roll(x, 1, 1)]
    np.testing.assert_allclose(np.sum(h * h, axis=-1), sum(c * c for c in full), rtol=1e-10, atol=1e-12)


def test_hess_normal_is_conv(rng):
    h = Hess((6, 6, 2), dims=(0, 1))
    n = compose(adjoint(h), h)
    assert n.kind is Kind.CONV
    x = rng.standard_normal((6, 6, 2))
    assert rel_err(n.apply(x), h.apply_adjoint(h.apply(x))) < 1e-12


def test_downsample_and_selector(rng):
    x = rng.standard_normal((6, 4))
    np.testing.assert_array_equal(Downsample((6, 4), (2, 2)).apply(x), x[::2, ::2])
    np.testing.assert_array_equal(SelectorPatch((6, 4), (1, 2), (3, 2)).apply(x), x[1:4, 2:4])
    np.testing.assert_array_equal(SelectorPatch.centered((6, 4), (2, 2)).apply(x), x[2:4, 1:3])
    with pytest.raises(ShapeError):
        Downsample((5, 4), (2, 2))
    with pytest.raises(ShapeError):
        SelectorPatch((6, 4), (5, 0), (2, 2))


def test_sumpatches(rng):
    x = rng.standard_normal((4, 6))
    expected = x[:2, :3] + x[2:, :3] + x[:2, 3:] + x[2:, 3:]
    np.testing.assert_allclose(SumPatches((4, 6), (2, 3)).apply(x), expected)


def test_diag_scaled_identity_flag(rng):
    assert Diag(np.full(4, 2.0)).is_scaled_identity
    assert not Diag(np.arange(1.0, 5.0)).is_scaled_identity
    assert Identity((3,)).is_scaled_identity
    with pytest.raises(SingularOperatorError):
        Diag(np.array([1.0, 0.0])).apply_inverse(np.ones(2))


def test_ewsqrt_jacobian(rng):
    op = EWSqrt((5,))
    x = rng.uniform(1, 2, 5)
    v = rng.standard_normal(5)
    np.testing.assert_allclose(op.apply_jacobian_t(v, x), v / (2 * np.sqrt(x)))


OPERATOR_FACTORIES = {
    "conv": lambda r: Conv(real_mtf(r, (6, 5, 2), (0, 1)), dims=(0, 1)),
    "grad": lambda r: Grad((5, 4, 2), dims=(0, 1)),
    "hess": lambda r: Hess((5, 6), dims=(0, 1)),
    "downsample": lambda r: Downsample((6, 4), (3, 2)),
    "selector": lambda r: SelectorPatch((6, 5), (1, 2), (4, 3)),
    "sumpatches": lambda r: SumPatches((4, 6), (2, 3)),
    "diag": lambda r: Diag(r.standard_normal((3, 4))),
    "identity": lambda r: Identity((3, 2)),
}


@pytest.mark.parametrize("name", sorted(OPERATOR_FACTORIES))
@given(seed=st.integers(0, 2**32 - 1))
def test_adjoint_identity_property(name, seed):
    r = np.random.default_rng(seed)
    assert adjoint_gap(OPERATOR_FACTORIES[name](r), r) < 1e-10


@pytest.mark.parametrize("name", sorted(OPERATOR_FACTORIES))
def test_adjoint_matches_dense_transpose(name, rng):
    op = OPERATOR_FACTORIES[name](rng)
    d = to_dense(op)
    v = rng.standard_normal(op.sizeout)
    np.testing.assert_allclose(np.ravel(op.apply_adjoint(v)), d.T @ v.ravel(), atol=1e-12)
