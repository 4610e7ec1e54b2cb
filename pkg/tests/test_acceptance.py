"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (the summary appears
under "acceptance criteria") or as a script: ``python tests/test_acceptance.py``.
"""

import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from _report import record  # noqa: E402
from conftest import real_mtf, rel_err  # noqa: E402
from oracles import (  # noqa: E402
    fd_gradient_error,
    prox_l2_composed_gd,
    prox_mixnorm_composed_dual,
    prox_nonneg_composed_dual,
)

from invop import (  # noqa: E402
    Conv,
    Diag,
    Downsample,
    GoodRoughness,
    Grad,
    Hess,
    Hyperbolic,
    Identity,
    Kind,
    L2Residual,
    MixNorm21,
    NonNegIndicator,
    SelectorPatch,
    SumPatches,
    add,
    adjoint,
    compose,
    conjugate_gradient,
    power,
    scale,
)
from invop.deconv import (  # noqa: E402
    PsfSpec,
    ReconSpec,
    SimulationSpec,
    airy_profile,
    make_psf,
    make_psfs,
    reconstruct,
    simulate,
    sweep_lambda,
    synthetic_phantom,
)
from invop.operators import Adjoint, Composition, Inversion, Scaled, Summation  # noqa: E402
from invop.solvers import SolverConfig, StepRelative, compute_snr  # noqa: E402
from invop.tensor import inner  # noqa: E402


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0

    @property
    def ok(self):
        return self.elapsed < self.seconds

    def __str__(self):
        return f"{self.elapsed:.1f}s / {self.seconds:.0f}s"


# -- 1 ---------------------------------------------------------------------------


def _linear_operator_zoo(rng):
    shape = (6, 4, 2)
    conv = Conv(real_mtf(rng, shape, (0, 1)), dims=(0, 1))
    cconv = Conv(real_mtf(rng, (5, 6)) + 1j * rng.standard_normal((5, 6)), is_real=False)
    grad = Grad(shape, (0, 1))
    sel = SelectorPatch(grad.sizeout, (1, 0, 0, 0), (4, 3, 2, 2))
    return {
        "Conv": (conv, False),
        "Conv(complex)": (cconv, True),
        "Grad": (grad, False),
        "Hess": (Hess((6, 5, 2), (0, 1)), False),
        "Downsample": (Downsample(shape, (2, 2, 1)), False),
        "SelectorPatch": (SelectorPatch(shape, (1, 1, 0), (4, 2, 2)), False),
        "SumPatches": (SumPatches(shape, (3, 2, 2)), False),
        "Diag": (Diag(rng.standard_normal(shape)), False),
        "Identity": (Identity(shape), False),
        "Composition": (compose(sel, grad), False),
        "Summation": (Summation([grad, grad]), False),
        "Adjoint": (Adjoint(grad), False),
        "Inversion": (Inversion(Diag(rng.uniform(1, 2, shape))), False),
        "Scaled": (Scaled(grad, -1.7), False),
    }


def criterion_1():
    rng = np.random.default_rng(101)
    worst, worst_kind = 0.0, None
    with Budget(10) as b:
        for name, (op, cplx) in _linear_operator_zoo(rng).items():
            for _ in range(20):
                f = rng.standard_normal(op.sizein)
                v = rng.standard_normal(op.sizeout)
                if cplx:
                    f = f + 1j * rng.standard_normal(op.sizein)
                    v = v + 1j * rng.standard_normal(op.sizeout)
                lhs, rhs = inner(op.apply(f), v), inner(f, op.apply_adjoint(v))
                err = abs(lhs - rhs) / max(abs(lhs), abs(rhs))
                if err > worst:
                    worst, worst_kind = err, name
    kinds = len(_linear_operator_zoo(rng))
    ok = worst <= 1e-10 and b.ok
    return record(1, ok, f"adjoint identity, {kinds} kinds x 20 pairs, worst rel err {worst:.2e} ({worst_kind}) <= 1e-10 [{b}]")


# -- 2 ---------------------------------------------------------------------------


def criterion_2():
    rng = np.random.default_rng(202)
    shape = (10, 10, 2)
    h = Conv(real_mtf(rng, shape, (0, 1)), dims=(0, 1))
    g = Grad(shape, (0, 1))
    data = rng.standard_normal(shape)
    cases = [
        ("L2 o Conv", L2Residual(shape, data) @ h, 1e-5),
        ("Hyperbolic o Grad", Hyperbolic(g.sizeout, 1e-7) @ g, 1e-5),
        ("GoodRoughness", GoodRoughness(g, 1e-2), 1e-4),
        ("sum + scale", L2Residual(shape, data) @ h + 5e-3 * (Hyperbolic(g.sizeout) @ g) + 2e-2 * GoodRoughness(g), 1e-4),
    ]
    parts, ok = [], True
    with Budget(30) as b:
        for name, cost, tol in cases:
            worst = max(fd_gradient_error(cost, rng.uniform(0.1, 1.0, shape), rng) for _ in range(5))
            ok &= worst <= tol
            parts.append(f"{name} {worst:.1e}<={tol:g}")
    ok &= b.ok
    return record(2, ok, "gradients vs central differences, 5 points each: " + ", ".join(parts) + f" [{b}]")


# -- 3 ---------------------------------------------------------------------------


def criterion_3():
    rng = np.random.default_rng(303)
    n = (8, 8)
    a = Conv(real_mtf(rng, n))
    c = Conv(real_mtf(rng, n))
    inv = Conv(real_mtf(rng, n) * 0.2 + 3.0)
    d = Downsample(n, (2, 2))
    i = Identity(n)
    rules = [
        ("Conv adjoint", adjoint(a), Adjoint(a), Kind.CONV),
        ("Conv^T Conv", compose(adjoint(a), a), Composition([Adjoint(a), a]), Kind.CONV),
        ("Conv + Conv", add(a, c), Summation([a, c]), Kind.CONV),
        ("Conv + 2.5 I", add(a, scale(i, 2.5)), Summation([a, Scaled(Identity(n), 2.5)]), Kind.CONV),
        ("D Conv D^T", compose(compose(d, a), adjoint(d)), Composition([d, a, Adjoint(d)]), Kind.CONV),
        ("Conv^-1", power(inv, -1), Inversion(inv), Kind.CONV),
        ("Diag Diag", compose(Diag(rng.uniform(1, 2, n)), Diag(rng.uniform(1, 2, n))), None, Kind.DIAG),
    ]
    worst, bad_kinds, parts = 0.0, [], []
    with Budget(10) as b:
        for name, simple, generic, kind in rules:
            if simple.kind is not kind:
                bad_kinds.append(f"{name}->{simple.kind}")
            if generic is None:
                continue
            for _ in range(10):
                x = rng.standard_normal(simple.sizein)
                worst = max(worst, rel_err(simple.apply(x), generic.apply(x)))
    ok = worst <= 1e-11 and not bad_kinds and b.ok
    kinds = "all kinds as predicted" if not bad_kinds else "unexpected kinds " + ", ".join(bad_kinds)
    return record(3, ok, f"{len(rules)} rewrite rules, simplified vs generic worst rel err {worst:.1e} <= 1e-11; {kinds} [{b}]")


# -- 4 ---------------------------------------------------------------------------


def criterion_4():
    rng = np.random.default_rng(404)
    inners = {
        "Selector": SelectorPatch((8, 8, 2), (1, 2, 0), (6, 5, 2)),
        "Downsample": Downsample((8, 8, 2), (2, 2, 1)),
        "1.7*Selector": scale(SelectorPatch((8, 8, 2), (0, 0, 0), (7, 6, 2)), 1.7),
    }
    worst, parts = 0.0, []
    with Budget(60) as b:
        for name, op in inners.items():
            z = rng.standard_normal(op.sizein)
            alpha = 0.5
            data = rng.standard_normal(op.sizeout)
            checks = [
                (MixNorm21(op.sizeout) @ op, prox_mixnorm_composed_dual(op, z, alpha)),
                (NonNegIndicator(op.sizeout) @ op, prox_nonneg_composed_dual(op, z)),
                (L2Residual(op.sizeout, data) @ op, prox_l2_composed_gd(op, data, z, alpha)),
            ]
            for cost, ref in checks:
                assert cost.is_semi_orthogonal
                worst = max(worst, float(np.max(np.abs(cost.prox(z, alpha) - ref))))
    ok = worst <= 1e-6 and b.ok
    return record(4, ok, f"semi-orthogonal composed prox (128 unknowns, 3 inners x 3 costs) vs 1e4-iteration projected-gradient oracle: max abs err {worst:.1e} <= 1e-6 [{b}]")


# -- 5 ---------------------------------------------------------------------------


def criterion_5():
    rng = np.random.default_rng(505)
    worst_err, worst_res = 0.0, 0.0
    with Budget(10) as b:
        for _ in range(5):
            h = compose(Downsample((8, 8), (2, 2)), Conv(real_mtf(rng, (8, 8))))
            data = rng.standard_normal((4, 4))
            cost = L2Residual((4, 4), data) @ h
            alpha = float(rng.uniform(0.1, 2.0))
            u = rng.standard_normal((8, 8))
            assert cost._prox_solver(alpha)[0] == "woodbury"
            x = cost.woodbury_prox(u, alpha)
            normal = add(Identity((8, 8)), scale(compose(adjoint(h), h), alpha))
            ref, _, _ = conjugate_gradient(normal, alpha * h.apply_adjoint(data) + u, tol=1e-12, maxit=1000)
            worst_err = max(worst_err, rel_err(x, ref))
            worst_res = max(worst_res, float(np.linalg.norm(alpha * h.apply_adjoint(h.apply(x) - data) + x - u)))
    ok = worst_err <= 1e-8 and worst_res <= 1e-8 and b.ok
    return record(5, ok, f"Woodbury prox on 8x8 / 2x2 downsampling vs CG(1e-12): rel err {worst_err:.1e} <= 1e-8, optimality residual {worst_res:.1e} <= 1e-8 [{b}]")


# -- 6 ---------------------------------------------------------------------------


def _small_tv_case():
    gt = synthetic_phantom((32, 32, 3), 1)[..., :1]
    otf, _ = make_psfs(PsfSpec(wavelengths=(654,), grid_shape=(48, 48)))
    data, _ = simulate(gt, otf, SimulationSpec((48, 48, 1), (32, 32, 1), 10.0, 0))
    return data, otf


def criterion_6():
    data, otf = _small_tv_case()

    def final_cost(reg, alg):
        cfg = SolverConfig(algorithm=alg, maxiter=2000, log_every=500)
        return reconstruct(ReconSpec(reg, 1e-2, solver=cfg), data, otf)[1].costs[-1]

    with Budget(300) as b:
        admm, pd = final_cost("TV", "admm"), final_cost("TV", "pd")
        fbs, vm = final_cost("STV", "fbs"), final_cost("STV", "vmlmb")
    d_tv = abs(admm - pd) / min(admm, pd)
    d_stv = abs(fbs - vm) / min(fbs, vm)
    ok = d_tv <= 0.01 and d_stv <= 0.01 and b.ok
    return record(6, ok, f"32x32x1 at iteration 2000: TV ADMM {admm:.6g} vs PD {pd:.6g} (diff {100 * d_tv:.3f}%), "
                         f"S-TV FISTA {fbs:.6g} vs VMLMB {vm:.6g} (diff {100 * d_stv:.3f}%) <= 1% [{b}]")


# -- 7 ---------------------------------------------------------------------------

SWEEP = list(np.logspace(-4, -1, 8))
SOLVER_FOR = {"TV": "admm", "HS": "admm", "STV": "fbs", "GR": "vmlmb"}


def criterion_7():
    gt = synthetic_phantom((64, 64, 3), 0)
    otf, _ = make_psfs(PsfSpec(grid_shape=(96, 96)))
    data, info = simulate(gt, otf, SimulationSpec((96, 96, 3), (56, 56, 3), 10.0, 0))
    best, parts, ok = {}, [], abs(info["measured_snr_db"] - 10.0) < 1e-9
    with Budget(1200) as b:
        for reg, alg in SOLVER_FOR.items():
            spec = ReconSpec(reg, 1e-2, solver=SolverConfig(algorithm=alg, maxiter=500, log_every=0))
            rows = sweep_lambda(spec, SWEEP, data, otf, gt, threads=1)
            snrs = [s for _, s in rows]
            k = int(np.argmax(snrs))
            best[reg] = snrs[k]
            interior = 0 < k < len(rows) - 1
            ok &= snrs[k] >= 11.0 and interior
            parts.append(f"{reg}/{alg} {snrs[k]:.2f} dB at lambda={rows[k][0]:.2g}{'' if interior else ' (EDGE)'}")
    ordering = best["HS"] >= best["TV"]
    ok &= ordering and b.ok
    return record(7, ok, "64x64x3 at 10 dB, best SNR >= 11 dB with interior peak: " + "; ".join(parts)
                  + f"; HS >= TV: {ordering} [{b}]")


# -- 8 ---------------------------------------------------------------------------


def criterion_8(tmp_path):
    gt = synthetic_phantom((32, 32, 3), 4)
    otf, _ = make_psfs(PsfSpec(grid_shape=(48, 48)))
    worst = 0.0
    for target in (10.0, 0.0, 23.7, -3.0):
        _, info = simulate(gt, otf, SimulationSpec((48, 48, 3), (40, 40, 3), target, 11))
        worst = max(worst, abs(info["measured_snr_db"] - target))
    cfg = tmp_path / "sim.json"
    cfg.write_text('{"phantom": {"shape": [32, 32, 3], "seed": 2}, "padTo": [48, 48, 3], "fovSize": [40, 40, 3], "targetSnrDb": 10}')
    outs = []
    for tag in ("a", "b"):
        cmd = [sys.executable, "-m", "invop.cli", "simulate", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / tag)]
        subprocess.run(cmd, check=True, capture_output=True)
        outs.append((tmp_path / f"{tag}_data.tensor").read_bytes())
    identical = outs[0] == outs[1]
    ok = worst <= 1e-9 and identical
    return record(8, ok, f"measured-vs-target SNR worst |diff| {worst:.1e} dB <= 1e-9; two CLI runs with seed 7 byte-identical: {identical}")


# -- 9 ---------------------------------------------------------------------------


def criterion_9():
    rng = np.random.default_rng(909)
    h = Conv(real_mtf(rng, (16, 16)))
    x = rng.standard_normal((16, 16))
    off = h.apply(x)
    h.set_memoize("apply", True)
    first = h.apply(x)
    before = h.ncalls["apply"]
    second = h.apply(x)
    calls = h.ncalls["apply"] - before
    bitwise = np.array_equal(first, second) and np.array_equal(first, off)
    cost = L2Residual((8, 8), rng.standard_normal((8, 8))) @ compose(Downsample((16, 16), (2, 2)), Conv(real_mtf(rng, (16, 16))))
    y = rng.standard_normal((16, 16))
    plain = cost.grad(y)
    cost.set_precompute(True)
    pre = cost.grad(y)
    gerr = rel_err(pre, plain)
    ok = calls == 0 and bitwise and gerr <= 1e-12
    return record(9, ok, f"memoized repeat apply: {calls} kernel calls, bit-identical {bitwise}; precomputed LS gradient rel err {gerr:.1e} <= 1e-12")


# -- 10 --------------------------------------------------------------------------


def _h_scalar(rho, rho_c):
    if rho >= rho_c:
        return 0.0
    t = math.acos(rho / rho_c)
    return (2 * t - math.sin(2 * t)) / math.pi


def criterion_10():
    spec = PsfSpec(grid_shape=(96, 96))
    h0 = outside = mid = grid = imag = neg = 0.0
    for c, lam in enumerate(spec.wavelengths):
        rc = spec.cutoff(lam)
        otf, psf = make_psf(spec, c)
        h0 = max(h0, abs(otf[0, 0] - 1.0))
        fx = np.fft.fftfreq(96, d=spec.pixel)
        rho = np.hypot(fx[:, None], fx[None, :])
        outside = max(outside, float(np.max(np.abs(otf[rho >= rc]))))
        mid = max(mid, abs(airy_profile(np.array([rc / 2]), rc)[0] - (2 * math.pi / 3 - math.sin(2 * math.pi / 3)) / math.pi))
        ref = np.vectorize(_h_scalar)(rho, rc)
        grid = max(grid, float(np.max(np.abs(otf - ref))))
        full = np.fft.ifft2(otf)
        imag = max(imag, float(np.max(np.abs(full.imag)) / np.max(np.abs(full.real))))
        neg = max(neg, float(np.sum(psf[psf < 0] ** 2) / np.sum(psf**2)))
    ok = h0 == 0.0 and outside == 0.0 and mid <= 1e-12 and grid <= 1e-12 and imag <= 1e-10 and neg < 0.01
    return record(10, ok, f"|h(0)-1|={h0:.1e}, max h(rho>=rho_c)={outside:.1e}, |h(rho_c/2)-formula|={mid:.1e}, "
                          f"grid vs scalar formula {grid:.1e}, PSF imag/real {imag:.1e}, negative-lobe energy {100 * neg:.3f}% < 1%")


# -- pytest wrappers ---------------------------------------------------------------


def test_c01_adjoint_suite():
    assert criterion_1()


def test_c02_gradient_suite():
    assert criterion_2()


def test_c03_simplification_equivalence():
    assert criterion_3()


def test_c04_semi_orthogonal_prox_oracle():
    assert criterion_4()


def test_c05_woodbury_prox_oracle():
    assert criterion_5()


def test_c06_solver_cross_agreement():
    assert criterion_6()


def test_c07_deconvolution_improvement():
    assert criterion_7()


def test_c08_simulation_exactness(tmp_path):
    assert criterion_8(tmp_path)


def test_c09_caching_semantics():
    assert criterion_9()


def test_c10_psf_correctness():
    assert criterion_10()


if __name__ == "__main__":
    import tempfile

    results = []
    for fn in (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7):
        results.append(fn())
    with tempfile.TemporaryDirectory() as d:
        results.append(criterion_8(Path(d)))
    results.append(criterion_9())
    results.append(criterion_10())
    print(f"{sum(results)}/{len(results)} criteria passed")
    sys.exit(0 if all(results) else 1)
