"""Multichannel deconvolution study: Airy-profile PSFs, blurred/noisy data
simulation, reconstruction under four regularizers, and lambda sweeps."""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .costs import GoodRoughness, Hyperbolic, L2Residual, MixNorm21, MixNormSchatt1, NonNegIndicator
from .errors import ConfigError, ShapeError
from .linops import Conv, Grad, Hess, Identity, SelectorPatch
from .solvers import SolverConfig, SplitProblem, compute_snr, run_admm, run_fbs, run_primal_dual, run_vmlmb

DEFAULT_WAVELENGTHS = (654.0, 542.0, 477.0)
REGULARIZERS = ("TV", "HS", "STV", "GR")
_PROX_SOLVERS = ("admm", "pd")
_GRAD_SOLVERS = ("fbs", "vmlmb")
DEFAULT_EPS = {"STV": 1e-7, "GR": 1e-2}


# -- PSF -------------------------------------------------------------------------


@dataclass
class PsfSpec:
    """Diffraction-limited widefield PSF parameters (lengths in nm)."""

    na: float = 1.4
    wavelengths: tuple = DEFAULT_WAVELENGTHS
    pixel: float = 64.5
    grid_shape: tuple = (96, 96)

    def __post_init__(self):
        self.wavelengths = tuple(float(w) for w in np.atleast_1d(self.wavelengths))
        self.grid_shape = tuple(int(n) for n in self.grid_shape)
        if not self.na > 0 or not self.pixel > 0 or not all(w > 0 for w in self.wavelengths):
            raise ConfigError("NA, wavelengths and pixel size must be positive")
        if len(self.grid_shape) != 2 or any(n < 2 for n in self.grid_shape):
            raise ConfigError(f"PSF grid must be 2-D, got {self.grid_shape}")

    def cutoff(self, wavelength):
        """Cutoff frequency ``2 NA / lambda`` in cycles/nm."""
        return 2.0 * self.na / wavelength


def airy_profile(rho, rho_c):
    """Incoherent diffraction-limited transfer profile; 1 at 0, 0 beyond ``rho_c``."""
    rho = np.asarray(rho, dtype=float)
    out = np.zeros_like(rho)
    inside = rho < rho_c
    t = np.arccos(rho[inside] / rho_c)
    out[inside] = (2.0 * t - np.sin(2.0 * t)) / np.pi
    return out


def radial_frequency(grid_shape, pixel):
    """Radial DFT frequency (cycles per unit length) on an unshifted grid."""
    fx = np.fft.fftfreq(grid_shape[0], d=pixel)
    fy = np.fft.fftfreq(grid_shape[1], d=pixel)
    return np.hypot(fx[:, None], fy[None, :])


def make_psf(spec, channel=0):
    """Return ``(otf, psf)`` for one channel on ``spec.grid_shape``.

    The OTF is real and normalized so that its DC value is 1; the spatial PSF is
    the real part of its inverse DFT (origin at index 0).
    """
    if any(n % 2 for n in spec.grid_shape):
        raise ShapeError(f"PSF grid must be even-sized, got {spec.grid_shape}")
    rho_c = spec.cutoff(spec.wavelengths[channel])
    otf = airy_profile(radial_frequency(spec.grid_shape, spec.pixel), rho_c)
    otf = otf / otf[0, 0]
    psf = np.fft.ifft2(otf).real
    return otf, psf


def make_psfs(spec):
    """OTFs and PSFs of all channels stacked on a trailing axis."""
    pairs = [make_psf(spec, c) for c in range(len(spec.wavelengths))]
    otf = np.stack([p[0] for p in pairs], axis=-1)
    psf = np.stack([p[1] for p in pairs], axis=-1)
    return otf, psf


# -- ground truth ----------------------------------------------------------------


def synthetic_phantom(shape=(64, 64, 3), seed=0):
    """Nonnegative multichannel test image: curved filaments, small spots and
    large smooth nuclei-like bodies, one structure family per channel."""
    rng = np.random.default_rng(seed)
    nx, ny = shape[:2]
    nch = shape[2] if len(shape) > 2 else 1
    xx, yy = np.meshgrid(np.arange(nx, dtype=float), np.arange(ny, dtype=float), indexing="ij")
    out = np.zeros((nx, ny, nch))
    for c in range(nch):
        img = np.zeros((nx, ny))
        kind = c % 3
        if kind == 0:
            for _ in range(5):
                # filament: smooth curve with Gaussian cross-section
                t = np.linspace(0, 1, 200)
                x0, y0 = rng.uniform(0.15, 0.85, 2) * (nx, ny)
                ang = rng.uniform(0, np.pi)
                length = rng.uniform(0.4, 0.9) * min(nx, ny)
                bend = rng.uniform(-0.3, 0.3) * length
                px = x0 + (t - 0.5) * length * np.cos(ang) - bend * (t - 0.5) ** 2 * np.sin(ang)
                py = y0 + (t - 0.5) * length * np.sin(ang) + bend * (t - 0.5) ** 2 * np.cos(ang)
                width = rng.uniform(1.0, 1.8)
                d2 = np.min((xx[..., None] - px) ** 2 + (yy[..., None] - py) ** 2, axis=-1)
                img = np.maximum(img, rng.uniform(0.6, 1.0) * np.exp(-d2 / (2 * width**2)))
        elif kind == 1:
            for _ in range(14):
                cx, cy = rng.uniform(0.1, 0.9, 2) * (nx, ny)
                r = rng.uniform(1.2, 2.8)
                img += rng.uniform(0.4, 1.0) * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * r * r))
        else:
            for _ in range(3):
                cx, cy = rng.uniform(0.25, 0.75, 2) * (nx, ny)
                a, b = rng.uniform(0.1, 0.2, 2) * min(nx, ny)
                th = rng.uniform(0, np.pi)
                u = (xx - cx) * np.cos(th) + (yy - cy) * np.sin(th)
                v = -(xx - cx) * np.sin(th) + (yy - cy) * np.cos(th)
                rr = np.sqrt((u / a) ** 2 + (v / b) ** 2)
                img += rng.uniform(0.5, 1.0) * 0.5 * (1 - np.tanh((rr - 1.0) * 4.0))
        out[..., c] = np.clip(img, 0, None)
    if len(shape) == 2:
        return out[..., 0]
    return out


# -- simulation ------------------------------------------------------------------


def centered_slices(outer, inner):
    return tuple(slice((n - m) // 2, (n - m) // 2 + m) for n, m in zip(outer, inner))


def pad_centered(x, shape):
    shape = tuple(int(s) for s in shape)
    if len(shape) != x.ndim or any(s < n for s, n in zip(shape, x.shape)):
        raise ShapeError(f"cannot pad {x.shape} to {shape}")
    out = np.zeros(shape)
    out[centered_slices(shape, x.shape)] = x
    return out


@dataclass
class SimulationSpec:
    pad_to: tuple
    fov: tuple
    target_snr_db: float = 10.0
    noise_seed: int = 0

    def __post_init__(self):
        self.pad_to = tuple(int(s) for s in self.pad_to)
        self.fov = tuple(int(s) for s in self.fov)
        if self.target_snr_db is None:
            self.target_snr_db = math.inf


def forward_operators(otf, fov, corner=None):
    """``(H, S)``: per-channel convolution on axes 0-1 and the field-of-view selector.

    ``corner`` is 0-based; ``None`` centers the field of view.
    """
    otf = np.asarray(otf)
    if otf.ndim == 2:
        otf = otf[..., None]
    h = Conv(otf, dims=(0, 1), is_real=True)
    fov = tuple(int(s) for s in fov)
    if corner is None:
        s = SelectorPatch.centered(h.sizeout, fov)
    else:
        s = SelectorPatch(h.sizeout, corner, fov)
    return h, s


def simulate(ground_truth, otf, spec):
    """Blur, crop and add white Gaussian noise at an exact SNR.

    Returns ``(data, info)``. ``info`` holds the clean data, the noise norm and
    the measured SNR. With ``target_snr_db = inf`` no noise is added. When the
    clean signal is identically zero the noise keeps unit variance.
    """
    gt = np.asarray(ground_truth, dtype=float)
    if gt.ndim == 2:
        gt = gt[..., None]
    padded = pad_centered(gt, spec.pad_to)
    if not all(p >= f for p, f in zip(spec.pad_to, spec.fov)):
        raise ShapeError(f"field of view {spec.fov} larger than padded grid {spec.pad_to}")
    h, s = forward_operators(otf, spec.fov)
    if h.sizein != padded.shape:
        raise ShapeError(f"OTF shape {h.sizein} does not match padded grid {padded.shape}")
    clean = s.apply(h.apply(padded))
    info = {"clean": clean, "noise_norm": 0.0, "measured_snr_db": math.inf}
    if math.isinf(spec.target_snr_db):
        return clean.copy(), info
    rng = np.random.default_rng(spec.noise_seed)
    w = rng.standard_normal(clean.shape)
    cnorm = np.linalg.norm(clean)
    if cnorm > 0:
        w *= cnorm * 10.0 ** (-spec.target_snr_db / 20.0) / np.linalg.norm(w)
    data = clean + w
    info["noise_norm"] = float(np.linalg.norm(w))
    info["measured_snr_db"] = compute_snr(data, clean) if cnorm > 0 else -math.inf
    return data, info


# -- reconstruction --------------------------------------------------------------


@dataclass
class ReconSpec:
    regularizer: str = "TV"
    lam: float = 5e-3
    eps: float = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    corner: tuple = None

    def __post_init__(self):
        self.regularizer = self.regularizer.upper().replace("-", "")
        if self.regularizer not in REGULARIZERS:
            raise ConfigError(f"unknown regularizer {self.regularizer!r}")
        if not self.lam > 0:
            raise ConfigError("lambda must be positive")
        if self.eps is None:
            self.eps = DEFAULT_EPS.get(self.regularizer)
        alg = self.solver.algorithm
        if self.regularizer in ("TV", "HS") and alg not in _PROX_SOLVERS:
            raise ConfigError(f"{self.regularizer} is not differentiable; use ADMM or PD, not {alg}")
        if self.regularizer in ("STV", "GR") and alg not in _GRAD_SOLVERS:
            raise ConfigError(f"{self.regularizer} needs a gradient solver (FBS or VMLMB), not {alg}")


def build_problem(recon, data, otf):
    """Assemble operators and cost terms for ``recon`` on data ``g``."""
    h, s = forward_operators(otf, data.shape, recon.corner)
    szin = h.sizein
    data_term = L2Residual(s.sizeout, data)
    nonneg = NonNegIndicator(szin)
    reg = recon.regularizer
    if reg in ("TV", "STV", "GR"):
        lop = Grad(szin, (0, 1))
    else:
        lop = Hess(szin, (0, 1))
    parts = {"H": h, "S": s, "L": lop, "data": data_term, "nonneg": nonneg}
    if reg == "TV":
        r = MixNorm21(lop.sizeout, group_dims=-1)
    elif reg == "HS":
        r = MixNormSchatt1(lop.sizeout, 1)
    elif reg == "STV":
        r = Hyperbolic(lop.sizeout, recon.eps, group_dims=-1)
    else:
        r = GoodRoughness(lop, recon.eps)
    if reg in ("TV", "HS"):
        parts["problem"] = SplitProblem(
            [data_term @ s, recon.lam * r, nonneg],
            [h, lop, Identity(szin)],
        )
    else:
        smooth = data_term @ s @ h + recon.lam * (r if reg == "GR" else r @ lop)
        parts["smooth"] = smooth
    return parts


def reconstruct(recon, data, otf, ground_truth=None, x0=None):
    """Run the configured solver from ``x0 = S^T g``.

    With a ground truth, SNR is scored on the region of the padded grid that
    the (centered) ground truth occupies. Returns ``(estimate, log)``.
    """
    data = np.asarray(data, dtype=float)
    parts = build_problem(recon, data, otf)
    s = parts["S"]
    if x0 is None:
        x0 = s.apply_adjoint(data)
    snr_fn = None
    if ground_truth is not None:
        gt = np.asarray(ground_truth, dtype=float)
        if gt.ndim == 2:
            gt = gt[..., None]
        region = centered_slices(s.sizein, gt.shape)

        def snr_fn(x):
            return compute_snr(x[region], gt)

    cfg = recon.solver
    if cfg.algorithm == "admm":
        return run_admm(parts["problem"], cfg, x0, snr_fn)
    if cfg.algorithm == "pd":
        return run_primal_dual(parts["problem"], cfg, x0, snr_fn)
    if cfg.algorithm == "fbs":
        return run_fbs(parts["smooth"], parts["nonneg"], cfg, x0, snr_fn)
    return run_vmlmb(parts["smooth"], cfg, x0, snr_fn)


def default_threads():
    try:
        return max(1, int(os.environ.get("INVOP_THREADS", "0")) or (os.cpu_count() or 1))
    except ValueError:
        return 1


def sweep_lambda(recon, lambdas, data, otf, ground_truth, threads=None):
    """Reconstruct once per lambda; returns rows ``(lam, snr_db)`` sorted by lambda.

    Each run is independent, so the pool size never changes the results.
    """
    lambdas = sorted(float(l) for l in lambdas)

    def one(lam):
        spec = ReconSpec(recon.regularizer, lam, recon.eps, recon.solver, recon.corner)
        x, log = reconstruct(spec, data, otf, ground_truth)
        gt = np.asarray(ground_truth, dtype=float)
        if gt.ndim == 2:
            gt = gt[..., None]
        return compute_snr(x[centered_slices(x.shape, gt.shape)], gt)

    threads = threads or default_threads()
    if threads == 1:
        snrs = [one(l) for l in lambdas]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            snrs = list(pool.map(one, lambdas))
    return list(zip(lambdas, snrs))


def best_lambda(rows):
    return max(rows, key=lambda r: r[1])


def sweep_to_csv(rows, path=None):
    lines = ["lambda,snr_db"] + [f"{lam!r},{snr!r}" for lam, snr in rows]
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def write_pgm(path, image):
    """8-bit binary PGM with min-max normalization."""
    img = np.asarray(image, dtype=float)
    lo, hi = float(np.min(img)), float(np.max(img))
    scaled = np.zeros_like(img) if hi <= lo else (img - lo) / (hi - lo)
    pix = np.round(scaled * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{pix.shape[1]} {pix.shape[0]}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())
