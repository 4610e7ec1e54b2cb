"""Command-line entry point ``invop``.

Exit status: 0 on success, 1 on configuration or usage errors, 2 on
numerical failures.
"""

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import NUMBA_AVAILABLE, USE_NUMBA
from .config import as_shape, build_cost, build_operator
from .deconv import (
    PsfSpec,
    ReconSpec,
    SimulationSpec,
    best_lambda,
    default_threads,
    make_psfs,
    reconstruct,
    simulate,
    sweep_lambda,
    sweep_to_csv,
    synthetic_phantom,
    write_pgm,
)
from .errors import ConfigError, NotInvertibleError, SingularOperatorError, SolverError
from .solvers import SolverConfig, SplitProblem, run
from .tensor import read_tensor, write_tensor

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2
_NUMERIC_ERRORS = (SolverError, SingularOperatorError, NotInvertibleError, FloatingPointError, ArithmeticError)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; that code means numerical failure here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _load_config(path):
    if path is None:
        raise ConfigError("--config is required for this subcommand")
    p = Path(path)
    try:
        with open(p) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{p}: top level must be an object")
    return cfg, p.parent


def _resolve(base, p):
    p = Path(p)
    return p if p.is_absolute() else base / p


def _out(args, cfg, base, default):
    if args.out is not None:
        return Path(args.out)
    return _resolve(base, cfg.get("out", default))


def _with_suffix(prefix, suffix):
    return prefix.parent / (prefix.name + suffix)


def _psf_spec(d, grid=None):
    shape = d.get("gridShape", grid)
    if shape is None:
        raise ConfigError("PSF spec needs 'gridShape'")
    return PsfSpec(
        na=float(d.get("NA", 1.4)),
        wavelengths=d.get("wavelengths", PsfSpec.wavelengths),
        pixel=float(d.get("pixel", 64.5)),
        grid_shape=as_shape(shape, "gridShape")[:2],
    )


def cmd_psf(args):
    cfg, base = _load_config(args.config)
    spec = _psf_spec(cfg)
    otf, psf = make_psfs(spec)
    prefix = _out(args, cfg, base, "psf")
    write_tensor(_with_suffix(prefix, "_otf.tensor"), otf, mtf=True)
    write_tensor(_with_suffix(prefix, "_psf.tensor"), psf)
    cutoffs = ", ".join(f"{spec.cutoff(w):.4g}" for w in spec.wavelengths)
    return f"psf: {len(spec.wavelengths)} channel(s) on {spec.grid_shape}, cutoff [{cutoffs}] cycles/nm -> {prefix}_otf.tensor"


def cmd_simulate(args):
    cfg, base = _load_config(args.config)
    if "groundTruthFile" in cfg:
        gt = read_tensor(_resolve(base, cfg["groundTruthFile"]))
    else:
        ph = cfg.get("phantom", {})
        gt = synthetic_phantom(as_shape(ph.get("shape", (64, 64, 3))), int(ph.get("seed", 0)))
    if gt.ndim == 2:
        gt = gt[..., None]
    pad = as_shape(cfg.get("padTo", [int(round(1.5 * n)) for n in gt.shape[:2]] + list(gt.shape[2:])), "padTo")
    fov = as_shape(cfg.get("fovSize", gt.shape), "fovSize")
    if "otfFile" in cfg:
        otf = read_tensor(_resolve(base, cfg["otfFile"])).real
    else:
        otf, _ = make_psfs(_psf_spec(cfg.get("psf", {}), pad[:2]))
    if otf.ndim == 2:
        otf = otf[..., None]
    if otf.shape[-1] != gt.shape[-1]:
        raise ConfigError(f"{otf.shape[-1]} PSF channel(s) for {gt.shape[-1]} image channel(s)")
    snr = cfg.get("targetSnrDb", 10.0)
    snr = math.inf if snr is None or str(snr).lower() in ("inf", "infinity") else float(snr)
    seed = args.seed if args.seed is not None else int(cfg.get("noiseSeed", 0))
    spec = SimulationSpec(pad, fov, snr, seed)
    data, info = simulate(gt, otf, spec)
    prefix = _out(args, cfg, base, "sim")
    write_tensor(_with_suffix(prefix, "_data.tensor"), data)
    write_tensor(_with_suffix(prefix, "_gt.tensor"), gt)
    write_tensor(_with_suffix(prefix, "_otf.tensor"), otf, mtf=True)
    meta = {"targetSnrDb": None if math.isinf(snr) else snr, "measuredSnrDb": None if math.isinf(info["measured_snr_db"]) else info["measured_snr_db"],
            "noiseNorm": info["noise_norm"], "noiseSeed": seed, "padTo": list(pad), "fovSize": list(fov)}
    with open(_with_suffix(prefix, "_meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1)
    return f"simulate: data {data.shape} at {info['measured_snr_db']:.6f} dB (seed {seed}) -> {prefix}_data.tensor"


def _solver_config(cfg):
    return SolverConfig.from_dict(cfg.get("solver", {}))


def _recon_inputs(cfg, base):
    try:
        data = read_tensor(_resolve(base, cfg["dataFile"]))
        otf = read_tensor(_resolve(base, cfg["otfFile"])).real
    except KeyError as exc:
        raise ConfigError(f"missing key {exc.args[0]!r}") from exc
    gt = cfg.get("groundTruthFile")
    gt = read_tensor(_resolve(base, gt)) if gt is not None else None
    return data, otf, gt


def _recon_spec(cfg, lam=None):
    corner = cfg.get("corner")
    if corner is not None:
        corner = tuple(int(c) - 1 for c in corner)
    return ReconSpec(
        regularizer=str(cfg.get("regularizer", "TV")),
        lam=float(lam if lam is not None else cfg.get("lambda", 5e-3)),
        eps=cfg.get("eps"),
        solver=_solver_config(cfg),
        corner=corner,
    )


def _run_generic(cfg, base):
    """Reconstruction from an explicit ``problem`` block of operator/cost trees."""
    prob = cfg["problem"]
    solver = _solver_config(cfg)
    sizein = as_shape(prob.get("sizein") or [], "sizein") or None
    x0 = prob.get("x0File")
    x0 = read_tensor(_resolve(base, x0)) if x0 is not None else None
    if sizein is None and x0 is not None:
        sizein = x0.shape
    if sizein is None:
        raise ConfigError("problem needs 'sizein' or 'x0File'")
    if x0 is None:
        x0 = np.zeros(sizein)
    if solver.algorithm in ("admm", "pd"):
        hn = [build_operator(h, sizein, base) for h in prob.get("hn", [])]
        fn = [build_cost(f, h.sizeout, base) for f, h in zip(prob.get("fn", []), hn)]
        return run(solver, SplitProblem(fn, hn), x0=x0)
    cost = build_cost(prob["cost"], sizein, base)
    g = build_cost(prob["prox"], sizein, base) if "prox" in prob else None
    return run(solver, f0=cost, g=g, cost=cost, x0=x0)


def _write_estimate(prefix, x, log):
    write_tensor(_with_suffix(prefix, "_estimate.tensor"), x)
    log.to_csv(_with_suffix(prefix, "_log.csv"))
    if x.ndim == 3:
        for c in range(x.shape[-1]):
            write_pgm(_with_suffix(prefix, f"_ch{c + 1}.pgm"), x[..., c])
    elif x.ndim == 2:
        write_pgm(_with_suffix(prefix, "_ch1.pgm"), x)


def cmd_reconstruct(args):
    cfg, base = _load_config(args.config)
    prefix = _out(args, cfg, base, "recon")
    if "problem" in cfg:
        x, log = _run_generic(cfg, base)
        _write_estimate(prefix, x, log)
        return f"reconstruct: {log.iterations} iterations, cost {log.records[-1].cost} -> {prefix}_estimate.tensor"
    data, otf, gt = _recon_inputs(cfg, base)
    spec = _recon_spec(cfg)
    x, log = reconstruct(spec, data, otf, gt)
    _write_estimate(prefix, x, log)
    last = log.records[-1]
    snr = "" if last.snr_db is None else f", snr {last.snr_db:.3f} dB"
    return (f"reconstruct: {spec.regularizer}/{spec.solver.algorithm} lambda={spec.lam:g}, "
            f"{log.iterations} iterations{snr} -> {prefix}_estimate.tensor")


def _lambdas(cfg):
    if "lambdas" in cfg:
        lams = [float(v) for v in cfg["lambdas"]]
    else:
        lo, hi, n = cfg.get("lambdaRange", [1e-4, 1e-1, 8])
        lams = list(np.logspace(np.log10(float(lo)), np.log10(float(hi)), int(n)))
    if not lams or any(not l > 0 for l in lams):
        raise ConfigError("lambdas must be a non-empty list of positive values")
    return lams


def cmd_sweep(args):
    cfg, base = _load_config(args.config)
    data, otf, gt = _recon_inputs(cfg, base)
    if gt is None:
        raise ConfigError("sweep-lambda needs 'groundTruthFile' for scoring")
    spec = _recon_spec(cfg)
    threads = args.threads or default_threads()
    rows = sweep_lambda(spec, _lambdas(cfg), data, otf, gt, threads)
    path = _with_suffix(_out(args, cfg, base, "sweep"), ".csv")
    sweep_to_csv(rows, path)
    lam, snr = best_lambda(rows)
    return f"sweep-lambda: {len(rows)} runs, best lambda={lam:g} ({snr:.3f} dB) -> {path}"


def cmd_info(args):
    return (f"invop {__version__}: numba {'available' if NUMBA_AVAILABLE else 'missing'}, "
            f"kernels {'numba' if USE_NUMBA else 'numpy'}, threads {default_threads()}")


def build_parser():
    parser = _Parser(prog="invop", description="Matrix-free inverse problems and the multichannel deconvolution study.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    handlers = {
        "psf": (cmd_psf, "synthesize OTFs and spatial PSFs"),
        "simulate": (cmd_simulate, "blur, crop and add noise to a ground truth"),
        "reconstruct": (cmd_reconstruct, "run one reconstruction"),
        "sweep-lambda": (cmd_sweep, "reconstruct over a list of lambdas and score each"),
        "info": (cmd_info, "report version and acceleration backend"),
    }
    for name, (fn, text) in handlers.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int, help="override the noise seed")
        p.add_argument("--out", help="override the output prefix")
        p.add_argument("--threads", type=int, help="worker pool size for sweeps")
        p.set_defaults(handler=fn)
    return parser


def main(argv=None):
    """Run the CLI and return its exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    if args.threads is not None:
        if args.threads < 1:
            print("invop: error: --threads must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        os.environ["INVOP_THREADS"] = str(args.threads)
    try:
        summary = args.handler(args)
    except _NUMERIC_ERRORS as exc:
        print(f"invop: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, KeyError, TypeError, OSError) as exc:
        print(f"invop: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(summary)
    return EXIT_OK


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
