"""Iterative solvers: ADMM, Condat's primal-dual method, forward-backward
splitting (optionally FISTA) and a bound-constrained limited-memory
quasi-Newton method (projected L-BFGS), with convergence tests and logs.

The splitting solvers minimize ``sum_p F_p(T_p x)`` (plus, for the primal-dual
method, an optional smooth ``F0(x)`` and a proxable ``G(x)``). Logged cost
values leave out indicator terms: they are zero at feasible points and the
splitting iterates are feasible only in the limit.
"""

import csv
import io
import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field, fields

import numpy as np

from .costs import INF, conjugate_gradient
from .errors import ConfigError, NoProxError, NotDifferentiableError, ShapeError, SolverError
from .operators import Kind, add, adjoint, compose, estimate_norm, scale
from .tensor import norm

log = logging.getLogger(__name__)

PD_FEASIBILITY_SLACK = 1e-10


# -- convergence -----------------------------------------------------------------


@dataclass
class StepRelative:
    tol: float

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")

    def __call__(self, x, x_prev, cost=None, cost_prev=None):
        if x_prev is None:
            return False
        return norm(x - x_prev) / max(norm(x_prev), 1e-30) < self.tol


@dataclass
class CostRelative:
    tol: float

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")

    def __call__(self, x, x_prev, cost=None, cost_prev=None):
        if cost is None or cost_prev is None:
            return False
        return abs(cost - cost_prev) / max(abs(cost_prev), 1e-30) < self.tol


@dataclass
class Combined:
    criteria: list

    def __call__(self, *args, **kwargs):
        return bool(self.criteria) and all(c(*args, **kwargs) for c in self.criteria)


def check_convergence(criteria, x, x_prev, cost=None, cost_prev=None):
    """True when every criterion fires (an empty list never fires)."""
    if callable(criteria):
        criteria = [criteria]
    return bool(criteria) and all(c(x, x_prev, cost, cost_prev) for c in criteria)


def _needs_cost(criteria):
    for c in criteria:
        if isinstance(c, CostRelative):
            return True
        if isinstance(c, Combined) and _needs_cost(c.criteria):
            return True
    return False


def criterion_from_dict(d):
    """``{"step": 1e-4}``, ``{"cost": 1e-6}`` or ``{"combined": [...]}``."""
    if len(d) != 1:
        raise ConfigError(f"bad convergence criterion {d!r}")
    (key, val), = d.items()
    if key in ("step", "StepRelative"):
        return StepRelative(float(val))
    if key in ("cost", "CostRelative"):
        return CostRelative(float(val))
    if key in ("combined", "Combined"):
        return Combined([criterion_from_dict(c) for c in val])
    raise ConfigError(f"unknown convergence criterion {key!r}")


# -- logging ---------------------------------------------------------------------


def compute_snr(est, gt):
    """``10 log10(||gt||**2 / ||gt - est||**2)`` in dB; ``INF`` when exact."""
    est = np.asarray(est)
    gt = np.asarray(gt)
    if est.shape != gt.shape:
        raise ShapeError(f"SNR of shapes {est.shape} and {gt.shape}")
    err = np.vdot(gt - est, gt - est).real
    if err == 0:
        return INF
    return 10.0 * math.log10(np.vdot(gt, gt).real / err)


@dataclass
class LogRecord:
    iteration: int
    cost: float = None
    step_rel: float = None
    snr_db: float = None
    seconds: float = 0.0


@dataclass
class IterationLog:
    records: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    primal_residuals: list = field(default_factory=list)

    def append(self, record):
        if self.records and record.iteration <= self.records[-1].iteration:
            raise ValueError("iterations must be strictly increasing")
        self.records.append(record)

    @property
    def costs(self):
        return [r.cost for r in self.records]

    def to_csv(self, path=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iteration", "cost", "step_rel", "snr_db", "seconds"])
        for r in self.records:
            writer.writerow([r.iteration] + ["" if v is None else repr(float(v)) for v in (r.cost, r.step_rel, r.snr_db, r.seconds)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


class _Monitor:
    def __init__(self, config, cost_fn, snr_fn):
        self.config = config
        self.cost_fn = cost_fn
        self.snr_fn = snr_fn
        self.log = IterationLog()
        self.start = time.perf_counter()
        self.need_cost = _needs_cost(config.convergence)
        self.cost_prev = None

    def record(self, k, x, step_rel, cost=None):
        if cost is None and self.cost_fn is not None:
            cost = self.cost_fn(x)
        snr = self.snr_fn(x) if self.snr_fn is not None else None
        self.log.append(LogRecord(k, cost, step_rel, snr, time.perf_counter() - self.start))

    def step(self, k, x, x_prev):
        """Log if due and return True when the run should stop."""
        if not np.all(np.isfinite(x)):
            raise SolverError(f"iterate became non-finite at iteration {k} (step size too large?)")
        cost = self.cost_fn(x) if (self.need_cost and self.cost_fn is not None) else None
        step_rel = norm(x - x_prev) / max(norm(x_prev), 1e-30)
        done = check_convergence(self.config.convergence, x, x_prev, cost, self.cost_prev)
        self.cost_prev = cost
        last = done or k == self.config.maxiter
        if self.config.log_every and (k % self.config.log_every == 0 or last):
            self.record(k, x, step_rel, cost)
        self.log.iterations = k
        if done:
            self.log.converged = True
        return done

    def finish(self, x, refresh=False):
        """Make sure the last record describes the returned ``x``.

        ``refresh`` re-evaluates a final record that was logged before a
        post-processing step changed ``x``.
        """
        k = self.log.iterations
        recs = self.log.records
        if recs and recs[-1].iteration == k and refresh:
            step_rel = recs.pop().step_rel
            self.record(k, x, step_rel)
        elif recs and recs[-1].iteration < k:
            self.record(k, x, None)
        return self.log


# -- configuration ---------------------------------------------------------------

ALGORITHMS = ("admm", "pd", "fbs", "vmlmb")
_ALIASES = {"primaldual": "pd", "primaldualcondat": "pd", "condat": "pd", "fista": "fbs"}


@dataclass
class SolverConfig:
    """Algorithm choice and hyperparameters.

    ``rho`` (ADMM) is a scalar or one value per term; ``sigma`` (primal-dual)
    defaults to ``1 / (tau * ||sum_p T_p^T T_p||)``.
    """

    algorithm: str = "admm"
    maxiter: int = 500
    log_every: int = 50
    convergence: list = field(default_factory=list)
    rho: object = 0.5
    cg_tol: float = 1e-10
    cg_maxit: int = 200
    tau: float = 1.0
    sigma: float = None
    relax: float = 1.0
    gamma: float = 5e-2
    fista: bool = True
    memory: int = 5
    lower_bound: object = 0.0

    def __post_init__(self):
        alg = self.algorithm.lower().replace("-", "").replace("_", "")
        self.algorithm = _ALIASES.get(alg, alg)
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.maxiter < 0 or self.log_every < 0:
            raise ConfigError("maxiter and log_every must be nonnegative")
        for name in ("tau", "gamma", "cg_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.sigma is not None and not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if not 0 < self.relax < 2:
            raise ConfigError("relaxation must lie in (0, 2)")
        if np.any(np.asarray(self.rho) <= 0):
            raise ConfigError("rho must be positive")
        if self.memory < 1:
            raise ConfigError("memory must be >= 1")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        renames = {"itUpOut": "log_every", "ItUpOut": "log_every", "logEvery": "log_every",
                   "gam": "gamma", "sig": "sigma", "rho_n": "rho", "lowerBound": "lower_bound",
                   "cgTol": "cg_tol", "cgMaxit": "cg_maxit"}
        out = {}
        for k, v in d.items():
            k = renames.get(k, k)
            if k not in known:
                raise ConfigError(f"unknown solver option {k!r}")
            out[k] = v
        if "convergence" in out:
            out["convergence"] = [criterion_from_dict(c) for c in out["convergence"]]
        return cls(**out)


@dataclass
class SplitProblem:
    """``sum_p fn[p](hn[p] x)`` plus optional smooth ``f0`` and proxable ``g``."""

    fn: list
    hn: list
    f0: object = None
    g: object = None

    def __post_init__(self):
        if len(self.fn) != len(self.hn):
            raise ShapeError("fn and hn must have the same length")
        if not self.hn:
            raise ShapeError("empty splitting")
        sizein = self.hn[0].sizein
        for f, h in zip(self.fn, self.hn):
            if h.sizein != sizein:
                raise ShapeError("all hn must share the input shape")
            if f.sizein != h.sizeout:
                raise ShapeError(f"{f!r} does not match {h!r}")
            if not h.is_linear:
                raise ShapeError(f"{h!r} is not linear")

    @property
    def sizein(self):
        return self.hn[0].sizein

    def objective(self, x, skip_indicators=True):
        total = 0.0
        for f, h in zip(self.fn, self.hn):
            if not (skip_indicators and f.is_indicator):
                total += f.evaluate(h.apply(x))
        for c in (self.f0, self.g):
            if c is not None and not (skip_indicators and c.is_indicator):
                total += c.evaluate(x)
        return total


def _project_feasible(problem, x):
    """Project onto indicator terms applied through the identity, so returned
    estimates satisfy hard constraints exactly rather than up to the splitting
    residual."""
    for f, h in zip(problem.fn, problem.hn):
        if f.is_indicator and h.kind is Kind.IDENTITY:
            x = f.prox(x, 1.0)
    return x


def _rhos(cfg, n):
    rho = np.broadcast_to(np.asarray(cfg.rho, dtype=float), (n,))
    return [float(r) for r in rho]


# -- ADMM ------------------------------------------------------------------------


def run_admm(problem, config, x0, snr_fn=None, cost_fn=None):
    """Scaled-dual ADMM.

    Each iteration sets ``z_p = prox_{F_p / rho_p}(T_p x + u_p)`` and
    ``u_p += T_p x - z_p``, then solves
    ``(sum_p rho_p T_p^T T_p) x = sum_p rho_p T_p^T (z_p - u_p)``, directly when
    the operator simplifies to a convolution or diagonal and by conjugate
    gradients otherwise.
    """
    if problem.f0 is not None or problem.g is not None:
        raise ConfigError("ADMM takes only the list-of-terms splitting")
    for f in problem.fn:
        if not f.has_prox:
            raise NoProxError(f"{f!r} has no proximity operator")
    rhos = _rhos(config, len(problem.fn))
    ops = problem.hn
    normal = None
    for h, r in zip(ops, rhos):
        term = scale(compose(adjoint(h), h), r)
        normal = term if normal is None else add(normal, term)
    direct = normal.kind in (Kind.CONV, Kind.DIAG, Kind.IDENTITY) and normal.is_invertible
    if direct:
        try:
            normal.apply_inverse(np.zeros(normal.sizeout))
        except ValueError:
            direct = False

    cost_fn = cost_fn or problem.objective
    mon = _Monitor(config, cost_fn, snr_fn)
    x = np.array(x0, dtype=float)
    z = [None] * len(ops)
    u = [np.zeros(h.sizeout) for h in ops]
    mon.record(0, x, None)
    for k in range(1, config.maxiter + 1):
        # splitting variables first, so that the first x-update already moves x0
        rhs = None
        for p, (f, h, r) in enumerate(zip(problem.fn, ops, rhos)):
            tx = h.apply(x)
            z[p] = f.prox(tx + u[p], 1.0 / r)
            u[p] = u[p] + tx - z[p]
            t = r * h.apply_adjoint(z[p] - u[p])
            rhs = t if rhs is None else rhs + t
        if direct:
            x_new = normal.apply_inverse(rhs)
        else:
            x_new, _, res = conjugate_gradient(normal, rhs, x0=x, tol=config.cg_tol, maxit=config.cg_maxit)
            if res > config.cg_tol:
                mon.log.warnings.append(f"iteration {k}: CG stopped at relative residual {res:.3e}")
                if not np.isfinite(res):
                    raise SolverError(f"CG diverged at iteration {k} (residual {res})")
        x_prev, x = x, x_new
        if mon.step(k, x, x_prev):
            break
    if z[0] is not None:
        mon.log.primal_residuals = [norm(h.apply(x) - zp) for h, zp in zip(ops, z)]
    x_feasible = _project_feasible(problem, x)
    return x_feasible, mon.finish(x_feasible, refresh=x_feasible is not x)


# -- Condat primal-dual ------------------------------------------------------------


def pd_operator_norm(problem):
    """``||sum_p T_p^T T_p||`` using the simplified operator."""
    total = None
    for h in problem.hn:
        term = compose(adjoint(h), h)
        total = term if total is None else add(total, term)
    return estimate_norm(total).value


def run_primal_dual(problem, config, x0, snr_fn=None, cost_fn=None):
    """Condat's primal-dual splitting with relaxation ``config.relax``.

    Requires ``tau * sigma * ||sum_p T_p^T T_p|| <= 1``.
    """
    for f in problem.fn:
        if not f.has_prox:
            raise NoProxError(f"{f!r} has no proximity operator")
    if problem.g is not None and not problem.g.has_prox:
        raise NoProxError(f"{problem.g!r} has no proximity operator")
    if problem.f0 is not None and not problem.f0.has_grad:
        raise NotDifferentiableError(f"{problem.f0!r} has no gradient")
    nrm = pd_operator_norm(problem)
    tau = config.tau
    sigma = config.sigma if config.sigma is not None else 1.0 / (tau * nrm)
    if tau * sigma * nrm > 1.0 + PD_FEASIBILITY_SLACK:
        raise ConfigError(
            f"infeasible primal-dual steps: tau*sigma*||sum T_p^T T_p|| = {tau * sigma * nrm:.9g} > 1 "
            f"(operator norm {nrm:.9g})"
        )
    rho = config.relax
    cost_fn = cost_fn or problem.objective
    mon = _Monitor(config, cost_fn, snr_fn)
    x = np.array(x0, dtype=float)
    y = [np.zeros(h.sizeout) for h in problem.hn]
    mon.record(0, x, None)
    for k in range(1, config.maxiter + 1):
        g = None
        for h, yp in zip(problem.hn, y):
            t = h.apply_adjoint(yp)
            g = t if g is None else g + t
        if problem.f0 is not None:
            g = g + problem.f0.grad(x)
        xt = x - tau * g
        if problem.g is not None:
            xt = problem.g.prox(xt, tau)
        xbar = 2.0 * xt - x
        x_new = x + rho * (xt - x)
        for p, (f, h) in enumerate(zip(problem.fn, problem.hn)):
            v = y[p] + sigma * h.apply(xbar)
            # Moreau identity: prox of sigma F* from prox of F / sigma
            yt = v - sigma * f.prox(v / sigma, 1.0 / sigma)
            y[p] = y[p] + rho * (yt - y[p])
        x_prev, x = x, x_new
        if mon.step(k, x, x_prev):
            break
    x_feasible = _project_feasible(problem, x)
    return x_feasible, mon.finish(x_feasible, refresh=x_feasible is not x)


# -- forward-backward splitting ------------------------------------------------------


def _memoize_inner(cost, on=True):
    """Toggle apply-memoization on every inner operator of a cost graph."""
    touched = []
    stack = [cost]
    while stack:
        c = stack.pop()
        if c is None:
            continue
        if hasattr(c, "inner"):
            c.inner.set_memoize("apply", on)
            touched.append(c.inner)
        stack.extend(getattr(c, "terms", []))
        if hasattr(c, "cost"):
            stack.append(c.cost)
    return touched


def run_fbs(f0, g, config, x0, snr_fn=None, cost_fn=None):
    """``x+ = prox_{gamma G}(y - gamma grad F0(y))`` with FISTA momentum when
    ``config.fista``. ``g`` may be ``None``."""
    if not f0.has_grad:
        raise NotDifferentiableError(f"{f0!r} has no gradient")
    if g is not None and not g.has_prox:
        raise NoProxError(f"{g!r} has no proximity operator")
    gamma = config.gamma
    if cost_fn is None:
        def cost_fn(x):
            total = f0.evaluate(x)
            if g is not None and not g.is_indicator:
                total += g.evaluate(x)
            return total
    mon = _Monitor(config, cost_fn, snr_fn)
    _memoize_inner(f0, True)
    try:
        x = np.array(x0, dtype=float)
        y = x.copy()
        t = 1.0
        mon.record(0, x, None)
        for k in range(1, config.maxiter + 1):
            x_new = y - gamma * f0.grad(y)
            if g is not None:
                x_new = g.prox(x_new, gamma)
            if config.fista:
                t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
                y = x_new + ((t - 1.0) / t_new) * (x_new - x)
                t = t_new
            else:
                y = x_new
            x_prev, x = x, x_new
            if mon.step(k, x, x_prev):
                break
    finally:
        _memoize_inner(f0, False)
    return x, mon.finish(x)


# -- projected L-BFGS ------------------------------------------------------------

ARMIJO_C1 = 1e-4
BACKTRACK = 0.5
MAX_BACKTRACKS = 30


def _two_loop(grad, pairs, free):
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        s_f = s * free
        a = rho * np.vdot(s_f, q).real
        alphas.append(a)
        q -= a * (y * free)
    s, y, _ = pairs[-1]
    yf = y * free
    yy = np.vdot(yf, yf).real
    gamma0 = np.vdot(s * free, yf).real / yy if yy > 0 else 1.0
    if not gamma0 > 0:
        gamma0 = 1.0
    r = gamma0 * q
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * np.vdot(y * free, r).real
        r += (a - b) * (s * free)
    return r


def run_vmlmb(cost, config, x0, snr_fn=None, cost_fn=None):
    """Bound-constrained limited-memory quasi-Newton minimization of ``cost``.

    Projected L-BFGS: curvature pairs restricted to free variables (those not
    held at the lower bound by a positive gradient), Armijo backtracking along
    the projected path. ``config.lower_bound`` may be a scalar, an array or
    ``None`` for unconstrained problems.
    """
    if not cost.has_grad:
        raise NotDifferentiableError(f"{cost!r} has no gradient")
    lb = config.lower_bound
    if lb is not None:
        lb = np.broadcast_to(np.asarray(lb, dtype=float), cost.sizein)

    def project(v):
        return v if lb is None else np.maximum(v, lb)

    _memoize_inner(cost, True)
    try:
        x = project(np.array(x0, dtype=float))
        f = cost.evaluate(x)
        g = cost.grad(x)
        mon = _Monitor(config, cost_fn or cost.evaluate, snr_fn)
        mon.record(0, x, None, cost=None if cost_fn else f)
        pairs = deque(maxlen=config.memory)
        for k in range(1, config.maxiter + 1):
            if lb is None:
                free = np.ones(cost.sizein)
            else:
                free = ~((x <= lb) & (g > 0))
                free = free.astype(float)
            gf = g * free
            gnorm = norm(gf)
            if gnorm == 0:
                mon.log.converged = True
                mon.log.iterations = k - 1
                break
            if pairs:
                d = -_two_loop(gf, list(pairs), free)
                step = 1.0
            else:
                d = -gf
                step = min(1.0, 1.0 / gnorm)
            d *= free
            slope = np.vdot(g, d).real
            if not slope < 0:
                pairs.clear()
                d = -gf
                step = min(1.0, 1.0 / gnorm)
            for _ in range(MAX_BACKTRACKS + 1):
                x_new = project(x + step * d)
                f_new = cost.evaluate(x_new)
                # roundoff allowance so that steps near the minimizer are not rejected
                if f_new <= f + ARMIJO_C1 * np.vdot(g, x_new - x).real + 8 * np.finfo(float).eps * abs(f):
                    break
                step *= BACKTRACK
            else:
                mon.log.warnings.append(f"iteration {k}: line search failed after {MAX_BACKTRACKS} backtracks")
                mon.log.iterations = k - 1
                break
            g_new = cost.grad(x_new)
            s = x_new - x
            yv = g_new - g
            sy = np.vdot(s, yv).real
            if sy > 1e-12 * norm(s) * norm(yv):
                pairs.append((s, yv, 1.0 / sy))
            x_prev, x, f, g = x, x_new, f_new, g_new
            if mon.step(k, x, x_prev):
                break
    finally:
        _memoize_inner(cost, False)
    return x, mon.finish(x)


def run(config, problem=None, *, f0=None, g=None, cost=None, x0, snr_fn=None, cost_fn=None):
    """Dispatch to the solver named by ``config.algorithm``."""
    if config.algorithm == "admm":
        return run_admm(problem, config, x0, snr_fn, cost_fn)
    if config.algorithm == "pd":
        return run_primal_dual(problem, config, x0, snr_fn, cost_fn)
    if config.algorithm == "fbs":
        return run_fbs(f0, g, config, x0, snr_fn, cost_fn)
    return run_vmlmb(cost if cost is not None else f0, config, x0, snr_fn, cost_fn)
