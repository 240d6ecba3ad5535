"""
MAP reconstruction of the latent gap trajectory.

The negative log posterior over ``(G_1..G_T, alpha, gamma, kappa)`` is::

    neg_logpost = neg_loglik + pen_rw + gauge_pen + pen_l2

    neg_loglik = -sum_t log clamp(P_{y_t}(G_t))
    pen_rw     = 0.5 * sum_{t>=2} (G_t - G_{t-1})**2 / sig_rw**2
    gauge_pen  = gauge_w * mean(G)**2
    pen_l2     = 0.5 * (lam_alpha*alpha**2 + lam_gamma*gamma**2 + lam_kappa*kappa**2)

with ``beta``, ``tau_a``, ``tau_p`` and the random-walk scale held fixed.
The increment penalty ``lam`` and the random-walk scale are tied by
``lam = 0.5 / sig_rw**2``, so ``pen_rw == lam * sum(diff(G)**2)``.

Minimisation uses L-BFGS with the analytic gradient. The trajectory is
optimised in coordinates whitened by the Cholesky factor of the quadratic
penalties, ``alpha`` on the log scale and ``kappa`` on the logit scale, so
that the fitted values always form valid :class:`~regimelab.model.ModelParams`
and large lambdas do not stall the optimiser.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from .corpus import LABEL_INDEX, LabeledCorpus
from .errors import (CalibrationUnavailableError, NumericError, ParameterError,
                     ShapeError)
from .model import ModelParams, _sigmoid, regime_probs
from .sensitivity import derivs_wrt_gap

logger = logging.getLogger(__name__)

__all__ = [
    "OptimizerConfig",
    "FitConfig",
    "ParamHat",
    "Objective",
    "FitResult",
    "SweepResult",
    "default_grid",
    "neg_logpost",
    "objective_and_gradient",
    "fit_map",
    "lambda_sweep",
    "select_lambda",
    "reconstruct_probs",
    "trajectory_sensitivities",
]


@dataclass(frozen=True)
class OptimizerConfig:
    max_iterations: int = 5000
    gradient_tolerance: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise ParameterError("max_iterations must be a positive integer")
        if not (math.isfinite(self.gradient_tolerance) and self.gradient_tolerance > 0):
            raise ParameterError("gradient_tolerance must be positive")
        if int(self.seed) != self.seed:
            raise ParameterError("seed must be an integer")


@dataclass(frozen=True)
class FitConfig:
    lam: float = 1.15
    beta_fixed: float = 1.0
    tau_a_hat: float = 0.8
    tau_p_hat: float = 0.4
    lam_alpha: float = 1.0
    lam_gamma: float = 1.0
    lam_kappa: float = 1.0
    gauge_w: float = 1e2
    eps_p: float = 1e-12
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        for f in fields(self):
            if f.name == "optimizer":
                continue
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ParameterError(f"{f.name} must be a finite number, got {v!r}")
        if self.lam <= 0:
            raise ParameterError(f"lambda must be > 0, got {self.lam}")
        if not math.isfinite(self.sig_rw):
            raise ParameterError(f"lambda={self.lam} gives a non-finite sig_rw")
        if self.beta_fixed <= 0:
            raise ParameterError("beta_fixed must be > 0")
        for name in ("lam_alpha", "lam_gamma", "lam_kappa", "gauge_w"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")
        if not 0 < self.eps_p < 1e-3:
            raise ParameterError("eps_p must lie in (0, 1e-3)")

    @property
    def sig_rw(self) -> float:
        return math.sqrt(0.5 / self.lam)

    def with_lambda(self, lam: float) -> "FitConfig":
        return replace(self, lam=float(lam))

    def to_dict(self) -> dict:
        """Flat key-value form (the config-file layout)."""
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "optimizer"}
        out["lambda"] = out.pop("lam")
        out.update(asdict(self.optimizer))
        return out

    @classmethod
    def from_mapping(cls, mapping: Mapping, base: "FitConfig | None" = None) -> "FitConfig":
        """Overlay a flat mapping onto ``base`` (defaults when omitted).

        Accepts ``lambda`` or ``sig_rw`` for the increment penalty and the
        optimizer keys either flat or under an ``optimizer`` object.
        """
        base = base or cls()
        top = {f.name for f in fields(cls)} - {"optimizer", "lam"}
        opt_keys = {f.name for f in fields(OptimizerConfig)}
        kw, opt = {}, {}
        for key, value in mapping.items():
            if key == "optimizer":
                if not isinstance(value, Mapping):
                    raise ParameterError("'optimizer' must be an object")
                for k, v in value.items():
                    if k not in opt_keys:
                        raise ParameterError(f"unknown optimizer key {k!r}")
                    opt[k] = v
            elif key == "lambda":
                kw["lam"] = value
            elif key == "sig_rw":
                if not (isinstance(value, (int, float)) and value > 0):
                    raise ParameterError("sig_rw must be > 0")
                kw["lam"] = 0.5 / value ** 2
            elif key in top:
                kw[key] = value
            elif key in opt_keys:
                opt[key] = value
            else:
                raise ParameterError(f"unknown config key {key!r}")
        if "lambda" in mapping and "sig_rw" in mapping:
            raise ParameterError("give either 'lambda' or 'sig_rw', not both")
        optimizer = replace(base.optimizer, **opt) if opt else base.optimizer
        return replace(base, optimizer=optimizer, **kw)


@dataclass(frozen=True)
class ParamHat:
    gap_trajectory: np.ndarray
    alpha_hat: float
    gamma_hat: float
    kappa_hat: float

    def __post_init__(self):
        g = np.array(self.gap_trajectory, dtype=float)
        g.setflags(write=False)
        object.__setattr__(self, "gap_trajectory", g)
        if g.ndim != 1:
            raise ShapeError("gap_trajectory must be one-dimensional")

    @classmethod
    def initial(cls, length: int) -> "ParamHat":
        return cls(np.zeros(length), 1.0, 1.0, 0.5)


@dataclass(frozen=True)
class Objective:
    neg_logpost: float
    neg_loglik: float
    pen_rw: float
    gauge_pen: float
    pen_l2: float


@dataclass(frozen=True)
class FitResult:
    params_hat: ParamHat
    objective: Objective
    probs: tuple
    converged: bool
    iterations: int
    config: FitConfig
    labels: tuple
    turns: tuple
    message: str = ""

    @property
    def model_params(self) -> ModelParams:
        ph, cfg = self.params_hat, self.config
        return ModelParams(beta=cfg.beta_fixed, alpha=ph.alpha_hat, gamma=ph.gamma_hat,
                           tau_a=cfg.tau_a_hat, tau_p=cfg.tau_p_hat,
                           kappa=ph.kappa_hat, eps_p=cfg.eps_p)

    def prob_matrix(self) -> np.ndarray:
        """``(T, 3)`` array of fitted (NP, FR, MN) probabilities."""
        return np.array([p.as_tuple() for p in self.probs])

    def mn_calibration(self) -> float | None:
        """Mean fitted P_MN over MN-labelled turns, or None without MN turns."""
        vals = [p.p_mn for p, lab in zip(self.probs, self.labels) if lab == "MN"]
        return float(np.mean(vals)) if vals else None


@dataclass(frozen=True)
class SweepResult:
    grid: tuple
    fits: tuple
    adj_rmse: tuple
    mn_calibration: tuple
    selected_lambda: float | None

    def __post_init__(self):
        if len(self.adj_rmse) != len(self.grid) - 1:
            raise ShapeError("adj_rmse must have one entry per adjacent grid pair")


def default_grid(lo: float = 0.1, hi: float = 10.0, count: int = 25) -> np.ndarray:
    return np.logspace(math.log10(lo), math.log10(hi), count)


def _codes(labels) -> np.ndarray:
    try:
        return np.array([l if isinstance(l, (int, np.integer)) else LABEL_INDEX[l]
                         for l in labels], dtype=np.intp)
    except KeyError as exc:
        raise ParameterError(f"unknown label {exc.args[0]!r}") from None


# Guards against exp overflow in line searches; far outside any useful range.
_LOG_ALPHA_BOUND = 30.0
_LOGIT_KAPPA_BOUND = 40.0


class _Problem:
    """Optimiser coordinates for one fit.

    ``x = (y, log alpha, gamma, logit kappa)`` with ``G = L^-T y``, where
    ``L L^T`` is the Hessian of the random-walk and gauge penalties plus the
    identity. The quadratic penalties then look isotropic to L-BFGS, which
    keeps large-lambda fits from stalling on conditioning.
    """

    def __init__(self, codes, cfg: FitConfig):
        self.codes = codes
        self.cfg = cfg
        T = self.T = codes.size
        D = np.diff(np.eye(T), axis=0)
        H = (D.T @ D) / cfg.sig_rw ** 2 + (2 * cfg.gauge_w / T ** 2) * np.ones((T, T))
        chol = np.linalg.cholesky(H + np.eye(T))
        self.to_gap = np.linalg.inv(chol).T        # G = to_gap @ y
        self.from_gap = chol.T                     # y = from_gap @ G
        hi = np.concatenate([np.full(T, np.inf),
                             [_LOG_ALPHA_BOUND, np.inf, _LOGIT_KAPPA_BOUND]])
        self.bounds = list(zip(-hi, hi))

    def pack(self, ph: ParamHat) -> np.ndarray:
        k = min(max(ph.kappa_hat, 1e-15), 1 - 1e-15)
        a = min(max(math.log(ph.alpha_hat), -_LOG_ALPHA_BOUND), _LOG_ALPHA_BOUND)
        u = min(max(math.log(k / (1 - k)), -_LOGIT_KAPPA_BOUND), _LOGIT_KAPPA_BOUND)
        return np.concatenate([self.from_gap @ ph.gap_trajectory, [a, ph.gamma_hat, u]])

    def unpack(self, x) -> ParamHat:
        return ParamHat(self.to_gap @ x[:-3], math.exp(x[-3]), float(x[-2]),
                        float(_sigmoid(x[-1])))

    def __call__(self, x):
        ph = self.unpack(x)
        obj, grad = objective_and_gradient(ph.gap_trajectory, ph.alpha_hat, ph.gamma_hat,
                                           ph.kappa_hat, self.codes, self.cfg)
        grad_x = np.empty_like(grad)
        grad_x[:-3] = self.to_gap.T @ grad[:-3]
        grad_x[-3] = grad[-3] * ph.alpha_hat
        grad_x[-2] = grad[-2]
        grad_x[-1] = grad[-1] * ph.kappa_hat * (1 - ph.kappa_hat)
        return obj.neg_logpost, grad_x

    def _grad(self, G, ph):
        return objective_and_gradient(G, ph.alpha_hat, ph.gamma_hat, ph.kappa_hat,
                                      self.codes, self.cfg)[1]

    def residual(self, ph: ParamHat, x) -> float:
        """First-order stationarity residual in the natural coordinates.

        Turns sitting on the ``|G|`` kink are stationary when the one-sided
        derivatives bracket zero; coordinates on a box guard only need the
        gradient to point outward.
        """
        G = ph.gap_trajectory
        grad = self._grad(G, ph)
        res = np.abs(grad[:-3])
        kink = np.abs(G) <= 1e-6
        if kink.any():
            right = self._grad(np.where(kink, 1e-300, G), ph)[:-3]
            left = self._grad(np.where(kink, -1e-300, G), ph)[:-3]
            res[kink] = np.maximum(0.0, np.maximum(left[kink], -right[kink]))
        chain = np.array([ph.alpha_hat, 1.0, ph.kappa_hat * (1 - ph.kappa_hat)])
        tail = grad[-3:] * chain
        for i, j in ((0, -3), (2, -1)):
            lo, hi = self.bounds[j]
            if x[j] <= lo:
                tail[i] = min(tail[i], 0.0)
            elif x[j] >= hi:
                tail[i] = max(tail[i], 0.0)
        return float(max(np.max(res), np.max(np.abs(tail))))

    def minimize(self, start: ParamHat):
        opt = self.cfg.optimizer
        x0 = self.pack(start)
        f0, _ = self(x0)
        res = minimize(self, x0, jac=True, method="L-BFGS-B", bounds=self.bounds,
                       options={"maxiter": opt.max_iterations,
                                "gtol": opt.gradient_tolerance,
                                "ftol": 1e-15, "maxcor": 20, "maxls": 50})
        x, f = res.x, float(res.fun)
        if not f <= f0:
            x, f = x0, f0
        # ftol exits at the rounding floor count as converged when the point
        # is first-order stationary; the iteration cap never does. Minima on
        # the |G| kink are only reached to ~1e-4 by a smooth method, hence the
        # looser kink-aware tolerance.
        _, g = self(x)
        gmax = float(np.max(np.abs(g)))
        ph = self.unpack(x)
        converged = res.nit < opt.max_iterations and (
            gmax <= opt.gradient_tolerance
            or (res.status in (0, 2)
                and (gmax <= 1e-5 or self.residual(ph, x) <= 1e-3)))
        logger.debug("fit lam=%g nit=%d status=%d f=%.12g |g|=%.3g",
                     self.cfg.lam, res.nit, res.status, f, gmax)
        return ph, f, converged, int(res.nit), str(res.message)


def objective_and_gradient(G, alpha, gamma, kappa, codes, cfg: FitConfig):
    """Objective decomposition and gradient with respect to
    ``(G_1..G_T, alpha, gamma, kappa)``.

    Clamped probabilities contribute zero gradient where the clamp is active.
    """
    G = np.asarray(G, dtype=float)
    T = G.size
    e = cfg.eps_p
    beta, ta, tp = cfg.beta_fixed, cfg.tau_a_hat, cfg.tau_p_hat

    s = _sigmoid(beta * G)
    absg = np.abs(G)
    z = alpha * (absg - ta) + gamma * (s - tp)
    m = _sigmoid(z)
    q = kappa * m
    p_mn = np.clip(q, e, 1 - e)
    r_fr = (1 - p_mn) * s
    r_np = (1 - p_mn) * (1 - s)
    p_fr = np.clip(r_fr, e, 1 - e)
    p_np = np.clip(r_np, e, 1 - e)

    is_np, is_fr, is_mn = codes == 0, codes == 1, codes == 2
    p_y = np.where(is_np, p_np, np.where(is_mn, p_mn, p_fr))
    log_p = np.log(np.clip(p_y, e, 1 - e))
    bad = ~np.isfinite(log_p)
    if bad.any():
        raise NumericError(f"non-finite log-likelihood at turn position {int(np.argmax(bad)) + 1}",
                           index=int(np.argmax(bad)))

    neg_loglik = -float(np.sum(log_p))
    dG = np.diff(G)
    sig2 = cfg.sig_rw ** 2
    pen_rw = 0.5 * float(np.sum(dG ** 2)) / sig2
    mean_g = float(np.mean(G))
    gauge_pen = cfg.gauge_w * mean_g ** 2
    pen_l2 = 0.5 * (cfg.lam_alpha * alpha ** 2 + cfg.lam_gamma * gamma ** 2
                    + cfg.lam_kappa * kappa ** 2)
    total = neg_loglik + pen_rw + gauge_pen + pen_l2
    if not math.isfinite(total):
        raise NumericError("non-finite objective")
    obj = Objective(total, neg_loglik, pen_rw, gauge_pen, pen_l2)

    # d p_y / d(theta) per turn; the clamp masks zero the inactive branches
    in_mn = (q > e) & (q < 1 - e)
    in_fr = (r_fr > e) & (r_fr < 1 - e)
    in_np = (r_np > e) & (r_np < 1 - e)
    ds = beta * s * (1 - s)
    km = kappa * m * (1 - m) * in_mn
    dmn = {
        "G": km * (alpha * np.sign(G) + gamma * ds),
        "alpha": km * (absg - ta),
        "gamma": km * (s - tp),
        "kappa": m * in_mn,
    }

    def dp_y(key):
        direct = ds if key == "G" else 0.0
        d_fr = in_fr * ((1 - p_mn) * direct - s * dmn[key])
        d_np = in_np * (-(1 - p_mn) * direct - (1 - s) * dmn[key])
        return np.where(is_np, d_np, np.where(is_mn, dmn[key], d_fr))

    w = -1.0 / p_y
    grad_g = w * dp_y("G")
    grad_g[1:] += dG / sig2
    grad_g[:-1] -= dG / sig2
    grad_g += 2 * cfg.gauge_w * mean_g / T
    grad_alpha = float(np.sum(w * dp_y("alpha"))) + cfg.lam_alpha * alpha
    grad_gamma = float(np.sum(w * dp_y("gamma"))) + cfg.lam_gamma * gamma
    grad_kappa = float(np.sum(w * dp_y("kappa"))) + cfg.lam_kappa * kappa
    return obj, np.concatenate([grad_g, [grad_alpha, grad_gamma, grad_kappa]])


def _check_lengths(ph: ParamHat, codes):
    T = ph.gap_trajectory.size
    if T != len(codes):
        raise ShapeError(f"trajectory length {T} != number of labels {len(codes)}")
    if T < 2:
        raise ShapeError("at least two turns are required")
    if not np.all(np.isfinite(ph.gap_trajectory)):
        idx = int(np.argmax(~np.isfinite(ph.gap_trajectory)))
        raise NumericError(f"non-finite gap at turn position {idx + 1}", index=idx)


def neg_logpost(ph: ParamHat, labels: Sequence, cfg: FitConfig) -> Objective:
    codes = _codes(labels)
    _check_lengths(ph, codes)
    obj, _ = objective_and_gradient(ph.gap_trajectory, ph.alpha_hat, ph.gamma_hat,
                                    ph.kappa_hat, codes, cfg)
    return obj


def _finish(corpus: LabeledCorpus, cfg: FitConfig, ph: ParamHat, converged, nit, msg):
    codes = corpus.codes()
    obj = neg_logpost(ph, codes, cfg)
    fit = FitResult(params_hat=ph, objective=obj, probs=(), converged=bool(converged),
                    iterations=int(nit), config=cfg, labels=corpus.labels,
                    turns=corpus.turn_indices, message=msg)
    return replace(fit, probs=reconstruct_probs(fit))


def fit_map(corpus: LabeledCorpus, cfg: FitConfig | None = None,
            init: ParamHat | None = None) -> FitResult:
    """MAP estimate of the gap trajectory and (alpha, gamma, kappa).

    The optimiser starts from ``G = 0, alpha = 1, gamma = 1, kappa = 0.5``
    and, when ``init`` is given (warm start), also from ``init``; the lower
    objective wins and the default start wins exact ties, so a warm start
    can never end above the cold fit. Hitting the iteration cap returns the
    best point found with ``converged=False``.
    """
    cfg = cfg or FitConfig()
    T = len(corpus)
    if T < 2:
        raise ShapeError("fit_map needs a corpus of at least two turns")
    starts = [ParamHat.initial(T)]
    if init is not None:
        if init.gap_trajectory.size != T:
            raise ShapeError("initial trajectory length does not match the corpus")
        starts.append(init)

    problem = _Problem(corpus.codes(), cfg)
    best, iterations = None, 0
    for start in starts:
        cand = problem.minimize(start)
        iterations += cand[3]
        if best is None or cand[1] < best[1]:
            best = cand
    ph, _, converged, _, msg = best
    return _finish(corpus, cfg, ph, converged, iterations, msg)


def _validate_grid(grid):
    grid = [float(v) for v in grid]
    if len(grid) < 2:
        raise ParameterError("lambda grid needs at least two values")
    if not all(math.isfinite(v) and v > 0 for v in grid):
        raise ParameterError("lambda grid values must be positive and finite")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ParameterError("lambda grid must be strictly increasing")
    return tuple(grid)


def _rmse(a, b) -> float:
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def lambda_sweep(corpus: LabeledCorpus, cfg: FitConfig | None = None, grid=None,
                 warm_start: bool = True, workers: int = 1,
                 target: float = 0.5) -> SweepResult:
    """Fit once per lambda and collect stability and calibration diagnostics.

    With ``warm_start`` each fit starts from the previous lambda's solution
    (ascending order). Cold-start sweeps may run on ``workers`` threads;
    results do not depend on execution order.
    """
    cfg = cfg or FitConfig()
    grid = _validate_grid(default_grid() if grid is None else grid)
    if warm_start:
        fits, prev = [], None
        for lam in grid:
            fit = fit_map(corpus, cfg.with_lambda(lam),
                          init=prev.params_hat if prev is not None else None)
            fits.append(fit)
            prev = fit
    else:
        cfgs = [cfg.with_lambda(lam) for lam in grid]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                fits = list(pool.map(lambda c: fit_map(corpus, c), cfgs))
        else:
            fits = [fit_map(corpus, c) for c in cfgs]

    adj = tuple(_rmse(b.params_hat.gap_trajectory, a.params_hat.gap_trajectory)
                for a, b in zip(fits, fits[1:]))
    calib = tuple(f.mn_calibration() for f in fits)
    sweep = SweepResult(grid=grid, fits=tuple(fits), adj_rmse=adj,
                        mn_calibration=calib, selected_lambda=None)
    if any(c is not None for c in calib):
        sweep = replace(sweep, selected_lambda=select_lambda(sweep, target))
    return sweep


def select_lambda(sweep, target: float = 0.5) -> float:
    """Grid lambda whose MN calibration is nearest ``target``; ties go to the
    smaller lambda.

    ``sweep`` needs ``grid`` and ``mn_calibration`` (None marks an undefined
    calibration).
    """
    best, best_dist = None, math.inf
    for lam, cal in zip(sweep.grid, sweep.mn_calibration):
        if cal is None:
            continue
        dist = abs(cal - target)
        # equidistant values can differ in the last ulp after subtraction
        if dist < best_dist - 1e-12 or (best is not None and abs(dist - best_dist) <= 1e-12
                                         and lam < best):
            best, best_dist = lam, min(dist, best_dist)
    if best is None:
        raise CalibrationUnavailableError(
            "no MN-labelled turns: calibration is unavailable, pass lambda explicitly")
    return float(best)


def reconstruct_probs(fit: FitResult) -> tuple:
    params = fit.model_params
    return tuple(regime_probs(float(g), params) for g in fit.params_hat.gap_trajectory)


def trajectory_sensitivities(fit: FitResult) -> tuple:
    params = fit.model_params
    return tuple(derivs_wrt_gap(float(g), params) for g in fit.params_hat.gap_trajectory)
