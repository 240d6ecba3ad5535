"""
Three-regime probability model.

The latent gap ``G = A - C`` (alignment pressure minus competence) drives
three behavioural regimes:

* FR (functional refusal) through the latent propensity ``s = sigmoid(beta*G)``;
* MN (meta-narrative) through the pressure activation
  ``m = sigmoid(alpha*(|G| - tau_a) + gamma*(s - tau_p))`` scaled by a
  capacity factor (``kappa`` in the reduced form, ``f_cap(C)`` in the
  theoretical form);
* NP (normal performance) as the residual.

MN is allocated first and FR/NP split what is left::

    P_MN = kappa * m
    P_FR = (1 - P_MN) * s
    P_NP = (1 - P_MN) * (1 - s)

After evaluation the probabilities are clamped to ``[eps_p, 1 - eps_p]``,
MN first and then FR and NP, so the three sum to one only up to
``4 * eps_p``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DomainError, ParameterError

__all__ = [
    "ModelParams",
    "TheoreticalParams",
    "RegimeProbs",
    "logistic",
    "latent_fr",
    "capacity",
    "mn_pressure",
    "regime_probs",
    "regime_probs_theoretical",
    "evaluate",
]


def _finite(name, value):
    if not math.isfinite(value):
        raise ParameterError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the reduced (single model, fixed competence) form.

    The defaults place the MN transition inside ``gap in [0, 3]``; they are
    a working parameter set, not fitted values.
    """

    beta: float = 1.0
    alpha: float = 2.0
    gamma: float = 1.5
    tau_a: float = 0.8
    tau_p: float = 0.4
    kappa: float = 0.9
    eps_p: float = 1e-12

    def __post_init__(self):
        for name in ("beta", "alpha", "gamma", "tau_a", "tau_p", "kappa", "eps_p"):
            _finite(name, getattr(self, name))
        if self.beta <= 0:
            raise ParameterError(f"beta must be > 0, got {self.beta}")
        if self.alpha <= 0:
            raise ParameterError(f"alpha must be > 0, got {self.alpha}")
        if not 0.0 <= self.kappa <= 1.0:
            raise ParameterError(f"kappa must lie in [0, 1], got {self.kappa}")
        if not 0.0 < self.eps_p < 1e-3:
            raise ParameterError(f"eps_p must lie in (0, 1e-3), got {self.eps_p}")

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class TheoreticalParams:
    """Competence/pressure form: ``gap = pressure - competence`` and the MN
    capacity factor is ``sigmoid(eta * (competence - c0))``.

    ``model_params.kappa`` is ignored on this path.
    """

    model_params: ModelParams
    eta: float
    c0: float
    competence: float
    pressure: float

    def __post_init__(self):
        for name in ("eta", "c0", "competence", "pressure"):
            _finite(name, getattr(self, name))
        if self.eta <= 0:
            raise ParameterError(f"eta must be > 0, got {self.eta}")

    @property
    def gap(self) -> float:
        return self.pressure - self.competence

    def reduced(self) -> ModelParams:
        """Reduced parameters with kappa set to the capacity at this competence."""
        return self.model_params.replace(
            kappa=capacity(self.competence, self.eta, self.c0))


@dataclass(frozen=True)
class RegimeProbs:
    p_fr_lat: float
    p_mn_lat: float
    z_mn: float
    p_mn: float
    p_fr: float
    p_np: float

    def as_tuple(self):
        """Final probabilities in (NP, FR, MN) order."""
        return (self.p_np, self.p_fr, self.p_mn)


def _sigmoid(z):
    # branch form: no overflow warning, sigmoid(+-1000) is exactly 1.0 / 0.0
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic(z):
    """Numerically stable ``1 / (1 + exp(-z))`` for scalars or arrays."""
    arr = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("logistic requires finite input")
    out = _sigmoid(arr)
    return float(out) if out.ndim == 0 else out


def evaluate(gap, beta, alpha, gamma, tau_a, tau_p, kappa, eps_p=1e-12, clamp=True):
    """Vectorised kernel behind every probability evaluation in the package.

    No parameter validation happens here; callers are the validated public
    wrappers and the estimation objective. Returns a dict of arrays with keys
    ``p_fr_lat, z_mn, p_mn_lat, p_mn, p_fr, p_np``.
    """
    g = np.asarray(gap, dtype=float)
    s = _sigmoid(beta * g)
    z = alpha * (np.abs(g) - tau_a) + gamma * (s - tau_p)
    m = _sigmoid(z)
    p_mn = kappa * m
    if clamp:
        p_mn = np.clip(p_mn, eps_p, 1.0 - eps_p)
    p_fr = (1.0 - p_mn) * s
    p_np = (1.0 - p_mn) * (1.0 - s)
    if clamp:
        p_fr = np.clip(p_fr, eps_p, 1.0 - eps_p)
        p_np = np.clip(p_np, eps_p, 1.0 - eps_p)
    return {"p_fr_lat": s, "z_mn": z, "p_mn_lat": m,
            "p_mn": p_mn, "p_fr": p_fr, "p_np": p_np}


def _check_gap(gap):
    if not math.isfinite(gap):
        raise DomainError(f"gap must be finite, got {gap!r}")


def latent_fr(gap: float, params: ModelParams) -> float:
    """Raw FR propensity ``sigmoid(beta * gap)`` (before competition with MN)."""
    _check_gap(gap)
    return logistic(params.beta * gap)


def capacity(competence: float, eta: float, c0: float) -> float:
    """MN capacity factor ``sigmoid(eta * (competence - c0))``."""
    if not (math.isfinite(eta) and eta > 0):
        raise ParameterError(f"eta must be finite and > 0, got {eta!r}")
    if not (math.isfinite(competence) and math.isfinite(c0)):
        raise DomainError("competence and c0 must be finite")
    return logistic(eta * (competence - c0))


def mn_pressure(gap: float, p_fr_lat: float, params: ModelParams):
    """Internal MN activation ``Z`` and its logistic ``sigmoid(Z)``.

    Depends on the gap only through ``|gap|``.
    """
    _check_gap(gap)
    if not 0.0 <= p_fr_lat <= 1.0:
        raise ParameterError(f"p_fr_lat must lie in [0, 1], got {p_fr_lat!r}")
    z = params.alpha * (abs(gap) - params.tau_a) + params.gamma * (p_fr_lat - params.tau_p)
    return z, logistic(z)


def regime_probs(gap: float, params: ModelParams) -> RegimeProbs:
    _check_gap(gap)
    out = evaluate(gap, params.beta, params.alpha, params.gamma, params.tau_a,
                   params.tau_p, params.kappa, params.eps_p)
    return RegimeProbs(**{k: float(v) for k, v in out.items()})


def regime_probs_theoretical(tp: TheoreticalParams) -> RegimeProbs:
    return regime_probs(tp.gap, tp.reduced())
