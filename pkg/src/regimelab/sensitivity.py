"""
Closed-form derivatives of the regime probabilities with respect to the gap.

Derivatives are taken on the *unclamped* map. ``d|G|/dG`` is ``sign(G)``
with ``sign(0) = 0``, and the impulse that ``|G|`` contributes to the second
derivative at zero is dropped. With competence held fixed, ``dG/dA = 1``,
so the same bundle gives the sensitivities with respect to alignment
pressure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np

from .errors import KinkError, ParameterError
from .model import ModelParams, TheoreticalParams, _check_gap, evaluate
from .rng import STREAM_CHECKS, bit_generator, uniforms

__all__ = [
    "SensitivityBundle",
    "derivatives",
    "derivs_wrt_gap",
    "derivs_wrt_pressure",
    "finite_diff_check",
    "second_diff_check",
    "random_draws",
    "CheckReport",
    "gradient_check",
]


@dataclass(frozen=True)
class SensitivityBundle:
    d_p_np: float
    d_p_fr: float
    d_p_mn: float
    d2_p_fr: float
    d_p_fr_lat: float
    d_p_mn_lat: float


def derivatives(gap, beta, alpha, gamma, tau_a, tau_p, kappa):
    """Vectorised derivative kernel; returns a dict of arrays keyed like
    :class:`SensitivityBundle` plus the unclamped ``p_mn``."""
    g = np.asarray(gap, dtype=float)
    raw = evaluate(g, beta, alpha, gamma, tau_a, tau_p, kappa, clamp=False)
    s = raw["p_fr_lat"]
    m = raw["p_mn_lat"]
    p_mn = raw["p_mn"]

    ds = beta * s * (1 - s)
    d2s = beta ** 2 * s * (1 - s) * (1 - 2 * s)

    dz = alpha * np.sign(g) + gamma * ds
    d2z = gamma * d2s

    mm = m * (1 - m)
    dm = mm * dz
    d2m = mm * d2z + (1 - 2 * m) * mm * dz ** 2

    dp_mn = kappa * dm
    d2p_mn = kappa * d2m

    dp_fr = (1 - p_mn) * ds - s * dp_mn
    d2p_fr = (1 - p_mn) * d2s - 2 * ds * dp_mn - s * d2p_mn
    dp_np = -(1 - s) * dp_mn - (1 - p_mn) * ds

    return {"d_p_np": dp_np, "d_p_fr": dp_fr, "d_p_mn": dp_mn,
            "d2_p_fr": d2p_fr, "d_p_fr_lat": ds, "d_p_mn_lat": dm,
            "p_mn": p_mn}


def _bundle(out):
    return SensitivityBundle(**{k: float(out[k]) for k in (
        "d_p_np", "d_p_fr", "d_p_mn", "d2_p_fr", "d_p_fr_lat", "d_p_mn_lat")})


def derivs_wrt_gap(gap: float, params: ModelParams) -> SensitivityBundle:
    _check_gap(gap)
    return _bundle(derivatives(gap, params.beta, params.alpha, params.gamma,
                               params.tau_a, params.tau_p, params.kappa))


def derivs_wrt_pressure(tp: TheoreticalParams) -> SensitivityBundle:
    """Sensitivities with respect to alignment pressure at fixed competence."""
    return derivs_wrt_gap(tp.gap, tp.reduced())


_FD_KEYS = ("p_np", "p_fr", "p_mn", "p_fr_lat", "p_mn_lat")
_FD_DPS = 40


def _mp_map(gap, p):
    # Independent high-precision evaluation of the unclamped map. In float64
    # the difference quotient loses ~1e-11 absolute to cancellation, which
    # swamps tiny derivatives in the saturated tails.
    def sig(z):
        return 1 / (1 + mpmath.exp(-z))

    s = sig(p.beta * gap)
    m = sig(p.alpha * (abs(gap) - p.tau_a) + p.gamma * (s - p.tau_p))
    p_mn = p.kappa * m
    return {"p_np": (1 - p_mn) * (1 - s), "p_fr": (1 - p_mn) * s,
            "p_mn": p_mn, "p_fr_lat": s, "p_mn_lat": m}


def _check_fd_args(gap, step):
    _check_gap(gap)
    if not (math.isfinite(step) and 1e-8 <= step <= 1e-3):
        raise ParameterError(f"step must lie in [1e-8, 1e-3], got {step!r}")
    if abs(gap) <= step:
        raise KinkError(
            f"gap={gap} is within step={step} of the |gap| kink at 0")


def finite_diff_check(gap: float, params: ModelParams, step: float = 1e-5) -> float:
    """Largest relative error between analytic first derivatives and central
    differences of the unclamped map.

    Covers ``p_np, p_fr, p_mn`` and both latent activations. The relative
    error uses ``max(|analytic|, 1e-8)`` as denominator. The difference
    quotient is formed from a 40-digit evaluation of the map.
    """
    _check_fd_args(gap, step)
    d = derivs_wrt_gap(gap, params)
    with mpmath.workdps(_FD_DPS):
        g, h = mpmath.mpf(gap), mpmath.mpf(step)
        plus = _mp_map(g + h, params)
        minus = _mp_map(g - h, params)
        numeric = {k: float((plus[k] - minus[k]) / (2 * h)) for k in _FD_KEYS}
    worst = 0.0
    for key in _FD_KEYS:
        analytic = getattr(d, "d_" + key)
        err = abs(analytic - numeric[key]) / max(abs(analytic), 1e-8)
        worst = max(worst, err)
    return worst


def second_diff_check(gap: float, params: ModelParams, step: float = 1e-4) -> float:
    """Relative error of the FR curvature against a second central difference."""
    _check_fd_args(gap, step)
    analytic = derivs_wrt_gap(gap, params).d2_p_fr
    with mpmath.workdps(_FD_DPS):
        g, h = mpmath.mpf(gap), mpmath.mpf(step)
        f = [_mp_map(g + k * h, params)["p_fr"] for k in (-1, 0, 1)]
        numeric = float((f[0] - 2 * f[1] + f[2]) / h ** 2)
    return abs(analytic - numeric) / max(abs(analytic), 1e-8)


# (low, high) ranges for random self-check draws
DRAW_RANGES = {
    "beta": (0.2, 3.0),
    "alpha": (0.2, 3.0),
    "gamma": (-2.0, 2.0),
    "tau_a": (0.0, 2.0),
    "tau_p": (0.0, 1.0),
    "kappa": (0.0, 1.0),
    "gap": (-6.0, 6.0),
}


def random_draws(seed: int, n: int, min_abs_gap: float = 0.0):
    """``n`` seeded ``(gap, ModelParams)`` pairs, uniform over ``DRAW_RANGES``.

    Gaps with ``|gap| < min_abs_gap`` are redrawn so checks can keep clear of
    the kink at zero.
    """
    bg = bit_generator(seed, STREAM_CHECKS)
    names = [k for k in DRAW_RANGES if k != "gap"]
    out = []
    while len(out) < n:
        u = uniforms(bg, len(DRAW_RANGES))
        vals = {k: lo + (hi - lo) * ui for (k, (lo, hi)), ui in zip(DRAW_RANGES.items(), u)}
        if abs(vals["gap"]) < min_abs_gap:
            continue
        out.append((float(vals["gap"]), ModelParams(**{k: float(vals[k]) for k in names})))
    return out


@dataclass(frozen=True)
class CheckReport:
    draws: int
    max_rel_error: float
    max_zero_sum: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance and self.max_zero_sum <= 1e-12


def gradient_check(draws: int = 1000, seed: int = 0, step: float = 1e-5,
                   tolerance: float = 1e-6, min_abs_gap: float = 0.01) -> CheckReport:
    """Finite-difference and zero-sum checks over seeded random draws."""
    worst, zsum = 0.0, 0.0
    for gap, params in random_draws(seed, draws, min_abs_gap):
        worst = max(worst, finite_diff_check(gap, params, step))
        d = derivs_wrt_gap(gap, params)
        zsum = max(zsum, abs(d.d_p_np + d.d_p_fr + d.d_p_mn))
    return CheckReport(draws, worst, zsum, tolerance)
