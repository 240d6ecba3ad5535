"""
Seeded synthetic corpora drawn from the model's own assumptions.

Random streams are described in :mod:`regimelab.rng`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import LABELS, LabeledCorpus
from .errors import ParameterError, ShapeError
from .estimation import FitResult, fit_map
from .model import ModelParams, evaluate
from .rng import (STREAM_LABELS, STREAM_SHUFFLE, STREAM_TRAJECTORY, bit_generator,
                  normals, uniforms)

SCENARIOS = ("random_walk", "piecewise_ramp")


@dataclass(frozen=True)
class SynthSpec:
    length: int = 86
    sig_rw: float = 0.3
    g0: float = -2.0
    params: ModelParams = ModelParams()
    seed: int = 0
    scenario: str = "piecewise_ramp"

    def __post_init__(self):
        if isinstance(self.length, bool) or int(self.length) != self.length or self.length < 2:
            raise ParameterError(f"length must be an integer >= 2, got {self.length!r}")
        if not (math.isfinite(self.sig_rw) and self.sig_rw > 0):
            raise ParameterError(f"sig_rw must be positive, got {self.sig_rw!r}")
        if not math.isfinite(self.g0):
            raise ParameterError("g0 must be finite")
        if self.scenario not in SCENARIOS:
            raise ParameterError(f"scenario must be one of {SCENARIOS}")
        if self.scenario == "piecewise_ramp" and self.g0 >= 0:
            raise ParameterError("piecewise_ramp needs g0 < 0")


def ramp_shape(length: int, g0: float) -> np.ndarray:
    """Noise-free ramp: flat at ``g0`` over the first third, linear rise to
    ``|g0|`` across the middle third, flat at ``|g0|`` over the last third."""
    u = np.linspace(0.0, 1.0, length)
    frac = np.clip((u - 1 / 3) * 3, 0.0, 1.0)
    return g0 + (abs(g0) - g0) * frac


def sample_trajectory(spec: SynthSpec) -> np.ndarray:
    bg = bit_generator(spec.seed, STREAM_TRAJECTORY)
    if spec.scenario == "random_walk":
        steps = spec.sig_rw * normals(bg, spec.length - 1)
        return np.concatenate([[spec.g0], spec.g0 + np.cumsum(steps)])
    return ramp_shape(spec.length, spec.g0) + spec.sig_rw * normals(bg, spec.length)


def sample_labels(trajectory, params: ModelParams, seed: int) -> tuple:
    """Independent categorical draw per turn from the clamped (NP, FR, MN)
    probabilities, by inverse CDF on one uniform each."""
    g = np.asarray(trajectory, dtype=float)
    if not np.all(np.isfinite(g)):
        raise ParameterError("trajectory must be finite")
    p = evaluate(g, params.beta, params.alpha, params.gamma, params.tau_a,
                 params.tau_p, params.kappa, params.eps_p)
    u = uniforms(bit_generator(seed, STREAM_LABELS), g.size)
    code = np.where(u < p["p_np"], 0, np.where(u < p["p_np"] + p["p_fr"], 1, 2))
    return tuple(LABELS[c] for c in code)


def synthesize(spec: SynthSpec, label_seed: int | None = None):
    """Trajectory plus a corpus (turns 1..T, empty texts) sampled from it."""
    g = sample_trajectory(spec)
    labels = sample_labels(g, spec.params, spec.seed if label_seed is None else label_seed)
    return g, LabeledCorpus.from_labels(labels)


def pearson(a, b) -> float:
    """Pearson correlation, reported as 0 when either side has zero variance."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    # exact test first: the centred residue of a constant need not be 0
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return 0.0
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(np.sum(a * a)) * float(np.sum(b * b)))
    if den == 0.0:
        return 0.0
    return float(np.sum(a * b)) / den


def rmse(a, b) -> float:
    return float(np.sqrt(np.mean((np.asarray(a, float) - np.asarray(b, float)) ** 2)))


@dataclass(frozen=True)
class RecoveryReport:
    r: float
    rmse: float
    rmse_zeros: float
    r_shuffled: float

    @property
    def beats_zeros(self) -> bool:
        return self.rmse < self.rmse_zeros

    @property
    def beats_shuffled(self) -> bool:
        return self.r > self.r_shuffled

    @property
    def passed(self) -> bool:
        return self.beats_zeros and self.beats_shuffled


def shuffled_refit(fit: FitResult, seed: int | None = None) -> FitResult:
    """Refit with the same config after a seeded permutation of the labels."""
    seed = fit.config.optimizer.seed if seed is None else seed
    keys = uniforms(bit_generator(seed, STREAM_SHUFFLE), len(fit.labels))
    order = np.argsort(keys, kind="stable")
    labels = [fit.labels[i] for i in order]
    return fit_map(LabeledCorpus.from_labels(labels, fit.turns), fit.config)


def recovery_report(true_g, fit: FitResult, seed: int | None = None) -> RecoveryReport:
    true_g = np.asarray(true_g, dtype=float)
    g_hat = fit.params_hat.gap_trajectory
    if true_g.shape != g_hat.shape:
        raise ShapeError(f"true trajectory length {true_g.size} != fitted length {g_hat.size}")
    shuffled = shuffled_refit(fit, seed)
    return RecoveryReport(
        r=pearson(true_g, g_hat),
        rmse=rmse(true_g, g_hat),
        rmse_zeros=rmse(true_g, np.zeros_like(true_g)),
        r_shuffled=pearson(true_g, shuffled.params_hat.gap_trajectory),
    )
