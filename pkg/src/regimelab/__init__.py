"""
regimelab: a three-regime behavioural model driven by a latent gap.

Modules
-------
model        regime probabilities (NP, FR, MN) as functions of the gap
sensitivity  closed-form derivatives and finite-difference checks
corpus       labelled dialogue corpora and label-dynamics analytics
estimation   MAP reconstruction of the gap trajectory and lambda sweeps
synthesis    seeded synthetic corpora and recovery diagnostics
cli          batch command-line front end
"""
from .corpus import (LABELS, LabeledCorpus, LabeledTurn, cumulative_counts,
                     dump_corpus, dynamics_csv, label_strip, load_corpus,
                     sliding_proportions)
from .errors import (CalibrationUnavailableError, CorpusError, CorpusParseError,
                     DomainError, KinkError, NumericError, OrderError, ParameterError,
                     RegimeLabError, SchemaError, ShapeError)
from .estimation import (FitConfig, FitResult, Objective, OptimizerConfig, ParamHat,
                         SweepResult, default_grid, fit_map, lambda_sweep, neg_logpost,
                         reconstruct_probs, select_lambda, trajectory_sensitivities)
from .model import (ModelParams, RegimeProbs, TheoreticalParams, capacity, latent_fr,
                    logistic, mn_pressure, regime_probs, regime_probs_theoretical)
from .sensitivity import (SensitivityBundle, derivs_wrt_gap, derivs_wrt_pressure,
                          finite_diff_check, second_diff_check)
from .synthesis import (RecoveryReport, SynthSpec, recovery_report, sample_labels,
                        sample_trajectory, synthesize)

__version__ = "0.1.0"
