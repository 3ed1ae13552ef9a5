"""Distributionally robust preference optimisation on tabular policies."""

from .core import (
    PreferenceDataset,
    PreferencePair,
    PromptSpace,
    RewardTable,
    TabularPolicy,
    implicit_reward,
    kl_policy,
    log_ratio,
)
from .divergence import JSD, KL, DiscreteDistribution, PhiFamily, parse_phi, phi_conjugate, phi_divergence
from .dro import (
    BoundInputs,
    beta_star,
    generalization_bound,
    gibbs_weights,
    optimal_alpha,
    optimal_likelihood_ratio,
    penalized_objective,
    simplex_search_oracle,
    worst_case_distribution,
)
from .errors import (
    ConfigError,
    DomainError,
    FiniteDifferenceError,
    OracleConvergenceError,
    ShapeError,
    TrainingDivergedError,
)
from .grad import finite_diff, grad_dpo, grad_dr_dpo, grad_loss, loss_and_grad
from .losses import LOSS_KINDS, LossSpec, dpo_loss, dr_dpo_loss, evaluate_loss, h_dpo
from .synth import NoiseSpec, TaskSpec, make_task
from .train import TrainConfig, TrainReport, train

__version__ = "0.1.0"
