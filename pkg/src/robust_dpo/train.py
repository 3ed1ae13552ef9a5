"""Plain gradient descent on tabular policies, plus evaluation metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .core import PreferenceDataset, RewardTable, TabularPolicy, check_same_space, kl_policy, log_ratio_table, require_nonempty
from .dro import gibbs_weights
from .errors import ConfigError, ShapeError, TrainingDivergedError
from .grad import loss_and_grad
from .losses import LossSpec, h_values
from .synth import stream


@dataclass(frozen=True)
class TrainConfig:
    loss: LossSpec = field(default_factory=LossSpec)
    learning_rate: float = 0.05
    steps: int = 2000
    batch_size: int = 0
    seed: int = 0
    record_every: int = 100

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if int(self.steps) < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if int(self.batch_size) < 0:
            raise ConfigError(f"batch_size must be 0 (full batch) or positive, got {self.batch_size}")
        if int(self.record_every) < 1:
            raise ConfigError(f"record_every must be >= 1, got {self.record_every}")


@dataclass
class TrainReport:
    loss_curve: list = field(default_factory=list)
    final_preference_accuracy: float | None = None
    final_expected_reward: float | None = None
    final_kl: float = 0.0
    weight_stats: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _batches(n: int, batch_size: int, seed: int):
    """Endless sequence of index arrays: contiguous blocks of a fresh permutation per epoch."""
    if batch_size == 0 or batch_size >= n:
        while True:
            yield None
    rng = stream(seed, "minibatch")
    while True:
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield perm[start:start + batch_size]


def train(reference: TabularPolicy, dataset: PreferenceDataset, config: TrainConfig, *,
          reward: RewardTable | None = None, clean_test: PreferenceDataset | None = None):
    """Gradient descent from ``reference`` on the configured loss.

    The recorded loss is always the full-dataset objective at the current
    policy, evaluated before the step with that index; the last entry is the
    loss after the final step. Returns ``(policy, report)``.
    """
    require_nonempty(dataset)
    check_same_space(reference, dataset)
    spec = config.loss
    logits = np.array(reference.logits)
    batches = _batches(len(dataset), int(config.batch_size), config.seed)
    report = TrainReport()
    steps = int(config.steps)

    def record(step, policy, loss):
        report.loss_curve.append((step, loss))
        if spec.kind == "drdpo":
            w = gibbs_weights(h_values(policy, reference, dataset, spec.beta), spec.beta_prime)
            report.weight_stats.append((step, float(w.min()), float(w.max()), float(w.mean())))

    for step in range(steps):
        policy = reference.with_logits(logits)
        # overflow surfaces as a non-finite loss and is reported below
        with np.errstate(over="ignore", invalid="ignore"):
            full_loss, full_grad = loss_and_grad(policy, reference, dataset, spec)
        if not np.isfinite(full_loss):
            raise TrainingDivergedError(step, full_loss)
        if step % config.record_every == 0:
            record(step, policy, full_loss)
        idx = next(batches)
        if idx is None:
            grad = full_grad
        else:
            with np.errstate(over="ignore", invalid="ignore"):
                _, grad = loss_and_grad(policy, reference, dataset.subset(idx), spec)
        with np.errstate(over="ignore", invalid="ignore"):
            logits = logits - config.learning_rate * grad
        if not np.all(np.isfinite(logits)):
            raise TrainingDivergedError(step, float("nan"))

    policy = reference.with_logits(logits)
    with np.errstate(over="ignore", invalid="ignore"):
        final_loss, _ = loss_and_grad(policy, reference, dataset, spec)
    if not np.isfinite(final_loss):
        raise TrainingDivergedError(steps, final_loss)
    record(steps, policy, final_loss)

    report.final_kl = eval_kl(policy, reference)
    if clean_test is not None:
        report.final_preference_accuracy = eval_preference_accuracy(policy, reference, spec.beta, clean_test)
    if reward is not None:
        report.final_expected_reward = eval_expected_reward(policy, reward)
    return policy, report


def eval_preference_accuracy(policy, reference, beta, clean_test: PreferenceDataset) -> float:
    """Share of test pairs whose implicit reward ranks chosen above rejected; ties score 1/2."""
    if len(clean_test) == 0:
        raise ConfigError("test set is empty")
    table = beta * log_ratio_table(policy, reference)
    x = clean_test.prompts
    diff = table[x, clean_test.chosen] - table[x, clean_test.rejected]
    return float(np.mean((diff > 0) + 0.5 * (diff == 0)))


def eval_expected_reward(policy: TabularPolicy, reward: RewardTable) -> float:
    if policy.space != reward.space:
        raise ShapeError(f"space mismatch: {policy.space} vs {reward.space}")
    return float(np.mean(np.sum(policy.probs() * reward.values, axis=1)))


def eval_kl(policy, reference) -> float:
    return kl_policy(policy, reference)
