"""Synthetic Bradley-Terry preference tasks with injectable noise.

Two kinds of corruption are modelled:

* pointwise: the reference policy is built from a mix of the true reward
  and its negation, so ``rho = 1`` gives a reference that prefers bad
  completions;
* pairwise: each (chosen, rejected) label is swapped independently with
  probability ``p``.

Randomness comes from named Philox streams derived from one integer seed,
so drawing more samples in one stream never shifts another.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .core import PreferenceDataset, PromptSpace, RewardTable, TabularPolicy
from .errors import ConfigError
from .losses import sigmoid


def stream(seed: int, name: str) -> np.random.Generator:
    """A counter-based generator for the named stream of ``seed``."""
    key = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence(int(seed) % 2**64, spawn_key=(key,))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class TaskSpec:
    space: PromptSpace = PromptSpace(8, 8)
    reward_scale: float = 1.0
    ref_sharpness: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.reward_scale >= 0:
            raise ConfigError(f"reward_scale must be non-negative, got {self.reward_scale}")
        if not self.ref_sharpness > 0:
            raise ConfigError(f"ref_sharpness must be positive, got {self.ref_sharpness}")


@dataclass(frozen=True)
class NoiseSpec:
    pointwise_rho: float = 0.0
    pairwise_p: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("pointwise_rho", "pairwise_p"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")


def gen_reward(spec: TaskSpec) -> RewardTable:
    rng = stream(spec.seed, "reward")
    s = spec.reward_scale
    values = rng.uniform(-1.0, 1.0, size=spec.space.shape) * s
    return RewardTable(values, spec.space)


def gen_reference(reward: RewardTable, rho: float, sharpness: float) -> TabularPolicy:
    """softmax(sharpness * ((1 - rho) r - rho r)) per prompt."""
    if not 0.0 <= rho <= 1.0:
        raise ConfigError(f"rho must lie in [0, 1], got {rho}")
    if not sharpness > 0:
        raise ConfigError(f"sharpness must be positive, got {sharpness}")
    logits = sharpness * (1.0 - 2.0 * rho) * reward.values
    return TabularPolicy(logits, reward.space)


def sample_preferences(reward: RewardTable, n: int, seed: int, stream_name: str = "preference") -> PreferenceDataset:
    """Draw n labelled pairs: uniform prompt, uniform distinct completions, BT winner."""
    n = int(n)
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    p, k = reward.space.shape
    rng = stream(seed, stream_name)
    prompts = rng.integers(0, p, size=n)
    first = rng.integers(0, k, size=n)
    # second is uniform over the k - 1 completions different from first
    offset = rng.integers(1, k, size=n)
    second = (first + offset) % k
    r = reward.values
    p_first = sigmoid(r[prompts, first] - r[prompts, second])
    first_wins = rng.random(n) < p_first
    chosen = np.where(first_wins, first, second)
    rejected = np.where(first_wins, second, first)
    return PreferenceDataset(prompts, chosen, rejected, reward.space)


def flip_pairs(dataset: PreferenceDataset, p: float, seed: int) -> PreferenceDataset:
    """Swap each pair's orientation independently with probability p."""
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"flip probability must lie in [0, 1], got {p}")
    rng = stream(seed, "flip")
    swap = rng.random(len(dataset)) < p
    chosen = np.where(swap, dataset.rejected, dataset.chosen)
    rejected = np.where(swap, dataset.chosen, dataset.rejected)
    return PreferenceDataset(dataset.prompts, chosen, rejected, dataset.space,
                             flipped=dataset.flipped ^ swap)


@dataclass
class Task:
    reward: RewardTable
    reference: TabularPolicy
    train: PreferenceDataset
    test: PreferenceDataset


def make_task(spec: TaskSpec, noise: NoiseSpec, n_train: int, n_test: int) -> Task:
    """Reward, (possibly corrupted) reference, noisy train set and clean test set."""
    reward = gen_reward(spec)
    reference = gen_reference(reward, noise.pointwise_rho, spec.ref_sharpness)
    train = sample_preferences(reward, n_train, spec.seed, "preference")
    train = flip_pairs(train, noise.pairwise_p, noise.seed)
    test = sample_preferences(reward, n_test, spec.seed, "test")
    return Task(reward, reference, train, test)
