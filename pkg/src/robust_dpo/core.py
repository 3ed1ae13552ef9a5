"""Tabular policies over a finite prompt/completion space.

Everything downstream (losses, gradients, training) works on these types.
Log-probabilities are exact: each prompt row is a softmax over a finite
completion set, so partition functions and KL divergences are plain sums.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .errors import ConfigError, ShapeError


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Row-wise log-softmax with max subtraction."""
    logits = np.asarray(logits, dtype=np.float64)
    shift = np.max(logits, axis=axis, keepdims=True)
    shifted = logits - shift
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def logsumexp(values: np.ndarray, axis=None) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    shift = np.max(values, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(values - shift), axis=axis, keepdims=True)) + shift
    if axis is None:
        return out.reshape(())[()]
    return np.squeeze(out, axis=axis)


@dataclass(frozen=True)
class PromptSpace:
    num_prompts: int
    completions_per_prompt: int

    def __post_init__(self):
        if int(self.num_prompts) < 1:
            raise ConfigError(f"num_prompts must be >= 1, got {self.num_prompts}")
        if int(self.completions_per_prompt) < 2:
            raise ConfigError(
                "completions_per_prompt must be >= 2 so a pair has two distinct "
                f"completions, got {self.completions_per_prompt}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_prompts, self.completions_per_prompt)

    def check_index(self, prompt: int, completion: int) -> None:
        if not 0 <= prompt < self.num_prompts:
            raise IndexError(f"prompt index {prompt} out of range [0, {self.num_prompts})")
        if not 0 <= completion < self.completions_per_prompt:
            raise IndexError(
                f"completion index {completion} out of range [0, {self.completions_per_prompt})"
            )


def _frozen_matrix(values, space: PromptSpace | None, what: str) -> tuple[np.ndarray, PromptSpace]:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{what} must be a 2-D [prompt][completion] matrix, got ndim={arr.ndim}")
    if space is None:
        space = PromptSpace(*arr.shape)
    elif arr.shape != space.shape:
        raise ShapeError(f"{what} shape {arr.shape} does not match space {space.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{what} must contain finite entries only")
    arr.setflags(write=False)
    return arr, space


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """A softmax policy with one logit per (prompt, completion)."""

    logits: np.ndarray
    space: PromptSpace

    def __init__(self, logits, space: PromptSpace | None = None):
        arr, space = _frozen_matrix(logits, space, "logits")
        object.__setattr__(self, "logits", arr)
        object.__setattr__(self, "space", space)

    @classmethod
    def uniform(cls, space: PromptSpace) -> TabularPolicy:
        return cls(np.zeros(space.shape), space)

    def log_probs(self) -> np.ndarray:
        return log_softmax(self.logits, axis=1)

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs())

    def with_logits(self, logits) -> TabularPolicy:
        return TabularPolicy(logits, self.space)

    def __eq__(self, other):
        if not isinstance(other, TabularPolicy):
            return NotImplemented
        return self.space == other.space and np.array_equal(self.logits, other.logits)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class RewardTable:
    """Ground-truth (or learned) utilities r(x, y)."""

    values: np.ndarray
    space: PromptSpace

    def __init__(self, values, space: PromptSpace | None = None):
        arr, space = _frozen_matrix(values, space, "reward values")
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "space", space)

    def __eq__(self, other):
        if not isinstance(other, RewardTable):
            return NotImplemented
        return self.space == other.space and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True)
class PreferencePair:
    prompt: int
    chosen: int
    rejected: int
    flipped: bool = False

    def __post_init__(self):
        if self.chosen == self.rejected:
            raise ConfigError(f"chosen and rejected must differ, both are {self.chosen}")

    def swapped(self) -> PreferencePair:
        return PreferencePair(self.prompt, self.rejected, self.chosen, not self.flipped)


class PreferenceDataset:
    """An ordered collection of preference pairs, stored column-wise.

    Pairs are kept as four aligned integer/boolean arrays so losses and
    gradients can be evaluated without Python-level loops. Iterating yields
    :class:`PreferencePair` objects in dataset order.
    """

    def __init__(self, prompts, chosen, rejected, space: PromptSpace, flipped=None):
        self.space = space
        self.prompts = np.array(prompts, dtype=np.int64).reshape(-1)
        self.chosen = np.array(chosen, dtype=np.int64).reshape(-1)
        self.rejected = np.array(rejected, dtype=np.int64).reshape(-1)
        n = self.prompts.size
        if flipped is None:
            flipped = np.zeros(n, dtype=bool)
        self.flipped = np.array(flipped, dtype=bool).reshape(-1)
        if not (self.chosen.size == self.rejected.size == self.flipped.size == n):
            raise ShapeError("prompt/chosen/rejected/flipped columns differ in length")
        if n:
            if self.prompts.min() < 0 or self.prompts.max() >= space.num_prompts:
                raise IndexError("prompt index out of range")
            k = space.completions_per_prompt
            for col in (self.chosen, self.rejected):
                if col.min() < 0 or col.max() >= k:
                    raise IndexError("completion index out of range")
            if np.any(self.chosen == self.rejected):
                raise ConfigError("every pair needs chosen != rejected")
        for arr in (self.prompts, self.chosen, self.rejected, self.flipped):
            arr.setflags(write=False)

    @classmethod
    def from_pairs(cls, pairs: Iterable[PreferencePair], space: PromptSpace) -> PreferenceDataset:
        pairs = list(pairs)
        return cls(
            [p.prompt for p in pairs],
            [p.chosen for p in pairs],
            [p.rejected for p in pairs],
            space,
            flipped=[p.flipped for p in pairs],
        )

    def __len__(self) -> int:
        return int(self.prompts.size)

    def __iter__(self) -> Iterator[PreferencePair]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> PreferencePair:
        return PreferencePair(
            int(self.prompts[i]), int(self.chosen[i]), int(self.rejected[i]), bool(self.flipped[i])
        )

    @property
    def pairs(self) -> list[PreferencePair]:
        return list(self)

    def subset(self, index) -> PreferenceDataset:
        return PreferenceDataset(
            self.prompts[index], self.chosen[index], self.rejected[index], self.space,
            flipped=self.flipped[index],
        )

    def __eq__(self, other):
        if not isinstance(other, PreferenceDataset):
            return NotImplemented
        return (
            self.space == other.space
            and np.array_equal(self.prompts, other.prompts)
            and np.array_equal(self.chosen, other.chosen)
            and np.array_equal(self.rejected, other.rejected)
            and np.array_equal(self.flipped, other.flipped)
        )

    __hash__ = None

    def __repr__(self):
        return f"PreferenceDataset(n={len(self)}, space={self.space}, flipped={int(self.flipped.sum())})"


def require_nonempty(dataset: PreferenceDataset) -> None:
    if len(dataset) == 0:
        raise ConfigError("dataset is empty")


def check_same_space(a, b) -> None:
    if a.space != b.space:
        raise ShapeError(f"space mismatch: {a.space} vs {b.space}")


def log_prob(policy: TabularPolicy, prompt: int, completion: int) -> float:
    policy.space.check_index(prompt, completion)
    row = policy.logits[prompt]
    return float(row[completion] - logsumexp(row))


def log_ratio_table(policy: TabularPolicy, reference: TabularPolicy) -> np.ndarray:
    check_same_space(policy, reference)
    return policy.log_probs() - reference.log_probs()


def log_ratio(policy: TabularPolicy, reference: TabularPolicy, prompt: int, completion: int) -> float:
    """log pi(y|x) - log pi_ref(y|x)."""
    check_same_space(policy, reference)
    return log_prob(policy, prompt, completion) - log_prob(reference, prompt, completion)


def check_beta(beta: float, name: str = "beta") -> float:
    beta = float(beta)
    if not beta > 0 or not np.isfinite(beta):
        raise ConfigError(f"{name} must be a positive finite real, got {beta}")
    return beta


def implicit_reward(policy, reference, prompt: int, completion: int, beta: float) -> float:
    """The reward the policy encodes relative to the reference: beta * log-ratio."""
    beta = check_beta(beta)
    return beta * log_ratio(policy, reference, prompt, completion)


def kl_per_prompt(policy: TabularPolicy, reference: TabularPolicy) -> np.ndarray:
    check_same_space(policy, reference)
    logp = policy.log_probs()
    return np.sum(np.exp(logp) * (logp - reference.log_probs()), axis=1)


def kl_policy(policy: TabularPolicy, reference: TabularPolicy) -> float:
    """KL(policy || reference) summed per prompt, averaged uniformly over prompts."""
    per_prompt = kl_per_prompt(policy, reference)
    # exact zeros can come out slightly negative after cancellation
    return float(max(np.mean(per_prompt), 0.0))
