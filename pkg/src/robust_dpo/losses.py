"""Pairwise preference losses on tabular policies.

All losses are functions of the per-pair margin

    u_i = beta * (log_ratio(chosen_i) - log_ratio(rejected_i))

where log_ratio is log pi_theta - log pi_ref. DPO averages -log sigmoid(u);
Dr. DPO replaces the average by a tilted (log-mean-exp) aggregate of
h = log sigmoid(u) at temperature beta_prime.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import (
    PreferenceDataset,
    PreferencePair,
    TabularPolicy,
    check_beta,
    check_same_space,
    log_ratio,
    log_ratio_table,
    require_nonempty,
)
from .errors import ConfigError

LOSS_KINDS = ("dpo", "drdpo", "cdpo", "ipo", "rdpo")

_SOFTPLUS_BRANCH = 30.0


def softplus(x):
    """log(1 + exp(x)), exact to double precision away from the branch point."""
    x = np.asarray(x, dtype=np.float64)
    big = x > _SOFTPLUS_BRANCH
    small = x < -_SOFTPLUS_BRANCH
    mid = ~(big | small)
    out = np.empty_like(x)
    out[big] = x[big] + np.exp(-x[big])
    out[small] = np.exp(x[small])
    out[mid] = np.log1p(np.exp(x[mid]))
    return out if out.ndim else float(out)


def log_sigmoid(x):
    return -softplus(-np.asarray(x, dtype=np.float64))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class LossSpec:
    """Which loss to optimise and its coefficients.

    ``beta`` scales the log-ratio margin (all kinds except IPO),
    ``beta_prime`` is the tilt temperature (Dr. DPO), ``epsilon`` the
    assumed flip rate (cDPO, rDPO) and ``tau`` the IPO regulariser.
    """

    kind: str = "dpo"
    beta: float = 0.1
    beta_prime: float = 1.0
    epsilon: float = 0.1
    tau: float = 0.1

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss {self.kind!r}; valid kinds: {', '.join(LOSS_KINDS)}")
        check_beta(self.beta, "beta")
        if self.kind == "drdpo":
            check_beta(self.beta_prime, "beta_prime")
        if self.kind in ("cdpo", "rdpo"):
            _check_epsilon(self.epsilon)
        if self.kind == "ipo":
            check_beta(self.tau, "tau")

    @classmethod
    def from_config(cls, mapping) -> LossSpec:
        """Build from ``loss=..., beta=..., beta_prime=..., epsilon=..., tau=...`` keys."""
        known = {"loss", "kind", "beta", "beta_prime", "epsilon", "tau"}
        unknown = set(mapping) - known
        if unknown:
            raise ConfigError(f"unknown loss key(s): {', '.join(sorted(unknown))}")
        kwargs = {}
        kind = mapping.get("loss", mapping.get("kind"))
        if kind is not None:
            kwargs["kind"] = str(kind).lower()
        for key in ("beta", "beta_prime", "epsilon", "tau"):
            if key in mapping and mapping[key] is not None:
                try:
                    kwargs[key] = float(mapping[key])
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"{key} must be a number, got {mapping[key]!r}") from exc
        return cls(**kwargs)

    @classmethod
    def parse(cls, text: str) -> LossSpec:
        """Parse ``"loss=drdpo,beta=0.1,beta_prime=1"``."""
        mapping = {}
        for item in filter(None, (s.strip() for s in text.split(","))):
            if "=" not in item:
                raise ConfigError(f"expected key=value, got {item!r}")
            key, value = item.split("=", 1)
            mapping[key.strip()] = value.strip()
        return cls.from_config(mapping)

    def to_config(self) -> dict:
        d = asdict(self)
        d["loss"] = d.pop("kind")
        return d


def _check_epsilon(epsilon: float) -> float:
    epsilon = float(epsilon)
    if not 0.0 <= epsilon < 0.5:
        raise ConfigError(f"epsilon must lie in [0, 0.5), got {epsilon}")
    return epsilon


def margin_deltas(policy: TabularPolicy, reference: TabularPolicy, dataset: PreferenceDataset) -> np.ndarray:
    """log_ratio(chosen) - log_ratio(rejected) for every pair, in dataset order."""
    check_same_space(policy, dataset)
    table = log_ratio_table(policy, reference)
    x = dataset.prompts
    return table[x, dataset.chosen] - table[x, dataset.rejected]


def h_values(policy, reference, dataset: PreferenceDataset, beta: float) -> np.ndarray:
    """Per-pair DPO log-likelihoods h_i = log sigmoid(beta * delta_i)."""
    beta = check_beta(beta)
    return log_sigmoid(beta * margin_deltas(policy, reference, dataset))


def h_dpo(policy, reference, pair: PreferencePair, beta: float) -> float:
    beta = check_beta(beta)
    delta = (log_ratio(policy, reference, pair.prompt, pair.chosen)
             - log_ratio(policy, reference, pair.prompt, pair.rejected))
    return float(log_sigmoid(beta * delta))


def tilted_loss(h: np.ndarray, beta_prime: float) -> float:
    """-beta' * log mean exp(h / beta'), computed with max subtraction."""
    beta_prime = check_beta(beta_prime, "beta_prime")
    h = np.asarray(h, dtype=np.float64)
    if h.size == 0:
        raise ConfigError("dataset is empty")
    z = h / beta_prime
    top = np.max(z)
    return float(-beta_prime * (top + np.log(np.mean(np.exp(z - top)))))


def dpo_loss(policy, reference, dataset, beta) -> float:
    require_nonempty(dataset)
    return float(np.mean(-h_values(policy, reference, dataset, beta)))


def dr_dpo_loss(policy, reference, dataset, beta, beta_prime) -> float:
    require_nonempty(dataset)
    return tilted_loss(h_values(policy, reference, dataset, beta), beta_prime)


def cdpo_loss(policy, reference, dataset, beta, epsilon) -> float:
    """Label-smoothed DPO: BCE against a target that trusts each label with 1 - epsilon."""
    epsilon = _check_epsilon(epsilon)
    require_nonempty(dataset)
    u = check_beta(beta) * margin_deltas(policy, reference, dataset)
    per_pair = -(1.0 - epsilon) * log_sigmoid(u) - epsilon * log_sigmoid(-u)
    return float(np.mean(per_pair))


def ipo_loss(policy, reference, dataset, tau) -> float:
    """Squared regression of the log-ratio margin onto 1 / (2 tau)."""
    tau = check_beta(tau, "tau")
    require_nonempty(dataset)
    delta = margin_deltas(policy, reference, dataset)
    return float(np.mean((delta - 1.0 / (2.0 * tau)) ** 2))


def rdpo_loss(policy, reference, dataset, beta, epsilon) -> float:
    """Unbiased DPO under a known symmetric flip rate epsilon."""
    epsilon = _check_epsilon(epsilon)
    require_nonempty(dataset)
    u = check_beta(beta) * margin_deltas(policy, reference, dataset)
    per_pair = ((1.0 - epsilon) * -log_sigmoid(u) - epsilon * -log_sigmoid(-u)) / (1.0 - 2.0 * epsilon)
    return float(np.mean(per_pair))


def evaluate_loss(policy, reference, dataset, spec: LossSpec) -> float:
    if spec.kind == "dpo":
        return dpo_loss(policy, reference, dataset, spec.beta)
    if spec.kind == "drdpo":
        return dr_dpo_loss(policy, reference, dataset, spec.beta, spec.beta_prime)
    if spec.kind == "cdpo":
        return cdpo_loss(policy, reference, dataset, spec.beta, spec.epsilon)
    if spec.kind == "ipo":
        return ipo_loss(policy, reference, dataset, spec.tau)
    return rdpo_loss(policy, reference, dataset, spec.beta, spec.epsilon)


LN2 = math.log(2.0)
