"""Analytic gradients of the preference losses with respect to policy logits.

For a pair (x, w, l) on a softmax row, d log pi(w|x) - d log pi(l|x) with
respect to the logits of row x is e_w - e_l (the softmax terms cancel), so
each pair touches exactly two logits. Every loss here is a function of the
margins, and its gradient is scattered onto the logit table from dL/du.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .core import PreferenceDataset, TabularPolicy, check_beta, require_nonempty
from .dro import gibbs_weights
from .errors import ConfigError, FiniteDifferenceError
from .losses import (
    LossSpec,
    _check_epsilon,
    evaluate_loss,
    log_sigmoid,
    margin_deltas,
    sigmoid,
    tilted_loss,
)


def _scatter(coef: np.ndarray, dataset: PreferenceDataset) -> np.ndarray:
    """Sum coef_i * (e_{x_i, w_i} - e_{x_i, l_i}) over pairs, in dataset order."""
    p, k = dataset.space.shape
    flat_w = dataset.prompts * k + dataset.chosen
    flat_l = dataset.prompts * k + dataset.rejected
    g = np.bincount(flat_w, weights=coef, minlength=p * k)
    g -= np.bincount(flat_l, weights=coef, minlength=p * k)
    return g.reshape(p, k)


def pair_coefficients(delta: np.ndarray, spec: LossSpec) -> np.ndarray:
    """dL/d(delta_i) for every pair, including the 1/N of the mean."""
    n = delta.size
    if spec.kind == "ipo":
        return 2.0 * (delta - 1.0 / (2.0 * spec.tau)) / n
    beta = spec.beta
    u = beta * delta
    if spec.kind == "dpo":
        return -beta * sigmoid(-u) / n
    if spec.kind == "drdpo":
        w = gibbs_weights(log_sigmoid(u), spec.beta_prime)
        return -beta * w * sigmoid(-u) / n
    eps = _check_epsilon(spec.epsilon)
    if spec.kind == "cdpo":
        return beta * (-(1.0 - eps) * sigmoid(-u) + eps * sigmoid(u)) / n
    # rdpo
    return beta * (-(1.0 - eps) * sigmoid(-u) - eps * sigmoid(u)) / ((1.0 - 2.0 * eps) * n)


def loss_and_grad(policy: TabularPolicy, reference: TabularPolicy, dataset: PreferenceDataset,
                  spec: LossSpec) -> tuple[float, np.ndarray]:
    """Loss value and its logit gradient from a single pass over the pairs."""
    require_nonempty(dataset)
    delta = margin_deltas(policy, reference, dataset)
    if spec.kind == "ipo":
        loss = float(np.mean((delta - 1.0 / (2.0 * spec.tau)) ** 2))
    else:
        u = spec.beta * delta
        if spec.kind == "dpo":
            loss = float(np.mean(-log_sigmoid(u)))
        elif spec.kind == "drdpo":
            loss = tilted_loss(log_sigmoid(u), spec.beta_prime)
        else:
            loss = evaluate_loss(policy, reference, dataset, spec)
    return loss, _scatter(pair_coefficients(delta, spec), dataset)


def grad_dpo(policy, reference, dataset, beta) -> np.ndarray:
    require_nonempty(dataset)
    spec = LossSpec("dpo", beta=check_beta(beta))
    return _scatter(pair_coefficients(margin_deltas(policy, reference, dataset), spec), dataset)


def grad_dr_dpo(policy, reference, dataset, beta, beta_prime) -> np.ndarray:
    require_nonempty(dataset)
    spec = LossSpec("drdpo", beta=check_beta(beta), beta_prime=check_beta(beta_prime, "beta_prime"))
    return _scatter(pair_coefficients(margin_deltas(policy, reference, dataset), spec), dataset)


def grad_baselines(policy, reference, dataset, spec: LossSpec) -> np.ndarray:
    if spec.kind not in ("cdpo", "ipo", "rdpo"):
        raise ConfigError(f"grad_baselines handles cdpo/ipo/rdpo, not {spec.kind!r}")
    require_nonempty(dataset)
    return _scatter(pair_coefficients(margin_deltas(policy, reference, dataset), spec), dataset)


def grad_loss(policy, reference, dataset, spec: LossSpec) -> np.ndarray:
    return loss_and_grad(policy, reference, dataset, spec)[1]


def dpo_pair_contributions(policy, reference, dataset, beta) -> np.ndarray:
    """Per-pair DPO gradients g_i (shape N x P x K), unscaled by 1/N.

    Dense; intended for checking the weighted decomposition on small problems.
    """
    require_nonempty(dataset)
    beta = check_beta(beta)
    u = beta * margin_deltas(policy, reference, dataset)
    out = np.zeros((len(dataset),) + dataset.space.shape)
    idx = np.arange(len(dataset))
    coef = -beta * sigmoid(-u)
    out[idx, dataset.prompts, dataset.chosen] += coef
    out[idx, dataset.prompts, dataset.rejected] -= coef
    return out


def finite_diff(loss_evaluator: Callable[[TabularPolicy], float], policy: TabularPolicy,
                step: float = 1e-5) -> np.ndarray:
    """Central differences (f(theta + h e) - f(theta - h e)) / 2h for every logit."""
    if not 1e-7 <= step <= 1e-3:
        raise ConfigError(f"step must lie in [1e-7, 1e-3], got {step}")
    base = np.array(policy.logits)
    grad = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        values = []
        for sign in (1.0, -1.0):
            probe = base.copy()
            probe[idx] += sign * step
            f = loss_evaluator(policy.with_logits(probe))
            if not np.isfinite(f):
                raise FiniteDifferenceError(f"loss is {f!r} at probe {idx} ({'+' if sign > 0 else '-'}h)", idx)
            values.append(f)
        grad[idx] = (values[0] - values[1]) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n||_inf / max(1, ||a||_inf)."""
    analytic = np.asarray(analytic)
    return float(np.max(np.abs(analytic - numeric)) / max(1.0, float(np.max(np.abs(analytic)))))
