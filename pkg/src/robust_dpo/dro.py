"""Closed forms of the KL-regularised worst case and their brute-force checks.

Pair-level (Dr. DPO) side: maximising ``E_q[h] - beta' * KL(q || base)`` over
the simplex gives Gibbs weights ``q* ∝ base * exp(h / beta')`` with optimal
value ``beta' * log E_base[exp(h / beta')]``.

Completion-level (reward) side: the KL-constrained reward maximisation has
likelihood ratio ``L* = exp(r / beta) / E_ref[exp(r / beta)]`` and
normaliser ``alpha* = -beta * log E_ref[exp(r / beta)]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import RewardTable, TabularPolicy, check_beta, check_same_space, logsumexp
from .divergence import KL, PhiFamily, phi_derivative, phi_divergence
from .errors import ConfigError, DomainError, OracleConvergenceError


def _vector(values, name="h_values") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ConfigError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    return arr


def _base(base, n: int) -> np.ndarray:
    if base is None:
        return np.full(n, 1.0 / n)
    arr = np.asarray(base, dtype=np.float64).reshape(-1)
    if arr.size != n:
        raise DomainError(f"base has length {arr.size}, expected {n}")
    if np.any(~(arr > 0)) or abs(arr.sum() - 1.0) > 1e-10:
        raise DomainError("base must be a strictly positive probability vector")
    return arr


def gibbs_weights(h_values, beta_prime: float) -> np.ndarray:
    """Per-pair worst-case weights exp(h_i / beta') normalised to mean 1."""
    h = _vector(h_values)
    beta_prime = check_beta(beta_prime, "beta_prime")
    z = h / beta_prime
    e = np.exp(z - np.max(z))
    return e / np.mean(e)


def worst_case_distribution(h_values, beta_prime: float, base=None) -> np.ndarray:
    """Maximiser of :func:`penalized_objective`: q*_i ∝ base_i exp(h_i / beta')."""
    h = _vector(h_values)
    b = _base(base, h.size)
    beta_prime = check_beta(beta_prime, "beta_prime")
    logits = np.log(b) + h / beta_prime
    q = np.exp(logits - logsumexp(logits))
    return q / q.sum()


def tilted_value(h_values, beta_prime: float, base=None) -> float:
    """beta' * log E_base[exp(h / beta')], the optimum of the penalised problem."""
    h = _vector(h_values)
    b = _base(base, h.size)
    beta_prime = check_beta(beta_prime, "beta_prime")
    return float(beta_prime * logsumexp(np.log(b) + h / beta_prime))


def penalized_objective(q, h_values, beta_prime: float, base=None) -> float:
    """E_q[h] - beta' * KL(q || base)."""
    h = _vector(h_values)
    b = _base(base, h.size)
    beta_prime = check_beta(beta_prime, "beta_prime")
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if q.size != h.size:
        raise DomainError(f"q has length {q.size}, expected {h.size}")
    if np.any(q < 0) or abs(q.sum() - 1.0) > 1e-9:
        raise DomainError("q must lie on the probability simplex")
    return float(q @ h - beta_prime * phi_divergence(KL, q, b))


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {q >= 0, sum q = 1} (sort-based)."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.count_nonzero(u - css / ind > 0)
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def _objective_rows(Q, h, beta_prime, b):
    # vectorised objective for a batch of simplex points (rows of Q)
    safe = np.where(Q > 0, Q, 1.0)
    kl = np.sum(np.where(Q > 0, Q * np.log(safe / b), 0.0), axis=1)
    return Q @ h - beta_prime * kl


def _grid_points(center, half_width, step, n):
    """All simplex points on a lattice around ``center`` (first n-1 free coordinates)."""
    axes = []
    for c in center[:-1]:
        lo = max(0.0, c - half_width)
        hi = min(1.0, c + half_width)
        m = int(round((hi - lo) / step)) + 1
        axes.append(np.linspace(lo, hi, max(m, 1)))
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n - 1)
    last = 1.0 - mesh.sum(axis=1, keepdims=True)
    pts = np.hstack([mesh, last])
    return pts[last[:, 0] >= -1e-15].clip(min=0.0)


def simplex_search_oracle(h_values, beta_prime: float, base=None, iterations: int = 20_000,
                          tol: float = 1e-9, rng: np.random.Generator | None = None) -> np.ndarray:
    """Maximise the penalised objective numerically, without the Gibbs formula.

    Length <= 3: exhaustive lattice on the simplex at step 1e-3, then
    repeated zooming around the incumbent. Longer vectors: projected
    gradient ascent with Armijo backtracking from the best of a batch of
    random simplex starts drawn from ``rng``.
    """
    h = _vector(h_values)
    b = _base(base, h.size)
    beta_prime = check_beta(beta_prime, "beta_prime")
    n = h.size
    if iterations < 1:
        raise ConfigError("iterations must be >= 1")
    if n == 1:
        return np.ones(1)

    if n <= 3:
        step = 1e-3
        pts = _grid_points(np.full(n, 0.5), 0.5, step, n)
        best = pts[np.argmax(_objective_rows(pts, h, beta_prime, b))]
        while step > 1e-13:
            pts = _grid_points(best, 4 * step, step / 10, n)
            best = pts[np.argmax(_objective_rows(pts, h, beta_prime, b))]
            step /= 10
        return best / best.sum()

    rng = np.random.default_rng(0) if rng is None else rng
    starts = np.vstack([b, rng.dirichlet(np.ones(n), size=64)])
    q = starts[np.argmax(_objective_rows(starts, h, beta_prime, b))]
    f = _objective_rows(q[None], h, beta_prime, b)[0]
    lr = 1.0
    gap = math.inf
    for _ in range(int(iterations)):
        grad = h - beta_prime * (np.log(np.maximum(q, 1e-300) / b) + 1.0)
        while True:
            cand = project_simplex(q + lr * grad)
            fc = _objective_rows(cand[None], h, beta_prime, b)[0]
            if fc >= f + 1e-4 * grad @ (cand - q) or lr < 1e-16:
                break
            lr *= 0.5
        gap = float(np.max(np.abs(cand - q)))
        q, f = cand, fc
        lr = min(lr * 2.0, 1.0)
        if gap < tol:
            return q
    raise OracleConvergenceError(
        f"projected ascent did not settle within {iterations} iterations (last step {gap:.3g})", best=q
    )


# --- completion-level closed forms -------------------------------------------------------


def optimal_alpha(reward_values, ref_probs, beta: float) -> float:
    """alpha* = -beta * log E_ref[exp(r / beta)].

    ``ref_probs`` is whatever distribution the expectation runs over: a
    single prompt's pi_ref row, or the joint (prompt, completion)
    distribution from :func:`joint_reference`.
    """
    r = _vector(reward_values, "reward_values")
    p = _base(ref_probs, r.size)
    beta = check_beta(beta)
    return float(-beta * logsumexp(np.log(p) + r / beta))


def optimal_likelihood_ratio(reward_values, ref_probs, beta: float) -> np.ndarray:
    """L* = exp(r / beta) / Z with Z = E_ref[exp(r / beta)]; E_ref[L*] = 1."""
    r = _vector(reward_values, "reward_values")
    p = _base(ref_probs, r.size)
    beta = check_beta(beta)
    z = r / beta
    log_norm = logsumexp(np.log(p) + z)
    return np.exp(z - log_norm)


def joint_reference(reference: TabularPolicy) -> np.ndarray:
    """Flattened (prompt, completion) distribution: uniform prompts times pi_ref."""
    return (reference.probs() / reference.space.num_prompts).reshape(-1)


def optimal_reward_general_phi(family: PhiFamily, ratio, beta: float):
    """beta * phi'(ratio); the additive multiplier shift is dropped."""
    beta = check_beta(beta)
    return beta * phi_derivative(family, ratio)


def beta_star(eta: float, reward_variance: float) -> float:
    """sqrt(V / (2 eta)): the KL multiplier that is optimal at radius eta."""
    eta = float(eta)
    if not eta > 0:
        raise ConfigError(f"eta must be positive, got {eta}")
    if reward_variance < 0:
        raise DomainError(f"variance must be non-negative, got {reward_variance}")
    return math.sqrt(reward_variance / (2.0 * eta))


def reward_variance_under_ref(reward: RewardTable, ref: TabularPolicy, prompt: int) -> float:
    check_same_space(reward, ref)
    ref.space.check_index(prompt, 0)
    p = ref.probs()[prompt]
    r = reward.values[prompt]
    mean = p @ r
    return float(p @ (r - mean) ** 2)


@dataclass(frozen=True)
class BoundInputs:
    delta: float
    n: int
    beta_prime: float
    a: float
    b: float

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")
        if int(self.n) < 1:
            raise ConfigError(f"n must be a positive integer, got {self.n}")
        check_beta(self.beta_prime, "beta_prime")
        if not self.a <= self.b:
            raise ConfigError(f"need a <= b, got a={self.a}, b={self.b}")


def generalization_bound(inputs: BoundInputs) -> float:
    """Deviation term 2b e^c / (N - 1 + e^c) * sqrt(N/2 ln(1/delta)), c = (b - a)/beta'."""
    c = (inputs.b - inputs.a) / inputs.beta_prime
    n = int(inputs.n)
    # e^c / (N - 1 + e^c) rewritten so large c cannot overflow
    frac = 1.0 / ((n - 1) * math.exp(-c) + 1.0)
    return 2.0 * inputs.b * frac * math.sqrt(n / 2.0 * math.log(1.0 / inputs.delta))


def estimate_h_range(h_values, floor: float = -20.0) -> tuple[float, float]:
    """Observed [a, b] of the h values, with the lower end clamped at ``floor``.

    DPO log-likelihoods are never positive, so ``b <= 0`` here and the
    deviation term (which scales with ``b``) comes out non-positive.
    """
    h = _vector(h_values)
    b = float(np.max(h))
    return min(max(float(np.min(h)), floor), b), b
