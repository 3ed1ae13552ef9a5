"""Self-check suite: every closed form against its independent oracle.

Each check returns a :class:`Check` with the measured error and the
tolerance it was held to. ``robust-dpo verify`` prints one line per check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import PreferenceDataset, PromptSpace, TabularPolicy
from .divergence import JSD, KL, PhiFamily, conjugate_sup_oracle, phi_conjugate, phi_value
from .dro import (
    BoundInputs,
    beta_star,
    generalization_bound,
    gibbs_weights,
    optimal_alpha,
    optimal_likelihood_ratio,
    penalized_objective,
    simplex_search_oracle,
    tilted_value,
    worst_case_distribution,
)
from .grad import finite_diff, grad_dpo, grad_dr_dpo, grad_loss, relative_error
from .losses import LOSS_KINDS, LossSpec, dpo_loss, dr_dpo_loss, evaluate_loss

TOY_H = np.array([-0.1, -1.0])
TOY_BETA_PRIME = 0.1


@dataclass(frozen=True)
class Check:
    name: str
    measured: float
    tolerance: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<40s} measured={self.measured:.3e}  tol={self.tolerance:.1e}"


def _check(name, measured, tolerance, passed=None) -> Check:
    measured = float(measured)
    if passed is None:
        passed = bool(measured <= tolerance)
    return Check(name, measured, float(tolerance), bool(passed))


def random_instance(rng: np.random.Generator, max_prompts=4, max_k=5, max_n=20, scale=1.0):
    """Random (policy, reference, dataset) on a small space."""
    p = int(rng.integers(1, max_prompts + 1))
    k = int(rng.integers(2, max_k + 1))
    n = int(rng.integers(1, max_n + 1))
    space = PromptSpace(p, k)
    policy = TabularPolicy(rng.normal(0, scale, (p, k)), space)
    reference = TabularPolicy(rng.normal(0, scale, (p, k)), space)
    x = rng.integers(0, p, n)
    a = rng.integers(0, k, n)
    b = (a + rng.integers(1, k, n)) % k
    return policy, reference, PreferenceDataset(x, a, b, space)


def random_spec(kind: str, rng: np.random.Generator) -> LossSpec:
    return LossSpec(kind, beta=float(rng.uniform(0.05, 2.0)), beta_prime=float(rng.uniform(0.05, 5.0)),
                    epsilon=float(rng.uniform(0.0, 0.45)), tau=float(rng.uniform(0.1, 2.0)))


def check_toy_weights() -> list[Check]:
    w = gibbs_weights(TOY_H, TOY_BETA_PRIME)
    return [
        _check("toy: |w1 - 2.0|", abs(w[0] - 2.0), 2e-3),
        _check("toy: w2", w[1], 1e-3),
        _check("toy: |sum w h - (-0.2)|", abs(w @ TOY_H + 0.2), 1e-3),
    ]


def check_gibbs_vs_oracle(instances=50, seed=0) -> list[Check]:
    rng = np.random.default_rng(seed)
    worst_gap = 0.0
    worst_identity = 0.0
    for _ in range(instances):
        n = int(rng.integers(2, 6))
        h = -rng.exponential(1.0, n)
        bp = float(rng.uniform(0.2, 3.0))
        base = rng.dirichlet(np.ones(n) * 2.0)
        q_star = worst_case_distribution(h, bp, base)
        q_orc = simplex_search_oracle(h, bp, base, rng=rng)
        f_star = penalized_objective(q_star, h, bp, base)
        worst_gap = max(worst_gap, penalized_objective(q_orc, h, bp, base) - f_star)
        worst_identity = max(worst_identity, abs(f_star - tilted_value(h, bp, base)))
    return [
        _check("gibbs: oracle objective - closed form", worst_gap, 1e-6),
        _check("gibbs: optimum = beta' log E exp(h/beta')", worst_identity, 1e-10),
    ]


def check_dpo_limit(instances=20, seed=1) -> list[Check]:
    rng = np.random.default_rng(seed)
    loss_gap = grad_gap = 0.0
    for _ in range(instances):
        policy, reference, data = random_instance(rng)
        beta = float(rng.uniform(0.05, 2.0))
        loss_gap = max(loss_gap, abs(dr_dpo_loss(policy, reference, data, beta, 1e8)
                                     - dpo_loss(policy, reference, data, beta)))
        grad_gap = max(grad_gap, float(np.max(np.abs(grad_dr_dpo(policy, reference, data, beta, 1e8)
                                                    - grad_dpo(policy, reference, data, beta)))))
    return [
        _check("limit: |drdpo - dpo| at beta'=1e8", loss_gap, 1e-5),
        _check("limit: |grad drdpo - grad dpo| at beta'=1e8", grad_gap, 1e-6),
    ]


def check_gradients(instances=100, seed=2, tol=1e-5, perturb=0.0) -> list[Check]:
    """Analytic vs central-difference gradients, cycling through all five losses."""
    rng = np.random.default_rng(seed)
    worst = {k: 0.0 for k in LOSS_KINDS}
    for i in range(instances):
        kind = LOSS_KINDS[i % len(LOSS_KINDS)]
        policy, reference, data = random_instance(rng)
        spec = random_spec(kind, rng)
        analytic = grad_loss(policy, reference, data, spec) + perturb
        numeric = finite_diff(lambda pol: evaluate_loss(pol, reference, data, spec), policy, 1e-5)
        worst[kind] = max(worst[kind], relative_error(analytic, numeric))
    return [_check(f"grad: {k} analytic vs finite diff", v, tol) for k, v in worst.items()]


def check_jensen_and_monotonicity(instances=50, seed=3) -> list[Check]:
    rng = np.random.default_rng(seed)
    grid = (0.01, 0.1, 1.0, 10.0, 100.0)
    jensen = mono = 0.0
    for _ in range(instances):
        policy, reference, data = random_instance(rng, scale=3.0)
        beta = float(rng.uniform(0.05, 2.0))
        d = dpo_loss(policy, reference, data, beta)
        vals = [dr_dpo_loss(policy, reference, data, beta, bp) for bp in grid]
        jensen = max(jensen, max(v - d for v in vals))
        mono = max(mono, max(a - b for a, b in zip(vals, vals[1:])))
    return [
        _check("jensen: drdpo - dpo (max)", max(jensen, 0.0), 1e-10),
        _check("monotone in beta': max decrease", max(mono, 0.0), 1e-10),
    ]


def check_beta_star(tol=1e-12) -> list[Check]:
    worst = 0.0
    monotone = True
    for v in (0.0, 0.01, 0.5, 1.0, 2.0, 7.5, 100.0):
        prev = math.inf
        for eta in (1e-3, 0.01, 0.1, 0.5, 1.0, 4.0, 10.0, 1e3):
            b = beta_star(eta, v)
            worst = max(worst, abs(b * b * 2.0 * eta - v) / max(1.0, v))
            if v > 0 and not b < prev:
                monotone = False
            prev = b
    return [
        _check("beta*(eta)^2 * 2 eta = V", worst, tol),
        _check("beta*(eta) decreasing in eta", 0.0 if monotone else 1.0, 0.0, monotone),
    ]


def bound_by_formula(delta, n, beta_prime, a, b) -> float:
    """The deviation term written out literally, as an independent re-evaluation."""
    e = math.exp((b - a) / beta_prime)
    return (2 * b * e) / (n - 1 + e) * math.sqrt(n / 2 * math.log(1 / delta))


def check_bound(instances=100, seed=4) -> list[Check]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        a = float(rng.uniform(-5, 0))
        b = float(rng.uniform(a, 2))
        inp = BoundInputs(float(rng.uniform(0.01, 0.99)), int(rng.integers(1, 10**6)),
                          float(rng.uniform(0.2, 5.0)), a, b)
        ref = bound_by_formula(inp.delta, inp.n, inp.beta_prime, inp.a, inp.b)
        worst = max(worst, abs(generalization_bound(inp) - ref) / max(1.0, abs(ref)))
    small = generalization_bound(BoundInputs(0.05, 10**2, 1.0, 0.0, 1.0))
    large = generalization_bound(BoundInputs(0.05, 10**6, 1.0, 0.0, 1.0))
    bps = (0.1, 0.3, 1.0, 3.0, 10.0)
    vals = [generalization_bound(BoundInputs(0.05, 1000, bp, -1.0, 1.0)) for bp in bps]
    increasing = all(x > y for x, y in zip(vals, vals[1:]))
    return [
        _check("bound: formula re-evaluation", worst, 1e-12),
        _check("bound: B(1e6) / B(1e2)", large / small, 1e-2),
        _check("bound: grows as beta' shrinks", 0.0 if increasing else 1.0, 0.0, increasing),
    ]


def check_conjugates(seed=5) -> list[Check]:
    grid = np.linspace(1e-9, 200.0, 2_000_001)
    worst = 0.0
    for s in np.linspace(-5.0, 5.0, 21):
        worst = max(worst, abs(phi_conjugate(KL, s) - conjugate_sup_oracle(KL, s, grid)))
    rng = np.random.default_rng(seed)
    fy = -math.inf
    for fam in (KL, JSD, PhiFamily("alpha", 0.3), PhiFamily("alpha", 0.5), PhiFamily("alpha", 0.7)):
        t = rng.uniform(0.0, 20.0, 10_000)
        hi = min(fam.conjugate_upper, 5.0)
        s = rng.uniform(-5.0, hi, 10_000)
        s = s[s < fam.conjugate_upper]
        t = t[: s.size]
        fy = max(fy, float(np.max(s * t - phi_value(fam, t) - phi_conjugate(fam, s))))
    return [
        _check("conjugate: KL closed form vs grid sup", worst, 1e-4),
        _check("fenchel-young: s t - phi - phi* (max)", max(fy, 0.0), 1e-10),
    ]


def check_reward_side(seed=6) -> list[Check]:
    rng = np.random.default_rng(seed)
    worst_norm = worst_alpha = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 10))
        r = rng.normal(0, 2, n)
        p = rng.dirichlet(np.ones(n))
        beta = float(rng.uniform(0.05, 3.0))
        lstar = optimal_likelihood_ratio(r, p, beta)
        worst_norm = max(worst_norm, abs(p @ lstar - 1.0))
        alpha = optimal_alpha(r, p, beta)
        # at the optimal alpha, L* = exp((r + alpha) / beta)
        worst_alpha = max(worst_alpha, float(np.max(np.abs(np.exp((r + alpha) / beta) - lstar) / lstar)))
    return [
        _check("reward: E_ref[L*] = 1", worst_norm, 1e-12),
        _check("reward: L* = exp((r + alpha*) / beta)", worst_alpha, 1e-10),
    ]


def run_checks(grad_tol: float = 1e-5, perturb_gradient: float = 0.0) -> list[Check]:
    """Run the full suite. ``perturb_gradient`` offsets analytic gradients (negative control)."""
    checks = []
    checks += check_toy_weights()
    checks += check_gibbs_vs_oracle()
    checks += check_dpo_limit()
    checks += check_gradients(tol=grad_tol, perturb=perturb_gradient)
    checks += check_jensen_and_monotonicity()
    checks += check_beta_star()
    checks += check_bound()
    checks += check_conjugates()
    checks += check_reward_side()
    return checks
