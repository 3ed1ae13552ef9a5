import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_dpo.core import PreferenceDataset, PreferencePair, PromptSpace, TabularPolicy
from robust_dpo.errors import ConfigError
from robust_dpo.losses import (
    LOSS_KINDS,
    LossSpec,
    cdpo_loss,
    dpo_loss,
    dr_dpo_loss,
    evaluate_loss,
    h_dpo,
    h_values,
    ipo_loss,
    log_sigmoid,
    rdpo_loss,
    softplus,
    tilted_loss,
)
from robust_dpo.verify import random_instance

import oracles

TOY_H = [-0.1, -1.0]


def policy_with_h(h, beta=0.1):
    """One prompt per h value, two completions, uniform reference; pair i is (i, 0, 1)."""
    u = [math.log(math.expm1(-v)) * -1 for v in h]  # log sigma(u) = h  <=>  u = -log(e^{-h} - 1)
    n = len(h)
    space = PromptSpace(n, 2)
    logits = np.zeros((n, 2))
    logits[:, 0] = np.array(u) / beta
    data = PreferenceDataset(range(n), [0] * n, [1] * n, space)
    return TabularPolicy(logits, space), TabularPolicy.uniform(space), data


def test_policy_with_h_helper():
    pol, ref, data = policy_with_h(TOY_H)
    assert np.allclose(h_values(pol, ref, data, 0.1), TOY_H, atol=1e-14)


def test_softplus_stable_and_scalar():
    assert softplus(0.0) == pytest.approx(math.log(2), abs=1e-16)
    assert isinstance(softplus(1.0), float)
    x = np.array([-800.0, -31.0, -29.0, 0.0, 29.0, 31.0, 800.0])
    out = softplus(x)
    assert np.all(np.isfinite(out))
    for xi, oi in zip(x[1:-1], out[1:-1]):
        assert oi == pytest.approx(math.log1p(math.exp(xi)), rel=1e-15)
    assert out[-1] == 800.0
    assert log_sigmoid(800.0) == pytest.approx(0.0, abs=1e-300)


def test_h_dpo_examples():
    space = PromptSpace(1, 2)
    ref = TabularPolicy.uniform(space)
    pair = PreferencePair(0, 0, 1)
    assert h_dpo(ref, ref, pair, 0.1) == pytest.approx(-math.log(2), abs=1e-16)
    # u = beta * delta = ln 3 with beta = 1
    pol = TabularPolicy([[math.log(3), 0.0]])
    assert h_dpo(pol, ref, pair, 1.0) == pytest.approx(math.log(0.75), abs=1e-15)
    assert math.log(0.75) == pytest.approx(-0.287682, abs=1e-6)
    big = TabularPolicy([[500.0, 0.0]])
    assert -1e-20 < h_dpo(big, ref, pair, 1.0) <= 0.0


def test_dpo_loss_at_reference_is_ln2():
    rng = np.random.default_rng(0)
    _, ref, data = random_instance(rng)
    assert dpo_loss(ref, ref, data, 0.3) == math.log(2)


def test_dpo_loss_toy_mean():
    pol, ref, data = policy_with_h(TOY_H)
    assert dpo_loss(pol, ref, data, 0.1) == pytest.approx(0.55, abs=1e-14)


def test_dr_dpo_toy_value():
    expected = -0.1 * math.log((math.exp(-1) + math.exp(-10)) / 2)
    assert expected == pytest.approx(0.169302, abs=1e-6)
    assert tilted_loss(np.array(TOY_H), 0.1) == pytest.approx(expected, abs=1e-15)
    pol, ref, data = policy_with_h(TOY_H)
    assert dr_dpo_loss(pol, ref, data, 0.1, 0.1) == pytest.approx(expected, abs=1e-13)


@pytest.mark.parametrize("bp", [1e-3, 0.1, 1.0, 10.0, 1e6])
def test_dr_dpo_constant_h(bp):
    assert tilted_loss(np.full(7, -0.4), bp) == pytest.approx(0.4, abs=1e-14)


def test_dr_dpo_never_overflows():
    h = np.array([-1e5, -1e-3, -50.0])
    assert math.isfinite(tilted_loss(h, 1e-6))


def test_dr_dpo_large_beta_prime_recovers_dpo():
    rng = np.random.default_rng(1)
    for _ in range(10):
        pol, ref, data = random_instance(rng)
        assert abs(dr_dpo_loss(pol, ref, data, 0.5, 1e8) - dpo_loss(pol, ref, data, 0.5)) <= 1e-5


@pytest.mark.parametrize("kind", LOSS_KINDS)
def test_losses_match_naive_loops(kind):
    rng = np.random.default_rng(2)
    for _ in range(10):
        pol, ref, data = random_instance(rng, scale=2.0)
        pairs = oracles.pairs_of(data)
        a, b = pol.logits, ref.logits
        if kind == "dpo":
            got, want = dpo_loss(pol, ref, data, 0.7), oracles.dpo(a, b, pairs, 0.7)
        elif kind == "drdpo":
            got, want = dr_dpo_loss(pol, ref, data, 0.7, 0.3), oracles.drdpo(a, b, pairs, 0.7, 0.3)
        elif kind == "cdpo":
            got, want = cdpo_loss(pol, ref, data, 0.7, 0.2), oracles.cdpo(a, b, pairs, 0.7, 0.2)
        elif kind == "rdpo":
            got, want = rdpo_loss(pol, ref, data, 0.7, 0.2), oracles.rdpo(a, b, pairs, 0.7, 0.2)
        else:
            got, want = ipo_loss(pol, ref, data, 0.4), oracles.ipo(a, b, pairs, 0.4)
        assert got == pytest.approx(want, rel=1e-12, abs=1e-13)


def test_cdpo_and_rdpo_reduce_to_dpo():
    rng = np.random.default_rng(3)
    pol, ref, data = random_instance(rng)
    d = dpo_loss(pol, ref, data, 0.2)
    assert cdpo_loss(pol, ref, data, 0.2, 0.0) == d
    assert rdpo_loss(pol, ref, data, 0.2, 0.0) == d


@pytest.mark.parametrize("eps", [0.0, 0.1, 0.3, 0.49])
def test_noise_aware_losses_at_reference(eps):
    rng = np.random.default_rng(4)
    _, ref, data = random_instance(rng)
    assert cdpo_loss(ref, ref, data, 0.1, eps) == pytest.approx(math.log(2), abs=1e-15)
    assert rdpo_loss(ref, ref, data, 0.1, eps) == pytest.approx(math.log(2), abs=1e-13)


def test_cdpo_flip_symmetry_near_half():
    space = PromptSpace(1, 3)
    ref = TabularPolicy.uniform(space)
    pol = TabularPolicy([[1.3, -0.4, 0.2]], space)
    pair = PreferenceDataset([0], [0], [1], space)
    flip = PreferenceDataset([0], [1], [0], space)
    gaps = []
    for d in (1e-1, 1e-2, 1e-3):
        gaps.append(abs(cdpo_loss(pol, ref, pair, 1.0, 0.5 - d) - cdpo_loss(pol, ref, flip, 1.0, 0.5 - d)))
    # the asymmetry is linear in the distance to 1/2
    assert gaps[1] == pytest.approx(gaps[0] / 10, rel=1e-9)
    assert gaps[2] == pytest.approx(gaps[0] / 100, rel=1e-9)


def test_ipo_examples():
    space = PromptSpace(2, 2)
    ref = TabularPolicy.uniform(space)
    data = PreferenceDataset([0, 1], [0, 1], [1, 0], space)
    assert ipo_loss(ref, ref, data, 0.5) == 1.0
    tau = 0.25
    target = 1 / (2 * tau)
    pol = TabularPolicy([[target, 0.0], [0.0, target]], space)
    assert ipo_loss(pol, ref, data, tau) == pytest.approx(0.0, abs=1e-28)


def test_loss_errors():
    space = PromptSpace(1, 2)
    ref = TabularPolicy.uniform(space)
    empty = PreferenceDataset([], [], [], space)
    data = PreferenceDataset([0], [0], [1], space)
    with pytest.raises(ConfigError):
        dpo_loss(ref, ref, empty, 0.1)
    with pytest.raises(ConfigError):
        dr_dpo_loss(ref, ref, empty, 0.1, 1.0)
    with pytest.raises(ConfigError):
        cdpo_loss(ref, ref, data, 0.1, 0.5)
    with pytest.raises(ConfigError):
        rdpo_loss(ref, ref, data, 0.1, 0.7)
    with pytest.raises(ConfigError):
        ipo_loss(ref, ref, data, 0.0)
    with pytest.raises(ConfigError):
        dpo_loss(ref, ref, data, -1.0)


def test_loss_spec_parsing():
    spec = LossSpec.parse("loss=drdpo, beta=0.2, beta_prime=3")
    assert spec == LossSpec("drdpo", beta=0.2, beta_prime=3.0)
    assert LossSpec.from_config(spec.to_config()) == spec
    with pytest.raises(ConfigError, match="valid kinds: dpo, drdpo, cdpo, ipo, rdpo"):
        LossSpec.parse("loss=ppo")
    with pytest.raises(ConfigError, match="unknown loss key"):
        LossSpec.parse("loss=dpo,gamma=1")
    with pytest.raises(ConfigError):
        LossSpec.parse("loss=dpo,beta=abc")


def test_evaluate_loss_dispatch():
    rng = np.random.default_rng(5)
    pol, ref, data = random_instance(rng)
    assert evaluate_loss(pol, ref, data, LossSpec("ipo", tau=0.3)) == ipo_loss(pol, ref, data, 0.3)
    assert evaluate_loss(pol, ref, data, LossSpec("drdpo", 0.2, 2.0)) == dr_dpo_loss(pol, ref, data, 0.2, 2.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-30.0, 0.0), min_size=1, max_size=20),
       st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_tilted_loss_ordering(h, bp1, bp2):
    h = np.array(h)
    lo, hi = sorted((bp1, bp2))
    # Jensen: tilted loss sits below the mean loss and grows with beta'
    assert tilted_loss(h, lo) <= tilted_loss(h, hi) + 1e-10
    assert tilted_loss(h, hi) <= float(np.mean(-h)) + 1e-10
    assert tilted_loss(h, lo) >= float(np.min(-h)) - 1e-10
