import json
import math

import numpy as np
import pytest

from robust_dpo.core import PreferenceDataset, PromptSpace, RewardTable, TabularPolicy
from robust_dpo.errors import ConfigError, ShapeError, TrainingDivergedError
from robust_dpo.losses import LossSpec
from robust_dpo.serialization import report_to_json
from robust_dpo.synth import NoiseSpec, TaskSpec, make_task
from robust_dpo.train import (
    TrainConfig,
    eval_expected_reward,
    eval_kl,
    eval_preference_accuracy,
    train,
)

import oracles


@pytest.fixture(scope="module")
def task():
    return make_task(TaskSpec(PromptSpace(4, 5), seed=1), NoiseSpec(pairwise_p=0.2, seed=1), 300, 300)


def test_zero_learning_rate_keeps_reference(task):
    policy, report = train(task.reference, task.train, TrainConfig(learning_rate=0.0, steps=1))
    assert policy == task.reference
    assert report.loss_curve == [(0, math.log(2)), (1, math.log(2))]
    assert report.final_kl == 0.0


def test_dpo_loss_strictly_decreases_on_separable_task():
    space = PromptSpace(1, 2)
    data = PreferenceDataset([0] * 10, [0] * 10, [1] * 10, space)
    config = TrainConfig(LossSpec("dpo", beta=1.0), learning_rate=0.5, steps=200, record_every=1)
    _, report = train(TabularPolicy.uniform(space), data, config)
    losses = [v for _, v in report.loss_curve]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_training_is_bit_reproducible(task):
    for batch in (0, 32):
        config = TrainConfig(LossSpec("drdpo", beta=0.5, beta_prime=0.5), learning_rate=2.0,
                             steps=150, batch_size=batch, seed=4, record_every=10)
        a = train(task.reference, task.train, config, reward=task.reward, clean_test=task.test)
        b = train(task.reference, task.train, config, reward=task.reward, clean_test=task.test)
        assert a[0] == b[0]
        assert report_to_json(a[1]) == report_to_json(b[1])


def test_minibatch_seed_changes_trajectory(task):
    cfg = TrainConfig(learning_rate=5.0, steps=20, batch_size=16)
    a, _ = train(task.reference, task.train, cfg)
    b, _ = train(task.reference, task.train, TrainConfig(learning_rate=5.0, steps=20, batch_size=16, seed=1))
    assert a != b


def test_report_contents(task):
    config = TrainConfig(LossSpec("drdpo"), learning_rate=1.0, steps=250, record_every=100)
    policy, report = train(task.reference, task.train, config, reward=task.reward, clean_test=task.test)
    assert [s for s, _ in report.loss_curve] == [0, 100, 200, 250]
    assert [row[0] for row in report.weight_stats] == [0, 100, 200, 250]
    for _, lo, hi, mean in report.weight_stats:
        assert lo <= mean <= hi
        assert mean == pytest.approx(1.0, abs=1e-12)
    assert report.final_kl == pytest.approx(oracles.kl(policy.logits, task.reference.logits), abs=1e-12)
    doc = json.loads(report_to_json(report))
    assert set(doc) == {"loss_curve", "final_preference_accuracy", "final_expected_reward", "final_kl",
                        "weight_stats"}


def test_weight_stats_only_for_drdpo(task):
    _, report = train(task.reference, task.train, TrainConfig(steps=5))
    assert report.weight_stats == []
    assert report.final_preference_accuracy is None


def test_divergence_is_reported():
    space = PromptSpace(1, 2)
    data = PreferenceDataset([0], [0], [1], space)
    config = TrainConfig(LossSpec("ipo", tau=0.1), learning_rate=1e306, steps=5)
    with pytest.raises(TrainingDivergedError) as info:
        train(TabularPolicy.uniform(space), data, config)
    assert info.value.step >= 0


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=-1.0)
    with pytest.raises(ConfigError):
        TrainConfig(steps=0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=-2)


def test_accuracy_at_reference_is_half(task):
    assert eval_preference_accuracy(task.reference, task.reference, 0.1, task.test) == 0.5


def test_accuracy_of_reward_aligned_policy(task):
    beta = 0.1
    space = task.reward.space
    ref = TabularPolicy.uniform(space)
    policy = TabularPolicy(task.reward.values / beta, space)
    r = task.reward.values
    t = task.test
    expected = 0.0
    for x, w, l in zip(t.prompts, t.chosen, t.rejected):
        expected += 1.0 if r[x, w] > r[x, l] else (0.5 if r[x, w] == r[x, l] else 0.0)
    expected /= len(t)
    assert eval_preference_accuracy(policy, ref, beta, t) == pytest.approx(expected, abs=1e-15)


def test_accuracy_single_pair_values():
    space = PromptSpace(1, 2)
    ref = TabularPolicy.uniform(space)
    pair = PreferenceDataset([0], [0], [1], space)
    values = {eval_preference_accuracy(TabularPolicy([[a, 0.0]]), ref, 1.0, pair) for a in (-1.0, 0.0, 1.0)}
    assert values == {0.0, 0.5, 1.0}
    with pytest.raises(ConfigError):
        eval_preference_accuracy(ref, ref, 1.0, PreferenceDataset([], [], [], space))


def test_expected_reward():
    rng = np.random.default_rng(0)
    r = RewardTable(rng.normal(size=(3, 4)))
    assert eval_expected_reward(TabularPolicy.uniform(r.space), r) == pytest.approx(r.values.mean(), abs=1e-15)
    peaked = TabularPolicy(1e4 * (r.values == r.values.max(axis=1, keepdims=True)), r.space)
    assert eval_expected_reward(peaked, r) == pytest.approx(r.values.max(axis=1).mean(), abs=1e-12)
    pol = TabularPolicy(rng.normal(size=(3, 4)))
    assert eval_expected_reward(pol, r) == pytest.approx(oracles.expected_reward(pol.logits, r.values), abs=1e-14)
    with pytest.raises(ShapeError):
        eval_expected_reward(TabularPolicy(np.zeros((2, 4))), r)


def test_eval_kl_zero_at_reference(task):
    assert eval_kl(task.reference, task.reference) == 0.0
