import json

import numpy as np

from robust_dpo.core import PromptSpace, TabularPolicy
from robust_dpo.serialization import (
    dataset_from_jsonl,
    dataset_to_jsonl,
    policy_from_json,
    policy_to_json,
    reward_from_json,
    reward_to_json,
)
from robust_dpo.synth import NoiseSpec, TaskSpec, make_task


def test_policy_roundtrip_is_exact():
    pol = TabularPolicy(np.random.default_rng(0).normal(size=(3, 4)) * 1e-3)
    text = policy_to_json(pol)
    assert policy_from_json(text) == pol
    assert policy_to_json(policy_from_json(text)) == text
    assert json.loads(text)["num_prompts"] == 3


def test_reward_and_dataset_roundtrip():
    task = make_task(TaskSpec(PromptSpace(3, 3), seed=2), NoiseSpec(pairwise_p=0.5, seed=2), 50, 10)
    assert reward_from_json(reward_to_json(task.reward)) == task.reward
    text = dataset_to_jsonl(task.train)
    back = dataset_from_jsonl(text, task.train.space)
    assert back == task.train
    assert back.flipped.any()
    assert len(text.splitlines()) == 50
