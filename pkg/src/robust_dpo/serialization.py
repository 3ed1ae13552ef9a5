"""JSON / JSON-lines formats for policies, reward tables, datasets and reports.

Matrices are written row-major with 17 significant digits so every float
round-trips exactly; output is byte-stable for identical inputs.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import PreferenceDataset, PromptSpace, RewardTable, TabularPolicy
from .errors import ShapeError


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _matrix_document(space: PromptSpace, key: str, values: np.ndarray) -> str:
    rows = ",\n    ".join("[" + ", ".join(_fmt(v) for v in row) + "]" for row in values)
    return (
        "{\n"
        f'  "num_prompts": {space.num_prompts},\n'
        f'  "completions_per_prompt": {space.completions_per_prompt},\n'
        f'  "{key}": [\n    {rows}\n  ]\n'
        "}\n"
    )


def _read_matrix(doc: dict, key: str):
    space = PromptSpace(int(doc["num_prompts"]), int(doc["completions_per_prompt"]))
    values = np.array(doc[key], dtype=np.float64)
    if values.shape != space.shape:
        raise ShapeError(f"{key} has shape {values.shape}, header says {space.shape}")
    return space, values


def policy_to_json(policy: TabularPolicy) -> str:
    return _matrix_document(policy.space, "logits", policy.logits)


def policy_from_json(text: str) -> TabularPolicy:
    space, values = _read_matrix(json.loads(text), "logits")
    return TabularPolicy(values, space)


def reward_to_json(reward: RewardTable) -> str:
    return _matrix_document(reward.space, "values", reward.values)


def reward_from_json(text: str) -> RewardTable:
    space, values = _read_matrix(json.loads(text), "values")
    return RewardTable(values, space)


def dataset_to_jsonl(dataset: PreferenceDataset) -> str:
    lines = [
        json.dumps({"prompt": p.prompt, "chosen": p.chosen, "rejected": p.rejected, "flipped": p.flipped})
        for p in dataset
    ]
    return "".join(line + "\n" for line in lines)


def dataset_from_jsonl(text: str, space: PromptSpace) -> PreferenceDataset:
    rows = [json.loads(line) for line in text.splitlines() if line.strip()]
    return PreferenceDataset(
        [r["prompt"] for r in rows],
        [r["chosen"] for r in rows],
        [r["rejected"] for r in rows],
        space,
        flipped=[bool(r.get("flipped", False)) for r in rows],
    )


def report_to_json(report) -> str:
    d = report.to_dict()
    d["loss_curve"] = [[int(s), float(v)] for s, v in d["loss_curve"]]
    d["weight_stats"] = [
        {"step": int(s), "min": float(lo), "max": float(hi), "mean": float(m)}
        for s, lo, hi, m in d["weight_stats"]
    ]
    return json.dumps(d, indent=2) + "\n"


def write_text(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def read_text(path) -> str:
    return Path(path).read_text(encoding="utf-8")
