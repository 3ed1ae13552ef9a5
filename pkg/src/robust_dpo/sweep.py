"""Grid sweeps over losses, coefficients, noise levels and seeds.

Each grid point is an independent training run on a freshly generated
task. Runs may execute on a process pool; every run writes its own result
file and the merge walks the grid in spec order, so the CSV content does
not depend on the number of workers.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .core import PromptSpace
from .errors import ConfigError
from .losses import LOSS_KINDS, LossSpec
from .synth import NoiseSpec, TaskSpec, make_task
from .train import TrainConfig, train

SCHEMA = "robust_dpo.sweep/1"
COLUMNS = (
    "loss", "beta", "beta_prime", "epsilon", "tau", "flip_rate", "pointwise_rho", "seed",
    "preference_accuracy", "expected_reward", "kl", "final_loss",
)


@dataclass(frozen=True)
class RunPoint:
    loss: str
    beta: float
    beta_prime: float
    flip_rate: float
    pointwise_rho: float
    seed: int

    def compute_key(self):
        # beta' only matters to Dr. DPO; other losses share one run across the beta' axis
        return (self.loss, self.beta, self.beta_prime if self.loss == "drdpo" else None,
                self.flip_rate, self.pointwise_rho, self.seed)


@dataclass(frozen=True)
class SweepSpec:
    betas: tuple = (0.1,)
    beta_primes: tuple = (1.0,)
    flip_rates: tuple = (0.0,)
    pointwise_rhos: tuple = (0.0,)
    losses: tuple = ("dpo",)
    seeds: tuple = (0,)
    task: TaskSpec = field(default_factory=TaskSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    n_train: int = 2000
    n_test: int = 2000

    def __post_init__(self):
        for name in ("betas", "beta_primes", "flip_rates", "pointwise_rhos", "losses", "seeds"):
            values = getattr(self, name)
            if not values:
                raise ConfigError(f"sweep field {name!r} must be a non-empty list")
        for name in ("betas", "beta_primes"):
            if any(not float(v) > 0 for v in getattr(self, name)):
                raise ConfigError(f"sweep field {name!r} must contain positive reals")
        for name in ("flip_rates", "pointwise_rhos"):
            if any(not 0.0 <= float(v) <= 1.0 for v in getattr(self, name)):
                raise ConfigError(f"sweep field {name!r} must contain values in [0, 1]")
        bad = [k for k in self.losses if k not in LOSS_KINDS]
        if bad:
            raise ConfigError(f"sweep field 'losses' has unknown kind(s) {bad}; valid: {list(LOSS_KINDS)}")
        for kind in self.losses:
            try:
                replace(self.train.loss, kind=kind)
            except ConfigError as exc:
                raise ConfigError(f"sweep field 'train': {exc}") from exc
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("sweep fields 'n_train' and 'n_test' must be >= 1")

    def points(self) -> list[RunPoint]:
        grid = itertools.product(self.losses, self.betas, self.beta_primes, self.flip_rates,
                                 self.pointwise_rhos, self.seeds)
        return [RunPoint(l, float(b), float(bp), float(f), float(r), int(s)) for l, b, bp, f, r, s in grid]

    @property
    def size(self) -> int:
        return len(self.points())

    @classmethod
    def from_config(cls, doc: dict) -> SweepSpec:
        known = {"betas", "beta_primes", "flip_rates", "pointwise_rhos", "losses", "seeds",
                 "task", "train", "n_train", "n_test"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown sweep field(s): {', '.join(sorted(unknown))}")
        kwargs = {}
        for name, conv in (("betas", float), ("beta_primes", float), ("flip_rates", float),
                           ("pointwise_rhos", float), ("losses", str), ("seeds", int)):
            if name in doc:
                value = doc[name]
                if not isinstance(value, list):
                    raise ConfigError(f"sweep field {name!r} must be a list")
                try:
                    kwargs[name] = tuple(conv(v) for v in value)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"sweep field {name!r}: {exc}") from exc
        for name in ("n_train", "n_test"):
            if name in doc:
                kwargs[name] = int(doc[name])
        task = doc.get("task", {})
        try:
            space = PromptSpace(int(task.get("num_prompts", 8)), int(task.get("completions_per_prompt", 8)))
            kwargs["task"] = TaskSpec(space, float(task.get("reward_scale", 1.0)),
                                      float(task.get("ref_sharpness", 1.0)))
        except ConfigError as exc:
            raise ConfigError(f"sweep field 'task': {exc}") from exc
        tr = doc.get("train", {})
        try:
            loss = LossSpec(epsilon=float(tr.get("epsilon", 0.1)), tau=float(tr.get("tau", 0.1)))
            kwargs["train"] = TrainConfig(loss, float(tr.get("learning_rate", 0.05)), int(tr.get("steps", 2000)),
                                          int(tr.get("batch_size", 0)), 0, int(tr.get("record_every", 100)))
        except ConfigError as exc:
            raise ConfigError(f"sweep field 'train': {exc}") from exc
        return cls(**kwargs)

    def to_config(self) -> dict:
        return {
            "betas": list(self.betas), "beta_primes": list(self.beta_primes),
            "flip_rates": list(self.flip_rates), "pointwise_rhos": list(self.pointwise_rhos),
            "losses": list(self.losses), "seeds": list(self.seeds),
            "task": {"num_prompts": self.task.space.num_prompts,
                     "completions_per_prompt": self.task.space.completions_per_prompt,
                     "reward_scale": self.task.reward_scale, "ref_sharpness": self.task.ref_sharpness},
            "train": {"learning_rate": self.train.learning_rate, "steps": self.train.steps,
                      "batch_size": self.train.batch_size, "record_every": self.train.record_every,
                      "epsilon": self.train.loss.epsilon, "tau": self.train.loss.tau},
            "n_train": self.n_train, "n_test": self.n_test,
        }


def run_point(spec: SweepSpec, point: RunPoint) -> dict:
    """Train one grid point and return its CSV row."""
    task = make_task(replace(spec.task, seed=point.seed),
                     NoiseSpec(point.pointwise_rho, point.flip_rate, seed=point.seed),
                     spec.n_train, spec.n_test)
    loss = replace(spec.train.loss, kind=point.loss, beta=point.beta, beta_prime=point.beta_prime)
    config = replace(spec.train, loss=loss, seed=point.seed)
    _, report = train(task.reference, task.train, config, reward=task.reward, clean_test=task.test)
    return {
        "loss": point.loss, "beta": point.beta, "beta_prime": point.beta_prime,
        "epsilon": loss.epsilon, "tau": loss.tau, "flip_rate": point.flip_rate,
        "pointwise_rho": point.pointwise_rho, "seed": point.seed,
        "preference_accuracy": report.final_preference_accuracy,
        "expected_reward": report.final_expected_reward,
        "kl": report.final_kl,
        "final_loss": report.loss_curve[-1][1],
    }


def _run_to_file(spec: SweepSpec, point: RunPoint, path: str) -> str:
    row = run_point(spec, point)
    Path(path).write_text(json.dumps(row), encoding="utf-8")
    return path


def run_sweep(spec: SweepSpec, jobs: int = 1) -> list[dict]:
    """Rows for every grid point, in spec order."""
    points = spec.points()
    unique = list(dict.fromkeys(p.compute_key() for p in points))
    first_point = {}
    for p in points:
        first_point.setdefault(p.compute_key(), p)
    with tempfile.TemporaryDirectory(prefix="robust_dpo_sweep_") as tmp:
        paths = {key: str(Path(tmp) / f"run_{i:05d}.json") for i, key in enumerate(unique)}
        if jobs <= 1:
            for key in unique:
                _run_to_file(spec, first_point[key], paths[key])
        else:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                futures = [pool.submit(_run_to_file, spec, first_point[key], paths[key]) for key in unique]
                for fut in futures:
                    fut.result()
        results = {key: json.loads(Path(paths[key]).read_text(encoding="utf-8")) for key in unique}
    rows = []
    for p in points:
        row = dict(results[p.compute_key()])
        row["beta_prime"] = p.beta_prime
        rows.append(row)
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: {SCHEMA}\n")
    writer = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _cell(row[k]) for k in COLUMNS})
    return buf.getvalue()


def _cell(value):
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else value


def read_csv(text: str) -> list[dict]:
    lines = [line for line in text.splitlines() if not line.startswith("#")]
    out = []
    for row in csv.DictReader(lines):
        parsed = {}
        for k, v in row.items():
            if k == "loss":
                parsed[k] = v
            elif k == "seed":
                parsed[k] = int(v)
            else:
                parsed[k] = float(v) if v != "" else None
        out.append(parsed)
    return out
