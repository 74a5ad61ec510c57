"""The iterative train / auto-annotate / merge / retrain loop.

Each iteration trains a fresh model on the manual data, labels the auto
corpus under the confidence gate, then continues training that same model on
the manual+auto union.  Iterations regenerate the auto labels from scratch
with the newer model rather than accumulating stale ones.  All randomness
flows from one master seed split per (iteration, step), so an interrupted run
resumed from persisted records finishes identically.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import dataset, evaluation
from .autoannotate import GateConfig, GateStats, annotate_corpus
from .tagger import DEFAULT_HASH_DIM, TaggerModel, TrainConfig, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LoopConfig:
    iterations: int = 2
    step1: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=20, learning_rate=1e-4, batch_size=8))
    step3: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=5, learning_rate=1e-4, batch_size=8))
    gate: GateConfig = field(default_factory=GateConfig)
    amb_policy: str = "ignore_positions"
    seed: int = 0
    hash_dim: int = DEFAULT_HASH_DIM
    carry_forward: bool = False  # start step 1 from the previous iteration's model
    parallelism: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")

    def config_hash(self) -> str:
        payload = json.dumps(
            {
                "iterations": self.iterations,
                "step1": vars(self.step1),
                "step3": vars(self.step3),
                "gamma": self.gate.gamma,
                "amb_policy": self.amb_policy,
                "seed": self.seed,
                "hash_dim": self.hash_dim,
                "carry_forward": self.carry_forward,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


@dataclass
class IterationRecord:
    iteration: int
    gate_stats: GateStats
    metrics: dict | None
    model_path: str | None
    duration_seconds: float
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "gate_stats": self.gate_stats.to_dict(),
            "metrics": self.metrics,
            "model_path": self.model_path,
            "duration_seconds": self.duration_seconds,
            "warnings": self.warnings,
        }


def _step_seed(master: int, iteration: int, step: int) -> int:
    seq = np.random.SeedSequence(entropy=(master, iteration, step))
    return int(seq.generate_state(1, dtype=np.uint64)[0] % (2**31))


def _test_metrics(model: TaggerModel, test_set, gate: GateConfig, parallelism: int):
    predicted, _ = annotate_corpus(model, test_set, gate, parallelism=parallelism)
    return evaluation.score(test_set, predicted)


def run_iteration(manual_train, auto_corpus, config: LoopConfig, iteration: int = 1,
                  init: TaggerModel | None = None, test_set=None):
    """One pass of steps 1-3.  Returns (model, IterationRecord, auto annotations)."""
    manual_train = list(manual_train)
    if not manual_train:
        raise ValueError("manual training set is empty")
    auto_corpus = list(auto_corpus)
    started = time.monotonic()
    warnings: list[str] = []

    manual_examples = dataset.merge_for_retraining(manual_train, [], config.amb_policy)
    step1_cfg = replace(config.step1, seed=_step_seed(config.seed, iteration, 1))
    step1_model = train(manual_examples, step1_cfg, init=init, hash_dim=config.hash_dim)

    auto_annotated, gate_stats = annotate_corpus(
        step1_model, auto_corpus, config.gate, parallelism=config.parallelism
    )

    if gate_stats.total_words and gate_stats.amb_words == gate_stats.total_words:
        message = (
            f"iteration {iteration}: gate rejected all {gate_stats.total_words} words; "
            "step 3 trains on manual data only"
        )
        warnings.append(message)
        log.warning(message)

    merged = dataset.merge_for_retraining(manual_train, auto_annotated, config.amb_policy)
    step3_cfg = replace(config.step3, seed=_step_seed(config.seed, iteration, 3))
    model = train(merged, step3_cfg, init=step1_model)

    metrics = None
    if test_set is not None:
        metrics = {
            "step1": _test_metrics(step1_model, test_set, config.gate, config.parallelism).to_dict(),
            "step3": _test_metrics(model, test_set, config.gate, config.parallelism).to_dict(),
        }

    record = IterationRecord(
        iteration=iteration,
        gate_stats=gate_stats,
        metrics=metrics,
        model_path=None,
        duration_seconds=time.monotonic() - started,
        warnings=warnings,
    )
    return model, record, auto_annotated


def _record_path(run_dir: str, iteration: int) -> str:
    return os.path.join(run_dir, f"iteration_{iteration:02d}.json")


def _model_path(run_dir: str, iteration: int) -> str:
    return os.path.join(run_dir, f"model_iter{iteration:02d}.npz")


def _load_record(path: str) -> IterationRecord:
    with open(path, encoding="utf-8") as handle:
        data = json.load(handle)
    stats = GateStats(
        total_words=data["gate_stats"]["total_words"],
        amb_words=data["gate_stats"]["amb_words"],
        accepted=data["gate_stats"]["accepted"],
    )
    return IterationRecord(
        iteration=data["iteration"],
        gate_stats=stats,
        metrics=data["metrics"],
        model_path=data["model_path"],
        duration_seconds=data["duration_seconds"],
        warnings=data.get("warnings", []),
    )


def run_loop(manual_train, auto_corpus, config: LoopConfig, test_set=None,
             run_dir=None, resume: bool = False):
    """Run `config.iterations` iterations; returns (records, final model).

    With `run_dir`, each iteration's model and record are persisted and
    `resume=True` skips iterations whose artifacts already exist.  The final
    model is the last iteration's step-3 output.
    """
    manual_train = list(manual_train)
    auto_corpus = list(auto_corpus)
    if run_dir is not None:
        run_dir = os.fspath(run_dir)
        os.makedirs(run_dir, exist_ok=True)

    records: list[IterationRecord] = []
    model: TaggerModel | None = None
    for iteration in range(1, config.iterations + 1):
        if run_dir is not None and resume:
            rec_path = _record_path(run_dir, iteration)
            model_path = _model_path(run_dir, iteration)
            if os.path.exists(rec_path) and os.path.exists(model_path):
                records.append(_load_record(rec_path))
                model = TaggerModel.load(model_path)
                log.info("iteration %d loaded from %s", iteration, run_dir)
                continue
        init = model if config.carry_forward else None
        try:
            model, record, _ = run_iteration(
                manual_train, auto_corpus, config, iteration=iteration,
                init=init, test_set=test_set,
            )
        except ValueError as exc:
            raise ValueError(f"iteration {iteration}: {exc}") from exc
        if run_dir is not None:
            model_path = _model_path(run_dir, iteration)
            model.save(model_path)
            record.model_path = model_path
            from .util import atomic_write

            with atomic_write(_record_path(run_dir, iteration)) as handle:
                json.dump(record.to_dict(), handle, indent=2, sort_keys=True)
        records.append(record)
    return records, model
