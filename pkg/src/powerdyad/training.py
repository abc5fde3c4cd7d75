"""Mini-batch training with dev-set early stopping and random hyperparameter search.

Training runs for 30 to 70 epochs by default, halting once development-set
accuracy has not improved for ``patience`` epochs past the 30-epoch floor.
Everything is deterministic under the configured seeds: parameter init comes
from the model seed, the dropout stream and per-epoch shuffles from the train
seed (re-derived per epoch so order varies across epochs but not across runs).
"""

from __future__ import annotations

import json
import logging
import random
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict, replace
from multiprocessing import get_context
from typing import Mapping, Sequence

import torch

from . import evaluation
from .corpus import DyadInstance
from .errors import ConfigurationError, DataContractError, NonFiniteLossError
from .features import EmbeddingTable, FeatureStandardizer
from .models import (
    Checkpoint,
    InstanceTensorizer,
    ModelConfig,
    bce_loss,
    build_model,
    config_hash,
    model_inputs,
    parameter_count,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 70
    min_epochs: int = 30
    patience: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if self.min_epochs > self.max_epochs:
            raise ConfigurationError("min_epochs must not exceed max_epochs")
        if self.patience < 1:
            raise ConfigurationError("patience must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.optimizer != "adam":
            raise ConfigurationError(f"unsupported optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrainConfig":
        return cls(**dict(data))


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    dev_accuracy: float


@dataclass
class TrainRecord:
    """Everything a run produced besides the checkpoint itself."""

    epochs: list[EpochStats]
    best_epoch: int
    best_dev_accuracy: float
    wall_time: float
    seed: int
    config: dict
    param_count: int
    embedding_fingerprint: str
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "epochs": [asdict(e) for e in self.epochs],
            "best_epoch": self.best_epoch,
            "best_dev_accuracy": self.best_dev_accuracy,
            "wall_time": self.wall_time,
            "seed": self.seed,
            "config": self.config,
            "param_count": self.param_count,
            "embedding_fingerprint": self.embedding_fingerprint,
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrainRecord":
        return cls(
            epochs=[EpochStats(**e) for e in data["epochs"]],
            best_epoch=data["best_epoch"],
            best_dev_accuracy=data["best_dev_accuracy"],
            wall_time=data["wall_time"],
            seed=data["seed"],
            config=dict(data["config"]),
            param_count=data["param_count"],
            embedding_fingerprint=data["embedding_fingerprint"],
            metadata=dict(data.get("metadata", {})),
        )


@dataclass
class TrainOutcome:
    checkpoint: Checkpoint
    record: TrainRecord

    def restore_model(self):
        return self.checkpoint.restore_model()


def _epoch_order(n: int, seed: int, epoch: int) -> list[int]:
    # Per-epoch shuffle generator seeded by (global seed, epoch index).
    order = list(range(n))
    random.Random(seed * 1_000_003 + epoch).shuffle(order)
    return order


def train(
    model_config: ModelConfig,
    train_config: TrainConfig,
    train_instances: Sequence[DyadInstance],
    dev_instances: Sequence[DyadInstance],
    table: EmbeddingTable,
    standardizer: FeatureStandardizer | None = None,
) -> TrainOutcome:
    """Train one model; returns the best-dev checkpoint and the run record.

    Aborts with the offending batch ids if the loss ever goes non-finite.
    """
    if not train_instances or not dev_instances:
        raise DataContractError("train and dev sets must both be non-empty")
    overlap = {i.id for i in train_instances} & {i.id for i in dev_instances}
    if overlap:
        raise DataContractError(f"train/dev splits overlap: {sorted(overlap)[:5]}")

    # Single-threaded math keeps the fixed-seed byte-reproducibility contract.
    torch.set_num_threads(1)

    start = time.monotonic()
    if standardizer is None:
        standardizer = FeatureStandardizer.fit(train_instances)
    model = build_model(model_config)
    tensorizer = InstanceTensorizer(table, model_config, standardizer)
    torch.manual_seed(train_config.seed)  # dropout stream
    optimizer = torch.optim.Adam(model.parameters(), lr=train_config.learning_rate)

    epochs: list[EpochStats] = []
    best_accuracy = -1.0
    best_epoch = 0
    best_state: Checkpoint | None = None

    n = len(train_instances)
    for epoch in range(1, train_config.max_epochs + 1):
        model.train()
        order = _epoch_order(n, train_config.seed, epoch)
        losses = []
        for lo in range(0, n, train_config.batch_size):
            chunk = [train_instances[i] for i in order[lo : lo + train_config.batch_size]]
            batch = tensorizer.batch(chunk)
            probabilities = model(**model_inputs(batch))
            loss = bce_loss(probabilities, batch["labels"])
            if not torch.isfinite(loss):
                raise NonFiniteLossError(epoch, [inst.id for inst in chunk])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
        dev_accuracy = evaluation.split_accuracy(model, dev_instances, tensorizer)
        epochs.append(
            EpochStats(epoch=epoch, train_loss=sum(losses) / len(losses), dev_accuracy=dev_accuracy)
        )
        if dev_accuracy > best_accuracy:
            best_accuracy = dev_accuracy
            best_epoch = epoch
            best_state = Checkpoint.capture(
                model, train_config.seed, table.fingerprint(), standardizer
            )
        if epoch >= train_config.min_epochs and epoch - best_epoch >= train_config.patience:
            break

    assert best_state is not None
    record = TrainRecord(
        epochs=epochs,
        best_epoch=best_epoch,
        best_dev_accuracy=best_accuracy,
        wall_time=time.monotonic() - start,
        seed=train_config.seed,
        config={"model": model_config.to_dict(), "train": train_config.to_dict()},
        param_count=parameter_count(model),
        embedding_fingerprint=table.fingerprint(),
        metadata={"email_cap_semantics": "post_masking_tokens"},
    )
    return TrainOutcome(checkpoint=best_state, record=record)


# ---------------------------------------------------------------------------
# Random hyperparameter search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SearchSpace:
    """Axes of the random search; every sampled point is a valid config pair."""

    dense_activation: tuple[str, ...] = ("relu",)
    dense_hidden: tuple[int, ...] = (32, 64, 128)
    batch_size: tuple[int, ...] = (16, 32, 64)
    dropout_rate: tuple[float, ...] = (0.0, 0.2, 0.4)
    conv_filters: tuple[int, ...] = (32, 64, 128)
    email_cap: tuple[int, ...] = (100, 200)
    learning_rate: tuple[float, ...] = (1e-3,)

    def sample(
        self, rng: random.Random, base_model: ModelConfig, base_train: TrainConfig
    ) -> tuple[ModelConfig, TrainConfig]:
        model = replace(
            base_model,
            dense_activation=rng.choice(self.dense_activation),
            dense_hidden=rng.choice(self.dense_hidden),
            dropout_rate=rng.choice(self.dropout_rate),
            conv_filters=rng.choice(self.conv_filters),
            email_cap=rng.choice(self.email_cap),
        )
        train_cfg = replace(
            base_train,
            batch_size=rng.choice(self.batch_size),
            learning_rate=rng.choice(self.learning_rate),
        )
        return model, train_cfg

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: Mapping) -> "SearchSpace":
        return cls(**{k: tuple(v) for k, v in dict(data).items()})


@dataclass
class TrialResult:
    trial_id: int
    model_config: dict
    train_config: dict
    config_hash: str
    status: str  # ok | failed
    dev_accuracy: float | None = None
    param_count: int | None = None
    error: str | None = None

    def log_line(self) -> str:
        return json.dumps(
            {
                "trial_id": self.trial_id,
                "config_hash": self.config_hash,
                "dev_accuracy": self.dev_accuracy,
                "status": self.status,
                "error": self.error,
            },
            sort_keys=True,
        )


def _trial_payload_run(payload: dict) -> TrialResult:
    model_config = ModelConfig.from_dict(payload["model_config"])
    train_config = TrainConfig.from_dict(payload["train_config"])
    trial = TrialResult(
        trial_id=payload["trial_id"],
        model_config=model_config.to_dict(),
        train_config=train_config.to_dict(),
        config_hash=config_hash(
            {"model": model_config.to_dict(), "train": train_config.to_dict()}
        ),
        status="ok",
    )
    try:
        outcome = train(
            model_config,
            train_config,
            payload["train_instances"],
            payload["dev_instances"],
            payload["table"],
        )
    except NonFiniteLossError as exc:
        trial.status = "failed"
        trial.error = str(exc)
        return trial
    trial.dev_accuracy = outcome.record.best_dev_accuracy
    trial.param_count = outcome.record.param_count
    return trial


def _ranking_key(trial: TrialResult):
    # Rank by dev accuracy; ties break on smaller parameter count, then hash.
    failed = trial.status != "ok"
    return (
        failed,
        -(trial.dev_accuracy if trial.dev_accuracy is not None else float("-inf")),
        trial.param_count if trial.param_count is not None else 0,
        trial.config_hash,
    )


def tune(
    space: SearchSpace,
    budget: int,
    base_model: ModelConfig,
    base_train: TrainConfig,
    train_instances: Sequence[DyadInstance],
    dev_instances: Sequence[DyadInstance],
    table: EmbeddingTable,
    seed: int = 0,
    jobs: int = 1,
) -> list[TrialResult]:
    """Random search: ``budget`` full training runs, ranked by dev accuracy.

    Trial configs are all drawn up front from one seeded generator, so the
    ranking is independent of completion order and of ``jobs``.
    """
    if budget < 1:
        raise ConfigurationError("budget must be >= 1")
    rng = random.Random(seed)
    payloads = []
    for trial_id in range(budget):
        model_config, train_config = space.sample(rng, base_model, base_train)
        # Per-trial seeds derived from the search seed keep trials distinct
        # but reproducible.
        model_config = replace(model_config, seed=seed * 7_919 + trial_id)
        train_config = replace(train_config, seed=seed * 104_729 + trial_id)
        payloads.append(
            {
                "trial_id": trial_id,
                "model_config": model_config.to_dict(),
                "train_config": train_config.to_dict(),
                "train_instances": list(train_instances),
                "dev_instances": list(dev_instances),
                "table": table,
            }
        )

    if jobs <= 1:
        results = [_trial_payload_run(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=jobs, mp_context=get_context("spawn")) as pool:
            results = list(pool.map(_trial_payload_run, payloads))

    for trial in results:
        if trial.status != "ok":
            logger.warning("trial %d failed: %s", trial.trial_id, trial.error)
    return sorted(results, key=_ranking_key)
