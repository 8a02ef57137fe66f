from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .data.prepared import PreparedCorpus
from .data.sessions import History, Session
from .model import (
    GraphContext,
    ModelConfig,
    as_tensors,
    forward,
    init_params,
    plan_batch,
    validate_params,
)
from .numerics import AdamState, GradientTape, Tensor, adam_step
from .numerics import ops


class NumericError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 200
    lr: float = 1e-3
    seed: int = 0
    select_best: bool = True

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")


@dataclass(frozen=True)
class PredictionInstance:
    developer: int
    time_step: int
    prefix: tuple[int, ...]
    target: int

    @property
    def position(self) -> int:
        return len(self.prefix)


def session_instances(sessions: Sequence[Session]) -> list[PredictionInstance]:
    """One instance per next-item event: prefixes of length 1..N-1."""
    return [
        PredictionInstance(s.developer, s.time_step, s.items[:n], s.items[n])
        for s in sessions
        for n in range(1, len(s.items))
    ]


def build_instances(train_sessions: Sequence[Session], history: History) -> list[PredictionInstance]:
    """Training targets; each developer's first session only provides friend context."""
    eligible = [s for s in train_sessions if s.time_step != history.first_step(s.developer)]
    return session_instances(eligible)


def context_for(corpus: PreparedCorpus) -> GraphContext:
    return GraphContext(corpus.social, corpus.dependency, corpus.history, corpus.num_packages)


def nll_loss(
    p: Mapping[str, Tensor],
    batch: Sequence[PredictionInstance],
    context: GraphContext,
    config: ModelConfig,
    plan,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, np.ndarray]:
    """Mean negative log-likelihood of the targets, plus per-instance values."""
    if not batch:
        raise ValueError("empty batch")
    targets = np.array([b.target for b in batch], dtype=np.int64)
    bad = targets[(targets < 0) | (targets >= context.num_items)]
    if bad.size:
        raise ValueError(f"target item {int(bad[0])} not in item table")
    out = forward(p, batch, context, config, plan, train, rng)
    picked = out.log_probs[np.arange(len(batch)), targets]
    loss = ops.neg(ops.mean(picked))
    return loss, -picked.data


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_nll: float
    valid_hr10: float
    wall_seconds: float

    def line(self) -> str:
        return f"{self.epoch}\t{self.train_nll:.6f}\t{self.valid_hr10:.4f}\t{self.wall_seconds:.3f}"


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    final_params: dict[str, np.ndarray]
    initial_params: dict[str, np.ndarray]
    log: list[EpochLog] = field(default_factory=list)
    best_epoch: int = 0
    model_config: ModelConfig = field(default_factory=ModelConfig)
    train_config: TrainConfig = field(default_factory=TrainConfig)

    def log_text(self) -> str:
        return "".join(e.line() + "\n" for e in self.log)

    def checkpoint_config(self) -> dict:
        return {"model": asdict(self.model_config), "train": asdict(self.train_config), "best_epoch": self.best_epoch}


def _streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("init", "shuffle", "dependency", "social", "dropout")
    return {n: np.random.default_rng(s) for n, s in zip(names, np.random.SeedSequence(seed).spawn(len(names)))}


def train(
    corpus: PreparedCorpus,
    model_config: ModelConfig = ModelConfig(),
    train_config: TrainConfig = TrainConfig(),
    params: Mapping[str, np.ndarray] | None = None,
    on_epoch: Callable[[EpochLog], None] | None = None,
    clock: Callable[[], float] = time.perf_counter,
) -> TrainResult:
    """Adam on the mean NLL over shuffled train instances.

    Samples are redrawn per batch. After each epoch the validation HR@10 is
    measured; with ``select_best`` the returned ``params`` are those of the
    best epoch (ties go to the later epoch).
    """
    from .evaluation import evaluate

    rngs = _streams(train_config.seed)
    context = context_for(corpus)
    init = init_params(model_config, corpus.num_packages, corpus.num_developers, rngs["init"])
    if params is not None:
        validate_params(params, model_config, corpus.num_packages, corpus.num_developers)
        init = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    current = dict(init)
    state = AdamState(lr=train_config.lr)
    instances = build_instances(corpus.split.train, corpus.history)
    result = TrainResult(dict(init), dict(init), dict(init), model_config=model_config, train_config=train_config)
    best_hr = -np.inf
    start = clock()
    for epoch in range(1, train_config.epochs + 1):
        order = rngs["shuffle"].permutation(len(instances))
        total, count = 0.0, 0
        for b, lo in enumerate(range(0, len(instances), train_config.batch_size)):
            batch = [instances[i] for i in order[lo : lo + train_config.batch_size]]
            plan = plan_batch(batch, context, model_config, rngs["dependency"], rngs["social"])
            tensors = {k: Tensor(v, requires_grad=True, name=k) for k, v in current.items()}
            with GradientTape() as tape:
                loss, per_instance = nll_loss(tensors, batch, context, model_config, plan, True, rngs["dropout"])
            if not np.isfinite(loss.item()):
                bad = int(np.flatnonzero(~np.isfinite(per_instance))[0]) if (~np.isfinite(per_instance)).any() else 0
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}, instance {batch[bad]}")
            names = list(tensors)
            grads = dict(zip(names, tape.gradient(loss, [tensors[n] for n in names])))
            current, state = adam_step(current, grads, state)
            total += loss.item() * len(batch)
            count += len(batch)
        valid = evaluate(current, corpus.split.valid, context, model_config, seed=train_config.seed, ks=(10,))
        hr = valid.hr[10] if valid.instances else 0.0
        entry = EpochLog(epoch, total / count if count else 0.0, hr, clock() - start)
        result.log.append(entry)
        if on_epoch:
            on_epoch(entry)
        if not train_config.select_best or hr >= best_hr:
            best_hr = hr
            result.params = dict(current)
            result.best_epoch = epoch
    result.final_params = dict(current)
    return result


def mean_nll(
    params: Mapping[str, np.ndarray],
    instances: Sequence[PredictionInstance],
    context: GraphContext,
    config: ModelConfig,
    seed: int = 0,
    batch_size: int = 500,
) -> float:
    """Dropout-free mean NLL over ``instances``."""
    from .evaluation import eval_streams

    if not instances:
        return 0.0
    p = as_tensors(params)
    dep_rng, social_rng = eval_streams(seed)
    total = 0.0
    for lo in range(0, len(instances), batch_size):
        batch = instances[lo : lo + batch_size]
        plan = plan_batch(batch, context, config, dep_rng, social_rng)
        _, per = nll_loss(p, batch, context, config, plan)
        total += float(per.sum())
    return total / len(instances)


__all__ = [
    "EpochLog",
    "NumericError",
    "PredictionInstance",
    "TrainConfig",
    "TrainResult",
    "build_instances",
    "context_for",
    "mean_nll",
    "nll_loss",
    "session_instances",
    "train",
]
