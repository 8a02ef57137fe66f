"""Top-K metrics, checkpoint evaluation, sweeps, and attention-variance analytics."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data.prepared import PreparedCorpus, resplit
from .data.sessions import Session, merge_sessions
from .model import VARIANTS, AttentionRecord, GraphContext, ModelConfig, apply_variant, as_tensors, forward, plan_batch
from .training import TrainConfig, context_for, session_instances, train

DEFAULT_KS = (10, 20, 50)


def _check_k(k: int) -> None:
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")


def rank_items(scores: np.ndarray) -> np.ndarray:
    """Item indices by descending score; ties keep the lower index first."""
    return np.argsort(-np.asarray(scores), axis=-1, kind="stable")


def target_positions(ranked: np.ndarray, targets: Sequence[int]) -> np.ndarray:
    """1-based position of each target in its ranked list (0 when absent)."""
    ranked = np.asarray(ranked)
    hits = ranked == np.asarray(targets)[:, None]
    pos = hits.argmax(axis=1) + 1
    return np.where(hits.any(axis=1), pos, 0)


def hr_at_k(ranked, targets, k: int) -> float:
    """Percentage of instances whose target is in the top ``k``."""
    _check_k(k)
    pos = target_positions(ranked, targets)
    if pos.size == 0:
        return 0.0
    return 100.0 * float(np.mean((pos >= 1) & (pos <= k)))


def ndcg_at_k(ranked, targets, k: int) -> float:
    """Mean of 1/log2(1 + pos) over instances, zero past the cutoff, as a percentage."""
    _check_k(k)
    pos = target_positions(ranked, targets)
    if pos.size == 0:
        return 0.0
    gain = np.where((pos >= 1) & (pos <= k), 1.0 / np.log2(1.0 + np.maximum(pos, 1)), 0.0)
    return 100.0 * float(np.mean(gain))


@dataclass
class EvalReport:
    ks: tuple[int, ...]
    hr: dict[int, float]
    ndcg: dict[int, float]
    instances: int
    skipped: int = 0
    config: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        lines = ["K,hr,ndcg,instances"]
        lines += [f"{k},{self.hr[k]:.6f},{self.ndcg[k]:.6f},{self.instances}" for k in self.ks]
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        lines = [f"{'K':>4}  {'HR@K (%)':>10}  {'NDCG@K (%)':>10}"]
        lines += [f"{k:>4}  {self.hr[k]:>10.4f}  {self.ndcg[k]:>10.4f}" for k in self.ks]
        lines.append(f"instances: {self.instances}  skipped: {self.skipped}")
        for key, value in sorted(self.config.items()):
            lines.append(f"{key}: {value}")
        return "\n".join(lines) + "\n"

    def metrics(self) -> tuple:
        return tuple((k, self.hr[k], self.ndcg[k]) for k in self.ks) + (self.instances, self.skipped)


def report_from_positions(positions: np.ndarray, ks: Sequence[int], skipped: int = 0, config=None) -> EvalReport:
    hr, ndcg = {}, {}
    n = len(positions)
    for k in ks:
        _check_k(k)
        hit = (positions >= 1) & (positions <= k)
        hr[k] = 100.0 * float(hit.mean()) if n else 0.0
        gain = np.where(hit, 1.0 / np.log2(1.0 + np.maximum(positions, 1)), 0.0)
        ndcg[k] = 100.0 * float(gain.mean()) if n else 0.0
    return EvalReport(tuple(ks), hr, ndcg, n, skipped, dict(config or {}))


def eval_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    dep, social = np.random.SeedSequence([seed, 1]).spawn(2)
    return np.random.default_rng(dep), np.random.default_rng(social)


def score_sessions(
    params: Mapping[str, np.ndarray],
    sessions: Sequence[Session],
    context: GraphContext,
    config: ModelConfig,
    seed: int = 0,
    batch_size: int = 500,
    collect_attention: bool = False,
):
    """Dropout-free target positions for every next-item event in ``sessions``.

    Returns ``(positions, skipped, records)``; instances touching items
    outside the catalog are skipped.
    """
    instances = session_instances(sessions)
    known = [q for q in instances if q.target < context.num_items and all(i < context.num_items for i in q.prefix)]
    skipped = len(instances) - len(known)
    p = as_tensors(params)
    dep_rng, social_rng = eval_streams(seed)
    positions = []
    records: list[AttentionRecord] = []
    for lo in range(0, len(known), batch_size):
        batch = known[lo : lo + batch_size]
        plan = plan_batch(batch, context, config, dep_rng, social_rng)
        out = forward(p, batch, context, config, plan)
        ranked = rank_items(out.log_probs.data)
        positions.append(target_positions(ranked, [q.target for q in batch]))
        if collect_attention:
            records.extend(out.attention)
    pos = np.concatenate(positions) if positions else np.zeros(0, dtype=np.int64)
    return pos, skipped, records


def evaluate(
    params: Mapping[str, np.ndarray],
    sessions: Sequence[Session],
    context: GraphContext,
    config: ModelConfig,
    seed: int = 0,
    ks: Sequence[int] = DEFAULT_KS,
    batch_size: int = 500,
) -> EvalReport:
    positions, skipped, _ = score_sessions(params, sessions, context, config, seed, batch_size)
    echo = {"variant": config.variant, "beta": config.beta, "gamma": config.gamma, "layers": config.layers}
    return report_from_positions(positions, ks, skipped, echo)


def model_config_from(checkpoint_config: Mapping) -> ModelConfig:
    return ModelConfig(**checkpoint_config["model"])


def evaluate_checkpoint(checkpoint, corpus: PreparedCorpus, split_name: str = "test", variant: str | None = None,
                        ks: Sequence[int] = DEFAULT_KS) -> EvalReport:
    config = model_config_from(checkpoint.config)
    if variant is not None and variant != config.variant:
        raise ValueError(f"checkpoint was trained as {config.variant!r}, not {variant!r}")
    return evaluate(checkpoint.params, corpus.sessions(split_name), context_for(corpus), config, checkpoint.seed, ks)


# sweeps

SWEEP_AXES = ("beta", "gamma", "lifespan")


@dataclass
class SweepRow:
    axis: str
    value: int
    report: EvalReport


def merged_corpus(corpus: PreparedCorpus, lifespan: int) -> PreparedCorpus:
    base = corpus.config.lifespan
    if lifespan < base or lifespan % base:
        raise ValueError(f"lifespan {lifespan} is not a multiple of the corpus lifespan {base}")
    split = corpus.split
    merged = merge_sessions(split.train + split.valid + split.test, lifespan // base)
    return resplit(corpus, merged, lifespan)


def run_variant(corpus: PreparedCorpus, model_config: ModelConfig, train_config: TrainConfig,
                ks: Sequence[int] = DEFAULT_KS) -> EvalReport:
    result = train(corpus, model_config, train_config)
    return evaluate(result.params, corpus.split.test, context_for(corpus), model_config, train_config.seed, ks)


def sweep(axis: str, values: Iterable[int], corpus: PreparedCorpus, model_config: ModelConfig,
          train_config: TrainConfig, ks: Sequence[int] = DEFAULT_KS) -> list[SweepRow]:
    """Retrain and evaluate on the test split once per axis value."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}")
    rows = []
    for v in values:
        v = int(v)
        data, cfg = corpus, model_config
        if axis == "lifespan":
            data = merged_corpus(corpus, v)
        else:
            cfg = replace(model_config, **{axis: v})
        rows.append(SweepRow(axis, v, run_variant(data, cfg, train_config, ks)))
    return rows


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    lines = ["axis,value,K,hr,ndcg,instances"]
    for r in rows:
        for k in r.report.ks:
            lines.append(f"{r.axis},{r.value},{k},{r.report.hr[k]:.6f},{r.report.ndcg[k]:.6f},{r.report.instances}")
    return "\n".join(lines) + "\n"


# attention analytics


@dataclass(frozen=True)
class AttentionRow:
    developer: int
    time_step: int
    position: int
    friend: int
    layer: int
    alpha: float


def attention_rows(records: Iterable[AttentionRecord]) -> list[AttentionRow]:
    """Flatten records; the self weight appears with ``friend == developer``."""
    rows = []
    for r in records:
        nodes = (r.developer,) + r.friends
        for layer, w in enumerate(r.weights, start=1):
            rows += [AttentionRow(r.developer, r.time_step, r.position, n, layer, float(a)) for n, a in zip(nodes, w)]
    return rows


def attention_csv(rows: Sequence[AttentionRow], developer_names: Sequence[str] | None = None) -> str:
    name = (lambda i: developer_names[i]) if developer_names is not None else str
    lines = ["developer,session_T,position,friend,layer,alpha"]
    lines += [f"{name(r.developer)},{r.time_step},{r.position},{name(r.friend)},{r.layer},{r.alpha!r}" for r in rows]
    return "\n".join(lines) + "\n"


def parse_attention_csv(text: str, developer_names: Sequence[str] | None = None) -> list[AttentionRow]:
    index = {n: i for i, n in enumerate(developer_names)} if developer_names is not None else None
    conv = (lambda s: index[s]) if index is not None else int
    rows = []
    for line in text.splitlines()[1:]:
        if not line:
            continue
        d, t, pos, f, layer, alpha = line.split(",")
        rows.append(AttentionRow(conv(d), int(t), int(pos), conv(f), int(layer), float(alpha)))
    return rows


@dataclass
class AttentionStats:
    intra: dict[tuple[int, int], float]
    inter: dict[tuple[int, int], float]
    across: dict[int, float]

    @staticmethod
    def _mean(values) -> float:
        values = list(values)
        return float(np.mean(values)) if values else math.nan

    @property
    def mean_intra(self) -> float:
        return self._mean(self.intra.values())

    @property
    def mean_inter(self) -> float:
        return self._mean(self.inter.values())

    @property
    def mean_across(self) -> float:
        return self._mean(self.across.values())

    def distributions_csv(self, developer_names: Sequence[str] | None = None) -> str:
        name = (lambda i: developer_names[i]) if developer_names is not None else str
        lines = ["kind,developer,friend,variance"]
        lines += [f"intra,{name(u)},{name(f)},{v!r}" for (u, f), v in sorted(self.intra.items())]
        lines += [f"inter,{name(u)},{name(f)},{v!r}" for (u, f), v in sorted(self.inter.items())]
        lines += [f"across,{name(u)},,{v!r}" for u, v in sorted(self.across.items())]
        return "\n".join(lines) + "\n"


def attention_stats(rows: Iterable[AttentionRow | AttentionRecord], layer: int | None = None) -> AttentionStats:
    """Intra-session, inter-session and across-friend variance of friend attention.

    Uses one-hop friend weights (self excluded) at ``layer``, default the
    last. Variances are population variances; a single value has variance 0.
    """
    rows = list(rows)
    if rows and isinstance(rows[0], AttentionRecord):
        rows = attention_rows(rows)
    if layer is None:
        layer = max((r.layer for r in rows), default=1)
    # (developer, friend) -> session T -> alphas over positions
    series: dict[tuple[int, int], dict[int, list[float]]] = defaultdict(lambda: defaultdict(list))
    for r in rows:
        if r.layer == layer and r.friend != r.developer:
            series[(r.developer, r.friend)][r.time_step].append(r.alpha)

    intra, inter = {}, {}
    session_means: dict[tuple[int, int], list[float]] = defaultdict(list)
    for (u, f), by_session in series.items():
        intra[(u, f)] = float(np.mean([np.var(a) for a in by_session.values()]))
        means = [float(np.mean(a)) for _, a in sorted(by_session.items())]
        inter[(u, f)] = float(np.var(means))
        for (t, a) in sorted(by_session.items()):
            session_means[(u, t)].append(float(np.mean(a)))
    per_dev: dict[int, list[float]] = defaultdict(list)
    for (u, _), means in sorted(session_means.items()):
        per_dev[u].append(float(np.var(means)))
    across = {u: float(np.mean(v)) for u, v in per_dev.items()}
    return AttentionStats(intra, inter, across)


def collect_attention(params, corpus: PreparedCorpus, config: ModelConfig, split_name: str = "test", seed: int = 0):
    _, _, records = score_sessions(
        params, corpus.sessions(split_name), context_for(corpus), config, seed, collect_attention=True
    )
    return records


__all__ = [
    "DEFAULT_KS",
    "VARIANTS",
    "AttentionRow",
    "AttentionStats",
    "EvalReport",
    "SweepRow",
    "apply_variant",
    "attention_csv",
    "attention_rows",
    "attention_stats",
    "collect_attention",
    "evaluate",
    "evaluate_checkpoint",
    "hr_at_k",
    "merged_corpus",
    "model_config_from",
    "ndcg_at_k",
    "parse_attention_csv",
    "rank_items",
    "report_from_positions",
    "run_variant",
    "score_sessions",
    "sweep",
    "sweep_csv",
    "target_positions",
]
