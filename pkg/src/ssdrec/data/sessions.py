"""Sessionization, corpus filtering, and the train/validation/test split."""

from __future__ import annotations

import bisect
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .corpus import Graph, InteractionEvent, Session

log = logging.getLogger(__name__)

SECONDS_PER_WEEK = 604_800
MIN_SESSION_LEN = 2
MAX_SESSION_LEN = 30


def week_index(timestamp: int, lifespan_weeks: int = 1) -> int:
    return timestamp // (SECONDS_PER_WEEK * lifespan_weeks)


def segment_sessions(events: Iterable[InteractionEvent], lifespan_weeks: int = 1) -> list[Session]:
    """Bucket events into one session per (developer, epoch-aligned bucket).

    Items keep timestamp order; equal timestamps keep input order.
    """
    if lifespan_weeks < 1:
        raise ValueError("lifespan_weeks must be positive")
    ordered = sorted(events, key=lambda e: (e.developer, e.timestamp))
    buckets: dict[tuple[int, int], list[int]] = {}
    for e in ordered:
        buckets.setdefault((e.developer, week_index(e.timestamp, lifespan_weeks)), []).append(e.package)
    return [Session(dev, t, tuple(items)) for (dev, t), items in sorted(buckets.items())]


def merge_sessions(sessions: Iterable[Session], factor: int) -> list[Session]:
    """Concatenate adjacent sessions so each covers ``factor`` old buckets."""
    if factor < 1:
        raise ValueError("merge factor must be positive")
    merged: dict[tuple[int, int], list[int]] = {}
    for s in sorted(sessions, key=lambda s: (s.developer, s.time_step)):
        merged.setdefault((s.developer, s.time_step // factor), []).extend(s.items)
    return [Session(dev, t, tuple(items)) for (dev, t), items in sorted(merged.items())]


@dataclass(frozen=True)
class FilteredCorpus:
    sessions: tuple[Session, ...]
    social_edges: tuple[tuple[int, int], ...]
    dependency_edges: tuple[tuple[int, int], ...]
    developers: frozenset[int]
    packages: frozenset[int]


def filter_corpus(
    sessions: Sequence[Session],
    social_edges: Iterable[tuple[int, int]],
    dependency_edges: Iterable[tuple[int, int]],
    m: int = 0,
    n: int = 0,
    k: int = 0,
    min_len: int = MIN_SESSION_LEN,
    max_len: int = MAX_SESSION_LEN,
) -> FilteredCorpus:
    """Apply the friend/follower/watcher/length filters until nothing changes.

    One pass removes, in order: developers with fewer than ``m`` followees,
    developers with fewer than ``n`` followers, packages watched by fewer
    than ``k`` developers, and sessions whose length leaves
    ``[min_len, max_len]``. Developers left without sessions are dropped,
    and edges keep only retained endpoints.
    """
    if min(m, n, k) < 0:
        raise ValueError("m, n, k must be non-negative")
    current = list(sessions)
    edges = {(a, b) for a, b in social_edges if a != b}
    while True:
        devs = {s.developer for s in current}
        edges = {(a, b) for a, b in edges if a in devs and b in devs}
        state = (tuple(current), frozenset(edges))

        out_deg: dict[int, int] = defaultdict(int)
        for a, _ in edges:
            out_deg[a] += 1
        devs = {d for d in devs if out_deg[d] >= m}
        edges = {(a, b) for a, b in edges if a in devs and b in devs}

        in_deg: dict[int, int] = defaultdict(int)
        for _, b in edges:
            in_deg[b] += 1
        devs = {d for d in devs if in_deg[d] >= n}
        current = [s for s in current if s.developer in devs]

        watchers: dict[int, set[int]] = defaultdict(set)
        for s in current:
            for item in s.items:
                watchers[item].add(s.developer)
        keep = {p for p, w in watchers.items() if len(w) >= k}
        current = [Session(s.developer, s.time_step, tuple(i for i in s.items if i in keep)) for s in current]
        current = [s for s in current if min_len <= len(s) <= max_len]

        devs = {s.developer for s in current}
        edges = {(a, b) for a, b in edges if a in devs and b in devs}
        if (tuple(current), frozenset(edges)) == state:
            break

    packages = frozenset(i for s in current for i in s.items)
    deps = sorted({(a, b) for a, b in dependency_edges if a != b and a in packages and b in packages})
    return FilteredCorpus(
        sessions=tuple(sorted(current, key=lambda s: (s.developer, s.time_step))),
        social_edges=tuple(sorted(edges)),
        dependency_edges=tuple(deps),
        developers=frozenset(devs),
        packages=packages,
    )


class History:
    """Per-developer sessions ordered by time step (the list L^u)."""

    def __init__(self, sessions: Iterable[Session]):
        by_dev: dict[int, list[Session]] = defaultdict(list)
        for s in sessions:
            by_dev[s.developer].append(s)
        self._sessions = {d: sorted(ss, key=lambda s: s.time_step) for d, ss in by_dev.items()}
        self._steps = {d: [s.time_step for s in ss] for d, ss in self._sessions.items()}
        for d, steps in self._steps.items():
            if any(a >= b for a, b in zip(steps, steps[1:])):
                raise ValueError(f"developer {d} has repeated time steps")

    def of(self, developer: int) -> tuple[Session, ...]:
        return tuple(self._sessions.get(developer, ()))

    def first_step(self, developer: int) -> int | None:
        steps = self._steps.get(developer)
        return steps[0] if steps else None

    def latest_before(self, developer: int, time_step: int) -> Session | None:
        steps = self._steps.get(developer)
        if not steps:
            return None
        pos = bisect.bisect_left(steps, time_step)
        return self._sessions[developer][pos - 1] if pos else None

    def developers(self) -> list[int]:
        return sorted(self._sessions)


def select_friend_sessions(
    developer: int, time_step: int, social: Graph, history: History
) -> dict[int, Session | None]:
    """Friend context for a target session: the friend's T-1 session, else
    their latest earlier one, else ``None`` (no dynamic interest)."""
    return {f: history.latest_before(f, time_step) for f in social.neighbors(developer)}


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[Session, ...]
    valid: tuple[Session, ...]
    test: tuple[Session, ...]
    excluded_developers: tuple[int, ...] = ()
    dropped: tuple[Session, ...] = ()

    @cached_property
    def history(self) -> History:
        return History(self.train + self.valid + self.test)

    def assignments(self) -> list[tuple[int, int, str]]:
        rows = [(s.developer, s.time_step, name) for name in ("train", "valid", "test") for s in getattr(self, name)]
        return sorted(rows)


def split(
    sessions: Sequence[Session],
    reserve_weeks: int = 104,
    valid_frac: float = 0.5,
    test_frac: float = 0.5,
    seed: int = 0,
    lifespan_weeks: int = 1,
    horizon: int | None = None,
) -> DatasetSplit:
    """Temporal split with a random validation/test partition of the reserved window.

    The window is the last ``reserve_weeks`` weeks before ``horizon``
    (exclusive bucket index; defaults to one past the latest session).
    Each reserved session is drawn into test with probability ``test_frac``,
    validation with ``valid_frac``, and is otherwise left unused.
    """
    if not (0.0 <= valid_frac <= 1.0 and 0.0 <= test_frac <= 1.0 and valid_frac + test_frac <= 1.0):
        raise ValueError("valid_frac and test_frac must lie in [0, 1] and sum to at most 1")
    if not sessions:
        return DatasetSplit((), (), ())
    if horizon is None:
        horizon = max(s.time_step for s in sessions) + 1
    cutoff = horizon - math.ceil(reserve_weeks / lifespan_weeks)

    by_dev: dict[int, list[Session]] = defaultdict(list)
    for s in sorted(sessions, key=lambda s: (s.developer, s.time_step)):
        by_dev[s.developer].append(s)

    train: list[Session] = []
    valid: list[Session] = []
    test: list[Session] = []
    excluded: list[int] = []
    for dev, ss in sorted(by_dev.items()):
        early = [s for s in ss if s.time_step < cutoff]
        pool = [s for s in ss if s.time_step >= cutoff]
        if not early:
            excluded.append(dev)
            log.info("developer %d has no train sessions; excluded", dev)
            continue
        train.extend(early)
        draws = np.random.default_rng([seed, dev]).random(len(pool))
        for s, u in zip(pool, draws):
            if u < test_frac:
                test.append(s)
            elif u < test_frac + valid_frac:
                valid.append(s)

    seen = {i for s in train for i in s.items}
    dropped = [s for s in valid + test if not seen.issuperset(s.items)]
    valid = [s for s in valid if seen.issuperset(s.items)]
    test = [s for s in test if seen.issuperset(s.items)]
    return DatasetSplit(tuple(train), tuple(valid), tuple(test), tuple(excluded), tuple(dropped))


def eligible_train_sessions(data: DatasetSplit, history: History | None = None) -> list[Session]:
    """Train sessions that can serve as targets: not at the developer's first step."""
    history = history or data.history
    return [s for s in data.train if s.time_step != history.first_step(s.developer)]
