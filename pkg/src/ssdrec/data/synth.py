"""Synthetic developer/package corpora with planted social and dependency signal.

Generative process, per seed:

* packages are split into ``topics`` contiguous clusters; each package
  depends on ``deps_per_package`` others drawn from its own cluster, so
  dependency edges never cross clusters;
* every developer has a home topic and follows ``friends_per_developer``
  others, drawn from the same home topic with probability ``homophily``;
* a developer's own topic drifts: each week it jumps to a random topic
  with probability ``drift``;
* an active developer's session topic copies the topic of a random
  friend's previous-week session with probability ``social_influence``,
  else it is their own topic;
* the first item comes from the session topic (Zipf popularity); each
  later item is, in order of precedence, a uniformly random package
  (``noise``), a dependency of the previous item (``dependency_follow``),
  or another item of the session topic.

Two optional knobs strengthen the signal beyond what a session prefix
reveals: ``social_copy`` lets later items be copied from the influencing
friend's previous-week session, and ``reciprocal_dependencies`` adds the
reverse of every dependency edge.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .sessions import SECONDS_PER_WEEK


@dataclass(frozen=True)
class SynthConfig:
    developers: int = 20
    packages: int = 30
    topics: int = 3
    weeks: int = 10
    seed: int = 0
    friends_per_developer: int = 3
    homophily: float = 0.8
    deps_per_package: int = 3
    activity: float = 0.9
    min_length: int = 2
    max_length: int = 5
    social_influence: float = 0.5
    drift: float = 0.3
    dependency_follow: float = 0.5
    noise: float = 0.05
    zipf: float = 1.0
    social_copy: float = 0.0
    reciprocal_dependencies: bool = False
    start_week: int = 2600

    def __post_init__(self):
        for name in ("developers", "packages", "topics", "weeks"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.topics > self.packages:
            raise ValueError("need at least one package per topic")
        if not 2 <= self.min_length <= self.max_length:
            raise ValueError("session length bounds must satisfy 2 <= min <= max")


@dataclass(frozen=True)
class SynthCorpus:
    events: list[tuple[str, str, int]]
    social: list[tuple[str, str]]
    dependency: list[tuple[str, str]]
    package_topic: tuple[int, ...]
    session_topics: dict[tuple[int, int], int]


def _dev(i: int) -> str:
    return f"dev{i:04d}"


def _pkg(i: int) -> str:
    return f"pkg{i:04d}"


def generate(config: SynthConfig) -> SynthCorpus:
    rng = np.random.default_rng(config.seed)
    nd, npk, nt = config.developers, config.packages, config.topics

    topic_of = np.repeat(np.arange(nt), [len(b) for b in np.array_split(np.arange(npk), nt)])
    clusters = [np.flatnonzero(topic_of == t) for t in range(nt)]
    popularity = []
    for members in clusters:
        w = 1.0 / np.arange(1, len(members) + 1) ** config.zipf
        popularity.append(w / w.sum())

    deps: list[tuple[int, ...]] = []
    for p in range(npk):
        pool = clusters[topic_of[p]]
        pool = pool[pool != p]
        size = min(config.deps_per_package, len(pool))
        deps.append(tuple(sorted(int(x) for x in rng.choice(pool, size=size, replace=False))))
    if config.reciprocal_dependencies:
        both = [set(d) for d in deps]
        for p, targets in enumerate(deps):
            for q in targets:
                both[q].add(p)
        deps = [tuple(sorted(b)) for b in both]

    home = rng.integers(0, nt, size=nd)
    friends: list[tuple[int, ...]] = []
    for d in range(nd):
        others = np.delete(np.arange(nd), d)
        same = others[home[others] == home[d]]
        chosen: list[int] = []
        want = min(config.friends_per_developer, len(others))
        while len(chosen) < want:
            pool = same if (len(same) and rng.random() < config.homophily) else others
            pick = int(rng.choice(pool))
            if pick not in chosen:
                chosen.append(pick)
        friends.append(tuple(sorted(chosen)))

    own = home.copy()
    session_topics: dict[tuple[int, int], int] = {}
    session_items: dict[tuple[int, int], list[int]] = {}
    events: list[tuple[str, str, int]] = []
    for w in range(config.weeks):
        week = config.start_week + w
        if w:
            jump = rng.random(nd) < config.drift
            own = np.where(jump, rng.integers(0, nt, size=nd), own)
        for d in range(nd):
            if rng.random() >= config.activity:
                continue
            topic = int(own[d])
            borrowed: list[int] = []
            if rng.random() < config.social_influence:
                prev = [f for f in friends[d] if (f, week - 1) in session_topics]
                if prev:
                    source = prev[int(rng.integers(len(prev)))]
                    topic = session_topics[(source, week - 1)]
                    borrowed = session_items[(source, week - 1)]
            session_topics[(d, week)] = topic
            items = _session_items(config, rng, topic, clusters, popularity, deps, borrowed)
            session_items[(d, week)] = items
            offsets = np.sort(rng.choice(SECONDS_PER_WEEK, size=len(items), replace=False))
            for item, off in zip(items, offsets):
                events.append((_dev(d), _pkg(item), week * SECONDS_PER_WEEK + int(off)))

    social = [(_dev(d), _dev(f)) for d in range(nd) for f in friends[d]]
    dependency = [(_pkg(p), _pkg(q)) for p in range(npk) for q in deps[p]]
    return SynthCorpus(events, social, dependency, tuple(int(t) for t in topic_of), session_topics)


def _session_items(config, rng, topic, clusters, popularity, deps, borrowed=()) -> list[int]:
    length = int(rng.integers(config.min_length, config.max_length + 1))
    members, weights = clusters[topic], popularity[topic]
    items = [int(rng.choice(members, p=weights))]
    for _ in range(256):
        if len(items) == length:
            break
        r = rng.random()
        fresh_deps = [q for q in deps[items[-1]] if q not in items]
        fresh_borrowed = [q for q in borrowed if q not in items]
        if r < config.noise:
            cand = int(rng.integers(config.packages))
        elif r < config.noise + config.social_copy and fresh_borrowed:
            cand = fresh_borrowed[0]
        elif r < config.noise + config.social_copy + config.dependency_follow and fresh_deps:
            cand = fresh_deps[int(rng.integers(len(fresh_deps)))]
        else:
            cand = int(rng.choice(members, p=weights))
        if cand not in items:
            items.append(cand)
    return items


def write_corpus(corpus: SynthCorpus, out_dir, config: SynthConfig | None = None) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "events": out / "events.tsv",
        "social": out / "social.tsv",
        "dependency": out / "dependency.tsv",
    }
    paths["events"].write_bytes("".join(f"{d}\t{p}\t{t}\n" for d, p, t in corpus.events).encode())
    paths["social"].write_bytes("".join(f"{a}\t{b}\n" for a, b in corpus.social).encode())
    paths["dependency"].write_bytes("".join(f"{a}\t{b}\n" for a, b in corpus.dependency).encode())
    if config is not None:
        paths["config"] = out / "synth.cfg"
        paths["config"].write_bytes("".join(f"{k}={v}\n" for k, v in asdict(config).items()).encode())
    return paths


def synth_generate(config: SynthConfig, out_dir) -> dict[str, Path]:
    return write_corpus(generate(config), out_dir, config)
