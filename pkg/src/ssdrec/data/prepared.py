"""The prepared corpus: filtered, split, re-indexed, and its on-disk form.

Directory layout::

    developers.txt     one developer id per line, in index order
    packages.txt       one package id per line, in index order
    sessions.tsv       developer<TAB>T<TAB>split<TAB>item<TAB>item...
    social.tsv         follower<TAB>followee
    dependency.tsv     package<TAB>depends_on
    split_manifest.txt developer<TAB>T<TAB>split, sorted, for audit
    summary.txt        key<TAB>value corpus statistics
    corpus.cfg         key=value preparation settings
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Mapping

from .corpus import DataError, Graph, RawCorpus, Session
from .sessions import DatasetSplit, History, eligible_train_sessions, filter_corpus, segment_sessions, split

SPLITS = ("train", "valid", "test")


@dataclass(frozen=True)
class PrepareConfig:
    m: int = 0
    n: int = 0
    k: int = 0
    lifespan: int = 1
    reserve_weeks: int = 104
    valid_frac: float = 0.5
    test_frac: float = 0.5
    seed: int = 0

    def as_dict(self) -> dict[str, object]:
        return dict(self.__dict__)


@dataclass(frozen=True)
class PreparedCorpus:
    developers: tuple[str, ...]
    packages: tuple[str, ...]
    split: DatasetSplit
    social: Graph
    dependency: Graph
    config: PrepareConfig = field(default_factory=PrepareConfig)

    @property
    def num_developers(self) -> int:
        return len(self.developers)

    @property
    def num_packages(self) -> int:
        return len(self.packages)

    @cached_property
    def history(self) -> History:
        return self.split.history

    def sessions(self, name: str) -> tuple[Session, ...]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self.split, name)

    def summary(self) -> dict[str, object]:
        sessions = self.split.train + self.split.valid + self.split.test
        events = sum(len(s) for s in sessions)
        nd, np_ = self.num_developers, self.num_packages
        eligible = eligible_train_sessions(self.split, self.history)
        return {
            "developers": nd,
            "packages": np_,
            "events": events,
            "sessions": len(sessions),
            "avg_friends_per_developer": round(self.social.num_edges / nd, 4) if nd else 0.0,
            "avg_dependencies_per_package": round(self.dependency.num_edges / np_, 4) if np_ else 0.0,
            "avg_session_length": round(events / len(sessions), 4) if sessions else 0.0,
            "train_sessions": len(self.split.train),
            "valid_sessions": len(self.split.valid),
            "test_sessions": len(self.split.test),
            "train_instances": sum(len(s) - 1 for s in eligible),
        }


def reindex(
    split_data: DatasetSplit,
    developer_names: tuple[str, ...],
    package_names: tuple[str, ...],
    social_edges,
    dependency_edges,
    config: PrepareConfig,
) -> PreparedCorpus:
    """Renumber retained developers/packages densely, keeping original order."""
    sessions = split_data.train + split_data.valid + split_data.test
    devs = sorted({s.developer for s in sessions})
    pkgs = sorted({i for s in sessions for i in s.items})
    dmap = {d: i for i, d in enumerate(devs)}
    pmap = {p: i for i, p in enumerate(pkgs)}

    def remap(ss):
        return tuple(Session(dmap[s.developer], s.time_step, tuple(pmap[i] for i in s.items)) for s in ss)

    new_split = DatasetSplit(
        remap(split_data.train),
        remap(split_data.valid),
        remap(split_data.test),
        tuple(split_data.excluded_developers),
        tuple(split_data.dropped),
    )
    social = Graph(len(devs), ((dmap[a], dmap[b]) for a, b in social_edges if a in dmap and b in dmap))
    dependency = Graph(len(pkgs), ((pmap[a], pmap[b]) for a, b in dependency_edges if a in pmap and b in pmap))
    return PreparedCorpus(
        developers=tuple(developer_names[d] for d in devs),
        packages=tuple(package_names[p] for p in pkgs),
        split=new_split,
        social=social,
        dependency=dependency,
        config=config,
    )


def prepare(raw: RawCorpus, config: PrepareConfig = PrepareConfig()) -> PreparedCorpus:
    """ingest output -> sessions -> filtered fixpoint -> split -> re-indexed corpus."""
    sessions = segment_sessions(raw.events, config.lifespan)
    filtered = filter_corpus(sessions, raw.social_edges, raw.dependency_edges, config.m, config.n, config.k)
    parts = split(
        filtered.sessions,
        reserve_weeks=config.reserve_weeks,
        valid_frac=config.valid_frac,
        test_frac=config.test_frac,
        seed=config.seed,
        lifespan_weeks=config.lifespan,
    )
    return reindex(
        parts,
        raw.developers.names,
        raw.packages.names,
        filtered.social_edges,
        filtered.dependency_edges,
        config,
    )


def resplit(corpus: PreparedCorpus, sessions, lifespan: int) -> PreparedCorpus:
    """Split a new session list over the same vocabulary and graphs."""
    cfg = replace(corpus.config, lifespan=lifespan)
    parts = split(
        sessions,
        reserve_weeks=cfg.reserve_weeks,
        valid_frac=cfg.valid_frac,
        test_frac=cfg.test_frac,
        seed=cfg.seed,
        lifespan_weeks=lifespan,
    )
    return replace(corpus, split=parts, config=cfg)


def _write_lines(path: Path, lines) -> None:
    path.write_bytes("".join(line + "\n" for line in lines).encode("utf-8"))


def write_prepared(corpus: PreparedCorpus, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dn, pn = corpus.developers, corpus.packages
    _write_lines(out / "developers.txt", dn)
    _write_lines(out / "packages.txt", pn)
    rows = []
    for name in SPLITS:
        for s in corpus.sessions(name):
            rows.append((s.developer, s.time_step, name, s.items))
    rows.sort()
    _write_lines(
        out / "sessions.tsv",
        ("\t".join([dn[d], str(t), name, *(pn[i] for i in items)]) for d, t, name, items in rows),
    )
    _write_lines(out / "split_manifest.txt", (f"{dn[d]}\t{t}\t{name}" for d, t, name, _ in rows))
    _write_lines(out / "social.tsv", (f"{dn[a]}\t{dn[b]}" for a, b in corpus.social.edges()))
    _write_lines(out / "dependency.tsv", (f"{pn[a]}\t{pn[b]}" for a, b in corpus.dependency.edges()))
    _write_lines(out / "summary.txt", (f"{k}\t{v}" for k, v in corpus.summary().items()))
    _write_lines(out / "corpus.cfg", (f"{k}={v}" for k, v in corpus.config.as_dict().items()))
    return out


def _read_lines(path: Path) -> list[str]:
    if not path.exists():
        raise DataError("file not found", path)
    return [line for line in path.read_bytes().decode("utf-8").split("\n") if line]


def parse_kv(lines) -> dict[str, str]:
    out = {}
    for i, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"expected key=value, got {line!r}", line=i)
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _coerce_config(values: Mapping[str, str]) -> PrepareConfig:
    base = PrepareConfig()
    kwargs = {}
    for key, value in values.items():
        if key not in base.__dict__:
            raise DataError(f"unknown corpus setting {key!r}")
        kwargs[key] = type(base.__dict__[key])(value)
    return PrepareConfig(**kwargs)


def load_prepared(corpus_dir) -> PreparedCorpus:
    root = Path(corpus_dir)
    developers = tuple(_read_lines(root / "developers.txt"))
    packages = tuple(_read_lines(root / "packages.txt"))
    dmap = {d: i for i, d in enumerate(developers)}
    pmap = {p: i for i, p in enumerate(packages)}

    def lookup(table, key, path, lineno):
        try:
            return table[key]
        except KeyError:
            raise DataError(f"unknown id {key!r}", path, lineno) from None

    parts: dict[str, list[Session]] = {name: [] for name in SPLITS}
    path = root / "sessions.tsv"
    for lineno, line in enumerate(_read_lines(path), start=1):
        cols = line.split("\t")
        if len(cols) < 4 or cols[2] not in parts:
            raise DataError("malformed session row", path, lineno)
        dev = lookup(dmap, cols[0], path, lineno)
        items = tuple(lookup(pmap, c, path, lineno) for c in cols[3:])
        parts[cols[2]].append(Session(dev, int(cols[1]), items))

    def edges(name, table):
        p = root / name
        out = []
        for lineno, line in enumerate(_read_lines(p), start=1):
            a, _, b = line.partition("\t")
            out.append((lookup(table, a, p, lineno), lookup(table, b, p, lineno)))
        return out

    cfg_path = root / "corpus.cfg"
    config = _coerce_config(parse_kv(_read_lines(cfg_path))) if cfg_path.exists() else PrepareConfig()
    return PreparedCorpus(
        developers=developers,
        packages=packages,
        split=DatasetSplit(*(tuple(parts[n]) for n in SPLITS)),
        social=Graph(len(developers), edges("social.tsv", dmap)),
        dependency=Graph(len(packages), edges("dependency.tsv", pmap)),
        config=config,
    )
