"""Raw interaction/relationship files and the interned in-memory corpus."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np


class DataError(ValueError):
    """Malformed input data; carries file and line when known."""

    def __init__(self, reason: str, path: str | Path | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{where}{reason}")
        self.path, self.line, self.reason = path, line, reason


@dataclass(frozen=True)
class InteractionEvent:
    developer: int
    package: int
    timestamp: int


@dataclass(frozen=True)
class Session:
    developer: int
    time_step: int
    items: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.items)


class Graph:
    """Directed adjacency over dense integer node ids.

    Self-loops and duplicate edges are dropped; neighbor lists are sorted.
    """

    def __init__(self, num_nodes: int, edges: Iterable[tuple[int, int]] = ()):
        adj: list[set[int]] = [set() for _ in range(num_nodes)]
        for src, dst in edges:
            if src == dst:
                continue
            if not (0 <= src < num_nodes and 0 <= dst < num_nodes):
                raise ValueError(f"edge ({src}, {dst}) outside graph of {num_nodes} nodes")
            adj[src].add(dst)
        self._adj = tuple(tuple(sorted(s)) for s in adj)
        self._csr = None

    @property
    def num_nodes(self) -> int:
        return len(self._adj)

    def neighbors(self, node: int) -> tuple[int, ...]:
        return self._adj[node]

    def degree(self, node: int) -> int:
        return len(self._adj[node])

    def edges(self) -> Iterator[tuple[int, int]]:
        for src, nbrs in enumerate(self._adj):
            for dst in nbrs:
                yield src, dst

    @property
    def num_edges(self) -> int:
        return sum(len(n) for n in self._adj)

    @property
    def max_degree(self) -> int:
        return max((len(n) for n in self._adj), default=0)

    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """``(indptr, indices)`` with the neighbors of ``v`` at ``indices[indptr[v]:indptr[v + 1]]``."""
        if self._csr is None:
            degrees = np.array([len(n) for n in self._adj], dtype=np.int64)
            indptr = np.concatenate([[0], np.cumsum(degrees)]).astype(np.int64)
            indices = np.array([v for n in self._adj for v in n], dtype=np.int64)
            self._csr = (indptr, indices)
        return self._csr

    def __eq__(self, other) -> bool:
        return isinstance(other, Graph) and self._adj == other._adj

    def __repr__(self) -> str:
        return f"Graph(nodes={self.num_nodes}, edges={self.num_edges})"


class Vocab:
    """Interns opaque string ids to dense indices in first-seen order."""

    def __init__(self, names: Sequence[str] = ()):
        self._names: list[str] = []
        self._index: dict[str, int] = {}
        for n in names:
            self.add(n)

    def add(self, name: str) -> int:
        idx = self._index.get(name)
        if idx is None:
            idx = self._index[name] = len(self._names)
            self._names.append(name)
        return idx

    def __getitem__(self, name: str) -> int:
        return self._index[name]

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __len__(self) -> int:
        return len(self._names)

    def name(self, idx: int) -> str:
        return self._names[idx]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._names)


@dataclass
class RawCorpus:
    events: list[InteractionEvent] = field(default_factory=list)
    social_edges: list[tuple[int, int]] = field(default_factory=list)
    dependency_edges: list[tuple[int, int]] = field(default_factory=list)
    developers: Vocab = field(default_factory=Vocab)
    packages: Vocab = field(default_factory=Vocab)

    @property
    def num_developers(self) -> int:
        return len(self.developers)


def _rows(path: Path, ncols: int) -> Iterator[tuple[int, list[str]]]:
    try:
        text = path.read_bytes().decode("utf-8")
    except FileNotFoundError:
        raise DataError("file not found", path) from None
    except UnicodeDecodeError as exc:
        raise DataError(f"not valid UTF-8 ({exc.reason})", path) from None
    for lineno, line in enumerate(text.split("\n"), start=1):
        if line.endswith("\r"):
            raise DataError("CRLF line ending", path, lineno)
        if not line:
            continue
        cols = line.split("\t")
        if len(cols) != ncols:
            raise DataError(f"expected {ncols} tab-separated columns, got {len(cols)}", path, lineno)
        if any(not c for c in cols):
            raise DataError("empty id", path, lineno)
        yield lineno, cols


def ingest(events_path, social_path, dependency_path) -> RawCorpus:
    """Parse the three TSV inputs; ids are interned in order of first appearance."""
    corpus = RawCorpus()
    for lineno, (dev, pkg, ts) in _rows(Path(events_path), 3):
        try:
            stamp = int(ts)
        except ValueError:
            raise DataError(f"non-integer timestamp {ts!r}", events_path, lineno) from None
        if stamp < 0:
            raise DataError(f"negative timestamp {stamp}", events_path, lineno)
        corpus.events.append(InteractionEvent(corpus.developers.add(dev), corpus.packages.add(pkg), stamp))
    for _, (src, dst) in _rows(Path(social_path), 2):
        corpus.social_edges.append((corpus.developers.add(src), corpus.developers.add(dst)))
    for _, (src, dst) in _rows(Path(dependency_path), 2):
        corpus.dependency_edges.append((corpus.packages.add(src), corpus.packages.add(dst)))
    return corpus
