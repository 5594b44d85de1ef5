"""Skeleton graphs and the self / closer / farther spatial partitioning."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

PARTITIONS = ("self", "closer", "farther")
_LAYOUT_FIELDS = {"num_nodes", "edges", "root", "node_names", "description"}


class GraphError(ValueError):
    """Invalid or disconnected skeleton layout."""


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class GraphLayout:
    num_nodes: int
    edges: tuple[tuple[int, int], ...]
    root: int
    node_names: tuple[str, ...] = ()
    name: str = ""

    def __post_init__(self):
        n = self.num_nodes
        if n < 1:
            raise GraphError(f"num_nodes must be positive, got {n}")
        if not 0 <= self.root < n:
            raise GraphError(f"root {self.root} outside [0, {n})")
        seen = set()
        for i, j in self.edges:
            if not (0 <= i < n and 0 <= j < n):
                raise GraphError(f"edge ({i}, {j}) has an endpoint outside [0, {n})")
            if i == j:
                raise GraphError(f"self-loop ({i}, {j}) in edge list")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise GraphError(f"duplicate edge ({i}, {j})")
            seen.add(key)
        if self.node_names and len(self.node_names) != n:
            raise GraphError(f"{len(self.node_names)} node names for {n} nodes")

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def to_dict(self) -> dict:
        out = {"num_nodes": self.num_nodes, "edges": [list(e) for e in self.edges], "root": self.root}
        if self.node_names:
            out["node_names"] = list(self.node_names)
        return out


def layout_from_dict(spec: dict, name: str = "") -> GraphLayout:
    unknown = set(spec) - _LAYOUT_FIELDS
    if unknown:
        raise ConfigurationError(f"unknown layout field(s): {sorted(unknown)}")
    missing = {"num_nodes", "edges", "root"} - set(spec)
    if missing:
        raise ConfigurationError(f"layout missing field(s): {sorted(missing)}")
    edges = tuple((int(i), int(j)) for i, j in spec["edges"])
    layout = GraphLayout(int(spec["num_nodes"]), edges, int(spec["root"]),
                         tuple(spec.get("node_names", ())), name)
    hop_distances(layout)  # connectivity check
    return layout


def load_layout(path: str | Path) -> GraphLayout:
    with open(path) as fh:
        spec = json.load(fh)
    return layout_from_dict(spec, name=Path(path).stem)


def _preset_table() -> dict:
    text = resources.files("msgcn").joinpath("data_files/layouts.json").read_text()
    return json.loads(text)


def preset_names() -> list[str]:
    return sorted(_preset_table())


def layout_preset(name: str) -> GraphLayout:
    table = _preset_table()
    if name not in table:
        raise ConfigurationError(f"unknown layout preset {name!r}; valid presets: {', '.join(sorted(table))}")
    return layout_from_dict(table[name], name=name)


def resolve_layout(name_or_path: str) -> GraphLayout:
    """A preset name, or a path to a layout file."""
    if name_or_path in _preset_table():
        return layout_preset(name_or_path)
    if Path(name_or_path).is_file():
        return load_layout(name_or_path)
    raise ConfigurationError(
        f"{name_or_path!r} is neither a layout preset ({', '.join(preset_names())}) nor a layout file")


def hop_distances(layout: GraphLayout) -> np.ndarray:
    """Breadth-first hop count from the root to every node."""
    n = layout.num_nodes
    neighbours = [[] for _ in range(n)]
    for i, j in layout.edges:
        neighbours[i].append(j)
        neighbours[j].append(i)
    dist = np.full(n, -1, dtype=int)
    dist[layout.root] = 0
    queue = deque([layout.root])
    while queue:
        u = queue.popleft()
        for v in neighbours[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    unreachable = np.flatnonzero(dist < 0)
    if unreachable.size:
        raise GraphError(f"graph is disconnected; nodes unreachable from root {layout.root}: {unreachable.tolist()}")
    return dist


def partition(layout: GraphLayout, dist: np.ndarray | None = None) -> np.ndarray:
    """Split the 1-hop sampling area into (self, closer, farther) 0/1 matrices.

    Entry (i, j) of a matrix means node j contributes to node i.  Neighbours
    at equal root distance go to the closer subset.
    """
    if dist is None:
        dist = hop_distances(layout)
    n = layout.num_nodes
    parts = np.zeros((3, n, n))
    parts[0] = np.eye(n)
    for a, b in layout.edges:
        for i, j in ((a, b), (b, a)):
            parts[1 if dist[j] <= dist[i] else 2, i, j] = 1.0
    return parts


def normalize(parts: np.ndarray) -> np.ndarray:
    """Symmetric degree normalisation D^-1/2 A D^-1/2 of each partition.

    The left factor takes row degrees and the right factor column degrees,
    which coincide for symmetric matrices.  The directed closer/farther
    subsets need both: node i gathering from j is scaled by 1/sqrt(deg_out(i)
    deg_in(j)).  Zero-degree rows and columns stay zero.
    """
    out = np.zeros_like(parts, dtype=np.float64)
    for p, a in enumerate(parts):
        out[p] = _inv_sqrt(a.sum(axis=1))[:, None] * a * _inv_sqrt(a.sum(axis=0))[None, :]
    return out


def _inv_sqrt(degree: np.ndarray) -> np.ndarray:
    out = np.zeros_like(degree, dtype=np.float64)
    nz = degree > 0
    out[nz] = degree[nz] ** -0.5
    return out


@dataclass(frozen=True)
class PartitionedAdjacency:
    matrices: np.ndarray  # (3, N, N), normalised
    distances: np.ndarray
    raw: np.ndarray = field(repr=False)

    @property
    def num_nodes(self) -> int:
        return self.matrices.shape[-1]

    @classmethod
    def from_layout(cls, layout: GraphLayout) -> "PartitionedAdjacency":
        dist = hop_distances(layout)
        raw = partition(layout, dist)
        return cls(normalize(raw), dist, raw)
