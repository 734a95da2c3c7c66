"""Heterogeneous directed graph model, text-file ingestion and validation.

All vertices share one global index space ``0..|V|-1`` regardless of type,
so every relation is a ``|V| x |V|`` matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


class GraphFormatError(ValueError):
    """Raised when an input file violates the expected format or schema."""


@dataclass(frozen=True)
class HeteroGraph:
    num_vertices: int
    vertex_type: np.ndarray  # (|V|,) int vertex type ids
    vertex_type_names: tuple[str, ...]
    edge_type_names: tuple[str, ...]
    edge_schema: tuple[tuple[int, int], ...]  # per edge type: (src type, dst type)
    edges: tuple[np.ndarray, ...]  # per edge type: (m, 2) int64 (src, dst)

    @property
    def num_vertex_types(self) -> int:
        return len(self.vertex_type_names)

    @property
    def num_edge_types(self) -> int:
        return len(self.edge_type_names)

    @property
    def num_edges(self) -> int:
        return sum(len(e) for e in self.edges)

    def vertex_type_id(self, name: str) -> int:
        return self.vertex_type_names.index(name)

    def edge_type_id(self, name: str) -> int:
        return self.edge_type_names.index(name)

    def vertices_of_type(self, type_id: int) -> np.ndarray:
        return np.flatnonzero(self.vertex_type == type_id)

    def stats(self) -> dict:
        """Dataset statistics in the style of a dataset summary table.

        An edge type is homogeneous when its source and destination vertex
        types coincide (e.g. paper-paper citations).
        """
        homo = sum(len(e) for e, (s, d) in zip(self.edges, self.edge_schema) if s == d)
        return {
            "vertices": self.num_vertices,
            "edges": self.num_edges,
            "heterogeneous_edges": self.num_edges - homo,
            "homogeneous_edges": homo,
            "vertex_types": {n: int((self.vertex_type == t).sum())
                             for t, n in enumerate(self.vertex_type_names)},
            "edge_types": {n: len(e) for n, e in zip(self.edge_type_names, self.edges)},
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, HeteroGraph):
            return NotImplemented
        return (
            self.num_vertices == other.num_vertices
            and np.array_equal(self.vertex_type, other.vertex_type)
            and self.vertex_type_names == other.vertex_type_names
            and self.edge_type_names == other.edge_type_names
            and self.edge_schema == other.edge_schema
            and all(np.array_equal(a, b) for a, b in zip(self.edges, other.edges))
        )

    __hash__ = None  # type: ignore[assignment]


def make_graph(vertex_type, vertex_type_names, edge_type_names, edge_schema, edges) -> HeteroGraph:
    """Build a graph from in-memory arrays, canonicalising the edge lists.

    Edges are sorted and deduplicated; self-loops are dropped. Raises
    :class:`GraphFormatError` if the result violates any graph invariant.
    """
    vertex_type = np.asarray(vertex_type, dtype=np.int64)
    clean = []
    for name, e in zip(edge_type_names, edges):
        e = np.asarray(e, dtype=np.int64).reshape(-1, 2)
        e, n_dup, n_loop = _canonical_edges(e)
        if n_dup:
            logger.warning("edge type %r: collapsed %d duplicate edges", name, n_dup)
        if n_loop:
            logger.warning("edge type %r: dropped %d self-loops", name, n_loop)
        clean.append(e)
    graph = HeteroGraph(
        num_vertices=len(vertex_type),
        vertex_type=vertex_type,
        vertex_type_names=tuple(vertex_type_names),
        edge_type_names=tuple(edge_type_names),
        edge_schema=tuple((int(s), int(d)) for s, d in edge_schema),
        edges=tuple(clean),
    )
    problems = validate(graph)
    if problems:
        raise GraphFormatError("; ".join(problems))
    return graph


def _canonical_edges(e: np.ndarray) -> tuple[np.ndarray, int, int]:
    loops = e[:, 0] == e[:, 1]
    e = e[~loops]
    if len(e) == 0:
        return np.zeros((0, 2), dtype=np.int64), 0, int(loops.sum())
    uniq = np.unique(e, axis=0)
    return uniq, len(e) - len(uniq), int(loops.sum())


def validate(graph: HeteroGraph) -> list[str]:
    """Return a list of invariant violations; empty iff the graph is well formed."""
    out: list[str] = []
    n = graph.num_vertices
    if len(graph.vertex_type) != n:
        out.append(f"vertex type array: length {len(graph.vertex_type)} != {n}")
    T = graph.num_vertex_types
    if len(set(graph.vertex_type_names)) != T:
        out.append("type names: vertex type names are not unique")
    if len(set(graph.edge_type_names)) != graph.num_edge_types:
        out.append("type names: edge type names are not unique")
    if len(graph.edge_schema) != graph.num_edge_types or len(graph.edges) != graph.num_edge_types:
        out.append("edge schema: one (src, dst) pair and one edge list per edge type required")
        return out
    if len(graph.vertex_type) and (graph.vertex_type.min() < 0 or graph.vertex_type.max() >= T):
        out.append("type id: vertex type id outside 0..T-1")
        return out
    for t, (name, (st, dt), e) in enumerate(zip(graph.edge_type_names, graph.edge_schema, graph.edges)):
        if not (0 <= st < T and 0 <= dt < T):
            out.append(f"edge schema: edge type {name!r} references an unknown vertex type")
            continue
        e = np.asarray(e).reshape(-1, 2)
        bad = (e < 0) | (e >= n)
        for row in np.flatnonzero(bad.any(axis=1)):
            out.append(f"index bound: edge type {name!r} edge {tuple(int(x) for x in e[row])} outside 0..{n - 1}")
        ok = e[~bad.any(axis=1)]
        mism = (graph.vertex_type[ok[:, 0]] != st) | (graph.vertex_type[ok[:, 1]] != dt)
        for row in np.flatnonzero(mism):
            s, d = (int(x) for x in ok[row])
            out.append(
                f"schema: edge type {name!r} edge ({s}, {d}) joins "
                f"{graph.vertex_type_names[graph.vertex_type[s]]}->"
                f"{graph.vertex_type_names[graph.vertex_type[d]]}"
            )
        loops = ok[ok[:, 0] == ok[:, 1]]
        for s, _ in loops:
            out.append(f"self-loop: edge type {name!r} edge ({int(s)}, {int(s)})")
        if len(ok):
            uniq, counts = np.unique(ok, axis=0, return_counts=True)
            for row in np.flatnonzero(counts > 1):
                out.append(f"duplicate edge: edge type {name!r} edge {tuple(int(x) for x in uniq[row])} "
                           f"appears {counts[row]} times")
    return out


def _records(path):
    """Yield (line number, fields) for non-blank, non-comment lines."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, line.split()


def load_graph(vertex_file, edge_file, schema_file) -> HeteroGraph:
    """Read a graph from the vertex / edge / schema text files.

    Duplicate edges are collapsed and input self-loops dropped, each with a
    logged warning count. Schema violations and unknown vertex ids raise
    :class:`GraphFormatError` naming the offending file and line.
    """
    type_names: list[str] = []
    type_index: dict[str, int] = {}
    assigned: dict[int, int] = {}
    for lineno, f in _records(vertex_file):
        if len(f) != 2:
            raise GraphFormatError(f"{vertex_file}:{lineno}: expected '<vertex_id> <type>'")
        try:
            vid = int(f[0])
        except ValueError:
            raise GraphFormatError(f"{vertex_file}:{lineno}: bad vertex id {f[0]!r}") from None
        if vid in assigned:
            raise GraphFormatError(f"{vertex_file}:{lineno}: vertex {vid} listed twice")
        if f[1] not in type_index:
            type_index[f[1]] = len(type_names)
            type_names.append(f[1])
        assigned[vid] = type_index[f[1]]
    n = len(assigned)
    if n and sorted(assigned) != list(range(n)):
        raise GraphFormatError(f"{vertex_file}: vertex ids must be exactly 0..{n - 1}")
    vertex_type = np.array([assigned[i] for i in range(n)], dtype=np.int64)

    edge_names: list[str] = []
    schema: list[tuple[int, int]] = []
    for lineno, f in _records(schema_file):
        if len(f) != 3:
            raise GraphFormatError(f"{schema_file}:{lineno}: expected '<edge_type> <src_type> <dst_type>'")
        if f[0] in edge_names:
            raise GraphFormatError(f"{schema_file}:{lineno}: edge type {f[0]!r} declared twice")
        for tn in f[1:]:
            if tn not in type_index:
                # vertex types may be declared by the schema alone
                type_index[tn] = len(type_names)
                type_names.append(tn)
        edge_names.append(f[0])
        schema.append((type_index[f[1]], type_index[f[2]]))

    per_type: list[list[tuple[int, int]]] = [[] for _ in edge_names]
    for lineno, f in _records(edge_file):
        if len(f) != 3:
            raise GraphFormatError(f"{edge_file}:{lineno}: expected '<edge_type> <src_id> <dst_id>'")
        if f[0] not in edge_names:
            raise GraphFormatError(f"{edge_file}:{lineno}: unknown edge type {f[0]!r}")
        t = edge_names.index(f[0])
        try:
            s, d = int(f[1]), int(f[2])
        except ValueError:
            raise GraphFormatError(f"{edge_file}:{lineno}: bad vertex id") from None
        for v in (s, d):
            if not 0 <= v < n:
                raise GraphFormatError(f"{edge_file}:{lineno}: unknown vertex id {v}")
        st, dt = schema[t]
        if vertex_type[s] != st or vertex_type[d] != dt:
            raise GraphFormatError(
                f"{edge_file}:{lineno}: schema violation: edge type {f[0]!r} expects "
                f"{type_names[st]}->{type_names[dt]}, got "
                f"{type_names[vertex_type[s]]}->{type_names[vertex_type[d]]}"
            )
        per_type[t].append((s, d))

    return make_graph(vertex_type, type_names, edge_names, schema, per_type)


def save_graph(graph: HeteroGraph, vertex_file, edge_file, schema_file) -> None:
    with open(vertex_file, "w", encoding="utf-8") as fh:
        for v, t in enumerate(graph.vertex_type):
            fh.write(f"{v} {graph.vertex_type_names[t]}\n")
    with open(schema_file, "w", encoding="utf-8") as fh:
        for name, (s, d) in zip(graph.edge_type_names, graph.edge_schema):
            fh.write(f"{name} {graph.vertex_type_names[s]} {graph.vertex_type_names[d]}\n")
    with open(edge_file, "w", encoding="utf-8") as fh:
        for name, e in zip(graph.edge_type_names, graph.edges):
            for s, d in e:
                fh.write(f"{name} {s} {d}\n")


def load_features(path, num_vertices: int | None = None) -> np.ndarray:
    """Read a dense ``|V| x d`` feature matrix (one whitespace-separated row per vertex)."""
    rows = []
    for lineno, f in _records(path):
        try:
            rows.append([float(x) for x in f])
        except ValueError:
            raise GraphFormatError(f"{path}:{lineno}: non-numeric feature value") from None
        if len(rows[-1]) != len(rows[0]):
            raise GraphFormatError(f"{path}:{lineno}: expected {len(rows[0])} values, got {len(rows[-1])}")
    x = np.array(rows, dtype=np.float64)
    if num_vertices is not None and len(x) != num_vertices:
        raise GraphFormatError(f"{path}: {len(x)} feature rows for {num_vertices} vertices")
    if not np.isfinite(x).all():
        raise GraphFormatError(f"{path}: non-finite feature value")
    return x


def save_features(features: np.ndarray, path) -> None:
    np.savetxt(path, features, fmt="%.17g")


@dataclass(frozen=True)
class LabelTable:
    target_type: int
    vertices: np.ndarray  # labeled vertex indices, ascending
    classes: np.ndarray  # class id per labeled vertex
    num_classes: int = field(default=0)

    def __post_init__(self):
        if len(self.vertices) != len(self.classes):
            raise ValueError("vertices and classes must have equal length")
        if self.num_classes == 0:
            object.__setattr__(self, "num_classes", int(self.classes.max()) + 1 if len(self.classes) else 0)

    def as_dict(self) -> dict[int, int]:
        return dict(zip(self.vertices.tolist(), self.classes.tolist()))

    def dense(self, num_vertices: int) -> np.ndarray:
        """Per-vertex class array with -1 for unlabeled vertices."""
        y = np.full(num_vertices, -1, dtype=np.int64)
        y[self.vertices] = self.classes
        return y


def make_labels(graph: HeteroGraph, mapping: dict[int, int], target_type: int | None = None) -> LabelTable:
    if not mapping:
        raise GraphFormatError("label table is empty")
    vertices = np.array(sorted(mapping), dtype=np.int64)
    classes = np.array([mapping[v] for v in vertices.tolist()], dtype=np.int64)
    if vertices.min() < 0 or vertices.max() >= graph.num_vertices:
        raise GraphFormatError("labeled vertex index outside 0..|V|-1")
    types = np.unique(graph.vertex_type[vertices])
    if target_type is None:
        if len(types) != 1:
            names = [graph.vertex_type_names[t] for t in types]
            raise GraphFormatError(f"labeled vertices span several vertex types: {names}")
        target_type = int(types[0])
    elif types.tolist() != [target_type]:
        raise GraphFormatError("every labeled vertex must have the target vertex type")
    L = int(classes.max()) + 1
    if classes.min() < 0 or len(np.unique(classes)) != L:
        raise GraphFormatError(f"class ids must be dense 0..{L - 1} with every class present")
    return LabelTable(target_type=target_type, vertices=vertices, classes=classes, num_classes=L)


def load_labels(path, graph: HeteroGraph) -> LabelTable:
    mapping: dict[int, int] = {}
    for lineno, f in _records(path):
        if len(f) != 2:
            raise GraphFormatError(f"{path}:{lineno}: expected '<vertex_id> <class_id>'")
        try:
            v, c = int(f[0]), int(f[1])
        except ValueError:
            raise GraphFormatError(f"{path}:{lineno}: non-integer label record") from None
        if not 0 <= v < graph.num_vertices:
            raise GraphFormatError(f"{path}:{lineno}: unknown vertex id {v}")
        if v in mapping:
            raise GraphFormatError(f"{path}:{lineno}: vertex {v} labeled twice")
        mapping[v] = c
    return make_labels(graph, mapping)


def save_labels(labels: LabelTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v, c in zip(labels.vertices, labels.classes):
            fh.write(f"{v} {c}\n")


def graph_paths(directory) -> dict[str, Path]:
    """Conventional file names used by the synthetic writer and the CLI."""
    d = Path(directory)
    return {
        "vertices": d / "vertices.txt",
        "edges": d / "edges.txt",
        "schema": d / "schema.txt",
        "features": d / "features.txt",
        "labels": d / "labels.txt",
    }
