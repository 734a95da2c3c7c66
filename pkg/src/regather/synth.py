"""Synthetic heterogeneous graphs whose labels are planted in a typed path.

Every target vertex gets a private chain of fresh vertices that follows the
rule's relation sequence and ends at one of ``num_classes`` terminal
vertices; the terminal reached is the class. Background (noise) edges are
drawn only among ordinary vertices, so they never create or remove a path
to a terminal, and every target vertex has the same planted degree whatever
its class.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import HeteroGraph, LabelTable, graph_paths, make_graph, make_labels, save_features, save_graph, save_labels


class SynthSpecError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    vertex_counts: dict[str, int]  # background vertices per type
    schema: tuple[tuple[str, str, str], ...]  # (edge type, src type, dst type)
    densities: dict[str, float]  # per edge type: probability of each background pair
    rule: tuple[tuple[str, bool], ...]  # (edge type, reversed) steps from a target vertex to a terminal
    num_classes: int = 2
    feature_mode: str = "gaussian"  # "onehot" | "gaussian" | "correlated"
    feature_dim: int = 32
    seed: int = 0

    def step_types(self) -> list[str]:
        """Vertex types visited by the rule, target type first."""
        ends = {e: (s, d) for e, s, d in self.schema}
        types = []
        for name, rev in self.rule:
            if name not in ends:
                raise SynthSpecError(f"rule uses unknown edge type {name!r}")
            s, d = ends[name]
            if rev:
                s, d = d, s
            if types and types[-1] != s:
                raise SynthSpecError(f"rule step {name!r} starts at {s!r} but the path is at {types[-1]!r}")
            if not types:
                types.append(s)
            types.append(d)
        return types


def dblp_like_spec(seed: int = 0, feature_mode: str = "gaussian", scale: float = 1.0,
                   rule_order: int = 2) -> SynthSpec:
    """Author/paper/venue/term schema with four edge types, ~300 vertices at scale 1.

    The planted rule is author -> paper -> author (order 2) by default;
    ``rule_order=3`` extends it to author -> paper -> author -> paper.
    """
    s = lambda k: max(1, int(round(k * scale)))  # noqa: E731
    rule = (("writes", False), ("writes", True))
    if rule_order == 3:
        rule = rule + (("writes", False),)
    elif rule_order != 2:
        raise SynthSpecError("rule_order must be 2 or 3")
    return SynthSpec(
        vertex_counts={"author": s(100), "paper": s(60), "venue": s(5), "term": s(30)},
        schema=(
            ("cites", "paper", "paper"),
            ("writes", "author", "paper"),
            ("publishes", "venue", "paper"),
            ("has_term", "paper", "term"),
        ),
        densities={"cites": 0.03, "writes": 0.05, "publishes": 0.2, "has_term": 0.1},
        rule=rule,
        feature_mode=feature_mode,
        seed=seed,
    )


@dataclass(frozen=True)
class SynthData:
    graph: HeteroGraph
    features: np.ndarray
    labels: LabelTable
    terminals: np.ndarray

    def write(self, out_dir) -> dict[str, Path]:
        paths = graph_paths(out_dir)
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        save_graph(self.graph, paths["vertices"], paths["edges"], paths["schema"])
        save_features(self.features, paths["features"])
        save_labels(self.labels, paths["labels"])
        return paths


def generate(spec: SynthSpec) -> SynthData:
    rng = np.random.default_rng(spec.seed)
    types = spec.step_types()
    target, terminal = types[0], types[-1]
    type_names = list(spec.vertex_counts)
    for _, s, d in spec.schema:
        for t in (s, d):
            if t not in type_names:
                type_names.append(t)
    tid = {t: i for i, t in enumerate(type_names)}
    n_target = spec.vertex_counts.get(target, 0)
    if spec.num_classes < 2:
        raise SynthSpecError("need at least two classes")
    if n_target < spec.num_classes:
        raise SynthSpecError(f"{n_target} target vertices cannot populate {spec.num_classes} classes")

    vtype: list[int] = []
    for t, k in spec.vertex_counts.items():
        vtype += [tid[t]] * k
    n_background = len(vtype)
    background_of = {t: [v for v in range(n_background) if vtype[v] == tid[t]] for t in type_names}
    targets = np.array(background_of[target], dtype=np.int64)

    terminals = np.arange(len(vtype), len(vtype) + spec.num_classes)
    vtype += [tid[terminal]] * spec.num_classes
    classes = rng.permutation(np.arange(n_target) % spec.num_classes)

    edge_names = [e for e, _, _ in spec.schema]
    edges: dict[str, list[tuple[int, int]]] = {e: [] for e in edge_names}
    for i, v in enumerate(targets):
        chain = [int(v)]
        for t in types[1:-1]:
            chain.append(len(vtype))
            vtype.append(tid[t])
        chain.append(int(terminals[classes[i]]))
        for (name, rev), a, b in zip(spec.rule, chain[:-1], chain[1:]):
            edges[name].append((b, a) if rev else (a, b))

    for name, s, d in spec.schema:
        p = spec.densities.get(name, 0.0)
        if p <= 0:
            continue
        src, dst = background_of[s], background_of[d]
        hit = rng.random((len(src), len(dst))) < p
        for a, b in zip(*np.nonzero(hit)):
            if src[a] != dst[b]:
                edges[name].append((src[a], dst[b]))

    graph = make_graph(
        np.array(vtype), type_names, edge_names,
        [(tid[s], tid[d]) for _, s, d in spec.schema],
        [np.array(edges[e], dtype=np.int64).reshape(-1, 2) for e in edge_names],
    )
    mapping = dict(zip(targets.tolist(), _reachability_labels(graph, spec, targets, terminals)))
    labels = make_labels(graph, mapping, target_type=tid[target])
    return SynthData(graph, _features(spec, graph, labels, rng), labels, terminals)


def _reachability_labels(graph: HeteroGraph, spec: SynthSpec, targets, terminals) -> list[int]:
    """Class of each target = index of the unique terminal reachable along the rule."""
    n = graph.num_vertices
    reach = np.zeros((len(targets), n), dtype=bool)
    reach[np.arange(len(targets)), targets] = True
    for name, rev in spec.rule:
        e = graph.edges[graph.edge_type_id(name)]
        src, dst = (e[:, 1], e[:, 0]) if rev else (e[:, 0], e[:, 1])
        nxt = np.zeros_like(reach)
        for a, b in zip(src, dst):
            nxt[:, b] |= reach[:, a]
        reach = nxt
    hits = reach[:, terminals]
    if not (hits.sum(axis=1) == 1).all():
        raise SynthSpecError("planted rule does not single out one terminal per target vertex")
    out = hits.argmax(axis=1)
    if len(np.unique(out)) != spec.num_classes:
        raise SynthSpecError("a class would be empty")
    return out.tolist()


def _features(spec: SynthSpec, graph: HeteroGraph, labels: LabelTable, rng) -> np.ndarray:
    n = graph.num_vertices
    if spec.feature_mode == "onehot":
        return np.eye(n)
    x = rng.standard_normal((n, spec.feature_dim))
    if spec.feature_mode == "gaussian":
        return x
    if spec.feature_mode == "correlated":
        centers = rng.standard_normal((labels.num_classes, spec.feature_dim)) * 2.0
        x[labels.vertices] += centers[labels.classes]
        return x
    raise SynthSpecError(f"unknown feature mode {spec.feature_mode!r}")
