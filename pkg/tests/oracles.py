"""Independent reference computations used by the tests.

Nothing here imports the code paths it checks: path counts come from
explicit depth-first enumeration, relation sets from dense boolean algebra,
and the model forward from per-vertex loops over dense matrices.
"""

import itertools

import numpy as np

from regather.graph import HeteroGraph, make_graph


def random_hetero_graph(rng: np.random.Generator, max_vertices=20, max_edge_types=4, min_vertices=3) -> HeteroGraph:
    n = int(rng.integers(min_vertices, max_vertices + 1))
    T = int(rng.integers(1, 4))
    vtype = rng.integers(0, T, size=n)
    vtype[:T] = np.arange(T)  # every type present, in order of first appearance
    c = int(rng.integers(1, max_edge_types + 1))
    schema = [(int(rng.integers(0, T)), int(rng.integers(0, T))) for _ in range(c)]
    density = rng.uniform(0.05, 0.5)
    edges = []
    for s, d in schema:
        src = np.flatnonzero(vtype == s)
        dst = np.flatnonzero(vtype == d)
        pairs = [(a, b) for a in src for b in dst if a != b and rng.random() < density]
        edges.append(np.array(pairs, dtype=np.int64).reshape(-1, 2))
    return make_graph(vtype, [f"t{i}" for i in range(T)], [f"e{i}" for i in range(c)], schema, edges)


def permuted_graph(graph: HeteroGraph, perm: np.ndarray) -> HeteroGraph:
    """Relabel vertex ``v`` as ``perm[v]``."""
    vtype = np.empty_like(graph.vertex_type)
    vtype[perm] = graph.vertex_type
    return make_graph(vtype, graph.vertex_type_names, graph.edge_type_names, graph.edge_schema,
                      [perm[e] for e in graph.edges])


def _neighbors(graph: HeteroGraph):
    """adj[(edge type, reversed)][v] -> list of next vertices."""
    adj = {}
    for t, e in enumerate(graph.edges):
        fwd = [[] for _ in range(graph.num_vertices)]
        rev = [[] for _ in range(graph.num_vertices)]
        for s, d in e.tolist():
            fwd[s].append(d)
            rev[d].append(s)
        adj[(t, False)] = fwd
        adj[(t, True)] = rev
    return adj


def dfs_path_counts(graph: HeteroGraph, signature, adj=None) -> np.ndarray:
    """Dense count of typed walks i -> j following ``signature`` (signed relation ids)."""
    adj = adj or _neighbors(graph)
    c = graph.num_edge_types
    steps = [(s % c, s >= c) for s in signature]
    n = graph.num_vertices
    counts = np.zeros((n, n), dtype=np.int64)

    def walk(start, v, depth):
        if depth == len(steps):
            counts[start, v] += 1
            return
        for w in adj[steps[depth]][v]:
            walk(start, w, depth + 1)

    for i in range(n):
        walk(i, i, 0)
    return counts


def all_walk_counts(graph: HeteroGraph, K: int) -> dict[tuple[int, ...], np.ndarray]:
    """Walk every typed path of length <= K from every vertex; dense counts per signature."""
    c = graph.num_edge_types
    n = graph.num_vertices
    out_steps = [[] for _ in range(n)]
    for t, e in enumerate(graph.edges):
        for s, d in e.tolist():
            out_steps[s].append((t, d))
            out_steps[d].append((t + c, s))
    counts: dict[tuple[int, ...], np.ndarray] = {}

    def walk(start, v, sig):
        if sig:
            counts.setdefault(sig, np.zeros((n, n), dtype=np.int64))[start, v] += 1
        if len(sig) == K:
            return
        for rid, w in out_steps[v]:
            walk(start, w, sig + (rid,))

    for i in range(n):
        walk(i, i, ())
    return counts


def all_signatures(num_edge_types: int, K: int):
    ids = range(2 * num_edge_types)
    for k in range(1, K + 1):
        yield from itertools.product(ids, repeat=k)


def _first_order_dense(graph: HeteroGraph):
    n = graph.num_vertices
    mats, ends = [], []
    for e, (s, d) in zip(graph.edges, graph.edge_schema):
        m = np.zeros((n, n), dtype=bool)
        m[e[:, 0], e[:, 1]] = True
        mats.append(m)
        ends.append((s, d))
    for m, (s, d) in list(zip(mats, ends)):
        mats.append(m.T.copy())
        ends.append((d, s))
    return mats, ends


def enumerate_masks(graph: HeteroGraph, K: int) -> list[tuple[tuple[int, ...], np.ndarray]]:
    """Distinct self-looped masks of every schema-valid non-zero signature, in signature order."""
    mats, ends = _first_order_dense(graph)
    n = graph.num_vertices
    seen, out = set(), []
    for sig in sorted(all_signatures(graph.num_edge_types, K)):
        if any(ends[a][1] != ends[b][0] for a, b in zip(sig[:-1], sig[1:])):
            continue
        m = mats[sig[0]].astype(np.int64)
        for s in sig[1:]:
            m = m @ mats[s].astype(np.int64)
        if not m.any():
            continue
        mask = (m > 0) | np.eye(n, dtype=bool)
        key = mask.tobytes()
        if key not in seen:
            seen.add(key)
            out.append((sig, mask))
    return out


def _leaky(x, slope):
    return x if x > 0 else slope * x


def _elu(x):
    return np.where(x > 0, x, np.exp(x) - 1)


def dense_forward(masks, X, params, slope=0.2, rows=None, return_parts=False):
    """Reference forward pass with explicit per-vertex loops.

    ``masks`` is a list of dense 0/1 arrays; ``params`` holds W (P,d,h), a
    (P,2h), F, b, q and optionally C, c0.
    """
    W, a = params["W"], params["a"]
    P = len(masks)
    n = X.shape[0]
    h = W.shape[2]
    Zs = np.zeros((P, n, h))
    alphas = []
    for p, mask in enumerate(masks):
        HW = X @ W[p]
        alpha = np.zeros((n, n))
        for i in range(n):
            nbrs = np.flatnonzero(mask[i])
            e = np.array([_leaky(a[p] @ np.concatenate([HW[i], HW[j]]), slope) for j in nbrs])
            w = np.exp(e - e.max())
            alpha[i, nbrs] = w / w.sum()
            Zs[p, i] = _elu(sum(alpha[i, j] * HW[j] for j in nbrs))
        alphas.append(alpha)
    idx = range(n) if rows is None else rows
    w = np.array([np.mean([params["q"] @ np.tanh(params["F"].T @ Zs[p, i] + params["b"]) for i in idx])
                  for p in range(P)])
    beta = np.exp(w - w.max())
    beta /= beta.sum()
    Z = sum(beta[p] * Zs[p] for p in range(P))
    logits = Z @ params["C"] + params["c0"] if "C" in params else Z
    if return_parts:
        return logits, {"alpha": alphas, "Zs": Zs, "w": w, "beta": beta, "Z": Z}
    return logits
