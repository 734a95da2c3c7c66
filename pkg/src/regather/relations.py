"""Relation-type matrices: decomposition, reversal, composition and the final set.

A first-order relation is one edge type traversed forwards or backwards.
Signed relation ids follow the layout of the first-order list: id ``t`` is
edge type ``t`` forwards and id ``c + t`` is its transpose, where ``c`` is the
number of edge types. Higher-order relations are products of first-order
matrices; entry ``(i, j)`` of a product counts the typed paths from ``i`` to
``j`` whose relation sequence equals the signature.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import HeteroGraph

logger = logging.getLogger(__name__)

DEFAULT_NNZ_CAP = 50_000_000
_INT_MAX = np.iinfo(np.int64).max


class RelationError(RuntimeError):
    """Composition failed (resource cap exceeded or nothing left to learn on)."""


@dataclass(frozen=True)
class RelationMatrix:
    matrix: sp.csr_matrix  # |V| x |V| int64 path counts
    signature: tuple[int, ...]  # signed first-order relation ids; empty for the homogenised baseline
    src_type: int
    dst_type: int

    @property
    def order(self) -> int:
        return len(self.signature)

    @property
    def nnz(self) -> int:
        return self.matrix.nnz


@dataclass(frozen=True)
class RelationSet:
    """The final relation collection over which attention operates.

    ``masks[p]`` is the binarised, self-looped matrix for relation ``p`` and
    ``relations[p]`` the path-count matrix it was derived from (the first
    signature in ``provenance[p]``).
    """

    relations: tuple[RelationMatrix, ...]
    masks: tuple[sp.csr_matrix, ...]
    provenance: tuple[tuple[tuple[int, ...], ...], ...]
    K: int
    num_edge_types: int

    @property
    def P(self) -> int:
        return len(self.masks)

    @property
    def num_vertices(self) -> int:
        return self.masks[0].shape[0]

    def catalog_hash(self) -> str:
        """Digest of mask structure and provenance; pairs checkpoints with relation sets."""
        h = hashlib.sha256()
        h.update(f"{self.K}:{self.num_edge_types}:{self.num_vertices}".encode())
        for m, prov in zip(self.masks, self.provenance):
            h.update(json.dumps([list(s) for s in prov]).encode())
            h.update(np.ascontiguousarray(m.indptr, dtype=np.int64).tobytes())
            h.update(np.ascontiguousarray(m.indices, dtype=np.int64).tobytes())
        return h.hexdigest()


def _adjacency(n: int, edges: np.ndarray) -> sp.csr_matrix:
    data = np.ones(len(edges), dtype=np.int64)
    m = sp.csr_matrix((data, (edges[:, 0], edges[:, 1])), shape=(n, n), dtype=np.int64)
    m.sum_duplicates()
    m.sort_indices()
    return m


def decompose(graph: HeteroGraph) -> list[RelationMatrix]:
    """One forward adjacency matrix per edge type; all-zero types are kept here."""
    n = graph.num_vertices
    return [
        RelationMatrix(_adjacency(n, e), (t,), s, d)
        for t, (e, (s, d)) in enumerate(zip(graph.edges, graph.edge_schema))
    ]


def with_reverses(firsts: list[RelationMatrix]) -> list[RelationMatrix]:
    """Append the transpose of every forward relation (reversed direction, swapped endpoint types)."""
    c = len(firsts)
    out = list(firsts)
    for r in firsts:
        (t,) = r.signature
        rev = r.matrix.T.tocsr()
        rev.sort_indices()
        out.append(RelationMatrix(rev, (t + c,) if t < c else (t - c,), r.dst_type, r.src_type))
    return out


def _sat_product(a: sp.csr_matrix, b: sp.csr_matrix) -> sp.csr_matrix:
    """Integer sparse product saturating at the int64 maximum instead of wrapping."""
    if a.nnz == 0 or b.nnz == 0:
        return sp.csr_matrix(a.shape[:1] + b.shape[1:], dtype=np.int64)
    # any output entry sums at most (row nnz of a) terms of size max(a) * max(b)
    bound = int(a.data.max()) * int(b.data.max()) * int(np.diff(a.indptr).max())
    if bound < 2**62:
        out = (a @ b).tocsr()
    else:
        f = (a.astype(np.float64) @ b.astype(np.float64)).tocsr()
        vals = np.round(f.data)
        sat = vals >= 2.0**63
        data = np.full(len(vals), _INT_MAX, dtype=np.int64)
        data[~sat] = vals[~sat].astype(np.int64)
        out = sp.csr_matrix((data, f.indices, f.indptr), shape=f.shape)
    out.eliminate_zeros()
    out.sort_indices()
    return out


def compose(relations: list[RelationMatrix], K: int, nnz_cap: int = DEFAULT_NNZ_CAP) -> list[RelationMatrix]:
    """All non-zero products of up to ``K`` first-order relations.

    Signatures are enumerated depth-first in lexicographic order of signed
    relation id. An extension is skipped when the prefix's destination type
    differs from the next relation's source type, and a zero prefix is never
    extended (every extension of it is zero too).
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    firsts = sorted(relations, key=lambda r: r.signature)
    out: list[RelationMatrix] = []

    def visit(prefix: RelationMatrix) -> None:
        out.append(prefix)
        if prefix.order == K:
            return
        for r in firsts:
            if r.src_type != prefix.dst_type or r.nnz == 0:
                continue
            m = _sat_product(prefix.matrix, r.matrix)
            if m.nnz > nnz_cap:
                raise RelationError(
                    f"product for signature {prefix.signature + r.signature} has {m.nnz} non-zeros "
                    f"(cap {nnz_cap})"
                )
            if m.nnz:
                visit(RelationMatrix(m, prefix.signature + r.signature, prefix.src_type, r.dst_type))

    for r in firsts:
        if r.nnz:
            visit(r)
    return out


def _self_looped_mask(m: sp.csr_matrix) -> sp.csr_matrix:
    n = m.shape[0]
    mask = (m != 0).astype(np.int8) + sp.identity(n, dtype=np.int8, format="csr")
    mask = mask.tocsr()
    mask.data[:] = 1
    mask.sort_indices()
    return mask


def finalize(composed: list[RelationMatrix], K: int | None = None, num_edge_types: int = 0) -> RelationSet:
    """Binarise, add self-loops and merge structurally identical masks.

    Duplicates are detected on the self-looped masks, so two relations that
    differ only on the diagonal also merge. The first signature (in
    enumeration order) is kept as representative; all merged signatures are
    recorded in the provenance.
    """
    if not composed:
        raise RelationError("empty relation set: every composed matrix was trivial")
    seen: dict[bytes, int] = {}
    reps: list[RelationMatrix] = []
    masks: list[sp.csr_matrix] = []
    prov: list[list[tuple[int, ...]]] = []
    for r in composed:
        if r.nnz == 0:
            continue
        mask = _self_looped_mask(r.matrix)
        key = mask.indptr.astype(np.int64).tobytes() + b"|" + mask.indices.astype(np.int64).tobytes()
        if key in seen:
            prov[seen[key]].append(r.signature)
            continue
        seen[key] = len(reps)
        reps.append(r)
        masks.append(mask)
        prov.append([r.signature])
    if not reps:
        raise RelationError("empty relation set: every composed matrix was trivial")
    if K is None:
        K = max(r.order for r in composed)
    return RelationSet(tuple(reps), tuple(masks), tuple(tuple(p) for p in prov), K, num_edge_types)


def build_relation_set(graph: HeteroGraph, K: int, nnz_cap: int = DEFAULT_NNZ_CAP) -> RelationSet:
    """decompose -> with_reverses -> compose -> finalize."""
    firsts = with_reverses(decompose(graph))
    return finalize(compose(firsts, K, nnz_cap), K=K, num_edge_types=graph.num_edge_types)


def homogeneous_relation_set(graph: HeteroGraph) -> RelationSet:
    """Single relation ignoring vertex and edge types: all edges, both directions, plus I."""
    n = graph.num_vertices
    c = graph.num_edge_types
    e = np.concatenate([x for x in graph.edges] + [np.zeros((0, 2), dtype=np.int64)])
    adj = _adjacency(n, e) if len(e) else sp.csr_matrix((n, n), dtype=np.int64)
    union = ((adj + adj.T) != 0).astype(np.int64).tocsr()
    union.sort_indices()
    sig = ()  # no typed composition produces an empty signature
    rel = RelationMatrix(union, sig, -1, -1)
    return RelationSet((rel,), (_self_looped_mask(union),), ((sig,),), 1, c)


def signature_edges(signature, graph: HeteroGraph) -> list[tuple[int, bool]]:
    """Decode signed ids into (edge type, reversed) pairs."""
    c = graph.num_edge_types
    return [(s % c, s >= c) for s in signature]


def signature_types(signature, graph: HeteroGraph) -> list[int]:
    """Vertex-type sequence visited by a signature."""
    steps = signature_edges(signature, graph)
    types = []
    for t, rev in steps:
        s, d = graph.edge_schema[t]
        if rev:
            s, d = d, s
        if not types:
            types.append(s)
        types.append(d)
    return types


def metapath_string(signature, graph: HeteroGraph) -> str:
    """Human-readable vertex-type path such as ``author→paper→author``."""
    if not signature:
        return "*homogeneous*"
    return "→".join(graph.vertex_type_names[t] for t in signature_types(signature, graph))


def edge_path_string(signature, graph: HeteroGraph) -> str:
    if not signature:
        return "all edges, both directions"
    parts = []
    for t, rev in signature_edges(signature, graph):
        parts.append(graph.edge_type_names[t] + ("⁻¹" if rev else ""))
    return "·".join(parts)


def relation_catalog(relset: RelationSet, graph: HeteroGraph) -> str:
    """Text table of the retained relations, one row per mask."""
    rows = [("#", "order", "nnz", "mask_nnz", "src", "dst", "signatures")]
    for p, (rel, mask, prov) in enumerate(zip(relset.relations, relset.masks, relset.provenance)):
        src = graph.vertex_type_names[rel.src_type] if rel.src_type >= 0 else "*"
        dst = graph.vertex_type_names[rel.dst_type] if rel.dst_type >= 0 else "*"
        sigs = " | ".join(f"{metapath_string(s, graph)} [{edge_path_string(s, graph)}]" for s in prov)
        rows.append((str(p), str(rel.order), str(rel.nnz), str(mask.nnz), src, dst, sigs))
    widths = [max(len(r[i]) for r in rows) for i in range(6)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r[:6], widths)) + "  " + r[6] for r in rows]
    lines.append(f"P = {relset.P} relations (K = {relset.K})")
    return "\n".join(lines)


def dump_relation_set(relset: RelationSet, graph: HeteroGraph, out_dir) -> Path:
    """Write each mask as sorted ``i j`` coordinate lines plus a ``catalog.json`` manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"K": relset.K, "P": relset.P, "catalog_hash": relset.catalog_hash(), "relations": []}
    width = max(3, len(str(relset.P)))
    for p, (mask, prov, rel) in enumerate(zip(relset.masks, relset.provenance, relset.relations)):
        name = f"mask_{p:0{width}d}.txt"
        coo = mask.tocoo()
        order = np.lexsort((coo.col, coo.row))
        np.savetxt(out / name, np.column_stack([coo.row[order], coo.col[order]]), fmt="%d")
        manifest["relations"].append({
            "file": name,
            "order": rel.order,
            "nnz": int(mask.nnz),
            "signatures": [list(s) for s in prov],
            "metapaths": [metapath_string(s, graph) for s in prov],
        })
    (out / "catalog.json").write_text(json.dumps(manifest, indent=2))
    return out / "catalog.json"
