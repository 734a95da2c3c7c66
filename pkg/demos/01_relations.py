"""Walk through relation composition on a tiny bibliography graph."""

import numpy as np

from regather.graph import make_graph
from regather.relations import build_relation_set, compose, decompose, relation_catalog, with_reverses

# three authors, three papers, two venues, one term
vertex_type = np.array([0, 0, 0, 1, 1, 1, 2, 2, 3])
graph = make_graph(
    vertex_type,
    ["author", "paper", "venue", "term"],
    ["cites", "writes", "publishes", "has_term"],
    [(1, 1), (0, 1), (2, 1), (1, 3)],
    [
        [[4, 3], [5, 4]],                  # paper cites paper
        [[0, 3], [0, 4], [1, 4], [2, 5]],  # author writes paper
        [[6, 3], [6, 4], [7, 5]],          # venue publishes paper
        [[3, 8], [5, 8]],                  # paper has term
    ],
)
print(graph.stats())

# one matrix per edge type, then the transposes: 2c first-order relations
firsts = with_reverses(decompose(graph))
print(len(firsts), "first-order relations")

# author -> paper -> author counts shared papers (id 1 = writes, 1 + 4 = writes reversed)
composed = {r.signature: r.matrix for r in compose(firsts, K=2)}
print("co-authorship path counts:")
print(composed[(1, 5)].toarray()[:3, :3])

# unrealizable traversals (author->paper then author->paper) never get multiplied
print((1, 1) in composed)

# the final set: binarised, self-looped, duplicates merged
for K in (1, 2, 3):
    relset = build_relation_set(graph, K)
    print(f"K={K}: P={relset.P}")

print(relation_catalog(build_relation_set(graph, 2), graph))
