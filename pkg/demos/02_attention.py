"""One forward pass by hand: node attention for one relation, then fusion."""

import numpy as np
import scipy.sparse as sp

from regather.model import fuse, fusion_scores, fusion_weights, node_attention_output
from regather.model import node_attention_scores, node_attention_weights

rng = np.random.default_rng(0)
features = rng.standard_normal((4, 3))
W = rng.standard_normal((3, 2))
a = rng.standard_normal(4)

# neighbourhoods of one relation, self-loops included
mask = sp.csr_matrix(np.array([[1, 1, 0, 1],
                               [0, 1, 1, 0],
                               [1, 0, 1, 1],
                               [0, 0, 0, 1]]))

scores = node_attention_scores(mask, features, W, a)   # LeakyReLU pair scores
alpha = node_attention_weights(scores)                 # softmax per row
print(np.round(alpha.toarray(), 3))
print("row sums:", alpha.sum(axis=1).A.ravel())
# vertex 3 only sees itself, so its weight is exactly 1

z = node_attention_output(alpha, features, W)          # ELU of the weighted neighbours
print(z)

# fusion: score each relation's embeddings, softmax, mix
z2 = node_attention_output(sp.identity(4, format="csr"), features, W)
embeddings = np.stack([z, z2])
F, b, q = rng.standard_normal((2, 8)), np.zeros(8), rng.standard_normal(8)
w = fusion_scores(embeddings, F, b, q)
beta = fusion_weights(w)
print("w =", w, "beta =", beta)
print(fuse(embeddings, beta))

# softmax is shift invariant, so only score differences matter
print(np.allclose(fusion_weights(w + 10), beta))
