"""Dual-level attention over a relation set: per-relation single-head node
attention followed by attention-weighted fusion of the relation embeddings.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Pattern, Tensor
from .relations import RelationSet

CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    d_in: int
    num_classes: int
    d_h: int = 64
    d_q: int = 128
    K: int = 3
    leaky_slope: float = 0.2
    dropout: float = 0.6
    seed: int = 0
    use_classifier: bool = True
    restrict_fusion_mean: bool = False
    dtype: str = "float64"

    def __post_init__(self):
        for name in ("d_in", "num_classes", "d_h", "d_q", "K"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.use_classifier and self.d_h != self.num_classes:
            raise ValueError("without a classifier the hidden size must equal the number of classes")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_params(config: ModelConfig, P: int, rng: np.random.Generator) -> dict[str, Tensor]:
    """Glorot-uniform weights and attention vectors, zero biases.

    ``W`` stacks one ``d_in x d_h`` matrix per relation and ``a`` one
    attention vector of length ``2 d_h`` per relation.
    """
    dt = np.dtype(config.dtype)
    h, q = config.d_h, config.d_q
    params = {
        "W": glorot(rng, (P, config.d_in, h), config.d_in, h, dt),
        "a": glorot(rng, (P, 2 * h), 2 * h, 1, dt),
        "F": glorot(rng, (h, q), h, q, dt),
        "b": np.zeros(q, dtype=dt),
        "q": glorot(rng, (q,), q, 1, dt),
    }
    if config.use_classifier:
        params["C"] = glorot(rng, (h, config.num_classes), h, config.num_classes, dt)
        params["c0"] = np.zeros(config.num_classes, dtype=dt)
    return {k: ad.param(v, name=k) for k, v in params.items()}


class Regather:
    """Model bound to one relation set.

    ``forward`` returns the logits tensor; the fusion weights of the most
    recent call are kept in ``last_beta``.
    """

    def __init__(self, config: ModelConfig, relset: RelationSet, target_rows: np.ndarray | None = None,
                 params: dict[str, Tensor] | None = None):
        self.config = config
        self.relset = relset
        self.n = relset.num_vertices
        self.P = relset.P
        self.pattern = Pattern.block_diagonal(relset.masks)
        self.target_rows = None if target_rows is None else np.asarray(target_rows, dtype=np.int64)
        if config.restrict_fusion_mean and self.target_rows is None:
            raise ValueError("restricted fusion mean needs the target-type vertex rows")
        if params is None:
            params = init_params(config, self.P, np.random.default_rng(config.seed))
        self.params = params
        self.last_beta: np.ndarray | None = None

    def relation_param_count(self) -> int:
        """Node-attention parameters owned by a single relation."""
        return self.config.d_in * self.config.d_h + 2 * self.config.d_h

    def forward(self, features, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        cfg = self.config
        p = self.params
        x = features if isinstance(features, Tensor) else ad.constant(np.asarray(features, dtype=cfg.dtype))
        if x.shape != (self.n, cfg.d_in):
            raise ValueError(f"features have shape {x.shape}, expected {(self.n, cfg.d_in)}")
        drop = cfg.dropout if train else 0.0
        if drop and rng is None:
            raise ValueError("train mode with dropout needs an rng")
        x = ad.dropout(x, drop, rng)
        hw = ad.relation_linear(x, p["W"])
        e = ad.leaky_relu(ad.attention_logits(hw, p["a"], self.pattern), cfg.leaky_slope)
        alpha = ad.dropout(ad.masked_softmax(e), drop, rng)
        zs = ad.elu(ad.spmm(alpha, hw))
        t = ad.tanh(ad.add_bias(ad.shared_linear(zs, p["F"]), p["b"]))
        rows = self.target_rows if cfg.restrict_fusion_mean else None
        w = ad.row_mean(ad.vector_dot(t, p["q"]), rows)
        beta = ad.softmax(w)
        self.last_beta = beta.value.copy()
        z = ad.weighted_sum(zs, beta)
        if not cfg.use_classifier:
            return z
        return ad.add_bias(ad.matmul(z, p["C"]), p["c0"])

    def predict(self, features) -> np.ndarray:
        return self.forward(features).value.argmax(axis=1)

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            self.params[k].value[...] = v


# single-relation views of the forward pass, operating on plain arrays -------------

def _one(mask: sp.spmatrix, W: np.ndarray, features: np.ndarray):
    mask = sp.csr_matrix(mask)
    if mask.shape != (features.shape[0],) * 2:
        raise ValueError(f"mask {mask.shape} does not match {features.shape[0]} vertices")
    if W.shape[0] != features.shape[1]:
        raise ValueError(f"W has {W.shape[0]} input rows, features have {features.shape[1]} columns")
    pat = Pattern.from_csr(mask)
    hw = ad.relation_linear(ad.constant(features), ad.constant(W[None]))
    return pat, hw


def node_attention_scores(mask, features: np.ndarray, W: np.ndarray, a: np.ndarray,
                          slope: float = 0.2) -> sp.csr_matrix:
    """LeakyReLU pair scores on the non-zero entries of one mask."""
    pat, hw = _one(mask, W, features)
    if a.shape != (2 * W.shape[1],):
        raise ValueError(f"attention vector has shape {a.shape}, expected {(2 * W.shape[1],)}")
    e = ad.leaky_relu(ad.attention_logits(hw, ad.constant(a[None]), pat), slope)
    return pat.matrix(e.value)


def node_attention_weights(scores: sp.csr_matrix) -> sp.csr_matrix:
    pat = Pattern.from_csr(scores)
    s = sp.csr_matrix(scores)
    s.sort_indices()
    alpha = ad.masked_softmax(ad.constant(s.data, pattern=pat))
    return pat.matrix(alpha.value)


def node_attention_output(alpha: sp.csr_matrix, features: np.ndarray, W: np.ndarray) -> np.ndarray:
    pat, hw = _one(alpha, W, features)
    s = sp.csr_matrix(alpha)
    s.sort_indices()
    return ad.elu(ad.spmm(ad.constant(s.data, pattern=pat), hw)).value[0]


def fusion_scores(embeddings, F: np.ndarray, b: np.ndarray, q: np.ndarray,
                  rows: np.ndarray | None = None) -> np.ndarray:
    zs = ad.constant(np.asarray(embeddings))
    t = ad.tanh(ad.add_bias(ad.shared_linear(zs, ad.constant(F)), ad.constant(b)))
    return ad.row_mean(ad.vector_dot(t, ad.constant(q)), rows).value


def fusion_weights(w) -> np.ndarray:
    return ad.softmax(ad.constant(np.asarray(w, dtype=float))).value


def fuse(embeddings, beta) -> np.ndarray:
    return ad.weighted_sum(ad.constant(np.asarray(embeddings)), ad.constant(np.asarray(beta))).value


# checkpoints --------------------------------------------------------------------

def _zip_entry(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    info.compress_type = zipfile.ZIP_DEFLATED
    zf.writestr(info, payload)


def checkpoint_bytes(model: Regather, extra: dict | None = None) -> bytes:
    """Serialise config, catalog hash and parameters; byte-stable for equal models."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "catalog_hash": model.relset.catalog_hash(),
        "P": model.P,
        "extra": extra or {},
    }
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        _zip_entry(zf, "meta.json", json.dumps(meta, sort_keys=True).encode())
        for k in sorted(model.params):
            arr = io.BytesIO()
            np.lib.format.write_array(arr, model.params[k].value, allow_pickle=False)
            _zip_entry(zf, f"{k}.npy", arr.getvalue())
    return buf.getvalue()


def save_checkpoint(model: Regather, path, extra: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model, extra))


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {meta.get('version')}")
        arrays = {}
        for name in zf.namelist():
            if name.endswith(".npy"):
                arrays[name[:-4]] = np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)
    return meta, arrays


def load_checkpoint(path, relset: RelationSet, target_rows: np.ndarray | None = None) -> Regather:
    """Rebuild a model; refuses a checkpoint made for a different relation set."""
    meta, arrays = read_checkpoint(path)
    if meta["catalog_hash"] != relset.catalog_hash():
        raise CheckpointError("checkpoint was trained on a different relation set (catalog hash mismatch)")
    config = ModelConfig(**meta["config"])
    params = {k: ad.param(v, name=k) for k, v in arrays.items()}
    return Regather(config, relset, target_rows=target_rows, params=params)
