"""Masked cross-entropy training with Adam and patience-based early stopping."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .graph import LabelTable
from .metrics import f1_scores
from .model import ModelConfig, Regather, init_params
from .relations import RelationSet

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    val_fraction: float = 0.1  # share of the training portion held out for early stopping
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def _stratified_take(idx: np.ndarray, cls: np.ndarray, frac: float, rng: np.random.Generator,
                     minimum: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Take ``round(frac * len(idx))`` items, per class in proportion.

    Each class first gets ``floor(frac * n_c)`` of its shuffled members; the
    leftover quota is handed out one item at a time, cycling through the
    classes in id order.
    """
    total = min(len(idx), max(minimum, int(round(frac * len(idx)))))
    groups = {c: rng.permutation(idx[cls == c]) for c in np.unique(cls)}
    quota = {c: int(np.floor(frac * len(g))) for c, g in groups.items()}
    left = total - sum(quota.values())
    while left > 0:
        progressed = False
        for c in groups:
            if left and quota[c] < len(groups[c]):
                quota[c] += 1
                left -= 1
                progressed = True
        if not progressed:
            break
    taken = np.concatenate([g[:quota[c]] for c, g in groups.items()] + [np.zeros(0, np.int64)])
    rest = np.concatenate([g[quota[c]:] for c, g in groups.items()] + [np.zeros(0, np.int64)])
    return np.sort(taken), np.sort(rest)


def make_split(labels: LabelTable, spec: SplitSpec) -> Split:
    """Stratified train / validation / test partition of the labeled vertices."""
    rng = np.random.default_rng(spec.seed)
    lookup = labels.as_dict()
    cls_of = lambda ix: np.array([lookup[v] for v in ix.tolist()], dtype=np.int64)  # noqa: E731
    train_all, test = _stratified_take(labels.vertices, labels.classes, spec.train_fraction, rng, minimum=2)
    val, train = _stratified_take(train_all, cls_of(train_all), spec.val_fraction, rng, minimum=1)
    if len(train) == 0 or len(val) == 0 or len(test) == 0:
        raise TrainingError(
            f"split too small: {len(train)} train / {len(val)} val / {len(test)} test vertices"
        )
    return Split(train, val, test)


@dataclass
class TrainConfig:
    lr: float = 0.005
    max_epochs: int = 200
    patience: int = 100
    weight_decay: float = 0.0
    loss_reduction: str = "mean"
    monitor: str = "loss"  # or "f1" (validation micro-F1)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.loss_reduction not in ("mean", "sum"):
            raise ValueError("loss_reduction must be 'mean' or 'sum'")
        if self.monitor not in ("loss", "f1"):
            raise ValueError("monitor must be 'loss' or 'f1'")
        if self.lr < 0 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("need lr >= 0, max_epochs >= 1 and patience >= 1")


def loss(logits: ad.Tensor, y: np.ndarray, index: np.ndarray, reduction: str = "mean") -> ad.Tensor:
    """Cross-entropy restricted to the labeled vertices in ``index``.

    ``y`` holds a class per vertex (indexed by vertex id).
    """
    index = np.asarray(index, dtype=np.int64)
    if len(index) == 0:
        raise TrainingError("loss over an empty index set")
    return ad.cross_entropy(logits, np.asarray(y)[index], index, reduction)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict[str, ad.Tensor], grads: dict[str, np.ndarray], state: AdamState,
              lr: float = 0.005, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update applied in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.value.shape:
            raise TrainingError(f"gradient for {name!r} has shape {g.shape}, expected {p.value.shape}")
        m = state.m.setdefault(name, np.zeros_like(p.value))
        v = state.v.setdefault(name, np.zeros_like(p.value))
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        p.value -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.value.dtype, copy=False)


@dataclass
class TrainReport:
    train_loss: list[float]
    val_loss: list[float]
    val_micro_f1: list[float]
    stopping_epoch: int
    best_epoch: int
    test_macro_f1: float
    test_micro_f1: float
    beta: list[float]
    split_sizes: dict[str, int]
    seed: int
    checkpoint: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TrainReport":
        return cls(**json.loads(text))


def _derive_seeds(seed: int, k: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(k)]


def train(features: np.ndarray, labels: LabelTable, relset: RelationSet, model_config: ModelConfig,
          train_config: TrainConfig, split: Split, target_rows: np.ndarray | None = None,
          ) -> tuple[TrainReport, Regather]:
    """Full-batch training; returns the report and the model at its best validation epoch.

    Each epoch takes one Adam step on the training loss (dropout active),
    then evaluates the validation set with dropout off. Training stops once
    ``patience`` epochs pass without improvement or after ``max_epochs``.
    Test labels are read only after training has finished.
    """
    n = relset.num_vertices
    y = labels.dense(n)
    init_seed, drop_seed = _derive_seeds(model_config.seed, 2)
    params = init_params(model_config, relset.P, np.random.default_rng(init_seed))
    model = Regather(model_config, relset, target_rows=target_rows, params=params)
    x = ad.constant(np.asarray(features, dtype=model_config.dtype))
    drop_rng = np.random.default_rng(drop_seed)
    state = AdamState()
    tc = train_config
    L = labels.num_classes

    train_losses, val_losses, val_f1s = [], [], []
    best_score, best_epoch, best_state = None, 0, model.state()
    epoch = 0
    for epoch in range(1, tc.max_epochs + 1):
        with ad.Tape() as tape:
            logits = model.forward(x, train=True, rng=drop_rng)
            train_l = loss(logits, y, split.train, tc.loss_reduction)
        ad.backward(tape, train_l)
        grads = {}
        for k, p in model.params.items():
            g = p.grad
            if tc.weight_decay:
                g = g + tc.weight_decay * p.value
            grads[k] = g
        adam_step(model.params, grads, state, tc.lr, tc.beta1, tc.beta2, tc.eps)

        ev = model.forward(x)
        val_l = float(loss(ev, y, split.val, tc.loss_reduction).value)
        _, val_micro = f1_scores(ev.value[split.val].argmax(axis=1), y[split.val], L)
        train_losses.append(float(train_l.value))
        val_losses.append(val_l)
        val_f1s.append(val_micro)

        score = val_l if tc.monitor == "loss" else -val_micro
        if best_score is None or score < best_score:
            best_score, best_epoch, best_state = score, epoch, model.state()
        elif epoch - best_epoch >= tc.patience:
            logger.info("early stop at epoch %d (best %d)", epoch, best_epoch)
            break

    model.load_state(best_state)
    final = model.forward(x)
    macro, micro = f1_scores(final.value[split.test].argmax(axis=1), y[split.test], L)
    report = TrainReport(
        train_loss=train_losses,
        val_loss=val_losses,
        val_micro_f1=val_f1s,
        stopping_epoch=epoch,
        best_epoch=best_epoch,
        test_macro_f1=macro,
        test_micro_f1=micro,
        beta=[float(b) for b in model.last_beta],
        split_sizes={"train": len(split.train), "val": len(split.val), "test": len(split.test)},
        seed=model_config.seed,
    )
    return report, model


def trial_seeds(root_seed: int, trials: int) -> list[int]:
    """Independent per-trial seeds derived from one root seed."""
    return _derive_seeds(root_seed, trials)
