"""Macro/Micro-F1 and multi-trial aggregation, reported in percent."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    @classmethod
    def from_predictions(cls, pred, truth, num_classes: int) -> "ConfusionCounts":
        pred = np.asarray(pred, dtype=np.int64)
        truth = np.asarray(truth, dtype=np.int64)
        if pred.shape != truth.shape:
            raise ValueError(f"prediction length {pred.shape} != truth length {truth.shape}")
        for arr in (pred, truth):
            if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
                raise ValueError(f"class id outside 0..{num_classes - 1}")
        tp = np.bincount(truth[pred == truth], minlength=num_classes)
        fp = np.bincount(pred, minlength=num_classes) - tp
        fn = np.bincount(truth, minlength=num_classes) - tp
        return cls(tp, fp, fn)


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    # no support and no predictions -> 0
    return np.divide(2 * tp, denom, out=np.zeros(np.shape(denom), dtype=float), where=denom > 0)


def f1_scores(pred, truth, num_classes: int) -> tuple[float, float]:
    """Return ``(macro_f1, micro_f1)`` in percent."""
    c = ConfusionCounts.from_predictions(pred, truth, num_classes)
    macro = float(_f1(c.tp, c.fp, c.fn).mean())
    micro = float(_f1(c.tp.sum(), c.fp.sum(), c.fn.sum()))
    return 100 * macro, 100 * micro


@dataclass(frozen=True)
class TrialAggregate:
    metric: str
    values: tuple[float, ...]
    mean: float
    std: float | None  # sample std; None for a single trial

    @property
    def trials(self) -> int:
        return len(self.values)

    def __str__(self):
        if self.std is None:
            return f"{self.mean:.2f}"
        return f"{self.mean:.2f}±{self.std:.2f}"


def aggregate(values, metric: str = "") -> TrialAggregate:
    values = tuple(float(v) for v in values)
    if not values:
        raise ValueError("no trial values to aggregate")
    mean = math.fsum(values) / len(values)
    std = None
    if len(values) > 1:
        std = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (len(values) - 1))
    return TrialAggregate(metric, values, mean, std)


def results_rows(dataset: str, train_size: float, macro: TrialAggregate, micro: TrialAggregate,
                 model: str = "REGATHER") -> list[dict]:
    """Machine-readable result rows: dataset, train-size, metric, model, mean, std."""
    return [
        {"dataset": dataset, "train_size": f"{round(100 * train_size)}%", "metric": agg.metric,
         "model": model, "mean": round(agg.mean, 2),
         "std": None if agg.std is None else round(agg.std, 2), "trials": agg.trials}
        for agg in (macro, micro)
    ]


def results_table(rows: list[dict]) -> str:
    """Aligned text table: one line per (dataset, metric, train size), one column per model."""
    models = list(dict.fromkeys(r.get("model", "score") for r in rows))
    cells: dict[tuple, dict[str, str]] = {}
    for r in rows:
        key = (r["dataset"], r["metric"], r["train_size"])
        score = f"{r['mean']:.2f}" if r["std"] is None else f"{r['mean']:.2f}±{r['std']:.2f}"
        cells.setdefault(key, {})[r.get("model", "score")] = score
    header = ("Dataset", "Metric", "Training Size", *models)
    body = [(*key, *(vals.get(m, "-") for m in models)) for key, vals in cells.items()]
    widths = [max(len(x[i]) for x in (header, *body)) for i in range(len(header))]
    fmt = lambda row: "  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()  # noqa: E731
    return "\n".join([fmt(header), "  ".join("-" * w for w in widths), *map(fmt, body)])
